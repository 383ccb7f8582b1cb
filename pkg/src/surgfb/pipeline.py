"""End-to-end experiment orchestration: profiles, per-seed runs of the
text / video / fusion models, and multi-seed evaluation.

A run is fully determined by (corpus, profile, modality, seed): every source
of randomness is derived from the seed via :func:`surgfb.training.derive_seed`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .corpus import (
    ClipRecord,
    SplitSpec,
    Splits,
    SyntheticCorpus,
    SyntheticSpec,
    make_splits,
    preprocess_clip,
    sample_frames,
    upsample_minority,
)
from .evaluation import MetricsReport, ScoredInstance, aggregate_seeds
from .text_encoder import TEXT_EMBED_DIM, HashedTextEncoder, load_embeddings
from .training import (
    DESK_STAGE_DEFAULTS,
    PAPER_STAGE_DEFAULTS,
    FunnelHead,
    FusionModel,
    HeadConfig,
    TrainConfig,
    derive_seed,
    ssl_train,
    train_fusion,
    train_text_head,
    train_video_head,
)
from .video_encoder import EncoderConfig, VideoAutoencoder

MODALITIES = ("text", "video", "fusion")
SSL_STRATEGIES = ("task", "domain")


@dataclass
class RunProfile:
    """Named bundle of architecture, stage, and corpus configuration.

    The paper profile carries the published training constants verbatim; the
    desk profile shrinks epoch counts and model size so the full pipeline
    verifies on one CPU in minutes.
    """

    name: str
    encoder: EncoderConfig
    stages: dict[str, TrainConfig]
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    group_split: bool = False

    def head_config(self) -> HeadConfig:
        return HeadConfig(video_feature_dim=self.encoder.embed_dim)

    def stage(self, name: str, seed: int) -> TrainConfig:
        return replace(self.stages[name], seed=seed)


def desk_profile(**synth_overrides) -> RunProfile:
    return RunProfile(
        name="desk",
        encoder=EncoderConfig(),
        stages=dict(DESK_STAGE_DEFAULTS),
        synth=SyntheticSpec(**synth_overrides),
    )


def paper_profile() -> RunProfile:
    return RunProfile(
        name="paper",
        encoder=EncoderConfig(
            resolution=224, spatial_patch=16, embed_dim=768, depth=12, heads=12,
            decoder_dim=384, decoder_depth=4,
        ),
        stages=dict(PAPER_STAGE_DEFAULTS),
        synth=SyntheticSpec(n_instances=4204),
    )


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def build_clip_tensors(
    corpus: SyntheticCorpus, resolution: int, seed: int, include_unlabeled: bool = False
) -> dict[str, torch.Tensor]:
    """Sample 16 frames per source clip and preprocess to standardized
    [16, R, R, 3] tensors, keyed by clip id. Per-clip seeds derive from the
    root seed and the clip id."""
    out: dict[str, torch.Tensor] = {}
    items = dict(corpus.clips)
    if include_unlabeled:
        items.update(corpus.unlabeled_clips)
    for clip_id, raw in items.items():
        idx = sample_frames(raw.shape[0], 16, seed=derive_seed(seed, "frames", clip_id))
        out[clip_id] = preprocess_clip(raw[idx], resolution, frame_indices=idx).frames
    return out


def text_features_for(
    records: list[ClipRecord], text_enc: HashedTextEncoder
) -> torch.Tensor:
    """Per-record 384-d features: ingested embeddings when present, otherwise
    the built-in hashed encoder over the transcript."""
    ingested = load_embeddings(records)
    feats = []
    for rec in records:
        if rec.clip_id in ingested:
            feats.append(ingested[rec.clip_id])
        elif rec.transcript is not None:
            with torch.no_grad():
                feats.append(text_enc.embed_text(rec.transcript))
        else:
            raise ValueError(
                f"clip {rec.clip_id}: needs a transcript or text_embedding for text/fusion models"
            )
    return torch.stack(feats)


@dataclass
class ExperimentResult:
    modality: str
    seed: int
    report_raw: MetricsReport
    report_upsampled: MetricsReport
    instances_raw: list[ScoredInstance]
    splits: Splits
    encoder: VideoAutoencoder | None = None
    ssl_loss_curve: list[float] | None = None
    val_accuracy_curve: list[float] = field(default_factory=list)


def _scored(records, indices, scores) -> list[ScoredInstance]:
    return [
        ScoredInstance(
            clip_id=records[i].clip_id,
            score=float(s),
            label=records[i].label,
            surgery_type=records[i].surgery_type,
            trainer_id=records[i].trainer_id,
        )
        for i, s in zip(indices, scores)
    ]


def run_experiment(
    corpus: SyntheticCorpus,
    profile: RunProfile,
    modality: str,
    seed: int,
    ssl_strategy: str | None = None,
    pretrained_encoder: VideoAutoencoder | None = None,
    unfreeze_encoder: bool = True,
) -> ExperimentResult:
    """Train and score one modality for one split seed.

    ``ssl_strategy`` runs self-supervised fine-tuning of the video encoder
    before supervised training ("task": non-test feedback clips; "domain":
    feedback clips plus the unlabeled pool). The fusion model reuses the
    supervised-fine-tuned encoder, frozen.
    """
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    if ssl_strategy is not None and ssl_strategy not in SSL_STRATEGIES:
        raise ValueError(f"unknown SSL strategy {ssl_strategy!r}")

    records = corpus.records
    splits = make_splits(records, SplitSpec(seed=seed, group_by_surgery=profile.group_split))
    labels = [r.label for r in records]

    train_all = splits.train
    train_idx = upsample_minority(
        train_all, [labels[i] for i in train_all], seed=derive_seed(seed, "upsample-train")
    )
    test_idx_raw = splits.test
    test_idx_up = upsample_minority(
        splits.test, [labels[i] for i in splits.test], seed=derive_seed(seed, "upsample-test")
    )
    val_idx = splits.val
    train_y = [labels[i] for i in train_idx]
    val_y = [labels[i] for i in val_idx]

    encoder = None
    ssl_curve = None
    need_video = modality in ("video", "fusion")
    if need_video:
        clip_tensors = build_clip_tensors(
            corpus, profile.encoder.resolution, seed=derive_seed(seed, "frame-sampling"),
            include_unlabeled=ssl_strategy == "domain",
        )
        tensors_for = lambda idx: torch.stack([clip_tensors[records[i].clip_id] for i in idx])

        if pretrained_encoder is not None:
            encoder = pretrained_encoder
        else:
            torch.manual_seed(derive_seed(seed, "init-encoder"))
            encoder = VideoAutoencoder(profile.encoder)
            if ssl_strategy is not None:
                stage = "ssl_task" if ssl_strategy == "task" else "ssl_domain"
                non_test = sorted(set(train_all) | set(val_idx))
                ssl_ids = [records[i].clip_id for i in non_test]
                ssl_clips = [clip_tensors[c] for c in ssl_ids]
                if ssl_strategy == "domain":
                    for cid in sorted(corpus.unlabeled_clips):
                        ssl_ids.append(cid)
                        ssl_clips.append(clip_tensors[cid])
                ssl_curve = ssl_train(
                    encoder,
                    ssl_clips,
                    profile.stage(stage, derive_seed(seed, "ssl")),
                    test_clip_ids={records[i].clip_id for i in splits.test},
                    clip_ids=ssl_ids,
                )

    text_enc = HashedTextEncoder(seed=derive_seed(seed, "init-text"))
    head_cfg = profile.head_config()

    if modality == "text":
        feats = text_features_for(records, text_enc)
        head = FunnelHead(TEXT_EMBED_DIM, head_cfg.text_head, seed=derive_seed(seed, "init-head"))
        result = train_text_head(
            head, feats[train_idx], train_y, feats[val_idx], val_y,
            profile.stage("fusion", derive_seed(seed, "text-train")),
        )
        with torch.no_grad():
            score = lambda idx: torch.softmax(head(feats[idx]), dim=1)[:, 1].tolist()
            scores_raw = score(test_idx_raw)
            scores_up = score(test_idx_up)

    elif modality == "video":
        head = FunnelHead(
            profile.encoder.embed_dim, head_cfg.video_head, seed=derive_seed(seed, "init-head")
        )
        result = train_video_head(
            encoder, head,
            tensors_for(train_idx), train_y,
            tensors_for(val_idx), val_y,
            profile.stage("supervised_video", derive_seed(seed, "video-train")),
            unfreeze_encoder=unfreeze_encoder,
        )
        with torch.no_grad():
            def score(idx):
                logits = head(encoder.encode_features(tensors_for(idx)))
                return torch.softmax(logits, dim=1)[:, 1].tolist()
            scores_raw = score(test_idx_raw)
            scores_up = score(test_idx_up)

    else:  # fusion: train the video model first, then fuse with both encoders frozen
        head = FunnelHead(
            profile.encoder.embed_dim, head_cfg.video_head, seed=derive_seed(seed, "init-head")
        )
        train_video_head(
            encoder, head,
            tensors_for(train_idx), train_y,
            tensors_for(val_idx), val_y,
            profile.stage("supervised_video", derive_seed(seed, "video-train")),
            unfreeze_encoder=unfreeze_encoder,
        )
        text_feats = text_features_for(records, text_enc)
        with torch.no_grad():
            video_feats = {}
            for name, idx in (("train", train_idx), ("val", val_idx),
                              ("test", test_idx_raw), ("test_up", test_idx_up)):
                video_feats[name] = encoder.encode_features(tensors_for(idx))
        fusion = FusionModel(head_cfg, seed=derive_seed(seed, "init-fusion"))
        result = train_fusion(
            encoder, text_enc, fusion,
            video_feats["train"], text_feats[train_idx], train_y,
            video_feats["val"], text_feats[val_idx], val_y,
            profile.stage("fusion", derive_seed(seed, "fusion-train")),
        )
        with torch.no_grad():
            scores_raw = torch.softmax(
                fusion(video_feats["test"], text_feats[test_idx_raw]), dim=1
            )[:, 1].tolist()
            scores_up = torch.softmax(
                fusion(video_feats["test_up"], text_feats[test_idx_up]), dim=1
            )[:, 1].tolist()

    inst_raw = _scored(records, test_idx_raw, scores_raw)
    inst_up = _scored(records, test_idx_up, scores_up)
    return ExperimentResult(
        modality=modality,
        seed=seed,
        report_raw=MetricsReport.from_instances(inst_raw, seed=seed),
        report_upsampled=MetricsReport.from_instances(inst_up, seed=seed),
        instances_raw=inst_raw,
        splits=splits,
        encoder=encoder,
        ssl_loss_curve=ssl_curve,
        val_accuracy_curve=result.val_accuracy_curve,
    )


def ssl_finetune(
    corpus: SyntheticCorpus,
    profile: RunProfile,
    strategy: str,
    seed: int,
) -> tuple[VideoAutoencoder, list[float], dict]:
    """Stand-alone SSL fine-tuning stage for the CLI.

    Returns the trained encoder, the per-epoch loss curve, and the corpus
    accounting (clip counts per selection) used for leakage checks.
    """
    if strategy not in SSL_STRATEGIES:
        raise ValueError(f"unknown SSL strategy {strategy!r}")
    records = corpus.records
    splits = make_splits(records, SplitSpec(seed=seed, group_by_surgery=profile.group_split))
    clip_tensors = build_clip_tensors(
        corpus, profile.encoder.resolution, seed=derive_seed(seed, "frame-sampling"),
        include_unlabeled=strategy == "domain",
    )
    non_test = sorted(set(splits.train) | set(splits.val))
    ssl_ids = [records[i].clip_id for i in non_test]
    if strategy == "domain":
        ssl_ids.extend(sorted(corpus.unlabeled_clips))
    ssl_clips = [clip_tensors[c] for c in ssl_ids]

    torch.manual_seed(derive_seed(seed, "init-encoder"))
    encoder = VideoAutoencoder(profile.encoder)
    stage = "ssl_task" if strategy == "task" else "ssl_domain"
    curve = ssl_train(
        encoder, ssl_clips,
        profile.stage(stage, derive_seed(seed, "ssl")),
        test_clip_ids={records[i].clip_id for i in splits.test},
        clip_ids=ssl_ids,
    )
    counts = {
        "n_feedback_clips": len(records),
        "n_test_clips": len(splits.test),
        "n_unlabeled_clips": len(corpus.unlabeled_clips),
        "n_ssl_clips": len(ssl_ids),
    }
    return encoder, curve, counts


@dataclass
class EvaluationSummary:
    modality: str
    per_seed: list[ExperimentResult]
    aggregate_raw: MetricsReport
    aggregate_upsampled: MetricsReport


def evaluate_modality(
    corpus: SyntheticCorpus,
    profile: RunProfile,
    modality: str,
    root_seed: int,
    n_seeds: int = 3,
    ssl_strategy: str | None = None,
) -> EvaluationSummary:
    """Multi-seed protocol: distinct split seeds, mean and sample std."""
    results = [
        run_experiment(
            corpus, profile, modality,
            seed=derive_seed(root_seed, "split-seed", k),
            ssl_strategy=ssl_strategy,
        )
        for k in range(n_seeds)
    ]
    return EvaluationSummary(
        modality=modality,
        per_seed=results,
        aggregate_raw=aggregate_seeds([r.report_raw for r in results]),
        aggregate_upsampled=aggregate_seeds([r.report_upsampled for r in results]),
    )
