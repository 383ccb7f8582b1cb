"""Corpus handling: manifests, clip preprocessing, splits, balancing, and the
synthetic benchmark generator.

Manifests are line-delimited JSON (UTF-8, one record per line). Synthetic
corpora keep their clips in memory as float32 arrays in [0, 1] and can be
serialized to the same manifest format plus raw clip files (.npy).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

RESPONSE_CATEGORIES = ("behavioral_change", "verbal_acknowledgment", "ask_clarification")

DIRECTIVE_VOCAB = (
    "grab", "pull", "cut", "clip", "retract", "careful",
    "tension", "release", "angle", "dissect", "cauterize", "hold",
)
NEUTRAL_VOCAB = (
    "the", "and", "okay", "so", "we", "see", "there", "that",
    "good", "now", "just", "a", "bit", "little", "right", "here",
    "this", "then", "one", "two", "more", "keep", "going", "yes",
)


class ManifestError(ValueError):
    """A manifest line failed to parse or validate."""


@dataclass
class ClipRecord:
    """One feedback instance: clip reference, transcript, label, and group
    metadata used for per-group reporting."""

    clip_id: str
    video_ref: str
    onset_s: float
    label: int
    surgery_type: str = ""
    trainer_id: str = ""
    transcript: str | None = None
    text_embedding: list[float] | None = None
    response_category: str | None = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ManifestError(f"clip {self.clip_id}: label must be 0 or 1, got {self.label}")
        if self.onset_s < 0:
            raise ManifestError(f"clip {self.clip_id}: onset_s must be non-negative")
        if self.response_category is not None and self.response_category not in RESPONSE_CATEGORIES:
            raise ManifestError(
                f"clip {self.clip_id}: unknown response_category {self.response_category!r}"
            )


_REQUIRED_FIELDS = ("clip_id", "video_ref", "onset_s", "label")


def load_manifest(path: str | Path) -> list[ClipRecord]:
    """Parse a line-delimited manifest; duplicate clip_ids are rejected."""
    records: list[ClipRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid record ({exc.msg})") from exc
            for f in _REQUIRED_FIELDS:
                if f not in obj:
                    raise ManifestError(f"line {lineno}: missing field '{f}'")
            try:
                rec = ClipRecord(**obj)
            except TypeError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            if rec.clip_id in seen:
                raise ManifestError(f"line {lineno}: duplicate clip_id '{rec.clip_id}'")
            seen.add(rec.clip_id)
            records.append(rec)
    return records


def save_manifest(records: list[ClipRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {k: v for k, v in vars(rec).items() if v is not None}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def sample_frames(source_frame_count: int, n: int = 16, seed: int = 0) -> list[int]:
    """Draw ``n`` distinct frame indices uniformly without replacement,
    returned in ascending order. Deterministic per seed."""
    if source_frame_count < n:
        raise ValueError(
            f"source has {source_frame_count} frames, need at least {n}"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(source_frame_count, size=n, replace=False)
    return sorted(int(i) for i in idx)


@dataclass
class VideoClip:
    """16 preprocessed frames [T, R, R, C], standardized to [-1, 1]."""

    frames: torch.Tensor
    frame_indices: list[int]
    source_fps: float = 8.0

    def __post_init__(self) -> None:
        if self.frames.shape[0] != len(self.frame_indices):
            raise ValueError("frame count does not match index count")
        if any(b >= a for a, b in zip(self.frame_indices[1:], self.frame_indices)):
            raise ValueError("frame indices must be strictly increasing")


def preprocess_clip(
    raw_frames: np.ndarray,
    target_resolution: int,
    frame_indices: list[int] | None = None,
    input_range: tuple[float, float] = (0.0, 1.0),
) -> VideoClip:
    """Resize frames bilinearly to a square resolution, scale to [0, 1], then
    standardize with mean 0.5 / scale 0.5 per channel (values in [-1, 1])."""
    if raw_frames.size == 0 or raw_frames.shape[0] == 0:
        raise ValueError("empty frame list")
    lo, hi = input_range
    x = torch.from_numpy(np.ascontiguousarray(raw_frames)).float()
    x = (x - lo) / (hi - lo)
    x = x.permute(0, 3, 1, 2)  # T,C,H,W for interpolation
    if x.shape[-2:] != (target_resolution, target_resolution):
        x = torch.nn.functional.interpolate(
            x, size=(target_resolution, target_resolution), mode="bilinear", align_corners=False
        )
    x = (x - 0.5) / 0.5
    x = x.permute(0, 2, 3, 1).contiguous()
    if frame_indices is None:
        frame_indices = list(range(x.shape[0]))
    return VideoClip(frames=x, frame_indices=frame_indices)


@dataclass
class SplitSpec:
    seed: int = 0
    train_frac: float = 0.8
    val_frac_of_train: float = 0.125
    group_by_surgery: bool = False

    def __post_init__(self) -> None:
        if not (0 < self.train_frac < 1 and 0 < self.val_frac_of_train < 1):
            raise ValueError("split fractions must lie in (0, 1)")


@dataclass
class Splits:
    """Pairwise-disjoint index sets. ``train`` excludes the validation
    indices; train + val together form the 80% training partition."""

    train: list[int]
    val: list[int]
    test: list[int]


def make_splits(records: list[ClipRecord], spec: SplitSpec) -> Splits:
    """80/20 train/test with validation carved as 12.5% of the training set.

    Counts use floor rounding. With group_by_surgery, whole surgery types are
    assigned to one partition.
    """
    n = len(records)
    if n < 10:
        raise ValueError(f"corpus too small to split ({n} records)")
    rng = np.random.default_rng(spec.seed)

    if spec.group_by_surgery:
        groups: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            groups.setdefault(rec.surgery_type, []).append(i)
        if len(groups) < 2:
            raise ValueError("grouped split needs at least two surgery types")
        names = sorted(groups)
        order = rng.permutation(len(names))
        n_test_target = n - int(math.floor(spec.train_frac * n))
        test: list[int] = []
        train_pool: list[int] = []
        for gi in order:
            bucket = test if len(test) < n_test_target else train_pool
            bucket.extend(groups[names[gi]])
        n_val = int(math.floor(spec.val_frac_of_train * len(train_pool)))
        perm = rng.permutation(len(train_pool))
        shuffled = [train_pool[i] for i in perm]
        return Splits(train=shuffled[n_val:], val=shuffled[:n_val], test=sorted(test))

    perm = rng.permutation(n)
    n_train = int(math.floor(spec.train_frac * n))
    n_val = int(math.floor(spec.val_frac_of_train * n_train))
    train_all = perm[:n_train]
    return Splits(
        train=[int(i) for i in train_all[n_val:]],
        val=[int(i) for i in train_all[:n_val]],
        test=[int(i) for i in perm[n_train:]],
    )


def upsample_minority(indices: list[int], labels: list[int], seed: int = 0) -> list[int]:
    """Resample minority-class indices with replacement until class counts are
    equal; the majority class is untouched. Deterministic per seed."""
    if len(indices) != len(labels):
        raise ValueError("indices and labels must align")
    pos = [i for i, y in zip(indices, labels) if y == 1]
    neg = [i for i, y in zip(indices, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("both classes must be present to upsample")
    if len(pos) == len(neg):
        return list(indices)
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    rng = np.random.default_rng(seed)
    extra = rng.choice(len(minority), size=len(majority) - len(minority), replace=True)
    return list(indices) + [minority[int(i)] for i in extra]


def segment_domain_clips(video_length_s: float, clip_seconds: float = 10.0) -> list[tuple[float, float]]:
    """Consecutive disjoint windows of fixed length; any trailing remainder
    shorter than one window is discarded."""
    if video_length_s <= 0:
        raise ValueError("video length must be positive")
    n = int(math.floor(video_length_s / clip_seconds))
    return [(k * clip_seconds, (k + 1) * clip_seconds) for k in range(n)]


def trim_feedback_window(onset_s: float, duration_s: float, half_width_s: float = 5.0) -> tuple[float, float]:
    """10-second window centered on the feedback onset, clamped to the video.

    Near a boundary the window shifts to keep its full length when possible.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    width = min(2 * half_width_s, duration_s)
    start = onset_s - half_width_s
    start = min(max(start, 0.0), duration_s - width)
    return (start, start + width)


@dataclass
class SyntheticSpec:
    """Controls the synthetic benchmark: a moving bright square whose motion
    regime shifts mid-clip for (signal-carrying) positive instances, and
    transcripts whose positives carry directive tokens."""

    n_instances: int = 300
    video_signal: float = 0.8
    text_signal: float = 0.8
    resolution: int = 32
    frames_per_clip_source: int = 80
    positive_rate: float = 0.444
    noise_sd: float = 0.02
    speed_shift: float = 4.0
    n_unlabeled: int = 0
    directive_vocab: tuple[str, ...] = DIRECTIVE_VOCAB
    neutral_vocab: tuple[str, ...] = NEUTRAL_VOCAB
    surgery_types: tuple[str, ...] = ("typeA", "typeB", "typeC")
    trainer_ids: tuple[str, ...] = ("T1", "T2", "T3", "T4")

    def __post_init__(self) -> None:
        for name in ("video_signal", "text_signal", "positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be positive")
        if self.resolution < 16:
            raise ValueError("resolution must be at least 16")


@dataclass
class SyntheticCorpus:
    records: list[ClipRecord]
    clips: dict[str, np.ndarray]  # clip_id -> [T, R, R, 3] float32 in [0, 1]
    unlabeled_clips: dict[str, np.ndarray] = field(default_factory=dict)


def _render_clip(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    regime_change: bool,
) -> np.ndarray:
    """Bouncing square; regime_change shifts speed and direction at the
    source-clip midpoint."""
    res = spec.resolution
    t_frames = spec.frames_per_clip_source
    size = max(4, res // 3)
    color = np.full(3, rng.uniform(0.9, 1.0))
    pos = rng.uniform(0, res - size, size=2)
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.15, 0.35) * res / 32.0
    vel = speed * np.array([np.cos(angle), np.sin(angle)])

    frames = np.empty((t_frames, res, res, 3), dtype=np.float32)
    half = t_frames // 2
    for t in range(t_frames):
        if regime_change and t == half:
            angle = rng.uniform(0, 2 * np.pi)
            vel = spec.speed_shift * speed * np.array([np.cos(angle), np.sin(angle)])
        pos = pos + vel
        for d in range(2):  # bounce off walls, preserving speed
            if pos[d] < 0:
                pos[d] = -pos[d]
                vel[d] = -vel[d]
            if pos[d] > res - size:
                pos[d] = 2 * (res - size) - pos[d]
                vel[d] = -vel[d]
            pos[d] = min(max(pos[d], 0.0), res - size)
        frame = np.full((res, res, 3), 0.1, dtype=np.float32)
        r0, c0 = int(round(pos[0])), int(round(pos[1]))
        frame[r0 : r0 + size, c0 : c0 + size] = color
        frame += rng.normal(0.0, spec.noise_sd, size=frame.shape).astype(np.float32)
        frames[t] = np.clip(frame, 0.0, 1.0)
    return frames


def _render_transcript(rng: np.random.Generator, spec: SyntheticSpec, directive: bool) -> str:
    words: list[str] = []
    if directive:
        k = int(rng.integers(2, 5))
        words.extend(rng.choice(spec.directive_vocab, size=k))
    k = int(rng.integers(4, 9))
    words.extend(rng.choice(spec.neutral_vocab, size=k))
    perm = rng.permutation(len(words))
    return " ".join(words[i] for i in perm)


def synth_generate(spec: SyntheticSpec, seed: int = 0) -> SyntheticCorpus:
    """Generate a reproducible corpus. Each record draws from its own seed
    stream (derived from the root seed and record index), so generation order
    cannot affect any individual clip."""
    records: list[ClipRecord] = []
    clips: dict[str, np.ndarray] = {}
    for i in range(spec.n_instances):
        rng = np.random.default_rng([seed, i])
        label = int(rng.random() < spec.positive_rate)
        has_video_signal = label == 1 and rng.random() < spec.video_signal
        has_text_signal = label == 1 and rng.random() < spec.text_signal
        clip_id = f"clip{i:05d}"
        clips[clip_id] = _render_clip(rng, spec, regime_change=has_video_signal)
        records.append(
            ClipRecord(
                clip_id=clip_id,
                video_ref=f"synthetic://{clip_id}",
                onset_s=5.0,
                label=label,
                transcript=_render_transcript(rng, spec, directive=has_text_signal),
                response_category="behavioral_change" if label == 1 else "verbal_acknowledgment",
                surgery_type=spec.surgery_types[int(rng.integers(len(spec.surgery_types)))],
                trainer_id=spec.trainer_ids[int(rng.integers(len(spec.trainer_ids)))],
            )
        )
    unlabeled: dict[str, np.ndarray] = {}
    for j in range(spec.n_unlabeled):
        rng = np.random.default_rng([seed, spec.n_instances + j, 1])
        # unlabeled pool mixes both motion regimes so SSL sees the full
        # distribution without any label information
        unlabeled[f"bg{j:05d}"] = _render_clip(rng, spec, regime_change=bool(rng.random() < 0.5))
    return SyntheticCorpus(records=records, clips=clips, unlabeled_clips=unlabeled)


def save_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> Path:
    """Write manifest plus raw clip files; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clips_dir = out / "clips"
    clips_dir.mkdir(exist_ok=True)
    records = []
    for rec in corpus.records:
        path = clips_dir / f"{rec.clip_id}.npy"
        np.save(path, corpus.clips[rec.clip_id])
        records.append(
            ClipRecord(**{**vars(rec), "video_ref": str(path.relative_to(out))})
        )
    for cid, arr in corpus.unlabeled_clips.items():
        np.save(clips_dir / f"{cid}.npy", arr)
    manifest = out / "manifest.jsonl"
    save_manifest(records, manifest)
    return manifest


def load_corpus(manifest_path: str | Path) -> SyntheticCorpus:
    """Load a corpus saved by :func:`save_corpus` (clips stored as .npy)."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = load_manifest(manifest_path)
    clips = {rec.clip_id: np.load(root / rec.video_ref) for rec in records}
    unlabeled = {
        p.stem: np.load(p) for p in sorted((root / "clips").glob("bg*.npy"))
    }
    return SyntheticCorpus(records=records, clips=clips, unlabeled_clips=unlabeled)
