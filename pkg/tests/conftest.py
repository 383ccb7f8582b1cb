import sys

import torch

# single-threaded keeps small-model training deterministic and, at these
# sizes, faster than oversubscribed BLAS threading
torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    """Echo the per-criterion verdict lines collected by the acceptance tests."""
    for name, module in sys.modules.items():
        if name.endswith("test_acceptance"):
            results = getattr(module, "RESULTS", None)
            if results:
                terminalreporter.section("acceptance criteria")
                for line in results:
                    terminalreporter.line(line)
