"""Shared fixtures, synthetic data helpers, and the acceptance summary hook.

The hook collects one line per test in test_acceptance.py and prints a
PASS/FAIL table after the run, so the acceptance verdicts stay visible even
when pytest captures stdout.
"""

import numpy as np
import pytest
import torch
from hypothesis import settings

# Single-threaded keeps timings stable and float reductions reproducible
# across machines with different core counts.
torch.set_num_threads(1)

settings.register_profile("suite", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("suite")

from simdiffrec import SequenceDataset  # noqa: E402


def make_cyclic_ds(n_users=12, n_items=10, length=8):
    """Users walk the catalog cyclically; next item is fully determined."""
    seqs = [[(u + j) % n_items + 1 for j in range(length)] for u in range(n_users)]
    return SequenceDataset.from_id_sequences(seqs, n_items=n_items)


def write_interactions(path, rows, delim="\t"):
    lines = [delim.join(("user", "item", "timestamp"))]
    lines += [delim.join((u, i, str(t))) for u, i, t in rows]
    path.write_text("\n".join(lines) + "\n")


def markov_rows(n_users=40, n_items=15, per_user=12, seed=7, p_follow=0.8):
    """Raw (user, item, timestamp) rows with a learnable successor structure."""
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        cur = int(rng.integers(1, n_items + 1))
        for step in range(per_user):
            rows.append((f"u{u:04d}", f"i{cur:04d}", step))
            if rng.random() < p_follow:
                cur = cur % n_items + 1
            else:
                cur = int(rng.integers(1, n_items + 1))
    return rows


def fd_max_rel_err(loss_fn, params, eps=1e-5, cap=None):
    """Worst relative error between autograd and central finite differences.

    loss_fn must be a deterministic closure over params. cap limits the
    number of audited elements per tensor (evenly spaced, no randomness).
    """
    params = [p for p in params]
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        grad = torch.zeros_like(p) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        indices = range(flat.numel())
        if cap is not None and flat.numel() > cap:
            indices = sorted(set(np.linspace(0, flat.numel() - 1, cap).astype(int).tolist()))
        for i in indices:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
                f_hi = float(loss_fn())
                flat[i] = orig - eps
                f_lo = float(loss_fn())
                flat[i] = orig
            num = (f_hi - f_lo) / (2.0 * eps)
            ana = float(gflat[i])
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
    return worst


_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__.endswith("test_acceptance"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _ACCEPTANCE[item.name] = (rep.passed, doc)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        passed, doc = _ACCEPTANCE[name]
        terminalreporter.write_line(("PASS  " if passed else "FAIL  ") + doc)
