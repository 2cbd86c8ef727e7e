"""Leave-one-out ranking metrics: HR@k, NDCG@k, multi-seed aggregation.

Rank of the held-out item = 1 + count of items scoring strictly higher, so
ties count against the target (deterministic and pessimistic). Scoring is
full-catalog by default; already-consumed items stay rankable unless history
filtering is switched on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .dataio import PAD_ID, pad_sequence
from .encoder import NEG_INF, SequenceEncoder, next_item_logits
from .errors import ConfigError, DataError, NumericError


@dataclass
class MetricsReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    per_user_rank: dict[int, int]
    n_users: int
    seed: int = 0

    def __post_init__(self):
        ks = sorted(self.hr)
        for lo, hi in zip(ks, ks[1:]):
            if self.hr[hi] < self.hr[lo]:
                raise NumericError(f"HR must be nondecreasing in k: {self.hr}")
        for k in ks:
            if self.ndcg[k] > self.hr[k] + 1e-12:
                raise NumericError(f"NDCG@{k}={self.ndcg[k]} exceeds HR@{k}={self.hr[k]}")

    def to_json_dict(self, config_hash: str = "") -> dict:
        return {
            "ks": sorted(self.hr),
            "hr": {str(k): self.hr[k] for k in sorted(self.hr)},
            "ndcg": {str(k): self.ndcg[k] for k in sorted(self.ndcg)},
            "n_users": self.n_users,
            "seed": self.seed,
            "config_hash": config_hash,
        }


@dataclass
class AggregateReport:
    """Per-metric mean and sample standard deviation over repeated runs."""

    hr_mean: dict[int, float] = field(default_factory=dict)
    hr_std: dict[int, float] = field(default_factory=dict)
    ndcg_mean: dict[int, float] = field(default_factory=dict)
    ndcg_std: dict[int, float] = field(default_factory=dict)
    n_runs: int = 0


def rank_of_target(logits, target: int) -> int:
    """1 + number of strictly greater scores; ties count as worse."""
    if target == PAD_ID:
        raise DataError("target is the pad id")
    scores = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= target < scores.shape[0]:
        raise DataError(f"target {target} outside catalog of {scores.shape[0] - 1}")
    if np.isnan(scores).any() or not np.isfinite(scores[target]):
        raise NumericError("non-finite score at target or NaN in score vector")
    return 1 + int((scores > scores[target]).sum())


def hr_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    r = np.asarray(ranks)
    return float((r <= k).mean())


def ndcg_at_k(ranks, k: int) -> float:
    """Single ground truth: 1/log2(rank+1) inside the window, else 0."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    r = np.asarray(ranks, dtype=np.float64)
    gains = np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)
    return float(gains.mean())


def report_from_ranks(per_user_rank: dict[int, int], ks, seed: int = 0) -> MetricsReport:
    ranks = [per_user_rank[u] for u in sorted(per_user_rank)]
    return MetricsReport(
        hr={k: hr_at_k(ranks, k) for k in ks},
        ndcg={k: ndcg_at_k(ranks, k) for k in ks},
        per_user_rank=dict(per_user_rank),
        n_users=len(ranks),
        seed=seed,
    )


def evaluate(score_fn, split: dict, ks=(5, 10), seed: int = 0) -> MetricsReport:
    """Rank each user's held-out item with an arbitrary scorer.

    score_fn(user_id, prefix_ids) returns a score vector over the catalog
    (index 0 = pad). split maps user id to (prefix ids, target id).
    """
    if not split:
        raise DataError("empty evaluation split")
    per_user = {}
    for uid in sorted(split):
        prefix, target = split[uid]
        if len(prefix) == 0:
            raise DataError(f"user {uid} has an empty prefix")
        per_user[uid] = rank_of_target(score_fn(uid, prefix), target)
    return report_from_ranks(per_user, ks, seed)


def evaluate_model(
    model: SequenceEncoder,
    split: dict,
    ks=(5, 10),
    seed: int = 0,
    batch_size: int = 256,
    filter_history: bool = False,
) -> MetricsReport:
    """Batched full-catalog evaluation of an encoder on a leave-one-out split."""
    if not split:
        raise DataError("empty evaluation split")
    max_len = model.config.max_len
    users = sorted(split)
    per_user = {}
    model.eval()
    with torch.no_grad():
        for lo in range(0, len(users), batch_size):
            chunk = users[lo : lo + batch_size]
            ids = torch.tensor(
                [pad_sequence(list(split[u][0]), max_len) for u in chunk], dtype=torch.int64
            )
            logits = next_item_logits(model.representation(ids), model.weight)
            if filter_history:
                for row, u in enumerate(chunk):
                    seen = [i for i in split[u][0] if i != split[u][1]]
                    logits[row, seen] = NEG_INF
            for row, u in enumerate(chunk):
                per_user[u] = rank_of_target(logits[row].numpy(), split[u][1])
    return report_from_ranks(per_user, ks, seed)


def aggregate_runs(reports: list[MetricsReport]) -> AggregateReport:
    """Arithmetic mean and sample std (ddof=1; 0 for a single run) per metric."""
    if not reports:
        raise DataError("aggregate_runs needs at least one report")
    ks = sorted(reports[0].hr)
    for r in reports:
        if sorted(r.hr) != ks or sorted(r.ndcg) != ks:
            raise ConfigError("reports disagree on ks")
    agg = AggregateReport(n_runs=len(reports))

    def _mean_std(values):
        mean = sum(values) / len(values)
        if len(values) == 1:
            return mean, 0.0
        var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
        return mean, math.sqrt(var)

    for k in ks:
        agg.hr_mean[k], agg.hr_std[k] = _mean_std([r.hr[k] for r in reports])
        agg.ndcg_mean[k], agg.ndcg_std[k] = _mean_std([r.ndcg[k] for r in reports])
    return agg


def export_embeddings(model: SequenceEncoder, rows, path) -> int:
    """Write one CSV row per (user_id, item id sequence, tag).

    Columns: user_id, e_0..e_{d-1}, tag. Floats serialized with repr so a
    re-export under the same checkpoint is byte-identical. Returns the row
    count.
    """
    max_len = model.config.max_len
    d = model.config.d
    model.eval()
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write("user_id," + ",".join(f"e_{i}" for i in range(d)) + ",tag\n")
        with torch.no_grad():
            for user_id, item_ids, tag in rows:
                ids = torch.tensor([pad_sequence(list(item_ids), max_len)], dtype=torch.int64)
                vec = model.representation(ids)[0].to(torch.float64).numpy()
                fh.write(f"{user_id}," + ",".join(repr(float(v)) for v in vec) + f",{tag}\n")
                n += 1
    return n
