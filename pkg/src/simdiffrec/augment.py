"""Confidence-scored augmentation plans from denoised sequences.

After the reverse chain recovers z_0-hat for a fully noised sequence, each
position gets a restoration distribution p_i = softmax(W . z_i) and a
confidence c_i = max_j p_ij. The k_aug most confident non-pad positions are
replaced: the argmax item forms the positive view, the rank-k_sample item the
hard-negative view. With k_sample = 1 the two views are identical by
construction.

Tie rules (reproducibility): confidence ties break toward the lower position
index, probability ties toward the lower item id.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import torch

from .diffusion import rounding_logits
from .encoder import PAD_ID
from .errors import ConfigError, DataError


@dataclass
class ConfidenceVector:
    """Restoration distributions p [n, |V|+1] (pad column exactly 0) and the
    per-position confidences c [n]."""

    p: torch.Tensor
    c: torch.Tensor


@dataclass(frozen=True)
class AugmentationPlan:
    """Replacement recipe for one sequence, valid for one k_sample."""

    positions: tuple[int, ...]
    positive_items: tuple[int, ...]
    hard_negative_items: tuple[int, ...]
    k_sample: int
    source_hash: str

    def to_json_dict(self) -> dict:
        return {
            "positions": list(self.positions),
            "positive_items": list(self.positive_items),
            "hard_negative_items": list(self.hard_negative_items),
            "k_sample": self.k_sample,
            "source_hash": self.source_hash,
        }


def sequence_hash(item_ids: torch.Tensor) -> str:
    """Stable identifier tying a plan to its source id sequence."""
    payload = json.dumps([int(i) for i in item_ids.reshape(-1)]).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def position_distributions(z0_hat: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """p_i = softmax(W . z_i) per position; the pad column is exactly 0."""
    return torch.softmax(rounding_logits(z0_hat, weight), dim=-1)


def confidence(p: torch.Tensor) -> torch.Tensor:
    """c_i = max_j p_ij."""
    return p.max(dim=-1).values


def k_aug_from_ratio(n_nonpad: int, ratio: float) -> int:
    """k_aug = max(1, round(ratio * non-pad length)), half rounds up."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"k_aug_ratio={ratio} outside [0, 1]")
    return max(1, int(ratio * n_nonpad + 0.5))


def select_positions(c: torch.Tensor, k_aug: int, pad_mask: torch.Tensor) -> list[int]:
    """Indices of the k_aug most confident non-pad positions, ascending.

    pad_mask is True at non-pad positions. When k_aug exceeds the non-pad
    count it is clamped with a warning.
    """
    n_nonpad = int(pad_mask.sum())
    if n_nonpad == 0:
        raise DataError("cannot select augmentation positions in an all-pad sequence")
    if k_aug < 1:
        raise ConfigError(f"k_aug must be >= 1, got {k_aug}")
    if k_aug > n_nonpad:
        warnings.warn(
            f"k_aug={k_aug} exceeds {n_nonpad} non-pad positions; clamping",
            stacklevel=2,
        )
        k_aug = n_nonpad
    masked = torch.where(pad_mask, c, torch.full_like(c, float("-inf")))
    order = torch.argsort(masked, descending=True, stable=True)
    return sorted(int(i) for i in order[:k_aug])


def random_positions(
    k_aug: int, pad_mask: torch.Tensor, generator: torch.Generator
) -> list[int]:
    """Uniform distinct non-pad indices (the random-selection ablation)."""
    nonpad = torch.nonzero(pad_mask, as_tuple=False).reshape(-1)
    n_nonpad = int(nonpad.numel())
    if n_nonpad == 0:
        raise DataError("cannot select augmentation positions in an all-pad sequence")
    if k_aug > n_nonpad:
        warnings.warn(
            f"k_aug={k_aug} exceeds {n_nonpad} non-pad positions; clamping",
            stacklevel=2,
        )
        k_aug = n_nonpad
    pick = torch.randperm(n_nonpad, generator=generator)[:k_aug]
    return sorted(int(nonpad[i]) for i in pick)


def ranked_items(p_row: torch.Tensor, k: int) -> int:
    """Item id at descending-probability rank k (rank 1 = argmax)."""
    order = torch.argsort(p_row, descending=True, stable=True)
    return int(order[k - 1])


def make_plan(
    p: torch.Tensor,
    item_ids: torch.Tensor,
    k_aug: int,
    k_sample: int,
    position_gen: torch.Generator | None = None,
) -> AugmentationPlan:
    """Build the full plan for one sequence.

    p is [L, |V|+1] from position_distributions. When position_gen is given,
    positions are drawn uniformly instead of by confidence (ablation mode).
    """
    n_items = p.shape[-1] - 1
    if not 1 <= k_sample <= n_items:
        raise ConfigError(f"k_sample={k_sample} outside [1, {n_items}]")
    pad_mask = item_ids != PAD_ID
    if position_gen is None:
        positions = select_positions(confidence(p), k_aug, pad_mask)
    else:
        positions = random_positions(k_aug, pad_mask, position_gen)
    order = torch.argsort(p[positions], dim=-1, descending=True, stable=True)
    positive = tuple(int(i) for i in order[:, 0])
    hard_negative = tuple(int(i) for i in order[:, k_sample - 1])
    return AugmentationPlan(
        positions=tuple(positions),
        positive_items=positive,
        hard_negative_items=hard_negative,
        k_sample=k_sample,
        source_hash=sequence_hash(item_ids),
    )


def _apply(item_ids: torch.Tensor, plan: AugmentationPlan, items: tuple[int, ...]) -> torch.Tensor:
    if sequence_hash(item_ids) != plan.source_hash:
        raise DataError("plan does not match this sequence (source hash mismatch)")
    out = item_ids.clone()
    out[list(plan.positions)] = torch.tensor(items, dtype=out.dtype)
    return out


def build_positive(item_ids: torch.Tensor, plan: AugmentationPlan) -> torch.Tensor:
    """Replace each selected position by its argmax restoration item."""
    return _apply(item_ids, plan, plan.positive_items)


def build_hard_negative(
    item_ids: torch.Tensor, plan: AugmentationPlan, k_sample: int
) -> torch.Tensor:
    """Replace each selected position by its rank-k_sample restoration item."""
    if k_sample != plan.k_sample:
        raise ConfigError(
            f"plan was built for k_sample={plan.k_sample}, got {k_sample}; rebuild the plan"
        )
    return _apply(item_ids, plan, plan.hard_negative_items)


def augment_batch(
    z0_hat: torch.Tensor,
    item_ids: torch.Tensor,
    weight: torch.Tensor,
    k_aug_ratio: float,
    k_sample: int,
    position_gen: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor, list[AugmentationPlan]]:
    """Positive and hard-negative id batches plus the per-row plans."""
    p = position_distributions(z0_hat, weight)
    positives = item_ids.clone()
    negatives = item_ids.clone()
    plans = []
    for row in range(item_ids.shape[0]):
        ids = item_ids[row]
        k_aug = k_aug_from_ratio(int((ids != PAD_ID).sum()), k_aug_ratio)
        plan = make_plan(p[row], ids, k_aug, k_sample, position_gen)
        positives[row] = build_positive(ids, plan)
        negatives[row] = build_hard_negative(ids, plan, k_sample)
        plans.append(plan)
    return positives, negatives, plans
