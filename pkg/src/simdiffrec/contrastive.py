"""InfoNCE contrastive loss over sequence representations.

Each anchor (the original sequence) is pulled toward its positive-augmented
view against its hard-negative view and the positive views of the other
sequences in the batch. Similarities are cosine, scaled by a temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 1.0
    use_hard_negative: bool = True
    use_in_batch: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.tau}")
        if not self.use_hard_negative and not self.use_in_batch:
            raise ConfigError("contrastive loss needs at least one negative source")


def _checked_norm(x: torch.Tensor, what: str) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise NumericError(f"zero-norm {what} in cosine similarity")
    return x / norm


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """a.b / (|a||b|); raises on zero-norm inputs."""
    return (_checked_norm(a, "input") * _checked_norm(b, "input")).sum(-1)


def info_nce(
    e_u: torch.Tensor,
    e_pos: torch.Tensor,
    e_hardneg: torch.Tensor | None,
    in_batch: torch.Tensor | None,
    cfg: ContrastiveConfig,
) -> torch.Tensor:
    """Single-anchor loss: -log exp(s+/tau) / sum over {s+, s-, in-batch}.

    in_batch is [m, d] of other sequences' views (may be None or empty).
    """
    sims = [cosine_sim(e_u, e_pos).reshape(1)]
    n_negatives = 0
    if cfg.use_hard_negative:
        if e_hardneg is None:
            raise ConfigError("use_hard_negative=True but no hard negative given")
        sims.append(cosine_sim(e_u, e_hardneg).reshape(1))
        n_negatives += 1
    if cfg.use_in_batch and in_batch is not None and in_batch.shape[0] > 0:
        sims.append(cosine_sim(e_u.unsqueeze(0), in_batch))
        n_negatives += in_batch.shape[0]
    if n_negatives == 0:
        raise ConfigError("anchor has no negatives (batch of one without hard negative)")
    scores = torch.cat(sims) / cfg.tau
    return torch.logsumexp(scores, dim=0) - scores[0]


def contrastive_loss(
    E_u: torch.Tensor,
    E_pos: torch.Tensor,
    E_hardneg: torch.Tensor | None,
    cfg: ContrastiveConfig,
) -> torch.Tensor:
    """Batched loss, mean over anchors.

    Row i is one anchor; its in-batch negatives are the positive views of
    every other row. Shapes [B, d].
    """
    B = E_u.shape[0]
    if cfg.use_hard_negative and E_hardneg is None:
        raise ConfigError("use_hard_negative=True but no hard negatives given")
    if not cfg.use_in_batch or B == 1:
        if not cfg.use_hard_negative:
            raise ConfigError("anchor has no negatives (batch of one without hard negative)")
    u = _checked_norm(E_u, "anchor")
    pos = _checked_norm(E_pos, "positive view")
    cols = [(u * pos).sum(-1, keepdim=True)]  # column 0: s+
    if cfg.use_hard_negative:
        neg = _checked_norm(E_hardneg, "hard-negative view")
        cols.append((u * neg).sum(-1, keepdim=True))
    if cfg.use_in_batch and B > 1:
        cross = u @ pos.T  # [B, B]; diagonal is s+, excluded below
        off = cross.masked_select(~torch.eye(B, dtype=torch.bool)).reshape(B, B - 1)
        cols.append(off)
    scores = torch.cat(cols, dim=1) / cfg.tau
    per_anchor = torch.logsumexp(scores, dim=1) - scores[:, 0]
    return per_anchor.mean()
