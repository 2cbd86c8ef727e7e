"""Transformer next-item encoder and the BCE recommendation loss.

Every source of randomness (dropout, negative sampling, init) takes an
explicit ``torch.Generator`` so runs are bit-reproducible; dropout is active
iff a generator is passed. The item embedding table is shared with the
diffusion side: row 0 is the pad embedding, pinned to zero with zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError

PAD_ID = 0
MASK_VALUE = -1e9  # additive attention bias; exp() underflows to exactly 0
NEG_INF = float("-inf")
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 2
    d: int = 64
    dropout: float = 0.2
    max_len: int = 50

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")


@dataclass
class HiddenStates:
    """Per-position states H [B, L, d] and the last non-pad state [B, d]."""

    H: torch.Tensor
    last: torch.Tensor


def generator_dropout(x: torch.Tensor, p: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator (None = off)."""
    if generator is None or p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def attention_bias(mask: torch.Tensor, dtype: torch.dtype, causal: bool = True) -> torch.Tensor:
    """Additive [B, 1, L, L] bias: key must be non-pad (and, if causal, not in
    the future)."""
    L = mask.shape[1]
    allowed = mask.unsqueeze(1).expand(-1, L, -1)
    if causal:
        allowed = allowed & torch.ones(L, L, dtype=torch.bool).tril()
    bias = torch.zeros(allowed.shape, dtype=dtype)
    bias.masked_fill_(~allowed, MASK_VALUE)
    return bias.unsqueeze(1)


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.dropout = dropout
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def forward(self, x, bias, gen=None):
        B, L, d = x.shape
        q = self.q_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim) + bias
        weights = generator_dropout(torch.softmax(scores, dim=-1), self.dropout, gen)
        y = (weights @ v).transpose(1, 2).reshape(B, L, d)
        return self.out_proj(y)


class EncoderBlock(nn.Module):
    """Pre-norm block: LN -> attention -> residual, LN -> GELU MLP -> residual."""

    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.dropout = dropout
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, n_heads, dropout)
        self.ln2 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, 4 * d)
        self.fc2 = nn.Linear(4 * d, d)

    def forward(self, x, bias, gen=None):
        x = x + generator_dropout(self.attn(self.ln1(x), bias, gen), self.dropout, gen)
        h = generator_dropout(F.gelu(self.fc1(self.ln2(x))), self.dropout, gen)
        return x + generator_dropout(self.fc2(h), self.dropout, gen)


class SequenceEncoder(nn.Module):
    """Causal Transformer over item ids; hidden states share the item table."""

    def __init__(
        self,
        n_items: int,
        config: EncoderConfig,
        init_generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.n_items = n_items
        self.config = config
        self.item_emb = nn.Embedding(n_items + 1, config.d, padding_idx=PAD_ID)
        self.pos_emb = nn.Parameter(torch.empty(config.max_len, config.d))
        self.blocks = nn.ModuleList(
            EncoderBlock(config.d, config.n_heads, config.dropout)
            for _ in range(config.n_layers)
        )
        self.final_ln = nn.LayerNorm(config.d) if config.n_layers > 0 else None
        self.to(dtype)
        self.reset_parameters(init_generator)
        self.item_emb.weight.register_hook(_zero_pad_row_grad)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """Truncated normal (std 0.02) for embeddings and projections, zero biases."""
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    nn.init.trunc_normal_(module.weight, std=INIT_STD, generator=generator)
                    nn.init.zeros_(module.bias)
                elif isinstance(module, nn.LayerNorm):
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)
            nn.init.trunc_normal_(self.item_emb.weight, std=INIT_STD, generator=generator)
            self.item_emb.weight[PAD_ID].zero_()
            nn.init.trunc_normal_(self.pos_emb, std=INIT_STD, generator=generator)

    @property
    def weight(self) -> torch.Tensor:
        """The shared item embedding matrix [n_items + 1, d]."""
        return self.item_emb.weight

    def embed_sequence(self, item_ids: torch.Tensor) -> torch.Tensor:
        """h0[k] = W[id_k] + P[k]; pad rows reduce to P[k] since W[0] = 0."""
        if item_ids.max() > self.n_items or item_ids.min() < 0:
            raise DataError(
                f"item id out of range [0, {self.n_items}]: "
                f"[{int(item_ids.min())}, {int(item_ids.max())}]"
            )
        L = item_ids.shape[-1]
        if L > self.config.max_len:
            raise DataError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        return self.item_emb(item_ids) + self.pos_emb[:L]

    def encode(
        self,
        item_ids: torch.Tensor,
        dropout_gen: torch.Generator | None = None,
    ) -> HiddenStates:
        mask = item_ids != PAD_ID
        x = generator_dropout(self.embed_sequence(item_ids), self.config.dropout, dropout_gen)
        bias = attention_bias(mask, x.dtype)
        for block in self.blocks:
            x = block(x, bias, dropout_gen)
        if self.final_ln is not None:
            x = self.final_ln(x)
        return HiddenStates(H=x, last=last_nonpad_state(x, mask))

    def representation(
        self, item_ids: torch.Tensor, dropout_gen: torch.Generator | None = None
    ) -> torch.Tensor:
        """Sequence representation e_u: hidden state of the final non-pad position."""
        return self.encode(item_ids, dropout_gen).last


def _zero_pad_row_grad(grad: torch.Tensor) -> torch.Tensor:
    grad = grad.clone()
    grad[PAD_ID] = 0
    return grad


def last_nonpad_state(H: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not mask.any(dim=1).all():
        raise DataError("all-pad row has no sequence representation")
    last_idx = mask.shape[1] - 1 - mask.flip(1).to(torch.int64).argmax(dim=1)
    return H[torch.arange(H.shape[0]), last_idx]


def next_item_logits(h: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """r = h . W^T over the full catalog; the pad column is -inf for ranking."""
    logits = h @ weight.T
    logits[..., PAD_ID] = NEG_INF
    return logits


def sr_loss(
    H: torch.Tensor,
    targets: torch.Tensor,
    negatives: torch.Tensor,
    mask: torch.Tensor,
    weight: torch.Tensor,
) -> torch.Tensor:
    """BCE with one sampled negative per supervised position, averaged.

    Uses log(sigmoid(x)) = -softplus(-x) for stability. ``mask`` selects the
    supervised positions (non-pad input with non-pad target).
    """
    if not mask.any():
        raise DataError("no supervised positions in batch")
    if ((negatives == targets) & mask).any():
        raise DataError("sampled negative collides with target")
    pos_dot = (H * weight[targets]).sum(-1)
    neg_dot = (H * weight[negatives]).sum(-1)
    per_pos = F.softplus(-pos_dot) + F.softplus(neg_dot)
    m = mask.to(H.dtype)
    return (per_pos * m).sum() / m.sum()


def sample_negatives(
    history: set[int],
    n: int,
    generator: torch.Generator,
    n_items: int,
) -> torch.Tensor:
    """n uniform draws from the catalog minus the user's full history."""
    excluded = {i for i in history if 1 <= i <= n_items}
    if len(excluded) >= n_items:
        raise DataError("catalog exhausted: user history covers every item")
    blocked = torch.zeros(n_items + 1, dtype=torch.bool)
    blocked[PAD_ID] = True
    blocked[list(excluded)] = True
    out = torch.randint(1, n_items + 1, (n,), generator=generator)
    bad = blocked[out]
    while bad.any():
        out[bad] = torch.randint(1, n_items + 1, (int(bad.sum()),), generator=generator)
        bad = blocked[out]
    return out


def sample_negatives_batch(
    histories: list[set[int]],
    shape: tuple[int, int],
    generator: torch.Generator,
    n_items: int,
) -> torch.Tensor:
    """Batched variant: row i draws uniformly outside histories[i]."""
    B, L = shape
    blocked = torch.zeros(B, n_items + 1, dtype=torch.bool)
    blocked[:, PAD_ID] = True
    for row, history in enumerate(histories):
        ids = [i for i in history if 1 <= i <= n_items]
        if len(ids) >= n_items:
            raise DataError("catalog exhausted: user history covers every item")
        blocked[row, ids] = True
    out = torch.randint(1, n_items + 1, (B, L), generator=generator)
    bad = blocked.gather(1, out)
    while bad.any():
        out[bad] = torch.randint(1, n_items + 1, (int(bad.sum()),), generator=generator)
        bad = blocked.gather(1, out)
    return out


def sequence_representation(
    model: SequenceEncoder,
    item_ids: torch.Tensor,
    dropout_gen: torch.Generator | None = None,
) -> torch.Tensor:
    return model.representation(item_ids, dropout_gen)
