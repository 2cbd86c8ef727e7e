"""Similarity-guided deterministic diffusion over item-embedding sequences.

The forward process corrupts a clean embedded sequence z_0 toward a
predefined per-position noise tensor (the mean of the k_noise most similar
item embeddings, self-masked) through the affine recursion
z_t = alpha_t * z_{t-1} + beta_t * noise, which collapses to the closed form
z_t = A[t] * z_0 + B[t] * noise. The reverse process is deterministic: a
small bidirectional Transformer predicts z_0-hat from (z_t, t) and the chain
re-noises that prediction to the next visited step. Rounding maps continuous
vectors back to item ids through the shared embedding table.

Coefficient arrays are indexed 1..T with an identity step stored at index 0
(alpha=1, beta=0, A=1, B=0) so closed-form lookups need no offset shuffling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import (
    INIT_STD,
    PAD_ID,
    EncoderBlock,
    attention_bias,
    next_item_logits,
)
from .errors import ConfigError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.2


class NoiseMode(str, Enum):
    SIMILARITY = "similarity"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule with precomputed cumulative coefficients.

    A[t] = prod_{i<=t} alpha_i and B[t] = alpha_t * B[t-1] + beta_t, so
    z_t = A[t] * z_0 + B[t] * noise reproduces t iterated forward steps.
    Arrays are float64 and length T + 1 (index 0 is the identity step).
    """

    T: int
    alpha: torch.Tensor
    beta: torch.Tensor
    A: torch.Tensor
    B: torch.Tensor

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"schedule needs T >= 1, got {self.T}")
        for arr in (self.alpha, self.beta, self.A, self.B):
            if arr.shape != (self.T + 1,):
                raise ConfigError("schedule arrays must have length T + 1")
        steps = slice(1, None)
        if not bool(((self.alpha[steps] > 0) & (self.alpha[steps] <= 1)).all()):
            raise ConfigError("alpha_t must lie in (0, 1]")
        if not bool(((self.beta[steps] >= 0) & (self.beta[steps] < 1)).all()):
            raise ConfigError("beta_t must lie in [0, 1)")

    @classmethod
    def linear(
        cls,
        T: int = DEFAULT_T,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
    ) -> "NoiseSchedule":
        """beta_t linear from beta_start to beta_end; alpha_t = 1 - beta_t."""
        beta = torch.zeros(T + 1, dtype=torch.float64)
        beta[1:] = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
        alpha = 1.0 - beta
        A = torch.cumprod(alpha, dim=0)
        B = torch.zeros(T + 1, dtype=torch.float64)
        for t in range(1, T + 1):
            B[t] = alpha[t] * B[t - 1] + beta[t]
        return cls(T=T, alpha=alpha, beta=beta, A=A, B=B)

    def to_json(self) -> str:
        payload = {
            "T": self.T,
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        raw = json.loads(text)
        return cls(
            T=int(raw["T"]),
            alpha=torch.tensor(raw["alpha"], dtype=torch.float64),
            beta=torch.tensor(raw["beta"], dtype=torch.float64),
            A=torch.tensor(raw["A"], dtype=torch.float64),
            B=torch.tensor(raw["B"], dtype=torch.float64),
        )


@dataclass
class NoiseTensor:
    """Per-position noise rows, shape [..., d]."""

    N: torch.Tensor
    mode: NoiseMode


@dataclass
class DiffusionState:
    """A partially corrupted sequence z at step t (t=0 means clean)."""

    z: torch.Tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ConfigError(f"diffusion step must be >= 0, got {self.t}")


@dataclass(frozen=True)
class DenoiserConfig:
    n_layers: int = 1
    n_heads: int = 2
    d: int = 64

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")


def similarity_scores(e: torch.Tensor, weight: torch.Tensor, self_ids: torch.Tensor) -> torch.Tensor:
    """Dot-product scores against the catalog, with the position's own item
    and the pad column removed (-inf)."""
    scores = e @ weight.T
    scores.scatter_(-1, self_ids.unsqueeze(-1), float("-inf"))
    scores[..., PAD_ID] = float("-inf")
    return scores


def top_k_similar(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Ids of the k best-scoring items; equal scores break toward lower id."""
    order = torch.argsort(scores, dim=-1, descending=True, stable=True)
    return order[..., :k]


def similarity_noise(scores: torch.Tensor, weight: torch.Tensor, k_noise: int) -> NoiseTensor:
    """Mean of the k_noise most similar item embeddings per position."""
    n_items = weight.shape[0] - 1
    if not 1 <= k_noise <= n_items - 1:
        raise ConfigError(f"k_noise={k_noise} outside [1, {n_items - 1}]")
    ids = top_k_similar(scores, k_noise)
    return NoiseTensor(N=weight[ids].mean(dim=-2), mode=NoiseMode.SIMILARITY)


def batch_similarity_noise(
    item_ids: torch.Tensor, weight: torch.Tensor, k_noise: int
) -> NoiseTensor:
    """Similarity noise for a padded id batch; pad rows get zero noise."""
    e = weight[item_ids]
    noise = similarity_noise(similarity_scores(e, weight, item_ids), weight, k_noise)
    noise.N = torch.where((item_ids != PAD_ID).unsqueeze(-1), noise.N, torch.zeros_like(noise.N))
    return noise


def gaussian_noise(
    shape: tuple[int, ...],
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> NoiseTensor:
    """i.i.d. standard-normal noise (the Gaussian-forward ablation)."""
    return NoiseTensor(
        N=torch.randn(shape, generator=generator, dtype=dtype), mode=NoiseMode.GAUSSIAN
    )


def forward_step(
    z_prev: torch.Tensor, noise: NoiseTensor, t: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """One corruption step: z_t = alpha_t * z_{t-1} + beta_t * noise."""
    if not 1 <= t <= schedule.T:
        raise ConfigError(f"step t={t} outside [1, {schedule.T}]")
    return float(schedule.alpha[t]) * z_prev + float(schedule.beta[t]) * noise.N


def forward_closed(
    z0: torch.Tensor, noise: NoiseTensor, t: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """Jump straight to step t: z_t = A[t] * z_0 + B[t] * noise."""
    if not 0 <= t <= schedule.T:
        raise ConfigError(f"step t={t} outside [0, {schedule.T}]")
    return float(schedule.A[t]) * z0 + float(schedule.B[t]) * noise.N


class SinusoidalTimeEmbedding(nn.Module):
    """Fixed sin/cos features of the integer step, width d."""

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        half = d // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1)
        )
        self.register_buffer("freqs", freqs, persistent=False)

    def forward(self, t: int, dtype: torch.dtype) -> torch.Tensor:
        args = float(t) * self.freqs
        emb = torch.cat([torch.sin(args), torch.cos(args)])
        if emb.shape[0] < self.d:  # odd width, pad with zero
            emb = torch.cat([emb, torch.zeros(self.d - emb.shape[0], dtype=emb.dtype)])
        return emb.to(dtype)


class SequenceDenoiser(nn.Module):
    """Bidirectional Transformer predicting z_0-hat from (z_t, t).

    The sinusoidal embedding of t is added to every position; pad positions
    are hidden from attention but still produce (ignored) outputs.
    """

    def __init__(
        self,
        config: DenoiserConfig,
        init_generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config
        self.time_emb = SinusoidalTimeEmbedding(config.d)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.d, config.n_heads, dropout=0.0)
            for _ in range(config.n_layers)
        )
        self.out_ln = nn.LayerNorm(config.d)
        self.out_proj = nn.Linear(config.d, config.d)
        self.to(dtype)
        self.reset_parameters(init_generator)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    nn.init.trunc_normal_(module.weight, std=INIT_STD, generator=generator)
                    nn.init.zeros_(module.bias)
                elif isinstance(module, nn.LayerNorm):
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)

    def forward(self, z_t: torch.Tensor, t: int, mask: torch.Tensor | None = None) -> torch.Tensor:
        if mask is None:
            mask = torch.ones(z_t.shape[:-1], dtype=torch.bool)
        x = z_t + self.time_emb(t, z_t.dtype)
        bias = attention_bias(mask, x.dtype, causal=False)
        for block in self.blocks:
            x = block(x, bias)
        return self.out_proj(self.out_ln(x))


def denoise_predict(
    z_t: torch.Tensor,
    t: int,
    denoiser: SequenceDenoiser,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    if not 1 <= t:
        raise ConfigError(f"denoising step must be >= 1, got {t}")
    return denoiser(z_t, t, mask)


def reverse_chain(
    z_T: torch.Tensor,
    noise: NoiseTensor,
    schedule: NoiseSchedule,
    stride: int,
    denoise_fn: Callable[[torch.Tensor, int], torch.Tensor],
) -> torch.Tensor:
    """Deterministic reverse pass: predict z_0-hat at each visited step and
    re-noise it down to the next one. Visits T, T-stride, ..., stride."""
    if stride < 1 or schedule.T % stride != 0:
        raise ConfigError(f"stride={stride} must be >= 1 and divide T={schedule.T}")
    z = z_T
    z0_hat = z_T
    for t in range(schedule.T, 0, -stride):
        z0_hat = denoise_fn(z, t)
        z = forward_closed(z0_hat, noise, t - stride, schedule)
    return z0_hat


def rounding_logits(z0_hat: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Trainable rounding scores: W . z per position, pad column -inf."""
    return next_item_logits(z0_hat, weight)


def round_to_items(logits: torch.Tensor) -> torch.Tensor:
    """Per-position argmax id; ties resolve to the lower id."""
    return logits.argmax(dim=-1)


def rounding_log_probs(z0_hat: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    return F.log_softmax(rounding_logits(z0_hat, weight), dim=-1)


def sample_t(schedule: NoiseSchedule, generator: torch.Generator) -> int:
    """One training step index, uniform over [1, T]."""
    return int(torch.randint(1, schedule.T + 1, (1,), generator=generator))


def diffusion_loss(
    item_ids: torch.Tensor,
    weight: torch.Tensor,
    denoiser: SequenceDenoiser,
    schedule: NoiseSchedule,
    noise: NoiseTensor,
    t: int,
) -> torch.Tensor:
    """Single-t Monte-Carlo reconstruction loss.

    Per non-pad position: squared error between the clean embedding row and
    the denoiser prediction at the sampled step, plus the rounding
    cross-entropy of the true id under softmax(W . z_0-hat). Mean over
    positions. The caller samples t and builds the noise so gradient checks
    can hold both fixed.
    """
    mask = item_ids != PAD_ID
    z0 = weight[item_ids]
    z_t = forward_closed(z0, noise, t, schedule)
    z0_hat = denoise_predict(z_t, t, denoiser, mask)
    mse = ((z0 - z0_hat) ** 2).sum(-1)
    logp = rounding_log_probs(z0_hat, weight)
    safe_ids = item_ids.clamp(min=1)  # pad rows are masked out below
    ce = -logp.gather(-1, safe_ids.unsqueeze(-1)).squeeze(-1)
    per_pos = torch.where(mask, mse + ce, torch.zeros_like(mse))
    return per_pos.sum() / mask.sum()
