"""Cosine similarity and the temperature-scaled InfoNCE objective."""

import math

import pytest
import torch
from hypothesis import given, strategies as st

from conftest import fd_max_rel_err
from simdiffrec import (
    ConfigError,
    ContrastiveConfig,
    NumericError,
    contrastive_loss,
    cosine_sim,
    info_nce,
)


def test_cosine_hand_values():
    a = torch.tensor([1.0, 0.0])
    assert float(cosine_sim(a, torch.tensor([1.0, 1.0]))) == pytest.approx(
        1 / math.sqrt(2), abs=1e-6
    )
    assert float(cosine_sim(a, a * 7)) == pytest.approx(1.0, abs=1e-6)
    assert float(cosine_sim(a, torch.tensor([0.0, 3.0]))) == pytest.approx(0.0, abs=1e-7)


def test_cosine_rejects_zero_vectors():
    with pytest.raises(NumericError):
        cosine_sim(torch.zeros(3), torch.ones(3))


def test_info_nce_equal_similarities_give_log_two():
    cfg = ContrastiveConfig(tau=1.0)
    u = torch.tensor([1.0, 0.0])
    same_dir = torch.tensor([2.0, 0.0])
    loss = info_nce(u, same_dir, torch.tensor([3.0, 0.0]), None, cfg)
    assert float(loss) == pytest.approx(math.log(2), abs=1e-7)


def test_info_nce_uniform_denominator_gives_log_five():
    cfg = ContrastiveConfig(tau=1.0)
    u = torch.tensor([1.0, 0.0])
    pos = torch.tensor([2.0, 0.0])
    neg = torch.tensor([3.0, 0.0])
    in_batch = torch.tensor([[1.0, 0.0], [4.0, 0.0], [0.5, 0.0]])
    loss = info_nce(u, pos, neg, in_batch, cfg)
    assert float(loss) == pytest.approx(math.log(5), abs=1e-7)


def test_info_nce_separated_pair_approaches_zero():
    cfg = ContrastiveConfig(tau=0.1)
    u = torch.tensor([1.0, 0.0])
    loss = info_nce(u, torch.tensor([2.0, 0.0]), torch.tensor([-1.0, 0.0]), None, cfg)
    assert float(loss) < 1e-8


def test_info_nce_needs_some_negative():
    cfg = ContrastiveConfig(tau=1.0, use_hard_negative=False, use_in_batch=True)
    with pytest.raises(ConfigError):
        info_nce(torch.tensor([1.0, 0.0]), torch.tensor([1.0, 1.0]), None, None, cfg)


def test_high_temperature_flattens_scores():
    cfg = ContrastiveConfig(tau=1000.0)
    gen = torch.Generator().manual_seed(0)
    u, pos, neg = (torch.randn(6, generator=gen) for _ in range(3))
    loss = info_nce(u, pos, neg, None, cfg)
    assert float(loss) == pytest.approx(math.log(2), abs=0.01)


def test_hard_negative_never_decreases_loss():
    gen = torch.Generator().manual_seed(1)
    for _ in range(10):
        E_u = torch.randn(3, 5, generator=gen)
        E_pos = torch.randn(3, 5, generator=gen)
        E_neg = torch.randn(3, 5, generator=gen)
        with_hard = contrastive_loss(E_u, E_pos, E_neg, ContrastiveConfig())
        without = contrastive_loss(
            E_u, E_pos, None, ContrastiveConfig(use_hard_negative=False)
        )
        assert float(with_hard) > float(without) - 1e-12


def test_loss_decreases_as_positive_aligns():
    cfg = ContrastiveConfig(tau=0.5)
    u = torch.tensor([1.0, 0.0])
    neg = torch.tensor([0.0, 1.0])
    close = info_nce(u, torch.tensor([0.99, 0.1]), neg, None, cfg)
    far = info_nce(u, torch.tensor([0.1, 0.99]), neg, None, cfg)
    assert float(close) < float(far)


def test_batched_loss_matches_per_anchor_average():
    gen = torch.Generator().manual_seed(2)
    B, d = 4, 6
    E_u = torch.randn(B, d, generator=gen)
    E_pos = torch.randn(B, d, generator=gen)
    E_neg = torch.randn(B, d, generator=gen)
    cfg = ContrastiveConfig(tau=0.7)
    batched = contrastive_loss(E_u, E_pos, E_neg, cfg)
    manual = []
    for i in range(B):
        others = torch.stack([E_pos[j] for j in range(B) if j != i])
        manual.append(float(info_nce(E_u[i], E_pos[i], E_neg[i], others, cfg)))
    assert float(batched) == pytest.approx(sum(manual) / B, abs=1e-6)


@given(st.integers(2, 6), st.integers(2, 8))
def test_loss_is_positive_and_scale_invariant(B, d):
    gen = torch.Generator().manual_seed(B * 17 + d)
    E_u = torch.randn(B, d, generator=gen, dtype=torch.float64)
    E_pos = torch.randn(B, d, generator=gen, dtype=torch.float64)
    E_neg = torch.randn(B, d, generator=gen, dtype=torch.float64)
    cfg = ContrastiveConfig()
    base = contrastive_loss(E_u, E_pos, E_neg, cfg)
    assert float(base) > 0
    scales = torch.rand(B, 1, generator=gen, dtype=torch.float64) * 5 + 0.1
    scaled = contrastive_loss(E_u * scales, E_pos * 3.0, E_neg * scales, cfg)
    assert float(scaled) == pytest.approx(float(base), abs=1e-9)


def test_single_anchor_without_hard_negative_fails():
    cfg = ContrastiveConfig(use_hard_negative=False)
    with pytest.raises(ConfigError):
        contrastive_loss(torch.randn(1, 4), torch.randn(1, 4), None, cfg)


def test_single_anchor_with_hard_negative_works():
    gen = torch.Generator().manual_seed(3)
    loss = contrastive_loss(
        torch.randn(1, 4, generator=gen),
        torch.randn(1, 4, generator=gen),
        torch.randn(1, 4, generator=gen),
        ContrastiveConfig(),
    )
    assert math.isfinite(float(loss))


def test_config_validation():
    with pytest.raises(ConfigError):
        ContrastiveConfig(tau=0.0)
    with pytest.raises(ConfigError):
        ContrastiveConfig(tau=-1.0)
    with pytest.raises(ConfigError):
        ContrastiveConfig(use_hard_negative=False, use_in_batch=False)


def test_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(4)
    E_u = torch.randn(3, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    E_pos = torch.randn(3, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    E_neg = torch.randn(3, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    cfg = ContrastiveConfig(tau=0.6)
    err = fd_max_rel_err(
        lambda: contrastive_loss(E_u, E_pos, E_neg, cfg), [E_u, E_pos, E_neg]
    )
    assert err < 1e-6
