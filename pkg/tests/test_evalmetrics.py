"""Rank computation, HR/NDCG, evaluation harness, and aggregation."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import make_cyclic_ds
from simdiffrec import (
    ConfigError,
    DataError,
    EncoderConfig,
    MetricsReport,
    NumericError,
    SequenceEncoder,
    aggregate_runs,
    evaluate,
    evaluate_model,
    export_embeddings,
    hr_at_k,
    make_stream,
    ndcg_at_k,
    rank_of_target,
    report_from_ranks,
    split_leave_one_out,
)


def test_rank_hand_cases():
    assert rank_of_target(np.array([-np.inf, 3.0, 2.0, 2.0]), 2) == 2
    assert rank_of_target(np.array([-np.inf, 3.0, 2.0, 2.0]), 1) == 1
    # all-equal scores: ties never improve the rank, so every item is rank 1
    assert rank_of_target(np.array([-np.inf, 5.0, 5.0, 5.0]), 3) == 1
    assert rank_of_target(np.array([-np.inf, 9.0, 8.0, 7.0]), 3) == 3


def test_rank_errors():
    with pytest.raises(DataError):
        rank_of_target(np.array([0.0, 1.0]), 0)  # pad target
    with pytest.raises(DataError):
        rank_of_target(np.array([0.0, 1.0]), 5)  # outside catalog
    with pytest.raises(NumericError):
        rank_of_target(np.array([0.0, np.nan, 1.0]), 2)
    with pytest.raises(NumericError):
        rank_of_target(np.array([0.0, -np.inf]), 1)  # target score not finite


@given(st.integers(2, 30), st.integers(1, 29), st.data())
def test_rank_matches_counting_oracle(V, target, data):
    target = min(target, V)
    scores = data.draw(
        st.lists(
            st.floats(-10, 10, allow_nan=False, width=32), min_size=V, max_size=V
        )
    )
    logits = np.array([-np.inf] + scores)
    expected = 1 + sum(1 for s in scores if s > scores[target - 1])
    assert rank_of_target(logits, target) == expected


def test_hr_and_ndcg_hand_values():
    assert hr_at_k([1], 1) == 1.0
    assert hr_at_k([11], 10) == 0.0
    assert hr_at_k([3, 12], 10) == 0.5
    assert ndcg_at_k([1], 5) == 1.0
    assert ndcg_at_k([3], 5) == pytest.approx(0.5)  # 1/log2(4)
    assert ndcg_at_k([11], 10) == 0.0
    with pytest.raises(ConfigError):
        hr_at_k([1], 0)
    with pytest.raises(ConfigError):
        ndcg_at_k([1], -1)


@given(st.dictionaries(st.integers(0, 50), st.integers(1, 40), min_size=1))
def test_metric_invariants_over_random_ranks(per_user):
    report = report_from_ranks(per_user, ks=(5, 10))
    assert 0.0 <= report.hr[5] <= report.hr[10] <= 1.0
    assert report.ndcg[5] <= report.hr[5] + 1e-12
    assert report.ndcg[10] <= report.hr[10] + 1e-12
    assert report.n_users == len(per_user)


def test_report_rejects_inconsistent_metrics():
    with pytest.raises(NumericError):
        MetricsReport(
            hr={5: 0.6, 10: 0.5},  # HR cannot shrink as k grows
            ndcg={5: 0.3, 10: 0.3},
            per_user_rank={0: 1},
            n_users=1,
        )
    with pytest.raises(NumericError):
        MetricsReport(
            hr={5: 0.2, 10: 0.4},
            ndcg={5: 0.5, 10: 0.5},  # NDCG above HR is impossible
            per_user_rank={0: 1},
            n_users=1,
        )


def test_report_json_schema():
    report = report_from_ranks({0: 1, 1: 7}, ks=(5, 10), seed=3)
    payload = report.to_json_dict("abc123")
    assert set(payload) == {"ks", "hr", "ndcg", "n_users", "seed", "config_hash"}
    assert payload["ks"] == [5, 10]
    assert set(payload["hr"]) == {"5", "10"}  # JSON object keys are strings
    assert payload["n_users"] == 2
    assert payload["seed"] == 3
    assert payload["config_hash"] == "abc123"


def test_evaluate_with_oracle_scorer():
    split = {u: ([1, 2], u % 3 + 1) for u in range(6)}

    def perfect(uid, prefix):
        scores = np.full(4, -1.0)
        scores[split[uid][1]] = 1.0
        return scores

    report = evaluate(perfect, split, ks=(1, 5))
    assert report.hr[1] == 1.0
    assert report.ndcg[5] == 1.0


def test_evaluate_rejects_empty_split():
    with pytest.raises(DataError):
        evaluate(lambda u, p: np.zeros(3), {}, ks=(5,))


def test_evaluate_rejects_empty_prefix():
    with pytest.raises(DataError):
        evaluate(lambda u, p: np.zeros(3), {0: ([], 1)}, ks=(5,))


def make_encoder(n_items=10, max_len=8):
    return SequenceEncoder(
        n_items,
        EncoderConfig(n_layers=1, n_heads=2, d=16, dropout=0.0, max_len=max_len),
        init_generator=make_stream(0, "encoder-init"),
    )


def test_evaluate_model_is_deterministic_and_self_consistent():
    ds = make_cyclic_ds(n_users=9, n_items=10, length=7)
    _, valid, _ = split_leave_one_out(ds)
    enc = make_encoder()
    r1 = evaluate_model(enc, valid, ks=(5, 10))
    r2 = evaluate_model(enc, valid, ks=(5, 10), batch_size=2)  # chunking is invisible
    assert r1.per_user_rank == r2.per_user_rank
    ranks = [r1.per_user_rank[u] for u in sorted(r1.per_user_rank)]
    assert r1.hr[5] == hr_at_k(ranks, 5)
    assert r1.ndcg[10] == ndcg_at_k(ranks, 10)


def test_filter_history_never_hurts_the_target():
    ds = make_cyclic_ds(n_users=9, n_items=10, length=7)
    _, valid, _ = split_leave_one_out(ds)
    enc = make_encoder()
    plain = evaluate_model(enc, valid, ks=(5, 10))
    filtered = evaluate_model(enc, valid, ks=(5, 10), filter_history=True)
    for u in plain.per_user_rank:
        assert filtered.per_user_rank[u] <= plain.per_user_rank[u]


def test_filter_history_keeps_repeated_target_reachable():
    # target also appears in the prefix; it must not be masked out
    enc = make_encoder()
    split = {0: ([2, 3, 2], 2)}
    report = evaluate_model(enc, split, ks=(10,), filter_history=True)
    assert report.per_user_rank[0] >= 1  # rank computed, not an error


def test_aggregate_hand_values():
    a = report_from_ranks({0: 1, 1: 20}, ks=(10,))  # hr@10 = 0.5
    b = report_from_ranks({0: 1, 1: 2}, ks=(10,))  # hr@10 = 1.0
    agg = aggregate_runs([a, b])
    assert agg.hr_mean[10] == pytest.approx(0.75)
    assert agg.hr_std[10] == pytest.approx(
        math.sqrt(((0.5 - 0.75) ** 2 + (1.0 - 0.75) ** 2) / 1)
    )
    assert agg.n_runs == 2


def test_aggregate_two_point_oracle():
    runs = [
        report_from_ranks({0: 1, 1: 1, 2: 99, 3: 99, 4: 99}, ks=(10,)),  # 0.4
        report_from_ranks({0: 1, 1: 99, 2: 99, 3: 99, 4: 99}, ks=(10,)),  # 0.2
    ]
    agg = aggregate_runs(runs)
    assert agg.hr_mean[10] == pytest.approx(0.3)
    assert agg.hr_std[10] == pytest.approx(0.14142135623730953, abs=1e-12)


def test_aggregate_singleton_std_is_zero():
    agg = aggregate_runs([report_from_ranks({0: 4}, ks=(5, 10))])
    assert agg.hr_std[5] == 0.0
    assert agg.ndcg_std[10] == 0.0


def test_aggregate_rejects_mismatched_ks():
    a = report_from_ranks({0: 1}, ks=(5,))
    b = report_from_ranks({0: 1}, ks=(5, 10))
    with pytest.raises(ConfigError):
        aggregate_runs([a, b])


def test_export_embeddings_roundtrip(tmp_path):
    enc = make_encoder()
    rows = [
        (0, [1, 2, 3], "original"),
        (0, [1, 2, 4], "positive"),
        (1, [5, 6], "original"),
    ]
    path = tmp_path / "emb.csv"
    n = export_embeddings(enc, rows, path)
    assert n == 3
    lines = path.read_text().splitlines()
    assert lines[0] == "user_id," + ",".join(f"e_{i}" for i in range(16)) + ",tag"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "0" and first[-1] == "original"
    with torch.no_grad():
        expect = enc.representation(
            torch.tensor([[0, 0, 0, 0, 0, 1, 2, 3]])
        )[0]
    got = torch.tensor([float(v) for v in first[1:-1]])
    assert torch.allclose(got, expect.to(torch.float64).float(), atol=0)
    # byte determinism
    path2 = tmp_path / "emb2.csv"
    export_embeddings(enc, rows, path2)
    assert path.read_bytes() == path2.read_bytes()
