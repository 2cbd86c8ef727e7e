"""Joint optimization of L_Total = L_sr + alpha * L_cl + beta * L_d.

Reproducibility scheme: every random concern draws from its own generator,
seeded as sha256(f"{seed}:{tag}"). Streams never interleave, so switching one
component on or off (ablations, zero weights) cannot shift the draws of the
others. With alpha = beta = 0 the step reduces exactly to plain next-item
training: the diffusion and contrastive paths are skipped outright, and the
unused denoiser parameters never receive gradients.

Per-batch pipeline: (1) sample negatives, encode originals, L_sr; (2) build
the predefined noise, corrupt to z_T, run the reverse chain, derive the
augmentation plans, encode both views, L_cl; (3) sample t, L_d on the clean
ids. The augmentation branch runs under no_grad: discrete item ids block any
gradient into the diffusion stack from L_cl by construction.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .augment import augment_batch
from .checkpoint import load_checkpoint, load_into_models, model_tensors, save_checkpoint
from .contrastive import ContrastiveConfig, contrastive_loss
from .dataio import Batch, SequenceDataset, make_batches, split_leave_one_out
from .diffusion import (
    DenoiserConfig,
    NoiseSchedule,
    NoiseTensor,
    SequenceDenoiser,
    batch_similarity_noise,
    forward_closed,
    gaussian_noise,
    reverse_chain,
    sample_t,
    diffusion_loss,
)
from .encoder import (
    PAD_ID,
    EncoderConfig,
    SequenceEncoder,
    sample_negatives_batch,
    sr_loss,
)
from .errors import ConfigError, DataError, NumericError
from .evalmetrics import MetricsReport, evaluate_model

ABLATION_MODES = ("none", "no_k_noise", "no_c_aug", "no_k_sample")
ALPHA_BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    k_noise: int = 5
    k_sample: int = 2
    k_aug_ratio: float = 0.2
    tau: float = 1.0
    max_len: int = 50
    warmup_epochs: int = 0
    ablation: str = "none"
    n_layers: int = 2
    n_heads: int = 2
    d: int = 64
    dropout: float = 0.2
    denoiser_layers: int = 1
    denoiser_heads: int = 2
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.2
    stride: int = 50
    patience: int = 20
    eval_ks: tuple[int, ...] = (5, 10)
    filter_history: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.ablation not in ABLATION_MODES:
            raise ConfigError(f"ablation must be one of {ABLATION_MODES}, got {self.ablation!r}")
        if self.T < 1 or self.stride < 1 or self.T % self.stride != 0:
            raise ConfigError(f"stride={self.stride} must be >= 1 and divide T={self.T}")
        if not self.eval_ks:
            raise ConfigError("eval_ks must be non-empty")
        object.__setattr__(self, "eval_ks", tuple(sorted(int(k) for k in self.eval_ks)))

    @property
    def selection_k(self) -> int:
        """Validation metric cutoff: NDCG@10 when available, else the largest k."""
        return 10 if 10 in self.eval_ks else max(self.eval_ks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(raw)
        if "eval_ks" in kwargs:
            kwargs["eval_ks"] = tuple(kwargs["eval_ks"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def stream_seed(seed: int, tag: str) -> int:
    """63-bit stream seed derived from the run seed and a concern tag."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def make_stream(seed: int, tag: str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(stream_seed(seed, tag))
    return g


@dataclass
class RngStreams:
    """One generator per random concern; consumption never crosses streams."""

    negatives: torch.Generator
    dropout: torch.Generator
    diffusion_t: torch.Generator
    gaussian: torch.Generator
    positions: torch.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls(
            negatives=make_stream(seed, "negatives"),
            dropout=make_stream(seed, "dropout"),
            diffusion_t=make_stream(seed, "diffusion-t"),
            gaussian=make_stream(seed, "gaussian-noise"),
            positions=make_stream(seed, "positions"),
        )


@dataclass
class Models:
    encoder: SequenceEncoder
    denoiser: SequenceDenoiser
    schedule: NoiseSchedule
    optimizer: torch.optim.Optimizer


@dataclass
class StepLosses:
    l_sr: float
    l_cl: float
    l_d: float
    total: float
    probes: dict[str, str] = field(default_factory=dict)


@dataclass
class EpochLog:
    epoch: int
    l_sr: float
    l_cl: float
    l_d: float
    l_total: float
    val_hr: dict[int, float]
    val_ndcg: dict[int, float]


@dataclass
class RunRecord:
    config_hash: str
    epochs: list[EpochLog]
    best_epoch: int
    best_metric: float
    valid_report: MetricsReport
    test_report: MetricsReport
    checkpoint_path: str | None
    wall_clock: float
    threads: int


def tensor_hash(t: torch.Tensor) -> str:
    arr = t.detach().cpu().contiguous().numpy()
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def build_models(cfg: TrainConfig, n_items: int) -> Models:
    encoder = SequenceEncoder(
        n_items,
        EncoderConfig(cfg.n_layers, cfg.n_heads, cfg.d, cfg.dropout, cfg.max_len),
        init_generator=make_stream(cfg.seed, "encoder-init"),
    )
    denoiser = SequenceDenoiser(
        DenoiserConfig(cfg.denoiser_layers, cfg.denoiser_heads, cfg.d),
        init_generator=make_stream(cfg.seed, "denoiser-init"),
    )
    schedule = NoiseSchedule.linear(cfg.T, cfg.beta_start, cfg.beta_end)
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(denoiser.parameters()), lr=cfg.lr
    )
    return Models(encoder, denoiser, schedule, optimizer)


def _make_noise(ids: torch.Tensor, weight: torch.Tensor, cfg: TrainConfig, rng: RngStreams) -> NoiseTensor:
    """Predefined per-position noise; pad rows zeroed. Gaussian in the
    no_k_noise ablation (its stream stays untouched otherwise)."""
    if cfg.ablation == "no_k_noise":
        noise = gaussian_noise((*ids.shape, weight.shape[1]), rng.gaussian, weight.dtype)
        noise.N = torch.where(
            (ids != PAD_ID).unsqueeze(-1), noise.N, torch.zeros_like(noise.N)
        )
        return noise
    return batch_similarity_noise(ids, weight, cfg.k_noise)


def train_step(
    batch: Batch,
    models: Models,
    cfg: TrainConfig,
    rng: RngStreams,
    histories: dict[int, set[int]],
    contrastive_on: bool = True,
    probe: bool = False,
) -> StepLosses:
    enc, den, schedule, opt = models.encoder, models.denoiser, models.schedule, models.optimizer
    ids = torch.from_numpy(np.ascontiguousarray(batch.item_ids)).to(torch.int64)
    targets = torch.from_numpy(np.ascontiguousarray(batch.targets)).to(torch.int64)
    sup_mask = torch.from_numpy(np.ascontiguousarray(batch.supervised_mask))
    B, L = ids.shape
    probes: dict[str, str] = {}

    negatives = sample_negatives_batch(
        [histories[int(u)] for u in batch.user_ids], (B, L), rng.negatives, enc.n_items
    )
    states = enc.encode(ids, rng.dropout)
    l_sr_t = sr_loss(states.H, targets, negatives, sup_mask, enc.weight)
    loss = l_sr_t
    l_cl_f = 0.0
    l_d_f = 0.0
    noise: NoiseTensor | None = None

    use_hard = cfg.ablation != "no_k_sample"
    # A single anchor with no hard negative has no negatives at all; that
    # degenerate batch contributes L_cl = 0 rather than an error.
    if cfg.alpha > 0 and contrastive_on and (B >= 2 or use_hard):
        with torch.no_grad():
            noise = _make_noise(ids, enc.weight, cfg, rng)
            mask = ids != PAD_ID
            z_T = forward_closed(enc.weight[ids], noise, schedule.T, schedule)
            z0_hat = reverse_chain(
                z_T, noise, schedule, cfg.stride, lambda z, t: den(z, t, mask)
            )
            position_gen = rng.positions if cfg.ablation == "no_c_aug" else None
            pos_ids, neg_ids, plans = augment_batch(
                z0_hat, ids, enc.weight, cfg.k_aug_ratio, cfg.k_sample, position_gen
            )
        e_pos = enc.representation(pos_ids, rng.dropout)
        e_neg = enc.representation(neg_ids, rng.dropout) if use_hard else None
        ccfg = ContrastiveConfig(
            tau=cfg.tau, use_hard_negative=use_hard, use_in_batch=True
        )
        l_cl_t = contrastive_loss(states.last, e_pos, e_neg, ccfg)
        loss = loss + cfg.alpha * l_cl_t
        l_cl_f = float(l_cl_t.detach())
        if probe:
            probes["positions"] = hashlib.sha256(
                json.dumps([list(p.positions) for p in plans]).encode()
            ).hexdigest()[:16]
            probes["positive_ids"] = tensor_hash(pos_ids)
            probes["hard_negative_ids"] = tensor_hash(neg_ids)

    if cfg.beta > 0:
        if noise is None:
            with torch.no_grad():
                noise = _make_noise(ids, enc.weight, cfg, rng)
        t = sample_t(schedule, rng.diffusion_t)
        detached = NoiseTensor(N=noise.N.detach(), mode=noise.mode)
        l_d_t = diffusion_loss(ids, enc.weight, den, schedule, detached, t)
        loss = loss + cfg.beta * l_d_t
        l_d_f = float(l_d_t.detach())
        if probe:
            probes["t"] = str(t)

    l_sr_f = float(l_sr_t.detach())
    total_f = l_sr_f + cfg.alpha * l_cl_f + cfg.beta * l_d_f
    if not math.isfinite(total_f):
        raise NumericError(
            f"non-finite loss: l_sr={l_sr_f} l_cl={l_cl_f} l_d={l_d_f}"
        )
    if probe:
        probes["negatives"] = tensor_hash(negatives)
        probes["anchor"] = tensor_hash(states.last)
        if noise is not None:
            probes["noise"] = tensor_hash(noise.N)

    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return StepLosses(l_sr=l_sr_f, l_cl=l_cl_f, l_d=l_d_f, total=total_f, probes=probes)


def _write_losses_csv(path: Path, rows: list[EpochLog], ks) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["epoch", "l_sr", "l_cl", "l_d", "l_total"]
        for k in ks:
            header += [f"val_hr@{k}", f"val_ndcg@{k}"]
        writer.writerow(header)
        for row in rows:
            out = [row.epoch, repr(row.l_sr), repr(row.l_cl), repr(row.l_d), repr(row.l_total)]
            for k in ks:
                out += [repr(row.val_hr[k]), repr(row.val_ndcg[k])]
            writer.writerow(out)


def write_metrics_json(path: Path, report: MetricsReport, config_hash: str) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(config_hash), fh, sort_keys=True, indent=2)
        fh.write("\n")


def fit(cfg: TrainConfig, ds: SequenceDataset, out_dir=None) -> RunRecord:
    """Train, select on validation NDCG, evaluate the best model on test.

    When out_dir is given, writes config.json, losses.csv, metrics.json and
    checkpoints/best there. All emitted files are byte-deterministic for a
    fixed (seed, config, dataset, thread budget).
    """
    t_start = time.time()
    n_items = ds.catalog.n_items
    if n_items < 2:
        raise DataError("catalog must contain at least 2 items")
    if cfg.k_noise > n_items - 1:
        raise ConfigError(f"k_noise={cfg.k_noise} needs a catalog of > {cfg.k_noise} items")
    if cfg.k_sample > n_items:
        raise ConfigError(f"k_sample={cfg.k_sample} exceeds catalog size {n_items}")
    if cfg.max_len < 2:
        raise ConfigError("max_len must be >= 2 to form (input, target) pairs")

    train_ds, valid, test = split_leave_one_out(ds)
    histories = {uid: set(seq) for uid, seq in ds.sequences.items()}
    models = build_models(cfg, n_items)
    rng = RngStreams.from_seed(cfg.seed)

    best_metric = -math.inf
    best_epoch = -1
    best_state: dict[str, torch.Tensor] | None = None
    best_valid: MetricsReport | None = None
    epoch_rows: list[EpochLog] = []
    stale = 0

    for epoch in range(cfg.epochs):
        models.encoder.train()
        models.denoiser.train()
        sums = [0.0, 0.0, 0.0]
        n_steps = 0
        for batch in make_batches(
            train_ds, cfg.max_len, cfg.batch_size, stream_seed(cfg.seed, f"shuffle:{epoch}")
        ):
            step = train_step(
                batch, models, cfg, rng, histories, contrastive_on=epoch >= cfg.warmup_epochs
            )
            sums[0] += step.l_sr
            sums[1] += step.l_cl
            sums[2] += step.l_d
            n_steps += 1
        if n_steps == 0:
            raise DataError("training split produced no batches")
        l_sr, l_cl, l_d = (s / n_steps for s in sums)
        l_total = l_sr + cfg.alpha * l_cl + cfg.beta * l_d
        val = evaluate_model(
            models.encoder, valid, cfg.eval_ks, seed=cfg.seed,
            filter_history=cfg.filter_history,
        )
        epoch_rows.append(EpochLog(epoch, l_sr, l_cl, l_d, l_total, val.hr, val.ndcg))
        metric = val.ndcg[cfg.selection_k]
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = {
                k: v.clone() for k, v in model_tensors(models.encoder, models.denoiser).items()
            }
            best_valid = val
            stale = 0
        else:
            stale += 1
            if cfg.patience > 0 and stale >= cfg.patience:
                break

    if best_state is None:  # epochs == 0: the initialized model is the artifact
        best_state = model_tensors(models.encoder, models.denoiser)
        best_epoch = -1
        best_metric = float("nan")
        best_valid = evaluate_model(
            models.encoder, valid, cfg.eval_ks, seed=cfg.seed,
            filter_history=cfg.filter_history,
        )

    enc_state = {k[len("encoder.") :]: v for k, v in best_state.items() if k.startswith("encoder.")}
    den_state = {k[len("denoiser.") :]: v for k, v in best_state.items() if k.startswith("denoiser.")}
    models.encoder.load_state_dict(enc_state)
    models.denoiser.load_state_dict(den_state)
    test_report = evaluate_model(
        models.encoder, test, cfg.eval_ks, seed=cfg.seed, filter_history=cfg.filter_history
    )

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w") as fh:
            json.dump({"version": 1, "train": cfg.to_dict()}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        _write_losses_csv(out_dir / "losses.csv", epoch_rows, cfg.eval_ks)
        write_metrics_json(out_dir / "metrics.json", test_report, cfg.config_hash)
        checkpoint_path = out_dir / "checkpoints" / "best"
        save_checkpoint(
            checkpoint_path,
            best_state,
            cfg.to_dict(),
            ds.catalog.hash(),
            extra={"best_epoch": best_epoch, "seed": cfg.seed, "rng_scheme": "sha256-streams"},
        )
        checkpoint_path = str(checkpoint_path)

    return RunRecord(
        config_hash=cfg.config_hash,
        epochs=epoch_rows,
        best_epoch=best_epoch,
        best_metric=best_metric,
        valid_report=best_valid,
        test_report=test_report,
        checkpoint_path=checkpoint_path,
        wall_clock=time.time() - t_start,
        threads=torch.get_num_threads(),
    )


def models_from_checkpoint(path) -> tuple[SequenceEncoder, SequenceDenoiser, TrainConfig, str]:
    """Rebuild the trained models from a checkpoint file."""
    bundle = load_checkpoint(path)
    cfg = TrainConfig.from_dict(bundle.config)
    n_items = bundle.tensors["encoder.item_emb.weight"].shape[0] - 1
    models = build_models(cfg, n_items)
    load_into_models(bundle, models.encoder, models.denoiser)
    return models.encoder, models.denoiser, cfg, bundle.catalog_hash


def metric_row(prefix: dict, report: MetricsReport, ks) -> dict:
    row = dict(prefix)
    for k in ks:
        row[f"hr@{k}"] = report.hr[k]
        row[f"ndcg@{k}"] = report.ndcg[k]
    return row


def ablate(
    cfg: TrainConfig,
    ds: SequenceDataset,
    modes=ABLATION_MODES,
    seeds: tuple[int, ...] | None = None,
) -> tuple[list[dict], dict]:
    """One fit per (mode, seed); rows carry test metrics for aggregation."""
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {mode!r}")
    if seeds is None:
        seeds = (cfg.seed,)
    rows = []
    records = {}
    for mode in modes:
        for seed in seeds:
            run_cfg = replace(cfg, ablation=mode, seed=seed)
            record = fit(run_cfg, ds)
            records[(mode, seed)] = record
            rows.append(
                metric_row({"mode": mode, "seed": seed}, record.test_report, cfg.eval_ks)
            )
    return rows, records


def sweep(cfg: TrainConfig, ds: SequenceDataset, grid: dict[str, list]) -> tuple[list[dict], dict]:
    """Grid sweep sharing the base seed; one fit per grid point."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    names = list(grid)
    rows = []
    records = {}
    for values in itertools.product(*(grid[name] for name in names)):
        point = dict(zip(names, values))
        run_cfg = replace(cfg, **point)
        record = fit(run_cfg, ds)
        records[tuple(values)] = record
        rows.append(metric_row(point, record.test_report, cfg.eval_ks))
    return rows, records
