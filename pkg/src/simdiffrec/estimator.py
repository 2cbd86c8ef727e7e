"""scikit-learn style facade over the full training pipeline.

SimDiffRecommender.fit takes raw item-id sequences (one list per user),
re-indexes them internally, trains the joint model, and exposes top-k
next-item prediction. Hyperparameters mirror TrainConfig; get_params /
set_params / clone work through BaseEstimator introspection.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .dataio import Catalog, SequenceDataset, pad_sequence
from .encoder import next_item_logits
from .errors import DataError
from .evalmetrics import rank_of_target
from .trainer import TrainConfig, fit, models_from_checkpoint


def _validate_sequences(X, min_length: int = 1) -> list[list]:
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise DataError("X must be an iterable of item-id sequences")
    seqs = []
    for idx, seq in enumerate(X):
        if isinstance(seq, (str, bytes)) or not hasattr(seq, "__iter__"):
            raise DataError(f"X[{idx}] is not a sequence of item ids")
        seq = list(seq)
        if len(seq) < min_length:
            raise DataError(f"X[{idx}] has {len(seq)} items, needs >= {min_length}")
        seqs.append(seq)
    if not seqs:
        raise DataError("X is empty")
    return seqs


class SimDiffRecommender(BaseEstimator):
    """Next-item recommender trained with diffusion-based augmentation.

    Fitted attributes: ``catalog_`` (raw-id maps), ``encoder_``,
    ``denoiser_``, ``record_`` (the training RunRecord), ``n_items_``.
    """

    def __init__(
        self,
        alpha: float = 0.1,
        beta: float = 0.1,
        lr: float = 0.001,
        batch_size: int = 256,
        epochs: int = 200,
        seed: int = 0,
        k_noise: int = 5,
        k_sample: int = 2,
        k_aug_ratio: float = 0.2,
        tau: float = 1.0,
        max_len: int = 50,
        warmup_epochs: int = 0,
        ablation: str = "none",
        n_layers: int = 2,
        n_heads: int = 2,
        d: int = 64,
        dropout: float = 0.2,
        T: int = 1000,
        stride: int = 50,
        patience: int = 20,
    ):
        self.alpha = alpha
        self.beta = beta
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.k_noise = k_noise
        self.k_sample = k_sample
        self.k_aug_ratio = k_aug_ratio
        self.tau = tau
        self.max_len = max_len
        self.warmup_epochs = warmup_epochs
        self.ablation = ablation
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d = d
        self.dropout = dropout
        self.T = T
        self.stride = stride
        self.patience = patience

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            k_noise=self.k_noise,
            k_sample=self.k_sample,
            k_aug_ratio=self.k_aug_ratio,
            tau=self.tau,
            max_len=self.max_len,
            warmup_epochs=self.warmup_epochs,
            ablation=self.ablation,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d=self.d,
            dropout=self.dropout,
            T=self.T,
            stride=self.stride,
            patience=self.patience,
        )

    def _reindex(self, seqs: list[list]) -> list[list[int]]:
        index = self.catalog_.item_index
        out = []
        for idx, seq in enumerate(seqs):
            try:
                out.append([index[str(item)] for item in seq])
            except KeyError as exc:
                raise DataError(f"X[{idx}] contains unseen item {exc.args[0]!r}") from None
        return out

    def fit(self, X, y=None):
        """Train on sequences of raw item ids (each of length >= 3)."""
        seqs = _validate_sequences(X, min_length=3)
        raw_by_key = {str(item): item for seq in seqs for item in seq}
        items = sorted(raw_by_key)
        catalog = Catalog(
            user_index={str(u): u for u in range(len(seqs))},
            item_index={item: idx + 1 for idx, item in enumerate(items)},
        )
        internal = [[catalog.item_index[str(item)] for item in seq] for seq in seqs]
        ds = SequenceDataset(
            sequences={u: seq for u, seq in enumerate(internal)}, catalog=catalog
        )
        cfg = self._train_config()
        with tempfile.TemporaryDirectory() as tmp:
            record = fit(cfg, ds, out_dir=tmp)
            encoder, denoiser, _, _ = models_from_checkpoint(
                Path(tmp) / "checkpoints" / "best"
            )
        self.catalog_ = catalog
        self.encoder_ = encoder
        self.denoiser_ = denoiser
        self.record_ = record
        self.n_items_ = catalog.n_items
        # predict() hands back the caller's original objects, not their str keys
        self._inverse_index_ = {v: raw_by_key[k] for k, v in catalog.item_index.items()}
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "encoder_"):
            raise DataError("this SimDiffRecommender instance is not fitted yet")

    def _logits(self, seqs: list[list]) -> torch.Tensor:
        internal = self._reindex(seqs)
        ids = torch.tensor(
            [pad_sequence(seq, self.max_len) for seq in internal], dtype=torch.int64
        )
        self.encoder_.eval()
        with torch.no_grad():
            return next_item_logits(self.encoder_.representation(ids), self.encoder_.weight)

    def predict(self, X, k: int = 10) -> np.ndarray:
        """Top-k next items (raw ids) per input sequence, best first."""
        self._check_fitted()
        seqs = _validate_sequences(X, min_length=1)
        logits = self._logits(seqs)
        order = torch.argsort(logits, dim=-1, descending=True, stable=True)[:, :k]
        return np.array(
            [[self._inverse_index_[int(i)] for i in row] for row in order], dtype=object
        )

    def score(self, X, y=None, k: int = 10) -> float:
        """HR@k: fraction of rows whose held-out next item ranks in the top k.

        With y given, X rows are prefixes and y the targets; without y the
        last element of each row is held out.
        """
        self._check_fitted()
        seqs = _validate_sequences(X, min_length=1 if y is not None else 2)
        if y is None:
            targets = [seq[-1] for seq in seqs]
            seqs = [seq[:-1] for seq in seqs]
        else:
            targets = list(y)
            if len(targets) != len(seqs):
                raise DataError(f"len(y)={len(targets)} != len(X)={len(seqs)}")
        logits = self._logits(seqs)
        internal_targets = self._reindex([[t] for t in targets])
        hits = 0
        for row, (target,) in enumerate(internal_targets):
            if rank_of_target(logits[row].numpy(), target) <= k:
                hits += 1
        return hits / len(seqs)
