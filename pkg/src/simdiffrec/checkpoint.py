"""Byte-stable model checkpoints.

Layout: magic line, 8-byte big-endian header length, canonical JSON header
(sorted keys), then each tensor's raw little-endian bytes in the header's
manifest order (sorted parameter names). No timestamps or pickle anywhere,
so identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = b"SDRC-CKPT-1\n"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
}
_TO_TORCH = {"<f4": torch.float32, "<f8": torch.float64, "<i8": torch.int64, "<i4": torch.int32}


@dataclass
class CheckpointBundle:
    header: dict
    tensors: dict[str, torch.Tensor]

    @property
    def config(self) -> dict:
        return self.header["config"]

    @property
    def catalog_hash(self) -> str:
        return self.header["catalog_hash"]


def save_checkpoint(
    path,
    tensors: dict[str, torch.Tensor],
    config: dict,
    catalog_hash: str,
    extra: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(tensors)
    manifest = []
    blobs = []
    for name in names:
        t = tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise DataError(f"unsupported tensor dtype {t.dtype} for {name}")
        code = _DTYPES[t.dtype]
        arr = t.numpy().astype(np.dtype(code), copy=False)
        manifest.append({"name": name, "dtype": code, "shape": list(t.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format": "simdiffrec-checkpoint",
        "version": 1,
        "config": config,
        "catalog_hash": catalog_hash,
        "extra": extra or {},
        "manifest": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "big"))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> CheckpointBundle:
    if not Path(path).exists():
        raise DataError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        head_len = int.from_bytes(fh.read(8), "big")
        header = json.loads(fh.read(head_len).decode())
        if header.get("format") != "simdiffrec-checkpoint" or header.get("version") != 1:
            raise DataError(f"unsupported checkpoint version in {path}")
        tensors = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            dt = np.dtype(entry["dtype"])
            raw = fh.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise DataError(f"truncated checkpoint {path} at {entry['name']}")
            arr = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
            tensors[entry["name"]] = torch.from_numpy(arr).to(_TO_TORCH[entry["dtype"]])
    return CheckpointBundle(header=header, tensors=tensors)


def model_tensors(encoder: torch.nn.Module, denoiser: torch.nn.Module | None) -> dict:
    """Flat name->tensor map with encoder./denoiser. prefixes."""
    out = {f"encoder.{k}": v for k, v in encoder.state_dict().items()}
    if denoiser is not None:
        out.update({f"denoiser.{k}": v for k, v in denoiser.state_dict().items()})
    return out


def load_into_models(
    bundle: CheckpointBundle, encoder: torch.nn.Module, denoiser: torch.nn.Module | None
) -> None:
    enc_state = {
        k[len("encoder.") :]: v for k, v in bundle.tensors.items() if k.startswith("encoder.")
    }
    encoder.load_state_dict(enc_state)
    if denoiser is not None:
        den_state = {
            k[len("denoiser.") :]: v
            for k, v in bundle.tensors.items()
            if k.startswith("denoiser.")
        }
        if den_state:
            denoiser.load_state_dict(den_state)
