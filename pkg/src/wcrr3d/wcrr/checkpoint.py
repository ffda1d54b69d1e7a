"""Model checkpoints: a JSON manifest plus little-endian float32 parameter blobs."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..volume import RotationSet
from .filters import FilterBank
from .model import WcrrModel
from .potentials import PotentialParams

FORMAT = "wcrr3d-checkpoint"
VERSION = 1


def _write_blob(path: Path, arr) -> None:
    np.asarray(arr, dtype="<f4").tofile(path)


def _read_blob(path: Path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float64).reshape(shape)


def save_checkpoint(model: WcrrModel, directory, *, dims=None, seed: int | None = None,
                    optimizer=None, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` and one ``.f32`` file per tensor into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, arr in model.get_params().items():
        arr = np.asarray(arr)
        _write_blob(d / f"{name}.f32", arr)
        tensors.append({"name": name, "shape": list(arr.shape), "file": f"{name}.f32"})
    if optimizer is not None:
        for kind in ("m", "s"):
            for name, arr in getattr(optimizer, kind).items():
                fname = f"opt_{kind}_{name}.f32"
                _write_blob(d / fname, arr)
                tensors.append({"name": f"opt.{kind}.{name}", "shape": list(np.shape(arr)),
                                "file": fname})
    norm = model.norm(dims) if dims is not None else None
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dims": list(dims) if dims is not None else None,
        "channels": list(model.filters.channels),
        "kernel_size": int(model.filters.kernels[0].shape[-1]),
        "zero_mean_first": model.filters.zero_mean_first,
        "n_knots": model.potentials.n_knots,
        "sigma_range": [model.potentials.sigma_min, model.potentials.sigma_max],
        "beta": model.potentials.beta,
        "rotations": model.rotations.to_list(),
        "seed": seed,
        "norm_estimate": norm,
        "optimizer_step": getattr(optimizer, "step", None),
        "dtype": "<f4",
        "tensors": tensors,
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def read_manifest(directory) -> dict:
    m = json.loads((Path(directory) / "manifest.json").read_text())
    if m.get("format") != FORMAT:
        raise ValueError(f"{directory} is not a {FORMAT} directory")
    return m


def load_checkpoint(directory, with_optimizer: bool = False):
    """Load a model (and optionally its optimizer state) from a checkpoint directory."""
    from ..training import OptimizerState

    d = Path(directory)
    m = read_manifest(d)
    blobs = {t["name"]: _read_blob(d / t["file"], t["shape"]) for t in m["tensors"]}
    n_layers = len(m["channels"]) - 1
    bank = FilterBank([blobs[f"kernel{i}"] for i in range(n_layers)], m["zero_mean_first"])
    pots = PotentialParams(float(blobs["b"]), blobs["c"], *m["sigma_range"])
    model = WcrrModel(bank, pots, RotationSet.from_list(m["rotations"]))
    if not with_optimizer:
        return model
    names = model.get_params().keys()
    opt = None
    if m.get("optimizer_step") is not None:
        opt = OptimizerState({k: blobs[f"opt.m.{k}"] for k in names},
                             {k: blobs[f"opt.s.{k}"] for k in names}, int(m["optimizer_step"]))
    return model, opt, m
