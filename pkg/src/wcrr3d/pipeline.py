"""End-to-end orchestration: WCRR reconstruction, grid search, experiments, slice export."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .baselines import ReconResult, recon_dcp, recon_l1_wavelet, recon_tv
from .forward import (CoilSet, EncodingOperator, KSpaceData, KSpaceTrajectory, NoiseModel,
                      generate_trajectory, simulate_acquisition, synth_coils)
from .io import write_cvol, write_pgm
from .solvers import Objective, SolverConfig, SolverError, nmapg_minimize
from .volume import (ComplexVolume, EllipsoidPhantom, foreground_mask, generate_phantom,
                     masked_psnr, masked_ssim)
from .wcrr import WcrrModel, load_checkpoint

log = logging.getLogger(__name__)

METHODS = ("dcp", "tv", "wavelet", "wcrr")


def default_model() -> WcrrModel:
    """The desk-scale model shipped with the package."""
    return load_checkpoint(resources.files("wcrr3d") / "data" / "desk_model")


# ----------------------------------------------------------------------------
# WCRR reconstruction

class ReconConfig(BaseModel):
    lam: float = Field(1e-2, ge=0)
    sigma: float = 0.03
    tol: float = Field(5e-3, gt=0)
    max_iters: int = Field(300, ge=1)


def recon_wcrr(y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory, model: WcrrModel,
               cfg: ReconConfig | None = None, *, x0=None,
               op: EncodingOperator | None = None) -> ReconResult:
    """nmAPG on ``1/2 ||A x - y||^2 + lam R(x)`` started from the DCp image.

    ``sigma`` is clamped to the spline range by the model.
    """
    cfg = cfg or ReconConfig()
    t0 = time.perf_counter()
    op = op or EncodingOperator(coils, traj)
    if x0 is None:
        x0 = recon_dcp(y, coils, traj, op.dims)
    x0 = x0.data if isinstance(x0, ComplexVolume) else ComplexVolume.from_complex(x0).data
    aty = op.adjoint(y)
    yy = float(np.vdot(y.samples, y.samples).real)
    cache: dict = {}

    def data_term(x):
        if cache.get("x") is not x:
            z = x[0] + 1j * x[1]
            n = op.normal(z)
            val = 0.5 * float(np.vdot(z, n).real) - float(np.vdot(aty, z).real) + 0.5 * yy
            g = n - aty
            cache.update(x=x, val=max(val, 0.0), grad=np.stack([g.real, g.imag]))
        return cache["val"], cache["grad"]

    def value(x):
        return data_term(x)[0] + (cfg.lam * model.value(x, cfg.sigma) if cfg.lam else 0.0)

    def grad(x):
        g = data_term(x)[1]
        return g + cfg.lam * model.grad(x, cfg.sigma) if cfg.lam else g.copy()

    scfg = SolverConfig(eps=cfg.tol, max_iters=cfg.max_iters, L1=op.norm_sq())
    try:
        res = nmapg_minimize(Objective(value, grad), x0, scfg)
    except SolverError as exc:
        raise SolverError(f"WCRR reconstruction failed: {exc}") from exc
    return ReconResult(ComplexVolume(res.x), res.iterations, res.trace, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# method registry

def run_method(method: str, y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory,
               params: dict | None = None, *, model: WcrrModel | None = None,
               op: EncodingOperator | None = None) -> ReconResult:
    params = dict(params or {})
    op = op or EncodingOperator(coils, traj)
    if method == "dcp":
        t0 = time.perf_counter()
        v = recon_dcp(y, coils, traj, op.dims)
        return ReconResult(v, 1, [], time.perf_counter() - t0)
    if method == "tv":
        return recon_tv(y, coils, traj, params.pop("lam", DEFAULT_PARAMS["tv"]["lam"]),
                        op=op, **params)
    if method == "wavelet":
        return recon_l1_wavelet(y, coils, traj, params.pop("lam", DEFAULT_PARAMS["wavelet"]["lam"]),
                                op=op, **params)
    if method == "wcrr":
        cfg = ReconConfig(**{**DEFAULT_PARAMS["wcrr"], **params})
        return recon_wcrr(y, coils, traj, model or default_model(), cfg, op=op)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# desk-scale defaults from a grid search on held-out random phantoms
DEFAULT_PARAMS: dict[str, dict] = {
    "dcp": {},
    "tv": {"lam": 1e3},
    "wavelet": {"lam": 10.0},
    "wcrr": {"lam": 1e5, "sigma": 0.01},
}


# ----------------------------------------------------------------------------
# grid search

@dataclass
class ValidationCase:
    gt: ComplexVolume
    y: KSpaceData
    coils: CoilSet
    traj: KSpaceTrajectory
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = foreground_mask(self.gt)


@dataclass
class GridResult:
    best: dict           # {"lam": ..., "sigma": ...}
    score: float
    table: list[dict]    # rows: lam, sigma, psnr, status

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=("lam", "sigma", "psnr", "status"))
            wr.writeheader()
            for row in self.table:
                wr.writerow({**row, "psnr": _fmt(row["psnr"])})


ReconFn = Callable[[ValidationCase, float, float | None], ComplexVolume]


def grid_search(cases: Sequence[ValidationCase], method: str | ReconFn,
                lambdas: Sequence[float], sigmas: Sequence[float | None] = (None,), *,
                model: WcrrModel | None = None) -> GridResult:
    """Average masked PSNR over ``cases`` at every (lam, sigma) cell.

    ``method`` is a registered name or a callable ``(case, lam, sigma) -> volume``.
    A cell whose reconstruction raises is marked failed and skipped. Ties in
    the score go to the smaller lambda, then the smaller sigma.
    """
    if not lambdas or not sigmas:
        raise ValueError("grids must be nonempty")
    if not cases:
        raise ValueError("no validation cases")
    if isinstance(method, str):
        name = method
        ops = [EncodingOperator(c.coils, c.traj) for c in cases]
        if name == "wcrr" and model is None:
            model = default_model()

        def fn(case, lam, sigma, _ops=dict(zip(map(id, cases), ops))):
            params = {"lam": lam} if name != "dcp" else {}
            if sigma is not None and name == "wcrr":
                params["sigma"] = sigma
            return run_method(name, case.y, case.coils, case.traj, params, model=model,
                              op=_ops[id(case)]).volume
    else:
        fn = method

    table = []
    for lam in lambdas:
        for sigma in sigmas:
            try:
                scores = [masked_psnr(c.gt, fn(c, lam, sigma), c.mask) for c in cases]
                table.append({"lam": lam, "sigma": sigma, "psnr": float(np.mean(scores)),
                              "status": "ok"})
            except Exception as exc:  # noqa: BLE001 - failed cells are recorded
                log.warning("grid cell lam=%g sigma=%s failed: %s", lam, sigma, exc)
                table.append({"lam": lam, "sigma": sigma, "psnr": math.nan,
                              "status": f"failed: {exc}"})
    ok = [r for r in table if r["status"] == "ok"]
    if not ok:
        raise RuntimeError("every grid cell failed")

    def key(r):
        s = r["sigma"] if r["sigma"] is not None else -math.inf
        return (-r["psnr"], r["lam"], s)

    best = min(ok, key=key)
    return GridResult({"lam": best["lam"], "sigma": best["sigma"]}, best["psnr"], table)


# ----------------------------------------------------------------------------
# experiments

class PhantomSpec(BaseModel):
    kind: Literal["default", "random"] = "default"
    seed: int = 0
    n_inner: int = 8

    def build(self) -> EllipsoidPhantom:
        if self.kind == "default":
            return EllipsoidPhantom.default()
        return EllipsoidPhantom.random(self.seed, self.n_inner)


class TrajectorySpec(BaseModel):
    kind: Literal["radial3d", "random_vds"] = "radial3d"
    acceleration: float = Field(8.0, gt=0)    # M = round(N / acceleration)
    samples_per_spoke: int | None = None      # radial; defaults to the grid edge length
    exponent: float = 2.0
    core: float = 0.05


class ExperimentManifest(BaseModel):
    dims: tuple[int, int, int] = (32, 32, 32)
    phantom: PhantomSpec = PhantomSpec()
    trajectory: TrajectorySpec = TrajectorySpec()
    coils: int = Field(4, ge=1)
    noise_sigma: float = Field(2e-3, ge=0)
    methods: list[str] = list(METHODS)
    params: dict[str, dict] = Field(default_factory=dict)
    model: str | None = None                  # checkpoint directory; packaged model if unset
    seed: int = 0
    output_dir: str = "experiment_out"

    @field_validator("methods")
    @classmethod
    def _known(cls, v):
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {list(METHODS)}")
        if not v:
            raise ValueError("method list is empty")
        return v

    @model_validator(mode="after")
    def _files_exist(self):
        if self.model is not None and not (Path(self.model) / "manifest.json").is_file():
            raise ValueError(f"model checkpoint {self.model} not found")
        return self

    @property
    def n_samples(self) -> int:
        return max(1, round(int(np.prod(self.dims)) / self.trajectory.acceleration))

    def method_params(self, method: str) -> dict:
        return {**DEFAULT_PARAMS[method], **self.params.get(method, {})}


@dataclass
class MethodReport:
    method: str
    psnr: float = math.nan
    ssim: float = math.nan
    wall_s: float = 0.0
    iterations: int = 0
    status: str = "ok"


@dataclass
class ExperimentReport:
    rows: list[MethodReport] = field(default_factory=list)
    output_dir: Path | None = None

    def row(self, method: str) -> MethodReport:
        return next(r for r in self.rows if r.method == method)


METRIC_COLUMNS = ("method", "psnr", "ssim", "iterations", "status")
TIMING_COLUMNS = ("method", "wall_s")


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6f}"


def simulate_case(m: ExperimentManifest):
    """Ground truth, coils, trajectory and noisy measurements for a manifest."""
    gt = generate_phantom(m.phantom.build(), m.dims)
    coils = synth_coils(m.dims, m.coils, seed=m.seed)
    t = m.trajectory
    spoke = t.samples_per_spoke or max(m.dims)
    traj = generate_trajectory(t.kind, m.n_samples, samples_per_spoke=spoke,
                               exponent=t.exponent, core=t.core, seed=m.seed)
    y = simulate_acquisition(gt, coils, traj, NoiseModel(m.noise_sigma, m.seed))
    return gt, coils, traj, y


def run_experiment(m: ExperimentManifest, *, write: bool = True) -> ExperimentReport:
    """Simulate, reconstruct with every listed method, score and write outputs.

    Writes ``<method>.cvol``, ``<method>_trace.csv``, center-slice PGMs per
    axis, ``metrics.csv`` (deterministic given the manifest) and
    ``timings.csv`` (wall clock, not reproducible).
    """
    out = Path(m.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    gt, coils, traj, y = simulate_case(m)
    mask = foreground_mask(gt)
    op = EncodingOperator(coils, traj)
    model = None
    if "wcrr" in m.methods:
        model = load_checkpoint(m.model) if m.model else default_model()
    report = ExperimentReport(output_dir=out if write else None)
    if write:
        write_cvol(out / "ground_truth.cvol", gt)
    for name in m.methods:
        row = MethodReport(name)
        try:
            res = run_method(name, y, coils, traj, m.method_params(name), model=model, op=op)
        except Exception as exc:  # noqa: BLE001 - recorded in the report
            log.error("method %s failed: %s", name, exc)
            row.status = f"failed: {type(exc).__name__}"
            report.rows.append(row)
            continue
        row.psnr = masked_psnr(gt, res.volume, mask)
        row.ssim = masked_ssim(gt, res.volume, mask)
        row.wall_s = res.wall_s
        row.iterations = res.iterations
        report.rows.append(row)
        if write:
            write_cvol(out / f"{name}.cvol", res.volume)
            write_trace(out / f"{name}_trace.csv", res.trace)
            for axis in range(3):
                export_slices(res.volume, axis, m.dims[axis] // 2,
                              out / f"{name}_axis{'xyz'[axis]}.pgm")
    if write:
        write_metrics(report, out / "metrics.csv")
        with open(out / "timings.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(TIMING_COLUMNS)
            for r in report.rows:
                wr.writerow([r.method, f"{r.wall_s:.3f}"])
    return report


def write_metrics(report: ExperimentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRIC_COLUMNS)
        for r in report.rows:
            wr.writerow([r.method, _fmt(r.psnr), _fmt(r.ssim), r.iterations, r.status])


def write_trace(path, trace: list[dict]) -> None:
    cols: list[str] = []
    for row in trace:
        cols += [k for k in row if k not in cols]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols or ["iter"], lineterminator="\n")
        wr.writeheader()
        wr.writerows(trace)


def manifest_from_file(path) -> ExperimentManifest:
    return ExperimentManifest.model_validate(json.loads(Path(path).read_text()))


# ----------------------------------------------------------------------------
# slices

def slice_image(v: ComplexVolume, axis: int, index: int) -> np.ndarray:
    """Magnitude slice scaled by its maximum to 8 bits.

    Rows follow the first remaining axis and columns the second, so an impulse
    at ``(i, j, k)`` cut along axis 2 lands at pixel ``(i, j)``.
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    n = v.dims[axis]
    if not 0 <= index < n:
        raise IndexError(f"slice index {index} outside [0, {n})")
    mag = np.take(v.magnitude(), index, axis=axis)
    peak = float(mag.max())
    if peak <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.clip(np.rint(mag / peak * 255), 0, 255).astype(np.uint8)


def export_slices(v: ComplexVolume, axis: int, index: int, path) -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    write_pgm(path, slice_image(v, axis, index))
    return path
