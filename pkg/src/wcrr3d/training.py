"""Denoising-task training of the regularizer with implicit differentiation."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .solvers import Objective, SolverConfig, minres_solve, nmapg_minimize, power_iteration_norm
from .volume import ComplexVolume, RotationSet, as_array
from .wcrr import WcrrModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingConfig(BaseModel):
    batch_size: int = Field(12, ge=1)
    epochs: int = Field(500, ge=1)
    patches_per_volume: int = Field(1, ge=1)  # per epoch
    lr: float = Field(1e-2, gt=0)
    lr_decay: float = Field(0.05 ** (1 / 500), gt=0)  # per epoch
    mu: float = Field(1e-6, ge=0)
    penalty_every: int = Field(5, ge=1)
    power_iters: int = Field(50, ge=1, le=50)
    patch_size: int = Field(64, ge=2)
    seed: int = 0
    channels: list[int] = [2, 8, 16, 32]
    kernel_size: int = 3
    rotations: list[list] = Field(default_factory=lambda: RotationSet.axis_quarter_turns().to_list())
    n_knots: int = Field(12, ge=2)
    sigma_min: float = 0.01
    sigma_max: float = 0.1
    beta_init: float = 2.0
    denoise_eps: float = 1e-4
    denoise_max_iters: int = 500
    minres_tol: float = 1e-6
    minres_max_iters: int = 300
    noise_off: bool = False  # condition on knot sigmas but add no noise
    n_jobs: int = 1
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints

    @field_validator("channels")
    @classmethod
    def _two_channel_input(cls, v):
        if len(v) < 2 or v[0] != 2:
            raise ValueError("channel plan must start with 2 input channels")
        return v

    @classmethod
    def desk(cls, **kw) -> "TrainingConfig":
        """Desk-scale defaults: tiny 2-4-8-8 model on 12^3 patches."""
        base = dict(epochs=50, patch_size=12, channels=[2, 4, 8, 8], patches_per_volume=6)
        base.update(kw)
        return cls(**base)

    def steps_per_epoch(self, n_volumes: int) -> int:
        return -(-n_volumes * self.patches_per_volume // self.batch_size)

    def build_model(self) -> WcrrModel:
        return WcrrModel.init(tuple(self.channels), self.kernel_size,
                              RotationSet.from_list(self.rotations), self.n_knots,
                              self.beta_init, self.seed, self.sigma_min, self.sigma_max)


# ----------------------------------------------------------------------------
# corruption and the inner problem

def corrupt(x, sigma: float, seed: int):
    """Add ``sigma`` times i.i.d. standard normal noise to both channels."""
    arr = as_array(x)
    noise = np.random.default_rng(seed).standard_normal(arr.shape)
    out = arr + sigma * noise
    return ComplexVolume(out) if isinstance(x, ComplexVolume) else out


@dataclass
class DenoiseResult:
    x: np.ndarray
    residual: float      # ||x - y + grad R(x)||
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def denoise(model: WcrrModel, y, sigma: float, solver_cfg: SolverConfig | None = None) -> DenoiseResult:
    """Minimize ``1/2 ||x - y||^2 + R_sigma(x)`` from ``x0 = y`` with nmAPG."""
    y = np.asarray(as_array(y), dtype=np.float64)
    cfg = solver_cfg or SolverConfig()

    def value(x):
        return 0.5 * float(np.sum((x - y) ** 2)) + model.value(x, sigma)

    def grad(x):
        return x - y + model.grad(x, sigma)

    res = nmapg_minimize(Objective(value, grad), y, cfg)
    r = float(np.linalg.norm(grad(res.x)))
    if not res.converged:
        log.info("denoiser stopped after %d iterations, residual %.3e", res.iterations, r)
    return DenoiseResult(res.x, r, res.iterations, res.converged, res.trace)


# ----------------------------------------------------------------------------
# implicit gradients

def _neg(grads: dict) -> dict:
    return {k: -v for k, v in grads.items()}


def param_gradient(model: WcrrModel, y, sigma: float, x_hat: np.ndarray, loss_grad: np.ndarray,
                   tol: float = 1e-6, max_iters: int = 300) -> dict[str, np.ndarray]:
    """Loss gradient over raw parameters at a converged denoiser output.

    Solves ``(I + H_R(x_hat)) v = loss_grad`` with MINRES and returns
    ``-d/dtheta <grad_x R_theta(x_hat), v>``.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if not np.any(loss_grad):
        return {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                for k, v in model.get_params().items()}

    def op(v):
        return v + model.hvp(x_hat, sigma, v)

    sol = minres_solve(op, loss_grad, tol=tol, max_iters=max_iters)
    if not sol.converged:
        sol = minres_solve(op, loss_grad, tol=tol, max_iters=4 * max_iters, x0=sol.x)
        if not sol.converged:
            raise TrainingError(f"MINRES did not converge: residual {sol.residuals[-1]:.3e} "
                                f"vs target {tol * np.linalg.norm(loss_grad):.3e}")
    return _neg(model.grad_param_vjp(x_hat, sigma, sol.x))


def hessian_penalty_gradient(model: WcrrModel, x_hat: np.ndarray, sigma: float,
                             power_iters: int = 50, mu: float = 1.0, seed: int = 0):
    """``mu * ||H_R(x_hat)||`` by power iteration and its gradient with the eigenvector fixed."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    shape = x_hat.shape
    est, u = power_iteration_norm(lambda v: model.hvp(x_hat, sigma, v.reshape(shape)),
                                  x_hat.size, power_iters, seed=seed)
    u = u.reshape(shape)
    quad = model.hess_quad(x_hat, sigma, u)
    if quad == 0:
        return 0.0, {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                     for k, v in model.get_params().items()}
    grads = model.grad_param_hess_quad(x_hat, sigma, u)
    sign = np.sign(quad)
    return mu * abs(quad), {k: mu * sign * g for k, g in grads.items()}


# ----------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    m: dict
    s: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        z = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
        return cls(z, {k: v.copy() for k, v in z.items()})


def adabelief_step(state: OptimizerState, params: dict, grads: dict, lr: float) -> dict:
    """One AdaBelief update; moments in ``state`` are updated in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** state.step, 1 - b2 ** state.step
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m[k] = b1 * state.m[k] + (1 - b1) * g
        s = state.s[k] = b2 * state.s[k] + (1 - b2) * (g - m) ** 2
        out[k] = np.asarray(p, dtype=np.float64) - lr * (m / c1) / (np.sqrt(s / c2) + state.eps)
    return out


# ----------------------------------------------------------------------------
# training loop

def _sample_patch(vol: np.ndarray, size: int, rng) -> np.ndarray:
    dims = vol.shape[1:]
    if any(size > n for n in dims):
        raise ValueError(f"patch size {size} exceeds volume {dims}")
    c = [int(rng.integers(0, n - size + 1)) for n in dims]
    return vol[:, c[0]:c[0] + size, c[1]:c[1] + size, c[2]:c[2] + size].copy()


def knot_assignment(knots: np.ndarray, batch: int, rng) -> np.ndarray:
    """Distinct knot noise levels per batch element (cycled when batch > knots)."""
    K = len(knots)
    if batch <= K:
        return knots[rng.permutation(K)[:batch]]
    reps = -(-batch // K)
    return np.concatenate([knots[rng.permutation(K)] for _ in range(reps)])[:batch]


@dataclass
class _Element:
    loss: float
    grads: dict
    penalty: float
    penalty_grads: dict | None
    iterations: int


def _train_element(model: WcrrModel, clean, sigma, noise_seed, cfg: TrainingConfig,
                   with_penalty: bool) -> _Element:
    amp = 0.0 if cfg.noise_off else sigma
    y = corrupt(clean, amp, noise_seed)
    scfg = SolverConfig(eps=cfg.denoise_eps, max_iters=cfg.denoise_max_iters)
    den = denoise(model, y, sigma, scfg)
    diff = den.x - clean
    loss = float(np.sum(diff ** 2))
    grads = param_gradient(model, y, sigma, den.x, 2 * diff, cfg.minres_tol, cfg.minres_max_iters)
    pen, pgrads = 0.0, None
    if with_penalty and cfg.mu > 0:
        pen, pgrads = hessian_penalty_gradient(model, den.x, sigma, cfg.power_iters, cfg.mu,
                                               seed=noise_seed)
    return _Element(loss, grads, pen, pgrads, den.iterations)


def _run_element(args):
    return _train_element(*args)


HISTORY_COLUMNS = ("step", "epoch", "loss", "penalty", "lr", "wall_ms")


@dataclass
class TrainingResult:
    model: WcrrModel
    history: list[dict]
    optimizer: OptimizerState

    def epoch_losses(self) -> list[float]:
        out: dict[int, list] = {}
        for row in self.history:
            out.setdefault(row["epoch"], []).append(row["loss"])
        return [float(np.mean(out[e])) for e in sorted(out)]

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
            wr.writeheader()
            wr.writerows(self.history)


def train(dataset: Sequence, cfg: TrainingConfig, model: WcrrModel | None = None, *,
          optimizer: OptimizerState | None = None, start_epoch: int = 0,
          checkpoint_dir: str | Path | None = None) -> TrainingResult:
    """Fit the regularizer so its proximal denoiser restores noisy patches.

    Each step draws ``batch_size`` patches, gives every element its own knot
    noise level, denoises, and averages implicit-differentiation gradients;
    every ``penalty_every`` steps the Hessian-norm penalty gradient is added.
    """
    vols = [np.asarray(as_array(v), dtype=np.float64) for v in dataset]
    if not vols:
        raise ValueError("empty training set")
    for v in vols:
        if v.ndim != 4 or v.shape[0] != 2 or min(v.shape[1:]) < cfg.patch_size:
            raise ValueError(f"patch size {cfg.patch_size} does not fit volume {v.shape}")
    model = model or cfg.build_model()
    params = model.get_params()
    opt = optimizer or OptimizerState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed + 7919 * start_epoch)
    knots = model.potentials.knots
    history: list[dict] = []
    t0 = time.perf_counter()
    pool = ProcessPoolExecutor(cfg.n_jobs) if cfg.n_jobs > 1 else None
    steps_per_epoch = cfg.steps_per_epoch(len(vols))
    step = start_epoch * steps_per_epoch
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = cfg.lr * cfg.lr_decay ** epoch
            for _ in range(steps_per_epoch):
                sigmas = knot_assignment(knots, cfg.batch_size, rng)
                jobs = []
                penalty_step = (step + 1) % cfg.penalty_every == 0
                for s in sigmas:
                    vol = vols[int(rng.integers(len(vols)))]
                    patch = _sample_patch(vol, cfg.patch_size, rng)
                    jobs.append((model, patch, float(s), int(rng.integers(2 ** 31)), cfg,
                                 penalty_step))
                try:
                    elems = list(pool.map(_run_element, jobs)) if pool else [_run_element(j) for j in jobs]
                except Exception as exc:
                    raise TrainingError(f"epoch {epoch} step {step}: {exc}") from exc
                B = len(elems)
                grads = {k: sum(e.grads[k] for e in elems) / B for k in params}
                penalty = 0.0
                if penalty_step and cfg.mu > 0:
                    penalty = sum(e.penalty for e in elems) / B
                    for k in params:
                        grads[k] = grads[k] + sum(e.penalty_grads[k] for e in elems) / B
                loss = sum(e.loss for e in elems) / B
                params = adabelief_step(opt, params, grads, lr)
                model = model.with_params(params)
                history.append({"step": step, "epoch": epoch, "loss": loss, "penalty": penalty,
                                "lr": lr, "wall_ms": 1e3 * (time.perf_counter() - t0)})
                log.info("epoch %d step %d loss %.5g penalty %.3g", epoch, step, loss, penalty)
                step += 1
            if checkpoint_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                from .wcrr.checkpoint import save_checkpoint

                save_checkpoint(model, Path(checkpoint_dir) / f"epoch{epoch + 1:04d}",
                                dims=(cfg.patch_size,) * 3, seed=cfg.seed, optimizer=opt,
                                extra={"epoch": epoch + 1})
    finally:
        if pool:
            pool.shutdown()
    return TrainingResult(model, history, opt)
