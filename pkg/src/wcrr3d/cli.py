"""Command-line interface.

Every subcommand exits 0 on success. On failure it prints one JSON line
``{"error": <type>, "message": <text>, "command": <name>}`` to stderr and exits 1.
Set ``WCRR3D_NUM_THREADS`` to cap BLAS/FFT worker threads.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from . import io
from .forward import (NoiseModel, generate_trajectory, simulate_acquisition, synth_coils)
from .pipeline import (METHODS, ExperimentManifest, ValidationCase, default_model, export_slices,
                       grid_search, manifest_from_file, run_experiment, run_method, write_trace)
from .volume import (ComplexVolume, EllipsoidPhantom, foreground_mask, generate_phantom, masked_psnr,
                     masked_ssim)

THREADS_ENV = "WCRR3D_NUM_THREADS"


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


class _Group(click.Group):
    """Turns any exception into a machine-readable error line."""

    def invoke(self, ctx):
        limiter = _limit_threads()
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort):
            raise
        except click.ClickException as exc:
            _fail(ctx, type(exc).__name__, exc.format_message(), exc.exit_code)
        except Exception as exc:  # noqa: BLE001
            _fail(ctx, type(exc).__name__, str(exc), 1)
        finally:
            if limiter is not None:
                limiter.unregister()


def _fail(ctx, kind, message, code):
    sub = ctx.invoked_subcommand or (ctx.protected_args[0] if ctx.protected_args else None)
    click.echo(json.dumps({"error": kind, "message": message, "command": sub}), err=True)
    ctx.exit(code or 1)


def _dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.lower().replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3 or min(parts) < 1:
        raise click.BadParameter(f"expected N or NxNxN, got {text!r}")
    return tuple(parts)


@click.group(cls=_Group)
@click.option("-v", "--verbose", count=True, help="Log progress (repeat for debug).")
def main(verbose):
    """Variational reconstruction of 3D complex volumes with a learned WCRR prior."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ----------------------------------------------------------------------------
# data generation

@main.command()
@click.option("--dims", default="32", show_default=True, help="N or NxNxN.")
@click.option("--seed", type=int, default=None, help="Random phantom seed; default head phantom if unset.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def phantom(dims, seed, output):
    """Write an ellipsoid phantom with smooth phase as a CVOL file."""
    spec = EllipsoidPhantom.default() if seed is None else EllipsoidPhantom.random(seed)
    io.write_cvol(output, generate_phantom(spec, _dims(dims)))


@main.command()
@click.option("--kind", type=click.Choice(["radial3d", "random_vds"]), default="radial3d",
              show_default=True)
@click.option("-m", "--samples", type=int, required=True, help="Total number of k-space samples.")
@click.option("--samples-per-spoke", type=int, default=None)
@click.option("--exponent", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def trajectory(kind, samples, samples_per_spoke, exponent, seed, output):
    """Write a k-space trajectory (KTRJ)."""
    traj = generate_trajectory(kind, samples, samples_per_spoke=samples_per_spoke,
                               exponent=exponent, seed=seed)
    io.write_ktrj(output, traj)


@main.command()
@click.option("--dims", default="32", show_default=True)
@click.option("-c", "--count", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def coils(dims, count, seed, output):
    """Write synthetic SSOS-normalized coil maps."""
    io.write_coils(output, synth_coils(_dims(dims), count, seed=seed))


@main.command()
@click.option("--volume", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--coils", "coil_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trajectory", "traj_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--noise", type=float, default=2e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def simulate(volume, coil_path, traj_path, noise, seed, output):
    """Simulate noisy multi-coil measurements (KDAT)."""
    y = simulate_acquisition(io.read_cvol(volume), io.read_coils(coil_path),
                             io.read_ktrj(traj_path), NoiseModel(noise, seed))
    io.write_kdat(output, y)


# ----------------------------------------------------------------------------
# training and denoising

@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of CVOL training volumes.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              help="JSON training config; desk-scale defaults if unset.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--resume", type=click.Path(exists=True, file_okay=False), default=None,
              help="Checkpoint directory to resume from.")
def train(data_dir, config, out_dir, resume):
    """Train a WCRR model on noisy patches; writes a checkpoint and history.csv."""
    from .training import TrainingConfig
    from .training import train as fit
    from .wcrr import load_checkpoint, save_checkpoint

    cfg = (TrainingConfig.model_validate(json.loads(Path(config).read_text()))
           if config else TrainingConfig.desk())
    files = sorted(Path(data_dir).glob("*.cvol"))
    if not files:
        raise click.UsageError(f"no .cvol files in {data_dir}")
    vols = [io.read_cvol(f) for f in files]
    model = opt = None
    start = 0
    if resume:
        model, opt, manifest = load_checkpoint(resume, with_optimizer=True)
        start = int(manifest.get("epoch", 0))
    out = Path(out_dir)
    res = fit(vols, cfg, model, optimizer=opt, start_epoch=start, checkpoint_dir=out)
    save_checkpoint(res.model, out, dims=(cfg.patch_size,) * 3, seed=cfg.seed,
                    optimizer=res.optimizer, extra={"epoch": cfg.epochs,
                                                    "config": cfg.model_dump()})
    res.write_history(out / "history.csv")


@main.command()
@click.option("--input", "inp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--sigma", type=float, required=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def denoise(inp, model_dir, sigma, tol, output):
    """Apply the proximal denoiser of a trained model to a CVOL volume."""
    from .solvers import SolverConfig
    from .training import denoise as prox
    from .wcrr import load_checkpoint

    model = load_checkpoint(model_dir) if model_dir else default_model()
    res = prox(model, io.read_cvol(inp), sigma, SolverConfig(eps=tol))
    io.write_cvol(output, ComplexVolume(res.x))
    click.echo(json.dumps({"iterations": res.iterations, "residual": res.residual}))


# ----------------------------------------------------------------------------
# reconstruction

def _recon_options(f):
    opts = [
        click.option("--kdata", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--trajectory", "traj_path", required=True,
                     type=click.Path(exists=True, dir_okay=False)),
        click.option("--coils", "coil_path", required=True,
                     type=click.Path(exists=True, dir_okay=False)),
        click.option("--lam", type=float, default=None, help="Regularization weight."),
        click.option("--sigma", type=float, default=None, help="WCRR noise-level input."),
        click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False),
                     default=None),
        click.option("-o", "--output", required=True, type=click.Path(dir_okay=False)),
        click.option("--trace", type=click.Path(dir_okay=False), default=None,
                     help="Write the solver trace as CSV."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@main.command()
@click.argument("method", type=click.Choice(list(METHODS)))
@_recon_options
def reconstruct(method, kdata, traj_path, coil_path, lam, sigma, model_dir, output, trace):
    """Reconstruct a volume with METHOD (dcp, tv, wavelet or wcrr)."""
    from .wcrr import load_checkpoint

    params = {}
    if lam is not None:
        params["lam"] = lam
    if sigma is not None:
        if method != "wcrr":
            raise click.UsageError("--sigma only applies to wcrr")
        params["sigma"] = sigma
    model = load_checkpoint(model_dir) if model_dir else None
    res = run_method(method, io.read_kdat(kdata), io.read_coils(coil_path), io.read_ktrj(traj_path),
                     params, model=model)
    io.write_cvol(output, res.volume)
    if trace:
        write_trace(trace, res.trace)


@main.command()
@click.argument("method", type=click.Choice(["tv", "wavelet", "wcrr"]))
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Experiment manifest describing the validation setup.")
@click.option("--cases", type=int, default=2, show_default=True,
              help="Number of held-out random phantoms.")
@click.option("--lams", default="10,100,1000", show_default=True)
@click.option("--sigmas", default="0.03", show_default=True, help="WCRR only.")
@click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="Score table CSV.")
def gridsearch(method, manifest, cases, lams, sigmas, model_dir, output):
    """Grid-search lambda (and sigma for wcrr) on simulated validation phantoms."""
    from .pipeline import PhantomSpec, simulate_case
    from .wcrr import load_checkpoint

    base = manifest_from_file(manifest) if manifest else ExperimentManifest()
    vals = []
    for i in range(cases):
        m = base.model_copy(update={"phantom": PhantomSpec(kind="random", seed=1000 + i),
                                    "seed": base.seed + i})
        gt, cs, traj, y = simulate_case(m)
        vals.append(ValidationCase(gt, y, cs, traj))
    sig = [float(s) for s in sigmas.split(",")] if method == "wcrr" else [None]
    model = load_checkpoint(model_dir) if model_dir else None
    res = grid_search(vals, method, [float(v) for v in lams.split(",")], sig, model=model)
    if output:
        res.write_csv(output)
    click.echo(json.dumps({"best": res.best, "psnr": res.score}))


@main.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON manifest; the default desk-scale experiment if unset.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Override the manifest output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--print-schema", is_flag=True, help="Print the manifest JSON schema and exit.")
def experiment(manifest, out_dir, seed, print_schema):
    """Run the simulate / reconstruct / score pipeline for every listed method."""
    if print_schema:
        click.echo(json.dumps(ExperimentManifest.model_json_schema(), indent=2))
        return
    m = manifest_from_file(manifest) if manifest else ExperimentManifest()
    upd = {}
    if out_dir:
        upd["output_dir"] = out_dir
    if seed is not None:
        upd["seed"] = seed
    m = m.model_copy(update=upd)
    report = run_experiment(m)
    for r in report.rows:
        click.echo(f"{r.method:8s} psnr={r.psnr:.3f} ssim={r.ssim:.4f} "
                   f"iters={r.iterations} time={r.wall_s:.1f}s {r.status}")


@main.command()
@click.option("--reference", required=True, type=click.Path(exists=True, dir_okay=False))
@click.argument("volumes", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
def metrics(reference, volumes):
    """Masked PSNR and SSIM of VOLUMES against a reference CVOL."""
    gt = io.read_cvol(reference)
    mask = foreground_mask(gt)
    click.echo("file,psnr,ssim")
    for p in volumes:
        v = io.read_cvol(p)
        click.echo(f"{p},{masked_psnr(gt, v, mask):.6f},{masked_ssim(gt, v, mask):.6f}")


@main.command("export-slice")
@click.option("--input", "inp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(["x", "y", "z"]), default="z", show_default=True)
@click.option("--index", type=int, default=None, help="Slice index; the center if unset.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def export_slice(inp, axis, index, output):
    """Write a magnitude slice as an 8-bit PGM image."""
    v = io.read_cvol(inp)
    ax = "xyz".index(axis)
    export_slices(v, ax, v.dims[ax] // 2 if index is None else index, output)


if __name__ == "__main__":
    sys.exit(main())
