import numpy as np
import pytest

from wcrr3d.solvers import SolverConfig, minres_solve
from wcrr3d.training import (OptimizerState, TrainingConfig, TrainingError, adabelief_step,
                             corrupt, denoise, hessian_penalty_gradient, knot_assignment,
                             param_gradient, train)
from wcrr3d.volume import ComplexVolume, RotationSet
from wcrr3d.wcrr import FilterBank, PotentialParams, WcrrModel, load_checkpoint, save_checkpoint

SIGMA = 0.05


def small_model(seed=0, channels=(2, 2), k=2, beta=4.0, rotations=None):
    rng = np.random.default_rng(seed)
    bank = FilterBank.random(channels, k, seed)
    pots = PotentialParams(np.log(beta), rng.normal(0.3, 0.3, (channels[-1], 12)))
    return WcrrModel(bank, pots, rotations or RotationSet.identity_only())


def smooth_clean(seed, dims=(6, 6, 6)):
    rng = np.random.default_rng(seed)
    g = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"))
    base = np.sin(2 * np.pi * g[0] / dims[0]) * np.cos(2 * np.pi * g[1] / dims[1])
    return np.stack([0.3 * base, 0.1 * np.roll(base, 1, axis=2)]) + 0.02 * rng.standard_normal((2, *dims))


def exact_denoise(model, y, sigma):
    """Tight nmAPG solve polished by Newton steps on the stationarity condition."""
    x = denoise(model, y, sigma, SolverConfig(eps=1e-10, max_iters=5000)).x
    for _ in range(4):
        r = x - y + model.grad(x, sigma)
        step = minres_solve(lambda v: v + model.hvp(x, sigma, v), r, tol=1e-14).x
        x = x - step
    return x


def training_loss(model, y, clean, sigma):
    return float(np.sum((exact_denoise(model, y, sigma) - clean) ** 2))


# ---------------------------------------------------------------- corrupt

def test_corrupt_zero_sigma_identity():
    x = np.random.default_rng(0).standard_normal((2, 4, 4, 4))
    np.testing.assert_array_equal(corrupt(x, 0.0, 3), x)


def test_corrupt_deterministic_and_volume_type():
    x = ComplexVolume(np.zeros((2, 4, 4, 4)))
    a, b = corrupt(x, 0.1, 7), corrupt(x, 0.1, 7)
    assert isinstance(a, ComplexVolume)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, corrupt(x, 0.1, 8).data)


def test_corrupt_noise_statistics():
    y = corrupt(np.zeros((2, 48, 48, 48)), 0.1, 11)
    for ch in y:
        assert abs(ch.std() / 0.1 - 1) < 0.02


# ---------------------------------------------------------------- denoise

def test_denoise_zero_input():
    m = WcrrModel.tiny(0)
    res = denoise(m, np.zeros((2, 6, 6, 6)), SIGMA)
    assert np.all(res.x == 0) and res.residual == 0


def test_denoise_constant_is_fixed_point():
    m = WcrrModel.tiny(0)
    y = np.stack([np.full((6, 6, 6), 0.4), np.full((6, 6, 6), -0.2)])
    res = denoise(m, y, SIGMA)
    np.testing.assert_allclose(res.x, y, atol=1e-12)
    assert res.iterations == 1


def test_denoise_residual_small():
    m = small_model(1, channels=(2, 4, 4), k=3)
    y = corrupt(smooth_clean(1, (8, 8, 8)), SIGMA, 2)
    res = denoise(m, y, SIGMA, SolverConfig(eps=1e-4))
    assert res.residual <= 1e-3 * np.linalg.norm(y)
    # the start x0 = y has zero data term, so its energy is R(y)
    assert res.trace[-1]["objective"] <= m.value(y, SIGMA)


def test_denoise_objective_psd_at_solution():
    m = small_model(2, channels=(2, 4, 4), k=3)
    y = corrupt(smooth_clean(2), SIGMA, 3)
    x = denoise(m, y, SIGMA).x
    rng = np.random.default_rng(4)
    for _ in range(10):
        v = rng.standard_normal(x.shape)
        assert np.vdot(v, v + m.hvp(x, SIGMA, v)) >= -1e-8 * np.vdot(v, v)


# ---------------------------------------------------------------- implicit gradients

def test_param_gradient_zero_loss_gradient():
    m = small_model()
    y = smooth_clean(0)
    g = param_gradient(m, y, SIGMA, y, np.zeros_like(y))
    assert set(g) == set(m.get_params())
    assert all(not np.any(v) for v in g.values())


def test_param_gradient_flat_potentials_vanish():
    m = small_model(beta=1.0)
    clean = smooth_clean(3)
    y = corrupt(clean, SIGMA, 5)
    x = denoise(m, y, SIGMA).x
    np.testing.assert_array_equal(x, y)
    g = param_gradient(m, y, SIGMA, x, 2 * (x - clean))
    for k, v in g.items():
        if k != "b":
            assert np.max(np.abs(v)) == 0, k


def test_param_gradient_matches_end_to_end_finite_differences():
    m = small_model(5)
    clean = smooth_clean(5)
    y = corrupt(clean, SIGMA, 6)
    x = exact_denoise(m, y, SIGMA)
    g = param_gradient(m, y, SIGMA, x, 2 * (x - clean), tol=1e-12)
    params = m.get_params()
    flat = [(k, idx) for k, v in params.items() for idx in np.ndindex(np.shape(v))]
    rng = np.random.default_rng(7)
    picks = [flat[i] for i in rng.choice(len(flat), 10, replace=False)]
    h = 1e-5
    for key, idx in picks:
        vals = []
        for s in (1, -1):
            p = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            p[key][idx] += s * h
            vals.append(training_loss(m.with_params(p), y, clean, SIGMA))
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(np.asarray(g[key])[idx])
        assert abs(an - fd) <= 1e-3 * max(abs(fd), 1e-6), (key, idx, an, fd)


def test_knot_shift_matches_alpha_scaling():
    # shifting every knot by ln s multiplies all alphas by s; at s = 2 the
    # derivative in s equals the summed knot gradient divided by 2
    base = small_model(8)
    clean = smooth_clean(8)
    y = corrupt(clean, SIGMA, 9)

    def shifted(s):
        p = base.get_params()
        p["c"] = p["c"] + np.log(s)
        return base.with_params(p)

    m2 = shifted(2.0)
    x = exact_denoise(m2, y, SIGMA)
    gc = param_gradient(m2, y, SIGMA, x, 2 * (x - clean), tol=1e-12)["c"]
    h = 1e-5
    fd = (training_loss(shifted(2 + h), y, clean, SIGMA)
          - training_loss(shifted(2 - h), y, clean, SIGMA)) / (2 * h)
    assert np.sum(gc) / 2 == pytest.approx(fd, rel=1e-3)


def test_gradient_is_descent_direction():
    m = small_model(10)
    clean = smooth_clean(10)
    y = corrupt(clean, SIGMA, 11)
    x = exact_denoise(m, y, SIGMA)
    g = param_gradient(m, y, SIGMA, x, 2 * (x - clean), tol=1e-12)
    gsq = sum(float(np.sum(v ** 2)) for v in g.values())
    l0 = training_loss(m, y, clean, SIGMA)
    t = 1e-3 * l0 / gsq
    p = {k: v - t * g[k] for k, v in m.get_params().items()}
    l1 = training_loss(m.with_params(p), y, clean, SIGMA)
    assert l1 < l0
    assert l0 - l1 >= 0.5 * t * gsq


def test_param_gradient_raises_when_minres_cannot_converge():
    m = small_model(12)
    y = smooth_clean(12)
    with pytest.raises(TrainingError):
        param_gradient(m, y, SIGMA, y, np.ones_like(y), tol=1e-30, max_iters=1)


# ---------------------------------------------------------------- Hessian penalty

def dense_hessian(m, x, sigma):
    n = x.size
    H = np.stack([m.hvp(x, sigma, e.reshape(x.shape)).ravel() for e in np.eye(n)], axis=1)
    return 0.5 * (H + H.T)


def test_hessian_penalty_matches_dense_eigenvalue():
    m = WcrrModel.tiny(3)
    x = 0.05 * np.random.default_rng(13).standard_normal((2, 4, 4, 4))
    ref = np.max(np.abs(np.linalg.eigvalsh(dense_hessian(m, x, SIGMA))))
    pen, grads = hessian_penalty_gradient(m, x, SIGMA, power_iters=50, mu=1.0)
    assert pen == pytest.approx(ref, rel=1e-3)
    assert set(grads) == set(m.get_params())


def test_hessian_penalty_flat_potentials_zero():
    m = small_model(beta=1.0)
    pen, grads = hessian_penalty_gradient(m, smooth_clean(0), SIGMA)
    assert pen == 0.0
    assert all(not np.any(v) for v in grads.values())


def test_hessian_penalty_gradient_finite_differences():
    m = small_model(14, channels=(2, 3, 3), k=3)
    x = 0.1 * np.random.default_rng(15).standard_normal((2, 4, 4, 4))
    _, grads = hessian_penalty_gradient(m, x, SIGMA, power_iters=50, mu=1.0)
    params = m.get_params()
    rng = np.random.default_rng(16)
    h = 1e-5
    for key in ("b", "c", "kernel0", "kernel1"):
        idx = tuple(rng.integers(0, n) for n in np.shape(params[key]))
        vals = []
        for s in (1, -1):
            p = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            p[key][idx] += s * h
            vals.append(hessian_penalty_gradient(m.with_params(p), x, SIGMA, 50, 1.0)[0])
        fd = (vals[0] - vals[1]) / (2 * h)
        an = float(np.asarray(grads[key])[idx])
        assert abs(an - fd) <= 5e-2 * max(abs(fd), 1e-8), (key, an, fd)


# ---------------------------------------------------------------- AdaBelief

def test_adabelief_zero_gradient_is_identity():
    p = {"a": np.array([1.0, -2.0]), "b": np.array(0.5)}
    st = OptimizerState.zeros_like(p)
    out = adabelief_step(st, p, {k: np.zeros_like(v) for k, v in p.items()}, 0.1)
    for k in p:
        np.testing.assert_array_equal(out[k], p[k])


def test_adabelief_one_step_hand_value():
    p = {"w": np.array(0.0)}
    st = OptimizerState.zeros_like(p)
    out = adabelief_step(st, p, {"w": np.array(1.0)}, 0.1)
    # m = 0.1, s = 0.001 * 0.81; bias-corrected 1 and 0.81
    assert st.m["w"] == pytest.approx(0.1)
    assert st.s["w"] == pytest.approx(0.00081)
    assert float(out["w"]) == pytest.approx(-0.1 / 0.9, rel=1e-12)


def test_adabelief_constant_gradient_monotone():
    p = {"w": np.array(0.0)}
    st = OptimizerState.zeros_like(p)
    vals = [0.0]
    for _ in range(100):
        p = adabelief_step(st, p, {"w": np.array(-0.3)}, 1e-3)
        vals.append(float(p["w"]))
    assert np.all(np.diff(vals) > 0)
    assert np.all(st.s["w"] >= 0)


# ---------------------------------------------------------------- training loop

@pytest.mark.parametrize("batch", [1, 5, 12])
def test_knot_assignment_distinct(batch):
    knots = np.linspace(0.01, 0.1, 12)
    got = knot_assignment(knots, batch, np.random.default_rng(0))
    assert len(got) == batch and len(set(got)) == batch
    assert set(got) <= set(knots)


def test_knot_assignment_cycles_when_batch_exceeds_knots():
    knots = np.linspace(0.01, 0.1, 12)
    got = knot_assignment(knots, 30, np.random.default_rng(0))
    _, counts = np.unique(got, return_counts=True)
    assert len(got) == 30 and counts.max() <= 3 and len(counts) == 12


def _loop_config(**kw):
    base = dict(epochs=2, batch_size=2, patch_size=6, channels=[2, 2, 2], patches_per_volume=1,
                rotations=RotationSet.identity_only().to_list(), seed=3, penalty_every=2, mu=1e-3)
    base.update(kw)
    return TrainingConfig(**base)


def _volumes():
    return [smooth_clean(s, (8, 8, 8)) for s in range(2)]


def test_training_is_deterministic():
    cfg = _loop_config()
    a, b = train(_volumes(), cfg), train(_volumes(), cfg)
    strip = [{k: v for k, v in r.items() if k != "wall_ms"} for r in a.history]
    assert strip == [{k: v for k, v in r.items() if k != "wall_ms"} for r in b.history]
    assert len(a.history) == cfg.epochs * cfg.steps_per_epoch(2)
    assert any(r["penalty"] > 0 for r in a.history)
    for k, v in a.model.get_params().items():
        np.testing.assert_array_equal(v, b.model.get_params()[k])


def test_training_without_noise_starts_near_zero_loss():
    quiet = train(_volumes(), _loop_config(noise_off=True, epochs=1))
    noisy = train(_volumes(), _loop_config(epochs=1))
    energy = min(float(np.sum(v ** 2)) for v in _volumes()) * (6 / 8) ** 3
    assert quiet.history[0]["loss"] < 1e-2 * energy
    assert quiet.history[0]["loss"] < 0.1 * noisy.history[0]["loss"]
    cfg = _loop_config()
    start = cfg.build_model().get_params()
    # the first AdaBelief step moves each parameter by lr / 0.9, later ones by less here
    for k, v in quiet.model.get_params().items():
        assert np.max(np.abs(v - start[k])) <= cfg.lr / 0.9 * len(quiet.history) * (1 + 1e-9)


def test_training_rejects_empty_dataset_and_bad_patch():
    with pytest.raises(ValueError):
        train([], _loop_config())
    with pytest.raises(ValueError, match="patch size"):
        train(_volumes(), _loop_config(patch_size=9))


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(channels=[3, 4])
    with pytest.raises(ValueError):
        TrainingConfig(lr=0)
    with pytest.raises(ValueError):
        TrainingConfig(power_iters=51)
    assert TrainingConfig(batch_size=12, patches_per_volume=6).steps_per_epoch(8) == 4


def test_checkpoint_round_trip(tmp_path):
    res = train(_volumes(), _loop_config(epochs=1))
    save_checkpoint(res.model, tmp_path / "ck", dims=(6, 6, 6), seed=3, optimizer=res.optimizer)
    model, opt, manifest = load_checkpoint(tmp_path / "ck", with_optimizer=True)
    for k, v in res.model.get_params().items():
        np.testing.assert_allclose(model.get_params()[k], v, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(opt.m[k], res.optimizer.m[k], rtol=1e-6, atol=1e-12)
    assert opt.step == res.optimizer.step
    assert manifest["norm_estimate"] == pytest.approx(res.model.norm((6, 6, 6)), rel=1e-5)
    plain = load_checkpoint(tmp_path / "ck")
    assert isinstance(plain, WcrrModel)
