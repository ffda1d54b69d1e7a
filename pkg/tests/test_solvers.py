import csv
import math

import numpy as np
import pytest

from wcrr3d.solvers import (Objective, SolverConfig, SolverError, condat_tv_reconstruct,
                            fista_minimize, grad3, grad3_adjoint, minres_solve, nmapg_minimize,
                            power_iteration_norm, project_dual, tv_norm)
from wcrr3d.wcrr import WcrrModel


# ---------------------------------------------------------------- oracles

def taut_string(y, lam):
    """Exact solution of min 1/2 ||x - y||^2 + lam sum |x[i+1] - x[i]| (open ends).

    The solution is the derivative of the shortest path through the tube of
    half-width ``lam`` around the cumulative sum, pinned at both ends.
    """
    n = len(y)
    s = np.concatenate([[0.0], np.cumsum(y)])
    lo, hi = s - lam, s + lam
    lo[0] = hi[0] = 0.0
    lo[n] = hi[n] = s[n]
    knots_i, knots_v = [0], [0.0]
    i, p = 0, 0.0
    while i < n:
        smin, kmin, smax, kmax = -math.inf, None, math.inf, None
        nxt = None
        for j in range(i + 1, n + 1):
            sl, su = (lo[j] - p) / (j - i), (hi[j] - p) / (j - i)
            if sl > smax:
                nxt = (kmax, hi[kmax])
                break
            if su < smin:
                nxt = (kmin, lo[kmin])
                break
            if sl > smin:
                smin, kmin = sl, j
            if su < smax:
                smax, kmax = su, j
        if nxt is None:
            nxt = (n, s[n])
        i, p = nxt
        knots_i.append(i)
        knots_v.append(p)
    string = np.interp(np.arange(n + 1), knots_i, knots_v)
    return np.diff(string)


def tv1d_bruteforce_objective(x, y, lam):
    return 0.5 * np.sum((x - y) ** 2) + lam * np.sum(np.abs(np.diff(x)))


# ---------------------------------------------------------------- nmAPG

def quadratic(a, scale=1.0):
    return Objective(lambda x: 0.5 * scale * float(np.sum((x - a) ** 2)),
                     lambda x: scale * (x - a))


def test_nmapg_quadratic_reaches_minimizer():
    a = np.random.default_rng(0).standard_normal(50)
    res = nmapg_minimize(quadratic(a, 3.0), np.zeros(50), SolverConfig(eps=1e-8))
    assert res.converged
    assert np.linalg.norm(res.x - a) <= 1e-6 * np.linalg.norm(a)


def test_nmapg_least_squares_matches_lstsq():
    rng = np.random.default_rng(1)
    M, b = rng.standard_normal((20, 10)), rng.standard_normal(20)
    obj = Objective(lambda x: 0.5 * float(np.sum((M @ x - b) ** 2)), lambda x: M.T @ (M @ x - b))
    res = nmapg_minimize(obj, np.zeros(10), SolverConfig(eps=1e-12, max_iters=5000))
    ref = np.linalg.lstsq(M, b, rcond=None)[0]
    assert np.linalg.norm(res.x - ref) <= 1e-6 * np.linalg.norm(ref)


def test_nmapg_tikhonov_denoise_residual_and_descent():
    y = np.random.default_rng(2).standard_normal((4, 5, 6))
    mu = 0.5
    obj = Objective(lambda x: 0.5 * float(np.sum((x - y) ** 2)) + 0.5 * mu * float(np.sum(x ** 2)),
                    lambda x: x - y + mu * x)
    res = nmapg_minimize(obj, np.zeros_like(y), SolverConfig(eps=1e-9))
    # stationarity of the exact minimizer y / (1 + mu)
    assert np.linalg.norm(res.x * (1 + mu) - y) <= 1e-3 * np.linalg.norm(y)
    assert res.trace[-1]["objective"] <= obj.value(np.zeros_like(y))
    assert res.x.shape == y.shape


def test_nmapg_stops_at_max_iters():
    d = np.logspace(0, 3, 5)
    obj = Objective(lambda x: 0.5 * float(np.sum(d * (x - 1) ** 2)), lambda x: d * (x - 1))
    res = nmapg_minimize(obj, np.zeros(5), SolverConfig(eps=1e-30, max_iters=3))
    assert res.iterations == 3 and not res.converged


def test_nmapg_zero_start_at_minimizer_converges_immediately():
    res = nmapg_minimize(quadratic(np.zeros(4)), np.zeros(4))
    assert res.converged and res.iterations == 1
    assert np.all(res.x == 0)


def test_nmapg_trace_csv(tmp_path):
    a = np.arange(6.0)
    res = nmapg_minimize(quadratic(a), np.zeros(6), SolverConfig(eps=1e-6))
    path = tmp_path / "trace.csv"
    res.write_trace(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iter", "objective", "L_k", "rel_change", "wall_ms"]
    assert len(rows) == res.iterations
    assert [int(r["iter"]) for r in rows] == list(range(1, res.iterations + 1))


def test_nmapg_non_finite_objective_aborts():
    obj = Objective(lambda x: float("nan") if np.any(x != 0) else 1.0, lambda x: np.ones_like(x))
    with pytest.raises(SolverError):
        nmapg_minimize(obj, np.zeros(3))


@pytest.mark.parametrize("kw", [dict(delta=0), dict(eps=-1), dict(L1=0), dict(eta=1), dict(rho=0)])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_nmapg_nonconvex_decreases_energy():
    # double well per coordinate; every accepted iterate stays below the start energy
    def value(x):
        return float(np.sum((x ** 2 - 1) ** 2))

    x0 = np.linspace(-1.8, 1.8, 11)
    res = nmapg_minimize(Objective(value, lambda x: 4 * x * (x ** 2 - 1)), x0,
                         SolverConfig(eps=1e-10, max_iters=2000))
    assert value(res.x) < 1e-8
    assert max(r["objective"] for r in res.trace) <= value(x0)


# ---------------------------------------------------------------- MINRES

def test_minres_identity():
    b = np.random.default_rng(0).standard_normal(7)
    res = minres_solve(lambda v: v, b)
    assert res.converged and res.iterations <= 1
    np.testing.assert_allclose(res.x, b, atol=1e-12)


def test_minres_diagonal():
    d = np.arange(1.0, 6.0)
    b = np.ones(5)
    res = minres_solve(lambda v: d * v, b, tol=1e-12)
    np.testing.assert_allclose(res.x, 1 / d, rtol=1e-10)
    assert res.iterations <= 5


def test_minres_indefinite_matches_dense_solve():
    rng = np.random.default_rng(3)
    Q = np.linalg.qr(rng.standard_normal((30, 30)))[0]
    ev = np.concatenate([rng.uniform(0.5, 3, 15), -rng.uniform(0.5, 3, 15)])
    A = Q @ np.diag(ev) @ Q.T
    b = rng.standard_normal(30)
    res = minres_solve(lambda v: A @ v, b, tol=1e-12, check_symmetry=True)
    ref = np.linalg.solve(A, b)
    assert res.converged
    assert np.linalg.norm(res.x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_minres_residual_estimates_monotone_and_honest():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((25, 25))
    A = M @ M.T + 0.1 * np.eye(25)
    b = rng.standard_normal(25)
    res = minres_solve(lambda v: A @ v, b, tol=1e-10)
    r = np.asarray(res.residuals)
    assert np.all(np.diff(r) <= 1e-12 * r[0])
    assert np.linalg.norm(b - A @ res.x) <= 1e-8 * np.linalg.norm(b)


def test_minres_shaped_input_and_warm_start():
    b = np.arange(1.0, 9.0).reshape(2, 2, 2)
    res = minres_solve(lambda v: 2 * v, b, x0=b / 2)
    assert res.x.shape == b.shape and res.iterations == 0
    np.testing.assert_allclose(res.x, b / 2)


def test_minres_rejects_nonsymmetric():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        minres_solve(lambda v: A @ v, np.ones(2), check_symmetry=True)


def test_minres_singular_consistent_flags_no_crash():
    A = np.diag([1.0, 0.0])
    res = minres_solve(lambda v: A @ v, np.array([1.0, 1.0]), max_iters=10)
    assert not res.converged
    assert np.all(np.isfinite(res.x))


# ---------------------------------------------------------------- power iteration

def test_power_diagonal_with_negative_entry():
    d = np.array([3.0, -1.0, 2.0])
    est, v = power_iteration_norm(lambda x: d * x, 3, iters=200)
    assert est == pytest.approx(3.0, rel=1e-8)
    assert abs(abs(v[0]) - 1) < 1e-6


def test_power_dominant_negative_eigenvalue_magnitude():
    d = np.array([-4.0, 1.0, 2.0])
    est, _ = power_iteration_norm(lambda x: d * x, 3, iters=200)
    assert est == pytest.approx(4.0, rel=1e-8)


def test_power_identity_and_zero():
    assert power_iteration_norm(lambda x: x, 10, iters=1)[0] == pytest.approx(1.0)
    assert power_iteration_norm(lambda x: 0 * x, 10)[0] == 0.0


def test_power_bad_iters():
    with pytest.raises(ValueError):
        power_iteration_norm(lambda x: x, 3, iters=0)


def test_power_on_wcrr_hessian_matches_dense_eigenvalue():
    m = WcrrModel.tiny(seed=0)
    dims = (4, 4, 4)
    x = 0.05 * np.random.default_rng(5).standard_normal((2, *dims))
    n = 2 * 64
    H = np.stack([m.hvp(x, 0.03, e.reshape(2, *dims)).ravel() for e in np.eye(n)], axis=1)
    H = 0.5 * (H + H.T)
    ref = np.max(np.abs(np.linalg.eigvalsh(H)))
    est, _ = power_iteration_norm(lambda v: m.hvp(x, 0.03, v.reshape(2, *dims)).ravel(), n,
                                  iters=2000, tol=1e-12)
    assert est == pytest.approx(ref, rel=1e-4)


# ---------------------------------------------------------------- FISTA

def soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0)


def test_fista_identity_prox_is_gradient_descent_fixed_point():
    a = np.array([1.0, -2.0, 3.0])
    res = fista_minimize(lambda x: x - a, lambda v, s: v, np.zeros(3), 1.0, tol=1e-12)
    np.testing.assert_allclose(res.x, a, atol=1e-12)


def test_fista_denoise_is_soft_threshold():
    y = np.array([2.0, -0.3, 0.5, -4.0])
    res = fista_minimize(lambda x: x - y, lambda v, s: soft(v, 0.6 * s), np.zeros(4), 1.0,
                         tol=1e-14)
    np.testing.assert_allclose(res.x, soft(y, 0.6), atol=1e-12)


def test_fista_lasso_matches_long_ista():
    rng = np.random.default_rng(6)
    M, b = rng.standard_normal((15, 10)), rng.standard_normal(15)
    mu = 0.7
    L = np.linalg.norm(M, 2) ** 2

    def obj(x):
        return 0.5 * np.sum((M @ x - b) ** 2) + mu * np.sum(np.abs(x))

    x = np.zeros(10)
    for _ in range(100_000):
        x = soft(x - M.T @ (M @ x - b) / L, mu / L)
    res = fista_minimize(lambda z: M.T @ (M @ z - b), lambda v, s: soft(v, mu * s), np.zeros(10),
                         1 / L, max_iters=20000, tol=1e-12)
    assert abs(obj(res.x) - obj(x)) <= 1e-5 * abs(obj(x))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fista_non_finite_aborts():
    with pytest.raises(SolverError):
        fista_minimize(lambda x: x, lambda v, s: v * np.inf, np.ones(2), 1.0)


# ---------------------------------------------------------------- Condat TV

def _identity_tv(y, lam, **kw):
    return condat_tv_reconstruct(lambda v: v, lambda v: v, y, lam, np.zeros_like(y),
                                 norm_sq=1.0, **kw)


def test_grad3_adjoint_identity():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 5, 3)) + 1j * rng.standard_normal((4, 5, 3))
    p = rng.standard_normal((3, 4, 5, 3)) + 1j * rng.standard_normal((3, 4, 5, 3))
    assert np.vdot(grad3(x), p) == pytest.approx(np.vdot(x, grad3_adjoint(p)), rel=1e-12)


def test_tv_norm_hand_values():
    x = np.zeros((4, 1, 1))
    x[1] = 1.0
    assert tv_norm(x) == pytest.approx(2.0)
    assert tv_norm(np.full((3, 3, 3), 2 + 1j)) == 0.0
    # one jump seen along all three axes groups into a single sqrt(3)
    d = np.zeros((2, 2, 2))
    d[0, 0, 0] = 1.0
    g = grad3(d)[:, 1, 1, 1]
    assert np.all(g == 0)
    assert tv_norm(d) == pytest.approx(math.sqrt(3) + 3.0)


def test_project_dual_scales_into_ball():
    p = np.random.default_rng(8).standard_normal((3, 5, 5, 5)) * 3
    q = project_dual(p, 1.0)
    nrm = np.sqrt(np.sum(np.abs(q) ** 2, axis=0))
    assert np.all(nrm <= 1 + 1e-12)
    inside = np.sqrt(np.sum(p ** 2, axis=0)) <= 1
    np.testing.assert_array_equal(q[:, inside], p[:, inside])


def test_condat_zero_lambda_returns_data():
    y = np.random.default_rng(9).standard_normal((4, 4, 4)) + 0j
    res = _identity_tv(y, 0.0, tol=1e-12, max_iters=50)
    np.testing.assert_allclose(res.x, y, atol=1e-12)


def test_condat_large_lambda_returns_mean():
    rng = np.random.default_rng(10)
    y = rng.standard_normal((4, 4, 4)) + 1j * rng.standard_normal((4, 4, 4))
    res = _identity_tv(y, 1e3, tol=1e-10, max_iters=20000)
    np.testing.assert_allclose(res.x, np.full_like(y, y.mean()), atol=1e-4)


@pytest.mark.parametrize("seed,lam", [(11, 0.3), (12, 1.0), (13, 2.5)])
def test_condat_matches_taut_string_on_mirrored_line(seed, lam):
    # A mirrored signal has a mirrored periodic-TV minimizer, which reduces the
    # periodic problem to the open-ended one solved by the taut string.
    s = np.cumsum(np.random.default_rng(seed).standard_normal(20))
    y = np.concatenate([s, s[::-1]])[:, None, None] + 0j
    ref = taut_string(s, lam)
    res = _identity_tv(y, lam, tol=1e-10, max_iters=200_000)
    got = res.x[:20, 0, 0]
    assert np.max(np.abs(got.imag)) < 1e-12
    assert np.max(np.abs(got.real - ref)) <= 1e-3
    # the oracle is itself optimal: no perturbation does better
    base = tv1d_bruteforce_objective(ref, s, lam)
    rng = np.random.default_rng(seed)
    for _ in range(50):
        assert tv1d_bruteforce_objective(ref + 1e-3 * rng.standard_normal(20), s, lam) >= base


def test_taut_string_edge_cases():
    y = np.array([1.0, 5.0, -2.0])
    np.testing.assert_allclose(taut_string(y, 0.0), y)
    np.testing.assert_allclose(taut_string(y, 100.0), np.full(3, y.mean()))


def test_condat_trace_and_non_finite():
    y = np.ones((2, 2, 2)) + 0j
    res = _identity_tv(y, 0.1, tol=1e-6, max_iters=20)
    assert set(res.trace[0]) == {"iter", "objective", "L_k", "rel_change"}
    with pytest.raises(SolverError):
        condat_tv_reconstruct(lambda v: v, lambda v: v, y, 0.1, np.full_like(y, np.nan),
                              norm_sq=1.0)
    with pytest.raises(ValueError):
        condat_tv_reconstruct(lambda v: v, lambda v: v, y, 0.1, y)
