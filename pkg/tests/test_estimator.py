import math

import numpy as np
import pytest

from compest.estimator import (
    EstimateReport,
    GridFunction,
    LatticeEngine,
    ResolutionError,
    SelectionConfig,
    SolverError,
    Triplet,
    convolved_weight,
    delta_estimate,
    discretize,
    eval_cubes,
    global_estimate,
    linear_estimate,
    make_grid,
    oracle_orientation,
    select_point,
    smooth_at,
    solve_lambda,
    sphere_net,
    threshold,
    threshold_constant,
    truncation_level,
)
from compest.field import make_composite, synthesize
from compest.harness import lattice_layout
from compest.weights import build_weight
from compest.zones import DomainError, SmoothnessPair, noise_scale, phi

P1 = SmoothnessPair(1, 2)


def constant(c, dim=2):
    return make_composite(
        "custom",
        {"f": lambda u: np.full_like(u, c, dtype=float), "G": lambda t: t[:, 0], "gamma": 1, "beta": 2, "L1": 1, "L2": 1, "dim": dim},
    )


def linear(w):
    w = np.asarray(w, float)
    return make_composite("custom", {"f": lambda u: u, "G": lambda t: t @ w, "gamma": 1, "beta": 2, "L1": 1, "L2": 1, "dim": len(w)})


def unit(angle):
    return np.array([np.cos(angle), np.sin(angle)])


def test_threshold_constants():
    assert threshold_constant(2, 2) == pytest.approx(6.898979, abs=1e-6)
    assert threshold_constant(1, 2) == pytest.approx(6.472136, abs=1e-6)
    assert SelectionConfig(p=1).threshold_constant(2) == threshold_constant(1, 2)


def test_threshold_asymmetry_and_monotonicity():
    J_rect = Triplet.build(P1, unit(0), 0.05)
    J_two = Triplet.build(SmoothnessPair(1.9, 2.0), unit(0), 0.05)
    t1 = threshold(J_rect, J_rect, 0.05, 2, 2)
    t2 = threshold(J_rect, J_two, 0.05, 2, 2)
    assert t2 > t1  # only the second weight's L1 norm changed
    assert t2 == pytest.approx(threshold_constant(2, 2) * (1 + 3) * J_rect.l2 * noise_scale(0.05))
    assert threshold(J_two, J_rect, 0.05, 2, 2) != t2


def test_solve_lambda_closed_form():
    lam = solve_lambda(P1, 0.01)
    closed = (noise_scale(0.01) / 2) ** (4 / 7)
    assert lam == pytest.approx(closed, rel=1e-9)
    assert lam == pytest.approx(0.0749246, abs=1e-7)
    resid = abs(lam - noise_scale(0.01) * build_weight(P1, lam).l2)
    assert resid <= 1e-9 * lam


@pytest.mark.parametrize("A", [SmoothnessPair(1.3, 2.0), SmoothnessPair(1.6, 1.9), SmoothnessPair(0.6, 0.8), SmoothnessPair(1.6, 1.9, 3)])
def test_solve_lambda_residual_other_zones(A):
    lam = solve_lambda(A, 0.02, C1=0.5)
    resid = abs(0.5 * lam - noise_scale(0.02) * build_weight(A, lam).l2)
    assert resid <= 1e-9 * 0.5 * lam


def test_lambda_tracks_rate():
    ratios = [solve_lambda(P1, e) / phi(e, P1) for e in (0.1, 0.05, 0.02, 0.01)]
    assert 0.3 < min(ratios) and max(ratios) < 3


def test_solve_lambda_errors():
    with pytest.raises(DomainError):
        solve_lambda(P1, 0.5)
    with pytest.raises(SolverError):
        solve_lambda(P1, 0.3, C1=1e-3)
    # the recursion weight for this pair keeps ||K||_2 above 100 for every lam,
    # so the balance equation has no root at this noise level
    with pytest.raises(SolverError):
        solve_lambda(SmoothnessPair(1.5, 1.99), 0.02)


@pytest.mark.parametrize("N", [4, 16, 64])
def test_sphere_net_d2(N):
    net = sphere_net(2, N)
    np.testing.assert_array_equal(net[0], [1.0, 0.0])
    np.testing.assert_allclose(np.linalg.norm(net.points, axis=1), 1, atol=1e-12)
    assert net.covering_radius <= math.pi / N + 1e-12
    q = unit(np.random.default_rng(0).uniform(0, 2 * np.pi, 5000)).T
    dist = np.sqrt(np.maximum(2 - 2 * (q @ net.points.T).max(axis=1), 0))
    assert dist.max() <= net.covering_radius + 1e-12


@pytest.mark.parametrize("d", [3, 4])
def test_sphere_net_higher_dims(d):
    net = sphere_net(d, 50)
    assert len(net) == 50
    assert net[0][0] == 1.0 and np.all(net[0][1:] == 0)
    np.testing.assert_allclose(np.linalg.norm(net.points, axis=1), 1, atol=1e-12)
    assert 0 < net.covering_radius < 1.5


def test_discretize_resolution_guard():
    w = Triplet.build(P1, unit(0.2), 0.05).weight
    with pytest.raises(ResolutionError):
        discretize(w, 0.05)
    k = discretize(w, 0.005, offset=np.array([0.001, -0.002]))
    assert k.sum() * 0.005**2 == pytest.approx(1.0, abs=1e-12)


def test_convolved_weight_mass_and_commutativity():
    A = SmoothnessPair(1.9, 2.0)
    J1, J2 = Triplet.build(A, unit(0.3), 0.1), Triplet.build(A, unit(1.7), 0.1)
    step = build_weight(A, 0.1).widths.min() / 4
    a, b = convolved_weight(J1, J2, step), convolved_weight(J2, J1, step)
    assert a.mass == pytest.approx(1.0, abs=1e-6)
    assert (a - b).l2() <= 1e-8 * a.l2()
    k1 = GridFunction(discretize(J1.weight, step), step)
    assert (a - k1).l2() <= (J1.l1 + J2.l1) * J1.l2


def _room_field(g, eps, lam, A=P1, seed=0, noiseless=False, cap=160):
    lay = lattice_layout([build_weight(A, lam)], cap)
    return synthesize(g, eps, lay.a, lay.cells, seed, dim=A.dim, noiseless=noiseless)


def test_constant_signal_is_reproduced():
    lam = 0.2
    fld = _room_field(constant(0.7), 0.05, lam, noiseless=True)
    J1, J2 = Triplet.build(P1, unit(0.4), lam), Triplet.build(P1, unit(2.0), lam)
    x = np.array([0.13, -0.41])
    assert linear_estimate(J1, x, fld) == pytest.approx(0.7, rel=1e-12)
    assert abs(delta_estimate(J1, J2, x, fld)) < 1e-12


def test_linear_signal_has_no_delta_bias():
    lam = 0.2
    fld = _room_field(linear([0.3, -0.2]), 0.05, lam, noiseless=True)
    J1, J2 = Triplet.build(P1, unit(0.0), lam), Triplet.build(P1, unit(np.pi / 2), lam)
    x = np.array([0.25, 0.5])  # on a cell centre, so the lattice weights are symmetric
    assert abs(delta_estimate(J1, J2, x, fld)) < 1e-12
    assert linear_estimate(J1, x, fld) == pytest.approx(0.3 * 0.25 - 0.2 * 0.5, abs=1e-12)


def test_support_must_fit_domain():
    fld = synthesize(constant(0.0), 0.05, 1.1, 128, 0)
    with pytest.raises(DomainError):
        linear_estimate(Triplet.build(P1, unit(0), 0.2), np.array([0.9, 0.9]), fld)


def test_noise_only_delta_within_threshold():
    eps, lam = 0.05, 0.2
    J1, J2 = Triplet.build(P1, unit(0.0), lam), Triplet.build(P1, unit(0.8), lam)
    th = threshold(J1, J2, eps, 2, 2)
    inside = 0
    for seed in range(200):
        fld = _room_field(constant(0.0), eps, lam, seed=seed, cap=96)
        inside += abs(delta_estimate(J1, J2, np.zeros(2), fld)) <= th
    assert inside / 200 >= 1 - eps**4


def test_engine_matches_single_point_and_fft():
    eps = 0.1
    cfg = SelectionConfig(net_size=8)
    lam = solve_lambda(P1, eps)
    grid = make_grid(P1, eps, cfg, lam)
    g = make_composite("quad-ridge")
    fld = _room_field(g, eps, lam, seed=5)
    pts, cells, delta, _ = eval_cubes(fld, None)
    eng = LatticeEngine(grid, fld.h, delta)
    assert eng.n_unique == 4  # opposite directions give the same even kernel
    sel = np.arange(0, len(cells), 37)
    plain, conv = eng.estimates(fld, cells[sel])
    plain_f, conv_f = eng.estimates(fld, cells[sel], method="fft")
    np.testing.assert_allclose(plain_f, plain, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(conv_f, conv, rtol=1e-8, atol=1e-12)
    k = 3
    x = pts[sel[k]]
    for j, J in enumerate(grid[:4]):
        assert plain[k, eng.index[j]] == pytest.approx(linear_estimate(J, x, fld), rel=1e-10)
        assert conv[k, eng.index[j], eng.index[2]] - plain[k, eng.index[j]] == pytest.approx(
            delta_estimate(J, grid[2], x, fld), rel=1e-8, abs=1e-12
        )


def test_selection_fallback_and_threshold_monotonicity():
    eps = 0.1
    cfg = SelectionConfig(net_size=8)
    lam = solve_lambda(P1, eps)
    grid = make_grid(P1, eps, cfg, lam)
    fld = _room_field(make_composite("quad-ridge"), eps, lam, seed=2)
    x = np.array([0.1, 0.3])
    value, diag = select_point(x, fld, grid, cfg, th_scale=0.0)
    assert value == 0.0 and diag.fallback and diag.chosen == -1
    previous = np.zeros(len(grid), dtype=bool)
    for scale in np.geomspace(1e-4, 2, 12):
        _, diag = select_point(x, fld, grid, cfg, th_scale=scale)
        assert np.all(diag.accepted >= previous)
        previous = diag.accepted
    assert previous.all()


def test_global_estimate_properties():
    eps = 0.1
    cfg = SelectionConfig(net_size=8)
    lam = solve_lambda(P1, eps)
    fld = _room_field(make_composite("quad-ridge"), eps, lam, seed=11)
    rep = global_estimate(fld, P1, cfg)
    T = truncation_level(eps)
    assert np.all(np.abs(rep.values) <= T)
    # piecewise constant on cubes
    rng = np.random.default_rng(0)
    k = rng.integers(0, len(rep.points), 50)
    jitter = rng.uniform(-0.49, 0.49, (50, 2)) * rep.cube_side
    np.testing.assert_array_equal(rep.value_at(rep.points[k] + jitter), rep.values[k])
    again = global_estimate(fld, P1, cfg)
    np.testing.assert_array_equal(again.values, rep.values)
    fft = global_estimate(fld, P1, SelectionConfig(net_size=8, method="fft"))
    np.testing.assert_allclose(fft.raw_values, rep.raw_values, rtol=1e-8, atol=1e-12)
    rows = list(rep.csv_rows())
    assert len(rows) == len(rep.values) + 1 and len(rows[0]) == 7


def test_global_estimate_truncates_large_values():
    eps = 0.1
    cfg = SelectionConfig(net_size=4)
    lam = solve_lambda(P1, eps)
    fld = _room_field(constant(1e6), eps, lam, noiseless=True)
    rep = global_estimate(fld, P1, cfg)
    assert np.all(rep.values == truncation_level(eps)) and rep.truncated.all()


def test_truncation_level():
    assert truncation_level(0.2) == 1.0
    assert truncation_level(1e-3) == pytest.approx(math.log(math.log(1e3)))


def test_oracle_orientation():
    theta = unit(1.1)
    g = make_composite("quad-ridge", {"kappa": 0.0, "theta": theta})
    np.testing.assert_allclose(oracle_orientation(g, np.array([0.3, -0.2])), theta, atol=1e-15)
    s = make_composite("sin-ridge", {"gamma": 1.0, "beta": 2.0})
    np.testing.assert_array_equal(oracle_orientation(s, np.array([np.pi / 2, 0.3])), [1.0, 0.0])
    rough = make_composite("quad-ridge", {"gamma": 1.0, "beta": 0.9, "theta": unit(0.5)})
    np.testing.assert_array_equal(oracle_orientation(rough, np.zeros(2)), [1.0, 0.0])


def test_smooth_at_oracles():
    J = Triplet.build(SmoothnessPair(1.9, 2.0), unit(0.6), 0.05)
    assert smooth_at(J, constant(2.5), np.array([0.1, 0.2])) == pytest.approx(2.5, rel=1e-12)
    x = np.array([0.1, 0.2])
    lin = linear([1.0, -3.0])
    assert smooth_at(J, lin, x) == pytest.approx(float(lin(x[None])[0]), abs=1e-12)
    # P1 rectangle against the quadratic t2^2: the bias is the transverse second moment lam / 3
    quad = make_composite("custom", {"f": lambda u: u, "G": lambda t: t[:, 1] ** 2, "gamma": 1, "beta": 2, "L1": 1, "L2": 1, "dim": 2})
    lam = 0.04
    Jr = Triplet.build(P1, unit(0.0), lam)
    assert smooth_at(Jr, quad, np.zeros(2)) == pytest.approx(lam / 3, rel=1e-12)


def test_report_roundtrip_fields():
    rep = EstimateReport(
        points=np.zeros((1, 2)),
        values=np.zeros(1),
        raw_values=np.zeros(1),
        chosen_index=np.zeros(1, int),
        chosen_theta=np.array([[1.0, 0.0]]),
        accepted_count=np.ones(1, int),
        fallback=np.zeros(1, bool),
        truncated=np.zeros(1, bool),
        cube_side=0.1,
        truncation=1.0,
        lam=0.1,
        threshold=1.0,
        covering_radius=0.1,
    )
    d = rep.as_dict()
    assert {"points", "values", "chosen_theta", "accepted_count", "fallback", "truncated"} <= set(d)
