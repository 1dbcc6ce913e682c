import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasesync_se.estimator import (Certificate, EstimationError, EstimatorConfig, RankDeficientError, VoltageState,
                                    angular_error_deg, certify, diagnostics, estimate, gn_step, linearize, proj,
                                    rotate_to_reference, spectral_init, weighted_residual_matrix)
from phasesync_se.harness import grid_search_3bus
from phasesync_se.hbuilder import assemble
from phasesync_se.measurement import (Kind, Measurement, MeasurementPlan, MeasurementSet, cost, hermitian_A,
                                      scalar_measurements, simulate)
from phasesync_se.sparsela import cholesky

from conftest import fd_jacobian, random_state


def complex_vectors(n):
    f = st.floats(-1e3, 1e3, allow_nan=False)
    return st.lists(st.tuples(f, f), min_size=n, max_size=n).map(lambda p: np.array([a + 1j * b for a, b in p]))


# --------------------------------------------------------------------------- proj / init

@settings(max_examples=50, deadline=None)
@given(v=complex_vectors(6), c=st.floats(1e-3, 1e3), phi=st.floats(-np.pi, np.pi))
def test_proj_scale_invariant(v, c, phi):
    a, b = proj(v), proj(c * np.exp(1j * phi) * v)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)
    big = np.abs(v) > 1e-6
    np.testing.assert_allclose(b[big], np.exp(1j * phi) * a[big], atol=1e-9)


def test_proj_zero_maps_to_one():
    np.testing.assert_array_equal(proj(np.array([0.0, 1e-20 + 0j, -2.0])), [1, 1, -1])


def test_rotate_to_reference():
    x = np.exp(1j * np.array([0.3, 1.0, -2.0]))
    y = rotate_to_reference(x, 1)
    assert y[1] == pytest.approx(1.0)
    assert np.angle(y[0]) == pytest.approx(0.3 - 1.0)


@pytest.mark.parametrize("net_name", ["net5", "net10"])
def test_spectral_init_zero_noise(net_name, request):
    net = request.getfixturevalue(net_name)
    v = random_state(net.n, np.random.default_rng(1))
    ms = simulate(net, v, MeasurementPlan.bus(), 0.0, 0)
    x0 = spectral_init(assemble(net, np.abs(v), ms))
    assert np.max(np.abs(np.angle(x0 * np.exp(-1j * np.angle(v))))) <= 1e-6


def test_spectral_init_pegase_zero_noise(pegase, pegase_v):
    ms = simulate(pegase, pegase_v, MeasurementPlan.bus(), 0.0, 0)
    x0 = spectral_init(assemble(pegase, np.abs(pegase_v), ms))
    assert angular_error_deg(np.angle(x0), np.angle(pegase_v)) <= 1e-4


def test_spectral_init_seed_and_phase_invariance(net10):
    v = random_state(10, np.random.default_rng(2))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.02, 5)
    prob = assemble(net10, np.abs(v), ms)
    a, b = spectral_init(prob, seed=0), spectral_init(prob, seed=123)
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert a[0] == pytest.approx(1.0, abs=1e-15)


def test_spectral_init_naive_bound(net10):
    v = random_state(10, np.random.default_rng(3))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.05, 6)
    prob = assemble(net10, np.abs(v), ms)
    x0, eig = spectral_init(prob, return_eig=True)
    lam = np.linalg.eigvalsh(prob.H.toarray())[0]
    assert eig.rayleigh == pytest.approx(lam, rel=1e-8, abs=1e-12)
    assert prob.value(x0) >= 10 * lam - 1e-9


# --------------------------------------------------------------------------- Gauss-Newton

def test_voltage_state_invariants():
    s = VoltageState(np.array([1.0, 0.9]), np.array([0.5, 0.2]), reference=0)
    assert s.theta[0] == 0 and s.theta[1] == pytest.approx(-0.3)
    np.testing.assert_allclose(np.abs(s.x), 1.0)
    with pytest.raises(ValueError):
        VoltageState(np.array([1.0, 0.0]), np.zeros(2))
    with pytest.raises(ValueError):
        VoltageState(np.array([1.0, np.nan]), np.zeros(2))


@pytest.mark.parametrize("mode", ["angles", "full"])
def test_gn_fixed_point(net10, mode):
    v = random_state(10, np.random.default_rng(4))
    ms = simulate(net10, v, MeasurementPlan.full(), 0.0, 0)
    s = VoltageState.from_voltage(v)
    t = gn_step(net10, ms, s, mode)
    np.testing.assert_allclose(t.theta, s.theta, atol=1e-12)
    np.testing.assert_allclose(t.u, s.u, atol=1e-12)


@pytest.mark.parametrize("plan", ["bus", "all"])
@pytest.mark.parametrize("mode", ["angles", "full"])
def test_jacobian_vs_fd(net5, plan, mode):
    rng = np.random.default_rng(5)
    v = random_state(5, rng)
    ms = simulate(net5, random_state(5, rng), MeasurementPlan.named(plan), 0.1, 1)
    s = VoltageState.from_voltage(v)
    J = linearize(net5, ms, s, mode).J.toarray()
    Jfd = fd_jacobian(net5, ms, s, mode)
    np.testing.assert_allclose(J, Jfd, rtol=1e-6, atol=1e-7 * np.abs(J).max())


def test_jacobian_phasor_rows(net5):
    rng = np.random.default_rng(6)
    v = random_state(5, rng)
    ms = simulate(net5, v, MeasurementPlan(vm2=True, bus_pq=False, phasor=[1, 3]), 0.1, 2)
    s = VoltageState.from_voltage(random_state(5, rng))
    np.testing.assert_allclose(linearize(net5, ms, s).J.toarray(), fd_jacobian(net5, ms, s), atol=1e-8)


def test_gn_reduces_cost(net10):
    rng = np.random.default_rng(7)
    v = random_state(10, rng, spread_deg=10)
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.01, 3)
    s = VoltageState(np.abs(v), np.angle(v) + np.deg2rad(rng.uniform(-2, 2, 10)))
    t = gn_step(net10, ms, s)
    assert cost(net10, t.v, ms) < cost(net10, s.v, ms)


def test_rank_deficient_single_vm2(net5):
    ms = MeasurementSet(net5, (Measurement(Kind.VM2, 2, 1.1),))
    with pytest.raises(RankDeficientError) as exc:
        gn_step(net5, ms, VoltageState(np.ones(5), np.zeros(5)))
    assert exc.value.smallest_singular_value == 0.0


def test_rank_deficient_reports_singular_value(net5):
    # magnitudes only: angle columns vanish identically
    ms = MeasurementSet(net5, tuple(Measurement(Kind.VM2, i, 1.05) for i in range(5)))
    with pytest.raises(RankDeficientError) as exc:
        gn_step(net5, ms, VoltageState(np.ones(5), np.zeros(5)))
    assert exc.value.smallest_singular_value < 1e-12
    assert "singular value" in str(exc.value)


def test_nonfinite_residual(net5):
    ms = MeasurementSet(net5, (Measurement(Kind.VM2, 0, float("nan")),)
                        + tuple(Measurement(Kind.BUS_PQ, i, 0.1 + 0.1j) for i in range(5)))
    with pytest.raises(EstimationError):
        gn_step(net5, ms, VoltageState(np.ones(5), np.zeros(5)))


def test_gn_bad_mode(net5):
    ms = simulate(net5, np.ones(5), MeasurementPlan.bus(), 0.0, 0)
    with pytest.raises(ValueError):
        gn_step(net5, ms, VoltageState(np.ones(5), np.zeros(5)), "polar")


# --------------------------------------------------------------------------- certificate

def test_certificate_zero_noise(net10):
    v = random_state(10, np.random.default_rng(8))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.0, 0)
    prob = assemble(net10, np.abs(v), ms)
    c = certify(prob, v / np.abs(v))
    assert np.max(np.abs(c.y)) <= 1e-10
    assert abs(c.lb) <= 1e-10
    assert c.delta <= 10 * max(c.eps, 1e-12)


def test_certificate_dual_identity_and_soundness(net10):
    rng = np.random.default_rng(9)
    v = random_state(10, rng)
    ms = simulate(net10, v, MeasurementPlan.full(), 0.05, 1)
    prob = assemble(net10, np.abs(v), ms)
    x = np.exp(1j * rng.uniform(-np.pi, np.pi, 10))
    c = certify(prob, x)
    assert c.y.sum() == pytest.approx(prob.value(x), rel=1e-12)
    assert c.lb <= c.cost_at_x + 1e-12
    # the shifted matrix at mu factors, so H - diag(y) - mu I is PSD
    assert cholesky(prob.H, c.y + c.mu)
    assert c.ratio <= 1.0


def test_certify_rejects_non_unit(net5):
    v = random_state(5, np.random.default_rng(10))
    prob = assemble(net5, np.abs(v), simulate(net5, v, MeasurementPlan.bus(), 0.0, 0))
    with pytest.raises(ValueError):
        certify(prob, v)


def test_certificate_ratio_edge_cases():
    assert Certificate(np.zeros(2), 0.0, 0.0, 0.0, 0.0).ratio == 1.0
    assert Certificate(np.zeros(2), -1.0, -2.0, 2.0, 0.0).ratio == float("-inf")
    assert Certificate(np.zeros(2), 0.0, 1.0, 0.0, 2.0).ratio == 0.5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_lb_never_exceeds_min_over_samples(seed, net5):
    # a lower bound certified at any x bounds the cost at every unit-modulus point
    rng = np.random.default_rng(seed)
    v = random_state(5, rng)
    ms = simulate(net5, v, MeasurementPlan.bus(), 0.2, int(rng.integers(1 << 30)))
    prob = assemble(net5, np.abs(v), ms)
    c = certify(prob, np.exp(1j * rng.uniform(-np.pi, np.pi, 5)))
    X = np.exp(1j * rng.uniform(-np.pi, np.pi, (200, 5)))
    vals = np.real(np.einsum("ki,ij,kj->k", X.conj(), prob.H.toarray(), X))
    assert c.lb <= vals.min() + 1e-9 * max(1.0, vals.min())


def test_three_bus_lb_below_grid_min(three_bus):
    net, ms, u = three_bus
    prob = assemble(net, u, ms)
    best = grid_search_3bus(prob, resolution_deg=0.5)
    x = spectral_init(prob)
    c = certify(prob, x)
    assert c.lb <= best[0] + 1e-9


# --------------------------------------------------------------------------- diagnostics

def test_diagnostics_zero_noise(net10):
    v = random_state(10, np.random.default_rng(11))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.0, 0)
    d = diagnostics(net10, ms, VoltageState.from_voltage(v))
    assert d.sigma <= 1e-12
    assert d.lam > 0 and d.guaranteed


def test_diagnostics_lambda_oracle(net10):
    rng = np.random.default_rng(12)
    v = random_state(10, rng)
    ms = simulate(net10, v, MeasurementPlan.full(), 0.03, 2)
    s = VoltageState.from_voltage(v)
    J = linearize(net10, ms, s).J.toarray()
    d = diagnostics(net10, ms, s)
    assert d.lam == pytest.approx(np.linalg.eigvalsh(J.T @ J)[0], rel=1e-9)


def test_diagnostics_unobservable(net5):
    ms = MeasurementSet(net5, tuple(Measurement(Kind.VM2, i, 1.0) for i in range(5)))
    d = diagnostics(net5, ms, VoltageState(np.ones(5), np.zeros(5)))
    assert d.lam == pytest.approx(0.0, abs=1e-12)
    assert not d.guaranteed


def test_sigma_closed_form(net5):
    rng = np.random.default_rng(13)
    v = random_state(5, rng)
    ms = simulate(net5, v, MeasurementPlan.full(), 0.1, 3)
    M = weighted_residual_matrix(net5, ms, v).toarray()
    ref = np.zeros((5, 5), dtype=complex)
    for kind, idx, part, val, w in scalar_measurements(ms):
        A = hermitian_A(net5, kind, idx, part).toarray()
        ref += w * (np.real(np.vdot(v, A @ v)) - val) * A
    np.testing.assert_allclose(M, ref, atol=1e-12)
    d = diagnostics(net5, ms, VoltageState.from_voltage(v))
    assert d.sigma == pytest.approx(2 * np.linalg.norm(ref, 2), rel=1e-8)


# --------------------------------------------------------------------------- pipeline

def test_estimate_iteration_cost(pegase, pegase_v):
    ms = simulate(pegase, pegase_v, MeasurementPlan.bus(), 0.04, 1)
    rep = estimate(pegase, ms, EstimatorConfig(iterations=1, u0=np.abs(pegase_v), truth=pegase_v))
    assert rep.costs[1] <= rep.costs[0]
    assert 0 < rep.at(0).cert_ratio < rep.at(1).cert_ratio
    assert rep.at(1).cert_ratio > 0.9999
    assert rep.at(1).ang_err_deg < rep.at(0).ang_err_deg


def test_estimate_report_schema(net10):
    v = random_state(10, np.random.default_rng(14))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.01, 4)
    rep = estimate(net10, ms, EstimatorConfig(iterations=3, certify=[0, 2], truth=v, diagnostics=True))
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) == {"iterations", "diagnostics", "timing_ms", "converged"}
    it0 = d["iterations"][0]
    assert {"theta_deg", "u", "cost", "ps_cost", "lb", "cert_ratio", "delta", "ang_err_deg"} <= set(it0)
    assert it0["theta_deg"][0] == 0.0 and len(it0["u"]) == 10
    assert d["iterations"][1]["cert_ratio"] is None
    assert set(d["diagnostics"]) == {"lambda", "sigma", "guaranteed", "converged", "spectral_gap"}
    assert d["diagnostics"]["spectral_gap"] > 0
    assert {"init", "cert", "per_it"} <= set(d["timing_ms"])


def test_estimate_stop_early_carry_forward(net10):
    v = random_state(10, np.random.default_rng(15))
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.0, 0)
    rep = estimate(net10, ms, EstimatorConfig(iterations=10, u0=np.abs(v)))
    assert rep.converged and len(rep.iterations) < 11
    assert rep.at(10) is rep.final


def test_estimate_modes(net10):
    v = random_state(10, np.random.default_rng(16), spread_deg=5)
    ms = simulate(net10, v, MeasurementPlan.bus(), 0.0, 0)
    for init in ("cold", "file"):
        rep = estimate(net10, ms, EstimatorConfig(init=init, theta0=np.angle(v), u0=np.abs(v), truth=v,
                                                  iterations=20, certify=False))
        assert rep.final.ang_err_deg < 1e-6
    with pytest.raises(ValueError):
        estimate(net10, ms, EstimatorConfig(init="file"))
    with pytest.raises(ValueError):
        estimate(net10, ms, EstimatorConfig(init="random"))


def test_estimate_full_mode_recovers_magnitudes(net10):
    rng = np.random.default_rng(17)
    v = random_state(10, rng, spread_deg=10)
    ms = simulate(net10, v, MeasurementPlan.full(), 0.0, 0, vm_values=(np.abs(v) + 0.01) ** 2)
    rep = estimate(net10, ms, EstimatorConfig(gn_mode="full", iterations=10, truth=v))
    assert np.all(rep.final.u > 0)
    assert rep.final.cost <= rep.costs[0]


def test_angular_error_wrap_and_rotation():
    th = np.array([0.0, np.pi - 0.01, -0.2])
    tr = np.array([0.0, -np.pi + 0.01, -0.2])
    assert angular_error_deg(th, tr) == pytest.approx(np.rad2deg(0.02))
    assert angular_error_deg(th + 0.7, tr) == pytest.approx(np.rad2deg(0.02))
    assert angular_error_deg(th, tr, reference=2) == pytest.approx(np.rad2deg(0.02))
