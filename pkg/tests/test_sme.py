import math

import numpy as np
import pytest

from cavsme import CavityParams, ParameterError
from cavsme import analytic as A
from cavsme.hilbert import FockSpace, coherent_state, fock_state, joint_operators, partial_trace
from cavsme.params import FIG3
from cavsme.sme import (Feedback, NumericalAbort, initial_state, lindblad_evolve, lindblad_step,
                        liouvillian, simulate, step_counting, step_linear, step_nonlinear,
                        step_sse)

P3 = CavityParams(**FIG3)


def _mixed_state(p, seed=0):
    rng = np.random.default_rng(seed)
    d = p.dimension
    G = rng.normal(size=(d, 2)) + 1j * rng.normal(size=(d, 2))
    # keep the top Fock level empty so truncation does not enter
    G.reshape(p.n_atoms + 1, p.n_photons + 1, 2)[:, -1, :] = 0
    rho = G @ G.conj().T
    return rho / np.trace(rho)


def _photon_number(rho, p):
    n = np.tile(np.arange(p.n_photons + 1), p.n_atoms + 1)
    return float(np.real(np.diag(rho) @ n))


@pytest.mark.parametrize("scheme", ["euler", "milstein"])
def test_unmonitored_photon_decays_exponentially(scheme):
    p = CavityParams(eta=0.0, g=0.0, g_s=0.0, beta=0.0, n_atoms=1, n_photons=3, dt=1e-4)
    st = initial_state(p, cavity="fock", m=1)
    rec = simulate(p, "nonlinear", scheme, 2.0, record_stride=20000, state=st)
    assert _photon_number(rec.final_state, p) == pytest.approx(math.exp(-2.0), rel=1e-3)


@pytest.mark.parametrize("scheme", ["euler", "milstein"])
def test_ito_mean_of_single_steps(scheme):
    p = P3.replace(g_s=0.05, dt=1e-3)
    rho = _mixed_state(p)
    ref = lindblad_step(rho, p)
    z = np.random.default_rng(4).normal(size=10000)
    outs = np.stack([step_nonlinear(rho, math.sqrt(p.dt) * x, p, scheme) for x in z])
    mean = outs.mean(0)
    se = np.abs(outs.real.std(0)) + 1j * np.abs(outs.imag.std(0))
    se /= math.sqrt(z.size)
    # the factored Milstein map carries deterministic O(dt^2) products, the
    # size of the local error of the Euler reference step itself
    floor = 1e-13 if scheme == "euler" else p.dt ** 2
    assert np.all(np.abs(mean.real - ref.real) <= 5 * se.real + floor)
    assert np.all(np.abs(mean.imag - ref.imag) <= 5 * se.imag + floor)


def test_no_transition_channel_keeps_ground_state():
    rec = simulate(P3.replace(g_s=0.0, dt=0.01), "nonlinear", "milstein", 20.0, seed=3,
                   record_stride=10)
    assert np.max(np.abs(rec.populations[:, 0] - 1.0)) < 1e-9


@pytest.mark.parametrize("scheme", ["euler", "milstein"])
def test_linear_mean_weight_is_one(scheme):
    p = P3.replace(g_s=0.05, dt=0.01)
    st = initial_state(p, atoms="css")
    W = np.stack([simulate(p, "linear", scheme, 3.0, seed=8, index=i, record_stride=50,
                           state=st, check_invariants=False).weight for i in range(2000)])
    dev = np.abs(W.mean(0) - 1.0)
    se = W.std(0) / math.sqrt(W.shape[0])
    assert np.all(dev[1:] <= 5 * se[1:])


def test_unmonitored_linear_step_is_lindblad_step():
    p = P3.replace(eta=0.0, g_s=0.1, dt=1e-2)
    rho = _mixed_state(p, 1)
    out, w = step_linear(rho, 0.37, p)
    assert np.max(np.abs(out - lindblad_step(rho, p))) < 1e-15
    assert w == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("scheme,tol", [("euler", 0.05), ("milstein", 0.005)])
def test_linear_block_traces_follow_analytic_weights(scheme, tol):
    p = P3.replace(n_atoms=2, dt=1e-3)
    st = initial_state(p, atoms="css")
    n_steps = 5000
    rec = simulate(p, "linear", scheme, 5.0, seed=2, record_stride=1, state=st,
                   qnd_blocks=True)
    t = p.dt * np.arange(n_steps + 1)
    r_t = np.stack([A.signal_rate(A.xi_n(t, n, p), p) for n in range(3)])
    C = A.weights_from_record(rec.dy[1:], p.dt, A.binomial_weights(2), r_t)
    assert rec.weight[-1] == pytest.approx(C.sum(), rel=tol * 0.2)
    assert np.allclose(rec.populations[-1], C / C.sum(), rtol=tol, atol=1e-6)


@pytest.mark.parametrize("scheme", ["euler", "milstein"])
def test_same_record_gives_close_normalised_state(scheme):
    # both equations see the same record; the step maps differ at O(dt^1.5)
    p = P3.replace(g_s=0.05, dt=1e-3)
    st = initial_state(p, atoms="css")
    dw = np.random.default_rng(5).normal(0, math.sqrt(p.dt), 2000)
    nl = simulate(p, "nonlinear", scheme, 2.0, record_stride=1, state=st, noise=dw)
    lin = simulate(p, "linear", scheme, 2.0, record_stride=1, state=st, noise=nl.dy[1:])
    rho = lin.final_state / np.trace(lin.final_state)
    assert np.max(np.abs(rho - nl.final_state)) < 10 * p.dt


def test_sse_vacuum_is_dark():
    p = P3.replace(beta=0.0, g=0.0, g_s=0.0)
    psi = initial_state(p)
    assert np.array_equal(step_sse(psi, 0.3, p), psi.astype(complex))


def test_sse_matches_density_step():
    base = CavityParams(kappa1=1.0, kappa2=0.0, port="reflected", g=0.2, g_s=0.1, beta=0.2,
                        n_atoms=1, n_photons=4)
    ket = initial_state(base, atoms="css", cavity="coherent", xi=0.3 + 0.1j)
    diffs = []
    dts = np.array([1e-2, 1e-3, 1e-4])
    for dt in dts:
        p = base.replace(dt=dt)
        dw = 0.8 * math.sqrt(dt)
        psi = step_sse(ket, dw, p)
        rho = step_nonlinear(np.outer(ket, ket.conj()), dw, p, "milstein")
        diffs.append(np.max(np.abs(np.outer(psi, psi.conj()) - rho)))
    C = np.array(diffs) / dts ** 1.5
    assert C.max() < 5.0
    assert np.polyfit(np.log(dts), np.log(diffs), 1)[0] > 1.35


def test_sse_keeps_empty_cavity_coherent():
    p = P3.replace(n_atoms=0, g=0.0, g_s=0.0, n_photons=6, dt=1e-3)
    rec = simulate(p, "sse", t_end=5.0, seed=1, record_stride=100)
    psi = rec.final_state
    xi = rec.field[-1]
    overlap = abs(np.vdot(coherent_state(xi, FockSpace(6)), psi)) ** 2
    assert overlap == pytest.approx(1.0, abs=1e-9)
    assert xi.real == pytest.approx(A.empty_cavity_amplitude(5.0, 0.0, 0.2, 0.5).real, abs=1e-3)


def test_sse_rejects_lossy_configuration():
    p = CavityParams(kappa1=0.4, kappa2=0.4, kappa_loss=0.2)
    with pytest.raises(ParameterError):
        step_sse(initial_state(p), 0.0, p)
    with pytest.raises(ParameterError):
        simulate(P3.replace(eta=0.5), "sse", t_end=0.1)


def test_counting_on_vacuum_never_clicks():
    p = P3.replace(beta=0.0, g_s=0.0)
    rho = np.outer(initial_state(p), initial_state(p).conj())
    out, clicked = step_counting(rho, p, 1e-300)
    assert not clicked
    assert np.max(np.abs(out - rho)) < 1e-15


def test_click_empties_one_photon_cavity():
    p = P3.replace(g_s=0.0)
    st = initial_state(p, cavity="fock", m=1)
    out, clicked = step_counting(np.outer(st, st.conj()), p, 1e-6)
    assert clicked
    cav = partial_trace(out, (p.n_atoms + 1, p.n_photons + 1), "cavity")
    assert np.allclose(cav, np.diag([1.0, 0, 0, 0]), atol=1e-15)


def test_counting_rate_matches_steady_field():
    p = P3.replace(n_atoms=0, g=0.0, g_s=0.0, n_photons=6, dt=0.01)
    clicks = sum(simulate(p, "counting", t_end=5000.0, seed=4, index=i,
                          record_stride=500000, check_invariants=False).clicks
                 for i in range(4))
    expected = p.eta * p.kappa2 * abs(A.xi_n_steady(0, p)) ** 2 * 4 * 5000.0
    assert abs(clicks - expected) < 5 * math.sqrt(expected)


@pytest.mark.parametrize("equation", ["nonlinear", "linear", "sse", "counting"])
def test_fixed_seed_is_bit_identical(equation):
    p = P3.replace(g_s=0.05, dt=0.01)
    a = simulate(p, equation, t_end=2.0, seed=9, index=3, record_stride=7)
    b = simulate(p, equation, t_end=2.0, seed=9, index=3, record_stride=7)
    for name in ("dy", "populations", "field", "weight"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.final_state, b.final_state)
    if equation != "counting":  # a click-free counting run is deterministic
        c = simulate(p, equation, t_end=2.0, seed=9, index=4, record_stride=7)
        assert not np.array_equal(a.dy, c.dy)


@pytest.mark.parametrize("scheme", ["euler", "milstein"])
def test_normalised_invariants(scheme):
    p = P3.replace(g_s=0.05, dt=0.01)
    rec = simulate(p, "nonlinear", scheme, 40.0, seed=2, record_stride=10,
                   state=initial_state(p, atoms="css"))
    assert np.max(np.abs(rec.weight - 1.0)) < 1e-9
    assert rec.herm_defect.max() < 1e-10
    assert np.all(rec.populations > -1e-8) and np.all(rec.populations < 1 + 1e-8)
    assert np.max(np.abs(rec.populations.sum(1) - 1.0)) < 1e-6
    if scheme == "milstein":
        assert rec.min_eig.min() > -1e-6
        assert rec.positivity_violations == 0
    else:
        # Euler is not positivity preserving; the O(dt) defect is reported
        assert rec.positivity_violations > 0
        assert rec.min_eig.min() > -0.02 * p.dt


def test_euler_positivity_defect_shrinks_with_dt():
    p = P3.replace(g_s=0.05, dt=1e-4)
    rec = simulate(p, "nonlinear", "euler", 2.0, seed=2, record_stride=100,
                   state=initial_state(p, atoms="css"))
    assert rec.min_eig.min() > -1e-6


def test_uncoupled_system_state_is_frozen():
    p = P3.replace(g=0.0, g_s=0.0, dt=1e-3)
    st = initial_state(p, atoms="css", cavity="coherent", xi=0.1)
    rec = simulate(p, "nonlinear", "milstein", 10.0, seed=1, record_stride=10000, state=st)
    dims = (p.n_atoms + 1, p.n_photons + 1)
    before = partial_trace(np.outer(st, st.conj()), dims, "system")
    after = partial_trace(rec.final_state, dims, "system")
    assert np.max(np.abs(after - before)) < 1e-8


def test_non_finite_noise_aborts_with_step_index():
    p = P3.replace(dt=0.01)
    noise = np.zeros(100)
    noise[37] = np.nan
    with pytest.raises(NumericalAbort) as err:
        simulate(p, "nonlinear", "euler", 1.0, noise=noise, index=5)
    assert err.value.step == 37
    assert err.value.trajectory == 5


def test_argument_validation():
    with pytest.raises(ValueError):
        simulate(P3, "heterodyne")
    with pytest.raises(ValueError):
        simulate(P3, record_stride=0)
    with pytest.raises(ValueError):
        simulate(P3, t_end=0.0)
    with pytest.raises(ValueError):
        simulate(P3.replace(dt=0.1), noise=np.zeros(3), t_end=1.0)
    with pytest.raises(ValueError):
        step_nonlinear(np.eye(P3.dimension) / P3.dimension, 0.0, P3, "rk4")
    with pytest.raises(ParameterError):
        simulate(P3, qnd_blocks=True, feedback=Feedback())
    with pytest.raises(ParameterError):
        Feedback(low=0.9, high=0.5)


def test_probe_switch_off_lets_field_ring_down():
    p = P3.replace(n_atoms=0, g=0.0, g_s=0.0, probe_off_time=5.0, dt=1e-3)
    rec = simulate(p, "nonlinear", "milstein", 15.0, seed=0, record_stride=1000)
    i5 = np.searchsorted(rec.t, 5.0)
    assert abs(rec.field[i5]) > 0.25
    assert abs(rec.field[-1]) == pytest.approx(abs(rec.field[i5]) * math.exp(-5.0), rel=1e-2)


def test_lindblad_evolution_matches_small_steps():
    p = P3.replace(g_s=0.2, dt=1e-4)
    rho0 = _mixed_state(p, 3)
    ex = lindblad_evolve(p, rho0, [0.0, 0.5])
    rho = rho0
    for _ in range(5000):
        rho = lindblad_step(rho, p)
    assert np.max(np.abs(ex[1] - rho)) < 1e-4
    L = liouvillian(p)
    # trace preservation: the identity is a left null vector
    eye = np.eye(p.dimension).reshape(-1)
    assert np.max(np.abs(eye @ L)) < 1e-12
    with pytest.raises(ValueError):
        lindblad_evolve(p, rho0, [1.0, 0.5])


@pytest.mark.filterwarnings("ignore:coherent state")
def test_steady_cavity_state_pairs_components_with_fields():
    p = P3.replace(n_atoms=2)
    ket = initial_state(p, atoms="css", cavity="steady")
    ops = joint_operators(p)
    s = p.n_photons + 1
    for n in range(3):
        blk = ket[n * s:(n + 1) * s]
        w = np.vdot(blk, blk).real
        assert w == pytest.approx(0.25 if n != 1 else 0.5)
        a = ops.a[:s, :s]
        assert np.vdot(blk, a @ blk) / w == pytest.approx(A.xi_n_steady(n, p), abs=1e-4)
    with pytest.raises(ParameterError):
        initial_state(p, atoms="fock", n=5)
    with pytest.raises(ParameterError):
        initial_state(p, cavity="thermal")
    assert np.array_equal(initial_state(p, atoms="fock", n=1),
                          np.kron(fock_state(1, 3), fock_state(0, s)))
