"""Conditioned evolution of the probed cavity: steppers and trajectory driver.

Four unravelings are supported:

``nonlinear``
    normalised homodyne master equation driven by the innovation ``dW``;
    ``euler`` or ``milstein``.
``linear``
    unnormalised equation driven by the record ``dy``; the trace carries the
    likelihood of the record.  ``sampling="reference"`` draws ``dy`` from
    N(0, dt); ``"physical"`` draws it from its predictive density, which
    gives records with their physical frequencies.  For Milstein that density
    is the N(0, dt) density times the step's trace factor, sampled exactly, so
    the conditional populations are martingales at any ``dt``; Euler uses
    N(s dt, dt) with ``s`` the current mean signal.
``sse``
    stochastic Schroedinger equation for lossless, perfectly detected
    configurations.
``counting``
    photon counting at the detected port.

The measured jump operator is ``c = c0 a`` with
``c0 = -1j exp(-1j phi) sqrt(eta kappa_det)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _kernels as K
from .analytic import xi_n_steady
from .hilbert import (VARIANTS, coherent_state, fock_state, joint_operators,
                      spin_coherent_amplitudes)
from .params import CavityParams, ParameterError
from .rng import NoiseStream, trajectory_key

EQUATIONS = ("nonlinear", "linear", "sse", "counting")
SCHEMES = ("euler", "milstein")
SAMPLINGS = ("reference", "physical")
POSITIVITY_TOL = -1e-6

__all__ = [
    "CavityParams", "NoiseStream", "Model", "Feedback", "TrajectoryRecord", "NumericalAbort",
    "build_model", "initial_state", "step_nonlinear", "step_linear", "step_sse",
    "step_counting", "simulate", "lindblad_step",
]


class NumericalAbort(RuntimeError):
    """A trajectory produced non-finite numbers."""

    def __init__(self, message: str, step: int, trajectory: int | None = None):
        if trajectory is not None:
            message = f"trajectory {trajectory}: {message}"
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


@dataclass(frozen=True)
class Model:
    """Banded operator data consumed by the stepping kernels.

    ``blocks`` is 1 for the full joint space and ``N + 1`` for the
    block-diagonal representation of Dicke-conserving dynamics.
    """

    sa: np.ndarray
    nph: np.ndarray
    h0: np.ndarray
    hs: np.ndarray
    shift: int
    atom: np.ndarray
    top: np.ndarray
    n_levels: int
    blocks: int

    @property
    def dim(self) -> int:
        return self.sa.size


def build_model(params: CavityParams, variant: str = "zeno", qnd_blocks: bool = False) -> Model:
    if variant not in VARIANTS:
        raise ParameterError(f"variant must be one of {VARIANTS}")
    N, Np = params.n_atoms, params.n_photons
    s = Np + 1
    occ = np.arange(N + 1, dtype=float)
    if variant == "shifted":
        occ = occ - 0.5 * N
    m = np.arange(s)
    sa_c = np.where(m < Np, np.sqrt(m + 1.0), 0.0)
    if qnd_blocks:
        if variant == "zeno" and params.g_s != 0.0:
            raise ParameterError("qnd_blocks requires g_s = 0")
        h0 = params.g * occ[:, None] * m[None, :].astype(float)
        return Model(sa=sa_c, nph=m.astype(float), h0=h0, hs=np.zeros(s), shift=1,
                     atom=np.zeros(s, dtype=np.int64), top=(m == Np).astype(float),
                     n_levels=N + 1, blocks=N + 1)
    n_j = np.repeat(np.arange(N + 1), s)
    m_j = np.tile(m, N + 1)
    hs = np.zeros(n_j.size)
    if variant == "zeno":
        hs = np.where(n_j < N, np.sqrt((n_j + 1.0) * (N - n_j)), 0.0)
    return Model(sa=np.tile(sa_c, N + 1), nph=m_j.astype(float),
                 h0=(params.g * occ[n_j] * m_j)[None, :], hs=hs, shift=s,
                 atom=n_j.astype(np.int64), top=(m_j == Np).astype(float),
                 n_levels=N + 1, blocks=1)


@dataclass(frozen=True)
class Feedback:
    """Bang-bang ``g_s`` control with hysteresis on one Dicke population."""

    target: int = 1
    low: float = 0.2
    high: float = 0.8
    g_s_high: float = 0.05
    g_s_low: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.low < self.high < 1.0:
            raise ParameterError("feedback thresholds must satisfy 0 < low < high < 1")

    def as_array(self) -> np.ndarray:
        return np.array([1.0, self.target, self.low, self.high, self.g_s_high, self.g_s_low])


def _atomic_amplitudes(params: CavityParams, atoms: str, n: int) -> np.ndarray:
    N = params.n_atoms
    if atoms == "ground":
        return fock_state(0, N + 1)
    if atoms == "fock":
        if not 0 <= n <= N:
            raise ParameterError(f"Dicke index {n} outside 0..{N}")
        return fock_state(n, N + 1)
    if atoms == "css":
        return spin_coherent_amplitudes(N)
    raise ParameterError(f"unknown atomic state {atoms!r}")


def initial_state(params: CavityParams, atoms: str = "ground", cavity: str = "vacuum",
                  n: int = 0, m: int = 0, xi: complex = 0.0,
                  variant: str = "zeno") -> np.ndarray:
    """Joint ket for a product (or, for ``cavity="steady"``, correlated) state.

    ``atoms``: ``ground`` (|0>), ``fock`` (|n>) or ``css`` (every atom in
    (|f> + |g>)/sqrt 2).  ``cavity``: ``vacuum``, ``fock`` (|m>),
    ``coherent`` (|xi>) or ``steady``, which pairs each Dicke component with
    its steady coherent field, the state reached by probing with the
    detector switched off.
    """
    c = _atomic_amplitudes(params, atoms, n)
    Np = params.n_photons
    from .hilbert import FockSpace
    space = FockSpace(Np)
    if cavity == "steady":
        occ = np.arange(params.n_atoms + 1, dtype=float)
        if variant == "shifted":
            occ -= 0.5 * params.n_atoms
        fields = [coherent_state(complex(x), space) for x in xi_n_steady(occ, params)]
        return np.concatenate([cn * f for cn, f in zip(c, fields)])
    if cavity == "vacuum":
        f = fock_state(0, Np + 1)
    elif cavity == "fock":
        f = fock_state(m, Np + 1)
    elif cavity == "coherent":
        f = coherent_state(xi, space)
    else:
        raise ParameterError(f"unknown cavity state {cavity!r}")
    return np.kron(c, f)


def _density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def _to_blocks(rho: np.ndarray, model: Model) -> np.ndarray:
    rho = _density(rho)
    if model.blocks == 1:
        return np.ascontiguousarray(rho[None, :, :])
    s = model.dim
    r4 = rho.reshape(model.blocks, s, model.blocks, s)
    return np.ascontiguousarray(np.stack([r4[b, :, b, :] for b in range(model.blocks)]))


def _from_blocks(blocks: np.ndarray, model: Model) -> np.ndarray:
    if model.blocks == 1:
        return blocks[0]
    s = model.dim
    nb = model.blocks
    out = np.zeros((nb * s, nb * s), dtype=complex)
    for b in range(nb):
        out[b * s:(b + 1) * s, b * s:(b + 1) * s] = blocks[b]
    return out


def _args(params: CavityParams, model: Model, beta: complex | None = None):
    b = complex(params.beta if beta is None else beta)
    return (model.sa, model.nph, model.h0, model.hs, float(params.g_s), model.shift,
            math.sqrt(params.kappa1), b, float(params.kappa), complex(params.measurement_coefficient))


def step_nonlinear(rho, dW: float, params: CavityParams, scheme: str = "euler",
                   variant: str = "zeno") -> np.ndarray:
    """One step of the normalised homodyne equation.

    Returns the new density matrix (trace one).  ``milstein`` applies the
    positive factored map ``M rho M^dag + dt (kappa - |c0|^2) a rho a^dag``
    to the record ``dy = dW + Tr(c rho + rho c^dag) dt`` and renormalises;
    it agrees with the Milstein step of the linear equation up to O(dt^1.5).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    model = build_model(params, variant)
    out, _ = K.homodyne_step(_to_blocks(rho, model), float(dW), params.dt,
                             0 if scheme == "euler" else 1, *_args(params, model))
    return out[0]


def step_linear(rho, dy: float, params: CavityParams, scheme: str = "euler",
                variant: str = "zeno") -> tuple[np.ndarray, float]:
    """One step of the linear equation; returns ``(rho', Tr rho')``.

    ``milstein`` adds ``B[B[rho]] (dy^2 - dt) / 2`` to the Euler step, so the
    trace is a martingale for ``dy ~ N(0, dt)``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    model = build_model(params, variant)
    out, _ = K.homodyne_step(_to_blocks(rho, model), float(dy), params.dt,
                             2 if scheme == "euler" else 3, *_args(params, model))
    return out[0], float(np.trace(out[0]).real)


def lindblad_step(rho, params: CavityParams, variant: str = "zeno") -> np.ndarray:
    """Deterministic (unconditioned) Euler step."""
    model = build_model(params, variant)
    sa, nph, h0, hs, gs, sh, sk1, beta, kappa, _ = _args(params, model)
    rho = _density(rho)
    return rho + params.dt * K.drift(rho, sa, nph, h0[0], hs, gs, sh, sk1, beta, kappa)


def liouvillian(params: CavityParams, variant: str = "zeno") -> np.ndarray:
    """Dense generator of the unconditioned master equation.

    Acts on ``rho.reshape(-1)`` (row-major), so ``A rho B`` becomes
    ``kron(A, B.T)``.  Includes the coherent drive and all cavity decay.
    """
    ops = joint_operators(params, variant)
    a = ops.a
    ad = ops.adag
    beta = complex(params.beta)
    H = (ops.hamiltonian(params.g_s if variant == "zeno" else 0.0)
         + 1j * math.sqrt(params.kappa1) * (beta * ad - np.conj(beta) * a))
    eye = np.eye(a.shape[0])
    nn = ad @ a
    return (-1j * (np.kron(H, eye) - np.kron(eye, H.T))
            + params.kappa * (np.kron(a, a.conj()) - 0.5 * np.kron(nn, eye)
                              - 0.5 * np.kron(eye, nn.T)))


def lindblad_evolve(params: CavityParams, state, times, variant: str = "zeno") -> np.ndarray:
    """Exact unconditioned states at ``times`` (ascending, from t = 0).

    Uses the matrix exponential of :func:`liouvillian`; ``params.dt`` is
    ignored.  Returns an array of shape (len(times), D, D).
    """
    rho = _density(state)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be ascending and non-negative")
    L = liouvillian(params, variant)
    D = rho.shape[0]
    v = rho.reshape(-1).astype(complex)
    out = np.empty((times.size, D, D), dtype=complex)
    t_prev = 0.0
    cache: dict[float, np.ndarray] = {}
    for i, t in enumerate(times):
        h = round(float(t - t_prev), 12)
        if h > 0:
            if h not in cache:
                cache[h] = expm(L * h)
            v = cache[h] @ v
        out[i] = v.reshape(D, D)
        t_prev = t
    return out


def _sse_channel(params: CavityParams):
    if params.kappa_loss != 0.0 or params.eta != 1.0:
        raise ParameterError("the stochastic Schroedinger equation needs kappa_loss = 0 and eta = 1")
    kd = params.kappa1 + params.kappa2
    ph = -1j * np.exp(-1j * params.phi)
    c0 = ph * math.sqrt(kd)
    w1 = math.sqrt(params.kappa1 / kd)
    w2 = math.sqrt(params.kappa2 / kd)
    c_rec = ph * math.sqrt(params.kappa2 if params.kappa2 > 0 else params.kappa1)
    return complex(c0), w1, w2, complex(c_rec)


def step_sse(psi, dW: float, params: CavityParams, variant: str = "zeno") -> np.ndarray:
    """One Euler step of the stochastic Schroedinger equation (normalised).

    Every output port is detected; ``dW`` is the increment of the combined
    channel ``sqrt(kappa1 + kappa2) a``, which for a single port is that
    port's own noise.
    """
    c0, _, _, _ = _sse_channel(params)
    model = build_model(params, variant)
    psi = np.asarray(psi, dtype=complex).reshape(-1, 1)
    out = K.sse_step(psi, float(dW), params.dt, model.sa, model.nph, model.h0[0], model.hs,
                     float(params.g_s), model.shift, math.sqrt(params.kappa1),
                     complex(params.beta), c0)
    return out[:, 0]


def step_counting(rho, params: CavityParams, noise: NoiseStream | float,
                  variant: str = "zeno") -> tuple[np.ndarray, bool]:
    """One photon-counting step at the detected port.

    ``noise`` is either a :class:`NoiseStream` (one uniform is consumed) or
    a uniform number in (0, 1).
    """
    u = float(noise.uniforms(1)[0]) if isinstance(noise, NoiseStream) else float(noise)
    model = build_model(params, variant)
    sa, nph, h0, hs, gs, sh, sk1, beta, kappa, _ = _args(params, model)
    rate = params.eta * params.kappa_detected
    out, clicked = K.counting_step(_to_blocks(rho, model), u, params.dt, sa, nph, h0, hs, gs,
                                   sh, sk1, beta, kappa, rate)
    return out[0], bool(clicked)


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory sampled every ``stride`` steps.

    ``dy`` holds the record increment accumulated over each recording
    interval (the click count for photon counting); ``y`` is its running
    sum.  ``weight`` is the trace of the unnormalised state (identically one
    for normalised schemes, the state norm for the SSE).
    """

    t: np.ndarray
    dy: np.ndarray
    populations: np.ndarray
    field: np.ndarray
    purity: np.ndarray
    sys_purity: np.ndarray
    weight: np.ndarray
    top_fock: np.ndarray
    g_s: np.ndarray
    herm_defect: np.ndarray
    min_eig: np.ndarray
    final_state: np.ndarray
    equation: str
    scheme: str
    seed: int
    index: int
    meta: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return np.cumsum(self.dy)

    @property
    def re_a(self) -> np.ndarray:
        return self.field.real

    @property
    def im_a(self) -> np.ndarray:
        return self.field.imag

    @property
    def clicks(self) -> int:
        return int(round(self.dy.sum())) if self.equation == "counting" else 0

    @property
    def positivity_violations(self) -> int:
        return int(np.sum(self.min_eig < POSITIVITY_TOL))

    def column(self, name: str) -> np.ndarray:
        if name.startswith("p") and name[1:].isdigit():
            return self.populations[:, int(name[1:])]
        return {"t": self.t, "dy": self.dy, "y": self.y, "re_a": self.re_a, "im_a": self.im_a,
                "purity": self.purity, "sys_purity": self.sys_purity, "weight": self.weight,
                "top_fock": self.top_fock, "g_s": self.g_s, "herm_defect": self.herm_defect,
                "min_eig": self.min_eig}[name]


def _n_steps(t_end: float, dt: float) -> int:
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    return max(1, int(round(t_end / dt)))


def simulate(params: CavityParams, equation: str = "nonlinear", scheme: str = "milstein",
             t_end: float = 1.0, seed: int = 0, record_stride: int = 1, *, index: int = 0,
             variant: str = "zeno", state=None, sampling: str = "reference",
             qnd_blocks: bool = False, feedback: Feedback | None = None,
             noise: np.ndarray | None = None, check_invariants: bool = True) -> TrajectoryRecord:
    """Integrate one trajectory and record observables.

    Parameters
    ----------
    params : CavityParams
        Physical constants including ``dt``.
    equation, scheme : str
        Unraveling and integrator (see module docstring).  The SSE and
        photon counting use Euler steps.
    t_end : float
        Duration; ``round(t_end / dt)`` steps are taken.
    seed, index : int
        Base seed and trajectory index of the counter-based stream.
    record_stride : int
        Record every ``record_stride`` steps.
    variant : {"dicke", "shifted", "zeno"}
        Hamiltonian.
    state : array, optional
        Initial ket or density; default ``|0>|vac>``.
    sampling : {"reference", "physical"}
        Measure of the record for the linear equation.
    qnd_blocks : bool
        Keep only the Dicke-diagonal blocks (requires ``g_s = 0``).
    feedback : Feedback, optional
        Switch ``g_s`` on the fly.
    noise : array, optional
        Innovation increments (record increments for the linear equation)
        replacing the internal stream, one per step.
    check_invariants : bool
        Compute Hermiticity defect and minimum eigenvalue at record points.

    Raises
    ------
    NumericalAbort
        On non-finite state entries, with the failing step index.
    """
    if equation not in EQUATIONS:
        raise ValueError(f"equation must be one of {EQUATIONS}")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if sampling not in SAMPLINGS:
        raise ValueError(f"sampling must be one of {SAMPLINGS}")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    n_steps = _n_steps(t_end, params.dt)
    if state is None:
        state = initial_state(params)
    key = trajectory_key(seed, index)
    dws = np.zeros(0) if noise is None else np.asarray(noise, dtype=float)
    if noise is not None and dws.size != n_steps:
        raise ValueError(f"noise has {dws.size} increments, need {n_steps}")
    switch = n_steps
    if params.probe_off_time is not None:
        switch = min(n_steps, int(math.ceil(params.probe_off_time / params.dt - 1e-9)))
    betas = np.array([complex(params.beta), 0j])
    fb = np.zeros(6) if feedback is None else feedback.as_array()
    if feedback is not None and qnd_blocks:
        raise ParameterError("feedback drives g_s and cannot use qnd_blocks")
    times = params.dt * record_stride * np.arange(n_steps // record_stride + 1)

    if equation == "sse":
        if feedback is not None:
            raise ParameterError("feedback is only available for density-matrix equations")
        c0, w1, w2, c_rec = _sse_channel(params)
        model = build_model(params, variant)
        psi = np.asarray(state, dtype=complex)
        if psi.ndim != 1:
            raise ParameterError("the SSE needs a pure initial state")
        psi = np.ascontiguousarray((psi / np.linalg.norm(psi)).reshape(-1, 1))
        psi, status, bad, dy, pops, ea, spur, nrm, top = K.run_sse(
            psi, key, n_steps, record_stride, params.dt, model.sa, model.nph, model.h0,
            model.hs, model.shift, model.atom, model.top, model.n_levels, float(params.g_s),
            math.sqrt(params.kappa1), betas, switch, c0, w1, w2, c_rec, dws)
        if status != K.OK:
            raise NumericalAbort(f"non-finite state at step {bad}", bad, index)
        ones = np.ones_like(nrm)
        return TrajectoryRecord(t=times, dy=dy, populations=pops, field=ea, purity=ones,
                                sys_purity=spur, weight=nrm, top_fock=top,
                                g_s=np.full_like(nrm, params.g_s), herm_defect=np.zeros_like(nrm),
                                min_eig=np.zeros_like(nrm), final_state=psi[:, 0],
                                equation=equation, scheme="euler", seed=seed, index=index)

    model = build_model(params, variant, qnd_blocks=qnd_blocks)
    rho = _to_blocks(state, model)
    if equation == "counting":
        mode = 4
    else:
        mode = (0 if equation == "nonlinear" else 2) + (1 if scheme == "milstein" else 0)
    sa, nph, h0, hs, gs, sh, sk1, _, kappa, c0 = _args(params, model)
    rate = params.eta * params.kappa_detected
    (rho, status, bad, dy, pops, ea, pur, spur, tr, top, herm, eig, gsr) = K.run_density(
        rho, key, n_steps, record_stride, mode, params.dt, sa, nph, h0, hs, sh, model.atom,
        model.top, model.n_levels, gs, sk1, betas, switch, kappa, c0, rate, fb,
        sampling == "physical", dws, check_invariants)
    if status != K.OK:
        raise NumericalAbort(f"non-finite state at step {bad}", bad, index)
    return TrajectoryRecord(t=times, dy=dy, populations=pops, field=ea, purity=pur,
                            sys_purity=spur, weight=tr, top_fock=top, g_s=gsr,
                            herm_defect=herm, min_eig=eig, final_state=_from_blocks(rho, model),
                            equation=equation, scheme="euler" if mode == 4 else scheme,
                            seed=seed, index=index)
