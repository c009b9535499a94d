"""Exact discrete-time homodyne measurement model.

One time step of length ``dt`` couples the cavity to one input segment
(transmission ``t1^2 = kappa1 dt``) and one output segment (``t2^2 =
kappa2 dt``).  The output segment is mixed with a local oscillator
``|alpha>``, ``alpha = sqrt(2 mu) exp(i phi)``, on a 50:50 beam splitter and
the photon-number difference ``k`` is read out.  The conditioned update is

    rho' = sum_pq u_pq(k) X_pq / P_k

where the operator terms ``X_pq`` come from expanding the mirror unitaries to
first order in ``dt`` and the scalar tables ``u_pq(k)`` contain everything
about the detector.  Here ``u_pq`` is evaluated exactly from Fock-basis
beam-splitter amplitudes, without the strong-oscillator approximation.

The splitter is ``U3 = exp(-i pi/4 (L^dag s + L s^dag))`` on the oscillator
mode ``L`` and the signal mode ``s``; ``k`` counts ``L`` minus ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from . import _kernels as K
from .params import CavityParams, ParameterError
from .rng import NoiseStream, trajectory_key
from .sme import NumericalAbort, _to_blocks, build_model

PAIRS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2))


class TruncationError(RuntimeError):
    """The oscillator Fock expansion lost more norm than allowed."""


def k_range(mu: float) -> np.ndarray:
    """Readout values kept: ``|k| <= ceil(4 sqrt(2 mu)) + 4``."""
    kmax = int(math.ceil(4.0 * math.sqrt(2.0 * mu))) + 4
    return np.arange(-kmax, kmax + 1)


def lo_cutoff(mu: float, k_max: int = 0) -> int:
    """Oscillator Fock cutoff ``|alpha|^2 + 10 |alpha| + k``."""
    a2 = 2.0 * mu
    return int(math.ceil(a2 + 10.0 * math.sqrt(a2) + abs(k_max)))


def lo_deficit(mu: float, n_lo: int) -> float:
    """Norm of the oscillator state beyond ``n_lo`` photons."""
    return float(poisson.sf(n_lo, 2.0 * mu))


def _amplitudes(p: int, k: np.ndarray, m: np.ndarray, mu: float, phi: float, n_lo: int):
    """``<m+k|<m| U3 |alpha>|p>`` on a (k, m) grid, zero outside the basis."""
    n1 = k[:, None] + m[None, :]
    n2 = np.broadcast_to(m[None, :], n1.shape)
    j = n1 + n2 - p
    valid = (n1 >= 0) & (j >= 0) & (j <= n_lo)
    n1c = np.where(valid, n1, 0)
    n2c = np.where(valid, n2, 0)
    jc = np.where(valid, j, 0)
    a = math.sqrt(2.0 * mu)
    base = (-mu * 1.0 + jc * math.log(a) - 0.5 * gammaln(jc + 1.0)
            + 0.5 * (gammaln(n1c + 1.0) + gammaln(n2c + 1.0) - gammaln(jc + 1.0) - gammaln(p + 1.0))
            - 0.5 * (jc + p) * math.log(2.0))
    total = np.zeros(n1.shape, dtype=complex)
    for b in range(p + 1):
        r = n1c - b
        ok = valid & (r >= 0) & (r <= jc)
        rc = np.where(ok, r, 0)
        lbin = gammaln(jc + 1.0) - gammaln(rc + 1.0) - gammaln(jc - rc + 1.0)
        lmag = base + lbin + math.log(math.comb(p, b))
        phase = np.exp(1j * jc * phi) * (-1j) ** ((2 * b + jc - n1c) % 4)
        total += np.where(ok, np.exp(np.where(ok, lmag, -np.inf)) * phase, 0.0)
    return total


def u_pq_exact(p: int, q: int, k, mu: float, phi: float = 0.0, n_lo: int | None = None,
               tol: float = 1e-8) -> np.ndarray:
    """Exact ``u_pq(k)`` for ``p, q`` in ``{0, 1, 2}``.

    Parameters
    ----------
    k : int or array of int
        Readout values.
    mu : float
        ``|alpha|^2 / 2``.
    phi : float
        Oscillator phase.
    n_lo : int, optional
        Oscillator Fock cutoff; defaults to :func:`lo_cutoff`.  It is
        widened until the discarded norm is below ``tol``.
    """
    if p not in (0, 1, 2) or q not in (0, 1, 2):
        raise ValueError("p and q must be 0, 1 or 2")
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if n_lo is None:
        n_lo = lo_cutoff(mu, int(np.max(np.abs(k))))
    for _ in range(8):
        if lo_deficit(mu, n_lo) <= tol:
            break
        n_lo = int(n_lo * 1.5) + 10
    else:
        raise TruncationError(f"oscillator cutoff {n_lo} leaves {lo_deficit(mu, n_lo):.2e}")
    m = np.arange(0, (n_lo + 2 - int(np.min(k))) // 2 + 2)
    Ap = _amplitudes(p, k, m, mu, phi, n_lo)
    Aq = Ap if q == p else _amplitudes(q, k, m, mu, phi, n_lo)
    return np.sum(Ap * Aq.conj(), axis=1)


def u_pq_closed(p: int, q: int, k, mu: float, phi: float = 0.0) -> np.ndarray:
    """Strong-oscillator Gaussian limits of ``u_pq(k)``."""
    k = np.asarray(k, dtype=float)
    g = np.exp(-k ** 2 / (4.0 * mu)) / (2.0 * math.sqrt(math.pi * mu))
    ph = np.exp(-1j * phi)
    forms = {
        (0, 0): g + 0j,
        (1, 0): -1j * k * ph / math.sqrt(2.0 * mu) * g,
        (1, 1): k ** 2 / (2.0 * mu) * g + 0j,
        (2, 0): -(k ** 2 - 2.0 * mu) * ph ** 2 / (2.0 * math.sqrt(2.0) * mu) * g,
    }
    if (p, q) in forms:
        return forms[(p, q)]
    if (q, p) in forms:
        return np.conj(forms[(q, p)])
    raise ValueError(f"no closed form for u_{p}{q}")


@dataclass(frozen=True)
class UTable:
    """``u_pq(k)`` over the kept readout range.

    ``tail`` is the probability mass of ``u_00`` outside the range; the
    stored ``u00`` and ``u11`` are renormalised to sum to one and ``u20``
    is shifted by a multiple of ``u00`` to sum to zero, as the full sums do.
    """

    mu: float
    phi: float
    k: np.ndarray
    u00: np.ndarray
    u10: np.ndarray
    u11: np.ndarray
    u20: np.ndarray
    tail: float
    exact: bool

    @classmethod
    def build(cls, mu: float, phi: float = 0.0, exact: bool = True) -> "UTable":
        k = k_range(mu)
        f = u_pq_exact if exact else u_pq_closed
        u00 = np.real(f(0, 0, k, mu, phi)).astype(complex)
        u11 = np.real(f(1, 1, k, mu, phi)).astype(complex)
        tail = 1.0 - float(np.sum(u00.real))
        scale = 1.0 / (1.0 - tail)
        u00 = u00 * scale
        # over all k, u00 and u11 sum to one and u20 to <2|0> = 0; the cut
        # tails carry k^2 - 2 mu weight, so restore the u20 total as well
        u20 = f(2, 0, k, mu, phi) * scale
        u20 = u20 - u20.sum() * u00
        return cls(mu=mu, phi=phi, k=k, u00=u00, u10=f(1, 0, k, mu, phi) * scale,
                   u11=u11 / np.sum(u11.real), u20=u20, tail=tail, exact=exact)

    def totals(self) -> dict:
        """Sums over ``k``; these define the ensemble-averaged map."""
        return {"00": complex(self.u00.sum()), "10": complex(self.u10.sum()),
                "11": complex(self.u11.sum()), "20": complex(self.u20.sum())}

    def signal(self) -> np.ndarray:
        """Readout in units of a Wiener increment per sqrt(dt): ``k / sqrt(2 mu)``."""
        return self.k / math.sqrt(2.0 * self.mu)


def _check(params: CavityParams) -> None:
    if params.kappa_loss != 0.0 or params.eta != 1.0 or params.port != "transmitted":
        raise ParameterError("the discrete model covers the lossless transmitted-port setup")


def _terms(rho, params: CavityParams, variant: str):
    _check(params)
    model = build_model(params, variant)
    X = K.discrete_terms(_to_blocks(rho, model)[0], params.dt, model.sa, model.nph,
                         model.h0[0], model.hs, float(params.g_s), model.shift,
                         math.sqrt(params.kappa1), complex(params.beta), params.kappa1,
                         params.kappa2)
    return X


def probabilities(rho, params: CavityParams, table: UTable, variant: str = "zeno") -> np.ndarray:
    """Outcome probabilities ``P_k`` over ``table.k``."""
    X = _terms(rho, params, variant)
    return K.discrete_probs(X, table.u00, table.u10, table.u11, table.u20)


def discrete_step(rho, k: int, params: CavityParams, table: UTable,
                  variant: str = "zeno") -> tuple[np.ndarray, float]:
    """Conditioned update for readout ``k``; returns ``(rho', P_k)``.

    Raises
    ------
    ValueError
        If ``P_k`` is not positive, which means the table and ``dt`` are
        inconsistent.
    """
    X = _terms(rho, params, variant)
    i = int(k) - int(table.k[0])
    if not 0 <= i < table.k.size:
        raise ValueError(f"readout {k} outside the kept range")
    P = K.discrete_probs(X, table.u00, table.u10, table.u11, table.u20)
    if P[i] <= 0.0:
        raise ValueError(f"non-positive outcome probability {P[i]!r} for k={k}")
    return K.discrete_combine(X, i, table.u00, table.u10, table.u11, table.u20) / P[i], float(P[i])


def sample_k(rho, params: CavityParams, table: UTable, noise: NoiseStream | float,
             variant: str = "zeno") -> int:
    """Draw a readout from the exact ``P_k`` by inverse transform."""
    u = float(noise.uniforms(1)[0]) if isinstance(noise, NoiseStream) else float(noise)
    P = probabilities(rho, params, table, variant)
    c = np.cumsum(P)
    i = min(int(np.searchsorted(c, u * c[-1])), P.size - 1)
    return int(table.k[i])


def averaged_step(rho, params: CavityParams, table: UTable, variant: str = "zeno") -> np.ndarray:
    """Exact average of the conditioned update over the readout."""
    X = _terms(rho, params, variant)
    t = table.totals()
    return (t["00"] * X[0] + t["10"] * X[1] + np.conj(t["10"]) * X[2] + t["11"] * X[3]
            + t["20"] * X[4] + np.conj(t["20"]) * X[5])


@dataclass
class DiscreteRun:
    t: np.ndarray
    populations: np.ndarray
    field: np.ndarray
    k: np.ndarray
    final_state: np.ndarray


def run_discrete(params: CavityParams, table: UTable, t_end: float, seed: int = 0,
                 index: int = 0, record_stride: int = 1, state=None,
                 variant: str = "zeno") -> DiscreteRun:
    """Iterate the discrete model, sampling each readout from ``P_k``."""
    _check(params)
    from .sme import initial_state
    model = build_model(params, variant)
    n_steps = max(1, int(round(t_end / params.dt)))
    rho = _to_blocks(initial_state(params) if state is None else state, model)[0]
    rho, status, bad, pops, ea, ks = K.run_discrete(
        np.ascontiguousarray(rho), trajectory_key(seed, index), n_steps, record_stride,
        params.dt, model.sa, model.nph, model.h0[0], model.hs, float(params.g_s), model.shift,
        model.atom, model.top, model.n_levels, math.sqrt(params.kappa1), complex(params.beta),
        params.kappa1, params.kappa2, table.u00, table.u10, table.u11, table.u20)
    if status != K.OK:
        raise NumericalAbort(f"negative outcome probability at step {bad}", bad, index)
    t = params.dt * record_stride * np.arange(pops.shape[0])
    return DiscreteRun(t=t, populations=pops, field=ea, k=table.k[0] + ks, final_state=rho)
