"""Closed-form results for a dispersively coupled, homodyne-probed cavity.

With no microwave drive the atomic Dicke index ``n`` is conserved, each
diagonal block of the joint state stays a weighted coherent state
``C_n(t) |xi_n(t)><xi_n(t)|`` and the record ``y`` is a Gaussian mixture.
Everything here is exact for that case and serves as a test oracle.

Units follow :class:`~cavsme.params.CavityParams` (hbar = 1, rates in
units of kappa).  ``n`` may be any real number; the shifted Hamiltonian
``g a^dag a (n - N/2)`` is handled by passing ``n - N/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp
from scipy.stats import norm

from .params import CavityParams, ParameterError


def empty_cavity_amplitude(t, xi0: complex, beta: complex, kappa1: float, kappa: float = 1.0):
    """Coherent amplitude of the driven empty cavity.

    Solves ``dxi/dt = -(kappa/2) xi + sqrt(kappa1) beta``.
    """
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    xi_ss = 2.0 * math.sqrt(kappa1) * beta / kappa
    return (xi0 - xi_ss) * np.exp(-0.5 * kappa * np.asarray(t)) + xi_ss


def enhancement_factor(kappa1: float, kappa2: float, kappa_loss: float = 0.0,
                       tau: float | None = None) -> float:
    """Ratio of the intracavity amplitude to the input amplitude per segment.

    Returns ``2 sqrt(kappa1) / kappa``, or ``2 sqrt(kappa1) / (sqrt(tau) kappa)``
    when the round trip time ``tau`` is given.
    """
    kappa = kappa1 + kappa2 + kappa_loss
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    f = 2.0 * math.sqrt(kappa1) / kappa
    return f if tau is None else f / math.sqrt(tau)


def mean_round_trips(kappa1: float, kappa2: float, kappa_loss: float, tau: float) -> float:
    """Average number of round trips of a photon, ``1 / (kappa tau)``."""
    return 1.0 / ((kappa1 + kappa2 + kappa_loss) * tau)


def xi_n_steady(n, params: CavityParams):
    """Steady coherent amplitude ``2 sqrt(kappa1) beta / (kappa + 2 i g n)``."""
    n = np.asarray(n, dtype=float)
    return 2.0 * math.sqrt(params.kappa1) * params.beta / (params.kappa + 2j * params.g * n)


def xi_n(t, n, params: CavityParams, xi0: complex = 0.0):
    """Amplitude ``xi_n(t)`` from ``xi0`` at constant drive."""
    lam = 0.5 * params.kappa + 1j * params.g * np.asarray(n, dtype=float)
    xs = xi_n_steady(n, params)
    return (xi0 - xs) * np.exp(-lam * np.asarray(t, dtype=float)) + xs


def signal_rate(xi, params: CavityParams):
    """``r = sqrt(eta kappa_det) (i e^{-i phi} xi - i e^{i phi} xi^*)``.

    A component with amplitude ``xi`` shifts the mean record by ``-r dt``.
    """
    c = 1j * np.exp(-1j * params.phi) * np.asarray(xi)
    return math.sqrt(params.eta * params.kappa_detected) * 2.0 * np.real(c)


def sensitivity_rate(n, params: CavityParams, approx: str = "exact"):
    """Steady-state sensitivity ``r_n`` of the p-quadrature signal.

    ``exact``: ``8 beta g n sqrt(kappa1 kappa2 eta) / (kappa^2 + 4 g^2 n^2)``;
    ``small_g`` drops ``4 g^2 n^2`` so that ``r_n = r n``.
    """
    beta = complex(params.beta)
    if beta.imag != 0.0:
        raise ParameterError("sensitivity_rate requires a real drive amplitude beta")
    if approx not in ("exact", "small_g"):
        raise ValueError("approx must be 'exact' or 'small_g'")
    n = np.asarray(n, dtype=float)
    num = 8.0 * beta.real * params.g * n * math.sqrt(params.kappa1 * params.kappa2 * params.eta)
    den = params.kappa ** 2 + (0.0 if approx == "small_g" else 4.0 * params.g ** 2 * n ** 2)
    return num / den


def binomial_weights(n_atoms: int) -> np.ndarray:
    """``C_n(0) = binom(N, n) / 2^N`` for ``((|f> + |g>)/sqrt 2)^N``."""
    return np.array([math.comb(n_atoms, k) for k in range(n_atoms + 1)], float) / 2.0 ** n_atoms


def log_weights(t, y, c0, r) -> np.ndarray:
    c0 = np.asarray(c0, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(c0) - r * y - 0.5 * r ** 2 * t


def weights(t, y, c0, r) -> np.ndarray:
    """Unnormalised weights ``C_n(t) = C_n(0) exp(-r_n y - r_n^2 t / 2)``."""
    return np.exp(log_weights(t, y, c0, r))


def populations(t, y, c0, r) -> np.ndarray:
    """Normalised weights, computed in log space."""
    lw = log_weights(t, y, c0, r)
    return np.exp(lw - logsumexp(lw))


def weights_from_record(dy, dt: float, c0, r_t) -> np.ndarray:
    """Weights for a time-dependent ``r_n(t)`` along a recorded path.

    Parameters
    ----------
    dy : (K,) array
        Record increments of steps ``[t_i, t_i + dt)``.
    dt : float
        Step size.
    c0 : (n,) array
        Initial weights.
    r_t : (n, K + 1) array
        ``r_n`` at the grid times ``t_0 .. t_K``.

    Returns
    -------
    (n,) array
        ``C_n(t_K)``; both integrals use the trapezoid rule.
    """
    dy = np.asarray(dy, dtype=float)
    r_t = np.atleast_2d(np.asarray(r_t, dtype=float))
    if r_t.shape[1] != dy.size + 1:
        raise ValueError("r_t needs one more time point than dy")
    rmid = 0.5 * (r_t[:, 1:] + r_t[:, :-1])
    i1 = rmid @ dy
    i2 = trapezoid(r_t ** 2, dx=dt, axis=1)
    with np.errstate(divide="ignore"):
        return np.exp(np.log(np.asarray(c0, float)) - i1 - 0.5 * i2)


@dataclass(frozen=True)
class OutcomeDensity:
    """Gaussian mixture of the integrated record ``y`` at time ``t``.

    Component ``n`` has weight ``c0[n]``, mean ``-r[n] t`` and variance ``t``.
    """

    t: float
    c0: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))

    @property
    def means(self) -> np.ndarray:
        return -self.r * self.t

    def pdf(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(self.c0 * norm.pdf(y, loc=self.means, scale=math.sqrt(self.t)), axis=-1)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(self.c0 * norm.cdf(y, loc=self.means, scale=math.sqrt(self.t)), axis=-1)

    def posterior(self, y) -> np.ndarray:
        """Component probabilities given ``y`` (Bayes' rule on the mixture)."""
        lw = np.log(self.c0) + norm.logpdf(y, loc=self.means, scale=math.sqrt(self.t))
        return np.exp(lw - logsumexp(lw))

    def local_maxima(self, n_grid: int = 20001) -> np.ndarray:
        """Positions of the local maxima of the density on a fine grid."""
        s = math.sqrt(self.t)
        y = np.linspace(self.means.min() - 6 * s, self.means.max() + 6 * s, n_grid)
        p = self.pdf(y)
        inner = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])
        return y[1:-1][inner]


def outcome_density(y, t: float, c0, r):
    """Probability density of the integrated record ``y`` at time ``t``."""
    return OutcomeDensity(t, c0, r).pdf(y)


def superposition_success(n_atoms: int) -> float:
    """Probability ``2^(1-N)`` of ending in the ``{|0>, |N>}`` sector."""
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    return 2.0 ** (1 - n_atoms)
