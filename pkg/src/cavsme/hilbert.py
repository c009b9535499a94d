"""Operators and states on the truncated (atoms x cavity) space.

The joint basis is ``|n> (x) |m>`` with the atomic Dicke index ``n``
(atoms in |f>, 0..N) varying slowest and the photon number ``m`` (0..N_p)
fastest: joint index ``j = n * (N_p + 1) + m``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .params import CavityParams, ParameterError

VARIANTS = ("dicke", "shifted", "zeno")


@dataclass(frozen=True)
class FockSpace:
    cutoff: int

    def __post_init__(self):
        if self.cutoff < 0:
            raise ParameterError("Fock cutoff must be non-negative")

    @property
    def dim(self) -> int:
        return self.cutoff + 1


@dataclass(frozen=True)
class SymmetricSpinSpace:
    n_atoms: int

    def __post_init__(self):
        if self.n_atoms < 0:
            raise ParameterError("atom number must be non-negative")

    @property
    def dim(self) -> int:
        return self.n_atoms + 1


def annihilation(space: FockSpace) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, space.dim, dtype=float)), 1).astype(complex)


def number(space: FockSpace | SymmetricSpinSpace) -> np.ndarray:
    return np.diag(np.arange(space.dim, dtype=float)).astype(complex)


def collective_ladder(space: SymmetricSpinSpace, direction: str) -> np.ndarray:
    """Sum of single-atom ladder operators restricted to the symmetric sector.

    ``raise`` maps |n> -> sqrt((n+1)(N-n)) |n+1>; ``lower`` is its adjoint.
    """
    N = space.n_atoms
    n = np.arange(N)
    up = np.zeros((N + 1, N + 1), dtype=complex)
    up[n + 1, n] = np.sqrt((n + 1) * (N - n))
    if direction == "raise":
        return up
    if direction == "lower":
        return up.T.copy()
    raise ValueError(f"direction must be 'raise' or 'lower', got {direction!r}")


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def _as_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def partial_trace(rho: np.ndarray, dims: tuple[int, int], keep: str = "system") -> np.ndarray:
    """Reduce a joint density (or ket) to the atomic or cavity factor."""
    ds, dc = dims
    rho = _as_density(rho)
    if rho.shape != (ds * dc, ds * dc):
        raise ValueError(f"state of shape {rho.shape} does not match dims {dims}")
    r = rho.reshape(ds, dc, ds, dc)
    if keep == "system":
        return np.einsum("imjm->ij", r)
    if keep == "cavity":
        return np.einsum("nine->ie", r)
    raise ValueError("keep must be 'system' or 'cavity'")


def expect(op: np.ndarray, state: np.ndarray) -> complex:
    """Tr(op rho) for a density matrix, <psi|op|psi> for a ket."""
    state = np.asarray(state)
    if op.shape[-1] != state.shape[0]:
        raise ValueError(f"operator {op.shape} incompatible with state {state.shape}")
    if state.ndim == 1:
        return complex(np.vdot(state, op @ state))
    return complex(np.trace(op @ state))


def coherent_state(xi: complex, space: FockSpace) -> np.ndarray:
    """Truncated coherent ket ``|xi>``, renormalised after truncation."""
    m = np.arange(space.dim)
    logfact = np.array([math.lgamma(k + 1.0) for k in m])
    amps = np.zeros(space.dim, dtype=complex)
    if xi == 0:
        amps[0] = 1.0
        return amps
    amps = np.exp(m * np.log(complex(xi)) - 0.5 * logfact - 0.5 * abs(xi) ** 2)
    deficit = 1.0 - float(np.sum(np.abs(amps) ** 2))
    if deficit > 1e-6:
        warnings.warn(f"coherent state |{xi}> loses {deficit:.2e} of its norm at cutoff "
                      f"{space.cutoff}", RuntimeWarning, stacklevel=2)
    return amps / np.linalg.norm(amps)


def fock_state(m: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[m] = 1.0
    return v


def spin_coherent_amplitudes(n_atoms: int) -> np.ndarray:
    """Dicke amplitudes of ((|f> + |g>)/sqrt 2)^N: sqrt(binom(N, n) / 2^N)."""
    n = np.arange(n_atoms + 1)
    return np.sqrt(np.array([math.comb(n_atoms, k) for k in n], dtype=float) / 2.0 ** n_atoms) + 0j


@dataclass(frozen=True)
class JointOperators:
    """Dense operators on the joint space for one parameter set."""

    a: np.ndarray
    n_phot: np.ndarray
    n_atom: np.ndarray
    h0: np.ndarray
    hs: np.ndarray

    @property
    def adag(self) -> np.ndarray:
        return self.a.conj().T

    def hamiltonian(self, g_s: float) -> np.ndarray:
        return self.h0 + g_s * self.hs


def joint_operators(params: CavityParams, variant: str = "zeno") -> JointOperators:
    spin = SymmetricSpinSpace(params.n_atoms)
    fock = FockSpace(params.n_photons)
    a = tensor(identity(spin.dim), annihilation(fock))
    nph = tensor(identity(spin.dim), number(fock))
    nat = tensor(number(spin), identity(fock.dim))
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    occ = number(spin)
    if variant == "shifted":
        occ = occ - 0.5 * params.n_atoms * identity(spin.dim)
    h0 = params.g * tensor(occ, number(fock))
    sx = collective_ladder(spin, "raise") + collective_ladder(spin, "lower")
    hs = tensor(sx, identity(fock.dim)) if variant == "zeno" else np.zeros_like(h0)
    return JointOperators(a=a, n_phot=nph, n_atom=nat, h0=h0, hs=hs)


def hamiltonian(params: CavityParams, variant: str = "dicke") -> np.ndarray:
    """Joint Hamiltonian (hbar = 1).

    ``dicke``: g a^dag a n;  ``shifted``: g a^dag a (n - N/2);
    ``zeno``: dicke + g_s sum_i (sigma_i+ + sigma_i-).
    """
    ops = joint_operators(params, variant)
    return ops.hamiltonian(params.g_s if variant == "zeno" else 0.0)
