"""Physical parameters of the probed cavity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

PORTS = ("transmitted", "reflected")


class ParameterError(ValueError):
    """Raised for physically inconsistent or malformed parameters."""


@dataclass(frozen=True)
class CavityParams:
    """All constants of one experiment, in units where hbar = kappa = 1.

    Rates ``kappa1`` (input mirror), ``kappa2`` (output mirror) and
    ``kappa_loss`` (intracavity loss) must sum to one.  ``beta`` is the input
    coherent amplitude in units of sqrt(kappa); ``g`` and ``g_s`` are the
    dispersive and microwave couplings in units of kappa.

    ``phi`` selects the measured quadrature through the measurement operator
    ``c = -1j * exp(-1j*phi) * sqrt(eta*kappa_det) * a``; ``phi = 0`` is the
    phase-sensitive p-quadrature and ``phi = -pi/2`` the x-quadrature.
    ``port`` names the detected output: ``"transmitted"`` (rate kappa2, the
    default) or ``"reflected"`` (rate kappa1, for which the physical local
    oscillator phase is ``phi - pi/2``).
    """

    kappa1: float = 0.5
    kappa2: float = 0.5
    kappa_loss: float = 0.0
    eta: float = 1.0
    phi: float = 0.0
    beta: complex = 0.2
    g: float = 0.2
    g_s: float = 0.0
    n_atoms: int = 1
    n_photons: int | None = None
    dt: float = 1e-3
    port: str = "transmitted"
    probe_off_time: float | None = None

    def __post_init__(self):
        if self.n_photons is None:
            object.__setattr__(self, "n_photons", default_cutoff(self.kappa1, self.beta, self.kappa))
        self.validate()

    @property
    def kappa(self) -> float:
        return self.kappa1 + self.kappa2 + self.kappa_loss

    @property
    def kappa_detected(self) -> float:
        return self.kappa2 if self.port == "transmitted" else self.kappa1

    @property
    def dimension(self) -> int:
        return (self.n_atoms + 1) * (self.n_photons + 1)

    @property
    def measurement_coefficient(self) -> complex:
        """Scalar ``c0`` with ``c = c0 * a`` the measured jump operator."""
        return -1j * np.exp(-1j * self.phi) * math.sqrt(self.eta * self.kappa_detected)

    def validate(self) -> None:
        for name in ("kappa1", "kappa2", "kappa_loss"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if abs(self.kappa - 1.0) > 1e-9:
            raise ParameterError(
                f"kappa1 + kappa2 + kappa_loss must equal 1 (time unit), got {self.kappa!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("eta must lie in [0, 1]")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.n_atoms < 0 or int(self.n_atoms) != self.n_atoms:
            raise ParameterError("n_atoms must be a non-negative integer")
        if self.n_photons < 0 or int(self.n_photons) != self.n_photons:
            raise ParameterError("n_photons must be a non-negative integer")
        if self.port not in PORTS:
            raise ParameterError(f"port must be one of {PORTS}")
        if self.port == "reflected" and self.kappa2 != 0:
            raise ParameterError("reflected-port detection requires kappa2 = 0")
        for name in ("beta", "g", "g_s", "phi"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")

    def replace(self, **changes) -> "CavityParams":
        return replace(self, **changes)

    def beta_at(self, t: float) -> complex:
        if self.probe_off_time is not None and t >= self.probe_off_time:
            return 0j
        return complex(self.beta)

    def validity_report(self, hamiltonian_norm: float | None = None, threshold: float = 0.1) -> dict:
        """Continuum-limit conditions with the round trip time taken as ``dt``.

        Each entry maps a condition to ``(value, ok)`` where ``ok`` means the
        dimensionless value is below ``threshold``.
        """
        tau = self.dt
        checks = {
            "kappa1*tau": self.kappa1 * tau,
            "kappa2*tau": self.kappa2 * tau,
            "kappa_loss*tau": self.kappa_loss * tau,
            "sqrt(kappa1)*|beta|*tau": math.sqrt(self.kappa1) * abs(self.beta) * tau,
        }
        if hamiltonian_norm is not None:
            checks["|H|*tau"] = hamiltonian_norm * tau
        return {k: (v, v < threshold) for k, v in checks.items()}


def default_cutoff(kappa1: float, beta: complex, kappa: float = 1.0) -> int:
    """Fock cutoff ``max(3, ceil(16 kappa1 |beta|^2 / kappa^2))``."""
    return max(3, int(math.ceil(16.0 * kappa1 * abs(beta) ** 2 / kappa ** 2 - 1e-12)))


FIG3 = dict(kappa1=0.5, kappa2=0.5, kappa_loss=0.0, eta=1.0, phi=0.0,
            g=0.2, beta=0.2, n_atoms=1, n_photons=3)
