import math

import pytest

from cavsme import CavityParams, ParameterError
from cavsme.params import FIG3, default_cutoff


def test_defaults_are_consistent():
    p = CavityParams()
    assert p.kappa == pytest.approx(1.0)
    assert p.kappa_detected == 0.5
    assert p.dimension == (p.n_atoms + 1) * (p.n_photons + 1)


def test_measurement_coefficient():
    p = CavityParams(eta=0.5, phi=0.3)
    assert p.measurement_coefficient == pytest.approx(
        -1j * complex(math.cos(0.3), -math.sin(0.3)) * math.sqrt(0.25))
    r = CavityParams(kappa1=1.0, kappa2=0.0, port="reflected")
    assert abs(r.measurement_coefficient) == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [
    dict(kappa1=0.6),
    dict(kappa1=-0.1, kappa2=1.1),
    dict(eta=1.5),
    dict(dt=0.0),
    dict(n_atoms=-1),
    dict(n_photons=-2),
    dict(port="sideways"),
    dict(port="reflected"),
    dict(g=float("nan")),
])
def test_rejects_inconsistent_parameters(bad):
    with pytest.raises(ParameterError):
        CavityParams(**bad)


def test_default_cutoff():
    assert default_cutoff(0.5, 0.2) == 3
    assert default_cutoff(0.5, 1.0) == 8
    assert CavityParams(beta=1.0).n_photons == 8


def test_probe_switch_off():
    p = CavityParams(probe_off_time=2.0)
    assert p.beta_at(1.9) == 0.2
    assert p.beta_at(2.0) == 0


def test_validity_report():
    rep = CavityParams(**FIG3, dt=1e-3).validity_report(hamiltonian_norm=0.5)
    assert all(ok for _, ok in rep.values())
    rep = CavityParams(**FIG3, dt=0.5).validity_report()
    assert not rep["kappa1*tau"][1]


def test_replace_revalidates():
    p = CavityParams()
    assert p.replace(dt=0.1).dt == 0.1
    with pytest.raises(ParameterError):
        p.replace(eta=2.0)
