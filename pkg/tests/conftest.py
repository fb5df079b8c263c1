"""Shared fixtures: the bundled device catalog plus a few hand-typed
operating points that the tests use without going through the loader."""

import pytest
from hypothesis import HealthCheck, settings

from spinshot.experiments import bundled_catalog, load_experiments
from spinshot.models import DetectorModel, ReadoutPlan, TunnelModel

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def catalog():
    return load_experiments(bundled_catalog())


@pytest.fixture(scope="session")
def by_name(catalog):
    return {rec.name: rec for rec in catalog}


# The fixtures below intentionally duplicate catalog entries.  Model-layer
# tests must not inherit a loader bug, so the numbers are typed out.

@pytest.fixture(scope="session")
def broome_l():
    tm = TunnelModel(
        t_in0=6.62e-3,
        t_out0=0.61,
        t_in1=2.0,
        t_out1=1.83e-3,
        t1_relax=2.9,
        ez_over_kbt=16.7928,
    )
    det = DetectorModel(
        mu0=0.0,
        mu1=50.0,
        noise_psd=0.133,
        filter_cutoff=1e3,
        sample_rate=5e3,
    )
    plan = ReadoutPlan(readout_time=10.5e-3, threshold=22.0)
    return tm, det, plan


@pytest.fixture(scope="session")
def broome_r():
    tm = TunnelModel(
        t_in0=7.65e-3,
        t_out0=25.0,
        t_out1=31.6e-3,
        t1_relax=9.3,
        ez_over_kbt=16.7928,
    )
    det = DetectorModel(
        mu0=0.0,
        mu1=49.0,
        noise_psd=0.133,
        filter_cutoff=1e3,
        sample_rate=5e3,
    )
    plan = ReadoutPlan(readout_time=209e-3, threshold=26.0)
    return tm, det, plan


@pytest.fixture(scope="session")
def watson_dm():
    tm = TunnelModel(
        t_in0=0.13e-3,
        t_out0=145e-3,
        t_out1=0.14e-3,
        t1_relax=4.0,
        ez_over_kbt=13.4343,
    )
    det = DetectorModel(
        mu0=0.0,
        mu1=1.72,
        noise_psd=0.00069,
        filter_cutoff=100e3,
        sample_rate=200e3,
    )
    plan = ReadoutPlan(readout_time=1e-3, threshold=1.2)
    return tm, det, plan


@pytest.fixture(scope="session")
def watson_d0():
    tm = TunnelModel(
        t_in0=5.1e-3,
        t_out0=24.0,
        t_out1=6.5e-3,
        t1_relax=4.0,
        ez_over_kbt=13.4343,
    )
    det = DetectorModel(
        mu0=-121.7172,
        mu1=328.2828,
        noise_psd=0.24,
        filter_cutoff=10e3,
        sample_rate=20e3,
    )
    plan = ReadoutPlan(readout_time=55e-3, threshold=120.0)
    return tm, det, plan
