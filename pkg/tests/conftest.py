import sys

import numpy as np
import pytest

from branchkit.synth_gen import SkeletalSphere, fit_spline


def straight_branch(r=0.01, length=1.0, taper_angle=0.0, min_radius=0.0005, n=2):
    z = np.linspace(0.0, length, n)
    spheres = [SkeletalSphere([0.0, 0.0, zi], r) for zi in z]
    return fit_spline(spheres, taper_angle=taper_angle, min_radius=min(min_radius, r))


def arc_branch(radius=1.0, n=20, r=0.01, taper_angle=0.0):
    """Quarter circle in the x-z plane, starting at the origin heading +z."""
    a = np.linspace(0.0, np.pi / 2, n)
    pts = np.c_[radius * (1 - np.cos(a)), np.zeros(n), radius * np.sin(a)]
    return fit_spline([SkeletalSphere(p, r) for p in pts], taper_angle=taper_angle)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cylinder():
    return straight_branch(0.01, 0.5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
