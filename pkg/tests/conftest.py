import numpy as np
import pytest

from transport_qst.lindblad import Propagator, build_lindbladian
from transport_qst.model import SystemConfig, random_density
from transport_qst.transport import transport_record

CASES = ("general", "delta0_E0", "goff0", "delta0_goff0")


def random_config(rng, case="general", drive=False, dephasing=True):
    """Random two-qubit configuration in one of the named parameter regimes."""
    rl = tuple(rng.uniform(0.1, 1.0, 2))
    rr = tuple(rng.uniform(0.1, 1.0, 2))
    eps_l, eps_r = rng.uniform(-1, 1, 2)
    u = rng.uniform(-0.5, 0.5)
    g_res, g_off = rng.uniform(0.1, 0.8, 2)
    if case in ("delta0_E0", "delta0_goff0"):
        eps_r = eps_l
    if case == "delta0_E0":
        u = -2 * eps_l
    if case in ("goff0", "delta0_goff0"):
        g_off = 0.0
    gz = tuple(rng.uniform(0, 0.1, 2)) if dephasing else None
    f = tuple(rng.uniform(0.1, 0.5, 2)) if drive else None
    return SystemConfig.two_qubit(eps_l=eps_l, eps_r=eps_r, rates_l=rl, rates_r=rr, u_int=u,
                                  g_res=g_res, g_off=g_off, drive=f, gamma_z=gz)


def simulate(cfg, rho0, times, k_max=3):
    L = build_lindbladian(cfg)
    states = Propagator(L).trajectory(rho0, times)
    return L, states, transport_record(times, states, L, cfg, k_max=k_max)


def x_state(rng):
    """Random valid X-shaped density matrix."""
    rho = random_density(2, rng).matrix.copy()
    for i, j in ((0, 1), (0, 2), (1, 3), (2, 3)):
        rho[i, j] = rho[j, i] = 0
    # zeroing outer coherences of a valid state keeps it positive (pinching)
    return rho


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    import sys

    test_acceptance = sys.modules.get("test_acceptance")
    if test_acceptance is not None and test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
