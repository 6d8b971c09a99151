import numpy as np
import pytest

from conftest import random_config, simulate
from transport_qst.estimation import (
    EstimationProblem,
    estimate_degenerate,
    estimate_g_res_gamma_tilde,
    estimate_general,
    estimate_resonant,
    gamma_z_from_gamma_tilde,
    krylov_closure_coefficients,
    suggest_probe_times,
)
from transport_qst.lindblad import build_lindbladian, steady_state
from transport_qst.model import (
    BathSpec,
    CaseAssumptionError,
    ConditioningError,
    SystemConfig,
    ValidationError,
    basis_state,
    number_op,
    occupation_projector,
    random_density,
)
from transport_qst.qst import project_state
from transport_qst.transport import transport_record


def probes(cfg, times, rho0=None, k_max=3):
    rho0 = basis_state("00") if rho0 is None else rho0
    _, _, rec = simulate(cfg, rho0, np.asarray(times), k_max)
    return EstimationProblem(rec.times, rec.I_L, rec.I_R, cfg.rates(0), cfg.rates(1))


def rel(a, b):
    return abs(a - b) / abs(b)


def test_resonant_two_probe_recovery(rng):
    for _ in range(5):
        cfg = random_config(rng, case="delta0_goff0")
        res = estimate_g_res_gamma_tilde(probes(cfg, [0.4, 1.7]))
        assert rel(res["g_res"], cfg.g_res) < 1e-6
        assert rel(res["gamma_tilde"], cfg.Gamma_tilde) < 1e-6
        assert gamma_z_from_gamma_tilde(res["gamma_tilde"], cfg) == pytest.approx(
            cfg.Gamma_z, abs=1e-6)


def test_resonant_two_overdetermined(rng):
    cfg = random_config(rng, case="delta0_goff0")
    two = estimate_g_res_gamma_tilde(probes(cfg, [0.4, 1.7]))
    five = estimate_g_res_gamma_tilde(probes(cfg, suggest_probe_times(cfg)))
    assert five.residual < 1e-9
    assert five["g_res"] == pytest.approx(two["g_res"], rel=1e-8)
    assert five["gamma_tilde"] == pytest.approx(two["gamma_tilde"], rel=1e-8)


def test_steady_state_probes_are_singular(rng):
    cfg = random_config(rng, case="delta0_goff0")
    L = build_lindbladian(cfg)
    ss = steady_state(L)
    rec = transport_record([100.0, 200.0], [ss, ss], L, cfg)
    with pytest.raises(ConditioningError):
        estimate_g_res_gamma_tilde(EstimationProblem(rec.times, rec.I_L, rec.I_R, cfg.rates(0), cfg.rates(1)))


def test_wrong_case_detected():
    # g^2 comes out negative when the sign of the coupling term is inconsistent
    p = EstimationProblem([0.0, 1.0], [[0.3, 0.1, 0.0], [0.2, 0.05, 0.0]],
                          [[0.1, -0.1, 0.0], [0.05, 0.0, 0.0]], (0.5, 0.5), (0.5, 0.5))
    with pytest.raises((CaseAssumptionError, ConditioningError)):
        estimate_g_res_gamma_tilde(p)


def test_too_few_probes_rejected(rng):
    cfg = random_config(rng)
    with pytest.raises(ValidationError, match="probe"):
        estimate_general(probes(cfg, [0.5, 1.0, 1.5, 2.0]))
    with pytest.raises(ValidationError, match="order"):
        estimate_general(probes(cfg, suggest_probe_times(cfg), k_max=2))


def test_general_recovery(rng):
    for _ in range(5):
        cfg = random_config(rng)
        res = estimate_general(probes(cfg, suggest_probe_times(cfg)))
        assert rel(res["g_res"], cfg.g_res) < 1e-5
        assert rel(res["g_off"], cfg.g_off) < 1e-5
        assert rel(res["delta"], abs(cfg.delta)) < 1e-5
        assert rel(res["energy"], abs(cfg.energy_doubly)) < 1e-5
        assert rel(res["gamma_tilde"], cfg.Gamma_tilde) < 1e-5


def test_general_known_gamma_tilde_four_probes(rng):
    cfg = random_config(rng)
    res = estimate_general(probes(cfg, suggest_probe_times(cfg, n=4)), gamma_tilde=cfg.Gamma_tilde)
    for key, truth in (("g_res", cfg.g_res), ("g_off", cfg.g_off), ("delta", abs(cfg.delta)),
                       ("energy", abs(cfg.energy_doubly))):
        assert rel(res[key], truth) < 1e-5


def test_general_on_goff0_data(rng):
    cfg = random_config(rng, case="goff0")
    res = estimate_general(probes(cfg, suggest_probe_times(cfg)))
    assert res["g_off"] < 1e-7
    assert rel(res["g_res"], cfg.g_res) < 1e-5
    assert "energy" in res.unidentifiable


def test_resonant_three_probes(rng):
    cfg = random_config(rng, case="goff0")
    res = estimate_resonant(probes(cfg, suggest_probe_times(cfg, n=3)))
    assert rel(res["g_res"], cfg.g_res) < 1e-5
    assert rel(res["delta"], abs(cfg.delta)) < 1e-5
    assert rel(res["gamma_tilde"], cfg.Gamma_tilde) < 1e-5


def test_degenerate_recovery(rng):
    cfg = random_config(rng, case="delta0_E0")
    res = estimate_degenerate(probes(cfg, suggest_probe_times(cfg, n=3)))
    assert rel(res["g_res"], cfg.g_res) < 1e-6
    assert rel(res["g_off"], cfg.g_off) < 1e-6
    assert rel(res["gamma_tilde"], cfg.Gamma_tilde) < 1e-6


def test_more_probes_do_not_worsen_residual(rng):
    cfg = random_config(rng)
    r5 = estimate_general(probes(cfg, suggest_probe_times(cfg, n=5)))
    r8 = estimate_general(probes(cfg, suggest_probe_times(cfg, n=8)))
    assert r8.residual <= max(r5.residual, 1e-9)


def test_time_shift_invariance(rng):
    cfg = random_config(rng)
    times = suggest_probe_times(cfg)
    a = probes(cfg, times)
    b = EstimationProblem(a.times + 3.7, a.I_L, a.I_R, a.rates_l, a.rates_r)
    ra, rb = estimate_general(a), estimate_general(b)
    for key in ("g_res", "g_off", "delta", "energy", "gamma_tilde"):
        assert ra[key] == rb[key]


def test_estimation_result_dict(rng):
    cfg = random_config(rng, case="delta0_goff0")
    d = estimate_g_res_gamma_tilde(probes(cfg, [0.4, 1.7])).to_dict()
    assert set(d) >= {"case", "values", "residual", "condition"}


# -- Krylov closure -----------------------------------------------------------

def test_single_qubit_affine_closure():
    gp, gm = 0.3, 0.5
    cfg = SystemConfig(eps=(0.2,), baths=(BathSpec.from_rates(gp, gm),))
    c = krylov_closure_coefficients(build_lindbladian(cfg), number_op(0, 1), affine=True)
    assert c.dimension == 1
    assert c.offset == pytest.approx(gp, abs=1e-12)
    assert c.coefficients == pytest.approx([-(gp + gm), -1.0], abs=1e-12)


def test_two_qubit_closure_along_trajectory(rng):
    cfg = random_config(rng)
    L = build_lindbladian(cfg)
    for P, affine in (((0,), False), ((0, 1), True)):
        c = krylov_closure_coefficients(L, occupation_projector(P, 2), affine=affine)
        assert not c.ill_conditioned
        _, states, _ = simulate(cfg, random_density(2, rng), np.linspace(0, 10, 100))
        for rho in states:
            p = np.array([project_state(P, k, rho, L, cfg) for k in range(c.dimension + 1)])
            assert abs(c.residual(p)) < 1e-8


def test_closure_trivial_in_steady_state(rng):
    cfg = random_config(rng)
    L = build_lindbladian(cfg)
    ss = steady_state(L)
    c = krylov_closure_coefficients(L, occupation_projector((0,), 2))
    p = np.array([project_state((0,), k, ss, L, cfg) for k in range(c.dimension + 1)])
    assert np.all(np.abs(p[1:]) < 1e-12)
    assert abs(c.residual(p)) < 1e-10
