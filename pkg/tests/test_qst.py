import math

import numpy as np
import pytest

from conftest import CASES, random_config, simulate, x_state
from transport_qst.krylov import direction_membership, krylov_power_vectors, span_of
from transport_qst.krylov import ObservableSpace
from transport_qst.lindblad import Superoperator, build_lindbladian, steady_state
from transport_qst.model import (
    DensityOperator,
    InconsistentDataError,
    SystemConfig,
    ValidationError,
    basis_state,
    maximally_mixed,
    number_op,
    occupation_projector,
    random_density,
)
from transport_qst.qst import (
    NOT_GENERATED,
    RECONSTRUCTED,
    UNIDENTIFIABLE,
    ReconstructionInput,
    completeness_report,
    project_state,
    projection_expanded,
    projection_factored,
    reconstruct_im_coherences,
    reconstruct_populations,
    reconstruct_re_coherences,
    reconstruct_record,
    reconstruct_state,
    re_coherence_rhs,
    solve_gamma_tilde,
    steady_state_qst,
)
from transport_qst.transport import MomentEvaluator, TransportRecord, current_moment

SUBSETS = ((0,), (1,), (0, 1))


def state_input(rho, cfg, k_max=3, **params):
    L = build_lindbladian(cfg)
    m = MomentEvaluator(L, cfg).moments(rho, k_max, subsets=SUBSETS)
    S = m[(0, 1)][0] - m[(0,)][0] * m[(1,)][0]
    base = dict(g_res=cfg.g_res, g_off=cfg.g_off, delta=cfg.delta, energy=cfg.energy_doubly,
                gamma_tilde=cfg.Gamma_tilde)
    base.update(params)
    return ReconstructionInput(cfg.rates(0), cfg.rates(1), tuple(m[(0,)]), tuple(m[(1,)]), S, **base)


# -- projections --------------------------------------------------------------

def test_projection_simple_values(rng):
    cfg = random_config(rng)
    L = build_lindbladian(cfg)
    assert project_state((0,), 0, basis_state("10"), L, cfg) == pytest.approx(1.0)
    rho = random_density(2, rng)
    assert project_state((0, 1), 0, rho, L, cfg) == pytest.approx(rho.r11, abs=1e-15)


def test_projection_forms_agree(rng):
    for _ in range(5):
        cfg = random_config(rng, drive=bool(rng.integers(2)))
        L = build_lindbladian(cfg)
        ev = MomentEvaluator(L, cfg)
        for _ in range(10):
            rho = random_density(2, rng)
            m = ev.moments(rho, 4)
            for P in SUBSETS:
                for k in range(5):
                    ref = project_state(P, k, rho, L, cfg)
                    assert projection_factored(P, k, rho, L, cfg) == pytest.approx(ref, abs=1e-10)
                    assert projection_expanded(P, k, m, cfg) == pytest.approx(ref, abs=1e-10)


def test_first_projection_is_occupation_derivative(rng):
    cfg = random_config(rng)
    h = 1e-4
    L, states, _ = simulate(cfg, random_density(2, rng), np.array([1 - h, 1, 1 + h]))
    for P in SUBSETS:
        n = [np.trace(occupation_projector(P, 2) @ s.matrix).real for s in states]
        assert project_state(P, 1, states[1], L, cfg) == pytest.approx((n[2] - n[0]) / (2 * h), abs=1e-7)


# -- populations --------------------------------------------------------------

def test_ground_state_populations(rng):
    cfg = random_config(rng)
    gl, gr = cfg.rates(0)[0], cfg.rates(1)[0]
    inp = ReconstructionInput(cfg.rates(0), cfg.rates(1), (gl,), (gr,), 0.0)
    assert np.allclose(reconstruct_populations(inp).astuple(), (1, 0, 0, 0), atol=1e-15)


def test_maximally_mixed_populations(rng):
    cfg = random_config(rng)
    pops = reconstruct_populations(state_input(maximally_mixed(2), cfg))
    assert np.allclose(pops.astuple(), 0.25, atol=1e-14)


def test_population_round_trip(rng):
    worst = 0.0
    for _ in range(20):
        cfg = random_config(rng, case=CASES[rng.integers(4)], drive=bool(rng.integers(2)))
        for _ in range(25):
            rho = random_density(2, rng)
            pops = reconstruct_populations(state_input(rho, cfg))
            worst = max(worst, np.max(np.abs(np.array(pops.astuple()) - np.diag(rho.matrix).real)))
    assert worst < 1e-10


def test_mixed_denominator_variant_fails_round_trip(rng):
    # the mixed terms need Gamma_L (resp. Gamma_R); using Gamma_L + Gamma_R breaks closure
    cfg = random_config(rng)
    rho = random_density(2, rng)
    inp = state_input(rho, cfg)
    G = inp.Gamma_L + inp.Gamma_R
    r01_variant = (-inp.S_LR / (inp.Gamma_L * inp.Gamma_R)
                   - (inp.I_R[0] - inp.rates_r[0]) / inp.Gamma_R * (inp.I_L[0] + inp.rates_l[1]) / G)
    assert abs(r01_variant - rho.r01) > 1e-3
    assert abs(reconstruct_populations(inp).r01 - rho.r01) < 1e-12


def test_out_of_range_populations_flagged(rng):
    cfg = random_config(rng)
    inp = ReconstructionInput(cfg.rates(0), cfg.rates(1), (5.0,), (-5.0,), 0.0)
    assert "inconsistent transport data" in reconstruct_populations(inp).flags


# -- coherences ---------------------------------------------------------------

def test_real_state_has_no_imaginary_coherence(rng):
    cfg = random_config(rng)
    rho = DensityOperator(random_density(2, rng).matrix.real)
    im_a, im_b = reconstruct_im_coherences(state_input(rho, cfg))
    assert abs(im_a.value) < 1e-13 and abs(im_b.value) < 1e-13


def test_steady_state_imaginary_alpha(rng):
    cfg = random_config(rng, case="goff0")
    L = build_lindbladian(cfg)
    ss = steady_state(L)
    I = current_moment((0,), 0, ss, L, cfg)
    assert current_moment((1,), 0, ss, L, cfg) == pytest.approx(-I, abs=1e-12)
    im_a, im_b = reconstruct_im_coherences(state_input(ss, cfg))
    # sign: I_S = -2 g Im(alpha) balances I_L in the steady state
    assert im_a.value == pytest.approx(-I / (2 * cfg.g_res), abs=1e-10)
    assert im_b.status == UNIDENTIFIABLE


@pytest.mark.parametrize("case", CASES)
def test_imaginary_round_trip(rng, case):
    cfg = random_config(rng, case=case)
    times = np.linspace(0, 6, 10)
    _, states, rec = simulate(cfg, x_state(rng), times)
    for i, rho in enumerate(states):
        im_a, im_b = reconstruct_im_coherences(ReconstructionInput.from_record(rec, i, cfg))
        assert abs(im_a.value - rho.alpha.imag) < 1e-9
        if cfg.g_off:
            assert abs(im_b.value - rho.beta.imag) < 1e-9


def test_zero_coupling_inconsistent_combination_raises(rng):
    cfg = random_config(rng)
    inp = state_input(x_state(rng), cfg, g_off=0.0)
    with pytest.raises(InconsistentDataError):
        reconstruct_im_coherences(inp)


def test_real_round_trip_general(rng):
    for _ in range(5):
        cfg = random_config(rng)
        _, states, rec = simulate(cfg, x_state(rng), np.linspace(0, 6, 10))
        for i, rho in enumerate(states):
            re_a, re_b = reconstruct_re_coherences(ReconstructionInput.from_record(rec, i, cfg))
            assert abs(re_a.value - rho.alpha.real) < 1e-8
            assert abs(re_b.value - rho.beta.real) < 1e-8


def test_zero_detuning_combination_vanishes(rng):
    cfg = random_config(rng, case="delta0_E0")
    _, states, rec = simulate(cfg, basis_state("00"), np.linspace(0, 6, 10))
    for i in range(len(rec)):
        inp = ReconstructionInput.from_record(rec, i, cfg)
        a, b = re_coherence_rhs(inp)
        assert abs(a) < 1e-10 and abs(b) < 1e-10
        re_a, re_b = reconstruct_re_coherences(inp)
        assert re_a.status == UNIDENTIFIABLE and re_b.status == UNIDENTIFIABLE


def test_zero_detuning_hides_real_coherence(rng):
    cfg = random_config(rng, case="delta0_E0")
    rho = np.diag([0.25, 0.25, 0.25, 0.25]).astype(complex)
    rho[1, 2] = rho[2, 1] = 0.2
    inp = state_input(rho, cfg)
    assert abs(re_coherence_rhs(inp)[0]) < 1e-12
    assert reconstruct_re_coherences(inp)[0].status == UNIDENTIFIABLE
    # data not generated by the model fail the consistency check
    bad = ReconstructionInput(inp.rates_l, inp.rates_r, inp.I_L[:2] + (inp.I_L[2] + 1e-3,), inp.I_R,
                              inp.S_LR, inp.g_res, inp.g_off, inp.delta, inp.energy, inp.gamma_tilde)
    with pytest.raises(InconsistentDataError):
        reconstruct_re_coherences(bad)


def test_goff0_beta_not_generated(rng):
    cfg = random_config(rng, case="goff0")
    _, states, rec = simulate(cfg, basis_state("00"), np.linspace(0, 5, 10))
    for i, rho in enumerate(states):
        st = reconstruct_state(ReconstructionInput.from_record(rec, i, cfg), "full", cfg)
        assert st.coherences["Im beta"].status == NOT_GENERATED
        assert st.coherences["Re beta"].status == NOT_GENERATED
        assert abs(st.coherences["Re alpha"].value - rho.alpha.real) < 1e-8
        assert abs(st.coherences["Im alpha"].value - rho.alpha.imag) < 1e-9


def test_missing_derivatives_rejected(rng):
    cfg = random_config(rng)
    inp = state_input(random_density(2, rng), cfg, k_max=0)
    with pytest.raises(ValidationError):
        reconstruct_im_coherences(inp)
    with pytest.raises(ValidationError):
        reconstruct_state(inp, "bogus")


# -- end-to-end closure -------------------------------------------------------

@pytest.mark.parametrize("case", CASES)
def test_reconstructed_elements_match_simulation(rng, case):
    cfg = random_config(rng, case=case)
    _, states, rec = simulate(cfg, x_state(rng), np.linspace(0, 8, 10))
    for st, rho in zip(reconstruct_record(rec, cfg), states):
        assert np.max(np.abs(np.array(st.populations.astuple()) - np.diag(rho.matrix).real)) < 1e-8
        for key, el in st.coherences.items():
            if el.status == RECONSTRUCTED:
                part, name = key.split()
                z = getattr(rho, name)
                assert abs(el.value - (z.imag if part == "Im" else z.real)) < 1e-8, key


def test_full_state_from_x_state_general(rng):
    cfg = random_config(rng)
    _, states, rec = simulate(cfg, x_state(rng), np.linspace(0, 4, 5))
    for st, rho in zip(reconstruct_record(rec, cfg), states):
        assert np.max(np.abs(st.matrix() - rho.matrix)) < 1e-8
        assert st.density() is not None


def test_drive_downgrades_to_populations(rng):
    cfg = random_config(rng, drive=True)
    _, states, rec = simulate(cfg, basis_state("00"), np.linspace(0, 3, 4))
    st = reconstruct_state(ReconstructionInput.from_record(rec, 2, cfg), "full", cfg)
    assert any("drive" in f for f in st.flags)
    assert np.allclose(st.populations.astuple(), np.diag(states[2].matrix).real, atol=1e-10)
    assert st.coherences["Im x"].status == UNIDENTIFIABLE


def test_redundant_third_derivative(rng):
    cfg = random_config(rng)
    times = np.linspace(0, 5, 10)
    _, _, rec3 = simulate(cfg, x_state(rng), times, k_max=3)
    rec2 = TransportRecord(rec3.times, rec3.I_L[:, :3], rec3.I_R[:, :3], rec3.I_LR[:, :3],
                           rec3.A_L, rec3.A_R)
    for a, b in zip(reconstruct_record(rec3, cfg), reconstruct_record(rec2, cfg)):
        assert np.max(np.abs(a.matrix() - b.matrix())) < 1e-12
    # directions: adding L^+^3 n_j to the k <= 2 generators reaches nothing new
    L = build_lindbladian(cfg)

    def reach(k):
        gens = [v for j in (0, 1) for v in krylov_power_vectors(L, number_op(j, 2), k)]
        gens.append(occupation_projector((0, 1), 2).reshape(-1))
        Q = span_of(gens)
        return direction_membership(ObservableSpace(Q, {}, {}), 2)

    assert reach(2) == reach(3)
    assert sum(reach(2).values()) == 8


# -- steady state -------------------------------------------------------------

def test_steady_state_qst_matches_steady_state(rng):
    cfg = random_config(rng, case="goff0")
    ss = steady_state(build_lindbladian(cfg))
    res = steady_state_qst(state_input(ss, cfg, k_max=0))
    assert np.allclose(res.state.populations.astuple(), np.diag(ss.matrix).real, atol=1e-9)
    assert res.state.coherences["Im alpha"].value == pytest.approx(ss.alpha.imag, abs=1e-9)
    assert res.state.coherences["Re alpha"].value == pytest.approx(ss.alpha.real, abs=1e-8)


def test_gamma_tilde_recovery_over_configs(rng):
    unique = 0
    for _ in range(40):
        cfg = random_config(rng, case="goff0")
        ss = steady_state(build_lindbladian(cfg))
        inp = state_input(ss, cfg, k_max=0, gamma_tilde=None)
        if abs(inp.I_L[0]) < 1e-6:
            continue
        res = steady_state_qst(inp)
        err = np.abs(np.array(res.gamma_tilde_candidates) / cfg.Gamma_tilde - 1)
        assert err.min() < 1e-8
        if res.ambiguous:
            assert res.state.flags
        else:
            unique += 1
            assert res.gamma_tilde == pytest.approx(cfg.Gamma_tilde, rel=1e-8)
            assert res.state.coherences["Re alpha"].value == pytest.approx(ss.alpha.real, abs=1e-8)
    assert unique >= 10


def test_unbiased_steady_state_has_no_coherence():
    cfg = SystemConfig.two_qubit(eps_l=0.3, eps_r=0.1, rates_l=(0.2, 0.5), rates_r=(0.2, 0.5), g_res=0.4,
                                 gamma_z=(0.05, 0.05))
    ss = steady_state(build_lindbladian(cfg))
    res = steady_state_qst(state_input(ss, cfg, k_max=0))
    assert abs(res.state.coherences["Im alpha"].value) < 1e-12
    assert abs(res.state.coherences["Re alpha"].value) < 1e-10


def test_steady_state_zero_current_without_gamma_tilde_raises():
    cfg = SystemConfig.two_qubit(eps_l=0.3, eps_r=0.1, rates_l=(0.2, 0.5), rates_r=(0.2, 0.5), g_res=0.4)
    ss = steady_state(build_lindbladian(cfg))
    with pytest.raises(Exception, match="inconsistent"):
        steady_state_qst(state_input(ss, cfg, k_max=0, gamma_tilde=None))


# -- completeness -------------------------------------------------------------

UNREACHABLE = {"Im x", "Re x", "Im y", "Re y", "Im v", "Re v", "Im z", "Re z"}


def test_completeness_generic(rng):
    rep = completeness_report(random_config(rng))
    assert {k for k, v in rep.reachable.items() if not v} == UNREACHABLE
    assert rep.element_statuses() == {"alpha": "reconstructed", "beta": "reconstructed",
                                      "v": "not_generated", "x": "not_generated",
                                      "y": "not_generated", "z": "not_generated"}


def test_completeness_drive(rng):
    assert completeness_report(random_config(rng, drive=True)).complete


def test_completeness_table_rows(rng):
    r = completeness_report(random_config(rng, case="delta0_E0")).reachable
    assert r["Im alpha"] and r["Im beta"] and not r["Re alpha"] and not r["Re beta"]
    r = completeness_report(random_config(rng, case="goff0")).reachable
    assert r["Im alpha"] and r["Re alpha"] and not r["Im beta"] and not r["Re beta"]


def test_completeness_zero_generator(rng):
    cfg = random_config(rng)
    rep = completeness_report(cfg, Superoperator(np.zeros((16, 16)), "lindbladian"))
    assert rep.observable_dimension == 3
    assert {k for k, v in rep.reachable.items() if v} == {"r00", "r01", "r10", "r11"}
