"""Allocation LP: frozen examples plus oracle-backed property tests.

solve_lp_bruteforce (vertex enumeration) is the independent oracle; the
closed-form mode/classification functions must agree with it everywhere.
"""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pss_lab import (
    BoundaryCase,
    DegenerateMode,
    NotCriticallyLoaded,
    NotProductForm,
    Switching,
    SystemParams,
    analyze_lp,
    canonical_relabeling,
    check_ehtc,
    check_nondegeneracy,
    classify_switching,
    compute_modes,
    factor_product_form,
    priority_classes,
    solve_lp_bruteforce,
)
from pss_lab.lp import relabeled


def pf_params(alpha, beta1, r, **kw):
    """Critically loaded product-form instance with lam[0]/alpha[0] = r."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.array([beta1, 1.0 - beta1])
    lam = np.array([r * alpha[0], (1.0 - r) * alpha[1]])
    mu = np.outer(alpha, beta)
    return SystemParams(lam=lam, mu=mu, **kw)


SS = SystemParams(lam=(0.8, 2.4), mu=((1.0, 1.0), (2.0, 2.0)))
CS = SystemParams(lam=(0.4, 0.6), mu=((0.3, 0.7), (0.3, 0.7)))


class TestBruteForce:
    def test_ss_instance_critical_two_vertices(self):
        rho, verts = solve_lp_bruteforce(SS)
        assert rho == pytest.approx(1.0, abs=1e-9)
        assert len(verts) == 2

    def test_cs_instance_critical_two_vertices(self):
        rho, verts = solve_lp_bruteforce(CS)
        assert rho == pytest.approx(1.0, abs=1e-9)
        assert len(verts) == 2

    def test_subcritical_scales_linearly(self):
        half = SystemParams(lam=0.5 * CS.lam, mu=CS.mu)
        rho, _ = solve_lp_bruteforce(half)
        assert rho == pytest.approx(0.5, abs=1e-9)


class TestProductForm:
    def test_ss_factors(self):
        pf = factor_product_form(SS.mu)
        assert pf.alpha == pytest.approx([2.0, 4.0])
        assert pf.beta == pytest.approx([0.5, 0.5])

    def test_cs_factors(self):
        pf = factor_product_form(CS.mu)
        assert pf.alpha == pytest.approx([1.0, 1.0])
        assert pf.beta == pytest.approx([0.3, 0.7])

    def test_rank_two_rejected(self):
        with pytest.raises(NotProductForm):
            factor_product_form(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_beta_sums_to_one_exactly(self):
        pf = factor_product_form(np.array([[0.31, 0.57], [0.62, 1.14]]))
        assert pf.beta[0] + pf.beta[1] == 1.0

    def test_any_column_gives_same_factors(self):
        # the factorization is column-independent after normalization
        mu = np.outer([1.3, 2.6], [0.4, 0.6])
        pf = factor_product_form(mu)
        alpha2 = mu[:, 1] / pf.beta[1]
        assert alpha2 == pytest.approx(pf.alpha, rel=1e-12)


class TestLoadAndDegeneracy:
    def test_critical_load_true(self):
        assert check_ehtc(SS, factor_product_form(SS.mu))

    def test_critical_load_false(self):
        p = SystemParams(lam=(1.0, 1.0), mu=SS.mu)
        assert not check_ehtc(p, factor_product_form(p.mu))

    def test_critical_load_matches_oracle(self):
        rho, _ = solve_lp_bruteforce(SS)
        assert abs(rho - 1.0) <= 1e-9

    def test_nondegenerate_instances(self):
        assert check_nondegeneracy(SS)
        assert check_nondegeneracy(CS)

    def test_degenerate_rate_match(self):
        p = SystemParams(lam=(1.0, 2.4), mu=SS.mu)
        assert not check_nondegeneracy(p)


class TestModes:
    def test_ss_modes(self):
        m1, m2 = compute_modes(SS, factor_product_form(SS.mu))
        assert m1.xi == pytest.approx(np.array([[0.0, 0.8], [1.0, 0.2]]))
        assert m1.nonbasic == (0, 0)
        assert m2.xi == pytest.approx(np.array([[0.8, 0.0], [0.2, 1.0]]))
        assert m2.nonbasic == (0, 1)

    def test_cs_modes(self):
        m1, m2 = compute_modes(CS, factor_product_form(CS.mu))
        assert m1.xi == pytest.approx(np.array([[0.0, 4 / 7], [1.0, 3 / 7]]))
        assert m1.nonbasic == (0, 0)
        assert m2.xi == pytest.approx(np.array([[1.0, 1 / 7], [0.0, 6 / 7]]))
        assert m2.nonbasic == (1, 0)

    def test_mode_labels(self):
        m1, _ = compute_modes(SS, factor_product_form(SS.mu))
        # nonbasic (0,0): class 0 and server 0 each keep a single activity
        assert (m1.i1, m1.i2, m1.k1, m1.k2) == (0, 1, 0, 1)
        assert m1.xi[m1.i2, m1.k1] == 1.0

    def test_degenerate_mode_raises(self):
        p = SystemParams(lam=(1.0, 2.0), mu=SS.mu)  # lam[0] == mu[0,0]
        with pytest.raises(DegenerateMode):
            compute_modes(p, factor_product_form(p.mu))


class TestSwitching:
    def test_ss(self):
        assert classify_switching(SS, factor_product_form(SS.mu)) is Switching.SERVER_SWITCHED

    def test_cs(self):
        assert classify_switching(CS, factor_product_form(CS.mu)) is Switching.CLASS_SWITCHED

    def test_boundary_raises(self):
        p = SystemParams(lam=(1.0, 2.0), mu=SS.mu)  # max lam/alpha = 0.5 = max beta
        with pytest.raises(BoundaryCase):
            classify_switching(p, factor_product_form(p.mu))


class TestPriorities:
    def test_heavier_class_wins(self):
        pf = factor_product_form(SS.mu)
        p = SystemParams(lam=SS.lam, mu=SS.mu, h=(1.0, 1.0))
        assert priority_classes(p, pf) == (1, 0)

    def test_tie_resolves_to_class_zero(self):
        pf = factor_product_form(SS.mu)
        p = SystemParams(lam=SS.lam, mu=SS.mu, h=(2.0, 1.0))  # 2*2 == 1*4
        assert priority_classes(p, pf) == (0, 1)

    def test_clear_winner(self):
        pf = factor_product_form(SS.mu)
        p = SystemParams(lam=SS.lam, mu=SS.mu, h=(3.0, 1.0))
        assert priority_classes(p, pf) == (0, 1)


class TestRelabeling:
    def test_swap_classes(self):
        m1, _ = compute_modes(SS, factor_product_form(SS.mu))
        cp, sp = canonical_relabeling(m1)
        assert cp == (1, 0) and sp == (0, 1)
        assert relabeled(m1) == pytest.approx(np.array([[1.0, 0.2], [0.0, 0.8]]))

    def test_identity_when_canonical(self):
        _, m2 = compute_modes(CS, factor_product_form(CS.mu))
        # CS mode2 nonbasic is (1,0): already canonical
        assert canonical_relabeling(m2) == ((0, 1), (0, 1))

    def test_relabeled_load_exceeds_speed(self):
        pf = factor_product_form(SS.mu)
        for mode in compute_modes(SS, pf):
            cp, sp = canonical_relabeling(mode)
            lam_over_alpha = SS.lam[cp[0]] / pf.alpha[cp[0]]
            assert lam_over_alpha > pf.beta[sp[0]]


# hypothesis draws stay clear of the boundary (|r - beta_k| > 2e-3) so every
# instance is nondegenerate and classifiable
good_alpha = st.floats(0.3, 3.0)
good_beta = st.floats(0.15, 0.85)
good_r = st.floats(0.05, 0.95)


@st.composite
def instances(draw):
    a0, a1 = draw(good_alpha), draw(good_alpha)
    b1 = draw(good_beta)
    r = draw(good_r)
    assume(abs(r - b1) > 2e-3 and abs(r - (1.0 - b1)) > 2e-3)
    return pf_params((a0, a1), b1, r)


@given(instances())
@settings(max_examples=100, deadline=None)
def test_modes_are_oracle_vertices(params):
    pf = factor_product_form(params.mu)
    m1, m2 = compute_modes(params, pf)
    rho, verts = solve_lp_bruteforce(params)
    assert abs(rho - 1.0) <= 1e-9
    for mode in (m1, m2):
        assert any(np.allclose(mode.xi, v, atol=1e-9) for v in verts)
    # every optimal vertex sits on the segment between the two modes
    d = (m2.xi - m1.xi).ravel()
    for v in verts:
        w = (v - m1.xi).ravel()
        t = float(w @ d) / float(d @ d)
        assert -1e-9 <= t <= 1 + 1e-9
        assert np.abs(w - t * d).max() <= 1e-9


@given(instances())
@settings(max_examples=100, deadline=None)
def test_columns_stochastic_and_one_nonbasic(params):
    pf = factor_product_form(params.mu)
    for mode in compute_modes(params, pf):
        assert np.abs(mode.xi.sum(axis=0) - 1.0).max() <= 1e-12
        assert np.all((mode.xi >= 0.0) & (mode.xi <= 1.0))
        assert int(np.sum(mode.xi == 0.0)) == 1
        assert mode.xi[mode.nonbasic] == 0.0


@given(instances())
@settings(max_examples=100, deadline=None)
def test_switching_matches_nonbasic_geometry(params):
    pf = factor_product_form(params.mu)
    m1, m2 = compute_modes(params, pf)
    sw = classify_switching(params, pf)
    if sw is Switching.SERVER_SWITCHED:
        assert m1.nonbasic[0] == m2.nonbasic[0] and m1.nonbasic[1] != m2.nonbasic[1]
    else:
        assert m1.nonbasic[1] == m2.nonbasic[1] and m1.nonbasic[0] != m2.nonbasic[0]


@given(instances())
@settings(max_examples=100, deadline=None)
def test_relabeled_mode_is_canonical(params):
    pf = factor_product_form(params.mu)
    for mode in compute_modes(params, pf):
        xi = relabeled(mode)
        assert xi[0, 0] == 1.0 and xi[1, 0] == 0.0
        cp, sp = canonical_relabeling(mode)
        assert params.lam[cp[0]] / pf.alpha[cp[0]] > pf.beta[sp[0]]


@given(instances(), st.booleans(), st.booleans())
@settings(max_examples=100, deadline=None)
def test_modes_track_input_relabeling(params, swap_classes, swap_servers):
    cp = (1, 0) if swap_classes else (0, 1)
    sp = (1, 0) if swap_servers else (0, 1)
    permuted = SystemParams(
        lam=params.lam[list(cp)], mu=params.mu[np.ix_(cp, sp)]
    )
    orig = sorted(
        tuple(m.xi[np.ix_(cp, sp)].ravel())
        for m in compute_modes(params, factor_product_form(params.mu))
    )
    new = sorted(
        tuple(m.xi.ravel())
        for m in compute_modes(permuted, factor_product_form(permuted.mu))
    )
    for x, y in zip(orig, new):
        assert np.allclose(x, y, atol=1e-12)


def test_nonproduct_critical_instances_unique_vertex():
    rng = np.random.default_rng(20250819)
    found = 0
    while found < 50:
        mu = rng.uniform(0.2, 3.0, size=(2, 2))
        det = mu[0, 0] * mu[1, 1] - mu[0, 1] * mu[1, 0]
        if abs(det) < 0.05 * np.sum(mu * mu):
            continue
        lam = rng.uniform(0.3, 2.0, size=2)
        rho0, _ = solve_lp_bruteforce(SystemParams(lam=lam, mu=mu))
        critical = SystemParams(lam=lam / rho0, mu=mu)
        rho, verts = solve_lp_bruteforce(critical)
        assert abs(rho - 1.0) <= 1e-9
        assert len(verts) == 1
        found += 1


def test_analyze_pipeline_errors():
    with pytest.raises(NotProductForm):
        analyze_lp(SystemParams(lam=(1.0, 1.0), mu=((1.0, 2.0), (2.0, 1.0))))
    with pytest.raises(NotCriticallyLoaded):
        analyze_lp(SystemParams(lam=(1.0, 1.0), mu=SS.mu))
    with pytest.raises(DegenerateMode):
        analyze_lp(SystemParams(lam=(1.0, 2.0), mu=SS.mu))


def test_analyze_assembles_structure():
    s = analyze_lp(SS)
    assert s.rho_star == 1.0
    assert s.switching is Switching.SERVER_SWITCHED
    assert (s.p, s.q) == (1, 0)
    assert s.mode1.nonbasic != s.mode2.nonbasic
