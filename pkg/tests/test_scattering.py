import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bidirq.errors import (
    EpsilonTooLarge,
    GhostState,
    NoOpenChannelAtE,
    NonConvergent,
    NonDiagonalizable,
    NotPseudoHermitian,
    SingularResolvent,
)
from bidirq.krein import BlockOperator, KreinSignature, maxabs, random_pseudo_hermitian
from bidirq.models import CouplingConstants, VacuumParams, vacuum_hamiltonian
from bidirq.scattering import (
    Channel,
    ConstantDensity,
    PoleHitWarning,
    TabulatedDensity,
    canonical_form,
    green_function,
    on_shell,
    open_channels,
    s_matrix,
    transition_operator,
    transition_rate,
    unitarity_defect,
)


def op(mat, nf, nb):
    return BlockOperator(np.asarray(mat, dtype=complex), KreinSignature(nf, nb))


def pseudo_hermitian_from_upper(entries, sig):
    """Fill mirror entries H[j, i] = a_i a_j conj(H[i, j])."""
    n = sig.n
    a = sig.signs
    h = np.zeros((n, n), dtype=complex)
    for (i, j), v in entries.items():
        h[i, j] += v
        if i != j:
            h[j, i] += a[i] * a[j] * np.conj(v)
    return BlockOperator(h, sig)


def wide_band_model(h0_diag, nf, channels):
    """channels: list of (name, state index, density)."""
    sig = KreinSignature(nf, len(h0_diag) - nf)
    model = canonical_form(BlockOperator(np.diag(np.asarray(h0_diag, complex)), sig))
    chans = [
        Channel(name, "F" if idx < nf else "B", (model.slot_of_state(idx),), dens) for name, idx, dens in channels
    ]
    return model.with_channels(chans)


# --------------------------------------------------------------------------
# canonical form


def test_diagonal_h0_gives_permutation():
    H0 = op(np.diag([0.5, -1.0, 0.2, 0.1]), 2, 2)
    m = canonical_form(H0)
    assert m.sectors == ("RF", "RF", "RB", "RB")
    assert np.allclose(m.eigenvalues, [-1.0, 0.5, 0.1, 0.2])
    T = m.basis_transform
    assert np.allclose(np.abs(T), np.abs(T).round())
    assert sorted(np.argmax(np.abs(T), axis=0)) == [0, 1, 2, 3]


def test_degenerate_f_and_b_levels_kept_apart():
    m = canonical_form(op(np.diag([0.3, 0.3, 0.3]), 2, 1))
    assert m.sectors == ("RF", "RF", "RB")
    assert m.source_index == (0, 1, 2)
    assert np.allclose(m.basis_transform, np.eye(3))


def test_two_by_two_closed_pair():
    a, ap, b = 0.4, 0.1, 0.9
    m = canonical_form(op([[a, -b], [b, ap]], 1, 1))
    assert m.sectors == ("N1", "N2")
    disc = (a - ap) ** 2 / 4 - b**2
    lam = (a + ap) / 2 - 1j * np.sqrt(-disc)
    assert abs(m.eigenvalues[0] - lam) <= 1e-12
    assert abs(m.eigenvalues[1] - np.conj(lam)) <= 1e-12
    T = m.basis_transform
    gram = T.conj().T @ np.diag([1, -1]) @ T
    u12, u21 = gram[0, 1], gram[1, 0]
    assert abs(gram[0, 0]) <= 1e-12 and abs(gram[1, 1]) <= 1e-12
    assert abs(u21 * u12 - 1) <= 1e-12
    # conjugate pair intertwined by the metric blocks
    assert abs(u21 * m.eigenvalues[0] * u12 - np.conj(m.eigenvalues[1])) <= 1e-12


def test_vacuum_hamiltonian_has_two_closed_channels():
    p = VacuumParams(CouplingConstants(1.0, 0.4, 0.8), 0.3, 1.5, 1.0, 0.2, 0.0)
    M, _ = vacuum_hamiltonian(p)
    m = canonical_form(M)
    assert m.sectors == ("N1", "N2")
    assert abs(m.eigenvalues[0] - (p.e_bar - 1j * p.decay_rate)) <= 1e-12


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_round_trip_random(nf, nb, seed):
    rng = np.random.default_rng(seed)
    sig = KreinSignature(nf, nb)
    H0 = random_pseudo_hermitian(sig, rng)
    m = canonical_form(H0)
    T = m.basis_transform
    assert maxabs(T @ np.diag(m.eigenvalues) @ np.linalg.inv(T) - H0.data) <= 1e-9
    assert maxabs(T.conj().T @ np.diag(sig.signs) @ T - m.eta_canonical()) <= 1e-9
    assert m.count("N1") == m.count("N2")
    assert m.count("RF") + m.count("N1") == nf


def test_exceptional_point_rejected():
    with pytest.raises((NonDiagonalizable, GhostState)):
        canonical_form(op([[1.0, -1.0], [1.0, -1.0]], 1, 1))


def test_non_pseudo_hermitian_h0_rejected():
    with pytest.raises(NotPseudoHermitian):
        canonical_form(op([[0, 1], [1, 0]], 1, 1))


def test_slot_of_state_requires_eigenvector():
    m = canonical_form(op([[0.0, 0.2, 0], [0.2, 0.5, 0], [0, 0, 1.0]], 2, 1))
    assert m.slot_of_state(2) == 2
    with pytest.raises(ValueError):
        m.slot_of_state(0)


# --------------------------------------------------------------------------
# Green's function


def test_green_forward_and_backward_levels():
    eps, E = 1e-3, 0.2
    gf = green_function(canonical_form(op([[0.5]], 1, 0)), E, eps)
    assert gf[0, 0] == pytest.approx(1 / (E - 0.5 + 1j * eps))
    gb = green_function(canonical_form(op([[0.5]], 0, 1)), E, eps)
    assert gb[0, 0] == pytest.approx(1 / (E - 0.5 - 1j * eps))


def closed_pair_h0():
    sig = KreinSignature(2, 2)
    h = np.zeros((4, 4))
    h[0, 0], h[2, 2] = 0.3, -0.2
    h[1, 1] = h[3, 3] = 0.1
    h[1, 3], h[3, 1] = -0.6, 0.6
    return BlockOperator(h, sig)


def test_green_matches_dense_inverse_on_real_sector():
    H0 = closed_pair_h0()
    sig, h = H0.signature, H0.data
    m = canonical_form(H0)
    assert m.count("N1") == 1
    E, eps = 0.05, 1e-4
    G = m.to_original(green_function(m, E, eps))
    # dense oracle with the eps shift on the open (decoupled) levels only
    shift = np.diag([1.0, 0.0, -1.0, 0.0])
    ref = np.linalg.inv(E * np.eye(4) + 1j * eps * shift - h)
    assert maxabs(G - ref) <= 1e-12 * maxabs(ref)


def test_green_converges_to_full_eta_shift():
    H0 = closed_pair_h0()
    sig, h = H0.signature, H0.data
    m = canonical_form(H0)
    E = 0.05
    err = []
    for eps in (1e-4, 1e-6):
        G = m.to_original(green_function(m, E, eps))
        ref = np.linalg.inv(E * np.eye(4) + 1j * eps * np.diag(sig.signs) - h)
        err.append(maxabs(G - ref))
    assert err[1] <= 1e-5 and err[1] / err[0] == pytest.approx(1e-2, rel=0.05)


def test_epsilon_too_large_and_pole_hit():
    m = canonical_form(op([[0.0, -0.5], [0.5, 0.0]], 1, 1))
    with pytest.raises(EpsilonTooLarge):
        green_function(m, 0.0, 0.25)
    green_function(m, 0.0, 0.2)
    m2 = canonical_form(op([[0.5]], 1, 0))
    with pytest.warns(PoleHitWarning):
        green_function(m2, 0.5 + 1e-9, 1e-3)
    with pytest.raises(ValueError):
        green_function(m2, 0.0, 0.0)


def test_resolvent_identity_on_band():
    """Discretized (G - G^dag) against a smooth weight reproduces -2 pi i rho f(E)."""
    n, lo, hi = 800, -4.0, 4.0
    step = (hi - lo) / n
    lev = lo + (np.arange(n) + 0.5) * step
    m = canonical_form(op(np.diag(lev), n, 0))
    E, eps = 0.3, 3 * step
    g = np.diag(green_function(m, E, eps))
    f = np.exp(-m.eigenvalues.real**2)
    total = np.sum((g - np.conj(g)) * f)
    expected = -2j * np.pi * np.exp(-E**2) / step
    assert abs(total - expected) / abs(expected) <= 0.05


# --------------------------------------------------------------------------
# transition operator


def small_model():
    h0 = np.diag([0.4, -0.3, 0.8])
    return canonical_form(op(h0, 2, 1))


def test_zero_perturbation():
    m = small_model()
    T = transition_operator(m, op(np.zeros((3, 3)), 2, 1), 0.1, 1e-3)
    assert maxabs(T.matrix) == 0


def test_born_limit():
    m = small_model()
    sig = m.signature
    H1 = random_pseudo_hermitian(sig, np.random.default_rng(1))
    lam, E, eps = 1e-4, 0.1, 1e-2
    H1s = BlockOperator(lam * H1.data, sig)
    T = transition_operator(m, H1s, E, eps).matrix
    h1c = m.to_canonical(H1s)
    gnorm = maxabs(green_function(m, E, eps))
    assert maxabs(T - h1c) / maxabs(h1c) <= 2 * sig.n * maxabs(h1c) * gnorm


def test_rank_one_geometric_series():
    m = small_model()
    sig = m.signature
    u = np.array([0.3, 0.5 - 0.2j, 0.4])
    c = 0.7
    h1 = c * np.outer(u, u.conj() * sig.signs)
    H1 = BlockOperator(h1, sig)
    E, eps = 0.2, 1e-3
    G = m.to_original(green_function(m, E, eps))
    w = sig.signs * u
    ref = h1 / (1 - c * w.conj() @ G @ u)
    T = m.to_original(transition_operator(m, H1, E, eps).matrix)
    assert maxabs(T - ref) <= 1e-10 * maxabs(ref)


def test_fixed_point_residual_reported():
    m = small_model()
    H1 = random_pseudo_hermitian(m.signature, np.random.default_rng(2), scale=0.3)
    T = transition_operator(m, H1, 0.1, 1e-2)
    assert T.method == "direct" and T.residual <= 1e-12


def test_neumann_matches_direct():
    m = small_model()
    H1 = random_pseudo_hermitian(m.signature, np.random.default_rng(3), scale=0.02)
    direct = transition_operator(m, H1, 0.05, 0.05)
    neu = transition_operator(m, H1, 0.05, 0.05, "neumann")
    assert neu.method == "neumann" and neu.iterations > 1
    assert maxabs(neu.matrix - direct.matrix) <= 1e-10


def test_neumann_reports_divergence():
    m = small_model()
    H1 = random_pseudo_hermitian(m.signature, np.random.default_rng(4), scale=5.0)
    with pytest.raises(NonConvergent) as exc:
        transition_operator(m, H1, 0.35, 1e-3, "neumann")
    assert exc.value.spectral_radius >= 1


def test_unknown_method_and_bad_perturbation():
    m = small_model()
    with pytest.raises(ValueError):
        transition_operator(m, op(np.zeros((3, 3)), 2, 1), 0.0, 1e-3, "magic")
    bad = op([[0, 0, 1], [0, 0, 0], [1, 0, 0]], 2, 1)
    with pytest.raises(NotPseudoHermitian):
        transition_operator(m, bad, 0.0, 1e-3)


def test_singular_resolvent():
    # E on a real level with a tiny eps: I - G H1 blows past the cap
    m = canonical_form(op(np.diag([0.0, 1.0]), 2, 0))
    H1 = op([[1e-3, 0], [0, 0]], 2, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoleHitWarning)
        with pytest.raises(SingularResolvent):
            transition_operator(m, H1, 1e-3, 1e-16, cond_cap=1e8)


# --------------------------------------------------------------------------
# S-matrix and defect


def test_s_is_identity_without_coupling():
    m = wide_band_model([0.0, 0.2], 1, [("F", 0, ConstantDensity(1.0))])
    assert np.allclose(s_matrix(m, op(np.zeros((2, 2)), 1, 1), 0.1, 1e-12), [[1.0]])
    assert unitarity_defect(m, op(np.zeros((2, 2)), 1, 1), 0.1, 1e-12) == 0


def test_single_channel_first_order_phase():
    rho, lam = 0.7, 1e-4
    m = wide_band_model([0.0], 1, [("F", 0, ConstantDensity(rho))])
    S = s_matrix(m, op([[lam]], 1, 0), 0.3, 1e-12)
    assert abs(abs(S[0, 0]) - 1) <= 1e-14
    assert abs(S[0, 0] - (1 - 2j * np.pi * rho * lam)) <= 10 * (2 * np.pi * rho * lam) ** 2


def forward_backward_model(g=0.3):
    sig = KreinSignature(2, 2)
    H1 = pseudo_hermitian_from_upper({(2, 0): g, (1, 0): 0.2, (3, 2): 0.1, (3, 1): 0.05j}, sig)
    m = wide_band_model(
        [0.0, 0.25, 0.0, -0.35],
        2,
        [("F", 0, ConstantDensity(1.0)), ("B", 2, TabulatedDensity([-1, 1], [0.5, 1.5]))],
    )
    return m, H1


def test_forward_backward_unitarity():
    m, H1 = forward_backward_model()
    for E in np.linspace(-0.9, 0.9, 13):
        S = s_matrix(m, H1, E, 1e-12)
        assert maxabs(S @ S.conj().T - np.eye(2)) <= 1e-8
        assert maxabs(S.conj().T @ S - np.eye(2)) <= 1e-8
        assert abs(abs(S[1, 0]) ** 2 - (1 - abs(S[0, 0]) ** 2)) <= 1e-8


def test_defect_is_scaled_unitarity_error():
    m, H1 = forward_backward_model()
    sh = on_shell(m, H1, 0.1, 1e-6)
    S = sh.s
    assert maxabs(S @ S.conj().T - np.eye(2)) == pytest.approx(2 * np.pi * maxabs(sh.defect), rel=1e-6)


def test_closed_channels_never_indexed():
    sig = KreinSignature(2, 2)
    h0 = np.zeros((4, 4), complex)
    h0[1, 1] = h0[3, 3] = 0.2
    h0[1, 3], h0[3, 1] = -0.5, 0.5
    model = canonical_form(BlockOperator(h0, sig))
    chans = [Channel("F", "F", (model.slot_of_state(0),), ConstantDensity(1.0)),
             Channel("B", "B", (model.slot_of_state(2),), ConstantDensity(1.0))]
    model = model.with_channels(chans)
    H1 = pseudo_hermitian_from_upper({(1, 0): 0.3, (3, 2): 0.2, (2, 0): 0.1}, sig)
    S = s_matrix(model, H1, 0.1, 1e-12)
    assert S.shape == (2, 2)
    assert maxabs(S @ S.conj().T - np.eye(2)) <= 1e-12


def test_no_open_channel():
    m = wide_band_model([0.0], 1, [("F", 0, ConstantDensity(1.0, -1, 1))])
    assert open_channels(m, 2.0) == ()
    with pytest.raises(NoOpenChannelAtE):
        s_matrix(m, op([[0.1]], 1, 0), 2.0, 1e-12)


def band_model(g, n=400, lo=-2.0, hi=2.0):
    step = (hi - lo) / n
    lev = lo + (np.arange(n) + 0.5) * step
    sig = KreinSignature(1, n)
    H0 = BlockOperator(np.diag(np.r_[0.0, lev]).astype(complex), sig)
    h1 = np.zeros((n + 1, n + 1), complex)
    h1[1:, 0] = g
    h1[0, 1:] = -g
    model = canonical_form(H0)
    slots = tuple(model.slot_of_state(k) for k in range(1, n + 1))
    ch = Channel("bath", "B", slots, ConstantDensity(1 / step, lo, hi), "band")
    return model.with_channels([ch]), BlockOperator(h1, sig), step


def test_band_defect_decreases_under_eps_halving():
    m, H1, step = band_model(5e-4)
    for E in (-0.7, 0.45, 1.1):
        d = [unitarity_defect(m, H1, E, k * step) for k in (12, 6, 3)]
        assert d[0] > d[1] > d[2]


def test_band_defect_second_order_in_coupling():
    d = []
    for g in (0.004, 0.002):
        m, H1, step = band_model(g)
        d.append(unitarity_defect(m, H1, 0.5, 3 * step))
    assert d[1] / d[0] == pytest.approx(0.25, rel=0.1)


def test_golden_rule_rate():
    g = 5e-4
    m, H1, step = band_model(g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoleHitWarning)
        rate = transition_rate(m, H1, 0.0, "0", "bath", 3 * step)
    assert rate == pytest.approx(2 * np.pi * g**2 / step, rel=0.05)


def test_rate_zero_without_coupling_and_distinct_endpoints():
    m, H1, step = band_model(0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PoleHitWarning)
        assert transition_rate(m, H1, 0.0, "0", "bath", 3 * step) == 0
    with pytest.raises(ValueError):
        transition_rate(m, H1, 0.0, "bath", "bath", 3 * step)
    with pytest.raises(KeyError):
        transition_rate(m, H1, 0.0, "nope", "bath", 3 * step)


def test_tabulated_density_validation():
    with pytest.raises(ValueError):
        TabulatedDensity([0, 0], [1, 1])
    with pytest.raises(ValueError):
        TabulatedDensity([0, 1], [1, -1])
    assert TabulatedDensity([0, 2], [0, 2])(1.0) == pytest.approx(1.0)


def test_channel_validation():
    with pytest.raises(ValueError):
        Channel("x", "Q", (0,), ConstantDensity(1.0))
    with pytest.raises(ValueError):
        Channel("x", "F", (0, 1), ConstantDensity(1.0))
