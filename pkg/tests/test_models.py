import numpy as np
import pytest
from hypothesis import given, strategies as st

from bidirq.errors import DomainError, InsufficientGrid
from bidirq.iomap import IOState, expectation, solve_two_point, two_point_trajectory
from bidirq.dynamics import propagator, segment_propagators
from bidirq.krein import BlockOperator, BlockVector, KreinSignature, eta_product, is_pseudo_hermitian, is_pseudounitary, maxabs
from bidirq.models import (
    HBAR_C,
    CouplingConstants,
    VacuumParams,
    boost_w,
    conjugate_couplings,
    coupling_matrix,
    cross_sections,
    cross_sections_from_length,
    decoupling_angle,
    discriminant,
    equalizing_angle,
    vacuum_asymptotics,
    vacuum_decay_fit,
    vacuum_eigensolutions,
    vacuum_eigenvalues,
    vacuum_expectations,
    vacuum_hamiltonian,
    vacuum_solution,
)


def by_imag(z):
    z = np.asarray(z)
    return z[np.argsort(z.imag)]


def random_params(rng, x_max=30.0):
    zf, zb = rng.uniform(0, 2, 2)
    kappa = (zf - zb) / 2
    xi = (abs(kappa) + rng.uniform(0.05, 1.0)) * rng.choice([-1, 1])
    c = CouplingConstants(zf, zb, xi)
    e1 = rng.uniform(0.1, 2.0)
    mu = np.sqrt(xi**2 - kappa**2)
    tau = rng.uniform(0.05, x_max) / (mu * e1)
    return VacuumParams(c, rng.uniform(-2, 2), e1, tau, rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi))


# --------------------------------------------------------------------------
# coupling algebra


def test_discriminant_examples():
    assert discriminant(CouplingConstants(1, 1, 0.5)) == -0.25
    assert discriminant(CouplingConstants(3, 1, 0)) == 1.0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(-10, 10))
def test_discriminant_arithmetic(zf, zb, xi):
    assert discriminant(CouplingConstants(zf, zb, xi)) == pytest.approx((zf - zb) ** 2 / 4 - xi**2, abs=1e-12)


def test_coupling_constants_validated():
    with pytest.raises(ValueError):
        CouplingConstants(-1, 0, 0)
    with pytest.raises(ValueError):
        CouplingConstants(0, 0, np.nan)


def test_angle_trivial_cases():
    assert decoupling_angle(CouplingConstants(2, 1, 0)) == 0
    assert equalizing_angle(CouplingConstants(1, 1, 0.4)) == 0


def test_decoupling_example():
    c = CouplingConstants(3, 1, 0.5)
    assert discriminant(c) == 0.75
    theta = decoupling_angle(c)
    assert theta == pytest.approx(-0.5 * np.arctanh(0.5))
    K = conjugate_couplings(c, theta)
    assert abs(K[0, 1]) <= 1e-12 and abs(K[1, 0]) <= 1e-12


def test_equalizing_example():
    c = CouplingConstants(1.5, 1.0, 0.5)
    K = conjugate_couplings(c, equalizing_angle(c))
    assert abs(K[0, 0] - K[1, 1]) <= 1e-12


def test_angle_domain_errors():
    with pytest.raises(DomainError):
        decoupling_angle(CouplingConstants(1, 1, 0.5))
    with pytest.raises(DomainError):
        equalizing_angle(CouplingConstants(3, 1, 0.5))


def test_boost_identities():
    assert np.allclose(boost_w(0.0).data, np.eye(2))
    a, b = 0.3, -0.7
    assert np.allclose((boost_w(a) @ boost_w(-a)).data, np.eye(2))
    assert np.allclose((boost_w(a) @ boost_w(b)).data, boost_w(a + b).data)
    assert is_pseudounitary(boost_w(1.3), 1e-12)


def test_boost_with_pairing(rng):
    sig = KreinSignature(3, 3)
    u = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))[0]
    W = boost_w(0.8, sig, u)
    assert is_pseudounitary(W, 1e-12)
    with pytest.raises(ValueError):
        boost_w(0.1, KreinSignature(2, 1))
    with pytest.raises(ValueError):
        boost_w(0.1, sig, 2 * np.eye(3))


def test_coupling_matrix_layout():
    assert np.array_equal(coupling_matrix(CouplingConstants(1, 2, 3)), [[1, -3], [3, 2]])


# --------------------------------------------------------------------------
# cross sections


def test_cross_section_order_of_magnitude():
    s = cross_sections_from_length(CouplingConstants(0, 0, 1e-10), 1e-15)
    assert s.bf == pytest.approx(9 * (1e-10 * 1e-15) ** 2 / (8 * np.pi), rel=1e-14)
    assert s.bf == pytest.approx(3.58e-51, rel=0.01)
    assert s.fb == s.bf and s.ff == 0


def test_cross_section_units_and_scaling():
    c = CouplingConstants(0.3, 0.2, 0.1)
    E = 1.602176634e-10  # 1 GeV in joules
    s1, s2 = cross_sections(c, E), cross_sections(c, 2 * E)
    assert s2.ff == pytest.approx(s1.ff / 4) and s2.bf == pytest.approx(s1.bf / 4)
    assert s1.ff == pytest.approx(cross_sections_from_length(c, HBAR_C / E).ff)
    assert cross_sections(CouplingConstants(1, 1, 0), E).bf == 0
    with pytest.raises(ValueError):
        cross_sections(c, 0)


# --------------------------------------------------------------------------
# vacuum model


def test_hamiltonian_matrix_elements():
    p = VacuumParams(CouplingConstants(0.7, 0.2, 0.4), 0.5, 1.5, 1.0, 0.0, 0.0)
    M, h = vacuum_hamiltonian(p)
    c = p.couplings
    alpha = {0: 1, 1: -1}
    for y in (0, 1):
        for yp in (0, 1):
            zeta = (c.zeta_f, c.zeta_b)[y]
            ref = p.e0 * alpha[y] * (y == yp) + p.e1 * (alpha[y] * zeta * (y == yp) - c.xi * (y != yp))
            assert h[y, yp] == pytest.approx(ref)
    assert is_pseudo_hermitian(M, 1e-14)
    assert np.allclose(M.data, np.diag([1, -1]) @ h)


def test_decoupled_when_xi_zero():
    M, _ = vacuum_hamiltonian(VacuumParams(CouplingConstants(0.7, 0.2, 0.0), 0.5, 1.5, 1.0, 0.0, 0.0))
    assert M.data[0, 1] == 0 and M.data[1, 0] == 0


def test_eigenvalues(rng):
    for _ in range(10):
        p = random_params(rng)
        M, _ = vacuum_hamiltonian(p)
        ev = by_imag(np.linalg.eigvals(M.data))
        ref = p.e0 + p.e1 * ((p.couplings.zeta_f + p.couplings.zeta_b) / 2 - 1j * np.array([1, -1]) * np.sqrt(-discriminant(p.couplings)))
        assert np.allclose(ev, by_imag(ref), atol=1e-12)
        assert np.allclose(by_imag(vacuum_eigenvalues(p)), by_imag(ref), atol=1e-14)


def test_symmetric_eigenvalues():
    p = VacuumParams(CouplingConstants(0.6, 0.6, 0.3), 0.1, 2.0, 1.0, 0.0, 0.0)
    assert np.allclose(by_imag(np.linalg.eigvals(vacuum_hamiltonian(p)[0].data)),
                       by_imag(0.1 + 2.0 * (0.6 + np.array([-1j, 1j]) * 0.3)))


def test_angle_identities(rng):
    for _ in range(20):
        p = random_params(rng)
        xi = p.couplings.xi
        assert abs(p.kappa**2 + p.mu**2 - xi**2) <= 1e-14 * max(1, xi**2)
        assert abs(np.cos(p.sigma) - p.kappa / xi) <= 1e-14
        assert abs(np.sin(p.sigma) - p.mu / xi) <= 1e-14
        if xi > 0:
            assert 0 < p.sigma < np.pi


def test_closed_form_requires_negative_discriminant():
    p = VacuumParams(CouplingConstants(3, 1, 0.5), 0, 1, 1, 0, 0)
    with pytest.raises(DomainError):
        vacuum_solution(p, 0.5)
    with pytest.raises(ValueError):
        VacuumParams(CouplingConstants(1, 1, 1), 0, 0, 1, 0, 0)
    with pytest.raises(ValueError):
        VacuumParams(CouplingConstants(1, 1, 1), 0, 1, 0, 0, 0)


def test_eigensolution_cross_products(rng):
    p = random_params(rng)
    eta = np.diag([1, -1])
    ts = rng.uniform(0, p.tau, 20)
    sols = vacuum_eigensolutions(p, ts)
    xi, sig = p.couplings.xi, p.sigma
    for k in range(20):
        f, b = sols[0, k], sols[1, k]
        assert abs(f.conj() @ eta @ f) <= 1e-12 * np.vdot(f, f).real
        assert abs(b.conj() @ eta @ b) <= 1e-12 * np.vdot(b, b).real
        cross = f.conj() @ eta @ b
        ref = 2j * xi**2 * np.sin(sig) * np.exp(-1j * sig)
        assert abs(cross - ref) <= 1e-12 * max(1, abs(ref))


def test_boundary_conditions(rng):
    for _ in range(20):
        p = random_params(rng)
        f0, _ = vacuum_solution(p, 0.0)
        _, bt = vacuum_solution(p, p.tau)
        assert abs(f0 - np.cos(p.theta)) <= 1e-10
        assert abs(bt - np.exp(1j * p.psi) * np.sin(p.theta)) <= 1e-10


def test_extreme_interval_is_finite():
    p = VacuumParams(CouplingConstants(1, 1, 0.5), 0.2, 1.0, 3000.0, 0.4, 0.3)
    f, b = vacuum_solution(p, np.linspace(0, p.tau, 50))
    assert np.isfinite(f).all() and np.isfinite(b).all()
    assert all(np.isfinite(vacuum_expectations(p)))


def test_solution_matches_single_solve(rng):
    p = random_params(rng, x_max=3.0)
    M, _ = vacuum_hamiltonian(p)
    inp = IOState([np.cos(p.theta)], [np.exp(1j * p.psi) * np.sin(p.theta)])
    out, start, end = solve_two_point(propagator(M, 0, p.tau), inp)
    f0, b0 = vacuum_solution(p, 0.0)
    ft, bt = vacuum_solution(p, p.tau)
    assert maxabs(start.data - [f0, b0]) <= 1e-10 and maxabs(end.data - [ft, bt]) <= 1e-10
    assert abs(out.hilbert_norm() - 1) <= 1e-10


def test_finite_difference_residual(rng):
    p = random_params(rng, x_max=4.0)
    M, _ = vacuum_hamiltonian(p)
    errs = []
    for h in (1e-3, 5e-4):
        t = 0.5 * p.tau
        fp, bp = vacuum_solution(p, t + h)
        fm, bm = vacuum_solution(p, t - h)
        f0, b0 = vacuum_solution(p, t)
        deriv = (np.array([fp, bp]) - np.array([fm, bm])) / (2 * h)
        errs.append(maxabs(1j * deriv - M.data @ np.array([f0, b0])))
    assert errs[1] < errs[0] and errs[1] / errs[0] == pytest.approx(0.25, rel=0.05)


def test_expectations_match_direct(rng):
    eta = np.diag([1.0, -1.0])
    for _ in range(30):
        p = random_params(rng)
        M, _ = vacuum_hamiltonian(p)
        t = rng.uniform(0, p.tau)
        phi = BlockVector(np.array(vacuum_solution(p, t)), M.signature)
        i_av, h_av = vacuum_expectations(p, t)
        assert abs(i_av - expectation(BlockOperator.identity(M.signature), phi)) <= 1e-9
        assert abs(h_av - expectation(M, phi)) <= 1e-9 * max(1, abs(h_av))


def test_small_tau_limit():
    p = VacuumParams(CouplingConstants(0.9, 0.2, 0.6), 0.3, 1.0, 1e-9, 0.35, 1.2)
    i_av, _ = vacuum_expectations(p)
    assert i_av == pytest.approx(np.cos(p.theta) ** 2 - np.sin(p.theta) ** 2, abs=1e-7)


def test_delta_positive(rng):
    for _ in range(20):
        p = random_params(rng)
        x = p.decay_rate * p.tau
        assert np.cosh(2 * x) - np.cos(2 * p.sigma) > 0


def test_asymptotics(rng):
    for _ in range(20):
        p = random_params(rng).with_tau(1.0)
        p = p.with_tau(12.0 / p.decay_rate)
        exact = vacuum_expectations(p)
        approx = vacuum_asymptotics(p)
        # next order is O(e^{-2x})
        scale = 20 * np.exp(-24.0) * max(1, abs(p.e_bar) + abs(p.couplings.xi) * p.e1)
        for a, b in zip(exact, approx):
            assert abs(a - b) <= scale


def test_symmetric_envelope():
    p = VacuumParams(CouplingConstants(1, 1, 0.5), 0.0, 1.0, 1.0, np.pi / 4, 0.3)
    assert p.kappa == 0 and p.sigma == pytest.approx(np.pi / 2)
    for tau in (10.0, 20.0, 40.0):
        q = p.with_tau(tau)
        i_av, _ = vacuum_expectations(q)
        env = 2 * abs(np.sin(2 * q.theta) * np.sin(q.psi + q.e_bar * tau)) * np.exp(-q.decay_rate * tau)
        x = q.decay_rate * tau
        assert abs(abs(i_av) - env) <= 4 * np.exp(-2 * x) * env


def test_weak_cross_coupling_no_decay():
    p = VacuumParams(CouplingConstants(1, 1, 1e-12), 0.0, 1.0, 1.0, 0.5, 0.0)
    assert p.decay_rate == pytest.approx(1e-12)


def test_decay_fit_random(rng):
    n = 0
    while n < 5:
        p = random_params(rng)
        if abs(np.sin(2 * p.theta)) < 0.3:
            continue
        taus = np.linspace(5, 30, 400) / p.decay_rate
        if np.diff(taus).max() > 2 * np.pi / max(abs(p.e_bar), 1e-12) / 8:
            continue
        fit = vacuum_decay_fit(p, taus)
        assert max(fit.relative_errors) <= 0.01
        n += 1


def test_decay_fit_grid_checks():
    p = VacuumParams(CouplingConstants(1, 1, 0.5), 0.0, 1.0, 1.0, 0.7, 0.3)
    with pytest.raises(InsufficientGrid):
        vacuum_decay_fit(p, np.linspace(2, 20, 50))
    with pytest.raises(InsufficientGrid):
        vacuum_decay_fit(p, np.linspace(10, 60, 5))
    with pytest.raises(InsufficientGrid):
        vacuum_decay_fit(p.__class__(p.couplings, 50.0, 1.0, 1.0, 0.7, 0.3), np.linspace(10, 60, 30))
