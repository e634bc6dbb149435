"""Closed-form models: coupling algebra, cross sections, and the two-channel vacuum.

The vacuum problem has one forward and one backward state.  Its
pseudo-Hermitian evolution matrix is::

    M = [[E0 + E1 zeta_F,   -E1 xi        ],
         [E1 xi,             E0 + E1 zeta_B]]

(the metric-weighted matrix of elements ``h = eta M``).  When the
discriminant ``D = (zeta_F - zeta_B)^2/4 - xi^2`` is negative the
eigenvalues are ``Ebar -/+ i mu E1`` with ``Ebar = E0 + E1 (zeta_F+zeta_B)/2``,
``kappa = (zeta_F - zeta_B)/2`` and ``mu = sqrt(-D)``.  The angle ``sigma`` is
fixed by ``xi e^{i sigma} = kappa + i mu`` with ``sigma`` in ``(0, pi)`` for
``xi > 0``.

Boundary data are ``Phi_F(0) = cos(theta)`` and ``Phi_B(tau) = e^{i psi} sin(theta)``.
All evaluations factor out the growing exponentials, so ``mu E1 tau`` may be
arbitrarily large.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.constants
import scipy.optimize

from bidirq.errors import DomainError, InsufficientGrid
from bidirq.krein import BlockOperator, KreinSignature

HBAR_C = scipy.constants.hbar * scipy.constants.c  # J m


# --------------------------------------------------------------------------
# coupling algebra


@dataclass(frozen=True)
class CouplingConstants:
    """Dimensionless couplings ``zeta_F, zeta_B >= 0`` and a real cross coupling ``xi``."""

    zeta_f: float
    zeta_b: float
    xi: float

    def __post_init__(self):
        if self.zeta_f < 0 or self.zeta_b < 0:
            raise ValueError("zeta_f and zeta_b must be non-negative")
        for name in ("zeta_f", "zeta_b", "xi"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def discriminant(c: CouplingConstants) -> float:
    """``(zeta_F - zeta_B)^2 / 4 - xi^2``."""
    return (c.zeta_f - c.zeta_b) ** 2 / 4.0 - c.xi**2


def coupling_matrix(c: CouplingConstants) -> np.ndarray:
    """The 2x2 matrix ``[[zeta_F, -xi], [xi, zeta_B]]`` acted on by :func:`boost_w`."""
    return np.array([[c.zeta_f, -c.xi], [c.xi, c.zeta_b]], dtype=float)


def _arctanh_checked(num, den, what):
    if den == 0:
        if num == 0:
            return 0.0
        raise DomainError(f"{what}: arctanh argument is infinite")
    arg = num / den
    if abs(arg) >= 1:
        raise DomainError(f"{what}: arctanh argument {arg:g} has magnitude >= 1")
    return -0.5 * float(np.arctanh(arg))


def decoupling_angle(c: CouplingConstants) -> float:
    """Boost angle that removes the F/B coupling; requires ``D > 0``."""
    if c.xi == 0:
        return 0.0
    return _arctanh_checked(2 * c.xi, c.zeta_f - c.zeta_b, "decoupling angle")


def equalizing_angle(c: CouplingConstants) -> float:
    """Boost angle that equalizes the diagonal couplings; requires ``D < 0``."""
    if c.zeta_f == c.zeta_b:
        return 0.0
    return _arctanh_checked(c.zeta_f - c.zeta_b, 2 * c.xi, "equalizing angle")


def boost_w(theta: float, signature: KreinSignature = KreinSignature(1, 1), pairing=None) -> BlockOperator:
    """Pseudounitary boost ``[[cosh I, sinh U], [sinh U^dag, cosh I]]``.

    ``pairing`` is the unitary forward-from-backward identification ``U``
    (identity by default); the forward and backward blocks must be equally
    large.
    """
    nf, nb = signature.n_forward, signature.n_backward
    if nf != nb:
        raise ValueError("boost needs forward and backward blocks of equal size")
    u = np.eye(nf) if pairing is None else np.asarray(pairing, dtype=complex)
    if u.shape != (nf, nf) or not np.allclose(u @ u.conj().T, np.eye(nf), atol=1e-12):
        raise ValueError("pairing must be a unitary n_forward x n_forward matrix")
    ch, sh = np.cosh(theta), np.sinh(theta)
    return BlockOperator(np.block([[ch * np.eye(nf), sh * u], [sh * u.conj().T, ch * np.eye(nf)]]), signature)


def conjugate_couplings(c: CouplingConstants, theta: float) -> np.ndarray:
    """``W(theta) K W(theta)^-1`` for the coupling matrix ``K``."""
    w = boost_w(theta).data.real
    winv = boost_w(-theta).data.real
    return w @ coupling_matrix(c) @ winv


# --------------------------------------------------------------------------
# cross sections


@dataclass(frozen=True)
class CrossSections:
    """First-order total cross sections in m^2 (``bf``: backward from forward)."""

    ff: float
    bb: float
    bf: float
    fb: float


def cross_sections_from_length(c: CouplingConstants, length: float) -> CrossSections:
    """Cross sections with the reduced wavelength ``hbar c / E_CM`` given in metres."""
    if not length > 0:
        raise ValueError("length must be positive")
    k = 9.0 * length**2 / (8.0 * np.pi)
    return CrossSections(k * c.zeta_f**2, k * c.zeta_b**2, k * c.xi**2, k * c.xi**2)


def cross_sections(c: CouplingConstants, e_cm: float) -> CrossSections:
    """``9 (g hbar c)^2 / (8 pi E_CM^2)`` for ``g`` in (zeta_F, zeta_B, xi, xi); ``e_cm`` in joules."""
    if not e_cm > 0:
        raise ValueError("e_cm must be positive")
    return cross_sections_from_length(c, HBAR_C / e_cm)


# --------------------------------------------------------------------------
# two-channel vacuum


@dataclass(frozen=True)
class VacuumParams:
    """Couplings, energy scales ``e0``, ``e1 > 0``, interval ``tau > 0`` and input angles."""

    couplings: CouplingConstants
    e0: float
    e1: float
    tau: float
    theta: float
    psi: float

    def __post_init__(self):
        if not self.e1 > 0:
            raise ValueError("e1 must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def kappa(self) -> float:
        return (self.couplings.zeta_f - self.couplings.zeta_b) / 2.0

    @property
    def mu(self) -> float:
        """``sqrt(-D)``; raises :class:`DomainError` unless ``D < 0``."""
        d = discriminant(self.couplings)
        if not d < 0:
            raise DomainError(f"closed form needs D < 0, got D = {d:g}")
        return float(np.sqrt(-d))

    @property
    def sigma(self) -> float:
        xi = self.couplings.xi
        return float(np.arctan2(np.sign(xi) * self.mu, np.sign(xi) * self.kappa))

    @property
    def e_bar(self) -> float:
        return self.e0 + self.e1 * (self.couplings.zeta_f + self.couplings.zeta_b) / 2.0

    @property
    def decay_rate(self) -> float:
        """``mu E1``."""
        return self.mu * self.e1

    def with_tau(self, tau):
        return VacuumParams(self.couplings, self.e0, self.e1, tau, self.theta, self.psi)


def vacuum_hamiltonian(p: VacuumParams):
    """Evolution matrix ``M`` (pseudo-Hermitian) and the matrix of elements ``h = eta M``.

    Returns ``(M, h)`` with ``M`` a :class:`BlockOperator` of signature (1, 1)
    and ``h`` a real symmetric 2x2 array.
    """
    c = p.couplings
    h = np.array(
        [[p.e0 + p.e1 * c.zeta_f, -p.e1 * c.xi], [-p.e1 * c.xi, -p.e0 - p.e1 * c.zeta_b]],
        dtype=float,
    )
    m = np.diag([1.0, -1.0]) @ h
    return BlockOperator(m, KreinSignature(1, 1)), h


def vacuum_eigenvalues(p: VacuumParams) -> np.ndarray:
    """``[Ebar - i mu E1, Ebar + i mu E1]`` (forward-type decaying, backward-type growing)."""
    return np.array([p.e_bar - 1j * p.decay_rate, p.e_bar + 1j * p.decay_rate])


def vacuum_eigensolutions(p: VacuumParams, t):
    """The two eigensolutions ``exp(-i Ebar t - alpha mu E1 t) (i xi, i kappa - alpha mu)``.

    Returns an array of shape ``(2, len(t), 2)``: index 0 is the F-type
    (``alpha = +1``) solution.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    xi, kap, mu = p.couplings.xi, p.kappa, p.mu
    out = np.empty((2, t.size, 2), dtype=complex)
    for j, a in enumerate((1, -1)):
        phase = np.exp(-1j * p.e_bar * t - a * mu * p.e1 * t)
        out[j, :, 0] = phase * 1j * xi
        out[j, :, 1] = phase * (1j * kap - a * mu)
    return out


def _coefficients(p: VacuumParams):
    """``C_F`` and ``C_B e^{x}`` with ``x = mu E1 tau``; both stay bounded as ``x`` grows."""
    s, c = np.sin(p.theta), np.cos(p.theta)
    sig, xi, x = p.sigma, p.couplings.xi, p.decay_rate * p.tau
    phi = p.psi + p.e_bar * p.tau
    dprime = np.exp(-1j * sig) - np.exp(1j * sig - 2 * x)
    cf = (-s * np.exp(1j * phi) * np.exp(-x) + c * np.exp(-1j * sig)) / (1j * xi * dprime)
    cb_scaled = (s * np.exp(1j * phi) - c * np.exp(1j * sig - x)) / (1j * xi * dprime)
    return cf, cb_scaled


def vacuum_solution(p: VacuumParams, t):
    """Boundary-value solution ``(Phi_F(t), Phi_B(t))`` for ``t`` in ``[0, tau]``.

    ``t`` may be a scalar or an array; the return has the same shape per
    component.  Satisfies ``Phi_F(0) = cos(theta)`` and
    ``Phi_B(tau) = e^{i psi} sin(theta)``.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0) or np.any(t > p.tau * (1 + 1e-12)):
        raise DomainError("t must lie in [0, tau]")
    rate, xi, sig = p.decay_rate, p.couplings.xi, p.sigma
    cf, cb_scaled = _coefficients(p)
    osc = np.exp(-1j * p.e_bar * t)
    decay = np.exp(-rate * t)
    grow = np.exp(rate * (t - p.tau))  # e^{mu E1 t} with the e^{-x} of C_B absorbed
    a = cf * decay * osc
    b = cb_scaled * grow * osc
    phi_f = 1j * xi * (a + b)
    phi_b = 1j * xi * (np.exp(1j * sig) * a + np.exp(-1j * sig) * b)
    if scalar:
        return complex(phi_f[0]), complex(phi_b[0])
    return phi_f, phi_b


def vacuum_expectations(p: VacuumParams, t=None):
    """Closed-form ``([I]_Av, [H]_Av)``; both are constant in ``t``.

    With ``x = mu E1 tau``, ``phi = psi + Ebar tau`` and
    ``Delta = cosh 2x - cos 2 sigma``::

        [I] = 2 sin(sigma) [sin(sigma) cos(2 theta) - sin(2 theta) sin(phi) sinh(x)] / Delta
        [H] = Ebar [I] + 2 xi E1 sin(sigma)^2 [cos(sigma) - sin(2 theta) cos(phi) cosh(x)] / Delta

    ``t`` is accepted for symmetry with :func:`vacuum_solution` and only
    range-checked.
    """
    if t is not None and (np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > p.tau * (1 + 1e-12))):
        raise DomainError("t must lie in [0, tau]")
    sig, x = p.sigma, p.decay_rate * p.tau
    phi = p.psi + p.e_bar * p.tau
    s2t, c2t = np.sin(2 * p.theta), np.cos(2 * p.theta)
    q = np.exp(-2 * x)
    den = 1 + q * q - 2 * np.cos(2 * sig) * q  # Delta = e^{2x} den / 2
    inv_delta = 2 * q / den
    sinh_over = np.exp(-x) * (1 - q) / den
    cosh_over = np.exp(-x) * (1 + q) / den
    ss = np.sin(sig)
    i_av = 2 * ss * (ss * c2t * inv_delta - s2t * np.sin(phi) * sinh_over)
    h_av = p.e_bar * i_av + 2 * p.couplings.xi * p.e1 * ss**2 * (
        np.cos(sig) * inv_delta - s2t * np.cos(phi) * cosh_over
    )
    return float(i_av), float(h_av)


def vacuum_asymptotics(p: VacuumParams):
    """Leading large-``mu E1 tau`` terms of ``([I]_Av, [H]_Av)``.

    ``[I] ~ -2 sin(2 theta) sin(sigma) sin(phi) e^{-x}`` and
    ``[H] ~ -2 sin(2 theta) sin(sigma) [Ebar sin(phi) + xi E1 sin(sigma) cos(phi)] e^{-x}``;
    the relative error is ``O(e^{-2x})``.
    """
    sig, x = p.sigma, p.decay_rate * p.tau
    phi = p.psi + p.e_bar * p.tau
    pref = -2 * np.sin(2 * p.theta) * np.sin(sig) * np.exp(-x)
    i_as = pref * np.sin(phi)
    h_as = pref * (p.e_bar * np.sin(phi) + p.couplings.xi * p.e1 * np.sin(sig) * np.cos(phi))
    return float(i_as), float(h_as)


@dataclass(frozen=True)
class DecayFit:
    """Fitted ``k`` and ``Omega`` of ``e^{-k tau} (A cos Omega tau + B sin Omega tau)``."""

    rate_identity: float
    rate_hamiltonian: float
    omega_identity: float
    omega_hamiltonian: float
    expected_rate: float

    @property
    def relative_errors(self):
        e = self.expected_rate
        return abs(self.rate_identity - e) / e, abs(self.rate_hamiltonian - e) / e


def _fit_damped_cosine(tau, f):
    """Variable-projection least squares for ``e^{-k tau}(A cos W tau + B sin W tau)``."""
    nz = np.abs(f) > 0
    k0 = -np.polyfit(tau[nz], np.log(np.abs(f[nz])), 1)[0]
    sign = np.signbit(f)
    crossings = np.count_nonzero(sign[1:] != sign[:-1])
    w0 = np.pi * crossings / (tau[-1] - tau[0])
    t0 = tau[0]
    weights = np.exp(k0 * (tau - t0))

    def design(k, w):
        env = np.exp(-k * (tau - t0))
        return np.column_stack([env * np.cos(w * tau), env * np.sin(w * tau)])

    def resid(params):
        k, w = params
        X = design(k, w) * weights[:, None]
        y = f * weights
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        return (X @ coef - y) / np.abs(y).max()

    best = None
    for w_try in {w0, 0.9 * w0, 1.1 * w0, 0.5 * w0 + 1e-3, 0.0}:
        sol = scipy.optimize.least_squares(resid, [k0, w_try], xtol=1e-14, ftol=1e-14, gtol=1e-14)
        if best is None or sol.cost < best.cost:
            best = sol
    return float(best.x[0]), float(abs(best.x[1]))


def vacuum_decay_fit(p: VacuumParams, taus, *, min_points: int = 20) -> DecayFit:
    """Fit the exponential envelope of ``[I]_Av`` and ``[H]_Av`` over a ``tau`` sweep.

    ``taus`` must be increasing with ``mu E1 tau`` inside ``[5, 30]`` and
    span at least 5 decay lengths, with at least ``min_points`` samples and
    eight samples per oscillation period of ``Ebar``.  ``p.tau`` is ignored.
    """
    taus = np.asarray(taus, dtype=float)
    rate = p.decay_rate
    x = rate * taus
    if taus.ndim != 1 or taus.size < min_points or np.any(np.diff(taus) <= 0):
        raise InsufficientGrid(f"need >= {min_points} strictly increasing tau values")
    if x[0] < 5 - 1e-9 or x[-1] > 30 + 1e-9 or x[-1] - x[0] < 5:
        raise InsufficientGrid("mu E1 tau must stay within [5, 30] and span at least 5")
    if abs(p.e_bar) > 0 and np.diff(taus).max() > (2 * np.pi / abs(p.e_bar)) / 8:
        raise InsufficientGrid("grid is too coarse for the oscillation at Ebar")
    vals = np.array([vacuum_expectations(p.with_tau(t)) for t in taus])
    k_i, w_i = _fit_damped_cosine(taus, vals[:, 0])
    k_h, w_h = _fit_damped_cosine(taus, vals[:, 1])
    return DecayFit(k_i, k_h, w_i, w_h, rate)
