"""Propagators and trajectories for pseudo-Hermitian Hamiltonians (hbar = 1).

Constant Hamiltonians are exponentiated directly (scaling and squaring).
Time-dependent ones are integrated with the fourth-order Magnus scheme on a
uniform grid whose step is halved until two successive propagators agree;
the Magnus exponent is eta-anti-Hermitian, so every step is exactly
pseudounitary and the eta-norm cannot drift beyond round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg

from bidirq.errors import CommutatorViolation, IntegrationError, NotPseudoHermitian
from bidirq.krein import (
    BlockOperator,
    BlockVector,
    KreinSignature,
    maxabs,
    pseudo_hermitian_residual,
)

_GAUSS = np.sqrt(3.0) / 6.0


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Either a constant operator or a callable ``t -> BlockOperator``.

    ``interval`` bounds the times at which a callable may be evaluated.
    Every evaluation is checked for pseudo-Hermiticity at ``tol`` (relative
    to the operator's size).
    """

    signature: KreinSignature
    constant: Optional[BlockOperator] = None
    func: Optional[Callable[[float], BlockOperator]] = None
    interval: Tuple[float, float] = (-np.inf, np.inf)
    tol: float = 1e-10

    def __post_init__(self):
        if (self.constant is None) == (self.func is None):
            raise ValueError("give exactly one of `constant` and `func`")
        if self.constant is not None:
            self._check(self.constant)

    @classmethod
    def from_operator(cls, H: BlockOperator, tol=1e-10):
        return cls(H.signature, constant=H, tol=tol)

    @classmethod
    def from_callable(cls, func, signature, interval=(-np.inf, np.inf), tol=1e-10):
        return cls(signature, func=func, interval=tuple(interval), tol=tol)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def _check(self, H):
        if H.signature != self.signature:
            raise NotPseudoHermitian("Hamiltonian evaluation has the wrong signature")
        res = pseudo_hermitian_residual(H)
        if res > self.tol * max(1.0, maxabs(H.data)):
            raise NotPseudoHermitian(f"Hamiltonian is not pseudo-Hermitian (residual {res:.3g})")

    def __call__(self, t: float) -> BlockOperator:
        if self.constant is not None:
            return self.constant
        lo, hi = self.interval
        if not lo <= t <= hi:
            raise ValueError(f"t={t} outside the declared interval {self.interval}")
        H = self.func(t)
        if not isinstance(H, BlockOperator):
            H = BlockOperator(np.asarray(H), self.signature)
        self._check(H)
        return H


def _as_spec(H) -> HamiltonianSpec:
    if isinstance(H, HamiltonianSpec):
        return H
    if isinstance(H, BlockOperator):
        return HamiltonianSpec.from_operator(H)
    raise TypeError("expected a HamiltonianSpec or BlockOperator")


def _magnus_step(spec, t, h):
    a1 = spec(t + (0.5 - _GAUSS) * h).data
    a2 = spec(t + (0.5 + _GAUSS) * h).data
    omega = -0.5j * h * (a1 + a2) - (np.sqrt(3.0) / 12.0) * h * h * (a2 @ a1 - a1 @ a2)
    return scipy.linalg.expm(omega)


def _magnus(spec, t0, t1, n_steps):
    h = (t1 - t0) / n_steps
    u = np.eye(spec.signature.n, dtype=complex)
    for k in range(n_steps):
        u = _magnus_step(spec, t0 + k * h, h) @ u
    return u


def propagator(
    H,
    t_minus: float,
    t_plus: float,
    *,
    rtol: float = 1e-10,
    min_steps: int = 4,
    max_steps: int = 1 << 14,
) -> BlockOperator:
    """Transfer operator ``Y(t+, t-)`` with ``Phi(t+) = Y Phi(t-)``.

    For a time-dependent Hamiltonian the step count doubles until
    successive propagators differ by at most ``rtol * max(1, |Y|)``
    (max-abs norm).  Raises :class:`IntegrationError` past ``max_steps``.
    """
    spec = _as_spec(H)
    if not t_plus > t_minus:
        raise ValueError("need t_plus > t_minus")
    sig = spec.signature
    if spec.is_constant:
        return BlockOperator(scipy.linalg.expm(-1j * (t_plus - t_minus) * spec.constant.data), sig)

    n = max(min_steps, 1)
    prev = _magnus(spec, t_minus, t_plus, n)
    while True:
        n *= 2
        if n > max_steps:
            raise IntegrationError(f"no convergence to rtol={rtol:g} within {max_steps} steps")
        cur = _magnus(spec, t_minus, t_plus, n)
        if maxabs(cur - prev) <= rtol * max(1.0, maxabs(cur)):
            return BlockOperator(cur, sig)
        prev = cur


def segment_propagators(H, times, **kwargs):
    """Propagators between consecutive entries of an increasing ``times`` grid."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing grid with >= 2 points")
    spec = _as_spec(H)
    if spec.is_constant:
        steps = np.diff(times)
        # uniform grids reuse one exponential
        if np.allclose(steps, steps[0], rtol=1e-13, atol=0):
            step = propagator(spec, times[0], times[1])
            return [step] * (times.size - 1)
    return [propagator(spec, a, b, **kwargs) for a, b in zip(times[:-1], times[1:])]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution of ``i dPhi/dt = H Phi``.

    ``states[k]`` is the state at ``times[k]``; ``eta_norms[k]`` its eta-norm.
    """

    times: np.ndarray
    states: np.ndarray
    signature: KreinSignature
    eta_norms: np.ndarray = field(init=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        states = np.asarray(self.states, dtype=complex)
        norms = np.einsum("ki,i,ki->k", states.conj(), self.signature.signs, states).real
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "eta_norms", norms)

    def __len__(self):
        return self.times.size

    def state(self, k) -> BlockVector:
        return BlockVector(self.states[k], self.signature)

    @property
    def max_drift(self) -> float:
        return float(np.abs(self.eta_norms - self.eta_norms[0]).max())


def evolve(H, initial: BlockVector, t_minus: float, t_plus: float, n_samples: int, **kwargs) -> Trajectory:
    """Integrate from ``initial`` at ``t_minus`` and sample ``n_samples`` equally spaced times."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    spec = _as_spec(H)
    if initial.signature != spec.signature:
        raise ValueError("initial state and Hamiltonian have different signatures")
    times = np.linspace(t_minus, t_plus, n_samples)
    segs = segment_propagators(spec, times, **kwargs)
    states = np.empty((n_samples, spec.signature.n), dtype=complex)
    states[0] = initial.data
    for k, seg in enumerate(segs):
        states[k + 1] = seg.data @ states[k]
    return Trajectory(times, states, spec.signature)


def conserved_commutant_check(H, Z: BlockOperator, trajectory: Trajectory, *, tol: float = 1e-9) -> float:
    """Max drift of ``(Phi; Z Phi)`` along ``trajectory`` for a conserved ``Z``.

    Raises :class:`CommutatorViolation` when ``[Z, H(t)]`` exceeds ``tol``
    (relative to ``|Z| |H|``) at any sample time.
    """
    spec = _as_spec(H)
    z = Z.data
    for t in trajectory.times:
        h = spec(t).data
        comm = maxabs(z @ h - h @ z)
        if comm > tol * max(1.0, maxabs(z) * maxabs(h)):
            raise CommutatorViolation(f"[Z, H(t={t:g})] has size {comm:.3g}")
    signs = trajectory.signature.signs
    vals = np.einsum("ki,i,ij,kj->k", trajectory.states.conj(), signs, z, trajectory.states)
    return float(np.abs(vals - vals[0]).max())
