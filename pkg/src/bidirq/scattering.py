"""Resolvent scattering theory for finite pseudo-Hermitian models.

Workflow::

    model = canonical_form(H0).with_channels([...])
    S = s_matrix(model, H1, E, eps)

Everything is computed in the canonical basis of ``H0``: ``H0`` is diagonal
there, the metric is ``diag(+1 (R,F), -1 (R,B))`` on real levels and pairs
each closed level ``Lambda`` (``Im < 0``) with its partner ``conj(Lambda)``
through an off-diagonal identity block.

Open channels come in two realizations:

``"wide-band"``
    One canonical slot stands for an entire flat continuum with density
    ``rho(E)``.  Its resolvent entry is the on-shell value
    ``-i pi alpha rho(E)`` (``alpha = +1`` forward, ``-1`` backward), which
    makes the channel algebra exact: ``S`` is unitary to round-off.
``"band"``
    A set of discrete levels approximating a continuum.  They keep the
    ``E +/- i eps`` resolvent and are projected on-shell with Lorentzian
    weights ``(1/pi) eps / ((E - Lambda)^2 + eps^2) / rho``; results
    converge as ``eps`` shrinks (but stays above the level spacing).

On-shell amplitudes between channels are ``t = sqrt(rho') Tbar sqrt(rho)``;
the S-matrix is ``I - 2 pi i alpha' t`` and the unitarity defect is the
on-shell restriction ``t eta - eta t^dag + 2 pi i t t^dag``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from bidirq.errors import (
    EpsilonTooLarge,
    GhostState,
    NoOpenChannelAtE,
    NonConvergent,
    NonDiagonalizable,
    NotPseudoHermitian,
    SingularResolvent,
)
from bidirq.krein import BlockOperator, maxabs, pseudo_hermitian_residual

SECTORS = ("RF", "RB", "N1", "N2")


class PoleHitWarning(UserWarning):
    """The energy sits within eps/100 of a real level: results are delicate."""


# --------------------------------------------------------------------------
# densities of states


@dataclass(frozen=True)
class ConstantDensity:
    """Flat density ``value`` on ``[lo, hi]`` and zero outside."""

    value: float
    lo: float = -np.inf
    hi: float = np.inf

    def __call__(self, E):
        return np.where((E >= self.lo) & (E <= self.hi), self.value, 0.0)


@dataclass(frozen=True, eq=False)
class TabulatedDensity:
    """Piecewise-linear density through ``(energies, values)``, zero outside."""

    energies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.shape != v.shape or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("density table needs >= 2 strictly increasing energies")
        if np.any(v < 0):
            raise ValueError("densities must be non-negative")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "values", v)

    def __call__(self, E):
        return np.interp(E, self.energies, self.values, left=0.0, right=0.0)


@dataclass(frozen=True)
class Channel:
    """An open channel attached to canonical slots of a :class:`SpectralModel`."""

    name: str
    sector: str  # "F" or "B"
    slots: Tuple[int, ...]
    density: Callable[[float], float]
    kind: str = "wide-band"

    def __post_init__(self):
        if self.sector not in ("F", "B"):
            raise ValueError("channel sector must be 'F' or 'B'")
        if self.kind not in ("wide-band", "band"):
            raise ValueError("channel kind must be 'wide-band' or 'band'")
        if self.kind == "wide-band" and len(self.slots) != 1:
            raise ValueError("a wide-band channel occupies exactly one slot")

    @property
    def alpha(self) -> int:
        return 1 if self.sector == "F" else -1


# --------------------------------------------------------------------------
# canonical form


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Joint canonical form of ``(H0, eta)`` plus channel bookkeeping.

    Slots are ordered R,F | R,B | N,1 | N,2 and the k-th N,2 slot is the
    partner of the k-th N,1 slot.  ``basis_transform`` holds the canonical
    basis vectors as columns.
    """

    hamiltonian: BlockOperator
    eigenvalues: np.ndarray
    sectors: Tuple[str, ...]
    basis_transform: np.ndarray
    source_index: Tuple[int, ...]
    channels: Tuple[Channel, ...] = ()
    labels: Tuple[str, ...] = ()
    _inverse: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._inverse is None:
            object.__setattr__(self, "_inverse", np.linalg.inv(self.basis_transform))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.n)))

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def signature(self):
        return self.hamiltonian.signature

    def count(self, sector) -> int:
        return self.sectors.count(sector)

    @property
    def open_forward_levels(self) -> np.ndarray:
        return self.eigenvalues[self._where("RF")].real

    @property
    def open_backward_levels(self) -> np.ndarray:
        return self.eigenvalues[self._where("RB")].real

    @property
    def closed_pairs(self) -> np.ndarray:
        """The ``Im < 0`` member of every closed pair."""
        return self.eigenvalues[self._where("N1")]

    def _where(self, sector):
        return np.array([s == sector for s in self.sectors], dtype=bool)

    @property
    def alpha(self) -> np.ndarray:
        """+1/-1 on real forward/backward slots, 0 on closed slots."""
        return np.array([{"RF": 1, "RB": -1}.get(s, 0) for s in self.sectors], dtype=float)

    def eta_canonical(self) -> np.ndarray:
        """Metric in the canonical basis as declared (not as computed)."""
        n = self.n
        eta = np.diag(self.alpha)
        n1 = np.flatnonzero(self._where("N1"))
        n2 = np.flatnonzero(self._where("N2"))
        eta[n1, n2] = 1.0
        eta[n2, n1] = 1.0
        return eta.reshape(n, n)

    def to_canonical(self, X) -> np.ndarray:
        """``T^-1 X T`` for an operator given in the original basis."""
        x = X.data if isinstance(X, BlockOperator) else np.asarray(X)
        return self._inverse @ x @ self.basis_transform

    def to_original(self, X) -> np.ndarray:
        """``T X T^-1`` for an operator given in the canonical basis."""
        return self.basis_transform @ np.asarray(X) @ self._inverse

    def slot_of_state(self, index: int) -> int:
        """Canonical slot whose basis vector is the original basis vector ``index``.

        Raises ``ValueError`` unless that basis vector is an eigenvector of ``H0``.
        """
        matches = [k for k, s in enumerate(self.source_index) if s == index]
        for k in matches:
            v = self.basis_transform[:, k]
            rest = np.delete(v, index)
            if maxabs(rest) <= 1e-9 * abs(v[index]):
                return k
        raise ValueError(f"original basis state {index} is not an eigenvector of H0")

    def with_channels(self, channels: Sequence[Channel], labels: Sequence[str] = ()):
        return replace(self, channels=tuple(channels), labels=tuple(labels) or self.labels)

    def channel(self, name) -> Channel:
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise KeyError(f"no channel named {name!r}")

    @property
    def channel_slots(self) -> set:
        return {k for ch in self.channels for k in ch.slots}

    def closed_gap(self) -> float:
        """Smallest ``|Im Lambda|`` over closed levels (inf when there are none)."""
        n1 = self.closed_pairs
        return float(np.abs(n1.imag).min()) if n1.size else np.inf


def _clusters(values, tol):
    order = np.argsort(values.real, kind="stable")
    groups, current = [], [order[0]]
    for i in order[1:]:
        if abs(values[i] - values[current[-1]]) <= tol:
            current.append(i)
        else:
            groups.append(current)
            current = [i]
    groups.append(current)
    return groups


def canonical_form(
    H0: BlockOperator,
    *,
    tol: float = 1e-9,
    cond_cap: float = 1e10,
) -> SpectralModel:
    """Reduce ``(H0, eta)`` to the joint canonical form.

    Real levels get eta-orthonormal eigenvectors (``+1`` -> R,F and ``-1``
    -> R,B); each closed level ``Lambda`` is paired with ``conj(Lambda)`` so
    that ``T^dag eta T`` has identity off-diagonal blocks between them.

    Raises
    ------
    NotPseudoHermitian
        ``H0`` is not pseudo-Hermitian.
    NonDiagonalizable
        The eigenvector matrix is (numerically) singular, or the reconstruction
        misses ``tol``.
    GhostState
        A real level has a neutral (zero eta-norm) eigenvector.
    """
    sig = H0.signature
    h = H0.data
    scale = max(1.0, maxabs(h))
    if pseudo_hermitian_residual(H0) > 1e-10 * scale:
        raise NotPseudoHermitian("H0 is not pseudo-Hermitian")
    signs = sig.signs
    w, V = scipy.linalg.eig(h)
    V = V / np.linalg.norm(V, axis=0)
    if np.linalg.cond(V) > cond_cap:
        raise NonDiagonalizable("eigenvector matrix is singular: Jordan block present")

    is_real = np.abs(w.imag) <= 1e-10 * scale
    w = np.where(is_real, w.real, w)
    cols, evals, sectors, src = [], [], [], []

    def add(vecs, lam, sector):
        for j in range(vecs.shape[1]):
            cols.append(vecs[:, j])
            evals.append(lam)
            sectors.append(sector)
            src.append(int(np.argmax(np.abs(vecs[:, j]) > 0.5 * np.abs(vecs[:, j]).max())))

    real_idx = np.flatnonzero(is_real)
    real_parts = {"RF": [], "RB": []}
    if real_idx.size:
        for group in _clusters(w[real_idx], 1e-9 * scale):
            idx = real_idx[group]
            Vc = V[:, idx]
            gram = Vc.conj().T @ (signs[:, None] * Vc)
            off = gram - np.diag(np.diag(gram))
            if maxabs(off) <= 1e-12:
                d, Q = np.diag(gram).real, np.eye(len(idx))
            else:
                d, Q = np.linalg.eigh(gram)
            if np.any(np.abs(d) < 1e-8):
                raise GhostState(f"real level {w[idx[0]].real:g} has a neutral eigenvector")
            basis = Vc @ Q / np.sqrt(np.abs(d))
            lam = float(np.mean(w[idx].real))
            for j in range(basis.shape[1]):
                sec = "RF" if d[j] > 0 else "RB"
                v = basis[:, j]
                real_parts[sec].append((lam, int(np.argmax(np.abs(v))), v))

    n1_parts = []
    cplx_idx = np.flatnonzero(~is_real)
    lower = [i for i in cplx_idx if w[i].imag < 0]
    upper = [i for i in cplx_idx if w[i].imag > 0]
    if len(lower) != len(upper):
        raise NonDiagonalizable("nonreal eigenvalues do not come in conjugate pairs")
    if lower:
        lower_arr = np.array(lower)
        upper_arr = np.array(upper)
        used = np.zeros(len(upper), dtype=bool)
        for group in _clusters(w[lower_arr], 1e-9 * scale):
            idx1 = lower_arr[group]
            lam = w[idx1[0]]
            dist = np.abs(w[upper_arr] - np.conj(lam))
            partners = [j for j in np.argsort(dist, kind="stable") if not used[j]][: len(idx1)]
            if len(partners) < len(idx1) or dist[partners].max() > 1e-7 * scale:
                raise NonDiagonalizable(f"closed level {lam:g} has no conjugate partner")
            used[partners] = True
            V1 = V[:, idx1]
            V2 = V[:, upper_arr[partners]]
            M = V1.conj().T @ (signs[:, None] * V2)
            if np.linalg.cond(M) > cond_cap:
                raise GhostState(f"closed pair at {lam:g} is degenerate in the metric")
            V2 = V2 @ np.linalg.inv(M)
            for j in range(len(idx1)):
                n1_parts.append((complex(w[idx1[j]]), int(np.argmax(np.abs(V1[:, j]))), V1[:, j], V2[:, j]))

    for sec in ("RF", "RB"):
        for lam, s, v in sorted(real_parts[sec], key=lambda item: (item[0], item[1])):
            cols.append(v)
            evals.append(lam)
            sectors.append(sec)
            src.append(s)
    n1_parts.sort(key=lambda item: (item[0].real, item[0].imag, item[1]))
    for lam, s, v1, _ in n1_parts:
        cols.append(v1)
        evals.append(lam)
        sectors.append("N1")
        src.append(s)
    for lam, s, _, v2 in n1_parts:
        cols.append(v2)
        evals.append(np.conj(lam))
        sectors.append("N2")
        src.append(int(np.argmax(np.abs(v2))))

    T = np.column_stack(cols)
    evals = np.array(evals, dtype=complex)
    model = SpectralModel(H0, evals, tuple(sectors), T, tuple(src))
    err_h = maxabs(T @ np.diag(evals) @ model._inverse - h)
    err_eta = maxabs(T.conj().T @ (signs[:, None] * T) - model.eta_canonical())
    if err_h > tol * scale or err_eta > tol:
        raise NonDiagonalizable(f"canonical form residuals {err_h:.2g} (H0), {err_eta:.2g} (eta)")
    return model


# --------------------------------------------------------------------------
# resolvent and transition operator


def _green_diagonal(model: SpectralModel, E: float, eps: float) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    gap = model.closed_gap()
    if eps >= 0.5 * gap:
        raise EpsilonTooLarge(f"eps={eps:g} is not below half the closed-level gap {gap:g}")
    lam = model.eigenvalues
    shift = 1j * eps * model.alpha  # +i eps forward, -i eps backward, none on closed levels
    wide = {ch.slots[0]: ch for ch in model.channels if ch.kind == "wide-band"}
    real = model.alpha != 0
    near = real & (np.abs(E - lam.real) < eps / 100)
    near[list(wide)] = False
    if near.any():
        warnings.warn(f"E={E:g} is within eps/100 of a real level", PoleHitWarning, stacklevel=3)
    g = 1.0 / (E + shift - lam)
    for k, ch in wide.items():
        g[k] = -1j * np.pi * ch.alpha * float(ch.density(E))
    return g


def green_function(model: SpectralModel, E: float, eps: float) -> np.ndarray:
    """Regularized resolvent of ``H0`` in the canonical basis.

    Forward real levels get ``1/(E + i eps - Lambda)``, backward ones
    ``1/(E - i eps - Lambda)``, closed levels ``1/(E - Lambda)`` and
    wide-band channel slots their on-shell value ``-i pi alpha rho(E)``.

    Raises :class:`EpsilonTooLarge` when ``eps`` is not below half of the
    smallest ``|Im Lambda|``; warns with :class:`PoleHitWarning` when ``E``
    is within ``eps/100`` of a real level.
    """
    return np.diag(_green_diagonal(model, E, eps))


@dataclass(frozen=True, eq=False)
class TransitionOperator:
    """``T(E)`` in the canonical basis, with how it was obtained."""

    energy: float
    matrix: np.ndarray
    eps: float
    method: str
    iterations: int = 0
    residual: float = 0.0


def validate_perturbation(H1: BlockOperator, tol: float = 1e-10) -> None:
    """Check the block pattern of a perturbation: Hermitian diagonal blocks and ``H_FB = -H_BF^dag``."""
    res = pseudo_hermitian_residual(H1)
    if res > tol * max(1.0, maxabs(H1.data)):
        raise NotPseudoHermitian(f"perturbation violates the pseudo-Hermitian block pattern ({res:.3g})")


def transition_operator(
    model: SpectralModel,
    H1: BlockOperator,
    E: float,
    eps: float,
    method: str = "direct",
    *,
    cond_cap: float = 1e12,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> TransitionOperator:
    """Solve ``T = H1 + H1 G0(E) T`` in the canonical basis.

    ``method="direct"`` solves the linear system.  ``method="neumann"``
    sums ``H1 (G0 H1)^j`` until the increment drops below ``tol`` (relative);
    it first estimates the spectral radius of ``G0 H1`` and raises
    :class:`NonConvergent` when it is not below one.
    """
    validate_perturbation(H1)
    h1 = model.to_canonical(H1)
    g = _green_diagonal(model, E, eps)
    n = model.n
    k = g[:, None] * h1
    A = np.eye(n) - k
    if np.linalg.cond(A) > cond_cap:
        raise SingularResolvent(f"I - G0 H1 is singular at E={E:g}")
    direct = np.linalg.solve(A.T, h1.T).T
    if method == "direct":
        res = maxabs(direct - h1 - h1 @ (g[:, None] * direct))
        return TransitionOperator(E, direct, eps, "direct", 0, res)
    if method != "neumann":
        raise ValueError(f"unknown method {method!r}")
    radius = float(np.abs(np.linalg.eigvals(k)).max()) if n else 0.0
    if radius >= 1.0:
        raise NonConvergent(f"Neumann series diverges: spectral radius {radius:.4g}", radius)
    total = h1.copy()
    term = h1.copy()
    for it in range(1, max_iter + 1):
        term = term @ k
        total = total + term
        if maxabs(term) <= tol * max(1.0, maxabs(total)):
            break
    else:
        raise NonConvergent(f"Neumann series not converged after {max_iter} terms", radius)
    res = maxabs(total - direct)
    if res > 1e3 * tol * max(1.0, maxabs(direct)) / max(1e-16, 1 - radius):
        raise NonConvergent(f"Neumann sum misses the direct solve by {res:.3g}", radius)
    return TransitionOperator(E, total, eps, "neumann", it, res)


# --------------------------------------------------------------------------
# on-shell quantities


def _lorentzian(x, eps):
    return (eps / np.pi) / (x * x + eps * eps)


def _weights(model: SpectralModel, ch: Channel, E: float, eps: float, rho: float) -> np.ndarray:
    w = np.zeros(model.n)
    if ch.kind == "wide-band":
        w[ch.slots[0]] = 1.0
    else:
        slots = np.array(ch.slots)
        w[slots] = _lorentzian(E - model.eigenvalues[slots].real, eps) / rho
    return w


def _resolve(model: SpectralModel, ref):
    """Map a channel name or a state label/slot to (alpha, weight builder, density)."""
    if isinstance(ref, Channel):
        return ref
    if isinstance(ref, str):
        for ch in model.channels:
            if ch.name == ref:
                return ch
        if ref in model.labels:
            ref = model.labels.index(ref)
        else:
            raise KeyError(f"unknown channel or state {ref!r}")
    slot = int(ref)
    sec = model.sectors[slot]
    if sec not in ("RF", "RB"):
        raise ValueError("closed levels cannot be transition endpoints")
    return Channel(model.labels[slot], sec[1], (slot,), ConstantDensity(1.0), "wide-band")


def open_channels(model: SpectralModel, E: float) -> Tuple[Channel, ...]:
    """Channels with nonzero density of states at ``E``, in model order."""
    out = []
    for ch in model.channels:
        if ch.kind == "band":
            lev = model.eigenvalues[list(ch.slots)].real
            if not lev.min() <= E <= lev.max():
                continue
        if float(ch.density(E)) > 0:
            out.append(ch)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class OnShell:
    """On-shell amplitudes among the open channels at one energy."""

    energy: float
    channels: Tuple[Channel, ...]
    amplitude: np.ndarray  # t = sqrt(rho') Tbar sqrt(rho)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([ch.alpha for ch in self.channels], dtype=float)

    @property
    def s(self) -> np.ndarray:
        return np.eye(len(self.channels)) - 2j * np.pi * self.alpha[:, None] * self.amplitude

    @property
    def defect(self) -> np.ndarray:
        t, a = self.amplitude, self.alpha
        return t * a[None, :] - a[:, None] * t.conj().T + 2j * np.pi * t @ t.conj().T


def on_shell(model: SpectralModel, H1: BlockOperator, E: float, eps: float, method="direct") -> OnShell:
    chans = open_channels(model, E)
    if not chans:
        raise NoOpenChannelAtE(f"no open channel at E={E:g}")
    T = transition_operator(model, H1, E, eps, method).matrix
    rho = np.array([float(ch.density(E)) for ch in chans])
    W = np.column_stack([_weights(model, ch, E, eps, r) for ch, r in zip(chans, rho)])
    tbar = W.T @ T @ W
    amp = np.sqrt(rho)[:, None] * tbar * np.sqrt(rho)[None, :]
    return OnShell(E, chans, amp)


def s_matrix(model: SpectralModel, H1: BlockOperator, E: float, eps: float) -> np.ndarray:
    """On-shell S-matrix among the channels open at ``E`` (see :func:`open_channels`).

    ``S = I - 2 pi i alpha' sqrt(rho') Tbar sqrt(rho)``; closed levels never
    appear as indices.
    """
    return on_shell(model, H1, E, eps).s


def unitarity_defect(model: SpectralModel, H1: BlockOperator, E: float, eps: float) -> float:
    """Max-abs size of the on-shell ``T eta - eta T^dag + 2 pi i T delta(E - H0) T^dag``.

    Equal to ``|S S^dag - I| / (2 pi)`` entrywise; exactly zero for wide-band
    channels, shrinking with ``eps`` for band channels.
    """
    return maxabs(on_shell(model, H1, E, eps).defect)


def transition_rate(model: SpectralModel, H1: BlockOperator, E: float, source, target, eps: float) -> float:
    """Golden-rule rate ``2 pi |Tbar(target <- source)|^2 rho_target(E)`` (hbar = 1).

    ``source`` and ``target`` are channel names or state labels; a plain
    state is taken with unit weight and unit density.  For a band target the
    amplitude is Lorentzian-averaged over its levels.
    """
    src = _resolve(model, source)
    dst = _resolve(model, target)
    if src.slots == dst.slots:
        raise ValueError("source and target must differ")
    rho_t = float(dst.density(E))
    T = transition_operator(model, H1, E, eps).matrix
    rho_s = float(src.density(E)) if src.kind == "band" else 1.0
    ws = _weights(model, src, E, eps, rho_s)
    wt = _weights(model, dst, E, eps, rho_t) if rho_t > 0 else np.zeros(model.n)
    amp = wt @ T @ ws
    return float(2 * np.pi * abs(amp) ** 2 * rho_t)
