"""Input/output bookkeeping for evolution in both directions of time.

A process on ``[t-, t+]`` is fed the forward block of the state at ``t-``
and the backward block at ``t+``; it returns the forward block at ``t+`` and
the backward block at ``t-``.  The map between the two is the unitary
``U~`` built from the pseudounitary transfer operator ``Y`` by block
elimination::

    U~ = [[Y_FF - Y_FB Y_BB^-1 Y_BF,  Y_FB Y_BB^-1],
          [        -Y_BB^-1 Y_BF,        Y_BB^-1]]

Long intervals with exponentially growing modes make ``Y`` itself badly
conditioned; :func:`star_product` composes the (unitary, well-conditioned)
maps of short segments instead, and :func:`solve_two_point` /
:func:`two_point_trajectory` accept a sequence of segment propagators for
that reason.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from bidirq.errors import (
    NotPseudoHermitian,
    NotPseudounitary,
    SignatureMismatch,
    SingularBackwardBlock,
    ZeroInput,
)
from bidirq.krein import (
    BlockOperator,
    BlockVector,
    KreinSignature,
    maxabs,
    pseudo_hermitian_residual,
    pseudounitarity_residuals,
)

DEFAULT_COND_CAP = 1e12


@dataclass(frozen=True, eq=False)
class IOState:
    """Forward data at one time and backward data at the other.

    ``role`` is ``"input"`` (forward at t-, backward at t+) or ``"output"``
    (forward at t+, backward at t-).
    """

    forward: np.ndarray
    backward: np.ndarray
    role: str = "input"

    def __post_init__(self):
        if self.role not in ("input", "output"):
            raise ValueError(f"role must be 'input' or 'output', got {self.role!r}")
        for name in ("forward", "backward"):
            arr = np.atleast_1d(np.array(getattr(self, name), dtype=complex))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def signature(self) -> KreinSignature:
        return KreinSignature(self.forward.size, self.backward.size)

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.forward, self.backward])

    def hilbert_norm(self) -> float:
        return float(np.linalg.norm(self.stacked))


def _backward_solver(T: BlockOperator, cond_cap: float):
    bb = T.bb
    if bb.size == 0:
        return None
    sv = scipy.linalg.svdvals(bb)
    cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularBackwardBlock(
            f"backward block condition number {cond:.3g} exceeds cap {cond_cap:.3g}", cond=cond
        )
    return scipy.linalg.lu_factor(bb)


def io_transform(
    T: BlockOperator,
    *,
    cond_cap: float = DEFAULT_COND_CAP,
    check: bool = True,
    tol: float = 1e-8,
) -> BlockOperator:
    """Unitary input/output map of a pseudounitary transfer operator.

    Parameters
    ----------
    T : BlockOperator
        Pseudounitary transfer operator.
    cond_cap : float
        Largest accepted condition number of ``T_BB``.
    check : bool
        Verify pseudounitarity first; the residual is compared with
        ``tol * max(1, |T|^2)`` since it scales quadratically with ``T``.

    Raises
    ------
    NotPseudounitary, SingularBackwardBlock
    """
    sig = T.signature
    if check:
        res = pseudounitarity_residuals(T)["total"]
        if res > tol * max(1.0, maxabs(T.data) ** 2):
            raise NotPseudounitary(f"pseudounitarity residual {res:.3g}")
    lu = _backward_solver(T, cond_cap)
    if lu is None:
        return BlockOperator(T.data, sig)
    nf, nb = sig.n_forward, sig.n_backward
    x = scipy.linalg.lu_solve(lu, np.hstack([T.bf, np.eye(nb)]))
    inv_bf, inv_bb = x[:, :nf], x[:, nf:]
    u = np.block([[T.ff - T.fb @ inv_bf, T.fb @ inv_bb], [-inv_bf, inv_bb]])
    return BlockOperator(u, sig)


def star_product(first: BlockOperator, second: BlockOperator) -> BlockOperator:
    """Input/output map of two consecutive intervals.

    ``first`` covers ``[t0, t1]`` and ``second`` covers ``[t1, t2]``; the
    result covers ``[t0, t2]``.  Only unitary blocks are combined, so this is
    stable where multiplying transfer operators is not.
    """
    if first.signature != second.signature:
        raise SignatureMismatch("segments have different signatures")
    a, b = first, second
    nf, nb = a.signature.n_forward, a.signature.n_backward
    if nb == 0:
        return BlockOperator(b.data @ a.data, a.signature)
    if nf == 0:
        return BlockOperator(a.data @ b.data, a.signature)
    # forward data at t1 and backward data at t1 couple the two segments
    k = np.eye(nf) - a.fb @ b.bf
    kinv_a_ff = np.linalg.solve(k, a.ff)
    kinv_a_fb = np.linalg.solve(k, a.fb)
    f1_from_f0 = kinv_a_ff
    f1_from_b2 = kinv_a_fb @ b.bb
    b1_from_f0 = b.bf @ f1_from_f0
    b1_from_b2 = b.bf @ f1_from_b2 + b.bb
    ff = b.ff @ f1_from_f0
    fb = b.ff @ f1_from_b2 + b.fb
    bf = a.bf + a.bb @ b1_from_f0
    bb = a.bb @ b1_from_b2
    return BlockOperator(np.block([[ff, fb], [bf, bb]]), a.signature)


def assemble_input(state_at_t_minus: BlockVector, state_at_t_plus: BlockVector) -> IOState:
    """Forward block of the early state and backward block of the late state."""
    if state_at_t_minus.signature != state_at_t_plus.signature:
        raise SignatureMismatch("endpoint states have different signatures")
    return IOState(state_at_t_minus.forward, state_at_t_plus.backward, "input")


def assemble_output(state_at_t_plus: BlockVector, state_at_t_minus: BlockVector) -> IOState:
    """Forward block of the late state and backward block of the early state."""
    if state_at_t_minus.signature != state_at_t_plus.signature:
        raise SignatureMismatch("endpoint states have different signatures")
    return IOState(state_at_t_plus.forward, state_at_t_minus.backward, "output")


def normalize_input(s: IOState) -> IOState:
    """Scale to unit *Hilbert* norm (not the eta-norm)."""
    norm = s.hilbert_norm()
    if norm == 0.0:
        raise ZeroInput("input state has zero norm")
    return IOState(s.forward / norm, s.backward / norm, s.role)


Propagators = Union[BlockOperator, Sequence[BlockOperator]]


def _segments(propagator: Propagators):
    if isinstance(propagator, BlockOperator):
        return [propagator]
    segs = list(propagator)
    if not segs:
        raise ValueError("need at least one propagator segment")
    return segs


def _check_input(sig, inp):
    if inp.role != "input":
        raise ValueError("solve_two_point expects an IOState with role 'input'")
    if inp.forward.size != sig.n_forward or inp.backward.size != sig.n_backward:
        raise SignatureMismatch(f"input blocks do not fit signature {sig}")


def solve_two_point(propagator: Propagators, input: IOState, *, cond_cap: float = DEFAULT_COND_CAP):
    """Solve the two-time boundary value problem.

    Parameters
    ----------
    propagator : BlockOperator or sequence of BlockOperator
        Transfer operator over ``[t-, t+]``, or the ordered transfer
        operators of consecutive segments covering it.
    input : IOState
        Forward data at ``t-`` and backward data at ``t+``.

    Returns
    -------
    output : IOState
    state_minus, state_plus : BlockVector
        Full states at ``t-`` and ``t+``.
    """
    segs = _segments(propagator)
    sig = segs[0].signature
    _check_input(sig, input)
    u = io_transform(segs[0], cond_cap=cond_cap)
    for seg in segs[1:]:
        u = star_product(u, io_transform(seg, cond_cap=cond_cap))
    out = u.data @ input.stacked
    nf = sig.n_forward
    output = IOState(out[:nf], out[nf:], "output")
    state_minus = BlockVector.from_blocks(input.forward, output.backward, sig)
    state_plus = BlockVector.from_blocks(output.forward, input.backward, sig)
    return output, state_minus, state_plus


def two_point_trajectory(segments: Sequence[BlockOperator], input: IOState, *, cond_cap=DEFAULT_COND_CAP):
    """Full states at every segment boundary of a two-time boundary value problem.

    ``segments[k]`` propagates from ``t_k`` to ``t_{k+1}``.  Returns an array
    of shape ``(len(segments) + 1, n)`` with the state at each ``t_k``.
    Cumulative io-maps from both ends are combined at every interior time,
    so growing and decaying modes are both resolved to working precision.
    """
    segs = _segments(segments)
    sig = segs[0].signature
    _check_input(sig, input)
    maps = [io_transform(s, cond_cap=cond_cap) for s in segs]
    m = len(maps)
    ident = BlockOperator.identity(sig)
    left = [ident]
    for u in maps:
        left.append(star_product(left[-1], u))
    right = [ident]
    for u in reversed(maps):
        right.append(star_product(u, right[-1]))
    right = right[::-1]

    f0, bN = input.forward, input.backward
    nf = sig.n_forward
    states = np.empty((m + 1, sig.n), dtype=complex)
    for k in range(m + 1):
        L, R = left[k], right[k]
        # [F_k; B_0] = L [F_0; B_k],  [F_N; B_k] = R [F_k; B_N]
        if nf and sig.n_backward:
            lhs = np.eye(nf) - L.fb @ R.bf
            fk = np.linalg.solve(lhs, L.ff @ f0 + L.fb @ (R.bb @ bN))
            bk = R.bf @ fk + R.bb @ bN
        elif nf:
            fk, bk = L.ff @ f0, np.zeros(0, complex)
        else:
            fk, bk = np.zeros(0, complex), R.bb @ bN
        states[k, :nf] = fk
        states[k, nf:] = bk
    return states


def expectation(Z: BlockOperator, state: BlockVector, *, tol: float = 1e-10) -> float:
    """Real expectation ``(Phi; Z Phi) = Phi^dag eta Z Phi`` of a pseudo-Hermitian ``Z``."""
    if Z.signature != state.signature:
        raise SignatureMismatch("operator and state signatures differ")
    zmax = maxabs(Z.data)
    if pseudo_hermitian_residual(Z) > tol * max(1.0, zmax):
        raise NotPseudoHermitian("expectation requires a pseudo-Hermitian operator")
    phi = state.data
    value = np.vdot(phi, state.signature.signs * (Z.data @ phi))
    scale = np.vdot(phi, phi).real * max(1.0, np.linalg.norm(Z.data, 2))
    if abs(value.imag) > max(1e-12, tol) * scale:
        raise NotPseudoHermitian(f"expectation has imaginary part {value.imag:.3g}")
    return float(value.real)
