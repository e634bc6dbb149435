"""Linear algebra on finite-dimensional Krein spaces.

The metric is always the diagonal ``eta = diag(+1 x n_forward, -1 x n_backward)``
and is stored as a :class:`KreinSignature`; a dense ``eta`` is never built here.
States and operators carry their signature so that block views
(forward/backward) are always available.

All tolerance checks use the max-absolute-entry norm (:func:`maxabs`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from bidirq.errors import SignatureMismatch


def maxabs(a) -> float:
    """Max-absolute-entry norm; 0.0 for empty arrays."""
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


def _frozen(a, ndim):
    arr = np.array(a, dtype=complex, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class KreinSignature:
    """Block structure of the metric: ``n_forward`` +1's then ``n_backward`` -1's."""

    n_forward: int
    n_backward: int

    def __post_init__(self):
        if self.n_forward < 0 or self.n_backward < 0:
            raise ValueError("block sizes must be non-negative")
        if self.n_forward + self.n_backward < 1:
            raise ValueError("total dimension must be at least 1")

    @property
    def n(self) -> int:
        return self.n_forward + self.n_backward

    @property
    def signs(self) -> np.ndarray:
        """Diagonal of the metric as a float vector of +1/-1."""
        return np.concatenate([np.ones(self.n_forward), -np.ones(self.n_backward)])

    @property
    def forward(self) -> slice:
        return slice(0, self.n_forward)

    @property
    def backward(self) -> slice:
        return slice(self.n_forward, self.n)

    def check_size(self, n):
        if n != self.n:
            raise SignatureMismatch(f"dimension {n} does not match signature {self}")


@dataclass(frozen=True, eq=False)
class BlockVector:
    """A state ``psi = [psi^F; psi^B]`` together with its signature."""

    data: np.ndarray
    signature: KreinSignature

    def __post_init__(self):
        arr = _frozen(self.data, 1)
        self.signature.check_size(arr.shape[0])
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_blocks(cls, forward, backward, signature=None):
        forward = np.atleast_1d(np.asarray(forward, dtype=complex))
        backward = np.atleast_1d(np.asarray(backward, dtype=complex))
        if signature is None:
            signature = KreinSignature(forward.size, backward.size)
        return cls(np.concatenate([forward, backward]), signature)

    @property
    def forward(self) -> np.ndarray:
        return self.data[self.signature.forward]

    @property
    def backward(self) -> np.ndarray:
        return self.data[self.signature.backward]

    def hilbert_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __repr__(self):
        return f"BlockVector({self.data!r}, {self.signature})"


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """A square operator with its F/B block decomposition.

    Supports ``@`` with other block operators and with block vectors.
    """

    data: np.ndarray
    signature: KreinSignature

    def __post_init__(self):
        arr = _frozen(self.data, 2)
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"operator must be square, got shape {arr.shape}")
        self.signature.check_size(arr.shape[0])
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_blocks(cls, ff, fb, bf, bb):
        ff, fb, bf, bb = (np.atleast_2d(np.asarray(b, dtype=complex)) for b in (ff, fb, bf, bb))
        sig = KreinSignature(ff.shape[0], bb.shape[0])
        return cls(np.block([[ff, fb], [bf, bb]]), sig)

    @classmethod
    def identity(cls, signature):
        return cls(np.eye(signature.n), signature)

    @property
    def ff(self):
        s = self.signature
        return self.data[s.forward, s.forward]

    @property
    def fb(self):
        s = self.signature
        return self.data[s.forward, s.backward]

    @property
    def bf(self):
        s = self.signature
        return self.data[s.backward, s.forward]

    @property
    def bb(self):
        s = self.signature
        return self.data[s.backward, s.backward]

    def __matmul__(self, other):
        _same_signature(self, other)
        if isinstance(other, BlockOperator):
            return BlockOperator(self.data @ other.data, self.signature)
        if isinstance(other, BlockVector):
            return BlockVector(self.data @ other.data, self.signature)
        return NotImplemented

    def __repr__(self):
        return f"BlockOperator({self.data!r}, {self.signature})"


Operand = Union[BlockOperator, BlockVector]


def _same_signature(a, b):
    if a.signature != b.signature:
        raise SignatureMismatch(f"signatures differ: {a.signature} vs {b.signature}")


def eta_product(x: BlockVector, y: BlockVector) -> complex:
    """Indefinite inner product ``x^dag eta y = x_F^dag y_F - x_B^dag y_B``."""
    _same_signature(x, y)
    return complex(np.vdot(x.data, x.signature.signs * y.data))


def pseudo_adjoint(T: BlockOperator) -> BlockOperator:
    """Return ``eta T^dag eta``: conjugate-transpose the blocks and negate the off-diagonal ones."""
    s = T.signature.signs
    return BlockOperator(s[:, None] * T.data.conj().T * s[None, :], T.signature)


def pseudo_hermitian_residual(T: BlockOperator) -> float:
    return maxabs(T.data - pseudo_adjoint(T).data)


def is_pseudo_hermitian(T: BlockOperator, tol: float = 1e-10) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return pseudo_hermitian_residual(T) <= tol


def pseudounitarity_residuals(T: BlockOperator) -> dict:
    """Residuals of ``T^ddag T = I`` and of its three independent block identities.

    Keys: ``"total"``, ``"ff"`` (forward Gram identity), ``"fb"`` (cross
    identity) and ``"bb"`` (backward Gram identity).
    """
    ff, fb, bf, bb = T.ff, T.fb, T.bf, T.bb
    total = pseudo_adjoint(T).data @ T.data - np.eye(T.signature.n)
    nf, nb = T.signature.n_forward, T.signature.n_backward
    return {
        "total": maxabs(total),
        "ff": maxabs(ff.conj().T @ ff - bf.conj().T @ bf - np.eye(nf)),
        "fb": maxabs(-fb.conj().T @ ff + bb.conj().T @ bf),
        "bb": maxabs(-fb.conj().T @ fb + bb.conj().T @ bb - np.eye(nb)),
    }


def is_pseudounitary(T: BlockOperator, tol: float = 1e-10) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return all(r <= tol for r in pseudounitarity_residuals(T).values())


def random_pseudo_hermitian(signature: KreinSignature, rng=None, scale=1.0) -> BlockOperator:
    """Random pseudo-Hermitian operator with entries of size ``~scale/sqrt(n)``.

    Built as ``(A + A^ddag)/2`` from a complex Gaussian ``A``.
    """
    rng = np.random.default_rng(rng)
    n = signature.n
    a = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) * scale / np.sqrt(2 * n)
    A = BlockOperator(a, signature)
    return BlockOperator(0.5 * (A.data + pseudo_adjoint(A).data), signature)
