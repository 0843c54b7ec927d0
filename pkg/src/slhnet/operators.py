"""Finite-dimensional operator algebra on labelled tensor-product spaces.

Everything the network calculus needs from linear algebra lives here:
tensor embeddings, truncated ladder operators, SVD pseudoinverses and the
image/kernel/definiteness tests that the Schur-complement identities reduce to.

Index convention: factors are stored in declaration order and the rightmost
factor's index varies fastest, matching ``numpy.kron``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, "Operator"]

INCLUSION_TOL = 1e-9
HURWITZ_MARGIN = 1e-9


@dataclass(frozen=True)
class SpaceFactor:
    label: str
    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"factor {self.label!r}: dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of labelled factors.

    The empty product is the trivial space C (``total_dim == 1``).
    """

    factors: tuple[SpaceFactor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        labels = [f.label for f in self.factors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate factor labels in {labels}")

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> "HilbertSpace":
        return cls(tuple(SpaceFactor(label, dim) for label, dim in pairs))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    def factor(self, label: str) -> SpaceFactor:
        for f in self.factors:
            if f.label == label:
                return f
        raise KeyError(f"no factor labelled {label!r} in {self.labels}")

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def tensor(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.factors + other.factors)

    def union(self, other: "HilbertSpace") -> "HilbertSpace":
        """Factors of ``self`` followed by the factors of ``other`` not already present."""
        extra = []
        for f in other.factors:
            if f.label in self:
                if self.factor(f.label).dim != f.dim:
                    raise ValueError(
                        f"factor {f.label!r} has dim {self.factor(f.label).dim} and {f.dim}")
            else:
                extra.append(f)
        return HilbertSpace(self.factors + tuple(extra))

    def to_json(self) -> list:
        return [{"label": f.label, "dim": f.dim} for f in self.factors]

    @classmethod
    def from_json(cls, data) -> "HilbertSpace":
        return cls(tuple(SpaceFactor(d["label"], int(d["dim"])) for d in data))


def trivial_space() -> HilbertSpace:
    return HilbertSpace(())


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense complex matrix acting on a :class:`HilbertSpace`."""

    space: HilbertSpace
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if mat.shape != (n, n):
            raise ValueError(f"operator on {self.space.labels} must be {n}x{n}, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("operator entries must be finite")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls, space: HilbertSpace) -> "Operator":
        return cls(space, np.eye(space.total_dim))

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def _coerce(self, other: "Operator") -> np.ndarray:
        if other.space != self.space:
            raise ValueError(f"space mismatch: {self.space.labels} vs {other.space.labels}")
        return other.matrix

    def __matmul__(self, other):
        return Operator(self.space, self.matrix @ self._coerce(other))

    def __add__(self, other):
        return Operator(self.space, self.matrix + self._coerce(other))

    def __sub__(self, other):
        return Operator(self.space, self.matrix - self._coerce(other))

    def __neg__(self):
        return Operator(self.space, -self.matrix)

    def __mul__(self, scalar):
        return Operator(self.space, self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def embed(self, target: HilbertSpace) -> "Operator":
        return tensor_embed(self, target)


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Orthonormal columns spanning a subspace of ``C^N``."""

    columns: np.ndarray
    space: HilbertSpace | None = None

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def projector(self) -> np.ndarray:
        return self.columns @ self.columns.conj().T


def _as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Operator):
        return x.matrix
    return np.asarray(x, dtype=complex)


def tensor_embed(op: Operator, target: HilbertSpace) -> Operator:
    """Embed ``op`` into ``target`` as ``op ⊗ I`` with factors permuted to target order."""
    src = op.space
    for f in src.factors:
        if f.label not in target:
            raise KeyError(f"factor {f.label!r} not in target space {target.labels}")
        if target.factor(f.label).dim != f.dim:
            raise ValueError(
                f"factor {f.label!r}: dim {f.dim} != target dim {target.factor(f.label).dim}")
    rest = [f for f in target.factors if f.label not in src]
    rest_dim = prod(f.dim for f in rest)
    full = np.kron(op.matrix, np.eye(rest_dim))
    # axes of `full` are ordered (src factors..., rest factors...) on both sides
    current = [f.label for f in src.factors] + [f.label for f in rest]
    dims = [f.dim for f in src.factors] + [f.dim for f in rest]
    if not dims:
        return Operator(target, full)
    perm = [current.index(label) for label in target.labels]
    k = len(dims)
    tensor = full.reshape(dims + dims)
    tensor = tensor.transpose(perm + [k + p for p in perm])
    n = target.total_dim
    return Operator(target, tensor.reshape(n, n))


def embed_blocks(blocks: np.ndarray, src: HilbertSpace, target: HilbertSpace) -> np.ndarray:
    """Embed every ``d x d`` block of a block matrix from ``src`` into ``target``."""
    blocks = np.asarray(blocks, dtype=complex)
    d, D = src.total_dim, target.total_dim
    if blocks.shape[0] % d or blocks.shape[1] % d:
        raise ValueError(f"shape {blocks.shape} is not a multiple of the block size {d}")
    r, c = blocks.shape[0] // d, blocks.shape[1] // d
    if src == target:
        return blocks.copy()
    out = np.zeros((r * D, c * D), dtype=complex)
    for i in range(r):
        for j in range(c):
            blk = blocks[i * d:(i + 1) * d, j * d:(j + 1) * d]
            if np.any(blk):
                out[i * D:(i + 1) * D, j * D:(j + 1) * D] = tensor_embed(Operator(src, blk), target).matrix
    return out


def annihilator(cutoff: int, label: str = "osc") -> Operator:
    """Truncated annihilation operator, ``a[n-1, n] = sqrt(n)``."""
    if int(cutoff) != cutoff or cutoff < 2:
        raise ValueError(f"cutoff must be an integer >= 2, got {cutoff}")
    a = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1)
    return Operator(HilbertSpace.of((label, int(cutoff))), a)


def default_rank_tol(mat: np.ndarray, s: np.ndarray) -> float:
    if s.size == 0:
        return 0.0
    return max(mat.shape) * np.finfo(float).eps * s[0]


def moore_penrose(op: ArrayLike, rank_tol: float | None = None):
    """Moore-Penrose pseudoinverse via SVD.

    Singular values ``<= rank_tol`` are treated as zero; the default cutoff is
    ``max(shape) * eps * sigma_max``. Returns an :class:`Operator` when given one.
    """
    mat = _as_array(op)
    if rank_tol is not None and rank_tol < 0:
        raise ValueError("rank_tol must be nonnegative")
    if mat.size == 0:
        pinv = np.zeros(mat.shape[::-1], dtype=complex)
    else:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        tol = default_rank_tol(mat, s) if rank_tol is None else rank_tol
        keep = s > tol
        s_inv = np.zeros_like(s)
        s_inv[keep] = 1.0 / s[keep]
        pinv = (vh.conj().T * s_inv) @ u.conj().T
    if isinstance(op, Operator):
        return Operator(op.space, pinv)
    return pinv


def _relative_residual(residual: np.ndarray, ref: np.ndarray) -> float:
    return np.linalg.norm(residual) / max(1.0, np.linalg.norm(ref))


def image_residual(B: ArrayLike, A: ArrayLike) -> float:
    """``||(I - A A+) B||_F / max(1, ||B||_F)``."""
    A, B = _as_array(A), _as_array(B)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row dimensions differ: {A.shape} vs {B.shape}")
    if B.size == 0:
        return 0.0
    residual = B - A @ (moore_penrose(A) @ B)
    return _relative_residual(residual, B)


def kernel_residual(A: ArrayLike, C: ArrayLike) -> float:
    """``||C (I - A+ A)||_F / max(1, ||C||_F)``."""
    A, C = _as_array(A), _as_array(C)
    if A.shape[1] != C.shape[1]:
        raise ValueError(f"column dimensions differ: {A.shape} vs {C.shape}")
    if C.size == 0:
        return 0.0
    residual = C - (C @ moore_penrose(A)) @ A
    return _relative_residual(residual, C)


def image_inclusion(B: ArrayLike, A: ArrayLike, tol: float = INCLUSION_TOL) -> bool:
    """True iff im B ⊆ im A up to the relative projector residual ``tol``."""
    return bool(image_residual(B, A) <= tol)


def kernel_inclusion(A: ArrayLike, C: ArrayLike, tol: float = INCLUSION_TOL) -> bool:
    """True iff ker A ⊆ ker C up to the relative projector residual ``tol``."""
    return bool(kernel_residual(A, C) <= tol)


def hermitian_part(A: ArrayLike) -> np.ndarray:
    A = _as_array(A)
    return 0.5 * (A + A.conj().T)


def is_strictly_hurwitz(A: ArrayLike, margin: float = HURWITZ_MARGIN) -> bool:
    """Re<phi, A phi> < 0 for all phi != 0, i.e. the Hermitian part is negative definite."""
    A = _as_array(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"strict Hurwitz test needs a square matrix, got shape {A.shape}")
    if A.size == 0:
        return True
    return float(np.linalg.eigvalsh(hermitian_part(A))[-1]) < -margin


def kernel_basis(A: ArrayLike, rank_tol: float | None = None) -> SubspaceBasis:
    """Orthonormal basis of the numerical null space of ``A``."""
    mat = _as_array(A)
    ncols = mat.shape[1]
    if mat.size == 0:
        return SubspaceBasis(np.eye(ncols, dtype=complex))
    _, s, vh = np.linalg.svd(mat, full_matrices=True)
    tol = default_rank_tol(mat, s) if rank_tol is None else rank_tol
    rank = int(np.sum(s > tol))
    space = A.space if isinstance(A, Operator) else None
    return SubspaceBasis(vh[rank:].conj().T, space)


def condition_number(A: ArrayLike) -> float:
    A = _as_array(A)
    if A.size == 0:
        return 1.0
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0:
        return np.inf
    return float(s[0] / s[-1])


def is_unitary(U: ArrayLike, tol: float = 1e-9) -> bool:
    U = _as_array(U)
    eye = np.eye(U.shape[0])
    return bool(np.max(np.abs(U @ U.conj().T - eye), initial=0.0) <= tol
                and np.max(np.abs(U.conj().T @ U - eye), initial=0.0) <= tol)


def is_hermitian(H: ArrayLike, tol: float = 1e-9) -> bool:
    H = _as_array(H)
    return bool(np.max(np.abs(H - H.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(H), initial=0.0)))


def block(mat: np.ndarray, i: int, j: int, d: int) -> np.ndarray:
    """The ``(i, j)`` block of size ``d x d``."""
    return mat[i * d:(i + 1) * d, j * d:(j + 1) * d]


def block_adjoint(mat: np.ndarray) -> np.ndarray:
    # adjoint of an operator-valued block matrix is the ordinary conjugate transpose
    return np.asarray(mat).conj().T


def stack_blocks(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    return np.block([[np.asarray(b, dtype=complex) for b in row] for row in rows])


def select_blocks(mat: np.ndarray, row_idx: Iterable[int], col_idx: Iterable[int], d: int) -> np.ndarray:
    """Gather the ``d x d`` blocks at the given block-row and block-column indices."""
    rows = np.concatenate([np.arange(i * d, (i + 1) * d) for i in row_idx] or [np.array([], int)])
    cols = np.concatenate([np.arange(j * d, (j + 1) * d) for j in col_idx] or [np.array([], int)])
    return mat[np.ix_(rows, cols)]
