"""Block matrices over named index sets and generalized Schur complements.

A :class:`BlockMatrix` carries independent row and column partitions, so the
rectangular complement ``M_{A,B} / M_{C,D}`` is available as well as the usual
square one. The canonical generalized inverse is Moore-Penrose; any other
``ginv`` callable satisfying ``A A^- A = A`` may be passed instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .operators import INCLUSION_TOL, image_residual, kernel_residual, moore_penrose

GInverse = Callable[[np.ndarray], np.ndarray]


class WellDefinednessError(ValueError):
    """A generalized Schur complement was requested where it depends on the inverse chosen."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
        self.report = report


@dataclass(frozen=True)
class Partition:
    labels: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(lab) for lab in self.labels))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.labels) != len(self.sizes):
            raise ValueError("labels and sizes differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels {self.labels}")
        if any(s < 0 for s in self.sizes):
            raise ValueError("block sizes must be nonnegative")

    @classmethod
    def from_sizes(cls, pairs: Mapping[str, int] | Iterable[tuple[str, int]]) -> "Partition":
        items = list(pairs.items()) if isinstance(pairs, Mapping) else list(pairs)
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def ranges(self) -> dict[str, tuple[int, int]]:
        out, start = {}, 0
        for lab, size in zip(self.labels, self.sizes):
            out[lab] = (start, start + size)
            start += size
        return out

    def size_of(self, labels: Iterable[str]) -> int:
        sizes = dict(zip(self.labels, self.sizes))
        return sum(sizes[lab] for lab in labels)

    def ordered(self, labels: Iterable[str]) -> tuple[str, ...]:
        """Validate a label set and return it in declaration order."""
        wanted = set(labels)
        unknown = wanted - set(self.labels)
        if unknown:
            raise KeyError(f"unknown labels {sorted(unknown)}; partition has {self.labels}")
        return tuple(lab for lab in self.labels if lab in wanted)

    def indices(self, labels: Iterable[str]) -> np.ndarray:
        rng = self.ranges
        parts = [np.arange(*rng[lab]) for lab in self.ordered(labels)]
        return np.concatenate(parts) if parts else np.array([], dtype=int)

    def restrict(self, labels: Iterable[str]) -> "Partition":
        keep = self.ordered(labels)
        sizes = dict(zip(self.labels, self.sizes))
        return Partition(keep, tuple(sizes[lab] for lab in keep))


@dataclass(frozen=True, eq=False)
class BlockMatrix:
    rows: Partition
    cols: Partition
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = np.array(self.entries, dtype=complex)
        if mat.shape != (self.rows.total, self.cols.total):
            raise ValueError(
                f"entries have shape {mat.shape}, partitions need {(self.rows.total, self.cols.total)}")
        object.__setattr__(self, "entries", mat)

    @classmethod
    def square(cls, labels: Sequence[str], sizes: Sequence[int], entries) -> "BlockMatrix":
        part = Partition(tuple(labels), tuple(sizes))
        return cls(part, part, entries)

    @classmethod
    def from_blocks(cls, labels: Sequence[str], blocks: Sequence[Sequence[np.ndarray]]) -> "BlockMatrix":
        """Square block matrix from a nested list of blocks (diagonal blocks fix the sizes)."""
        row_sizes = [np.asarray(blocks[i][0]).shape[0] for i in range(len(labels))]
        col_sizes = [np.asarray(blocks[0][j]).shape[1] for j in range(len(labels))]
        mat = np.block([[np.asarray(b, dtype=complex) for b in row] for row in blocks])
        return cls(Partition(tuple(labels), tuple(row_sizes)),
                   Partition(tuple(labels), tuple(col_sizes)), mat)

    def sub_block(self, A: Iterable[str], B: Iterable[str]) -> np.ndarray:
        """``M_{A,B}``, with blocks concatenated in declaration order."""
        A, B = list(A), list(B)
        if not A or not B:
            raise ValueError("label sets must be nonempty")
        return self.entries[np.ix_(self.rows.indices(A), self.cols.indices(B))]

    def restrict(self, A: Iterable[str], B: Iterable[str]) -> "BlockMatrix":
        A, B = list(A), list(B)
        return BlockMatrix(self.rows.restrict(A), self.cols.restrict(B), self.sub_block(A, B))

    def __getitem__(self, key) -> np.ndarray:
        a, b = key
        a = [a] if isinstance(a, str) else list(a)
        b = [b] if isinstance(b, str) else list(b)
        return self.sub_block(a, b)

    def to_json(self) -> dict:
        from .serialize import matrix_to_json

        return {
            "row_labels": list(self.rows.labels),
            "col_labels": list(self.cols.labels),
            "ranges": {
                "rows": [list(self.rows.ranges[lab]) for lab in self.rows.labels],
                "cols": [list(self.cols.ranges[lab]) for lab in self.cols.labels],
            },
            "entries": matrix_to_json(self.entries),
        }

    @classmethod
    def from_json(cls, data: dict) -> "BlockMatrix":
        from .serialize import matrix_from_json

        def part(labels, ranges):
            start, sizes = 0, []
            for lo, hi in ranges:
                if lo != start or hi < lo:
                    raise ValueError("ranges must tile [0, total) in order")
                sizes.append(hi - lo)
                start = hi
            return Partition(tuple(labels), tuple(sizes))

        rows = part(data["row_labels"], data["ranges"]["rows"])
        cols = part(data["col_labels"], data["ranges"]["cols"])
        entries = matrix_from_json(data["entries"])
        if entries.size == 0:
            entries = np.zeros((rows.total, cols.total), dtype=complex)
        return cls(rows, cols, entries)


@dataclass(frozen=True)
class WellDefinedReport:
    im_ok: bool
    ker_ok: bool
    im_residual: float
    ker_residual: float

    def __bool__(self) -> bool:
        return bool(self.im_ok and self.ker_ok)

    def describe(self) -> str:
        bits = []
        if not self.im_ok:
            bits.append(f"image inclusion fails (residual {self.im_residual:.3e})")
        if not self.ker_ok:
            bits.append(f"kernel inclusion fails (residual {self.ker_residual:.3e})")
        return "; ".join(bits) or "well-defined"


def _split(M: BlockMatrix, A, B, C, D):
    A = M.rows.ordered(M.rows.labels if A is None else A)
    B = M.cols.ordered(M.cols.labels if B is None else B)
    C = M.rows.ordered(C)
    D = M.cols.ordered(C if D is None else D)
    if not C or not D:
        raise ValueError("the eliminated label sets must be nonempty")
    if not set(C) <= set(A) or not set(D) <= set(B):
        raise ValueError("eliminated labels must be subsets of the retained blocks")
    if set(C) == set(A) or set(D) == set(B):
        raise ValueError("degenerate complement: the eliminated set equals the whole block")
    A_rest = tuple(lab for lab in A if lab not in C)
    B_rest = tuple(lab for lab in B if lab not in D)
    return A_rest, B_rest, C, D


def _blocks(M: BlockMatrix, rows, cols) -> np.ndarray:
    return M.entries[np.ix_(M.rows.indices(rows), M.cols.indices(cols))]


def check_well_defined(M: BlockMatrix, C, D=None, A=None, B=None,
                       tol: float = INCLUSION_TOL) -> WellDefinedReport:
    """Check im M_{C,B∖D} ⊆ im M_{C,D} and ker M_{C,D} ⊆ ker M_{A∖C,D}."""
    A_rest, B_rest, C, D = _split(M, A, B, C, D)
    pivot = _blocks(M, C, D)
    im_res = image_residual(_blocks(M, C, B_rest), pivot)
    ker_res = kernel_residual(pivot, _blocks(M, A_rest, D))
    return WellDefinedReport(bool(im_res <= tol), bool(ker_res <= tol), float(im_res), float(ker_res))


def generalized_schur(M: BlockMatrix, A=None, B=None, C=None, D=None, *,
                      check: bool = True, ginv: GInverse | None = None,
                      tol: float = INCLUSION_TOL) -> BlockMatrix:
    """``M_{A,B} / M_{C,D} = M_{A∖C,B∖D} - M_{A∖C,D} (M_{C,D})^- M_{C,B∖D}``.

    ``A``/``B`` default to all row/column labels and ``D`` defaults to ``C``.
    With ``check=True`` the image/kernel inclusions that make the result
    independent of the generalized inverse are verified first.
    """
    if C is None:
        raise TypeError("generalized_schur needs the eliminated row labels C")
    A_rest, B_rest, C, D = _split(M, A, B, C, D)
    if check:
        report = check_well_defined(M, C, D, A, B, tol=tol)
        if not report:
            raise WellDefinednessError(
                f"complement over {list(C)}x{list(D)} is not well-defined: {report.describe()}", report)
    pivot = _blocks(M, C, D)
    pinv = moore_penrose(pivot) if ginv is None else np.asarray(ginv(pivot))
    result = _blocks(M, A_rest, B_rest) - _blocks(M, A_rest, D) @ pinv @ _blocks(M, C, B_rest)
    return BlockMatrix(M.rows.restrict(A_rest), M.cols.restrict(B_rest), result)


def complement(M: BlockMatrix, C, D=None, **kwargs) -> BlockMatrix:
    """``M / M_{C,D}`` over the whole matrix."""
    return generalized_schur(M, None, None, C, D, **kwargs)


def random_generalized_inverse(A: np.ndarray, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """``A+ + (I - A+ A) R + S (I - A A+)`` for random ``R``, ``S``: a generalized inverse of ``A``."""
    A = np.asarray(A, dtype=complex)
    p = moore_penrose(A)
    m, n = A.shape

    def cplx(shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    R, S = cplx((n, m)), cplx((n, m))
    return p + (np.eye(n) - p @ A) @ R + S @ (np.eye(m) - A @ p)


def banachiewicz_pinv(M: BlockMatrix, A_rows, A_cols=None, *, check: bool = True,
                      ginv: GInverse | None = None, tol: float = INCLUSION_TOL) -> BlockMatrix:
    """Generalized inverse of a 2x2-partitioned ``M`` from the generalized Banachiewicz formula.

    With ``M = [[A, B], [C, D]]`` and ``X = M/A``::

        M^- = [[A^- + A^- B X^- C A^-, -A^- B X^-],
               [-X^- C A^-,             X^-     ]]

    The result maps row-space to column-space, so its row partition is
    ``M.cols`` and its column partition is ``M.rows``; blocks sit at their
    original label positions.
    """
    A_cols = A_rows if A_cols is None else A_cols
    Ar = M.rows.ordered(A_rows)
    Ac = M.cols.ordered(A_cols)
    Ar_rest = tuple(lab for lab in M.rows.labels if lab not in Ar)
    Ac_rest = tuple(lab for lab in M.cols.labels if lab not in Ac)
    if check:
        report = check_well_defined(M, Ar, Ac, tol=tol)
        if not report:
            raise WellDefinednessError(f"Banachiewicz formula needs {report.describe()}", report)
    blkA = _blocks(M, Ar, Ac)
    blkB = _blocks(M, Ar, Ac_rest)
    blkC = _blocks(M, Ar_rest, Ac)
    blkD = _blocks(M, Ar_rest, Ac_rest)
    Ai = np.asarray((ginv or moore_penrose)(blkA))
    X = blkD - blkC @ Ai @ blkB
    if ginv is None:
        # X comes out of a cancellation: its rank cutoff must follow the size of the terms, not of X
        scale = np.linalg.norm(blkD, 2) if blkD.size else 0.0
        if blkB.size and blkC.size:
            scale += np.linalg.norm(blkC, 2) * np.linalg.norm(Ai, 2) * np.linalg.norm(blkB, 2)
        Xi = moore_penrose(X, rank_tol=64 * max(M.entries.shape) * np.finfo(float).eps * scale)
    else:
        Xi = np.asarray(ginv(X))
    top_left = Ai + Ai @ blkB @ Xi @ blkC @ Ai
    top_right = -Ai @ blkB @ Xi
    bottom_left = -Xi @ blkC @ Ai
    out = np.zeros((M.cols.total, M.rows.total), dtype=complex)
    rc, rr = M.cols.indices(Ac), M.cols.indices(Ac_rest)
    cc, cr = M.rows.indices(Ar), M.rows.indices(Ar_rest)
    out[np.ix_(rc, cc)] = top_left
    out[np.ix_(rc, cr)] = top_right
    out[np.ix_(rr, cc)] = bottom_left
    out[np.ix_(rr, cr)] = Xi
    return BlockMatrix(M.cols, M.rows, out)


QUOTIENT_CONDITIONS = (
    "ker[[M_BB,M_BC],[M_CB,M_CC]] ⊆ ker[M_AB M_AC]",
    "im[M_BA;M_CA] ⊆ im[[M_BB,M_BC],[M_CB,M_CC]]",
    "ker M_CC ⊆ ker M_BC",
    "im M_CB ⊆ im M_CC",
    "ker M_BB ⊆ ker M_CB",
    "im M_BC ⊆ im M_BB",
)


@dataclass(frozen=True)
class QuotientConditionsReport:
    conditions: tuple[bool, ...]
    residuals: tuple[float, ...]

    def __bool__(self) -> bool:
        return bool(all(self.conditions))

    def failed(self) -> list[int]:
        """1-based indices of the failing conditions."""
        return [i + 1 for i, ok in enumerate(self.conditions) if not ok]

    def describe(self) -> str:
        if all(self.conditions):
            return "all six conditions hold"
        return "; ".join(f"condition {i} ({QUOTIENT_CONDITIONS[i - 1]}) fails" for i in self.failed())


def _check_three_partition(M: BlockMatrix, A, B, C):
    A, B, C = (M.rows.ordered(x) for x in (A, B, C))
    if not A or not B or not C:
        raise ValueError("A, B and C must be nonempty")
    union = set(A) | set(B) | set(C)
    if len(union) != len(A) + len(B) + len(C) or union != set(M.rows.labels):
        raise ValueError("A, B, C must partition the label set")
    if set(M.cols.labels) != set(M.rows.labels):
        raise ValueError("row and column partitions must carry the same labels")
    return A, B, C


def check_quotient_conditions(M: BlockMatrix, A, B, C, tol: float = INCLUSION_TOL) -> QuotientConditionsReport:
    """The six sufficient conditions for every complement in the quotient rule to be well-defined."""
    A, B, C = _check_three_partition(M, A, B, C)
    BC = B + C
    blk = lambda r, c: _blocks(M, r, c)  # noqa: E731
    inner = blk(BC, BC)
    residuals = (
        kernel_residual(inner, blk(A, BC)),
        image_residual(blk(BC, A), inner),
        kernel_residual(blk(C, C), blk(B, C)),
        image_residual(blk(C, B), blk(C, C)),
        kernel_residual(blk(B, B), blk(C, B)),
        image_residual(blk(B, C), blk(B, B)),
    )
    residuals = tuple(float(r) for r in residuals)
    return QuotientConditionsReport(tuple(bool(r <= tol) for r in residuals), residuals)


def _noise_aware_pinv(M: BlockMatrix, pivot_labels) -> GInverse:
    """Pseudoinverse for a block of ``M / M_pivot``, whose rank cutoff follows the roundoff of that step.

    A complement that vanishes in exact arithmetic comes out as noise of size
    ``eps * ‖M‖ (1 + ‖M‖ ‖M_pivot^+‖)``; the usual cutoff relative to the block
    itself would invert that noise.
    """
    norm = np.linalg.norm(M.entries, 2)
    pinv_norm = np.linalg.norm(moore_penrose(_blocks(M, pivot_labels, pivot_labels)), 2)
    floor = 64 * max(M.entries.shape) * np.finfo(float).eps * norm * (1 + norm * pinv_norm)
    return lambda X: moore_penrose(X, rank_tol=floor)


@dataclass(frozen=True, eq=False)
class SuccessiveResult:
    via_C_then_B: BlockMatrix
    via_B_then_C: BlockMatrix
    one_shot: BlockMatrix
    conditions: QuotientConditionsReport

    def max_discrepancy(self) -> float:
        a, b, c = self.via_C_then_B.entries, self.via_B_then_C.entries, self.one_shot.entries
        if a.size == 0:
            return 0.0
        return float(max(np.max(np.abs(a - c)), np.max(np.abs(b - c))))


def successive_complement(M: BlockMatrix, B, C, *, check: bool = True,
                          ginv: GInverse | None = None,
                          tol: float = INCLUSION_TOL) -> SuccessiveResult:
    """Evaluate both sides of the quotient rule
    ``M/M_{B∪C,B∪C} = (M/M_{C,C})/(M/M_{C,C})_{B,B} = (M/M_{B,B})/(M/M_{B,B})_{C,C}``.

    ``A`` is the complement of ``B ∪ C``. The inner complements are computed
    unchecked once the six sufficient conditions have passed.
    """
    A = tuple(lab for lab in M.rows.labels if lab not in set(B) | set(C))
    A, B, C = _check_three_partition(M, A, B, C)
    report = check_quotient_conditions(M, A, B, C, tol=tol)
    if check and not report:
        raise WellDefinednessError(f"quotient rule hypotheses fail: {report.describe()}", report)
    kw = dict(check=False, ginv=ginv)
    after_C = complement(M, C, **kw)
    via_C = complement(after_C, B, check=False, ginv=ginv or _noise_aware_pinv(M, C))
    after_B = complement(M, B, **kw)
    via_B = complement(after_B, C, check=False, ginv=ginv or _noise_aware_pinv(M, B))
    one_shot = complement(M, B + C, **kw)
    return SuccessiveResult(via_C, via_B, one_shot, report)
