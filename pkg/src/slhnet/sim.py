"""Truncated-Fock simulation of the finite-k model against its adiabatic limit.

The joint space is ``ĥ ⊗ Fock(cutoff)^m`` with the slow factor outermost.
Density matrices are vectorized row-major, so ``vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .operators import annihilator, condition_number, is_hermitian, is_strictly_hurwitz
from .slh import (
    SLH,
    OscillatorModel,
    PreconditionError,
    adiabatic_eliminate,
    feedback_reduce_model,
    INVERTIBILITY_COND,
)

DENSE_LIMIT = 4096  # superoperator size above which sparse propagation is used
DEFAULT_KS = (2.0, 4.0, 8.0, 16.0)
DEFAULT_CUTOFF = 8
DEFAULT_THRESHOLD = 5e-2
TOP_SECTOR_GUARD = 1e-6


class CutoffWarning(UserWarning):
    """The Fock truncation is too small to trust the simulated dynamics."""


# ---------------------------------------------------------------------------
# finite-k operators


def _fock_ops(m: int, cutoff: int) -> list[sp.csr_matrix]:
    a = sp.csr_matrix(annihilator(cutoff).matrix)
    eye = sp.identity(cutoff, format="csr")
    ops = []
    for j in range(m):
        factors = [eye] * m
        factors[j] = a
        op = sp.csr_matrix(np.ones((1, 1)))
        for f in factors:
            op = sp.kron(op, f, format="csr")
        ops.append(op)
    return ops


@dataclass(frozen=True, eq=False)
class FiniteKModel:
    """Concrete ``H(k)`` and ``L_i(k)`` on ``ĥ ⊗ Fock(cutoff)^m``."""

    k: float
    cutoff: int
    d: int
    m: int
    H: sp.csr_matrix
    L: tuple[sp.csr_matrix, ...]

    @property
    def dim(self) -> int:
        return self.d * self.cutoff ** self.m

    @property
    def fock_dim(self) -> int:
        return self.cutoff ** self.m


def _sum_blocks(blocks: np.ndarray, d: int, rows: int, cols: int, fock: list) -> sp.csr_matrix:
    """``Σ_jl B_jl ⊗ fock[j][l]`` for a block matrix ``B`` with ``d x d`` blocks."""
    out = None
    for j in range(rows):
        for l in range(cols):
            blk = blocks[j * d:(j + 1) * d, l * d:(l + 1) * d]
            if not np.any(blk):
                continue
            term = sp.kron(sp.csr_matrix(blk), fock[j][l], format="csr")
            out = term if out is None else out + term
    return out


def build_finite_k(model: OscillatorModel, k: float, cutoff: int = DEFAULT_CUTOFF) -> FiniteKModel:
    """``H(k) = k² a*Ωa + k a*Γ + k Γ*a + Θ`` and ``L(k) = k C a + G``.

    A cutoff of 2 is accepted with a :class:`CutoffWarning`; below that the
    truncation cannot represent a single excitation and an error is raised.
    """
    if cutoff < 2:
        raise ValueError(f"cutoff must be at least 2, got {cutoff}")
    if cutoff < 3:
        warnings.warn(f"cutoff {cutoff} is very small; results are cutoff-sensitive", CutoffWarning,
                      stacklevel=2)
    if k < 0:
        raise ValueError("k must be nonnegative")
    Omega, Gamma, Theta = model.hamiltonian_data()
    d, m, n = model.d, model.m, model.n
    F = cutoff ** m
    eye_f = sp.identity(F, format="csr")
    a = _fock_ops(m, cutoff)
    ad = [x.conj().T.tocsr() for x in a]
    zero = sp.csr_matrix((d * F, d * F), dtype=complex)

    H = sp.kron(sp.csr_matrix(Theta), eye_f, format="csr")
    if m:
        quad = _sum_blocks(Omega, d, m, m, [[ad[j] @ a[l] for l in range(m)] for j in range(m)])
        lin = _sum_blocks(Gamma, d, m, 1, [[ad[j]] for j in range(m)])
        if quad is not None:
            H = H + k * k * quad
        if lin is not None:
            H = H + k * (lin + lin.conj().T)
    H = sp.csr_matrix(H, dtype=complex)

    Ls = []
    for i in range(n):
        Li = sp.kron(sp.csr_matrix(model.G[i * d:(i + 1) * d]), eye_f, format="csr")
        if m:
            Ci = _sum_blocks(model.C[i * d:(i + 1) * d], d, 1, m, [a])
            if Ci is not None:
                Li = Li + k * Ci
        Ls.append(sp.csr_matrix(Li + zero, dtype=complex))
    return FiniteKModel(float(k), cutoff, d, m, H, tuple(Ls))


def limit_operators(t: SLH) -> tuple[np.ndarray, list[np.ndarray]]:
    """``(H, [L_1, ..., L_n])`` of a triple; ``S`` drops out for vacuum inputs."""
    d = t.d
    return t.H, [t.L[i * d:(i + 1) * d] for i in range(t.n)]


# ---------------------------------------------------------------------------
# Lindblad generators


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """Superoperator on row-major vectorized density matrices."""

    matrix: sp.csr_matrix
    dim: int

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return (self.matrix @ rho.reshape(-1)).reshape(self.dim, self.dim)

    def trace_residual(self) -> float:
        """``max |vec(I)ᵀ gen|``; zero for a trace-preserving generator."""
        left = np.eye(self.dim).reshape(-1) @ self.matrix
        return float(np.max(np.abs(left), initial=0.0))


def lindblad(H, L_list: Sequence, tol: float = 1e-10) -> LindbladGenerator:
    """``ρ̇ = -i[H, ρ] + Σ_j (L_j ρ L_j* - 1/2 {L_j* L_j, ρ})`` as a matrix."""
    H = sp.csr_matrix(H, dtype=complex)
    D = H.shape[0]
    if H.shape != (D, D):
        raise ValueError("H must be square")
    if abs(H - H.conj().T).max() > 1e-9 * max(1.0, abs(H).max() if H.nnz else 0.0):
        raise ValueError("H must be Hermitian")
    eye = sp.identity(D, format="csr", dtype=complex)
    gen = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for L in L_list:
        L = sp.csr_matrix(L, dtype=complex)
        if L.shape != (D, D):
            raise ValueError(f"jump operator shape {L.shape} does not match H {H.shape}")
        LdL = (L.conj().T @ L).tocsr()
        gen = gen + sp.kron(L, L.conj()) - 0.5 * sp.kron(LdL, eye) - 0.5 * sp.kron(eye, LdL.T)
    out = LindbladGenerator(sp.csr_matrix(gen), D)
    res = out.trace_residual()
    scale = max(1.0, abs(out.matrix).max() if out.matrix.nnz else 0.0)
    if res > tol * scale:
        raise RuntimeError(f"generator is not trace preserving (residual {res:.3e})")
    return out


def _check_state(rho: np.ndarray, dim: int, tol: float = 1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError(f"state must be {dim}x{dim}, got {rho.shape}")
    if not is_hermitian(rho, tol):
        raise ValueError("state is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"state trace is {np.trace(rho).real:.6g}, expected 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -tol:
        raise ValueError("state is not positive semidefinite")
    return rho


def evolve(gen: LindbladGenerator, rho0, t_grid: Sequence[float]) -> list[np.ndarray]:
    """``exp(t gen) ρ₀`` at each grid time; the grid must be nondecreasing.

    Small generators are exponentiated densely (one ``expm`` per distinct
    step); larger ones use Krylov-free ``expm_multiply`` on the sparse matrix.
    """
    rho0 = _check_state(rho0, gen.dim)
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a nonempty 1-d sequence")
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("time grid must be nonnegative and nondecreasing")
    v = rho0.reshape(-1)
    out = []
    dense = gen.matrix.shape[0] <= DENSE_LIMIT
    steps = np.diff(times)
    if not dense and times.size > 1 and np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        # one pass over a uniform grid is far cheaper than a call per step
        mat = gen.matrix.tocsc()
        if times[0] > 0:
            v = expm_multiply(times[0] * mat, v)
        vs = expm_multiply(mat, v, start=0.0, stop=float(times[-1] - times[0]), num=times.size, endpoint=True)
        for w in vs:
            rho = w.reshape(gen.dim, gen.dim)
            out.append(0.5 * (rho + rho.conj().T))
        return out
    mat = gen.dense() if dense else gen.matrix.tocsc()
    cache: dict[float, np.ndarray] = {}
    t_prev = 0.0
    for t in times:
        dt = float(t - t_prev)
        if dt > 0:
            if dense:
                key = round(dt, 14)
                if key not in cache:
                    cache[key] = expm(dt * mat)
                v = cache[key] @ v
            else:
                v = expm_multiply(dt * mat, v)
        rho = v.reshape(gen.dim, gen.dim)
        out.append(0.5 * (rho + rho.conj().T))
        t_prev = float(t)
    return out


def partial_trace_fast(rho: np.ndarray, d: int) -> np.ndarray:
    """Trace out the oscillator factors, keeping the outer ``d``-dimensional slow factor."""
    F = rho.shape[0] // d
    return np.einsum("iaja->ij", rho.reshape(d, F, d, F))


def top_sector_population(rho: np.ndarray, d: int, m: int, cutoff: int) -> float:
    """Population of Fock states with some oscillator at the truncation edge."""
    if m == 0:
        return 0.0
    F = cutoff ** m
    occ = np.array(list(itertools.product(range(cutoff), repeat=m)))
    edge = np.any(occ == cutoff - 1, axis=1)
    pops = np.real(np.diag(rho)).reshape(d, F).sum(axis=0)
    return float(pops[edge].sum())


def vacuum_state(d: int, m: int, cutoff: int, slow: np.ndarray) -> np.ndarray:
    F = cutoff ** m
    vac = np.zeros((F, F), dtype=complex)
    vac[0, 0] = 1.0
    return np.kron(slow, vac)


def hermitian_basis(d: int) -> list[np.ndarray]:
    """Generalized Gell-Mann matrices (Pauli matrices for ``d = 2``), unit spectral norm."""
    out = []
    for j in range(d):
        for l in range(j + 1, d):
            sx = np.zeros((d, d), dtype=complex)
            sx[j, l] = sx[l, j] = 1
            sy = np.zeros((d, d), dtype=complex)
            sy[j, l], sy[l, j] = -1j, 1j
            out += [sx, sy]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        out.append(np.diag(diag).astype(complex))
    return [o / np.linalg.norm(o, 2) for o in out]


def initial_slow_state(d: int, spec: str = "plus") -> np.ndarray:
    """``plus``: uniform superposition; ``basis:j``: the j-th basis vector."""
    if spec == "plus":
        psi = np.ones(d, dtype=complex) / np.sqrt(d)
    elif spec.startswith("basis:"):
        j = int(spec.split(":", 1)[1])
        if not 0 <= j < d:
            raise ValueError(f"basis index {j} out of range for dimension {d}")
        psi = np.zeros(d, dtype=complex)
        psi[j] = 1
    else:
        raise ValueError(f"unknown initial state {spec!r}; use 'plus' or 'basis:j'")
    return np.outer(psi, psi.conj())


# ---------------------------------------------------------------------------
# kernel of Y


@dataclass
class YKernelReport:
    m: int
    d: int
    cutoff: int
    slow_residual: float
    sector_leak: float
    sigma_min: list[float]
    sigma_min_adjoint: list[float]
    margin: float
    hurwitz: bool
    slow_residual_adjoint: float = 0.0
    sector_leak_adjoint: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.slow_residual == 0.0 and self.sector_leak == 0.0
                    and self.slow_residual_adjoint == 0.0 and self.sector_leak_adjoint == 0.0
                    and all(s > self.margin for s in self.sigma_min)
                    and all(s > self.margin for s in self.sigma_min_adjoint))

    @property
    def non_hurwitz_pass(self) -> bool:
        return self.passed and not self.hurwitz

    def to_json(self) -> dict:
        return {
            "oscillators": self.m,
            "dim": self.d,
            "cutoff": self.cutoff,
            "slow_residual": self.slow_residual,
            "sector_leak": self.sector_leak,
            "slow_residual_adjoint": self.slow_residual_adjoint,
            "sector_leak_adjoint": self.sector_leak_adjoint,
            "sigma_min": list(self.sigma_min),
            "sigma_min_adjoint": list(self.sigma_min_adjoint),
            "margin": self.margin,
            "hurwitz": self.hurwitz,
            "pass": self.passed,
            "non_hurwitz_pass": self.non_hurwitz_pass,
        }


def build_y(A: np.ndarray, m: int, cutoff: int, d: int | None = None) -> np.ndarray:
    """``Y = Σ_jl A_jl ⊗ a_j* a_l`` on ``ĥ ⊗ Fock(cutoff)^m``."""
    A = np.asarray(A, dtype=complex)
    d = A.shape[0] // m if d is None else d
    a = _fock_ops(m, cutoff)
    fock = [[(a[j].conj().T @ a[l]) for l in range(m)] for j in range(m)]
    Y = _sum_blocks(A, d, m, m, fock)
    size = d * cutoff ** m
    return np.zeros((size, size), dtype=complex) if Y is None else Y.toarray()


def number_sectors(d: int, m: int, cutoff: int) -> np.ndarray:
    """Total excitation number of every basis vector of ``ĥ ⊗ Fock(cutoff)^m``."""
    occ = np.array(list(itertools.product(range(cutoff), repeat=m))).reshape(-1, m)
    return np.tile(occ.sum(axis=1), d)


def y_kernel_check(A, m: int, cutoff: int, d: int | None = None, margin: float = 1e-9) -> YKernelReport:
    """Literal checks of the kernel properties on sectors ``N = 0 .. cutoff - 1``.

    These sectors lie entirely inside the truncation, so number conservation
    and the vanishing on the slow sector are tested for exact zeros.
    """
    A = np.asarray(A, dtype=complex)
    if m < 1:
        raise ValueError("need at least one oscillator")
    d = A.shape[0] // m if d is None else d
    Y = build_y(A, m, cutoff, d)
    sectors = number_sectors(d, m, cutoff)
    top = cutoff - 1

    def probe(Mat):
        slow = np.flatnonzero(sectors == 0)
        slow_res = float(np.max(np.abs(Mat[:, slow]), initial=0.0))
        leak = 0.0
        sig = []
        for N in range(0, top + 1):
            cols = np.flatnonzero(sectors == N)
            rows_out = np.flatnonzero(sectors != N)
            leak = max(leak, float(np.max(np.abs(Mat[np.ix_(rows_out, cols)]), initial=0.0)))
            if N >= 1:
                blk = Mat[np.ix_(cols, cols)]
                sig.append(float(np.linalg.svd(blk, compute_uv=False)[-1]))
        return slow_res, leak, sig

    s0, leak, sig = probe(Y)
    s0a, leaka, siga = probe(Y.conj().T)
    return YKernelReport(m, d, cutoff, s0, leak, sig, siga, margin, is_strictly_hurwitz(A), s0a, leaka)


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    ks: list[float]
    errors: list[float]
    threshold: float
    cutoff: int
    times: list[float]
    top_population: list[float]
    warnings: list[str] = field(default_factory=list)
    traces: dict = field(default_factory=dict, repr=False)  # k -> (obs index -> values); None for the limit

    @property
    def decreasing(self) -> bool | None:
        if len(self.errors) < 2:
            return None
        return all(b < a or (a <= 1e-12 and b <= 1e-12) for a, b in zip(self.errors, self.errors[1:]))

    @property
    def below_threshold(self) -> bool:
        return bool(self.errors[-1] < self.threshold)

    @property
    def passed(self) -> bool:
        return self.below_threshold and self.decreasing is not False

    def to_json(self) -> dict:
        return {
            "ks": list(self.ks),
            "errors": list(self.errors),
            "top_sector_population": list(self.top_population),
            "threshold": self.threshold,
            "cutoff": self.cutoff,
            "t_grid": {"start": self.times[0], "stop": self.times[-1], "points": len(self.times)},
            "decreasing": self.decreasing,
            "below_threshold": self.below_threshold,
            "pass": self.passed,
            "warnings": list(self.warnings),
        }

    def to_table(self) -> str:
        lines = [f"{'k':>8}  {'err':>12}  {'top pop':>10}"]
        for k, e, p in zip(self.ks, self.errors, self.top_population):
            lines.append(f"{k:>8g}  {e:>12.4e}  {p:>10.2e}")
        mono = {None: "n/a", True: "yes", False: "no"}[self.decreasing]
        lines.append(f"decreasing: {mono}   err(max k) < {self.threshold:g}: "
                     f"{'yes' if self.below_threshold else 'no'}")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t", "observable", "value"])
        for k, series in self.traces.items():
            for obs, values in series.items():
                for t, v in zip(self.times, values):
                    w.writerow(["limit" if k is None else repr(k), repr(t), obs, repr(v)])
        return buf.getvalue()


def _expectations(states: list[np.ndarray], observables: list[np.ndarray]) -> np.ndarray:
    return np.array([[float(np.real(np.trace(X @ r))) for r in states] for X in observables])


def _require_kernel_condition(model: OscillatorModel, cutoff: int) -> list[str]:
    if model.m == 0:
        return []
    if condition_number(model.A) >= INVERTIBILITY_COND:
        raise PreconditionError("A singular", "the oscillator block A is not invertible")
    if is_strictly_hurwitz(model.A):
        return []
    rep = y_kernel_check(model.A, model.m, max(cutoff, 3), model.d)
    if not rep.passed:
        raise PreconditionError("kernel", "ker Y differs from the slow space")
    return ["A is not strictly Hurwitz; kernel condition verified numerically"]


def convergence_study(model: OscillatorModel, connections=(), ks: Sequence[float] = DEFAULT_KS,
                      cutoff: int = DEFAULT_CUTOFF, observables: Sequence[np.ndarray] | None = None,
                      t_grid: Sequence[float] | None = None, *, externals=None,
                      initial: np.ndarray | str = "plus", threshold: float = DEFAULT_THRESHOLD,
                      limit: SLH | None = None) -> ConvergenceReport:
    """Compare slow observables of the finite-k master equation with the limit model.

    The network is first closed with ``connections`` at fixed k, then
    simulated for each k from ``slow ⊗ |0⟩``. ``limit`` overrides the
    reference triple, which otherwise is the adiabatic limit of the closed
    network. Observables are rescaled to unit spectral norm.
    """
    ks = [float(k) for k in ks]
    if not ks or any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k values must be positive and strictly increasing")
    closed = feedback_reduce_model(model, connections, externals) if connections else model
    notes = _require_kernel_condition(closed, cutoff)
    if limit is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            limit = adiabatic_eliminate(closed)
    d = closed.d
    obs = hermitian_basis(d) if observables is None else [np.asarray(X, dtype=complex) for X in observables]
    if not obs:
        raise ValueError("no slow observables: the slow space is one-dimensional")
    obs = [0.5 * (X + X.conj().T) for X in obs]
    obs = [X / max(np.linalg.norm(X, 2), 1e-300) for X in obs]
    times = np.linspace(0.0, 5.0, 51) if t_grid is None else np.asarray(t_grid, dtype=float)
    slow = initial_slow_state(d, initial) if isinstance(initial, str) else np.asarray(initial, dtype=complex)

    H_lim, L_lim = limit_operators(limit)
    ref_states = evolve(lindblad(H_lim, L_lim), slow, times)
    ref = _expectations(ref_states, obs)
    traces = {None: {j: ref[j].tolist() for j in range(len(obs))}}

    errors, tops = [], []
    for k in ks:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CutoffWarning)
            fk = build_finite_k(closed, k, cutoff)
        states = evolve(lindblad(fk.H, fk.L), vacuum_state(d, closed.m, cutoff, slow), times)
        top = max(top_sector_population(r, d, closed.m, cutoff) for r in states)
        vals = _expectations([partial_trace_fast(r, d) for r in states], obs)
        errors.append(float(np.max(np.abs(vals - ref), initial=0.0)))
        tops.append(top)
        traces[k] = {j: vals[j].tolist() for j in range(len(obs))}
        if top > TOP_SECTOR_GUARD:
            msg = f"k={k:g}: top Fock sector population {top:.2e} exceeds {TOP_SECTOR_GUARD:g}; raise the cutoff"
            notes.append(msg)
            warnings.warn(msg, CutoffWarning, stacklevel=2)
    return ConvergenceReport(ks, errors, threshold, cutoff, times.tolist(), tops, notes, traces)
