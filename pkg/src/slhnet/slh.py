"""SLH network calculus: triples, Itô matrices, feedback reduction and adiabatic elimination.

Operators on the auxiliary space are ``d x d`` complex matrices. Channel-indexed
objects are stored as block matrices with the channel index outermost, so for
``n`` channels ``S`` is ``(n d, n d)``, ``L`` is ``(n d, d)`` and ``C`` is
``(n d, m d)`` for ``m`` oscillators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import schur
from .operators import (
    HilbertSpace,
    condition_number,
    embed_blocks,
    is_hermitian,
    is_strictly_hurwitz,
    is_unitary,
    select_blocks,
)
from .serialize import matrix_from_json, matrix_to_json

RESIDUAL_TOL = 1e-9
INVERTIBILITY_COND = 1e12


class PreconditionError(ValueError):
    """A hypothesis of a reduction does not hold; ``cause`` names which one."""

    def __init__(self, cause: str, message: str):
        super().__init__(f"{cause}: {message}")
        self.cause = cause


class IllPosedNetworkError(PreconditionError):
    """``S_ii - I`` is singular, so the feedback network is not well-posed."""


class NonHurwitzWarning(UserWarning):
    """Elimination went ahead on the kernel condition alone; A is not strictly Hurwitz."""


def default_space(d: int) -> HilbertSpace:
    return HilbertSpace.of(("sys", d)) if d > 1 else HilbertSpace(())


def _cm(x) -> np.ndarray:
    return np.array(x, dtype=complex)


def _adj(x: np.ndarray) -> np.ndarray:
    return x.conj().T


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x), initial=0.0))


def _rel(residual: np.ndarray, *refs: np.ndarray) -> float:
    scale = max([1.0] + [_max_abs(r) for r in refs])
    return _max_abs(residual) / scale


def _check_shape(name: str, x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if x.size == 0 and 0 in shape:
        return np.zeros(shape, dtype=complex)
    if x.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# triples and Itô matrices


@dataclass(frozen=True, eq=False)
class SLH:
    """Markov component ``(S, L, K)`` with damping ``K = -1/2 L*L - iH``."""

    S: np.ndarray
    L: np.ndarray
    K: np.ndarray
    space: HilbertSpace | None = None

    def __post_init__(self):
        K = _cm(self.K)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"K must be square, got {K.shape}")
        d = K.shape[0]
        space = default_space(d) if self.space is None else self.space
        if space.total_dim != d:
            raise ValueError(f"space dim {space.total_dim} does not match K of size {d}")
        L = _cm(self.L)
        if L.ndim != 2 or L.shape[1] != d or L.shape[0] % d:
            raise ValueError(f"L must be (n*{d}, {d}), got {L.shape}")
        n = L.shape[0] // d
        S = _check_shape("S", _cm(self.S), (n * d, n * d))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "space", space)

    @classmethod
    def from_hamiltonian(cls, S, L, H, space: HilbertSpace | None = None) -> "SLH":
        L, H = _cm(L), _cm(H)
        if not is_hermitian(H):
            raise ValueError("H must be Hermitian")
        return cls(S, L, -0.5 * _adj(L) @ L - 1j * H, space)

    @property
    def d(self) -> int:
        return self.K.shape[0]

    @property
    def n(self) -> int:
        return self.L.shape[0] // self.d

    @property
    def H(self) -> np.ndarray:
        return 1j * (self.K + 0.5 * _adj(self.L) @ self.L)

    def residuals(self) -> dict[str, float]:
        eye = np.eye(self.S.shape[0])
        return {
            "unitarity": _max_abs(np.concatenate([
                (self.S @ _adj(self.S) - eye).ravel(), (_adj(self.S) @ self.S - eye).ravel()])),
            "damping": _rel(self.K + _adj(self.K) + _adj(self.L) @ self.L, self.K, _adj(self.L) @ self.L),
        }

    def validate(self, tol: float = RESIDUAL_TOL) -> "SLH":
        res = self.residuals()
        if res["unitarity"] > tol:
            raise ValueError(f"S is not unitary (residual {res['unitarity']:.3e})")
        if res["damping"] > tol:
            raise ValueError(f"K + K* + L*L != 0 (residual {res['damping']:.3e})")
        return self

    def embed(self, target: HilbertSpace) -> "SLH":
        return SLH(embed_blocks(self.S, self.space, target), embed_blocks(self.L, self.space, target),
                   embed_blocks(self.K, self.space, target), target)

    def to_json(self) -> dict:
        return {
            "kind": "slh",
            "channels": self.n,
            "dim": self.d,
            "space": self.space.to_json(),
            "S": matrix_to_json(self.S),
            "L": matrix_to_json(self.L),
            "K": matrix_to_json(self.K),
            "H": matrix_to_json(self.H),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SLH":
        d, n = int(data["dim"]), int(data["channels"])
        space = HilbertSpace.from_json(data.get("space", []))
        if not data.get("space") and d > 1:
            space = default_space(d)

        def mat(key, shape):
            return _check_shape(key, matrix_from_json(data[key]).reshape(shape)
                                if len(data[key]) == 0 else matrix_from_json(data[key]), shape)

        return cls(mat("S", (n * d, n * d)), mat("L", (n * d, d)), mat("K", (d, d)), space)


@dataclass(frozen=True, eq=False)
class ItoMatrix:
    """``G = [[K, -L*S], [L, S - I]]`` as a ``(1+n) d`` square matrix."""

    G: np.ndarray
    n: int
    d: int
    space: HilbertSpace | None = None

    def __post_init__(self):
        G = _cm(self.G)
        size = (1 + self.n) * self.d
        if G.shape != (size, size):
            raise ValueError(f"Itô matrix for n={self.n}, d={self.d} must be {size}x{size}, got {G.shape}")
        object.__setattr__(self, "G", G)
        if self.space is None:
            object.__setattr__(self, "space", default_space(self.d))

    def as_block(self) -> schur.BlockMatrix:
        d = self.d
        labels = ["0"] + [str(j + 1) for j in range(self.n)]
        return schur.BlockMatrix.square(labels, [d] * (1 + self.n), self.G)


def ito_matrix(t: SLH) -> ItoMatrix:
    d, n = t.d, t.n
    G = np.zeros(((1 + n) * d, (1 + n) * d), dtype=complex)
    G[:d, :d] = t.K
    G[:d, d:] = -_adj(t.L) @ t.S
    G[d:, :d] = t.L
    G[d:, d:] = t.S - np.eye(n * d)
    return ItoMatrix(G, n, d, t.space)


def from_ito(G: ItoMatrix, check: bool = True, tol: float = 1e-8) -> SLH:
    """Read ``(S, L, K)`` off an Itô matrix.

    With ``check`` the redundant upper-right block is compared against ``-L*S``.
    """
    d, n = G.d, G.n
    K = G.G[:d, :d]
    L = G.G[d:, :d]
    S = G.G[d:, d:] + np.eye(n * d)
    if check:
        res = _rel(G.G[:d, d:] + _adj(L) @ S, G.G[:d, d:], L)
        if res > tol:
            raise ValueError(f"malformed Itô matrix: upper-right block differs from -L*S by {res:.3e}")
    return SLH(S, L, K, G.space)


def series_product(t2: SLH, t1: SLH) -> SLH:
    """``t2 ◁ t1``: the output of ``t1`` feeds the input of ``t2``."""
    if t1.n != t2.n:
        raise ValueError(f"channel counts differ: {t2.n} vs {t1.n}")
    space = t2.space.union(t1.space)
    a, b = t2.embed(space), t1.embed(space)
    S = a.S @ b.S
    L = a.L + a.S @ b.L
    K = b.K + a.K - _adj(a.L) @ a.S @ b.L
    return SLH(S, L, K, space)


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r, c = r + m.shape[0], c + m.shape[1]
    return out


def joint_space(spaces: Sequence[HilbertSpace]) -> HilbertSpace:
    """Union of factor lists; a label shared by two components is one shared factor."""
    out = HilbertSpace(())
    for sp in spaces:
        out = out.union(sp)
    return out


def concatenate(components: Sequence[SLH]) -> SLH:
    """Open-loop assembly: block-diagonal ``S``, stacked ``L``, summed ``K``."""
    if not components:
        raise ValueError("need at least one component")
    space = joint_space([c.space for c in components])
    emb = [c.embed(space) for c in components]
    return SLH(_block_diag([c.S for c in emb]), np.vstack([c.L for c in emb]),
               sum(c.K for c in emb), space)


# ---------------------------------------------------------------------------
# oscillator models


@dataclass(frozen=True, eq=False)
class OscillatorModel:
    """k-scaled component ``S(k) = S``, ``L(k) = kCa + G``,
    ``K(k) = k^2 a*Aa + k a*Z + k Xa + R`` with ``m`` fast oscillators.

    ``m = 0`` is allowed and describes a plain ``(S, G, R)`` triple.
    """

    S: np.ndarray
    C: np.ndarray
    G: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    R: np.ndarray
    space: HilbertSpace | None = None
    Omega: np.ndarray | None = field(default=None, repr=False)
    Gamma: np.ndarray | None = field(default=None, repr=False)
    Theta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        R = _cm(self.R)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"R must be square, got {R.shape}")
        d = R.shape[0]
        G = _cm(self.G)
        if G.ndim != 2 or G.shape[1] != d or G.shape[0] % d:
            raise ValueError(f"G must be (n*{d}, {d}), got {G.shape}")
        n = G.shape[0] // d
        A = _cm(self.A)
        if A.size == 0:
            A = np.zeros((0, 0), dtype=complex)
        if A.shape[0] != A.shape[1] or A.shape[0] % d:
            raise ValueError(f"A must be (m*{d}, m*{d}), got {A.shape}")
        md = A.shape[0]
        space = default_space(d) if self.space is None else self.space
        if space.total_dim != d:
            raise ValueError(f"space dim {space.total_dim} does not match blocks of size {d}")
        object.__setattr__(self, "S", _check_shape("S", _cm(self.S), (n * d, n * d)))
        object.__setattr__(self, "C", _check_shape("C", _cm(self.C), (n * d, md)))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Z", _check_shape("Z", _cm(self.Z), (md, d)))
        object.__setattr__(self, "X", _check_shape("X", _cm(self.X), (d, md)))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "space", space)
        for name, shape in (("Omega", (md, md)), ("Gamma", (md, d)), ("Theta", (d, d))):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _check_shape(name, _cm(val), shape))

    @classmethod
    def from_hamiltonian(cls, S, C, G, Omega, Gamma, Theta, space: HilbertSpace | None = None,
                         tol: float = RESIDUAL_TOL) -> "OscillatorModel":
        """Blocks from ``H(k) = k^2 a*Ωa + k a*Γ + k Γ*a + Θ``; the identities then hold by construction."""
        S, C, G = _cm(S), _cm(C), _cm(G)
        Omega, Gamma, Theta = _cm(Omega), _cm(Gamma), _cm(Theta)
        if Omega.size and not is_hermitian(Omega, tol):
            raise ValueError("Omega must be Hermitian")
        if not is_hermitian(Theta, tol):
            raise ValueError("Theta must be Hermitian")
        if S.size and not is_unitary(S, tol):
            raise ValueError("S must be unitary")
        A = -0.5 * _adj(C) @ C - 1j * Omega
        Z = -0.5 * _adj(C) @ G - 1j * Gamma
        X = -0.5 * _adj(G) @ C - 1j * _adj(Gamma)
        R = -0.5 * _adj(G) @ G - 1j * Theta
        if A.size and condition_number(A) >= INVERTIBILITY_COND:
            raise PreconditionError("A singular", "A = -1/2 C*C - iΩ is not invertible")
        return cls(S, C, G, A, Z, X, R, space, Omega, Gamma, Theta)

    @classmethod
    def from_slh(cls, t: SLH) -> "OscillatorModel":
        d, n = t.d, t.n
        return cls(t.S, np.zeros((n * d, 0)), t.L, np.zeros((0, 0)), np.zeros((0, d)),
                   np.zeros((d, 0)), t.K, t.space)

    @property
    def d(self) -> int:
        return self.R.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[0] // self.d

    @property
    def m(self) -> int:
        return self.A.shape[0] // self.d

    @property
    def has_hamiltonian(self) -> bool:
        return self.Omega is not None and self.Gamma is not None and self.Theta is not None

    def identity_residuals(self) -> dict[str, float]:
        C, G = self.C, self.G
        return {
            "A+A*=-C*C": _rel(self.A + _adj(self.A) + _adj(C) @ C, self.A, _adj(C) @ C),
            "X+Z*=-G*C": _rel(self.X + _adj(self.Z) + _adj(G) @ C, self.X, _adj(G) @ C),
            "R+R*=-G*G": _rel(self.R + _adj(self.R) + _adj(G) @ G, self.R, _adj(G) @ G),
        }

    def hamiltonian_data(self, tol: float = RESIDUAL_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Ω, Γ, Θ)``: stored if present, otherwise recovered from the identities."""
        if self.has_hamiltonian:
            return self.Omega, self.Gamma, self.Theta
        worst = max(self.identity_residuals().values())
        if worst > tol:
            raise PreconditionError("identities", f"no Hamiltonian form: identity residual {worst:.3e}")
        C, G = self.C, self.G
        Omega = 1j * (self.A + 0.5 * _adj(C) @ C)
        Gamma = 1j * (self.Z + 0.5 * _adj(C) @ G)
        Theta = 1j * (self.R + 0.5 * _adj(G) @ G)
        return 0.5 * (Omega + _adj(Omega)), Gamma, 0.5 * (Theta + _adj(Theta))

    def embed(self, target: HilbertSpace) -> "OscillatorModel":
        e = lambda x: None if x is None else embed_blocks(x, self.space, target)  # noqa: E731
        return OscillatorModel(e(self.S), e(self.C), e(self.G), e(self.A), e(self.Z), e(self.X),
                               e(self.R), target, e(self.Omega), e(self.Gamma), e(self.Theta))

    def to_json(self) -> dict:
        out = {
            "kind": "oscillator",
            "channels": self.n,
            "oscillators": self.m,
            "dim": self.d,
            "space": self.space.to_json(),
        }
        for key in ("S", "C", "G", "A", "Z", "X", "R"):
            out[key] = matrix_to_json(getattr(self, key))
        return out

    @classmethod
    def from_json(cls, data: dict) -> "OscillatorModel":
        d, n, m = int(data["dim"]), int(data["channels"]), int(data["oscillators"])
        space = HilbertSpace.from_json(data.get("space", []))
        if not data.get("space") and d > 1:
            space = default_space(d)
        shapes = {"S": (n * d, n * d), "C": (n * d, m * d), "G": (n * d, d), "A": (m * d, m * d),
                  "Z": (m * d, d), "X": (d, m * d), "R": (d, d)}
        blocks = {}
        for key, shape in shapes.items():
            arr = matrix_from_json(data[key])
            blocks[key] = np.zeros(shape, dtype=complex) if 0 in shape else arr
        return cls(space=space, **blocks)


def model_from_json(data: dict):
    if data.get("kind") == "oscillator":
        return OscillatorModel.from_json(data)
    return SLH.from_json(data)


def concatenate_models(models: Sequence[OscillatorModel]) -> OscillatorModel:
    """Open-loop assembly of oscillator models; oscillators are numbered component by component."""
    if not models:
        raise ValueError("need at least one component")
    space = joint_space([m.space for m in models])
    emb = [m.embed(space) for m in models]
    D = space.total_dim
    n_tot = sum(m.n for m in emb)
    md_tot = sum(m.A.shape[0] for m in emb)
    C = np.zeros((n_tot * D, md_tot), dtype=complex)
    Z = np.zeros((md_tot, D), dtype=complex)
    X = np.zeros((D, md_tot), dtype=complex)
    r = c = 0
    for m in emb:
        C[r:r + m.C.shape[0], c:c + m.C.shape[1]] = m.C
        Z[c:c + m.Z.shape[0]] = m.Z
        X[:, c:c + m.X.shape[1]] = m.X
        r, c = r + m.C.shape[0], c + m.C.shape[1]
    ham = {}
    if all(m.has_hamiltonian for m in emb):
        ham = dict(Omega=_block_diag([m.Omega for m in emb]),
                   Gamma=np.vstack([m.Gamma for m in emb]) if md_tot else np.zeros((0, D)),
                   Theta=sum(m.Theta for m in emb))
    return OscillatorModel(
        _block_diag([m.S for m in emb]), C, np.vstack([m.G for m in emb]),
        _block_diag([m.A for m in emb]), Z, X, sum(m.R for m in emb), space, **ham)


def series_product_models(m2: OscillatorModel, m1: OscillatorModel) -> OscillatorModel:
    """Cascade ``m2 ◁ m1`` at fixed k, collecting powers of k.

    Oscillators of ``m1`` come first. The coupling block ``-C2* S2 C1`` lands
    below the diagonal of the joint ``A``.
    """
    if m1.n != m2.n:
        raise ValueError(f"channel counts differ: {m2.n} vs {m1.n}")
    space = m2.space.union(m1.space)
    a, b = m2.embed(space), m1.embed(space)
    S2 = a.S
    C = np.hstack([S2 @ b.C, a.C])
    G = a.G + S2 @ b.G
    A = np.block([[b.A, np.zeros((b.A.shape[0], a.A.shape[1]))],
                  [-_adj(a.C) @ S2 @ b.C, a.A]])
    Z = np.vstack([b.Z, a.Z - _adj(a.C) @ S2 @ b.G])
    X = np.hstack([b.X - _adj(a.G) @ S2 @ b.C, a.X])
    R = b.R + a.R - _adj(a.G) @ S2 @ b.G
    return OscillatorModel(S2 @ b.S, C, G, A, Z, X, R, space)


# ---------------------------------------------------------------------------
# feedback


@dataclass(frozen=True)
class ChannelLayout:
    """Channel permutation aligning each fed-back output with the input it drives.

    After permutation the external channels come first (output ``out_perm[k]``
    paired with input ``in_perm[k]``) and the internal pairs follow.
    """

    n: int
    out_perm: tuple[int, ...]
    in_perm: tuple[int, ...]
    n_internal: int

    @property
    def n_external(self) -> int:
        return self.n - self.n_internal


def channel_layout(n: int, connections: Sequence[tuple[int, int]],
                   externals: tuple[Sequence[int], Sequence[int]] | None = None) -> ChannelLayout:
    outs = [int(o) for o, _ in connections]
    ins = [int(i) for _, i in connections]
    for ch in outs + ins:
        if not 0 <= ch < n:
            raise ValueError(f"dangling connection: channel {ch} does not exist (n = {n})")
    if len(set(outs)) != len(outs):
        raise ValueError("an output channel is connected twice")
    if len(set(ins)) != len(ins):
        raise ValueError("an input channel is connected twice")
    free_out = [c for c in range(n) if c not in outs]
    free_in = [c for c in range(n) if c not in ins]
    if externals is not None:
        ext_out, ext_in = [int(c) for c in externals[0]], [int(c) for c in externals[1]]
        if sorted(ext_out) != free_out or sorted(ext_in) != free_in:
            raise ValueError("external ordering must list every unconnected port exactly once")
        free_out, free_in = ext_out, ext_in
    return ChannelLayout(n, tuple(free_out + outs), tuple(free_in + ins), len(connections))


def _permute_rows(mat: np.ndarray, perm: Sequence[int], d: int) -> np.ndarray:
    idx = np.concatenate([np.arange(p * d, (p + 1) * d) for p in perm]) if len(perm) else np.array([], int)
    return mat[idx]


def permute_channels(obj, layout: ChannelLayout):
    """Relabel channels: rows of ``S``, ``L``/``G``, ``C`` by ``out_perm``; columns of ``S`` by ``in_perm``."""
    d = obj.d
    S = select_blocks(obj.S, layout.out_perm, layout.in_perm, d)
    if isinstance(obj, SLH):
        return SLH(S, _permute_rows(obj.L, layout.out_perm, d), obj.K, obj.space)
    return OscillatorModel(S, _permute_rows(obj.C, layout.out_perm, d),
                           _permute_rows(obj.G, layout.out_perm, d), obj.A, obj.Z, obj.X, obj.R,
                           obj.space, obj.Omega, obj.Gamma, obj.Theta)


def _require_well_posed(S_ii: np.ndarray) -> float:
    cond = condition_number(S_ii - np.eye(S_ii.shape[0]))
    if cond >= INVERTIBILITY_COND:
        raise IllPosedNetworkError("S_ii - I singular",
                                   f"condition number {cond:.3e}; the feedback network is ill-posed")
    return cond


def feedback_reduce(G: ItoMatrix, connections: Sequence[tuple[int, int]],
                    externals=None, *, check: bool = True) -> ItoMatrix:
    """Instantaneous feedback limit ``G_ee - G_ei (G_ii)^{-1} G_ie`` on the external channels."""
    if not connections:
        return G
    layout = channel_layout(G.n, connections, externals)
    aligned = ito_matrix(permute_channels(from_ito(G, check=False), layout))
    d, ne, ni = G.d, layout.n_external, layout.n_internal
    _require_well_posed(aligned.G[(1 + ne) * d:, (1 + ne) * d:] + np.eye(ni * d))
    bm = schur.BlockMatrix.square(("e", "i"), ((1 + ne) * d, ni * d), aligned.G)
    reduced = schur.complement(bm, ["i"], check=check)
    return ItoMatrix(reduced.entries, ne, d, G.space)


def feedback(t: SLH, connections, externals=None, *, check: bool = True) -> SLH:
    return from_ito(feedback_reduce(ito_matrix(t), connections, externals, check=check))


def g_matrix(model: OscillatorModel) -> schur.BlockMatrix:
    """``g`` over the slow/fast split, with ``G(k) = [I, k a*] g [I; k a]``.

    The fast block is ``[[A, 0], [0, 0]]``; its zero part has ``n d`` rows.
    """
    d, n, md = model.d, model.n, model.A.shape[0]
    S, C, G = model.S, model.C, model.G
    eye = np.eye(n * d)
    zf = n * d
    g_ss = np.block([[model.R, -_adj(G) @ S], [G, S - eye]])
    g_sf = np.block([[model.X, np.zeros((d, zf))], [C, np.zeros((n * d, zf))]])
    g_fs = np.block([[model.Z, -_adj(C) @ S], [np.zeros((zf, d)), np.zeros((zf, n * d))]])
    g_ff = np.block([[model.A, np.zeros((md, zf))], [np.zeros((zf, md)), np.zeros((zf, zf))]])
    mat = np.block([[g_ss, g_sf], [g_fs, g_ff]])
    return schur.BlockMatrix.square(("s", "f"), ((1 + n) * d, md + zf), mat)


FOUR_WAY_LABELS = ("1", "2", "3", "4")


def four_way_g(model: OscillatorModel, connections: Sequence[tuple[int, int]] = (),
               externals=None) -> tuple[schur.BlockMatrix, ChannelLayout]:
    """``g`` split into slow-external (1), slow-internal (2), fast (3) and the zero fast-internal block (4)::

        [[R1, M1,          X1, 0],
         [G1, S_ii - I,    C_i, 0],
         [Z1, -C* S_i,     A,   0],
         [0,  0,           0,   0]]
    """
    layout = channel_layout(model.n, connections, externals)
    p = permute_channels(model, layout)
    d, ne, ni, md = p.d, layout.n_external, layout.n_internal, p.A.shape[0]
    ed = ne * d
    S, C, G = p.S, p.C, p.G
    S_e, S_i = S[:, :ed], S[:, ed:]
    S_ee, S_ei, S_ie, S_ii = S[:ed, :ed], S[:ed, ed:], S[ed:, :ed], S[ed:, ed:]
    C_e, C_i, G_e, G_i = C[:ed], C[ed:], G[:ed], G[ed:]
    R1 = np.block([[p.R, -_adj(G) @ S_e], [G_e, S_ee - np.eye(ed)]])
    M1 = np.vstack([-_adj(G) @ S_i, S_ei])
    X1 = np.vstack([p.X, C_e])
    G1 = np.hstack([G_i, S_ie])
    Z1 = np.hstack([p.Z, -_adj(C) @ S_e])
    sizes = ((1 + ne) * d, ni * d, md, ni * d)
    z = lambda r, c: np.zeros((sizes[r], sizes[c]), dtype=complex)  # noqa: E731
    blocks = [
        [R1, M1, X1, z(0, 3)],
        [G1, S_ii - np.eye(ni * d), C_i, z(1, 3)],
        [Z1, -_adj(C) @ S_i, p.A, z(2, 3)],
        [z(3, 0), z(3, 1), z(3, 2), z(3, 3)],
    ]
    mat = np.block([[np.asarray(b, dtype=complex).reshape(sizes[i], sizes[j]) for j, b in enumerate(row)]
                    for i, row in enumerate(blocks)])
    return schur.BlockMatrix.square(FOUR_WAY_LABELS, sizes, mat), layout


def _model_from_reduced_g(red: schur.BlockMatrix, d: int, ne: int, space: HilbertSpace) -> OscillatorModel:
    b11, b13, b31, b33 = red["1", "1"], red["1", "3"], red["3", "1"], red["3", "3"]
    R = b11[:d, :d]
    G = b11[d:, :d]
    S = b11[d:, d:] + np.eye(ne * d)
    X, C = b13[:d], b13[d:]
    Z = b31[:, :d]
    return OscillatorModel(S, C, G, b33, Z, X, R, space)


def feedback_reduce_model(model: OscillatorModel, connections: Sequence[tuple[int, int]],
                          externals=None, *, check: bool = True) -> OscillatorModel:
    """Feedback limit at fixed k, read off coefficient-by-coefficient in k.

    This is ``g / g_{{2,4},{2,4}}``; the surviving labels 1 and 3 hold the
    slow and fast blocks of the reduced model.
    """
    if not connections:
        return model
    g4, layout = four_way_g(model, connections, externals)
    d, ne, ni = model.d, layout.n_external, layout.n_internal
    _require_well_posed(g4["2", "2"] + np.eye(ni * d))
    red = schur.complement(g4, ["2", "4"], check=check)
    return _model_from_reduced_g(red, d, ne, model.space)


# ---------------------------------------------------------------------------
# adiabatic elimination


def _kernel_condition(model: OscillatorModel, cutoff: int):
    from .sim import y_kernel_check

    return y_kernel_check(model.A, model.m, cutoff, d=model.d)


def adiabatic_eliminate(model: OscillatorModel, *, check: bool = True, tol: float = RESIDUAL_TOL,
                        kernel_cutoff: int = 4) -> SLH:
    """The k -> ∞ limit ``(I + C A^{-1} C*) S``, ``G - C A^{-1} Z``, ``R - X A^{-1} Z``.

    With ``check`` the identities are verified, ``A`` must be strictly Hurwitz
    or pass the explicit kernel test on ``Y = Σ A_jl a_j* a_l`` (a
    :class:`NonHurwitzWarning` is issued in that case), and the limit triple
    is verified to be unitary with consistent damping.
    """
    if model.m == 0:
        return SLH(model.S, model.G, model.R, model.space)
    A = model.A
    cond = condition_number(A)
    if cond >= INVERTIBILITY_COND:
        raise PreconditionError("A singular", f"condition number {cond:.3e}")
    if check:
        worst = max(model.identity_residuals().values())
        if worst > tol:
            raise PreconditionError("identities", f"identity residual {worst:.3e} exceeds {tol:g}")
        if not is_strictly_hurwitz(A):
            report = _kernel_condition(model, kernel_cutoff)
            if not report.passed:
                raise PreconditionError("kernel", "A is not strictly Hurwitz and ker Y != slow space")
            warnings.warn("A is not strictly Hurwitz; eliminating on the kernel condition",
                          NonHurwitzWarning, stacklevel=2)
    C = model.C
    AiCs = np.linalg.solve(A, _adj(C))
    AiZ = np.linalg.solve(A, model.Z)
    S_hat = (np.eye(C.shape[0]) + C @ AiCs) @ model.S
    L_hat = model.G - C @ AiZ
    K_hat = model.R - model.X @ AiZ
    out = SLH(S_hat, L_hat, K_hat, model.space)
    if check:
        res = out.residuals()
        if res["unitarity"] > tol or res["damping"] > tol:
            raise PreconditionError("limit invalid",
                                    f"limit triple residuals {res}; expected unitary S and K+K*+L*L=0")
    return out


def eliminate_via_schur(model: OscillatorModel, *, check: bool = True) -> SLH:
    """Elimination as the generalized Schur complement ``g / g_ff``."""
    if model.m == 0:
        return SLH(model.S, model.G, model.R, model.space)
    red = schur.complement(g_matrix(model), ["f"], check=check)
    return from_ito(ItoMatrix(red.entries, model.n, model.d, model.space))


# ---------------------------------------------------------------------------
# commutativity


@dataclass
class Precondition:
    ok: bool
    value: float
    detail: str = ""


@dataclass
class CommutativityReport:
    tol: float
    preconditions: dict[str, Precondition]
    max_block_diff: dict[str, float] | None = None
    schur_block_diff: dict[str, float] | None = None
    quotient_conditions: list[bool] | None = None
    warnings: list[str] = field(default_factory=list)
    path_af: SLH | None = None
    path_fa: SLH | None = None

    @property
    def hypotheses_met(self) -> bool:
        return all(p.ok for p in self.preconditions.values())

    @property
    def passed(self) -> bool | None:
        if not self.hypotheses_met or self.max_block_diff is None:
            return None
        return all(v <= self.tol for v in self.max_block_diff.values())

    @property
    def verdict(self) -> str:
        if not self.hypotheses_met:
            return "hypotheses not met"
        return "pass" if self.passed else "limits disagree"

    def failed_preconditions(self) -> list[str]:
        return [k for k, p in self.preconditions.items() if not p.ok]

    def to_json(self) -> dict:
        return {
            "preconditions": {k: {"ok": p.ok, "value": p.value, "detail": p.detail}
                              for k, p in self.preconditions.items()},
            "max_block_diff": self.max_block_diff,
            "schur_block_diff": self.schur_block_diff,
            "quotient_conditions": self.quotient_conditions,
            "warnings": list(self.warnings),
            "verdict": self.verdict,
            "pass": self.passed,
            "tol": self.tol,
        }


def triple_diff(a: SLH, b: SLH) -> dict[str, float]:
    return {"S": _max_abs(a.S - b.S), "L": _max_abs(a.L - b.L), "K": _max_abs(a.K - b.K)}


def _open_loop(network) -> tuple[OscillatorModel, list[OscillatorModel]]:
    if isinstance(network, OscillatorModel):
        return network, [network]
    if isinstance(network, SLH):
        model = OscillatorModel.from_slh(network)
        return model, [model]
    comps = [OscillatorModel.from_slh(c) if isinstance(c, SLH) else c for c in network]
    return concatenate_models(comps), comps


def _hurwitz_or_kernel(name: str, A: np.ndarray, m: int, d: int, require_hurwitz: bool,
                       report: CommutativityReport) -> None:
    if A.size == 0:
        report.preconditions[name] = Precondition(True, 0.0, "no oscillators")
        return
    lam = float(np.linalg.eigvalsh(0.5 * (A + _adj(A)))[-1])
    ok = is_strictly_hurwitz(A)
    detail = "max eigenvalue of the Hermitian part of A"
    if not ok and not require_hurwitz:
        from .sim import y_kernel_check

        if y_kernel_check(A, m, 4, d=d).passed:
            ok = True
            report.warnings.append(f"{name}: not strictly Hurwitz, kernel condition holds")
    report.preconditions[name] = Precondition(ok, lam, detail)


def check_commutativity(network, connections: Sequence[tuple[int, int]], externals=None, *,
                        tol: float = 1e-9, require_hurwitz: bool = True,
                        evaluate: bool = True) -> CommutativityReport:
    """Compare elimination-then-feedback with feedback-then-elimination.

    ``network`` is a list of components (each an :class:`OscillatorModel` or
    :class:`SLH`) or an already concatenated open-loop model. Channel numbers
    in ``connections`` refer to the open-loop model. Hypotheses are checked
    first; when they fail the report says so and carries no verdict. With
    ``evaluate=False`` only the hypotheses are checked.
    """
    open_loop, comps = _open_loop(network)
    report = CommutativityReport(tol=tol, preconditions={})
    d, m = open_loop.d, open_loop.m

    worst = max(open_loop.identity_residuals().values())
    report.preconditions["identities"] = Precondition(worst <= RESIDUAL_TOL, worst, "max identity residual")
    _hurwitz_or_kernel("open_loop_hurwitz", open_loop.A, m, d, require_hurwitz, report)

    layout = channel_layout(open_loop.n, connections, externals)
    p = permute_channels(open_loop, layout)
    ed, ni = layout.n_external * d, layout.n_internal
    S_i = p.S[:, ed:]
    S_ii = p.S[ed:, ed:]
    C_i = p.C[ed:]
    eye_i = np.eye(ni * d)
    cond_ii = condition_number(S_ii - eye_i) if ni else 1.0
    report.preconditions["S_ii-I_invertible"] = Precondition(
        cond_ii < INVERTIBILITY_COND, cond_ii, "condition number")
    if m and ni:
        cond_A = condition_number(p.A)
        if cond_A < INVERTIBILITY_COND:
            T = S_ii + C_i @ np.linalg.solve(p.A, _adj(p.C) @ S_i) - eye_i
            cond_T = condition_number(T)
        else:
            cond_T = np.inf
        report.preconditions["S_ii+C_iA^-1C*S_i-I_invertible"] = Precondition(
            cond_T < INVERTIBILITY_COND, cond_T, "condition number")

    reduced = None
    if report.preconditions["S_ii-I_invertible"].ok:
        reduced = feedback_reduce_model(open_loop, connections, externals, check=False)
        _hurwitz_or_kernel("reduced_hurwitz", reduced.A, m, d, require_hurwitz, report)
    else:
        report.preconditions["reduced_hurwitz"] = Precondition(False, float("nan"), "feedback undefined")
    if m and ni and report.preconditions["S_ii-I_invertible"].ok:
        g4, _ = four_way_g(open_loop, connections, externals)
        report.quotient_conditions = list(schur.check_quotient_conditions(g4, ["1"], ["2"], ["3", "4"]).conditions)
    if not report.hypotheses_met or not evaluate:
        return report

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonHurwitzWarning)
        limits = [adiabatic_eliminate(c) for c in comps] if len(comps) > 1 else [adiabatic_eliminate(open_loop)]
        limit_open = concatenate(limits) if len(limits) > 1 else limits[0]
        report.path_af = feedback(limit_open, connections, externals)
        report.path_fa = adiabatic_eliminate(reduced)
    report.max_block_diff = triple_diff(report.path_af, report.path_fa)

    if m and ni:
        one_shot = schur.complement(g4, ["2", "3", "4"], check=False)
        schur_limit = from_ito(ItoMatrix(one_shot.entries, layout.n_external, d, open_loop.space), check=False)
        report.schur_block_diff = triple_diff(report.path_fa, schur_limit)
    return report


def validate_network(network, connections, externals=None, *, require_hurwitz: bool = True) -> CommutativityReport:
    """Run the hypothesis checks of :func:`check_commutativity` without evaluating either limit order."""
    return check_commutativity(network, connections, externals, require_hurwitz=require_hurwitz, evaluate=False)
