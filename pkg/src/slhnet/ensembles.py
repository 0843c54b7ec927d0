"""Random model generators shared by the tests and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import unitary_group

from .operators import HilbertSpace, condition_number, is_strictly_hurwitz
from .schur import BlockMatrix
from .slh import (
    INVERTIBILITY_COND,
    SLH,
    OscillatorModel,
    channel_layout,
    concatenate_models,
    feedback_reduce_model,
    permute_channels,
)


def random_complex(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_hermitian(rng: np.random.Generator, size: int, scale: float = 1.0) -> np.ndarray:
    M = random_complex(rng, (size, size), scale)
    return 0.5 * (M + M.conj().T)


def random_unitary(rng: np.random.Generator, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros((0, 0), dtype=complex)
    if size == 1:
        return np.array([[np.exp(2j * np.pi * rng.random())]])
    return unitary_group.rvs(size, random_state=rng)


def random_slh(rng: np.random.Generator, n: int, space: HilbertSpace | int) -> SLH:
    if isinstance(space, int):
        space = HilbertSpace.of(("sys", space)) if space > 1 else HilbertSpace(())
    d = space.total_dim
    return SLH.from_hamiltonian(random_unitary(rng, n * d), random_complex(rng, (n * d, d)),
                                random_hermitian(rng, d), space)


def random_oscillator_model(rng: np.random.Generator, n: int, m: int, space: HilbertSpace | int,
                            *, full_rank_C: bool = True) -> OscillatorModel:
    """Hamiltonian-form model ``A = -1/2 C*C - iΩ``.

    With ``full_rank_C`` (needs ``n >= m``) the Hermitian part of ``A`` is
    negative definite, so ``A`` is strictly Hurwitz.
    """
    if isinstance(space, int):
        space = HilbertSpace.of(("sys", space)) if space > 1 else HilbertSpace(())
    d = space.total_dim
    while True:
        C = random_complex(rng, (n * d, m * d))
        if not full_rank_C or m == 0 or np.linalg.matrix_rank(C) == m * d:
            break
    return OscillatorModel.from_hamiltonian(
        random_unitary(rng, n * d), C, random_complex(rng, (n * d, d)),
        random_hermitian(rng, m * d), random_complex(rng, (m * d, d)), random_hermitian(rng, d), space)


def random_cascade(rng: np.random.Generator, d: int = 3, n: int = 1) -> tuple[OscillatorModel, OscillatorModel]:
    """Two one-oscillator components on a shared ``d``-dimensional slow space."""
    space = HilbertSpace.of(("sys", d)) if d > 1 else HilbertSpace(())
    return (random_oscillator_model(rng, n, 1, space), random_oscillator_model(rng, n, 1, space))


@dataclass
class RandomNetwork:
    components: list[OscillatorModel]
    connections: list[tuple[int, int]]
    attempts: int

    @property
    def open_loop(self) -> OscillatorModel:
        return concatenate_models(self.components)


def _has_cycle(owner: list[int], connections: list[tuple[int, int]], n_comp: int) -> bool:
    adj = {c: set() for c in range(n_comp)}
    for o, i in connections:
        adj[owner[o]].add(owner[i])
    state = [0] * n_comp

    def visit(u):
        state[u] = 1
        for v in adj[u]:
            if state[v] == 1 or (state[v] == 0 and visit(v)):
                return True
        state[u] = 2
        return False

    return any(state[u] == 0 and visit(u) for u in range(n_comp))


def satisfies_hypotheses(model: OscillatorModel, connections) -> bool:
    """Feedback well-posed, the joint invertibility condition, and strict Hurwitz before and after feedback."""
    if not is_strictly_hurwitz(model.A):
        return False
    layout = channel_layout(model.n, connections)
    p = permute_channels(model, layout)
    d = model.d
    ed = layout.n_external * d
    eye = np.eye(layout.n_internal * d)
    S_ii, S_i, C_i = p.S[ed:, ed:], p.S[:, ed:], p.C[ed:]
    if condition_number(S_ii - eye) >= INVERTIBILITY_COND:
        return False
    T = S_ii + C_i @ np.linalg.solve(p.A, p.C.conj().T @ S_i) - eye
    if condition_number(T) >= INVERTIBILITY_COND:
        return False
    reduced = feedback_reduce_model(model, connections, check=False)
    return is_strictly_hurwitz(reduced.A)


def random_network(rng: np.random.Generator, *, components: int | None = None, d: int | None = None,
                   max_oscillators: int = 2, max_attempts: int = 1000) -> RandomNetwork:
    """A 2-3 component network with at least one directed loop that meets every hypothesis.

    Components share one slow factor of dimension ``d <= 3``. Each component
    has ``m_j`` oscillators and at least ``m_j + 1`` channels so its own ``A``
    is strictly Hurwitz. Samples breaking a hypothesis are redrawn here, so a
    returned network is never rejected downstream.
    """
    for attempt in range(1, max_attempts + 1):
        nc = components or int(rng.integers(2, 4))
        dim = d or int(rng.integers(1, 4))
        space = HilbertSpace.of(("sys", dim)) if dim > 1 else HilbertSpace(())
        comps, owner = [], []
        for j in range(nc):
            m = int(rng.integers(0, max_oscillators + 1))
            n = m + 1 + int(rng.integers(0, 2))
            comps.append(random_oscillator_model(rng, n, m, space))
            owner += [j] * n
        n_tot = len(owner)
        m_tot = sum(c.m for c in comps)
        max_conn = n_tot - m_tot
        if max_conn < 1:
            continue
        c = int(rng.integers(1, max_conn + 1))
        outs = rng.permutation(n_tot)[:c]
        ins = rng.permutation(n_tot)[:c]
        connections = [(int(o), int(i)) for o, i in zip(outs, ins)]
        if not _has_cycle(owner, connections, nc) or not any(owner[o] != owner[i] for o, i in connections):
            continue
        if satisfies_hypotheses(concatenate_models(comps), connections):
            return RandomNetwork(comps, connections, attempt)
    raise RuntimeError("no admissible random network found")


def random_well_defined_block_matrix(rng: np.random.Generator, sizes, rank: int):
    """Square block matrix whose every sub-block inclusion holds, yet blocks are singular.

    Built as ``U F* F V`` with ``F`` of rank ``rank`` and ``U``, ``V``
    block-diagonal invertible: for a positive semidefinite Gram matrix each
    off-diagonal block factors through the diagonal ones, and block-diagonal
    changes of basis preserve that.
    """
    labels = [str(j) for j in range(len(sizes))]
    N = int(sum(sizes))
    F = random_complex(rng, (rank, N))
    gram = F.conj().T @ F

    def block_diag_invertible():
        out = np.zeros((N, N), dtype=complex)
        start = 0
        for s in sizes:
            out[start:start + s, start:start + s] = random_complex(rng, (s, s)) + 2 * np.eye(s)
            start += s
        return out

    return BlockMatrix.square(labels, list(sizes), block_diag_invertible() @ gram @ block_diag_invertible())
