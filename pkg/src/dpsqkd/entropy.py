"""Von Neumann and conditional entropies (in bits) of classical-quantum states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsqkd.errors import ConfigError
from dpsqkd.fock import check_hermitian

EIG_CLAMP = 1e-14
PSD_TOL = 1e-10
TRACE_TOL = 1e-9


def _hermitian_part(a) -> np.ndarray:
    a = check_hermitian(a)
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True)
class CqState:
    """sum_b |b><b| (x) blocks[b], with unnormalized Eve-side blocks."""

    blocks: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        if len(self.blocks) != 2:
            raise ConfigError("a binary cq state has exactly two blocks")
        blocks = tuple(_hermitian_part(b) for b in self.blocks)
        if blocks[0].shape != blocks[1].shape:
            raise ConfigError("blocks must share one dimension")
        for b in blocks:
            if np.linalg.eigvalsh(b).min(initial=0.0) < -PSD_TOL:
                raise ConfigError("block is not positive semidefinite")
        total = np.trace(blocks[0]).real + np.trace(blocks[1]).real
        if total <= 0:
            raise ConfigError("cq state has zero trace")
        if total > 1 + TRACE_TOL:
            raise ConfigError(f"cq state has trace {total} > 1")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks))

    @property
    def probabilities(self) -> tuple[float, float]:
        t = self.trace
        return tuple(float(np.trace(b).real / t) for b in self.blocks)


def entropy_from_eigenvalues(evals) -> float:
    evals = np.asarray(evals, dtype=float)
    evals = evals[evals > EIG_CLAMP]
    return float(-np.sum(evals * np.log2(evals)))


def von_neumann_entropy(rho, normalize: bool = True) -> float:
    """-Tr rho log2 rho.

    A trace off from 1 by more than 1e-9 is divided out when ``normalize`` is
    set and rejected otherwise.
    """
    rho = _hermitian_part(rho)
    evals = np.linalg.eigvalsh(rho)
    if evals.min(initial=0.0) < -PSD_TOL:
        raise ConfigError("density matrix is not positive semidefinite")
    tr = evals.sum()
    if abs(tr - 1) > TRACE_TOL:
        if not normalize or tr <= 0:
            raise ConfigError(f"density matrix has trace {tr}")
        evals = evals / tr
    return entropy_from_eigenvalues(evals)


def binary_entropy(p: float) -> float:
    return entropy_from_eigenvalues([p, 1 - p])


def conditional_entropy_cq(sigma: CqState) -> float:
    """H(A|E) = H(AE) - H(E) for a binary classical register A."""
    total = sigma.trace
    s0, s1 = (b / total for b in sigma.blocks)
    h_ae = entropy_from_eigenvalues(np.concatenate([np.linalg.eigvalsh(s0), np.linalg.eigvalsh(s1)]))
    h_e = entropy_from_eigenvalues(np.linalg.eigvalsh(s0 + s1))
    return h_ae - h_e


def _support(block: np.ndarray, tol: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(block)
    return evecs[:, evals > tol]


def disjoint_support_check(sigma: CqState, tol: float = 1e-6) -> bool:
    """True when the supports of the two blocks are orthogonal.

    Eigenvalues at or below ``tol`` (relative to the total trace) are treated
    as outside the support; orthogonality is judged by the spectral norm of
    the product of the two support projectors.
    """
    scale = sigma.trace
    v0 = _support(sigma.blocks[0] / scale, tol)
    v1 = _support(sigma.blocks[1] / scale, tol)
    if v0.shape[1] == 0 or v1.shape[1] == 0:
        return True
    return bool(np.linalg.norm(v1.conj().T @ v0, ord=2) <= tol)


def _random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_cq_state(rng: np.random.Generator, dim: int, disjoint: bool) -> CqState:
    """Random normalized cq state; with ``disjoint`` the two blocks live on
    complementary sets of columns of a random unitary."""
    u = _random_unitary(dim, rng)
    if disjoint:
        k0 = int(rng.integers(1, dim))
        k1 = int(rng.integers(1, dim - k0 + 1))
        cols = (u[:, :k0], u[:, k0:k0 + k1])
    else:
        cols = tuple(u @ (rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k)))
                     for k in rng.integers(1, dim + 1, size=2))
    blocks = []
    for c in cols:
        w = rng.uniform(0.05, 1.0, size=c.shape[1])
        blocks.append((c * w) @ c.conj().T)
    total = sum(np.trace(b).real for b in blocks)
    return CqState(tuple(b / total for b in blocks))
