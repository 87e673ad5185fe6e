"""Sparse states in a fixed-photon-number sector of a multimode bosonic Fock space.

A state is a map from occupation tuples ``(m_1, ..., m_M)`` to complex
amplitudes. Only nonzero amplitudes are stored; dense arrays are built on
demand for Gram-matrix and eigenvalue work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from dpsqkd.errors import ConfigError

PRUNE_THRESHOLD = 1e-14
RANK_REL_TOL = 1e-10
HERMITIAN_ATOL = 1e-12

Occupation = tuple[int, ...]


@dataclass(frozen=True)
class FockState:
    num_modes: int
    amplitudes: Mapping[Occupation, complex] = field(default_factory=dict)

    def __post_init__(self):
        totals = set()
        for occ in self.amplitudes:
            if len(occ) != self.num_modes:
                raise ConfigError(f"occupation {occ} does not have {self.num_modes} modes")
            if min(occ, default=0) < 0:
                raise ConfigError(f"negative occupation {occ}")
            totals.add(sum(occ))
        if len(totals) > 1:
            raise ConfigError("amplitudes span several photon-number sectors")

    @property
    def photon_number(self) -> int | None:
        """Total photon number, or None for the zero vector."""
        for occ in self.amplitudes:
            return sum(occ)
        return None

    @property
    def is_zero(self) -> bool:
        return not self.amplitudes

    def norm(self) -> float:
        return float(np.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values())))

    def scaled(self, factor: complex) -> "FockState":
        return _pruned(self.num_modes, {k: factor * a for k, a in self.amplitudes.items()})

    def __len__(self):
        return len(self.amplitudes)


def _pruned(num_modes: int, amps: Mapping[Occupation, complex],
            threshold: float = PRUNE_THRESHOLD) -> FockState:
    return FockState(num_modes, {k: complex(a) for k, a in amps.items() if abs(a) >= threshold})


def vacuum(num_modes: int) -> FockState:
    if num_modes < 1:
        raise ConfigError("need at least one mode")
    return FockState(num_modes, {(0,) * num_modes: 1.0 + 0j})


def apply_creation_superposition(state: FockState, coeffs: Sequence[complex]) -> FockState:
    """Apply ``sum_i coeffs[i] * a_i^dagger`` to ``state``.

    Each creation operator contributes the bosonic factor ``sqrt(m_i + 1)``.
    The result is not renormalized.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.shape != (state.num_modes,):
        raise ConfigError(f"expected {state.num_modes} coefficients, got shape {coeffs.shape}")
    out: dict[Occupation, complex] = {}
    for occ, amp in state.amplitudes.items():
        for i, c in enumerate(coeffs):
            if c == 0:
                continue
            raised = occ[:i] + (occ[i] + 1,) + occ[i + 1:]
            out[raised] = out.get(raised, 0j) + amp * c * np.sqrt(occ[i] + 1)
    return _pruned(state.num_modes, out)


def inner_product(x: FockState, y: FockState) -> complex:
    """Return <x|y>, conjugate-linear in ``x``."""
    if x.num_modes != y.num_modes:
        raise ConfigError(f"mode counts differ: {x.num_modes} vs {y.num_modes}")
    small, large = (x, y) if len(x) <= len(y) else (y, x)
    total = 0j
    for occ, a in small.amplitudes.items():
        b = large.amplitudes.get(occ)
        if b is not None:
            total += a.conjugate() * b if small is x else b.conjugate() * a
    return complex(total)


def linear_combination(states: Sequence[FockState], weights: Sequence[complex]) -> FockState:
    if not states:
        raise ConfigError("empty state list")
    if len(states) != len(weights):
        raise ConfigError("states and weights differ in length")
    num_modes = _common_modes(states)
    out: dict[Occupation, complex] = {}
    for st, w in zip(states, weights):
        if w == 0:
            continue
        for occ, a in st.amplitudes.items():
            out[occ] = out.get(occ, 0j) + w * a
    return _pruned(num_modes, out)


def _common_modes(states: Iterable[FockState]) -> int:
    modes = {st.num_modes for st in states}
    if len(modes) != 1:
        raise ConfigError(f"states disagree on mode count: {sorted(modes)}")
    return modes.pop()


def to_dense(states: Sequence[FockState]) -> tuple[np.ndarray, list[Occupation]]:
    """Stack states as rows of a dense matrix over the union of their supports."""
    if not states:
        raise ConfigError("empty state list")
    _common_modes(states)
    basis = sorted({occ for st in states for occ in st.amplitudes})
    index = {occ: j for j, occ in enumerate(basis)}
    mat = np.zeros((len(states), len(basis)), dtype=complex)
    for row, st in enumerate(states):
        for occ, a in st.amplitudes.items():
            mat[row, index[occ]] = a
    return mat, basis


def gram_matrix(states: Sequence[FockState]) -> np.ndarray:
    """G[j, k] = <states[j]|states[k]>."""
    mat, _ = to_dense(states)
    return mat.conj() @ mat.T


def gram_rank(states: Sequence[FockState], rel_tol: float = RANK_REL_TOL) -> int:
    """Dimension of the span of ``states``, from the Gram spectrum.

    Counts eigenvalues above ``rel_tol`` times the largest one.
    """
    if not states:
        raise ConfigError("gram_rank needs at least one state")
    evals = np.linalg.eigvalsh(gram_matrix(states))
    top = evals.max()
    if top <= 0:
        return 0
    return int(np.count_nonzero(evals > rel_tol * top))


def check_hermitian(a, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Return ``a`` as a complex square array, raising if it is not Hermitian."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.conj().T, rtol=0, atol=atol):
        raise ConfigError("matrix is not Hermitian")
    return a
