"""Alice's block source.

With a uniformly random global phase on each block, the total photon number
of the block is a Poisson variable and, given ``nu`` photons and phase bits
``s``, the block is the Fock state

    |psi_{s,nu}> = (a_s^dagger)^nu |0> / sqrt(nu!),
    a_s = n^{-1/2} sum_i (-1)^{s_i} a_i.

The random phase itself is never simulated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammainc

from dpsqkd.errors import ConfigError, NumericalGuardError
from dpsqkd.fock import FockState, Occupation, gram_rank, linear_combination

BitString = tuple[int, ...]

# dense (2^n x basis) matrix entries allowed in span_dimension
SPAN_ENTRY_LIMIT = 2 ** 24
SPAN_MAX_N = 10


def as_bits(s: Sequence[int], n: int | None = None) -> BitString:
    bits = tuple(int(b) for b in s)
    if any(b not in (0, 1) for b in bits):
        raise ConfigError(f"not a bit string: {s!r}")
    if n is not None and len(bits) != n:
        raise ConfigError(f"bit string has length {len(bits)}, expected {n}")
    return bits


def all_bitstrings(n: int) -> Iterator[BitString]:
    """All 2**n bit strings in lexicographic order."""
    return itertools.product((0, 1), repeat=n)


@dataclass(frozen=True)
class SourceConfig:
    n: int
    mu: float
    nu_max: int | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"block size must be >= 3, got {self.n}")
        if not self.mu >= 0:
            raise ConfigError(f"mean photon number must be >= 0, got {self.mu}")
        if self.nu_max is None:
            object.__setattr__(self, "nu_max", self.n + 8)
        if self.nu_max < self.n - 1:
            raise ConfigError(f"nu_max must be >= n-1 = {self.n - 1}")


@lru_cache(maxsize=None)
def compositions(total: int, parts: int) -> tuple[Occupation, ...]:
    """All occupation tuples of ``parts`` modes holding ``total`` photons."""
    if parts == 1:
        return ((total,),)
    out = []
    for first in range(total, -1, -1):
        out.extend((first,) + rest for rest in compositions(total - first, parts - 1))
    return tuple(out)


@lru_cache(maxsize=None)
def _psi_template(n: int, nu: int) -> tuple[tuple[Occupation, ...], np.ndarray, np.ndarray]:
    occs = compositions(nu, n)
    m = np.array(occs, dtype=np.int64).reshape(len(occs), n)
    log_fact = np.array([math.lgamma(k + 1) for k in range(nu + 1)])
    # sqrt(nu! / prod m_i!) * n^(-nu/2)
    log_amp = 0.5 * (math.lgamma(nu + 1) - log_fact[m].sum(axis=1) - nu * math.log(n))
    return occs, m, np.exp(log_amp)


def psi_state(s: Sequence[int], nu: int, n: int) -> FockState:
    """Return the unit-norm ``nu``-photon block state for phase bits ``s``."""
    s = as_bits(s, n)
    if nu < 0:
        raise ConfigError("photon number must be nonnegative")
    occs, m, base = _psi_template(n, nu)
    signs = 1 - 2 * ((m @ np.array(s)) % 2)
    return FockState(n, dict(zip(occs, (base * signs).astype(complex).tolist())))


def psi_matrix(n: int, nu: int) -> np.ndarray:
    """Dense amplitudes of every psi_{s,nu}, one row per ``s`` in lexicographic order."""
    _, m, base = _psi_template(n, nu)
    s = np.array(list(all_bitstrings(n)), dtype=np.int64)
    return base[None, :] * (1 - 2 * ((s @ m.T) % 2))


def poisson_block_weight(mu: float, nu: int) -> float:
    """Probability that a block carries ``nu`` photons at mean ``mu``."""
    if mu < 0:
        raise ConfigError(f"mean photon number must be >= 0, got {mu}")
    if nu < 0:
        return 0.0
    if mu == 0:
        return 1.0 if nu == 0 else 0.0
    return math.exp(-mu + nu * math.log(mu) - math.lgamma(nu + 1))


def truncated_weight(mu: float, nu: int, n: int) -> float:
    """Photon-number weight in the at-most-(n-2)-photon protocol.

    Blocks with ``nu >= n-1`` are pooled into the last bin. The pooled mass is
    the regularized lower incomplete gamma function, which equals the Poisson
    upper tail without cancellation at small ``mu``.
    """
    if not 0 <= nu <= n - 1:
        raise ConfigError(f"nu must lie in [0, {n - 1}], got {nu}")
    if mu < 0:
        raise ConfigError(f"mean photon number must be >= 0, got {mu}")
    if nu < n - 1:
        return poisson_block_weight(mu, nu)
    if mu == 0:
        return 0.0
    return float(gammainc(n - 1, mu))


def tail_bound(mu: float, n: int) -> float:
    """Upper bound mu^(n-1)/(n-1)! on the pooled multi-photon weight."""
    if mu < 0:
        raise ConfigError(f"mean photon number must be >= 0, got {mu}")
    return mu ** (n - 1) / math.factorial(n - 1)


def span_dimension(n: int, nu: int) -> int:
    """dim Span{psi_{s,nu}} over all 2**n bit strings, by Gram rank."""
    if n < 3 or not 0 <= nu <= n - 1:
        raise ConfigError(f"need n >= 3 and 0 <= nu <= n-1, got n={n}, nu={nu}")
    if n > SPAN_MAX_N or 2 ** n * math.comb(n + nu - 1, nu) > SPAN_ENTRY_LIMIT:
        raise NumericalGuardError(f"span computation too large for n={n}, nu={nu}")
    return gram_rank([psi_state(s, nu, n) for s in all_bitstrings(n)])


def span_dimension_closed_form(n: int, nu: int) -> int:
    """Count of Fourier labels whose Hamming weight is at most nu with nu's parity."""
    return sum(math.comb(n, w) for w in range(nu % 2, min(nu, n) + 1, 2))


def fourier_state(t: Sequence[int], nu: int, n: int) -> FockState:
    """Hadamard transform of the source states:
    2^{-n/2} sum_s (-1)^{t.s} psi_{s,nu}. May be the zero vector."""
    t = as_bits(t, n)
    strings = list(all_bitstrings(n))
    weights = [(-1) ** (sum(a * b for a, b in zip(t, s)) % 2) / 2 ** (n / 2) for s in strings]
    return linear_combination([psi_state(s, nu, n) for s in strings], weights)
