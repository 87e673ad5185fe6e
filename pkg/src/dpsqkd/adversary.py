"""Eve: the explicit intercept-resend attack and the collective-attack entropy bound.

Intercept-resend: Eve measures each block with a copy of Bob's interferometer.
If every internal timing 1..n-1 registers exactly one photon she has read all
relative phases ``s_i xor s_{i+1}`` and resends a matching single photon;
otherwise she resends vacuum. The largest intensity at which her success
probability stays below Bob's expected detection rate caps the key rate.

Collective attacks: for ``nu`` emitted photons Eve's attack leaves her with
vectors ``phi_s`` attached to Bob's error-free single-photon detection. The
per-detection conditional entropy of Alice's sifted bit given Eve, minimized
over families of such vectors in a ``d``-dimensional space, is estimated
numerically by ``estimate_Hn``.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import bisect, minimize
from scipy.special import gammainc

from dpsqkd.entropy import CqState, conditional_entropy_cq
from dpsqkd.errors import ConfigError, NoCrossingError
from dpsqkd.optics import expected_detection_rate, mode_amplitudes
from dpsqkd.source import all_bitstrings, as_bits, poisson_block_weight

ENVELOPE_REL_TOL = 1e-10
WORKERS_ENV = "DPSQKD_WORKERS"


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "none"
    resend_policy: str = "fixed"

    def __post_init__(self):
        if self.mode not in ("none", "intercept_resend"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.resend_policy != "fixed":
            raise ConfigError(f"unknown resend policy {self.resend_policy!r}")


@dataclass(frozen=True)
class EveEnvelopePoint:
    eta: float
    mu_star: float
    rate_cap: float


# ---------------------------------------------------------------------------
# intercept-resend


def _mode_probabilities(n: int) -> list[Fraction]:
    """Exact single-photon detector-mode probabilities for s = 0...0, in table order."""
    table = mode_amplitudes(np.zeros(n)) * 2 * math.sqrt(n)
    ints = np.rint(table).astype(int).ravel()
    return [Fraction(int(a) ** 2, 4 * n) for a in ints]


@lru_cache(maxsize=None)
def eve_success_fraction(n: int, nu: int) -> Fraction:
    """Exact probability that Eve's replica of Bob's device puts exactly one
    photon at each internal timing, given a ``nu``-photon block.

    All photons of psi_{s,nu} occupy one input mode, so the output pattern is
    multinomial over the detector modes. Photons beyond the ``n-1`` required
    ones must land on edge timings; summing over their arrangements collapses
    to a power of the total edge probability. The result does not depend on ``s``.
    """
    if n < 3:
        raise ConfigError(f"block size must be >= 3, got {n}")
    if nu < n - 1:
        return Fraction(0)
    probs = _mode_probabilities(n)
    timing_of = [j // 2 for j in range(len(probs))]
    internal = [probs[j] for j, p in enumerate(probs) if p and 1 <= timing_of[j] <= n - 1]
    edge_total = sum(p for j, p in enumerate(probs) if timing_of[j] in (0, n))
    if len(internal) != n - 1:
        raise AssertionError("each internal timing should have one live port")
    spare = nu - (n - 1)
    base = Fraction(1)
    for p in internal:
        base *= p
    return base * Fraction(math.factorial(nu), math.factorial(spare)) * edge_total ** spare


def eve_success_prob(n: int, nu: int) -> float:
    return float(eve_success_fraction(n, nu))


def _tail_mass(mu: float, nu_max: int) -> float:
    return float(gammainc(nu_max + 1, mu)) if mu > 0 else 0.0


def eve_total_success(n: int, mu: float, nu_max: int | None = None) -> tuple[float, float]:
    """Eve's success probability averaged over the Poisson photon number.

    Returns ``(value, tail)``: the sum over nu <= ``nu_max`` and a bound on the
    omitted terms, so the exact probability lies in [value, value + tail].
    With ``nu_max=None`` the cutoff starts at n+8 and grows until the tail is
    below 1e-12 of the value.
    """
    if mu < 0:
        raise ConfigError(f"mean photon number must be >= 0, got {mu}")
    if mu == 0:
        return 0.0, 0.0
    adaptive = nu_max is None
    cutoff = n + 8 if adaptive else nu_max
    value = sum(poisson_block_weight(mu, k) * eve_success_prob(n, k) for k in range(n - 1, cutoff + 1))
    tail = _tail_mass(mu, cutoff)
    while adaptive and tail > 1e-12 * value and cutoff < 400:
        cutoff += 1
        value += poisson_block_weight(mu, cutoff) * eve_success_prob(n, cutoff)
        tail = _tail_mass(mu, cutoff)
    return value, tail


def _log_margin(n: int, eta: float, mu: float) -> float:
    """log P_Eve(mu) - log r(mu); negative where the attack is detectable."""
    p_eve, _ = eve_total_success(n, mu)
    return math.log(p_eve) - math.log(expected_detection_rate(n, mu, eta))


def max_intensity(n: int, eta: float, tol: float = ENVELOPE_REL_TOL) -> float:
    """Largest intensity mu at which Eve's success probability stays below r.

    The crossing is bracketed by a geometric scan upward from a small mu and
    then refined by bisection on log(mu). ``tol`` is the relative mismatch
    |P_Eve - r| / r accepted at the returned point.
    """
    if not 0 < eta < 1:
        raise ConfigError(f"transmission must lie in (0, 1), got {eta}")
    # leading-order root of mu^(n-2) / n^(n-1) = (n-1)/n * eta
    guess = ((n - 1) * eta * n ** (n - 2)) ** (1.0 / (n - 2))
    lo = guess * 1e-3
    if _log_margin(n, eta, lo) >= 0:
        raise NoCrossingError(f"attack already undetectable at mu={lo:g}")
    hi = lo
    while True:
        hi_next = hi * 1.5
        if hi_next > 200.0:
            raise NoCrossingError(
                f"P_Eve stays below r for every mu up to 200 (n={n}, eta={eta:g}); widen the bracket "
                "or lower eta")
        if _log_margin(n, eta, hi_next) >= 0:
            lo, hi = hi, hi_next
            break
        hi = hi_next
    log_mu = bisect(lambda x: _log_margin(n, eta, math.exp(x)), math.log(lo), math.log(hi),
                    xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=400)
    mu_star = math.exp(log_mu)
    p_eve, _ = eve_total_success(n, mu_star)
    r = expected_detection_rate(n, mu_star, eta)
    if abs(p_eve - r) > tol * r:
        raise NoCrossingError(f"bisection did not reach tolerance at eta={eta:g}")
    return mu_star


def upper_bound_envelope(n: int, eta_grid: Sequence[float],
                         tol: float = ENVELOPE_REL_TOL) -> list[EveEnvelopePoint]:
    points = []
    for eta in eta_grid:
        mu_star = max_intensity(n, float(eta), tol)
        points.append(EveEnvelopePoint(float(eta), mu_star, float(eta) * mu_star))
    return points


def resend_bits(knowledge: Sequence[int]) -> tuple[int, ...]:
    """Phase bits with s_1 = 0 reproducing the relative phases in ``knowledge``."""
    bits = [0]
    for x in knowledge:
        bits.append(bits[-1] ^ int(x))
    return tuple(bits)


def attack_blocks(s: np.ndarray, nu: np.ndarray, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized intercept-resend over many blocks.

    Returns ``(success, knowledge, resent)`` where ``knowledge`` holds Eve's
    relative-phase bits (rows are meaningful only where ``success``) and
    ``resent`` is the photon number forwarded to Bob.
    """
    s = np.atleast_2d(s)
    n = s.shape[1]
    probs = (np.abs(mode_amplitudes(s)) ** 2).reshape(len(s), -1)
    probs /= probs.sum(axis=1, keepdims=True)
    counts = rng.multinomial(np.asarray(nu, dtype=np.int64), probs).reshape(len(s), n + 1, 2)
    per_timing = counts.sum(axis=2)
    success = np.all(per_timing[:, 1:n] == 1, axis=1)
    knowledge = counts[:, 1:n, 1].astype(np.int8)
    return success, knowledge, success.astype(np.int64)


def simulate_block_attack(s: Sequence[int], nu: int, n: int, rng: np.random.Generator
                          ) -> tuple[tuple[int, ...] | None, int]:
    """One block of the intercept-resend attack.

    Returns Eve's relative-phase bits (or None on failure) and the number of
    photons she forwards: one photon in psi_{s',1} with ``s' = resend_bits(...)``
    on success, vacuum otherwise.
    """
    s = as_bits(s, n)
    success, knowledge, resent = attack_blocks(np.array([s]), np.array([nu]), rng)
    if not success[0]:
        return None, 0
    return tuple(int(x) for x in knowledge[0]), int(resent[0])


# ---------------------------------------------------------------------------
# collective attacks


def _sifting_masks(n: int) -> np.ndarray:
    """masks[i, b, s] = 1 when s_{i+1} xor s_{i+2} == b (0-based timing i)."""
    s = np.array(list(all_bitstrings(n)))
    b = s[:, :-1] ^ s[:, 1:]
    return np.stack([(b == 0).T, (b == 1).T], axis=1).astype(float)


@dataclass(frozen=True)
class AdversaryStateSet:
    """Eve's vectors phi_s, one row per bit string in lexicographic order."""

    n: int
    nu: int
    d: int
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=complex)
        if vecs.shape != (2 ** self.n, self.d):
            raise ConfigError(f"expected vectors of shape {(2 ** self.n, self.d)}, got {vecs.shape}")
        mean_norm = np.sum(np.abs(vecs) ** 2) / 2 ** self.n
        if abs(mean_norm - self.n / (self.n - 1)) > 1e-9:
            raise ConfigError(f"mean squared norm is {mean_norm}, expected {self.n / (self.n - 1)}")
        object.__setattr__(self, "vectors", vecs)

    def vector(self, s: Sequence[int]) -> np.ndarray:
        s = as_bits(s, self.n)
        return self.vectors[int("".join(map(str, s)), 2)]

    def span_dimension(self, rel_tol: float = 1e-10) -> int:
        sv = np.linalg.svd(self.vectors, compute_uv=False)
        return int(np.count_nonzero(sv ** 2 > rel_tol * sv[0] ** 2)) if sv[0] > 0 else 0


def normalize_family(raw: np.ndarray, n: int, equal_norms: bool = True) -> np.ndarray:
    """Scale raw vectors to the detection normalization mean |phi_s|^2 = n/(n-1).

    With ``equal_norms`` each vector is scaled to that norm individually.
    """
    raw = np.asarray(raw, dtype=complex)
    target = n / (n - 1)
    if equal_norms:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ConfigError("equal-norm family cannot contain zero vectors")
        return raw * np.sqrt(target) / norms
    total = np.sum(np.abs(raw) ** 2)
    if total == 0:
        raise ConfigError("family is identically zero")
    return raw * np.sqrt(target * len(raw) / total)


def build_rho_det(phi: AdversaryStateSet) -> list[CqState]:
    """Per-timing cq states sum_b |b><b| (x) rho_{nu,b,i}, with
    rho_{nu,b,i} = (n 2^n)^{-1} sum_{s: s_i xor s_{i+1} = b} |phi_s><phi_s|.
    """
    n = phi.n
    masks = _sifting_masks(n) / (n * 2 ** n)
    outer = phi.vectors[:, :, None] * phi.vectors.conj()[:, None, :]
    sig = np.tensordot(masks, outer, axes=(2, 0))
    return [CqState((sig[i, 0], sig[i, 1])) for i in range(n - 1)]


def detection_entropy(phi: AdversaryStateSet) -> float:
    """H(A|E) of the normalized detection state: the mean over timings of the
    per-timing conditional entropy."""
    return float(np.mean([conditional_entropy_cq(c) for c in build_rho_det(phi)]))


def zero_entropy_family(n: int) -> AdversaryStateSet:
    """phi_s along orthogonal directions labeled by the relative phases of s (d = 2^(n-1))."""
    s = np.array(list(all_bitstrings(n)))
    label = (s[:, :-1] ^ s[:, 1:]) @ (1 << np.arange(n - 2, -1, -1))
    vecs = np.eye(2 ** (n - 1))[label]
    return AdversaryStateSet(n, n - 2, 2 ** (n - 1), normalize_family(vecs, n))


def constant_family(n: int, d: int = 1) -> AdversaryStateSet:
    vecs = np.zeros((2 ** n, d))
    vecs[:, 0] = 1.0
    return AdversaryStateSet(n, 0, d, normalize_family(vecs, n))


class _Objective:
    """H(A|E) as a function of a real parameter vector (real and imaginary parts of phi)."""

    def __init__(self, n: int, d: int, equal_norms: bool):
        self.n, self.d, self.equal_norms = n, d, equal_norms
        masks = _sifting_masks(n)
        weights = masks / masks.sum(axis=(1, 2), keepdims=True)
        # rows: every (timing, bit) block, then every timing's total
        self.rows = np.concatenate([weights.reshape(-1, 2 ** n), weights.sum(axis=1)])
        self.m = n - 1

    def vectors(self, x: np.ndarray) -> np.ndarray:
        half = 2 ** self.n * self.d
        raw = (x[:half] + 1j * x[half:]).reshape(2 ** self.n, self.d)
        return normalize_family(raw, self.n, self.equal_norms)

    def __call__(self, x: np.ndarray) -> float:
        half = 2 ** self.n * self.d
        vecs = (x[:half] + 1j * x[half:]).reshape(2 ** self.n, self.d)
        sq = (vecs.real ** 2 + vecs.imag ** 2).sum(axis=1)
        if self.equal_norms:
            if not np.all(sq > 0):
                return 1.0
            vecs = vecs / np.sqrt(sq)[:, None]
        else:
            if not sq.sum() > 0:
                return 1.0
            # every timing block carries trace mean(sq); divide it out
            vecs = vecs / np.sqrt(sq.mean())
        outer = (vecs[:, :, None] * vecs.conj()[:, None, :]).reshape(len(vecs), -1)
        ev = np.linalg.eigvalsh((self.rows @ outer).reshape(-1, self.d, self.d))
        ev = np.where(ev > 1e-14, ev, 1.0)
        h = -np.sum(ev * np.log2(ev), axis=-1)
        return float((h[:2 * self.m].sum() - h[2 * self.m:].sum()) / self.m)


@dataclass
class HnEstimate:
    n: int
    nu: int
    d: int
    estimate: float
    restarts: int
    converged: bool
    best_params: np.ndarray = field(repr=False)
    restart_values: list[float] = field(default_factory=list, repr=False)
    equal_norms: bool = True

    @property
    def best_params_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.best_params, dtype="<f8").tobytes()).hexdigest()

    def state_set(self) -> AdversaryStateSet:
        obj = _Objective(self.n, self.d, self.equal_norms)
        return AdversaryStateSet(self.n, self.nu, self.d, obj.vectors(self.best_params))


def _run_restart(args) -> tuple[float, np.ndarray, bool]:
    n, d, equal_norms, seed, tol, max_evals = args
    obj = _Objective(n, d, equal_norms)
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=2 * 2 ** n * d)
    res = minimize(obj, x0, method="Powell",
                   options={"xtol": 1e-10, "ftol": tol, "maxfev": max_evals})
    return float(res.fun), np.asarray(res.x), bool(res.success)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def estimate_Hn(n: int, nu: int, d: int, restarts: int = 20, tol: float = 1e-12,
                rng: np.random.Generator | int | None = 0, *, equal_norms: bool = True,
                max_evals: int = 20000, workers: int | None = None) -> HnEstimate:
    """Smallest per-detection H(A|E) found over families of ``2^n`` vectors in C^d.

    Each restart draws a random complex family and runs Powell's derivative-free
    line-search method; the best value over restarts is returned. This is an
    upper estimate of the true minimum.

    By default every phi_s has squared norm n/(n-1). Families that only fix the
    mean norm (``equal_norms=False``) can put all weight on a single relative
    phase pattern and reach zero entropy at any ``d``.

    ``nu`` is recorded but does not enter the objective; the photon number
    only limits which ``d`` are admissible, via ``source.span_dimension``.
    Restarts draw their seeds from ``rng`` up front, so results do not depend
    on ``workers``. ``converged`` is False when every restart stopped at
    ``max_evals``; the estimate is then the best value seen.
    """
    if n < 3:
        raise ConfigError(f"block size must be >= 3, got {n}")
    if d < 1 or restarts < 1:
        raise ConfigError("need d >= 1 and restarts >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    seeds = rng.integers(0, 2 ** 63, size=restarts, dtype=np.int64).tolist()
    jobs = [(n, d, equal_norms, seed, tol, max_evals) for seed in seeds]
    nworkers = worker_count(workers)
    if nworkers > 1:
        with ProcessPoolExecutor(nworkers) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(job) for job in jobs]
    values = [r[0] for r in results]
    best = int(np.argmin(values))
    converged = any(r[2] for r in results)
    return HnEstimate(n=n, nu=nu, d=d, estimate=max(values[best], 0.0), restarts=restarts,
                      converged=converged, best_params=results[best][1], restart_values=values,
                      equal_norms=equal_norms)
