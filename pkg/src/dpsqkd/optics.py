"""Lossy channel and Bob's one-bit-delay Mach-Zehnder measurement.

Output timing ``i`` (0..n) of the interferometer superposes the short-path
copy of pulse ``i+1`` with the long-path copy of pulse ``i``. With 50:50
beamsplitters the single-photon amplitude at timing ``i`` and port ``+/-`` is

    A[i, +/-] = ((-1)^{s_{i+1}} +/- (-1)^{s_i}) / (2 sqrt(n)),

with pulses outside 1..n contributing nothing. Port ``plus`` (index 0) fires
when ``s_i == s_{i+1}`` and is read as bit 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from dpsqkd.errors import ConfigError
from dpsqkd.source import as_bits

PLUS, MINUS = 0, 1


@dataclass(frozen=True, order=True)
class DetectorMode:
    timing: int
    port: int


@dataclass(frozen=True)
class DetectionOutcome:
    """A detection at internal ``timing`` with Bob's ``bit``, or no detection (both None)."""

    timing: int | None = None
    bit: int | None = None

    def __post_init__(self):
        if (self.timing is None) != (self.bit is None):
            raise ConfigError("timing and bit must be given together")
        if self.bit is not None and self.bit not in (0, 1):
            raise ConfigError(f"bit must be 0 or 1, got {self.bit}")
        if self.timing is not None and self.timing < 1:
            raise ConfigError("detections happen at internal timings only")

    @property
    def detected(self) -> bool:
        return self.timing is not None


NO_DETECTION = DetectionOutcome()


@dataclass(frozen=True)
class OutcomeDistribution:
    probabilities: Mapping[DetectionOutcome, float]

    def __post_init__(self):
        probs = np.array(list(self.probabilities.values()), dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
            raise ConfigError("outcome probabilities must be nonnegative and sum to 1")

    def __getitem__(self, outcome: DetectionOutcome) -> float:
        return self.probabilities.get(outcome, 0.0)

    @property
    def detection_probability(self) -> float:
        return sum(p for o, p in self.probabilities.items() if o.detected)


def mode_amplitudes(s: np.ndarray) -> np.ndarray:
    """Amplitude table of shape ``(..., n+1, 2)`` for bit arrays of shape ``(..., n)``."""
    s = np.asarray(s)
    n = s.shape[-1]
    x = 1.0 - 2.0 * s
    zero = np.zeros(s.shape[:-1] + (1,))
    later = np.concatenate([x, zero], axis=-1)     # pulse i+1 at timing i
    earlier = np.concatenate([zero, x], axis=-1)   # pulse i at timing i
    amps = np.stack([later + earlier, later - earlier], axis=-1)
    return amps / (2.0 * math.sqrt(n))


def single_photon_amplitudes(s: Sequence[int], n: int) -> dict[DetectorMode, complex]:
    s = as_bits(s, n)
    table = mode_amplitudes(np.array(s))
    return {DetectorMode(i, port): complex(table[i, port])
            for i in range(n + 1) for port in (PLUS, MINUS)}


def thin_photons(nu, eta: float, rng: np.random.Generator):
    """Photons surviving a pure-loss channel of transmission ``eta``."""
    if not 0 <= eta <= 1:
        raise ConfigError(f"transmission must lie in [0, 1], got {eta}")
    return rng.binomial(nu, eta)


def detection_distribution(s: Sequence[int], k: int, n: int) -> OutcomeDistribution:
    """Distribution of Bob's announcement when ``k`` photons reach him in state psi_{s,k}.

    Only ``k == 1`` can produce a detection event.
    """
    s = as_bits(s, n)
    if k < 0:
        raise ConfigError("photon number must be nonnegative")
    if k != 1:
        return OutcomeDistribution({NO_DETECTION: 1.0})
    probs = np.abs(mode_amplitudes(np.array(s))) ** 2
    dist = {DetectionOutcome(i, port): float(probs[i, port])
            for i in range(1, n) for port in (PLUS, MINUS) if probs[i, port] > 0}
    dist[NO_DETECTION] = max(0.0, 1.0 - sum(dist.values()))
    return OutcomeDistribution(dist)


def sample_modes(s: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw the (timing, port) of one photon per row of ``s``."""
    s = np.atleast_2d(s)
    probs = (np.abs(mode_amplitudes(s)) ** 2).reshape(len(s), -1)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(s))[:, None] * cdf[:, -1:]
    flat = np.minimum((cdf <= u).sum(axis=1), probs.shape[1] - 1)
    return flat // 2, flat % 2


def sample_detection(s: Sequence[int], k: int, n: int, rng: np.random.Generator) -> DetectionOutcome:
    s = as_bits(s, n)
    if k != 1:
        return NO_DETECTION
    timing, port = sample_modes(np.array(s), rng)
    timing, port = int(timing[0]), int(port[0])
    if 1 <= timing <= n - 1:
        return DetectionOutcome(timing, port)
    return NO_DETECTION


def expected_detection_rate(n: int, mu: float, eta: float) -> float:
    """Detection rate per block without an eavesdropper: (n-1)/n * eta*mu * exp(-eta*mu)."""
    if n < 3:
        raise ConfigError(f"block size must be >= 3, got {n}")
    if mu < 0:
        raise ConfigError(f"mean photon number must be >= 0, got {mu}")
    if not 0 <= eta <= 1:
        raise ConfigError(f"transmission must lie in [0, 1], got {eta}")
    return (n - 1) / n * math.exp(-eta * mu) * eta * mu
