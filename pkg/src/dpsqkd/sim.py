"""Monte Carlo engine for the full protocol: source, channel or attack, detection, sifting.

Blocks are simulated in fixed-size chunks. Chunk ``c`` draws from a generator
seeded by ``(seed, c)``, so serial and parallel runs give identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from dpsqkd.adversary import AttackConfig, attack_blocks, worker_count
from dpsqkd.errors import ConfigError
from dpsqkd.keyrate import ProtocolParams
from dpsqkd.optics import sample_modes

CHUNK_BLOCKS = 1 << 16


@dataclass
class BlockRecords:
    """Per-block columns; ``timing`` is 0 and the bits are -1 when nothing was detected."""

    block_index: np.ndarray
    nu: np.ndarray
    timing: np.ndarray
    alice_bit: np.ndarray
    bob_bit: np.ndarray

    @staticmethod
    def concat(parts: list["BlockRecords"]) -> "BlockRecords":
        return BlockRecords(*(np.concatenate([getattr(p, f) for p in parts])
                              for f in ("block_index", "nu", "timing", "alice_bit", "bob_bit")))


@dataclass
class SimReport:
    blocks: int
    detections: int
    errors: int
    P_det_hat: float
    qber_hat: float | None
    per_timing_counts: list[int]
    z_scores: dict[str, float | None]
    seed: int
    eve_successes: int | None = None
    received_photon_counts: list[int] = field(default_factory=list)
    detections_by_nu: dict[int, int] | None = None
    records: BlockRecords | None = field(default=None, repr=False)

    @property
    def qber_defined(self) -> bool:
        return self.detections > 0

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("records")
        out["qber_defined"] = self.qber_defined
        if self.detections_by_nu is None:
            out.pop("detections_by_nu")
        else:
            out["detections_by_nu"] = {str(k): v for k, v in sorted(self.detections_by_nu.items())}
        if self.eve_successes is None:
            out.pop("eve_successes")
        return out


def default_nu_max(n: int) -> int:
    return n + 8


def _simulate_chunk(job: tuple) -> dict[str, Any]:
    params, mode, seed, chunk, start, stop, nu_max, keep = job
    n = params.n
    rng = np.random.default_rng([seed, chunk])
    size = stop - start
    s = rng.integers(0, 2, size=(size, n), dtype=np.int64)
    nu = np.minimum(rng.poisson(params.mu, size), nu_max)
    eve_ok = None
    if mode == "none":
        received = rng.binomial(nu, params.eta)
        bob_s = s
    else:
        eve_ok, knowledge, received = attack_blocks(s, nu, rng)
        bob_s = np.concatenate([np.zeros((size, 1), dtype=np.int64),
                                np.cumsum(knowledge, axis=1) % 2], axis=1)

    timing = np.zeros(size, dtype=np.int64)
    bob_bit = np.full(size, -1, dtype=np.int64)
    single = np.flatnonzero(received == 1)
    if single.size:
        t, port = sample_modes(bob_s[single], rng)
        internal = (t >= 1) & (t <= n - 1)
        timing[single[internal]] = t[internal]
        bob_bit[single[internal]] = port[internal]
    det = timing > 0
    alice_bit = np.full(size, -1, dtype=np.int64)
    idx = np.flatnonzero(det)
    alice_bit[idx] = s[idx, timing[idx] - 1] ^ s[idx, timing[idx]]

    out = {
        "detections": int(det.sum()),
        "errors": int(np.sum(alice_bit[det] != bob_bit[det])),
        "per_timing": np.bincount(timing[det], minlength=n)[1:n],
        "received": np.bincount(received, minlength=nu_max + 1),
        "det_by_nu": np.bincount(nu[det], minlength=nu_max + 1),
        "eve": None if eve_ok is None else int(eve_ok.sum()),
    }
    if keep:
        out["records"] = BlockRecords(np.arange(start, stop), nu, timing, alice_bit, bob_bit)
    return out


def run_protocol(params: ProtocolParams, attack: AttackConfig, blocks: int, seed: int = 0, *,
                 nu_max: int | None = None, tag_nu: bool = False, keep_records: bool = False,
                 workers: int | None = None) -> SimReport:
    """Simulate ``blocks`` protocol rounds and tally Bob's detections and errors.

    Photon numbers above ``nu_max`` (default n+8) are clipped to it. Under
    ``intercept_resend`` Eve sits at Alice's output and forwards over a
    lossless line, so ``params.eta`` only enters the expected rate.
    """
    if blocks < 1:
        raise ConfigError("need at least one block")
    nu_max = default_nu_max(params.n) if nu_max is None else nu_max
    if nu_max < params.n - 1:
        raise ConfigError(f"nu_max must be >= n-1 = {params.n - 1}")
    jobs = [(params, attack.mode, seed, c, start, min(start + CHUNK_BLOCKS, blocks), nu_max, keep_records)
            for c, start in enumerate(range(0, blocks, CHUNK_BLOCKS))]
    nworkers = worker_count(workers)
    if nworkers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(nworkers, len(jobs))) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(job) for job in jobs]

    detections = sum(p["detections"] for p in parts)
    errors = sum(p["errors"] for p in parts)
    report = SimReport(
        blocks=blocks,
        detections=detections,
        errors=errors,
        P_det_hat=detections / blocks,
        qber_hat=errors / detections if detections else None,
        per_timing_counts=[int(x) for x in sum(p["per_timing"] for p in parts)],
        z_scores={},
        seed=seed,
        eve_successes=None if attack.mode == "none" else sum(p["eve"] for p in parts),
        received_photon_counts=[int(x) for x in sum(p["received"] for p in parts)],
    )
    if tag_nu:
        by_nu = sum(p["det_by_nu"] for p in parts)
        report.detections_by_nu = {k: int(v) for k, v in enumerate(by_nu) if v}
    if keep_records:
        report.records = BlockRecords.concat([p["records"] for p in parts])
    report.z_scores = compare_to_expectation(report, params)
    return report


def compare_to_expectation(report: SimReport, params: ProtocolParams) -> dict[str, float | None]:
    """Normal-approximation z-scores of the detection rate against r and of the QBER against e.

    A z-score is None when undefined (no detections for the QBER). With a
    degenerate expected rate (0 or 1) the score is 0 on exact agreement and
    infinite otherwise.
    """
    if report.blocks < 1:
        raise ConfigError("report has no blocks")
    z: dict[str, float | None] = {}
    z["P_det"] = _binomial_z(report.detections, report.blocks, params.r)
    z["qber"] = _binomial_z(report.errors, report.detections, params.e) if report.detections else None
    return z


def _binomial_z(successes: int, trials: int, p: float) -> float:
    p_hat = successes / trials
    var = p * (1 - p) / trials
    if var == 0:
        return 0.0 if p_hat == p else math.copysign(math.inf, p_hat - p)
    return (p_hat - p) / math.sqrt(var)
