"""Command-line front end: simulations, span and entropy checks, rate bounds, H_n estimates and fits.

Exit codes: 0 success, 1 usage or configuration error, 2 protocol abort,
3 numerical guard or missing envelope crossing.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from typing import Any, Sequence

import numpy as np

from dpsqkd import __version__
from dpsqkd.adversary import AttackConfig, EveEnvelopePoint, estimate_Hn, max_intensity
from dpsqkd.entropy import conditional_entropy_cq, disjoint_support_check, random_cq_state
from dpsqkd.errors import ConfigError, NoCrossingError, NumericalGuardError
from dpsqkd.keyrate import (ABORT, ProtocolParams, abort_decision, corollary_rate_curve,
                            default_f_det, fit_scaling_exponent, log_grid)
from dpsqkd.sim import default_nu_max, run_protocol
from dpsqkd.source import span_dimension, span_dimension_closed_form

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_GUARD = 0, 1, 2, 3
VERIFY_MAX_N = 8
HN_MAX_N = 5
HN_AUTO_MAX_N = 4
TIGHTNESS_TOL = 0.1
ZERO_ENTROPY_TOL = 1e-9


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as ConfigError instead of exiting with 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# artifact output


def _fmt(x: Any) -> str:
    if isinstance(x, bool) or x is None:
        return "" if x is None else str(x).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; keep them readable and round-trippable
        return x if math.isfinite(x) else str(x)
    return obj


def to_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(out: str | None, text: str) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(out, text)


def emit_side(out: str | None, text: str, suffix: str = ".summary.json") -> None:
    """Companion artifact: beside ``out`` when it is a file, on stderr otherwise."""
    if out in (None, "-"):
        sys.stderr.write(text)
    else:
        atomic_write(out + suffix, text)


def _envelope(args: argparse.Namespace, command: str, config: dict[str, Any]) -> dict[str, Any]:
    return {"command": command, "version": __version__, "seed": args.seed, "config": config}


def _key_value_csv(artifact: dict[str, Any]) -> str:
    """Flatten a nested artifact into key,value rows with dotted keys."""
    rows: list[tuple[str, Any]] = []

    def walk(prefix: str, obj: Any):
        if isinstance(obj, dict):
            for k in sorted(obj, key=str):
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        elif isinstance(obj, (list, tuple)):
            for i, v in enumerate(obj):
                walk(f"{prefix}.{i}", v)
        else:
            rows.append((prefix, obj))

    walk("", _jsonable(artifact))
    return to_csv(["key", "value"], rows)


def _write_artifact(args: argparse.Namespace, artifact: dict[str, Any]) -> None:
    emit(args.out, to_json(artifact) if args.format == "json" else _key_value_csv(artifact))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    params = ProtocolParams(args.n, args.mu, args.eta, f_det=args.f_det, f_err=args.f_err, e=args.e)
    attack = AttackConfig("none" if args.attack == "none" else "intercept_resend")
    if args.blocks < 1:
        raise ConfigError("--blocks must be >= 1")
    nu_max = default_nu_max(args.n) if args.nu_max is None else args.nu_max
    report = run_protocol(params, attack, args.blocks, args.seed, nu_max=nu_max,
                          tag_nu=args.tag_nu, keep_records=args.blocks_out is not None)
    decision = abort_decision(report.P_det_hat, report.errors / report.blocks, params)
    config = {"n": args.n, "mu": args.mu, "eta": args.eta, "blocks": args.blocks,
              "attack": args.attack, "f_det": args.f_det, "f_err": args.f_err, "e": args.e,
              "nu_max": nu_max, "tag_nu": args.tag_nu}
    artifact = _envelope(args, "simulate", config)
    artifact["report"] = report.to_dict()
    artifact["expected_P_det"] = params.r
    artifact["decision"] = decision
    if args.blocks_out is not None:
        rec = report.records
        rows = zip(rec.block_index.tolist(), rec.nu.tolist(), rec.timing.tolist(),
                   rec.alice_bit.tolist(), rec.bob_bit.tolist())
        atomic_write(args.blocks_out,
                     to_csv(["block_index", "nu", "timing", "alice_bit", "bob_bit"], rows))
    _write_artifact(args, artifact)
    if decision == ABORT:
        print(f"protocol aborted: P_det_hat={report.P_det_hat:.6g} against f_det*r="
              f"{params.f_det * params.r:.6g}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-lemmas


def span_table(n_max: int) -> list[dict[str, Any]]:
    rows = []
    for n in range(3, n_max + 1):
        threshold = 2 ** (n - 1)
        for nu in range(n):
            rank = span_dimension(n, nu)
            closed = span_dimension_closed_form(n, nu)
            below = rank < threshold
            ok = rank == closed and below == (nu <= n - 2)
            if nu == n - 1:
                verdict = "PASS sharpness (nu = n-1)" if ok else "FAIL"
            else:
                verdict = "PASS" if ok else "FAIL"
            rows.append({"n": n, "nu": nu, "gram_rank": rank, "closed_form": closed,
                         "threshold": threshold, "below_threshold": below, "verdict": verdict})
    return rows


def zero_entropy_suite(samples: int, rng: np.random.Generator) -> dict[str, Any]:
    """Random cq states: nonnegative H(A|E), and H(A|E) = 0 exactly on disjoint supports."""
    min_h = math.inf
    negatives = mismatches = 0
    for _ in range(samples):
        dim = int(rng.integers(2, 9))
        sigma = random_cq_state(rng, dim, disjoint=bool(rng.integers(2)))
        h = conditional_entropy_cq(sigma)
        min_h = min(min_h, h)
        negatives += h < -ZERO_ENTROPY_TOL
        mismatches += (h <= ZERO_ENTROPY_TOL) != disjoint_support_check(sigma)
    return {"samples": samples, "min_entropy": min_h, "negative": negatives,
            "equivalence_mismatches": mismatches,
            "verdict": "PASS" if negatives == 0 and mismatches == 0 else "FAIL"}


def cmd_verify_lemmas(args: argparse.Namespace) -> int:
    if not 3 <= args.n_max <= VERIFY_MAX_N:
        raise ConfigError(f"--n-max must lie in [3, {VERIFY_MAX_N}]")
    if args.cq_samples < 0:
        raise ConfigError("--cq-samples must be >= 0")
    rows = span_table(args.n_max)
    cq_check = zero_entropy_suite(args.cq_samples, np.random.default_rng(args.seed))
    all_pass = all(r["verdict"].startswith("PASS") for r in rows) and cq_check["verdict"] == "PASS"
    artifact = _envelope(args, "verify-lemmas",
                         {"n_max": args.n_max, "cq_samples": args.cq_samples})
    artifact.update({"cq_entropy": cq_check, "all_pass": all_pass})
    if args.format == "json":
        artifact["rows"] = rows
        emit(args.out, to_json(artifact))
    else:
        header = list(rows[0])
        emit(args.out, to_csv(header, [[r[k] for k in header] for r in rows]))
        emit_side(args.out, to_json(artifact))
    return EXIT_OK if all_pass else EXIT_GUARD


# ---------------------------------------------------------------------------
# bounds


def _resolve_hn(args: argparse.Namespace) -> tuple[float, str]:
    if args.hn is not None:
        if not args.hn > 0:
            raise ConfigError("--hn must be > 0")
        return args.hn, "given"
    if args.n <= HN_AUTO_MAX_N:
        est = estimate_Hn(args.n, args.n - 2, 2 ** (args.n - 1) - 1, restarts=args.hn_restarts,
                          rng=args.seed)
        if est.estimate > 0:
            return est.estimate, "estimate"
    # the fitted exponent does not depend on the constant H_n
    return 1.0, "unit"


def cmd_bounds(args: argparse.Namespace) -> int:
    if args.n < 3:
        raise ConfigError("--n must be >= 3")
    if args.e != 0:
        raise ConfigError("only the upper bound exists for e > 0; the lower-bound curve needs --e 0")
    if not (0 < args.eta_min < args.eta_max < 1) or args.points < 3:
        raise ConfigError("need 0 < eta-min < eta-max < 1 and at least 3 points")
    f_det = default_f_det(args.n) if args.f_det is None else args.f_det
    upper: list[EveEnvelopePoint] = []
    gaps: list[float] = []
    for eta in log_grid(args.eta_min, args.eta_max, args.points):
        try:
            mu_star = max_intensity(args.n, float(eta))
        except NoCrossingError:
            if not args.allow_gaps:
                raise
            gaps.append(float(eta))
            continue
        upper.append(EveEnvelopePoint(float(eta), mu_star, float(eta) * mu_star))
    if len(upper) < 3:
        raise NoCrossingError(f"only {len(upper)} grid points have an envelope crossing")
    grid = [p.eta for p in upper]
    h_n, h_source = _resolve_hn(args)
    lower = corollary_rate_curve(args.n, grid, f_det, h_n, [p.rate_cap for p in upper])
    up_fit = fit_scaling_exponent([(p.eta, p.rate_cap) for p in upper])
    lo_fit = fit_scaling_exponent([(p.eta, p.g_lower) for p in lower])
    diff = abs(up_fit.exponent - lo_fit.exponent)
    target = 1 + 1 / (args.n - 2)
    summary = _envelope(args, "bounds", {"n": args.n, "eta_min": args.eta_min, "eta_max": args.eta_max,
                                         "points": args.points, "f_det": f_det, "e": args.e,
                                         "hn": args.hn, "hn_restarts": args.hn_restarts,
                                         "allow_gaps": args.allow_gaps})
    summary.update({
        "upper_exp": up_fit.exponent, "upper_stderr": up_fit.stderr,
        "lower_exp": lo_fit.exponent, "lower_stderr": lo_fit.stderr,
        "difference": diff, "target_exp": target,
        "tightness": "PASS" if diff <= TIGHTNESS_TOL else "FAIL",
        "H_n_used": h_n, "H_n_source": h_source, "no_crossing_etas": gaps,
    })
    header = ["eta", "mu_star", "g_upper_cap", "mu_lower", "g_lower", "H_n_used"]
    rows = [[u.eta, u.mu_star, u.rate_cap, lo.mu_used, lo.g_lower, h_n] for u, lo in zip(upper, lower)]
    if args.format == "csv":
        emit(args.out, to_csv(header, rows))
        emit_side(args.out, to_json(summary))
    else:
        summary["rows"] = [dict(zip(header, r)) for r in rows]
        emit(args.out, to_json(summary))
    print(f"tightness: {summary['tightness']} (upper {up_fit.exponent:.4f}, "
          f"lower {lo_fit.exponent:.4f})", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate-hn


def _hn_record(est) -> dict[str, Any]:
    return {"d": est.d, "estimate": est.estimate, "restarts": est.restarts,
            "best_params_digest": est.best_params_digest, "converged": est.converged}


def cmd_estimate_hn(args: argparse.Namespace) -> int:
    n = args.n
    if n < 3:
        raise ConfigError("--n must be >= 3")
    if n > HN_MAX_N and not args.force:
        raise NumericalGuardError(f"n={n} exceeds the default guard n <= {HN_MAX_N}; pass --force")
    nu = n - 2 if args.nu is None else args.nu
    d = 2 ** (n - 1) - 1 if args.d is None else args.d
    if nu < 0:
        raise ConfigError("--nu must be >= 0")
    control_d = 2 ** (n - 1)
    control_restarts = min(args.restarts, 10) if args.control_restarts is None else args.control_restarts
    rng = np.random.default_rng(args.seed)
    equal = not args.free_norms
    est = estimate_Hn(n, nu, d, restarts=args.restarts, rng=rng, equal_norms=equal,
                      max_evals=args.max_evals)
    artifact = _envelope(args, "estimate-hn", {
        "n": n, "nu": nu, "d": d, "restarts": args.restarts, "max_evals": args.max_evals,
        "equal_norms": equal, "control_restarts": control_restarts})
    artifact.update({"n": n, "nu": nu, **_hn_record(est),
                     "span_dimension_at_nu": span_dimension_closed_form(n, nu)})
    if control_restarts > 0:
        ctrl = estimate_Hn(n, nu, control_d, restarts=control_restarts, rng=rng,
                           equal_norms=equal, max_evals=args.max_evals)
        artifact["control"] = _hn_record(ctrl)
    _write_artifact(args, artifact)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        with open(args.input, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {args.x, args.y} - set(reader.fieldnames or [])
            if missing:
                raise ConfigError(f"columns not found in {args.input}: {sorted(missing)}")
            points = [(float(row[args.x]), float(row[args.y])) for row in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from exc
    fit = fit_scaling_exponent(points)
    artifact = _envelope(args, "fit", {"input": args.input, "x": args.x, "y": args.y})
    artifact.update({"exponent": fit.exponent, "intercept": fit.intercept, "stderr": fit.stderr,
                     "eta_range": list(fit.eta_range), "points": len(points)})
    _write_artifact(args, artifact)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpsqkd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo run of the protocol")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--blocks", type=int, default=100000)
    p.add_argument("--attack", choices=("none", "intercept"), default="none")
    p.add_argument("--f-det", type=float, default=0.5)
    p.add_argument("--f-err", type=float, default=2.0)
    p.add_argument("--e", type=float, default=0.0, help="QBER the abort test expects")
    p.add_argument("--nu-max", type=int, default=None)
    p.add_argument("--tag-nu", action="store_true", help="tally detections by emitted photon number")
    p.add_argument("--blocks-out", default=None, help="per-block CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-lemmas", parents=[common], help="span-dimension and cq-entropy checks")
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--cq-samples", type=int, default=2000)
    p.set_defaults(func=cmd_verify_lemmas)

    p = sub.add_parser("bounds", parents=[common], help="upper and lower key-rate curves and exponents")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta-min", type=float, default=1e-5)
    p.add_argument("--eta-max", type=float, default=1e-2)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--f-det", type=float, default=None)
    p.add_argument("--e", type=float, default=0.0)
    p.add_argument("--hn", type=float, default=None, help="H_n constant for the lower curve")
    p.add_argument("--hn-restarts", type=int, default=3)
    p.add_argument("--allow-gaps", action="store_true",
                   help="drop grid points where the attack never matches r instead of failing")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("estimate-hn", parents=[common], help="minimize H(A|E) over adversary families")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--nu", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--control-restarts", type=int, default=None)
    p.add_argument("--max-evals", type=int, default=20000)
    p.add_argument("--free-norms", action="store_true",
                   help="fix only the mean norm of the family (degenerates to zero)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_estimate_hn)

    p = sub.add_parser("fit", parents=[common], help="log-log least-squares fit of two CSV columns")
    p.add_argument("--input", required=True)
    p.add_argument("--x", default="eta")
    p.add_argument("--y", required=True)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalGuardError, NoCrossingError) as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
