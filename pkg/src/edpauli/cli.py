"""Command line entry point: ``edpauli run|validate|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from .config import load_config
from .errors import NumericalError, ValidationError
from .maxent import maxent_oracle, random_settings
from .scenarios import EXIT_NUMERICAL, EXIT_OK, EXIT_TOLERANCE, EXIT_VALIDATION, run_scenario


def _fmt(v) -> str:
    v = np.asarray(v)
    if np.iscomplexobj(v):
        if np.allclose(v.imag, 0):
            v = v.real
        else:
            return "(" + ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in v) + ")"
    return "(" + ", ".join(f"{x:.6g}" for x in v) + ")"


def _print_report(report, out) -> None:
    print(f"scenario {report.scenario}: {report.status}")
    for name, c in sorted(report.checks.items()):
        mark = "ok" if c.passed else "FAIL"
        print(f"  {name:<14} {c.value:.3e}  (threshold {c.threshold:.1e})  {mark}")
    if report.scenario == "rotation_demo":
        ex = report.extras
        print(f"  initial spinor  {_fmt(ex['initial'])}")
        print(f"  rotated spinor  {_fmt(ex['rotated'])}")
        print(f"  k-probabilities {_fmt(ex['probabilities'])}")
    for key in ("omega_fit", "omega_expected", "lobe_weights", "width_ratio"):
        if key in report.extras:
            print(f"  {key:<14} {report.extras[key]}")
    if report.error:
        print(f"  error: {report.error}")
    if out is not None:
        print(f"  outputs in {out}")


def cmd_run(args) -> int:
    from .output import emit_outputs

    try:
        config = load_config(args.config)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run_scenario(config, seed=args.seed)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = emit_outputs(report, config, args.out)
    if not args.quiet:
        _print_report(report, out)
    return report.exit_code


def cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"{args.config}: valid {config.scenario} configuration")
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    reports = [maxent_oracle(**s, points=args.points) for s in random_settings(args.n, args.seed)]
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed(args.rtol) for r in reports)
    if args.json:
        print(json.dumps({"settings": [r.summary() for r in reports], "max_rel_error": worst, "passed": ok}, indent=2))
    else:
        for i, r in enumerate(reports):
            s = r.summary()
            print(f"  #{i:02d} dim={s['dim']} max_rel_error={s['max_rel_error']:.2e} "
                  f"iterations={s['iterations']} {'ok' if r.passed(args.rtol) else 'FAIL'}")
        print(f"maxent oracle: {len(reports)} settings, worst relative error {worst:.2e} "
              f"(threshold {args.rtol:g}), {time.perf_counter() - t0:.2f} s: {'PASSED' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edpauli", description="Pauli-equation solver with an entropic trajectory sampler.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write outputs")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output.directory)")
    run.add_argument("--seed", type=int, help="sampler seed (overrides sampler.seed)")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a configuration without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    orc = sub.add_parser("oracle", help="run the maximum-entropy kernel oracle suite")
    orc.add_argument("--n", type=int, default=24)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--points", type=int, default=41)
    orc.add_argument("--rtol", type=float, default=1e-6)
    orc.add_argument("--json", action="store_true")
    orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
