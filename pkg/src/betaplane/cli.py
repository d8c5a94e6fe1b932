"""Command-line entry point: ``python -m betaplane <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .checkpoint import CheckpointError, load_checkpoint
from .harness import ConfigError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="betaplane", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "burn-in plus recorded horizon"),
                        ("tangent", "Lyapunov exponents, traces and N*"),
                        ("sweep", "epsilon/grashof ladder"),
                        ("limit", "steady state against the zonal heat limit"),
                        ("verify", "operator identity suite")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, required=name != "verify")
        sp.add_argument("--out", type=Path, default=None)
        if name == "sweep":
            sp.add_argument("--workers", type=int, default=None)
            sp.add_argument("--resume", action="store_true")
        if name == "tangent":
            sp.add_argument("--checkpoint", type=Path, default=None,
                            help="start from a saved state instead of a fresh burn-in")
    return p


def _out(args, cfg) -> Path:
    return args.out if args.out is not None else Path(cfg.output_dir)


def _run(args) -> int:
    if args.command == "verify":
        results = harness.verify(args.out)
        sys.stdout.write(harness.report_text(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK

    cfg, sweep = harness.load_config(args.config)
    out = _out(args, cfg)
    if args.command == "simulate":
        res = harness.simulate(cfg, out)
        sys.stdout.write(harness.report_text(res.checks) if res.checks else "no checks (short horizon)\n")
        return EXIT_OK if all(c.passed for c in res.checks) else EXIT_CHECK
    if args.command == "tangent":
        if args.checkpoint is not None:
            state = load_checkpoint(args.checkpoint)
            if (state.params.epsilon, state.params.grashof) != (cfg.epsilon, cfg.grashof):
                raise ConfigError("checkpoint parameters differ from the config", "epsilon")
        else:
            state = harness.simulate(cfg).state
        run = harness.tangent_analysis(cfg, state, out)
        summary = json.loads((out / "tangent_summary.json").read_text())
        for k in sorted(summary):
            print(f"{k} = {summary[k]}")
        ok = summary["split_residual_max"] < 1e-8 and summary["a0_residual_max"] < 1e-8
        return EXIT_OK if ok and run.exponents.size else EXIT_CHECK
    if args.command == "limit":
        row = harness.limit_analysis(cfg)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_csv(out / "limit.csv", harness.LIMIT_COLUMNS,
                          [[row[c] for c in harness.LIMIT_COLUMNS]])
        for c in harness.LIMIT_COLUMNS:
            print(f"{c} = {row[c]}")
        return EXIT_OK if row["converged"] else EXIT_CHECK
    if args.command == "sweep":
        if sweep is None:
            raise ConfigError("sweep needs a [sweep] section", "sweep")
        rows = harness.run_sweep(sweep, out, args.workers, args.resume)
        failed = [r for r in rows if r.get("error")]
        for r in failed:
            print(f"point eps={r['epsilon']} G={r['grashof']} failed: {r['error']}", file=sys.stderr)
        print(f"{len(rows) - len(failed)}/{len(rows)} points completed; results in {out}")
        return EXIT_CHECK if failed else EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
