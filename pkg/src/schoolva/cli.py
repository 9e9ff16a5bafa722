"""Command-line interface: ``simulate``, ``fit`` and ``report``.

Every flag can also be given in a ``--config`` file of ``key = value`` lines,
keys spelled like the long flag without dashes (``log_offset = 1``); flags on
the command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import diagnostics, posthoc, report
from .core import ModelSpec, build_design
from .ingest import TransformConfig, load_dataset
from .sampler import ChainConfig, ChainResult, run_chains
from .simulate import TrueParameters, generate_dataset

log = logging.getLogger("schoolva")

OUT_ENV = "SCHOOLVA_OUT"


class StageError(Exception):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"[{stage}] {exc}")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, path) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in read_config(path).items():
        if key not in actions or key in ("help", "config"):
            raise ValueError(f"{path}: unknown config key {key!r}")
        a = actions[key]
        if isinstance(a, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif a.type is not None:
            value = a.type(raw)
        else:
            value = raw
        if a.choices is not None and value not in a.choices:
            raise ValueError(f"{path}: {key} must be one of {sorted(a.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)
    # a config value satisfies a required flag
    for key in defaults:
        actions[key].required = False


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="schoolva", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    default_out = os.environ.get(OUT_ENV)

    s = sub.add_parser("simulate", help="generate students.csv, schools.csv and truth.json")
    s.add_argument("--config")
    s.add_argument("--truth", required=True, help="flat JSON truth specification")
    s.add_argument("--out", default=default_out, required=default_out is None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model preset and write fit.json and companions")
    f.add_argument("--config")
    f.add_argument("--students", required=True)
    f.add_argument("--schools", required=True)
    f.add_argument("--out", default=default_out, required=default_out is None)
    f.add_argument("--preset", choices=("null", "va", "cva", "cva_school"), default="null")
    f.add_argument("--burnin", type=int, default=None, help="default 500 (2000 for cva_school)")
    f.add_argument("--iterations", type=int, default=None, help="default 10000 (40000 for cva_school)")
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--interval", choices=("quantile", "normal"), default="quantile")
    f.add_argument("--log-offset", type=float, default=1.0)
    f.add_argument("--no-standardize-prior", action="store_true",
                   help="keep the raw KS2 score instead of its z-score")
    f.add_argument("--per-draw-standardization", action="store_true")
    f.add_argument("--save-chains", action="store_true", help="also write chains.csv")
    f.add_argument("--traces", default=None, help="directory for per-scalar trace CSVs")
    f.add_argument("--report", action="store_true", help="run the report step afterwards")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="caterpillar and scatter files plus report.md")
    r.add_argument("--config")
    r.add_argument("--fit", required=True, help="directory holding fit.json and school_effects.csv")
    r.add_argument("--out", default=None, help="defaults to the fit directory")
    r.set_defaults(func=cmd_report)
    return p


def cmd_simulate(args) -> list[Path]:
    with _Stage("truth"):
        with open(args.truth, encoding="utf-8") as fh:
            truth = TrueParameters.from_flat(json.load(fh))
    with _Stage("simulate"):
        sim = generate_dataset(truth, args.seed)
    with _Stage("write"):
        paths = sim.write(args.out)
    log.info("wrote %d students in %d schools to %s", len(sim.student_rows), truth.J, args.out)
    return list(paths.values())


def fit_pipeline(args):
    """Run ingest through diagnostics.

    Returns (fit record, chains, pooled chain, school effects, per-chain diagnostics).
    """
    with _Stage("ingest"):
        cfg_t = TransformConfig(log_offset=args.log_offset,
                                standardize_prior_attainment=not args.no_standardize_prior)
        data = load_dataset(args.students, args.schools, cfg_t)
    with _Stage("design"):
        spec = ModelSpec.from_preset(args.preset)
        design = build_design(data, spec)
    with _Stage("sampler"):
        if args.chains < 1:
            raise ValueError("chains must be >= 1")
        cfg = ChainConfig.for_preset(args.preset, burn_in=args.burnin, iterations=args.iterations,
                                     thin=args.thin, seed=args.seed)
        chains = run_chains(data, design, cfg, args.chains)
        chain = ChainResult.pool(chains)
    with _Stage("posthoc"):
        table = posthoc.standardize_estimates(chain, design, per_draw=args.per_draw_standardization)
        effects = posthoc.summarize_school_effects(chain, args.interval)
        corr_u, corr_e = posthoc.school_correlations(chain)
    with _Stage("diagnostics"):
        per_chain = [diagnostics.diagnose_chain(c, seed=cfg.seed) for c in chains]
    meta = {
        "preset": args.preset,
        "seed": cfg.seed,
        "burn_in": cfg.burn_in,
        "iterations": cfg.iterations,
        "thin": cfg.thin,
        "draws": chain.draws,
        "chains": args.chains,
        "N": data.N,
        "J": data.J,
        "interval": args.interval,
        "log_offset": args.log_offset,
        "standardize_prior": not args.no_standardize_prior,
        "per_draw_standardization": bool(args.per_draw_standardization),
    }
    record = report.fit_record(meta, chain, table, corr_u, corr_e, effects)
    return record, chains, chain, effects, per_chain


def cmd_fit(args) -> list[Path]:
    record, chains, chain, effects, per_chain = fit_pipeline(args)
    with _Stage("write"):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "fit.json", out / "school_effects.csv", out / "diagnostics.csv"]
        report.write_json(paths[0], record)
        report.write_school_effects(paths[1], effects)
        report.write_diagnostics(paths[2], per_chain)
        if args.save_chains:
            paths.append(out / "chains.csv")
            report.write_chains(paths[-1], chain)
        if args.traces:
            for k, c in enumerate(chains, start=1):
                tdir = Path(args.traces) if len(chains) == 1 else Path(args.traces) / f"chain{k}"
                diagnostics.export_traces(c, tdir, seed=c.seed)
    if getattr(args, "report", False):
        paths += cmd_report(argparse.Namespace(fit=str(out), out=None))
    return paths


def cmd_report(args) -> list[Path]:
    src = Path(args.fit)
    with _Stage("report-input"):
        fit = report.read_json(src / "fit.json")
        effects = report.read_school_effects(src / "school_effects.csv", fit.get("meta.interval", "quantile"))
    with _Stage("report"):
        return report.write_report(fit, effects, args.out or src)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in ("simulate", "fit", "report")), None)
    if known.config and command:
        try:
            _apply_config(parser._subparsers._group_actions[0].choices[command], known.config)
        except (OSError, ValueError) as exc:
            print(f"error [config] {exc}", file=sys.stderr)
            return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
