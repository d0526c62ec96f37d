"""Command-line entry points.

Subcommands map onto the library surface: `solve` runs one configured trial,
`benchmark` the full trial loop, `cv` hyper-parameter selection only, `verify`
the duality/optimality check suite, `export-cbf` the conic-program writer, and
`sinkhorn-dist` the discrete matrix-scaling distance. Exit codes: 0 success,
1 bad configuration or usage, 2 solver failure.
"""

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .finite_space import exact_dual_discrete, export_conic
from .harness import (
    ConfigError,
    ExperimentConfig,
    cross_validate_trial,
    csv_header,
    csv_record,
    finite_from_mapping,
    load_config_mapping,
    run_benchmark,
    run_trial,
    verify_suite,
)
from .worstcase import sinkhorn_distance_discrete


def _require_config(args) -> str:
    if not args.config:
        raise ConfigError("this subcommand needs --config")
    return args.config


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(_require_config(args))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _emit(text: str, out) -> None:
    if out:
        path = Path(out)
        if path.parent != Path("."):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(path)
    else:
        sys.stdout.write(text)


def _row_dict(r) -> dict:
    def clean(x):
        if x is None or (isinstance(x, float) and math.isnan(x)):
            return None
        return x

    d = {"trial": r.trial, "method": r.method, "epsilon": clean(r.epsilon),
         "rho_bar": clean(r.radius),
         "theta": [clean(float(t)) for t in r.theta],
         "J": clean(r.J), "gap": clean(r.gap), "seconds": r.seconds,
         "seed_path": r.seed_path}
    if r.error is not None:
        d["error"] = r.error
    return d


def _cmd_solve(args) -> int:
    cfg = _experiment(args)
    if cfg.app == "custom-finite":
        inst = cfg.finite_instance()
        lam, value = exact_dual_discrete(inst)
        _emit(json.dumps({"lam": lam, "value": value,
                          "saa_value": inst.saa_value()},
                         indent=2, sort_keys=True) + "\n", args.out)
        return 0
    rows = run_trial(cfg, 0)
    if args.fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(csv_header(len(rows[0].theta)))
        for r in rows:
            writer.writerow(csv_record(r))
        _emit(buf.getvalue(), args.out)
    else:
        _emit(json.dumps([_row_dict(r) for r in rows], indent=2) + "\n",
              args.out)
    failed = [r for r in rows if r.error is not None]
    for r in failed:
        print(f"{r.method} failed: {r.error}", file=sys.stderr)
    return 2 if failed else 0


def _cmd_benchmark(args) -> int:
    cfg = _experiment(args)
    csv_path, json_path = run_benchmark(cfg, threads=max(1, args.threads))
    print(csv_path)
    print(json_path)
    return 0


def _cmd_cv(args) -> int:
    cfg = _experiment(args)
    params = cross_validate_trial(cfg, 0)
    chosen = {name: value for name, value in
              (("epsilon", params.epsilon), ("rho_bar", params.rho_bar),
               ("eta", params.eta), ("rho", params.rho)) if value is not None}
    _emit(json.dumps(chosen, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_verify(args) -> int:
    example = None
    if args.config:
        mapping = load_config_mapping(args.config)
        section = mapping.get("example1", mapping)
        missing = {"a", "omega", "points", "rho_bar", "eps"} - set(section)
        if missing:
            raise ConfigError(f"verify config missing keys {sorted(missing)}")
        example = section
    checks = verify_suite(example=example,
                          seed=0 if args.seed is None else args.seed)
    for check in checks:
        print(check.line())
    return 0 if all(check.passed for check in checks) else 2


def _cmd_export_cbf(args) -> int:
    mapping = load_config_mapping(_require_config(args))
    inst = finite_from_mapping(mapping.get("finite"))
    out = args.out or "model.cbf"
    export_conic(inst, out)
    print(out)
    return 0


def _cmd_sinkhorn_dist(args) -> int:
    mapping = load_config_mapping(_require_config(args))
    section = mapping.get("distance")
    if not section:
        raise ConfigError("config needs a [distance] section")
    try:
        p = np.asarray(section["p"], dtype=np.float64)
        q = np.asarray(section["q"], dtype=np.float64)
        C = np.asarray(section["cost"], dtype=np.float64)
        eps = float(section["eps"])
    except KeyError as exc:
        raise ConfigError(f"[distance] section missing key {exc}") from None
    nu = np.asarray(section.get("nu", np.full(q.size, 1.0 / q.size)),
                    dtype=np.float64)
    value, coupling = sinkhorn_distance_discrete(
        p, q, C, eps, nu, tol=float(section.get("tol", 1e-9)),
        max_iters=int(section.get("max_iters", 10_000)))
    _emit(json.dumps({"value": value, "coupling": coupling.gamma.tolist()},
                     indent=2) + "\n", args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="experiment file, TOML or JSON by extension")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", metavar="PATH", help="output file or prefix")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for benchmark trials")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"),
                        default="json", help="solve output format")
    parser = argparse.ArgumentParser(
        prog="sinkdro",
        description="Sinkhorn-distance DRO: solvers, diagnostics, benchmarks")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    for name, func, text in (
            ("solve", _cmd_solve, "solve one configured instance"),
            ("benchmark", _cmd_benchmark, "run the full trial loop"),
            ("cv", _cmd_cv, "cross-validate hyper-parameters only"),
            ("verify", _cmd_verify, "run the duality/optimality checks"),
            ("export-cbf", _cmd_export_cbf,
             "write the finite instance as a conic program"),
            ("sinkhorn-dist", _cmd_sinkhorn_dist,
             "discrete Sinkhorn distance between weighted atom sets")):
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        p.set_defaults(func=func)
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything past config parsing is a solver failure
        print(f"solver failure: {exc!r}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
