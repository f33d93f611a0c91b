"""Batch command-line front end.

Exit codes: 0 success, 2 usage error, 3 estimation error. Errors are written
to stderr as a single JSON line ``{"error": <code>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .data import read_csv, write_csv
from .errors import EstimationError, MissingColumn, UnwritablePath
from .imputation import EventStudyCurve, _clean, estimate, placebo
from .indices import pc1_index
from .inference import BootstrapPlan, export_replicates
from .pretrend import LeadProfile, fit_leads
from .simulate import PRESETS, DgpConfig, generate, parse_key_values, preset
from .twfe import estimate_twfe, selection_test, trend_test

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION = 0, 2, 3
COMMANDS = ("estimate", "pretrend", "twfe", "trend-test", "selection-test", "placebo",
            "index", "simulate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV input path")
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--group", default="group_id")
    p.add_argument("--time", default="time")
    p.add_argument("--adoption", default="adoption_year")
    p.add_argument("--unit")
    p.add_argument("--cluster", help="cluster column (default: cluster_id if present, else group)")
    p.add_argument("--weight")
    p.add_argument("--covariates", type=_csv_list, help="comma list (default: all x_ columns)")
    p.add_argument("--subgroups", type=_csv_list, help="comma list (default: all g_ columns)")
    p.add_argument("--anticipation", type=int, default=0)
    p.add_argument("--fe", type=_csv_list, default=["group", "time"],
                   help="fixed-effect factors; 'a:b' interacts two columns")


def _add_boot(p: argparse.ArgumentParser, default: int = 1000) -> None:
    p.add_argument("--bootstrap", type=int, default=default, help="iterations (0 disables)")
    p.add_argument("--flavor", choices=["pairs", "wild"], default="pairs")
    p.add_argument("--max-attempts", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--replicates", help="write bootstrap replicates CSV here")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="JSON output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="imputedid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("estimate", "placebo"):
        p = sub.add_parser(name)
        _add_data(p)
        p.add_argument("--horizon", type=int, default=15)
        p.add_argument("--subgroup")
        p.add_argument("--contrast", type=_csv_list)
        p.add_argument("--aggregation", choices=["observation", "group"], default="observation")
        p.add_argument("--leads", type=int, default=0,
                       help="also fit P pre-trend leads for the event-study CSV")
        p.add_argument("--lead-covariance", choices=["bootstrap", "cluster", "robust"],
                       default="bootstrap")
        p.add_argument("--event-study", help="write plot-ready event-study CSV here")
        if name == "placebo":
            p.add_argument("--keep", action="append", required=True,
                           help="subsample predicate label=value (repeatable)")
        _add_boot(p)
        _add_out(p)

    p = sub.add_parser("pretrend")
    _add_data(p)
    p.add_argument("--leads", type=int, default=8)
    p.add_argument("--lead-covariance", choices=["bootstrap", "cluster", "robust"],
                   default="bootstrap")
    p.add_argument("--event-study")
    _add_boot(p)
    _add_out(p)

    p = sub.add_parser("twfe")
    _add_data(p)
    p.add_argument("--interactions", type=_csv_list, default=[])
    _add_boot(p)
    _add_out(p)

    p = sub.add_parser("trend-test")
    _add_data(p)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--se", choices=["cluster", "robust", "bootstrap"], default="cluster")
    _add_boot(p, default=0)
    _add_out(p)

    p = sub.add_parser("selection-test")
    p.add_argument("--input", required=True)
    p.add_argument("--adoption", required=True, help="binary adoption column")
    p.add_argument("--baseline", required=True, help="baseline outcome column")
    p.add_argument("--controls", type=_csv_list, default=[])
    p.add_argument("--cluster")
    p.add_argument("--weight")
    _add_out(p)

    p = sub.add_parser("index")
    p.add_argument("--input", required=True)
    p.add_argument("--columns", type=_csv_list, required=True)
    p.add_argument("--name", default="index")
    p.add_argument("--scores-out", help="write input CSV with the score column appended")
    _add_out(p)

    p = sub.add_parser("simulate")
    p.add_argument("--preset", choices=list(PRESETS), default="parallel")
    p.add_argument("--dgp", help="key = value DGP config file (overrides the preset)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one DGP field (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--truth", help="write ground truth JSON here")
    return parser


def _config_argv(path: str, command: str | None) -> tuple[str | None, list[str]]:
    try:
        values = parse_key_values(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    command = values.pop("command", command)
    argv: list[str] = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif value is False or value is None:
            continue
        elif isinstance(value, list):
            if key in ("keep", "set"):
                for v in value:
                    argv += [flag, str(v)]
            else:
                argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return command, argv


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    """Parse flags, merging a ``--config`` file (explicit flags win)."""
    argv = list(argv)
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            raise UsageError("--config needs a path")
        path = argv[i + 1]
        del argv[i:i + 2]
        given = argv[0] if argv and argv[0] in COMMANDS else None
        command, extra = _config_argv(path, given)
        if command is None:
            raise UsageError("no command given on the command line or in the config")
        rest = argv[1:] if given else argv
        argv = [command, *extra, *rest]
    return build_parser().parse_args(argv)


def _plan(args, needed: bool = True) -> BootstrapPlan | None:
    if not needed or getattr(args, "bootstrap", 0) <= 0:
        return None
    if args.seed is None:
        raise UsageError("--seed is required when bootstrapping")
    return BootstrapPlan(iterations=args.bootstrap, seed=args.seed, flavor=args.flavor,
                         max_attempts=args.max_attempts)


def _load(args):
    return read_csv(args.input, outcome=args.outcome, group=args.group, time=args.time,
                    adoption=args.adoption, unit=args.unit, cluster=args.cluster,
                    weight=args.weight, covariates=args.covariates, subgroups=args.subgroups,
                    anticipation=args.anticipation)



def resolved_config(args: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items())}


def payload(result: dict, config: dict, timestamp: str | None = None) -> dict:
    """The JSON document a CLI run emits for ``result``."""
    out = dict(result)
    out["config"] = _clean(config)
    out["timestamp"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()
    return out


def emit_event_study(curve: EventStudyCurve | Sequence[dict] | None,
                     leads: LeadProfile | Sequence[dict] | None, path) -> int:
    """Write ``relative_time, estimate, se, n`` rows ordered by relative time.

    Leads go at negative relative time, horizons at nonnegative. Numbers are
    written with 12 significant digits; a missing SE is left blank.
    """
    rows: list[tuple[int, float, float | None, int]] = []
    if leads is not None:
        if isinstance(leads, LeadProfile):
            rows += [(int(p), float(g), float(s), int(n))
                     for p, g, s, n in zip(leads.leads, leads.gamma, leads.se, leads.support)]
        else:
            rows += [(int(d["p"]), d["gamma"], d.get("se"), int(d.get("n", 0))) for d in leads]
    if curve is not None:
        if isinstance(curve, EventStudyCurve):
            rows += [(int(h), float(a), None if not np.isfinite(s) else float(s), int(n))
                     for h, a, s, n in zip(curve.horizons, curve.att, curve.se, curve.n)]
        else:
            rows += [(int(d["h"]), d["att"], d.get("se"), int(d.get("n", 0))) for d in curve]
    if not rows:
        raise EstimationError("event study has neither leads nor horizons")
    rows.sort(key=lambda r: r[0])

    def fmt(v):
        return "" if v is None or not np.isfinite(v) else f"{v:.12g}"

    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["relative_time", "estimate", "se", "n"])
            for rt, est, se, n in rows:
                w.writerow([rt, fmt(est), fmt(se), n])
    except OSError as exc:
        raise UnwritablePath(str(exc)) from exc
    return len(rows)


def _write_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2)
    if path is None:
        sys.stdout.write(text + "\n")
        return
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise UnwritablePath(str(exc)) from exc


def _leads_for(args, table, schedule, plan):
    cov = args.lead_covariance
    if cov == "bootstrap" and plan is None:
        raise UsageError("bootstrap lead covariance needs --bootstrap > 0 and --seed")
    return fit_leads(table, schedule, args.leads, factors=args.fe,
                     covariates=table.covariate_names, covariance=cov, plan=plan,
                     threads=args.threads)


def _cmd_estimate(args) -> dict:
    table, schedule = _load(args)
    plan = _plan(args)
    kwargs = dict(factors=args.fe, covariates=table.covariate_names, horizon=args.horizon,
                  subgroup=args.subgroup,
                  contrast=tuple(args.contrast) if args.contrast else None,
                  plan=plan, aggregation=args.aggregation, threads=args.threads)
    if args.command == "placebo":
        keep = {}
        for item in args.keep:
            if "=" not in item:
                raise UsageError(f"--keep expects label=value, got {item!r}")
            k, v = item.split("=", 1)
            keep[k.strip()] = v.strip()
        report = placebo(table, schedule, keep, **kwargs)
    else:
        report = estimate(table, schedule, **kwargs)
    doc = report.to_dict()
    leads = None
    if args.leads > 0:
        leads = _leads_for(args, table, schedule, plan)
        doc["pretrend"] = leads.to_dict()
    if args.event_study:
        emit_event_study(report.horizons, leads, args.event_study)
    if args.replicates and report.bootstrap is not None:
        names = ["att"] + [f"h{h}" for h in range(args.horizon + 1)]
        names += [f"sub_{i}" for i in range(report.bootstrap.replicates.shape[1] - len(names))]
        export_replicates(report.bootstrap, args.replicates, names)
    return doc


def _cmd_pretrend(args) -> dict:
    table, schedule = _load(args)
    plan = _plan(args, args.lead_covariance == "bootstrap")
    prof = _leads_for(args, table, schedule, plan)
    if args.event_study:
        emit_event_study(None, prof, args.event_study)
    if args.replicates and prof.bootstrap is not None:
        export_replicates(prof.bootstrap, args.replicates)
    doc = prof.to_dict()
    doc["seed"] = plan.seed if plan else None
    doc["bootstrap_iterations"] = plan.iterations if plan else 0
    return doc


def _cmd_twfe(args) -> dict:
    table, schedule = _load(args)
    plan = _plan(args)
    rep = estimate_twfe(table, schedule, factors=args.fe, covariates=table.covariate_names,
                        interactions=args.interactions, plan=plan, threads=args.threads)
    if args.replicates and rep.bootstrap is not None:
        export_replicates(rep.bootstrap, args.replicates)
    return rep.to_dict()


def _cmd_trend(args) -> dict:
    table, schedule = _load(args)
    plan = _plan(args, args.se == "bootstrap")
    if args.se == "bootstrap" and plan is None:
        raise UsageError("--se bootstrap needs --bootstrap > 0 and --seed")
    return trend_test(table, schedule, cutoff=args.cutoff, covariates=table.covariate_names,
                      se=args.se, plan=plan, threads=args.threads).to_dict()


def _cmd_selection(args) -> dict:
    frame = pd.read_csv(args.input)
    return selection_test(frame, adoption=args.adoption, baseline=args.baseline,
                          controls=args.controls, cluster=args.cluster,
                          weight=args.weight).to_dict()


def _cmd_index(args) -> dict:
    frame = pd.read_csv(args.input)
    missing = [c for c in args.columns if c not in frame.columns]
    if missing:
        raise MissingColumn(f"columns {missing} not in input header")
    idx = pc1_index(frame, names=args.columns)
    if args.scores_out:
        out = frame.copy()
        out[args.name] = idx.scores
        try:
            out.to_csv(args.scores_out, index=False)
        except OSError as exc:
            raise UnwritablePath(str(exc)) from exc
    return {"estimator": "pc1_index", "name": args.name, **idx.to_dict()}


def _cmd_simulate(args) -> dict:
    if args.seed is None:
        raise UsageError("--seed is required for simulate")
    cfg = preset(args.preset)
    if args.dgp:
        try:
            text = Path(args.dgp).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {args.dgp}: {exc}") from exc
        cfg = DgpConfig.from_mapping(parse_key_values(text), base=cfg)
    overrides = parse_key_values("\n".join(args.set))
    cfg = DgpConfig.from_mapping({**overrides, "seed": args.seed}, base=cfg)
    table, schedule, truth = generate(cfg)
    try:
        write_csv(table, schedule, args.out)
        if args.truth:
            Path(args.truth).write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    except OSError as exc:
        raise UnwritablePath(str(exc)) from exc
    return {"estimator": "simulate", "rows": table.n, "truth": truth.to_dict(),
            "dgp": parse_key_values(cfg.to_text())}


HANDLERS = {
    "estimate": _cmd_estimate,
    "placebo": _cmd_estimate,
    "pretrend": _cmd_pretrend,
    "twfe": _cmd_twfe,
    "trend-test": _cmd_trend,
    "selection-test": _cmd_selection,
    "index": _cmd_index,
    "simulate": _cmd_simulate,
}


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": " ".join(message.split())}) + "\n")
    return status


def run(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            doc = HANDLERS[args.command](args)
        if caught:
            doc["warnings"] = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
        out = None if args.command == "simulate" else args.out
        _write_json(payload(doc, resolved_config(args)), out)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except MissingColumn as exc:
        return _fail(exc.code, str(exc), EXIT_USAGE)
    except EstimationError as exc:
        return _fail(exc.code, str(exc), EXIT_ESTIMATION)
    except (FileNotFoundError, pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
