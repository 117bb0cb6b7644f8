"""``cheq`` command-line interface.

Exit codes: 0 success, 2 validation failure, 3 samples not poolable
(without ``--force``), 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import pandas as pd

from . import estimation as est
from .data_model import (
    DEFAULT_GROUPINGS,
    episodes_path_for,
    load_dataset,
    validate_dataset,
    write_episodes,
    write_households,
)
from .exceptions import CheqError, DataError, InvalidConfig, NotPoolable
from .inequality import VALUE_SELECTORS, district_decomposition_table
from .pipeline import (
    EXIT_INTERNAL,
    EXIT_NOT_POOLABLE,
    EXIT_OK,
    EXIT_VALIDATION,
    PipelineError,
    RunConfig,
    che_tables,
    choropleths,
    coverage_table,
    dump_json,
    format_gini_table,
    run_pipeline,
    write_csv,
)
from .pooling import pool_datasets, poolability
from .stats import spearman, welch_t
from .synth import SynthConfig, generate, write_samples

log = logging.getLogger("cheq")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _load(households, episodes, agency=None):
    if episodes is None:
        cand = episodes_path_for(households)
        episodes = cand if cand.exists() else None
    ds = load_dataset(households, episodes, agency=agency)
    report = validate_dataset(ds)
    if not report.valid:
        for v in report.violations[:20]:
            log.error("%s %s: %s", v.kind, v.record_id, v.message)
        raise DataError(f"{households}: {len(report.violations)} validation violation(s)")
    return ds


def cmd_synth(args):
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_households is not None:
        data["n_households"] = args.n_households
    if args.districts:
        data["districts"] = [int(d) for d in _names(args.districts)]
    config = SynthConfig.from_dict(data)
    central, state, _ = generate(config, with_truth=False)
    paths = write_samples(central, state, args.out)
    dump_json(config.to_dict(), Path(args.out) / "synth_config.json")
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_poolability(args):
    central = _load(args.central, args.central_episodes, "Central")
    state = _load(args.state, args.state_episodes, "State")
    report = poolability(central, state, args.variable, args.alpha, args.bins)
    if args.out:
        dump_json(report.to_dict(), args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pool(args):
    central = _load(args.central, args.central_episodes, "Central")
    state = _load(args.state, args.state_episodes, "State")
    report = poolability(central, state, args.variable, args.alpha, args.bins)
    pooled = pool_datasets(central, state, report, force=args.force)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_households(pooled, out)
    ep_out = episodes_path_for(out)
    write_episodes(pooled, ep_out)
    print(out)
    print(ep_out)
    return EXIT_OK


def cmd_estimate(args):
    data = _load(args.data, args.episodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by = set(_names(args.by))
    bad = by - {"district", "quintile"}
    if bad:
        raise InvalidConfig(f"--by accepts district,quintile; got {sorted(bad)}")
    thresholds = _floats(args.thresholds)
    RunConfig(central="-", state="-", thresholds=thresholds)  # threshold validation
    overall, by_district, by_quintile, raw = che_tables(data, thresholds)
    cov, cov_raw = coverage_table(data)
    write_csv(overall, out / "che_overall.csv")
    if "district" in by:
        write_csv(by_district, out / "che_by_district.csv")
        write_csv(cov, out / "coverage_by_district.csv")
    if "quintile" in by:
        write_csv(by_quintile, out / "che_by_quintile.csv")
    combined = {"che": raw, "coverage": cov_raw}
    if data.episodes:
        comps = {}
        for care in ("Inpatient", "Outpatient"):
            try:
                comps[care.lower()] = est.component_shares(data, care)
            except CheqError as exc:
                comps[care.lower()] = {"error": str(exc)}
        combined["components"] = comps
    dump_json(combined, out / "estimates.json")
    if args.choropleth:
        for stem, frame in choropleths(raw, cov_raw, _empty_gini()).items():
            if stem != "choropleth_gini":
                write_csv(frame, out / f"{stem}.csv")
    print(out)
    return EXIT_OK


def _empty_gini():
    return pd.DataFrame({"district_code": [], "total_gini": []})


def _parse_refs(text):
    refs = {}
    for item in _names(text or ""):
        name, _, ref = item.partition("=")
        refs[name] = ref
    return refs


def cmd_gini(args):
    data = _load(args.data, args.episodes)
    if args.by != "district":
        raise InvalidConfig("--by supports only 'district'")
    groups = _names(args.group)
    config = RunConfig(central="-", state="-", groupings=groups, references=_parse_refs(args.reference),
                       mode=args.mode, value=args.value)
    chronic = {"all": None, "only": True, "without": False}[args.chronic]
    specs = config.grouping_specs()
    table = district_decomposition_table(data, args.value, specs, args.mode, chronic)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(format_gini_table(table, specs), out)
    print(out)
    return EXIT_OK


def _read_vector(path, column=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty file", path=path)
    start = 0
    idx = 0
    try:
        float(rows[0][0])
    except ValueError:
        start = 1
        if column is not None:
            idx = rows[0].index(column)
    values = []
    for r, row in enumerate(rows[start:], start=start + 1):
        try:
            values.append(float(row[idx]))
        except (ValueError, IndexError):
            raise DataError(f"not a number: {row!r}", row=r, path=path) from None
    return values


def cmd_stats(args):
    paths = _names(args.inputs)
    if len(paths) != 2:
        raise InvalidConfig("--in needs exactly two files: a.csv,b.csv")
    a, b = (_read_vector(p, args.column) for p in paths)
    result = spearman(a, b).to_dict() if args.test == "spearman" else welch_t(a, b).to_dict()
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_run(args):
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "central": args.central,
        "state": args.state,
        "central_episodes": args.central_episodes,
        "state_episodes": args.state_episodes,
        "out_dir": args.out,
        "mode": args.mode,
        "value": args.value,
        "alpha": args.alpha,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.thresholds:
        data["thresholds"] = _floats(args.thresholds)
    if args.group:
        data["groupings"] = _names(args.group)
    if args.force:
        data["force"] = True
    if "central" not in data or "state" not in data:
        raise InvalidConfig("run needs --central and --state (or a config providing them)")
    manifest = run_pipeline(RunConfig.from_dict(data))
    print(json.dumps({"artifacts": [a["name"] for a in manifest["artifacts"]], "out": data.get("out_dir", "out")}))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cheq", description="Catastrophic health expenditure and OOP inequality toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic central/state sample pair")
    s.add_argument("--config", help="JSON synth config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-households", type=int, help="households per district, both agencies")
    s.add_argument("--districts", help="comma-separated district codes")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    def two_samples(sp):
        sp.add_argument("--central", required=True, help="central-sample household CSV")
        sp.add_argument("--state", required=True, help="state-sample household CSV")
        sp.add_argument("--central-episodes")
        sp.add_argument("--state-episodes")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--variable", default="aexp", help="household column tested")
        sp.add_argument("--bins", type=int, default=10)

    s = sub.add_parser("poolability", help="runs, chi-square and z tests of the two samples")
    two_samples(s)
    s.add_argument("--out", help="report JSON path")
    s.set_defaults(func=cmd_poolability)

    s = sub.add_parser("pool", help="pool the two samples with rescaled multipliers")
    two_samples(s)
    s.add_argument("--force", action="store_true", help="pool even if the tests reject")
    s.add_argument("--out", required=True, help="pooled household CSV; episodes go alongside")
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("estimate", help="CHE incidence, coverage and component shares")
    s.add_argument("--data", required=True, help="household CSV")
    s.add_argument("--episodes")
    s.add_argument("--thresholds", default="0.1,0.2,0.4")
    s.add_argument("--by", default="district,quintile")
    s.add_argument("--choropleth", action="store_true", help="also write district_code,value CSVs")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("gini", help="Gini decomposition table by district")
    s.add_argument("--data", required=True)
    s.add_argument("--episodes")
    s.add_argument("--value", default="oop_private_inpatient", choices=sorted(VALUE_SELECTORS))
    s.add_argument("--group", default=",".join(DEFAULT_GROUPINGS))
    s.add_argument("--reference", help="e.g. sex=Female,sector=Rural")
    s.add_argument("--mode", default="signed", choices=["signed", "strict"])
    s.add_argument("--by", default="district")
    s.add_argument("--chronic", default="all", choices=["all", "only", "without"])
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(func=cmd_gini)

    s = sub.add_parser("stats", help="Spearman correlation or Welch t-test of two vectors")
    s.add_argument("test", choices=["spearman", "ttest"])
    s.add_argument("--in", dest="inputs", required=True, help="a.csv,b.csv")
    s.add_argument("--column", help="column name when the files have headers")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--config", help="JSON run config")
    s.add_argument("--central")
    s.add_argument("--state")
    s.add_argument("--central-episodes")
    s.add_argument("--state-episodes")
    s.add_argument("--thresholds")
    s.add_argument("--group")
    s.add_argument("--mode", choices=["signed", "strict"])
    s.add_argument("--value", choices=sorted(VALUE_SELECTORS))
    s.add_argument("--alpha", type=float)
    s.add_argument("--force", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="cheq: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except PipelineError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (DataError, InvalidConfig, FileNotFoundError) as exc:
        log.error("validation failed: %s", exc)
        return EXIT_VALIDATION
    except NotPoolable as exc:
        log.error("%s", exc)
        return EXIT_NOT_POOLABLE
    except Exception as exc:  # noqa: BLE001
        log.error("internal error: %s: %s", type(exc).__name__, exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
