"""End-to-end run: poolability, pooling, estimation, inequality, statistics.

Every table is written with fixed formatting (4 decimals for Gini values,
1 for percentages) so identical inputs and configuration give
byte-identical files. A manifest records the SHA-256 of every input and
output.
"""

from __future__ import annotations

import hashlib
import json
import math
import shutil
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import estimation as est
from .data_model import (
    DEFAULT_GROUPINGS,
    DISTRICTS,
    STATE_NAME,
    episodes_path_for,
    load_dataset,
    validate_dataset,
)
from .exceptions import CheqError, DataError, InvalidConfig, NotPoolable, TooFewObservations
from .inequality import VALUE_SELECTORS, Mode, district_decomposition_table
from .pooling import pool_datasets, poolability
from .stats import across_district_ci, spearman, welch_t

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_POOLABLE = 3
EXIT_INTERNAL = 4


@dataclass(frozen=True)
class RunConfig:
    central: str
    state: str
    out_dir: str = "out"
    central_episodes: str | None = None
    state_episodes: str | None = None
    thresholds: tuple = est.DEFAULT_THRESHOLDS
    groupings: tuple = ("sex", "sector", "social", "religion")
    references: dict = field(default_factory=dict)
    mode: str = "signed"
    value: str = "oop_private_inpatient"
    poolability_variable: str = "aexp"
    alpha: float = 0.05
    n_bins: int = 10
    ci_level: float = 0.99
    force: bool = False
    district_names: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "groupings", tuple(self.groupings))
        object.__setattr__(self, "district_names", {int(k): v for k, v in dict(self.district_names).items()})
        ts = self.thresholds
        if not ts or any(not 0 < t < 1 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidConfig(f"thresholds must be strictly ascending values in (0, 1), got {list(ts)}")
        unknown = [g for g in self.groupings if g not in DEFAULT_GROUPINGS]
        if unknown:
            raise InvalidConfig(f"unknown groupings {unknown}; choose from {sorted(DEFAULT_GROUPINGS)}")
        for name, ref in self.references.items():
            if name not in DEFAULT_GROUPINGS or ref not in DEFAULT_GROUPINGS[name].categories:
                raise InvalidConfig(f"bad reference {name}={ref}")
        try:
            Mode(self.mode)
        except ValueError:
            raise InvalidConfig(f"mode must be 'signed' or 'strict', got {self.mode!r}") from None
        if self.value not in VALUE_SELECTORS:
            raise InvalidConfig(f"value must be one of {sorted(VALUE_SELECTORS)}")
        if not 0 < self.alpha < 1 or not 0 < self.ci_level < 1:
            raise InvalidConfig("alpha and ci_level must be in (0, 1)")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    def grouping_specs(self):
        specs = []
        for name in self.groupings:
            g = DEFAULT_GROUPINGS[name]
            specs.append(g.with_reference(self.references[name]) if name in self.references else g)
        return specs

    def name_of(self, code):
        if code == 0:
            return STATE_NAME
        return self.district_names.get(code, DISTRICTS.get(code, str(code)))


class PipelineError(CheqError):
    def __init__(self, stage, cause, exit_code=EXIT_INTERNAL):
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


# -- formatting --------------------------------------------------------------

def fmt(x, nd):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{nd}f}"


def pct(x, nd=1):
    return fmt(None if x is None else 100.0 * x, nd)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(frame: pd.DataFrame, path):
    frame.to_csv(path, index=False, lineterminator="\n")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- tables ------------------------------------------------------------------

def che_tables(data, thresholds, name_of=None):
    """Overall, by-district and by-quintile CHE tables plus raw estimates."""
    name_of = name_of or (lambda c: DISTRICTS.get(c, STATE_NAME if c == 0 else str(c)))
    frame = est.household_frame(data)
    overall = [est.che_incidence(frame, t, label=STATE_NAME) for t in thresholds]
    by_district = est.che_by_district(frame, thresholds)

    def rows(estimates, code_of):
        out = []
        for e in estimates:
            code = code_of(e)
            out.append({
                "district_code": code,
                "district": name_of(code),
                "threshold_pct": fmt(100 * e.threshold, 0),
                "incidence_pct": pct(e.incidence),
                "se_pct": pct(e.se),
                "ci99_lo_pct": pct(e.ci99[0]),
                "ci99_hi_pct": pct(e.ci99[1]),
                "n": e.n,
                "excluded": e.excluded,
            })
        return out

    overall_tab = pd.DataFrame(rows(overall, lambda e: 0))
    district_tab = pd.DataFrame(rows(by_district, lambda e: int(e.domain.split("=")[1])))
    cuts = est.quintile_cuts(frame)
    q = {"mpce_class": [1, 2, 3, 4, 5]}
    q_raw = {}
    for t in thresholds:
        ests = est.che_by_quintile(frame, t, cuts)
        q[f"che_{fmt(100 * t, 0)}pct"] = [pct(e.incidence) for e in ests]
        q_raw[t] = [e.incidence for e in ests]
    quintile_tab = pd.DataFrame(q)
    raw = {
        "overall": [e.to_dict() for e in overall],
        "by_district": [e.to_dict() for e in by_district],
        "by_quintile": {str(t): v for t, v in q_raw.items()},
        "quintile_cuts": list(cuts.cuts),
    }
    return overall_tab, district_tab, quintile_tab, raw


def coverage_table(data, name_of=None):
    """Person-weighted coverage per district and for the state.

    ``vs_state`` is "high" or "low" when the district's 99% interval lies
    wholly above or below the state estimate.
    """
    name_of = name_of or (lambda c: DISTRICTS.get(c, STATE_NAME if c == 0 else str(c)))
    frame = est.household_frame(data)
    state = est.coverage_rate(frame, label=STATE_NAME)
    rows, raw = [], []
    for e in est.coverage_by_district(frame) + [state]:
        code = 0 if e is state else int(e.domain.split("=")[1])
        flag = ""
        if e is not state and not math.isnan(e.se):
            if e.ci99[0] > state.rate:
                flag = "high"
            elif e.ci99[1] < state.rate:
                flag = "low"
        rows.append({
            "district_code": code,
            "district": name_of(code),
            "coverage_pct": pct(e.rate),
            "se_pct": pct(e.se),
            "ci99_lo_pct": pct(e.ci99[0]),
            "ci99_hi_pct": pct(e.ci99[1]),
            "vs_state": flag,
            "n": e.n,
        })
        raw.append(dict(e.to_dict(), district_code=code))
    return pd.DataFrame(rows), raw


def format_gini_table(table, groupings, name_of=None):
    """Fixed-precision rendering of :func:`district_decomposition_table`."""
    out = pd.DataFrame({
        "district_code": table["district_code"],
        "district": [name_of(c) if name_of else d for c, d in zip(table["district_code"], table["district"])],
        "n_episodes": table["n_episodes"],
        "low_n": table["low_n"].map(lambda b: "true" if b else "false"),
        "total_gini": table["total_gini"].map(lambda v: fmt(v, 4)),
    })
    for g in groupings:
        k = g.name
        for comp in ("between", "within", "overlap"):
            out[f"{k}_{comp}"] = table[f"{k}_{comp}"].map(lambda v: fmt(v, 4))
            out[f"{k}_{comp}_pct"] = table[f"{k}_{comp}_pct"].map(lambda v: fmt(v, 1))
        out[f"{k}_between_sig"] = table[f"{k}_between_sig"]
        out[f"{k}_between_display"] = [
            f"{fmt(b, 3)}{s} ({fmt(p, 1)})" if not math.isnan(b) else ""
            for b, s, p in zip(table[f"{k}_between"], table[f"{k}_between_sig"], table[f"{k}_between_pct"])
        ]
    return out


def component_table(data, care_type, name_of=None):
    name_of = name_of or (lambda c: DISTRICTS.get(c, STATE_NAME if c == 0 else str(c)))
    ep = est.episode_frame(data)
    rows, raw = [], {}
    codes = sorted(set(ep["district_code"].tolist()))
    for code in codes + [0]:
        domain = {"district_code": code} if code else None
        try:
            shares = est.component_shares(ep, care_type, domain)
        except CheqError:
            continue
        row = {"district_code": code, "district": name_of(code)}
        row.update({f"{k}_pct": pct(v) for k, v in shares.items()})
        rows.append(row)
        raw[code] = shares
    return pd.DataFrame(rows), raw


def _safe(fn, *args):
    try:
        return fn(*args)
    except (CheqError, ValueError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def stats_summary(che_raw, coverage_raw, gini, gini_chronic, gini_nonchronic, groupings, ci_level):
    """Rank correlations, chronic-disease t-tests and between-share intervals."""
    by_t = {}
    for e in che_raw["by_district"]:
        by_t.setdefault(e["threshold"], {})[int(e["domain"].split("=")[1])] = e["incidence"]
    ts = sorted(by_t)
    codes = sorted(by_t[ts[0]]) if ts else []
    out = {}
    if len(ts) >= 2:
        x = [by_t[ts[0]][c] for c in codes]
        out["che_rank_correlation"] = {
            f"{ts[0]:g}_vs_{t:g}": _safe(lambda a, b: spearman(a, b).to_dict(), x, [by_t[t][c] for c in codes])
            for t in ts[1:]
        }
    cov = {r["district_code"]: r["rate"] for r in coverage_raw if r["district_code"] != 0}
    if ts:
        che = [by_t[ts[0]][c] for c in codes]
        covv = [cov[c] for c in codes]
        out["coverage_vs_che"] = {
            "threshold": ts[0],
            "raw": _safe(lambda a, b: spearman(a, b).to_dict(), covv, che),
            "aligned": _safe(lambda a, b: spearman(a, b).to_dict(), [1 - v for v in covv], che),
        }

    def district_ginis(t):
        return t.loc[t["district_code"] != 0, "total_gini"].dropna().to_numpy(float)

    out["chronic_ttest"] = {
        "chronic_vs_nonchronic": _safe(lambda a, b: welch_t(a, b).to_dict(),
                                       district_ginis(gini_chronic), district_ginis(gini_nonchronic)),
        "overall_vs_chronic": _safe(lambda a, b: welch_t(a, b).to_dict(),
                                    district_ginis(gini), district_ginis(gini_chronic)),
    }
    shares = {}
    districts = gini[gini["district_code"] != 0]
    for g in groupings:
        v = np.abs(districts[f"{g.name}_between_pct"].dropna().to_numpy(float))
        try:
            mean, lo, hi = across_district_ci(v, ci_level)
            shares[g.name] = {"mean_abs_between_pct": mean, "lo": lo, "hi": hi, "n": len(v), "level": ci_level}
        except TooFewObservations as exc:
            shares[g.name] = {"error": str(exc)}
    out["between_share_ci"] = shares
    return out


def choropleths(che_raw, coverage_raw, gini):
    """``district_code,value`` frames keyed by file stem."""
    out = {}
    by_t = {}
    for e in che_raw["by_district"]:
        by_t.setdefault(e["threshold"], []).append((int(e["domain"].split("=")[1]), e["incidence"]))
    for t, items in sorted(by_t.items()):
        out[f"choropleth_che_{fmt(100 * t, 0)}pct"] = pd.DataFrame(
            {"district_code": [c for c, _ in items], "value": [pct(v) for _, v in items]}
        )
    cov = [r for r in coverage_raw if r["district_code"] != 0]
    out["choropleth_coverage"] = pd.DataFrame(
        {"district_code": [r["district_code"] for r in cov], "value": [pct(r["rate"]) for r in cov]}
    )
    g = gini[gini["district_code"] != 0]
    out["choropleth_gini"] = pd.DataFrame(
        {"district_code": g["district_code"].tolist(), "value": [fmt(v, 4) for v in g["total_gini"]]}
    )
    return out


# -- pipeline ----------------------------------------------------------------

def _load(households, episodes, agency):
    if episodes is None:
        cand = episodes_path_for(households)
        episodes = cand if cand.exists() else None
    return load_dataset(households, episodes, agency=agency)


def _stage(name, fn, *args, exit_code=EXIT_INTERNAL, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except (DataError, InvalidConfig, FileNotFoundError) as exc:
        raise PipelineError(name, exc, EXIT_VALIDATION) from exc
    except NotPoolable as exc:
        raise PipelineError(name, exc, EXIT_NOT_POOLABLE) from exc
    except Exception as exc:  # noqa: BLE001 - any failure aborts the named stage
        raise PipelineError(name, exc, exit_code) from exc


ARTIFACTS = (
    ("a", "poolability"),
    ("b", "che"),
    ("c", "coverage"),
    ("d", "gini"),
    ("e", "components"),
    ("f", "stats"),
    ("g", "choropleth"),
)


def run_pipeline(config: RunConfig):
    """Run every stage and write the report bundle to ``config.out_dir``.

    Outputs are assembled in a scratch directory and moved into place only
    after every stage succeeds, so a failed run leaves no partial files.

    Returns
    -------
    dict
        The manifest.

    Raises
    ------
    PipelineError
        Naming the failed stage; ``exit_code`` follows the CLI convention.
    """
    central = _stage("load", _load, config.central, config.central_episodes, "Central")
    state = _stage("load", _load, config.state, config.state_episodes, "State")

    def check(ds):
        report = validate_dataset(ds)
        if not report.valid:
            first = report.violations[0]
            raise DataError(f"{len(report.violations)} violation(s); first: {first.kind} {first.record_id}: {first.message}")
        return report

    _stage("validate", check, central)
    _stage("validate", check, state)
    report = _stage(
        "poolability", poolability, central, state, config.poolability_variable, config.alpha, config.n_bins
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pooled = _stage("pool", pool_datasets, central, state, report, force=config.force)

    name_of = config.name_of
    groupings = config.grouping_specs()

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        overall, by_district, by_quintile, che_raw = _stage("estimate", che_tables, pooled, config.thresholds, name_of)
        cov_tab, cov_raw = _stage("estimate", coverage_table, pooled, name_of)
        ip_tab, ip_raw = _stage("estimate", component_table, pooled, "Inpatient", name_of)
        op_tab, op_raw = _stage("estimate", component_table, pooled, "Outpatient", name_of)
        gini = _stage("gini", district_decomposition_table, pooled, config.value, groupings, config.mode)
        gini_chronic = _stage("gini", district_decomposition_table, pooled, config.value, groupings, config.mode, True)
        gini_nonchronic = _stage("gini", district_decomposition_table, pooled, config.value, groupings, config.mode, False)
        summary = _stage(
            "stats", stats_summary, che_raw, cov_raw, gini, gini_chronic, gini_nonchronic, groupings, config.ci_level
        )
        maps = _stage("report", choropleths, che_raw, cov_raw, gini)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".cheq-", dir=out_dir.parent))
    moved = []
    try:
        files = {}

        def put(key, name, writer, obj):
            writer(obj, scratch / name)
            files.setdefault(key, []).append(name)

        put("a", "poolability.json", dump_json, report.to_dict())
        put("b", "che_overall.csv", write_csv, overall)
        put("b", "che_by_district.csv", write_csv, by_district)
        put("b", "che_by_quintile.csv", write_csv, by_quintile)
        put("c", "coverage_by_district.csv", write_csv, cov_tab)
        put("d", "gini_decomposition.csv", write_csv, format_gini_table(gini, groupings, name_of))
        put("d", "gini_chronic.csv", write_csv, format_gini_table(gini_chronic, groupings, name_of))
        put("d", "gini_nonchronic.csv", write_csv, format_gini_table(gini_nonchronic, groupings, name_of))
        put("e", "components_inpatient.csv", write_csv, ip_tab)
        put("e", "components_outpatient.csv", write_csv, op_tab)
        put("f", "stats_summary.json", dump_json, summary)
        for stem, frame in maps.items():
            put("g", f"{stem}.csv", write_csv, frame)

        combined = {
            "poolability": report.to_dict(),
            "che": che_raw,
            "coverage": cov_raw,
            "gini": gini.to_dict(orient="records"),
            "components": {"inpatient": ip_raw, "outpatient": op_raw},
            "stats": summary,
            "config": _config_record(config),
        }
        dump_json(combined, scratch / "results.json")

        manifest = {
            "inputs": _input_hashes(config, central, state),
            "config": _config_record(config),
            "artifacts": [
                {"id": key, "name": name, "files": [{"path": f, "sha256": sha256(scratch / f)} for f in files[key]]}
                for key, name in ARTIFACTS
            ],
            "combined": {"path": "results.json", "sha256": sha256(scratch / "results.json")},
        }
        dump_json(manifest, scratch / "manifest.json")
        for item in sorted(scratch.iterdir()):
            shutil.move(str(item), out_dir / item.name)
            moved.append(out_dir / item.name)
    except Exception as exc:
        for path in moved:
            path.unlink(missing_ok=True)
        raise PipelineError("report", exc) from exc
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return _jsonable(manifest)


def _config_record(config):
    d = asdict(config)
    d.pop("out_dir")
    for key in ("central", "state", "central_episodes", "state_episodes"):
        if d[key] is not None:
            d[key] = Path(d[key]).name
    return d


def _input_hashes(config, central, state):
    paths = [config.central, config.state]
    for hh, ep in ((config.central, config.central_episodes), (config.state, config.state_episodes)):
        ep = ep or episodes_path_for(hh)
        if Path(ep).exists():
            paths.append(ep)
    return {Path(p).name: sha256(p) for p in paths}
