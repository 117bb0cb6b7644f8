"""Microdata schema, CSV loading and dataset validation.

Two CSV files describe one survey sample: a household file and an episode
file (one row per inpatient or outpatient care episode). Records are
immutable dataclasses; :class:`SurveyDataset` bundles them and exposes
cached column arrays for the estimators.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    BadEnum,
    BadValue,
    ComponentMismatch,
    DuplicateId,
    MissingColumn,
    MissingOptionalField,
    NegativeValue,
)

SECTORS = ("Rural", "Urban")
AGENCIES = ("Central", "State")
SUBSAMPLES = ("S1", "S2")
CARE_TYPES = ("Inpatient", "Outpatient")
FACILITIES = ("Public", "Private")
SEXES = ("Male", "Female")
SOCIAL_GROUPS = ("ST", "SC", "OBC", "Others")
RELIGIONS = ("Muslim", "Others")

INPATIENT_COMPONENTS = (
    "package",
    "doctor_fee",
    "medicines",
    "diagnostics",
    "bed_charges",
    "other_medical",
    "transport",
    "other_nonmedical",
)
OUTPATIENT_COMPONENTS = (
    "doctor_fee",
    "medicines_ayush",
    "medicines_other",
    "diagnostics",
    "other_medical",
    "transport",
    "other_nonmedical",
)
COMPONENTS = {"Inpatient": INPATIENT_COMPONENTS, "Outpatient": OUTPATIENT_COMPONENTS}
ALL_COMPONENTS = tuple(dict.fromkeys(INPATIENT_COMPONENTS + OUTPATIENT_COMPONENTS))

HOUSEHOLD_COLUMNS = (
    "hh_id",
    "district_code",
    "sector",
    "agency",
    "subsample",
    "stratum_id",
    "multiplier",
    "hh_size",
    "aexp",
    "oop_total",
    "oop_inpatient",
    "oop_outpatient",
    "coverage",
)
EPISODE_COLUMNS = (
    "episode_id",
    "hh_id",
    "care_type",
    "facility",
    "patient_sex",
    "social_group",
    "religion",
    "chronic",
    "is_delivery",
    "multiplier",
)
OPTIONAL_EPISODE_COLUMNS = ("chronic", "is_delivery")

COMPONENT_SUM_TOLERANCE = 1e-6


def _load_district_map():
    text = resources.files("cheq").joinpath("data/districts.json").read_text()
    raw = json.loads(text)
    return raw["state"], {d["code"]: d["name"] for d in raw["districts"]}


STATE_NAME, DISTRICTS = _load_district_map()


def district_name(code):
    return DISTRICTS.get(code, STATE_NAME if code == 0 else str(code))


@dataclass(frozen=True)
class HouseholdRecord:
    hh_id: str
    district_code: int
    sector: str
    agency: str
    subsample: str
    stratum_id: str
    multiplier: float
    hh_size: int
    aexp: float
    oop_total: float
    oop_inpatient: float
    oop_outpatient: float
    coverage: bool

    @property
    def persons_weight(self):
        return self.multiplier * self.hh_size


@dataclass(frozen=True)
class EpisodeRecord:
    episode_id: str
    hh_id: str
    care_type: str
    facility: str
    patient_sex: str
    social_group: str
    religion: str
    chronic: bool
    is_delivery: bool
    cost_components: Mapping[str, float]
    multiplier: float

    @property
    def total_cost(self):
        return math.fsum(self.cost_components.values())


@dataclass(frozen=True)
class SurveyDataset:
    """Validated households plus their care episodes.

    ``households`` must be non-empty. Column views (``household_frame``,
    ``episode_frame``) are computed once and cached; treat them as
    read-only.
    """

    households: tuple
    episodes: tuple = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "households", tuple(self.households))
        object.__setattr__(self, "episodes", tuple(self.episodes))
        if not self.households:
            raise ValueError("a SurveyDataset needs at least one household")

    def __len__(self):
        return len(self.households)

    @cached_property
    def household_frame(self):
        hh = self.households
        frame = pd.DataFrame(
            {
                "hh_id": [h.hh_id for h in hh],
                "district_code": np.array([h.district_code for h in hh], dtype=np.int64),
                "sector": [h.sector for h in hh],
                "agency": [h.agency for h in hh],
                "subsample": [h.subsample for h in hh],
                "stratum_id": [h.stratum_id for h in hh],
                "multiplier": np.array([h.multiplier for h in hh], dtype=float),
                "hh_size": np.array([h.hh_size for h in hh], dtype=np.int64),
                "aexp": np.array([h.aexp for h in hh], dtype=float),
                "oop_total": np.array([h.oop_total for h in hh], dtype=float),
                "oop_inpatient": np.array([h.oop_inpatient for h in hh], dtype=float),
                "oop_outpatient": np.array([h.oop_outpatient for h in hh], dtype=float),
                "coverage": np.array([h.coverage for h in hh], dtype=bool),
            }
        )
        return frame

    @cached_property
    def episode_frame(self):
        """Episodes joined to the household design fields.

        Component columns not applicable to an episode's care type are 0.
        ``district_code``, ``sector`` and ``subsample`` come from the owning
        household; episodes whose household is unknown are dropped.
        """
        eps = self.episodes
        cols = {
            "episode_id": [e.episode_id for e in eps],
            "hh_id": [e.hh_id for e in eps],
            "care_type": [e.care_type for e in eps],
            "facility": [e.facility for e in eps],
            "patient_sex": [e.patient_sex for e in eps],
            "social_group": [e.social_group for e in eps],
            "religion": [e.religion for e in eps],
            "chronic": np.array([e.chronic for e in eps], dtype=bool),
            "is_delivery": np.array([e.is_delivery for e in eps], dtype=bool),
            "multiplier": np.array([e.multiplier for e in eps], dtype=float),
        }
        for name in ALL_COMPONENTS:
            cols[name] = np.array(
                [e.cost_components.get(name, 0.0) for e in eps], dtype=float
            )
        frame = pd.DataFrame(cols)
        frame["total_cost"] = frame[list(ALL_COMPONENTS)].sum(axis=1)
        design = self.household_frame[["hh_id", "district_code", "sector", "subsample", "agency"]]
        frame = frame.merge(design, on="hh_id", how="inner", sort=False)
        return frame

    def subset(self, mask, label=None):
        """Households selected by a boolean mask, with their episodes."""
        mask = np.asarray(mask, dtype=bool)
        kept = tuple(h for h, keep in zip(self.households, mask) if keep)
        ids = {h.hh_id for h in kept}
        eps = tuple(e for e in self.episodes if e.hh_id in ids)
        return SurveyDataset(kept, eps, self.label if label is None else label)

    def with_multipliers(self, factor):
        """Copy with every household and episode multiplier times ``factor``."""
        hh = tuple(replace(h, multiplier=h.multiplier * factor) for h in self.households)
        eps = tuple(replace(e, multiplier=e.multiplier * factor) for e in self.episodes)
        return SurveyDataset(hh, eps, self.label)


@dataclass(frozen=True)
class GroupingSpec:
    """A binary or K-way partition of records for inequality decomposition.

    ``field`` names a categorical column of the episode frame (household
    design fields such as ``sector`` are joined in). ``merge_rules`` maps raw
    codes to category labels before grouping; codes not listed map to
    themselves. The first category is the sign reference unless
    ``reference`` is given.
    """

    name: str
    field: str
    categories: tuple
    reference: str | None = None
    merge_rules: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "merge_rules", dict(self.merge_rules))
        if not cats:
            raise ValueError(f"grouping {self.name!r} has no categories")
        if len(set(cats)) != len(cats):
            raise ValueError(f"grouping {self.name!r} has repeated categories")
        if self.reference is None:
            object.__setattr__(self, "reference", cats[0])
        elif self.reference not in cats:
            raise ValueError(
                f"reference {self.reference!r} is not a category of {self.name!r}"
            )

    def with_reference(self, reference):
        return replace(self, reference=reference)

    def labels(self, raw):
        """Map raw codes to merged category labels (object array)."""
        rules = self.merge_rules
        return np.array([rules.get(v, v) for v in raw], dtype=object)


DEFAULT_GROUPINGS = {
    "sex": GroupingSpec("sex", "patient_sex", ("Male", "Female")),
    "sector": GroupingSpec("sector", "sector", ("Urban", "Rural")),
    "social": GroupingSpec(
        "social",
        "social_group",
        ("Others", "SC&ST"),
        merge_rules={"SC": "SC&ST", "ST": "SC&ST", "OBC": "Others"},
    ),
    "religion": GroupingSpec("religion", "religion", ("Others", "Muslim")),
}


# -- parsing -----------------------------------------------------------------

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def _enum(value, allowed, row, name, path):
    for a in allowed:
        if value.strip().lower() == a.lower():
            return a
    raise BadEnum(f"{value!r} not in {list(allowed)}", row=row, field=name, path=path)


def _bool(value, row, name, path):
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise BadValue(f"{value!r} is not a boolean", row=row, field=name, path=path)


def _float(value, row, name, path, positive=False):
    try:
        x = float(value)
    except ValueError:
        raise BadValue(f"{value!r} is not a number", row=row, field=name, path=path) from None
    if not math.isfinite(x):
        raise BadValue(f"{value!r} is not finite", row=row, field=name, path=path)
    if positive and x <= 0:
        raise NegativeValue(f"{x!r} must be > 0", row=row, field=name, path=path)
    if x < 0:
        raise NegativeValue(f"{x!r} must be >= 0", row=row, field=name, path=path)
    return x


def _int(value, row, name, path):
    try:
        return int(value)
    except ValueError:
        raise BadValue(f"{value!r} is not an integer", row=row, field=name, path=path) from None


def _require_columns(header, required, path):
    missing = [c for c in required if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s) {missing}", row=1, field=missing[0], path=path)


def load_households(path, agency=None, label=None):
    """Read a household CSV into a :class:`SurveyDataset` with no episodes.

    Parameters
    ----------
    path : path-like
        CSV with the household columns (any order).
    agency : {"Central", "State"}, optional
        When given, every row's ``agency`` must equal it.
    label : str, optional
        Dataset label; defaults to the lower-cased agency or the file stem.

    Raises
    ------
    MissingColumn, BadEnum, BadValue, NegativeValue, DuplicateId
        On the first offending row; the error carries the line number.
    """
    path = Path(path)
    if agency is not None:
        agency = _enum(agency, AGENCIES, None, "agency", path)
    records = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames or (), HOUSEHOLD_COLUMNS, path)
        for row_no, row in enumerate(reader, start=2):
            rec = _parse_household(row, row_no, path)
            if agency is not None and rec.agency != agency:
                raise BadEnum(
                    f"agency {rec.agency!r} in a {agency} file", row=row_no, field="agency", path=path
                )
            if rec.hh_id in seen:
                raise DuplicateId(f"hh_id {rec.hh_id!r} repeated", row=row_no, field="hh_id", path=path)
            seen.add(rec.hh_id)
            records.append(rec)
    if label is None:
        label = agency.lower() if agency else path.stem
    return SurveyDataset(records, (), label)


def _parse_household(row, r, path):
    code = _int(row["district_code"], r, "district_code", path)
    if code not in DISTRICTS:
        raise BadEnum(f"unknown district code {code}", row=r, field="district_code", path=path)
    size = _int(row["hh_size"], r, "hh_size", path)
    if size <= 0:
        raise NegativeValue(f"hh_size {size} must be > 0", row=r, field="hh_size", path=path)
    hh_id = row["hh_id"].strip()
    if not hh_id:
        raise BadValue("empty hh_id", row=r, field="hh_id", path=path)
    return HouseholdRecord(
        hh_id=hh_id,
        district_code=code,
        sector=_enum(row["sector"], SECTORS, r, "sector", path),
        agency=_enum(row["agency"], AGENCIES, r, "agency", path),
        subsample=_enum(row["subsample"], SUBSAMPLES, r, "subsample", path),
        stratum_id=row["stratum_id"].strip(),
        multiplier=_float(row["multiplier"], r, "multiplier", path, positive=True),
        hh_size=size,
        aexp=_float(row["aexp"], r, "aexp", path),
        oop_total=_float(row["oop_total"], r, "oop_total", path),
        oop_inpatient=_float(row["oop_inpatient"], r, "oop_inpatient", path),
        oop_outpatient=_float(row["oop_outpatient"], r, "oop_outpatient", path),
        coverage=_bool(row["coverage"], r, "coverage", path),
    )


def load_episodes(path):
    """Read an episode CSV into a tuple of :class:`EpisodeRecord`.

    ``chronic`` and ``is_delivery`` may be absent or blank; they default to
    false and a :class:`MissingOptionalField` warning is issued once.
    """
    path = Path(path)
    required = [c for c in EPISODE_COLUMNS if c not in OPTIONAL_EPISODE_COLUMNS]
    records = []
    seen = set()
    defaulted = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or ()
        _require_columns(header, required, path)
        for row_no, row in enumerate(reader, start=2):
            care = _enum(row["care_type"], CARE_TYPES, row_no, "care_type", path)
            costs = {}
            for name in ALL_COMPONENTS:
                cell = (row.get(name) or "").strip()
                if name in COMPONENTS[care]:
                    if name not in header:
                        raise MissingColumn(
                            f"missing component column {name!r}", row=1, field=name, path=path
                        )
                    if not cell:
                        raise ComponentMismatch(
                            f"{care} episode needs a value for {name!r}", row=row_no, field=name, path=path
                        )
                    costs[name] = _float(cell, row_no, name, path)
                elif cell:
                    raise ComponentMismatch(
                        f"{name!r} is not a {care} component", row=row_no, field=name, path=path
                    )
            flags = {}
            for name in OPTIONAL_EPISODE_COLUMNS:
                cell = (row.get(name) or "").strip()
                if cell:
                    flags[name] = _bool(cell, row_no, name, path)
                else:
                    flags[name] = False
                    defaulted.add(name)
            ep_id = row["episode_id"].strip()
            if ep_id in seen:
                raise DuplicateId(
                    f"episode_id {ep_id!r} repeated", row=row_no, field="episode_id", path=path
                )
            seen.add(ep_id)
            records.append(
                EpisodeRecord(
                    episode_id=ep_id,
                    hh_id=row["hh_id"].strip(),
                    care_type=care,
                    facility=_enum(row["facility"], FACILITIES, row_no, "facility", path),
                    patient_sex=_enum(row["patient_sex"], SEXES, row_no, "patient_sex", path),
                    social_group=_enum(row["social_group"], SOCIAL_GROUPS, row_no, "social_group", path),
                    religion=_enum(row["religion"], RELIGIONS, row_no, "religion", path),
                    chronic=flags["chronic"],
                    is_delivery=flags["is_delivery"],
                    cost_components=costs,
                    multiplier=_float(row["multiplier"], row_no, "multiplier", path, positive=True),
                )
            )
    if defaulted:
        warnings.warn(
            f"{path}: {sorted(defaulted)} missing or blank, defaulted to false",
            MissingOptionalField,
            stacklevel=2,
        )
    return tuple(records)


def load_dataset(households_path, episodes_path=None, agency=None, label=None):
    """Households plus (optionally) episodes as one dataset."""
    ds = load_households(households_path, agency=agency, label=label)
    if episodes_path is None:
        return ds
    return SurveyDataset(ds.households, load_episodes(episodes_path), ds.label)


# -- writing -----------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_households(dataset, path):
    households = dataset.households if isinstance(dataset, SurveyDataset) else dataset
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOUSEHOLD_COLUMNS)
        for h in households:
            w.writerow([_fmt(getattr(h, c)) for c in HOUSEHOLD_COLUMNS])


def write_episodes(dataset, path):
    episodes = dataset.episodes if isinstance(dataset, SurveyDataset) else dataset
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS + ALL_COMPONENTS)
        for e in episodes:
            row = [_fmt(getattr(e, c)) for c in EPISODE_COLUMNS]
            row += [_fmt(e.cost_components[c]) if c in e.cost_components else "" for c in ALL_COMPONENTS]
            w.writerow(row)


def episodes_path_for(households_path):
    """Companion episode file for a household file.

    ``x/central_households.csv`` pairs with ``x/central_episodes.csv``;
    any other ``x/name.csv`` pairs with ``x/name_episodes.csv``.
    """
    p = Path(households_path)
    if "households" in p.stem:
        return p.with_name(p.stem.replace("households", "episodes") + p.suffix)
    return p.with_name(p.stem + "_episodes" + p.suffix)


# -- validation --------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    record_id: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def valid(self):
        return not self.violations

    def by_kind(self, kind):
        return [v for v in self.violations if v.kind == kind]

    def to_dict(self):
        return {
            "valid": self.valid,
            "violations": [v.__dict__ for v in self.violations],
        }


def _check_household(h) -> Iterable[Violation]:
    if not (isinstance(h.multiplier, (int, float)) and h.multiplier > 0):
        yield Violation("range", h.hh_id, f"multiplier {h.multiplier!r} must be > 0")
    if not h.hh_size > 0:
        yield Violation("range", h.hh_id, f"hh_size {h.hh_size!r} must be > 0")
    for name in ("aexp", "oop_total", "oop_inpatient", "oop_outpatient"):
        if not getattr(h, name) >= 0:
            yield Violation("range", h.hh_id, f"{name} {getattr(h, name)!r} must be >= 0")
    excess = h.oop_inpatient + h.oop_outpatient - h.oop_total
    if excess > COMPONENT_SUM_TOLERANCE:
        yield Violation(
            "component_sum",
            h.hh_id,
            f"oop_inpatient + oop_outpatient exceeds oop_total by {excess:g}",
        )
    if h.district_code not in DISTRICTS:
        yield Violation("enum", h.hh_id, f"unknown district code {h.district_code!r}")
    for name, allowed in (("sector", SECTORS), ("agency", AGENCIES), ("subsample", SUBSAMPLES)):
        if getattr(h, name) not in allowed:
            yield Violation("enum", h.hh_id, f"{name} {getattr(h, name)!r} not in {list(allowed)}")


def _check_episode(e, household_ids) -> Iterable[Violation]:
    if e.hh_id not in household_ids:
        yield Violation("referential", e.episode_id, f"hh_id {e.hh_id!r} has no household")
    for name, allowed in (
        ("care_type", CARE_TYPES),
        ("facility", FACILITIES),
        ("patient_sex", SEXES),
        ("social_group", SOCIAL_GROUPS),
        ("religion", RELIGIONS),
    ):
        if getattr(e, name) not in allowed:
            yield Violation("enum", e.episode_id, f"{name} {getattr(e, name)!r} not in {list(allowed)}")
    expected = COMPONENTS.get(e.care_type)
    if expected is not None and set(e.cost_components) != set(expected):
        yield Violation(
            "components",
            e.episode_id,
            f"components {sorted(e.cost_components)} do not match {e.care_type} schema",
        )
    for name, value in e.cost_components.items():
        if not value >= 0:
            yield Violation("range", e.episode_id, f"component {name} {value!r} must be >= 0")
    if not e.multiplier > 0:
        yield Violation("range", e.episode_id, f"multiplier {e.multiplier!r} must be > 0")


def validate_dataset(dataset: SurveyDataset) -> ValidationReport:
    """Every invariant violation in ``dataset``; an empty report is valid."""
    out: list[Violation] = []
    counts: dict[str, int] = {}
    for h in dataset.households:
        counts[h.hh_id] = counts.get(h.hh_id, 0) + 1
        out.extend(_check_household(h))
    for hh_id, n in counts.items():
        if n > 1:
            out.append(Violation("duplicate", hh_id, f"hh_id appears {n} times"))
    ep_seen: set[str] = set()
    for e in dataset.episodes:
        if e.episode_id in ep_seen:
            out.append(Violation("duplicate", e.episode_id, "episode_id repeated"))
        ep_seen.add(e.episode_id)
        out.extend(_check_episode(e, counts))
    return ValidationReport(tuple(out))


def concat(datasets: Sequence[SurveyDataset], label=""):
    hh = [h for d in datasets for h in d.households]
    eps = [e for d in datasets for e in d.episodes]
    return SurveyDataset(hh, eps, label)
