"""Survey-weighted estimators.

Households are weighted by ``multiplier`` when the unit of analysis is the
household (CHE incidence) and by ``multiplier * hh_size`` when it is the
person (coverage, expenditure quintiles). Standard errors come from the two
interpenetrating subsamples: ``se = |y(S1) - y(S2)| / 2``.

Every function accepts a :class:`~cheq.data_model.SurveyDataset`, a sequence
of records, or the corresponding pandas frame.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._special import Z_CRITICAL
from .data_model import (
    ALL_COMPONENTS,
    COMPONENTS,
    EpisodeRecord,
    HouseholdRecord,
    SurveyDataset,
)
from .exceptions import (
    AllZeroCost,
    DegenerateDistribution,
    EmptyDomain,
    OneSubsampleEmpty,
    ZeroDenominator,
)

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.4)
QUINTILE_LEVELS = (0.2, 0.4, 0.6, 0.8)
Z99 = Z_CRITICAL[0.99]
Z90 = Z_CRITICAL[0.90]


# -- input coercion ----------------------------------------------------------

def household_frame(obj) -> pd.DataFrame:
    if isinstance(obj, SurveyDataset):
        return obj.household_frame
    if isinstance(obj, pd.DataFrame):
        return obj
    records = list(obj)
    if records and not isinstance(records[0], HouseholdRecord):
        raise TypeError(f"expected HouseholdRecord, got {type(records[0]).__name__}")
    return SurveyDataset(records).household_frame if records else pd.DataFrame()


def episode_frame(obj) -> pd.DataFrame:
    """Episode columns; records without a dataset are not joined to households."""
    if isinstance(obj, SurveyDataset):
        return obj.episode_frame
    if isinstance(obj, pd.DataFrame):
        return obj
    eps = list(obj)
    if eps and not isinstance(eps[0], EpisodeRecord):
        raise TypeError(f"expected EpisodeRecord, got {type(eps[0]).__name__}")
    cols = {
        "episode_id": [e.episode_id for e in eps],
        "hh_id": [e.hh_id for e in eps],
        "care_type": [e.care_type for e in eps],
        "facility": [e.facility for e in eps],
        "patient_sex": [e.patient_sex for e in eps],
        "social_group": [e.social_group for e in eps],
        "religion": [e.religion for e in eps],
        "chronic": [e.chronic for e in eps],
        "is_delivery": [e.is_delivery for e in eps],
        "multiplier": np.array([e.multiplier for e in eps], dtype=float),
    }
    for name in ALL_COMPONENTS:
        cols[name] = np.array([e.cost_components.get(name, 0.0) for e in eps], dtype=float)
    frame = pd.DataFrame(cols)
    frame["total_cost"] = frame[list(ALL_COMPONENTS)].sum(axis=1)
    return frame


def restrict(frame: pd.DataFrame, domain: Mapping | None) -> pd.DataFrame:
    """Rows of ``frame`` whose columns equal every ``domain`` item."""
    if not domain:
        return frame
    mask = np.ones(len(frame), dtype=bool)
    for key, value in domain.items():
        mask &= (frame[key] == value).to_numpy()
    return frame[mask]


def describe_domain(domain: Mapping | None) -> str:
    if not domain:
        return "all"
    return ",".join(f"{k}={v}" for k, v in domain.items())


# -- weighted proportions ----------------------------------------------------

def _proportion(flags, weights):
    w = np.asarray(weights, dtype=float)
    f = np.asarray(flags, dtype=bool)
    if w.shape != f.shape:
        raise ValueError("indicator and weights differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise EmptyDomain("no record with positive weight")
    return float(w[f].sum() / total)


def _column(records, spec, frame_fn):
    if callable(spec) and not isinstance(spec, str):
        if isinstance(records, pd.DataFrame):
            raise TypeError("callables need records, not a frame")
        return np.array([spec(r) for r in records])
    if isinstance(spec, str):
        if isinstance(records, pd.DataFrame):
            frame = records
        else:
            frame = frame_fn(records)
        if spec == "persons":
            return frame["multiplier"].to_numpy(float) * frame["hh_size"].to_numpy(float)
        return frame[spec].to_numpy()
    return np.asarray(spec)


def weighted_proportion(records, indicator, weight="multiplier") -> float:
    """Weighted share of records whose indicator is true.

    Parameters
    ----------
    records : SurveyDataset, sequence of records or DataFrame
    indicator : callable, column name or array-like
        Callables receive one record; with a frame, pass a column name or
        an array instead.
    weight : str, callable or array-like
        ``"multiplier"`` for household weighting, ``"persons"`` for
        ``multiplier * hh_size``, any other column name, or explicit weights.
    """
    if isinstance(records, SurveyDataset):
        items = records.households
        frame_fn = lambda _: records.household_frame  # noqa: E731
    else:
        items = records if isinstance(records, pd.DataFrame) else list(records)
        if not isinstance(items, pd.DataFrame) and items and isinstance(items[0], EpisodeRecord):
            frame_fn = episode_frame
        else:
            frame_fn = household_frame
    flags = _column(items, indicator, frame_fn)
    weights = _column(items, weight, frame_fn)
    return _proportion(flags, weights)


# -- interpenetrating subsamples ---------------------------------------------

@dataclass(frozen=True)
class SubsampleEstimate:
    estimate: float
    se: float
    s1: float
    s2: float

    def ci(self, z=Z99):
        if math.isnan(self.se):
            return (math.nan, math.nan)
        return (self.estimate - z * self.se, self.estimate + z * self.se)


def _split(data):
    if isinstance(data, pd.DataFrame):
        sub = data["subsample"].to_numpy()
        return data[sub == "S1"], data[sub == "S2"]
    if isinstance(data, SurveyDataset):
        sub = data.household_frame["subsample"].to_numpy()
        parts = []
        for s in ("S1", "S2"):
            mask = sub == s
            parts.append(data.subset(mask) if mask.any() else None)
        return tuple(parts)
    items = list(data)
    return (
        [r for r in items if r.subsample == "S1"],
        [r for r in items if r.subsample == "S2"],
    )


def _empty(part):
    return part is None or len(part) == 0


def subsample_se(households, statistic: Callable) -> SubsampleEstimate:
    """Full-sample estimate with the two-subsample standard error.

    ``statistic`` is called on ``households`` and on its S1 and S2 parts
    (same type as the input). When a subsample is empty, or the statistic
    is undefined on it, ``se`` is NaN rather than zero.
    """
    estimate = statistic(households)
    s1, s2 = _split(households)
    if _empty(s1) or _empty(s2):
        warnings.warn("one interpenetrating subsample is empty; se is missing", OneSubsampleEmpty, stacklevel=2)
        return SubsampleEstimate(estimate, math.nan, math.nan, math.nan)
    try:
        y1 = statistic(s1)
        y2 = statistic(s2)
    except EmptyDomain:
        return SubsampleEstimate(estimate, math.nan, math.nan, math.nan)
    return SubsampleEstimate(estimate, abs(y1 - y2) / 2.0, y1, y2)


def _quiet_subsample_se(data, statistic):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OneSubsampleEmpty)
        return subsample_se(data, statistic)


def _clip_ci(value, se, z=Z99, lo=0.0, hi=1.0):
    if math.isnan(se):
        return (math.nan, math.nan)
    return (max(lo, value - z * se), min(hi, value + z * se))


# -- catastrophic health expenditure -----------------------------------------

def che_flag(h: HouseholdRecord, t: float) -> int:
    """1 when out-of-pocket spending is at least ``t`` of total expenditure."""
    if not h.aexp > 0:
        raise ZeroDenominator(f"household {h.hh_id!r} has zero annual expenditure")
    return int(h.oop_total / h.aexp >= t)


def che_flags(oop, aexp, t):
    """Vectorised flags plus the mask of households with a defined ratio."""
    oop = np.asarray(oop, dtype=float)
    aexp = np.asarray(aexp, dtype=float)
    valid = aexp > 0
    flags = np.zeros(len(oop), dtype=bool)
    flags[valid] = oop[valid] / aexp[valid] >= t
    return flags, valid


def _check_threshold(t):
    if not 0 < t < 1:
        raise ValueError(f"threshold must be in (0, 1), got {t}")


def _incidence(frame, t):
    flags, valid = che_flags(frame["oop_total"].to_numpy(), frame["aexp"].to_numpy(), t)
    return _proportion(flags[valid], frame["multiplier"].to_numpy(float)[valid])


@dataclass(frozen=True)
class CheEstimate:
    threshold: float
    domain: str
    incidence: float
    se: float
    ci99: tuple
    n: int
    excluded: int = 0

    def to_dict(self):
        return dict(
            threshold=self.threshold,
            domain=self.domain,
            incidence=self.incidence,
            se=self.se,
            ci99_lo=self.ci99[0],
            ci99_hi=self.ci99[1],
            n=self.n,
            excluded=self.excluded,
        )


def che_incidence(households, t, domain=None, label=None) -> CheEstimate:
    """Household-weighted CHE incidence at threshold ``t`` within ``domain``.

    Households with ``aexp == 0`` are left out and counted in ``excluded``.
    """
    _check_threshold(t)
    frame = restrict(household_frame(households), domain)
    if frame.empty:
        raise EmptyDomain(f"no households in domain {describe_domain(domain)}")
    excluded = int((frame["aexp"].to_numpy() <= 0).sum())
    est = _quiet_subsample_se(frame, lambda f: _incidence(f, t))
    return CheEstimate(
        threshold=t,
        domain=label or describe_domain(domain),
        incidence=est.estimate,
        se=est.se,
        ci99=_clip_ci(est.estimate, est.se),
        n=len(frame) - excluded,
        excluded=excluded,
    )


def che_by_district(households, thresholds=DEFAULT_THRESHOLDS):
    """CHE estimates for every district present, ordered by district code."""
    frame = household_frame(households)
    out = []
    for code in sorted(frame["district_code"].unique()):
        part = frame[frame["district_code"].to_numpy() == code]
        for t in thresholds:
            out.append(che_incidence(part, t, label=f"district_code={code}"))
    return out


# -- expenditure quintiles ---------------------------------------------------

def weighted_quantile(values, weights, q):
    """Inverse weighted CDF: the smallest value whose cumulative share reaches ``q``."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="mergesort")
    v, w = v[order], w[order]
    cum = np.cumsum(w)
    total = cum[-1]
    if not total > 0:
        raise EmptyDomain("no positive weight")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    # relative slack absorbs rounding in the running sum
    idx = np.searchsorted(cum, q * total * (1 - 1e-12), side="left")
    return v[np.minimum(idx, len(v) - 1)]


@dataclass(frozen=True)
class QuintileCuts:
    cuts: tuple
    basis: str = "PersonWeighted"

    def assign(self, per_capita):
        """Class 1..5; a value equal to a cut point falls in the lower class."""
        return np.searchsorted(np.asarray(self.cuts), np.asarray(per_capita, dtype=float), side="left") + 1


def _per_capita(frame):
    return frame["aexp"].to_numpy(float) / frame["hh_size"].to_numpy(float)


def quintile_cuts(households, basis="PersonWeighted") -> QuintileCuts:
    """Cut points of per-capita expenditure at the 20/40/60/80% levels.

    Person weighting uses ``multiplier * hh_size``; household weighting uses
    ``multiplier`` alone.
    """
    frame = household_frame(households)
    w = frame["multiplier"].to_numpy(float)
    if basis == "PersonWeighted":
        w = w * frame["hh_size"].to_numpy(float)
    elif basis != "HouseholdWeighted":
        raise ValueError(f"unknown basis {basis!r}")
    if int((w > 0).sum()) < 5:
        raise EmptyDomain("quintiles need at least 5 households with positive weight")
    pc = _per_capita(frame)
    cuts = weighted_quantile(pc, w, QUINTILE_LEVELS)
    if np.all(pc == pc[0]):
        warnings.warn("all per-capita expenditures are equal; every household is class 1",
                      DegenerateDistribution, stacklevel=2)
    elif np.any(np.diff(cuts) <= 0):
        warnings.warn(f"tied quintile cut points {cuts.tolist()}; some classes are empty",
                      DegenerateDistribution, stacklevel=2)
    return QuintileCuts(tuple(float(c) for c in cuts), basis)


def assign_quintile(h: HouseholdRecord, cuts: QuintileCuts) -> int:
    return int(cuts.assign([h.aexp / h.hh_size])[0])


def assign_quintiles(households, cuts: QuintileCuts):
    return cuts.assign(_per_capita(household_frame(households)))


def che_by_quintile(households, t, cuts: QuintileCuts | None = None):
    """Five CHE estimates, poorest (class 1) to richest (class 5)."""
    frame = household_frame(households)
    if cuts is None:
        cuts = quintile_cuts(frame)
    classes = cuts.assign(_per_capita(frame))
    out = []
    for k in range(1, 6):
        part = frame[classes == k]
        if part.empty:
            out.append(CheEstimate(t, f"quintile={k}", math.nan, math.nan, (math.nan, math.nan), 0))
            continue
        out.append(che_incidence(part, t, label=f"quintile={k}"))
    return out


def che_quintile_table(households, thresholds=DEFAULT_THRESHOLDS, cuts=None) -> pd.DataFrame:
    """Incidence (%) with rows = expenditure classes 1..5 and one column per threshold."""
    frame = household_frame(households)
    cuts = cuts or quintile_cuts(frame)
    table = {}
    for t in thresholds:
        table[_threshold_label(t)] = [100 * e.incidence for e in che_by_quintile(frame, t, cuts)]
    out = pd.DataFrame(table, index=pd.Index(range(1, 6), name="mpce_class"))
    return out


def _threshold_label(t):
    return f"che_{round(100 * t):g}pct"


# -- coverage and episode shares ---------------------------------------------

@dataclass(frozen=True)
class CoverageEstimate:
    domain: str
    rate: float
    se: float
    ci99: tuple
    n: int

    def to_dict(self):
        return dict(domain=self.domain, rate=self.rate, se=self.se,
                    ci99_lo=self.ci99[0], ci99_hi=self.ci99[1], n=self.n)


def _coverage(frame):
    w = frame["multiplier"].to_numpy(float) * frame["hh_size"].to_numpy(float)
    return _proportion(frame["coverage"].to_numpy(bool), w)


def coverage_rate(households, domain=None, label=None) -> CoverageEstimate:
    """Person-weighted share of people in households with health coverage."""
    frame = restrict(household_frame(households), domain)
    if frame.empty:
        raise EmptyDomain(f"no households in domain {describe_domain(domain)}")
    est = _quiet_subsample_se(frame, _coverage)
    return CoverageEstimate(
        label or describe_domain(domain), est.estimate, est.se, _clip_ci(est.estimate, est.se), len(frame)
    )


def coverage_by_district(households):
    frame = household_frame(households)
    return [
        coverage_rate(frame[frame["district_code"].to_numpy() == code], label=f"district_code={code}")
        for code in sorted(frame["district_code"].unique())
    ]


def component_shares(episodes, care_type, domain=None):
    """Share of weighted spending going to each cost component.

    ``share_c = sum(w * cost_c) / sum(w * total_cost)`` over episodes of
    ``care_type`` in ``domain``.
    """
    if care_type not in COMPONENTS:
        raise ValueError(f"unknown care type {care_type!r}")
    frame = restrict(episode_frame(episodes), domain)
    frame = frame[frame["care_type"].to_numpy() == care_type]
    if frame.empty:
        raise EmptyDomain(f"no {care_type} episodes in domain {describe_domain(domain)}")
    names = list(COMPONENTS[care_type])
    w = frame["multiplier"].to_numpy(float)
    spend = w @ frame[names].to_numpy(float)
    total = math.fsum(spend)
    if not total > 0:
        raise AllZeroCost(f"all {care_type} costs are zero in domain {describe_domain(domain)}")
    return {name: float(s / total) for name, s in zip(names, spend)}


def public_delivery_share(episodes, domain=None) -> float:
    """Episode-weighted share of childbirth episodes at public facilities."""
    frame = restrict(episode_frame(episodes), domain)
    frame = frame[frame["is_delivery"].to_numpy(bool)]
    return _proportion((frame["facility"] == "Public").to_numpy(), frame["multiplier"].to_numpy(float))


# -- estimator wrappers ------------------------------------------------------

class QuintileClassifier(TransformerMixin, BaseEstimator):
    """Expenditure classes from weighted quantile cut points.

    ``fit`` learns the four cut points of per-capita expenditure ``X`` under
    ``sample_weight`` (person weights for the usual MPCE classes);
    ``transform`` returns the class 1..5 of each row.
    """

    def __init__(self, levels=QUINTILE_LEVELS):
        self.levels = levels

    def fit(self, X, y=None, sample_weight=None):
        x = check_array(X, ensure_2d=False).reshape(-1)
        w = np.ones_like(x) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if w.shape != x.shape:
            raise ValueError("sample_weight does not match X")
        self.cuts_ = weighted_quantile(x, w, self.levels)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "cuts_")
        x = check_array(X, ensure_2d=False).reshape(-1)
        return (np.searchsorted(self.cuts_, x, side="left") + 1).reshape(-1, 1)

    def predict(self, X):
        return self.transform(X).ravel()


class CheIncidenceEstimator(BaseEstimator):
    """Weighted CHE incidence at several thresholds.

    ``X`` has two columns, out-of-pocket spending and total expenditure.
    Rows with zero expenditure are excluded and counted in
    ``n_excluded_``.
    """

    def __init__(self, thresholds=DEFAULT_THRESHOLDS):
        self.thresholds = thresholds

    def fit(self, X, y=None, sample_weight=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("X must have columns (oop, aexp)")
        if np.any(X < 0):
            raise ValueError("negative spending")
        w = np.ones(len(X)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        for t in self.thresholds:
            _check_threshold(t)
        inc = []
        for t in self.thresholds:
            flags, valid = che_flags(X[:, 0], X[:, 1], t)
            inc.append(_proportion(flags[valid], w[valid]))
        self.incidence_ = np.array(inc)
        self.n_excluded_ = int((X[:, 1] <= 0).sum())
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        """Flag matrix (rows × thresholds); NaN where expenditure is zero."""
        check_is_fitted(self, "incidence_")
        X = check_array(X)
        out = np.full((len(X), len(self.thresholds)), np.nan)
        for j, t in enumerate(self.thresholds):
            flags, valid = che_flags(X[:, 0], X[:, 1], t)
            out[valid, j] = flags[valid]
        return out
