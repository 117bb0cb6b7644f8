"""Weighted Gini coefficient and its between/within/overlap decomposition.

The Gini is half the relative mean absolute difference under frequency
weights::

    G = sum_i sum_j p_i p_j |y_i - y_j| / (2 mu),   p_i = w_i / sum(w)

and is evaluated through the sorted form ``G = (2/mu) sum_i p_i y_i F_i - 1``
with ``F_i`` the midpoint cumulative population share.

For a partition into groups with population shares ``p_k``, value shares
``s_k``, means ``mu_k`` and Ginis ``G_k``, the within part is
``sum_k p_k s_k G_k``, the between part is the Gini of the distribution in
which each value is replaced by its group mean, and the overlap is what
remains. In the signed two-group mode the between part carries the sign of
``mu_ref - mu_other``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_consistent_length, check_is_fitted, column_or_1d

from .data_model import DEFAULT_GROUPINGS, STATE_NAME, GroupingSpec, SurveyDataset, district_name
from .estimation import Z90, Z99, episode_frame
from .exceptions import EmptyCategory, NotBinary, ZeroMean

OVERLAP_CLIP = 1e-12
LOW_N = 10


class Mode(str, enum.Enum):
    SIGNED = "signed"
    STRICT = "strict"


def _as_mode(mode):
    aliases = {"signedtwogroup": Mode.SIGNED, "strictpyatt": Mode.STRICT}
    if isinstance(mode, Mode):
        return mode
    key = str(mode).lower()
    return aliases.get(key) or Mode(key)


def _check(values, weights):
    y = column_or_1d(np.asarray(values, dtype=float))
    if weights is None:
        w = np.ones_like(y)
    else:
        w = column_or_1d(np.asarray(weights, dtype=float))
        check_consistent_length(y, w)
    if len(y) == 0:
        raise ZeroMean("no values")
    if np.any(y < 0):
        raise ValueError("values must be non-negative")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return y, w


def weighted_gini(values, weights=None) -> float:
    """Gini coefficient of non-negative ``values`` under frequency ``weights``.

    Raises
    ------
    ZeroMean
        If the weighted mean is zero.
    ValueError
        On negative values or non-positive weights.
    """
    y, w = _check(values, weights)
    return _gini_sorted(y, w)


def _gini_sorted(y, w):
    if y.min() == y.max():
        if not y[0] > 0:
            raise ZeroMean("weighted mean is zero")
        return 0.0
    order = np.argsort(y, kind="mergesort")
    y = y[order]
    p = w[order] / w.sum()
    mu = float(p @ y)
    if not mu > 0:
        raise ZeroMean("weighted mean is zero")
    F = np.cumsum(p) - p / 2.0
    return max(0.0, float(2.0 / mu * np.dot(p * y, F) - 1.0))


def pairwise_gini(values, weights=None, block=1024) -> float:
    """Direct double-sum Gini, O(n^2); reference for :func:`weighted_gini`."""
    y, w = _check(values, weights)
    p = w / w.sum()
    mu = float(p @ y)
    if not mu > 0:
        raise ZeroMean("weighted mean is zero")
    acc = 0.0
    for start in range(0, len(y), block):
        stop = start + block
        diff = np.abs(y[start:stop, None] - y[None, :])
        acc += float(p[start:stop] @ diff @ p)
    return acc / (2.0 * mu)


@dataclass(frozen=True)
class GroupSummary:
    label: str
    pop_share: float
    value_share: float
    mean: float
    gini: float
    n: int


@dataclass(frozen=True)
class GiniDecomposition:
    total: float
    between: float
    within: float
    overlap: float
    mode: Mode
    groups: tuple = field(default_factory=tuple)
    reference: str | None = None

    @property
    def shares(self):
        """Each component as a percentage of the total Gini."""
        if self.total == 0:
            return {"between": math.nan, "within": math.nan, "overlap": math.nan}
        return {
            "between": 100.0 * self.between / self.total,
            "within": 100.0 * self.within / self.total,
            "overlap": 100.0 * self.overlap / self.total,
        }

    def format_row(self, name):
        s = self.shares
        return (
            f"{name} {self.total:.3f} | between {self.between:.3f} ({s['between']:.1f})"
            f" | within {self.within:.3f} ({s['within']:.1f})"
        )


def _group_summaries(y, w, labels, categories):
    total_w = w.sum()
    mu = float(w @ y) / total_w
    out = []
    for cat in categories:
        mask = labels == cat
        n = int(mask.sum())
        if n == 0:
            raise EmptyCategory(f"category {cat!r} has no records")
        yk, wk = y[mask], w[mask]
        pk = float(wk.sum() / total_w)
        muk = float(wk @ yk) / float(wk.sum())
        gk = _gini_sorted(yk, wk) if muk > 0 else 0.0
        out.append(GroupSummary(str(cat), pk, pk * muk / mu, muk, gk, n))
    return mu, out


def decompose(values, weights, groups, grouping: GroupingSpec | None = None, mode="strict"):
    """Split the weighted Gini of ``values`` by the categories in ``groups``.

    Parameters
    ----------
    values, weights : array-like
        Non-negative values and positive frequency weights.
    groups : array-like
        Raw category code of each record. ``grouping.merge_rules`` is applied
        first; every merged label must be one of ``grouping.categories``.
    grouping : GroupingSpec, optional
        Defaults to the sorted distinct labels, first one as reference.
    mode : {"strict", "signed"}
        ``"signed"`` needs exactly two categories.

    Returns
    -------
    GiniDecomposition
    """
    mode = _as_mode(mode)
    y, w = _check(values, weights)
    raw = np.asarray(groups, dtype=object)
    check_consistent_length(y, raw)
    if grouping is None:
        cats = tuple(sorted({str(g) for g in raw}))
        grouping = GroupingSpec("group", "group", cats)
        labels = np.array([str(g) for g in raw], dtype=object)
    else:
        labels = grouping.labels(raw)
    unknown = set(labels) - set(grouping.categories)
    if unknown:
        raise ValueError(f"labels {sorted(map(str, unknown))} are not categories of {grouping.name!r}")
    cats = grouping.categories
    if mode is Mode.SIGNED and len(cats) != 2:
        raise NotBinary(f"signed mode needs 2 categories, {grouping.name!r} has {len(cats)}")
    if len(cats) < 2:
        raise EmptyCategory("decomposition needs at least two categories")

    total = _gini_sorted(y, w)
    mu, summaries = _group_summaries(y, w, labels, cats)
    within = math.fsum(g.pop_share * g.value_share * g.gini for g in summaries)
    means = np.array([g.mean for g in summaries])
    pops = np.array([g.pop_share for g in summaries])
    if mode is Mode.STRICT:
        between = float(np.abs(means[:, None] - means[None, :]).dot(pops) @ pops) / (2.0 * mu)
        overlap = total - within - between
        if -OVERLAP_CLIP < overlap < 0:
            overlap = 0.0
    else:
        ref = cats.index(grouping.reference)
        other = 1 - ref
        gap = means[ref] - means[other]
        between = math.copysign(pops[0] * pops[1] * abs(gap) / mu, gap) if gap else 0.0
        overlap = total - within - between
    return GiniDecomposition(total, between, within, overlap, mode, tuple(summaries), grouping.reference)


class GiniDecomposer(BaseEstimator):
    """Estimator front end for :func:`decompose`.

    ``fit(y, groups, sample_weight)`` stores the decomposition in
    ``decomposition_`` and the components as ``total_``, ``between_``,
    ``within_`` and ``overlap_``.
    """

    def __init__(self, mode="strict", categories=None, reference=None, merge_rules=None):
        self.mode = mode
        self.categories = categories
        self.reference = reference
        self.merge_rules = merge_rules

    def fit(self, y, groups, sample_weight=None):
        grouping = None
        if self.categories is not None:
            grouping = GroupingSpec(
                "group", "group", tuple(self.categories), self.reference, self.merge_rules or {}
            )
        elif self.reference is not None or self.merge_rules:
            merged = [(self.merge_rules or {}).get(g, g) for g in np.asarray(groups, dtype=object)]
            cats = sorted(set(map(str, merged)))
            if self.reference is not None:
                cats.remove(self.reference)
                cats.insert(0, self.reference)
            grouping = GroupingSpec("group", "group", tuple(cats), self.reference, self.merge_rules or {})
        d = decompose(y, sample_weight, groups, grouping, self.mode)
        self.decomposition_ = d
        self.total_ = d.total
        self.between_ = d.between
        self.within_ = d.within
        self.overlap_ = d.overlap
        return self

    @property
    def shares_(self):
        check_is_fitted(self, "decomposition_")
        return self.decomposition_.shares


# -- district table ----------------------------------------------------------

VALUE_SELECTORS = {
    "oop_private_inpatient": lambda f: (f["care_type"].to_numpy() == "Inpatient")
    & (f["facility"].to_numpy() == "Private"),
    "oop_inpatient": lambda f: f["care_type"].to_numpy() == "Inpatient",
    "oop_outpatient": lambda f: f["care_type"].to_numpy() == "Outpatient",
    "oop_all": lambda f: np.ones(len(f), dtype=bool),
}


def select_episodes(dataset, value="oop_private_inpatient", chronic=None) -> pd.DataFrame:
    """Episode rows entering the inequality analysis.

    ``chronic=True`` keeps only chronic-disease episodes, ``False`` only the
    others, ``None`` all of them.
    """
    try:
        selector = VALUE_SELECTORS[value]
    except KeyError:
        raise ValueError(f"unknown value selector {value!r}; choose from {sorted(VALUE_SELECTORS)}") from None
    frame = episode_frame(dataset)
    mask = selector(frame)
    if chronic is not None:
        mask &= frame["chronic"].to_numpy(bool) == bool(chronic)
    return frame[mask]


def significance_flag(value, se):
    """'***', '**' or '*' when ``|value| / se`` clears the 99/95/90% normal cut."""
    if se is None or math.isnan(se) or value == 0:
        return ""
    if se == 0:
        return "***"
    ratio = abs(value) / se
    if ratio > Z99:
        return "***"
    if ratio > 1.96:
        return "**"
    if ratio > Z90:
        return "*"
    return ""


def _decompose_frame(frame, grouping, mode):
    y = frame["total_cost"].to_numpy(float)
    w = frame["multiplier"].to_numpy(float)
    raw = frame[grouping.field].to_numpy(object)
    labels = grouping.labels(raw)
    present = [c for c in grouping.categories if np.any(labels == c)]
    if len(present) < 2:
        # a single populated category: all inequality is within
        total = weighted_gini(y, w)
        return GiniDecomposition(total, 0.0, total, 0.0, _as_mode(mode), (), grouping.reference), len(present)
    return decompose(y, w, raw, grouping, mode), len(present)


def _between_se(frame, grouping, mode):
    sub = frame["subsample"].to_numpy()
    vals = []
    for s in ("S1", "S2"):
        part = frame[sub == s]
        if len(part) < 2:
            return math.nan
        try:
            d, k = _decompose_frame(part, grouping, mode)
        except (ZeroMean, EmptyCategory):
            return math.nan
        if k < 2:
            return math.nan
        vals.append(d.between)
    return abs(vals[0] - vals[1]) / 2.0


def _row(frame, groupings, mode, code, name):
    row = {"district_code": code, "district": name, "n_episodes": len(frame), "low_n": len(frame) < LOW_N}
    try:
        row["total_gini"] = weighted_gini(frame["total_cost"].to_numpy(float), frame["multiplier"].to_numpy(float))
    except ZeroMean:
        row["total_gini"] = math.nan
    for g in groupings:
        key = g.name
        if math.isnan(row["total_gini"]):
            d, k = None, 0
        else:
            d, k = _decompose_frame(frame, g, mode)
        if d is None:
            for col in ("between", "between_pct", "within", "within_pct", "overlap", "overlap_pct"):
                row[f"{key}_{col}"] = math.nan
            row[f"{key}_between_sig"] = ""
            row[f"{key}_groups"] = k
            continue
        s = d.shares
        row[f"{key}_between"] = d.between
        row[f"{key}_between_pct"] = s["between"]
        row[f"{key}_between_sig"] = significance_flag(d.between, _between_se(frame, g, mode)) if k >= 2 else ""
        row[f"{key}_within"] = d.within
        row[f"{key}_within_pct"] = s["within"]
        row[f"{key}_overlap"] = d.overlap
        row[f"{key}_overlap_pct"] = s["overlap"]
        row[f"{key}_groups"] = k
    return row


def district_decomposition_table(
    dataset: SurveyDataset,
    value="oop_private_inpatient",
    groupings=None,
    mode="signed",
    chronic=None,
) -> pd.DataFrame:
    """Gini and its decomposition by each grouping, per district plus the state.

    One row per district (ascending code) followed by a state row with
    ``district_code = 0``. Percent columns are shares of the row's total
    Gini; ``*_between_sig`` flags the between component against its
    two-subsample standard error. Districts with fewer than 10 episodes
    are marked ``low_n``.
    """
    if groupings is None:
        groupings = list(DEFAULT_GROUPINGS.values())
    groupings = [DEFAULT_GROUPINGS[g] if isinstance(g, str) else g for g in groupings]
    frame = select_episodes(dataset, value, chronic)
    rows = []
    codes = frame["district_code"].to_numpy()
    for code in sorted(set(codes.tolist())):
        rows.append(_row(frame[codes == code], groupings, mode, int(code), district_name(int(code))))
    rows.append(_row(frame, groupings, mode, 0, STATE_NAME))
    return pd.DataFrame(rows)
