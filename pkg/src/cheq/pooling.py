"""Poolability tests for two agency samples and the pooled dataset.

Three checks compare the central and state samples on one household
variable: the Wald-Wolfowitz runs test, a chi-square test of homogeneity
over pooled-sample decile bins, and a z-test of weighted means. When the
samples pass, they are concatenated with multipliers rescaled inside each
(district, sector) stratum in proportion to each agency's sample size.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._special import chi2_sf, normal_two_sided_p
from .data_model import SurveyDataset
from .exceptions import (
    DegenerateBins,
    DuplicateId,
    NotPoolable,
    StratumMissingInOneAgency,
    TiedAcrossSources,
    TooFewObservations,
    ZeroVariance,
)

MIN_RUNS_N = 10
MIN_EXPECTED = 5.0


def runs_test(values_a, values_b):
    """Wald-Wolfowitz two-sample runs test, normal approximation.

    Values are merged and sorted; ties across the two samples are broken by
    placing ``values_a`` first, and a :class:`TiedAcrossSources` warning
    reports how many distinct values were shared.

    Returns
    -------
    (z, p) : tuple of float
        Standardised run count and two-sided p-value.
    """
    a = np.asarray(values_a, dtype=float).ravel()
    b = np.asarray(values_b, dtype=float).ravel()
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise TooFewObservations("both samples must be non-empty")
    n = n1 + n2
    if n < MIN_RUNS_N:
        raise TooFewObservations(f"runs test needs at least {MIN_RUNS_N} observations, got {n}")
    shared = np.intersect1d(a, b).size
    if shared:
        warnings.warn(
            f"{shared} value(s) occur in both samples; ties broken with the first sample first",
            TiedAcrossSources,
            stacklevel=2,
        )
    values = np.concatenate([a, b])
    source = np.concatenate([np.zeros(n1, dtype=np.int8), np.ones(n2, dtype=np.int8)])
    order = np.lexsort((source, values))
    labels = source[order]
    runs = 1 + int(np.count_nonzero(labels[1:] != labels[:-1]))
    prod = 2.0 * n1 * n2
    mean = prod / n + 1.0
    var = prod * (prod - n) / (n * n * (n - 1.0))
    z = (runs - mean) / math.sqrt(var)
    return z, normal_two_sided_p(z)


def pearson_chi2(table):
    """Pearson statistic, degrees of freedom and p-value of an r×c count table."""
    obs = np.asarray(table, dtype=float)
    n = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / n
    stat = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return stat, df, chi2_sf(stat, df)


def _rank_bins(values, n_bins):
    # bin by the share of pooled observations strictly below each value
    sorted_vals = np.sort(values)
    below = np.searchsorted(sorted_vals, values, side="left")
    return np.minimum((below * n_bins) // len(values), n_bins - 1)


def _merge_columns(counts):
    """Merge adjacent bins until every expected count reaches MIN_EXPECTED."""
    cols = [c for c in counts.T if c.sum() > 0]
    row_tot = counts.sum(axis=1)
    n = row_tot.sum()
    min_row = row_tot.min()
    while len(cols) > 1:
        totals = np.array([c.sum() for c in cols])
        if np.all(min_row * totals / n >= MIN_EXPECTED):
            break
        i = int(np.argmin(totals))
        if i == 0:
            j = 1
        elif i == len(cols) - 1:
            j = i - 1
        else:
            j = i - 1 if totals[i - 1] <= totals[i + 1] else i + 1
        lo, hi = min(i, j), max(i, j)
        cols[lo] = cols[lo] + cols[hi]
        del cols[hi]
    return np.column_stack(cols)


def chi_square_homogeneity(values_a, values_b, n_bins=10):
    """Chi-square test that two samples share one distribution.

    Observations are assigned to ``n_bins`` rank-based bins of the pooled
    sample (deciles by default). Adjacent bins are merged until every
    expected count is at least 5.

    Returns
    -------
    (stat, df, p)

    Raises
    ------
    DegenerateBins
        If all values are equal, or fewer than two bins survive merging.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    a = np.asarray(values_a, dtype=float).ravel()
    b = np.asarray(values_b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise TooFewObservations("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        raise DegenerateBins("all values are equal")
    bins = _rank_bins(pooled, n_bins)
    counts = np.zeros((2, n_bins))
    np.add.at(counts[0], bins[: len(a)], 1)
    np.add.at(counts[1], bins[len(a):], 1)
    merged = _merge_columns(counts)
    if merged.shape[1] < 2:
        raise DegenerateBins(
            f"too few observations ({len(pooled)}) for two bins with expected count >= {MIN_EXPECTED:g}"
        )
    return pearson_chi2(merged)


def _weighted_moments(x, w):
    x = np.asarray(x, dtype=float).ravel()
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float).ravel()
    if len(x) != len(w):
        raise ValueError("values and weights differ in length")
    n = len(x)
    if n < 2:
        raise TooFewObservations("each sample needs at least 2 values")
    m = float(w @ x / w.sum())
    # frequency-weighted variance rescaled to the n-1 convention
    v = float(w @ (x - m) ** 2 / w.sum()) * n / (n - 1)
    return m, v, n


def z_test_means(values_a, weights_a, values_b, weights_b):
    """Two-sample z-test of weighted means, ``(m_a - m_b) / sqrt(v_a/n_a + v_b/n_b)``.

    With equal weights this is the ordinary unweighted z-test with sample
    variances.
    """
    ma, va, na = _weighted_moments(values_a, weights_a)
    mb, vb, nb = _weighted_moments(values_b, weights_b)
    if va == 0 and vb == 0:
        raise ZeroVariance("both samples have zero variance")
    z = (ma - mb) / math.sqrt(va / na + vb / nb)
    return z, normal_two_sided_p(z)


@dataclass(frozen=True)
class PoolabilityReport:
    runs_z: float
    runs_p: float
    chi2_stat: float
    chi2_df: int
    chi2_p: float
    z_means: float
    z_means_p: float
    alpha: float = 0.05
    variable: str = "aexp"
    n_central: int = 0
    n_state: int = 0

    @property
    def poolable(self):
        return min(self.runs_p, self.chi2_p, self.z_means_p) > self.alpha

    def to_dict(self):
        d = dict(self.__dict__)
        d["poolable"] = self.poolable
        return d


def poolability(central: SurveyDataset, state: SurveyDataset, variable="aexp", alpha=0.05, n_bins=10):
    """Run all three tests on a household variable of the two samples."""
    fc, fs = central.household_frame, state.household_frame
    a = fc[variable].to_numpy(float)
    b = fs[variable].to_numpy(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TiedAcrossSources)
        rz, rp = runs_test(a, b)
    stat, df, cp = chi_square_homogeneity(a, b, n_bins)
    zz, zp = z_test_means(a, fc["multiplier"].to_numpy(float), b, fs["multiplier"].to_numpy(float))
    return PoolabilityReport(rz, rp, stat, df, cp, zz, zp, alpha, variable, len(a), len(b))


def _stratum_counts(ds):
    counts = {}
    for h in ds.households:
        key = (h.district_code, h.sector)
        counts[key] = counts.get(key, 0) + 1
    return counts


def _prefixed(ds, prefix):
    hh = [replace(h, hh_id=f"{prefix}-{h.hh_id}") for h in ds.households]
    eps = [replace(e, hh_id=f"{prefix}-{e.hh_id}", episode_id=f"{prefix}-{e.episode_id}") for e in ds.episodes]
    return SurveyDataset(hh, eps, ds.label)


def pool_datasets(central: SurveyDataset, state: SurveyDataset, report: PoolabilityReport | None = None,
                  force=False, label="pooled") -> SurveyDataset:
    """Concatenate two agency samples with stratum-proportional multipliers.

    In stratum (district, sector) with ``n_c`` central and ``n_s`` state
    households, central multipliers are scaled by ``n_c / (n_c + n_s)`` and
    state multipliers by ``n_s / (n_c + n_s)``; episodes follow their
    household. A stratum sampled by only one agency keeps scale 1 with a
    :class:`StratumMissingInOneAgency` warning. When the two samples share
    identifiers, every id is prefixed with ``C-`` or ``S-``.

    Records are ordered by district, sector, agency side and hh_id.

    Raises
    ------
    NotPoolable
        If ``report`` says the samples are not poolable and ``force`` is false.
    """
    if report is None and not force:
        raise NotPoolable("no poolability report given; pass force=True to pool anyway")
    if report is not None and not report.poolable and not force:
        raise NotPoolable(
            f"samples failed poolability at alpha={report.alpha} "
            f"(runs p={report.runs_p:.4g}, chi2 p={report.chi2_p:.4g}, z p={report.z_means_p:.4g})"
        )
    c_ids = {h.hh_id for h in central.households}
    if any(h.hh_id in c_ids for h in state.households):
        central, state = _prefixed(central, "C"), _prefixed(state, "S")
    c_ep = {e.episode_id for e in central.episodes}
    if any(e.episode_id in c_ep for e in state.episodes):
        raise DuplicateId("episode ids collide between the two samples")

    nc, ns = _stratum_counts(central), _stratum_counts(state)
    lone = sorted(set(nc) ^ set(ns))
    if lone:
        warnings.warn(
            f"{len(lone)} stratum/strata sampled by one agency only: {lone}; scale 1 kept",
            StratumMissingInOneAgency,
            stacklevel=2,
        )

    rows = []
    for side, ds, own, other in ((0, central, nc, ns), (1, state, ns, nc)):
        eps_by_hh = {}
        for e in ds.episodes:
            eps_by_hh.setdefault(e.hh_id, []).append(e)
        for h in ds.households:
            key = (h.district_code, h.sector)
            scale = own[key] / (own[key] + other.get(key, 0))
            new_h = replace(h, multiplier=h.multiplier * scale)
            new_eps = [replace(e, multiplier=e.multiplier * scale) for e in eps_by_hh.get(h.hh_id, ())]
            rows.append(((h.district_code, h.sector, side, h.hh_id), new_h, new_eps))
    rows.sort(key=lambda r: r[0])
    households = [r[1] for r in rows]
    episodes = [e for r in rows for e in r[2]]
    return SurveyDataset(households, episodes, label)
