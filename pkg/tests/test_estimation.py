import itertools
import math
import warnings
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cheq import estimation as est
from cheq.data_model import INPATIENT_COMPONENTS, OUTPATIENT_COMPONENTS, SurveyDataset
from cheq.exceptions import AllZeroCost, DegenerateDistribution, EmptyDomain, OneSubsampleEmpty, ZeroDenominator

from conftest import make_episode, make_household


# -- oracles -----------------------------------------------------------------

def frac_proportion(flags, weights):
    num = sum(Fraction(w) for f, w in zip(flags, weights) if f)
    return num / sum(Fraction(w) for w in weights)


def oracle_quintiles(per_capita, weights, levels=(Fraction(1, 5), Fraction(2, 5), Fraction(3, 5), Fraction(4, 5))):
    """Class of each record from exact cumulative shares."""
    total = sum(Fraction(w) for w in weights)
    cuts = []
    for q in levels:
        # smallest value whose share of weight at or below it reaches q
        for v in sorted(set(per_capita)):
            share = sum(Fraction(w) for x, w in zip(per_capita, weights) if x <= v) / total
            if share >= q:
                cuts.append(v)
                break
    return [1 + sum(c < x for c in cuts) for x in per_capita]


def random_households(rng, n, **kw):
    hh = []
    for i in range(n):
        size = int(rng.integers(1, 7))
        aexp = float(rng.integers(1, 60)) * 100
        oop_in = float(rng.integers(0, 25)) * 10
        oop_out = float(rng.integers(0, 25)) * 10
        hh.append(make_household(
            f"h{i}",
            district_code=int(rng.integers(1, 4)),
            sector=str(rng.choice(["Rural", "Urban"])),
            subsample=("S1", "S2")[i % 2],
            multiplier=float(rng.integers(1, 9)),
            hh_size=size,
            aexp=aexp,
            oop_inpatient=oop_in,
            oop_outpatient=oop_out,
            oop_total=oop_in + oop_out,
            coverage=bool(rng.random() < 0.3),
            **kw,
        ))
    return hh


# -- che_flag / weighted_proportion -------------------------------------------

@pytest.mark.parametrize("oop,t,flag", [(15, 0.10, 1), (10, 0.10, 1), (39.9, 0.40, 0)])
def test_che_flag_examples(oop, t, flag):
    assert est.che_flag(make_household(oop_total=oop, oop_outpatient=oop, aexp=100.0), t) == flag


def test_che_flag_zero_expenditure():
    with pytest.raises(ZeroDenominator):
        est.che_flag(make_household(aexp=0.0), 0.1)


def test_weighted_proportion_examples():
    hh = [make_household(f"h{i}") for i in range(4)]
    assert est.weighted_proportion(hh, [1, 1, 0, 0], [1, 1, 1, 1]) == 0.5
    assert est.weighted_proportion(hh[:2], [1, 0], [3, 1]) == 0.75


def test_weighted_proportion_callable_and_columns():
    hh = [make_household("a", multiplier=3.0, coverage=True, hh_size=1),
          make_household("b", multiplier=1.0, hh_size=3)]
    assert est.weighted_proportion(hh, lambda h: h.coverage) == 0.75
    assert est.weighted_proportion(hh, "coverage", "persons") == 0.5
    with pytest.raises(EmptyDomain):
        est.weighted_proportion(hh, [1, 0], [0, 0])


# -- subsample SE --------------------------------------------------------------

def test_subsample_se_formula():
    hh = ([make_household(f"a{i}", subsample="S1", coverage=i < 3) for i in range(10)]
          + [make_household(f"b{i}", subsample="S2", coverage=i < 17) for i in range(50)])
    stat = lambda part: est.weighted_proportion(part, lambda h: h.coverage)  # noqa: E731
    r = est.subsample_se(hh, stat)
    assert r.s1 == pytest.approx(0.30) and r.s2 == pytest.approx(0.34)
    assert r.se == pytest.approx(0.02, abs=1e-15)
    assert r.estimate == pytest.approx(20 / 60)


def test_subsample_se_identical_halves():
    hh = [make_household(f"h{i}{s}", subsample=s, coverage=i % 3 == 0) for i in range(9) for s in ("S1", "S2")]
    r = est.subsample_se(hh, lambda p: est.weighted_proportion(p, lambda h: h.coverage))
    assert r.se == 0.0


def test_subsample_se_empty_half_warns():
    hh = [make_household("a", subsample="S1")]
    with pytest.warns(OneSubsampleEmpty):
        r = est.subsample_se(hh, lambda p: 0.5)
    assert math.isnan(r.se)
    assert all(math.isnan(x) for x in r.ci())


@pytest.mark.slow
def test_subsample_se_monte_carlo():
    rng = np.random.default_rng(2024)
    p, n, reps = 0.25, 400, 500
    true_var = p * (1 - p) / n
    se2 = []
    for _ in range(reps):
        flags = rng.random(n) < p
        halves = rng.permutation(np.repeat(["S1", "S2"], n // 2))
        frame = pd.DataFrame({"flag": flags, "multiplier": 1.0, "subsample": halves})
        r = est.subsample_se(frame, lambda f: est.weighted_proportion(f, "flag"))
        se2.append(r.se**2)
    assert abs(np.mean(se2) / true_var - 1) < 0.25


# -- CHE incidence ----------------------------------------------------------

def test_che_incidence_excludes_zero_expenditure():
    hh = [make_household("a", aexp=100.0, oop_total=20.0, oop_outpatient=20.0, multiplier=2.0),
          make_household("b", aexp=100.0, multiplier=2.0, subsample="S2"),
          make_household("c", aexp=0.0, oop_total=5.0, oop_outpatient=5.0)]
    e = est.che_incidence(hh, 0.1)
    assert e.incidence == 0.5 and e.excluded == 1 and e.n == 2
    assert e.se == 0.5
    assert e.ci99 == (0.0, 1.0)


def test_che_incidence_domain_and_errors(tiny_dataset):
    assert est.che_incidence(tiny_dataset, 0.1, domain={"subsample": "S1"}).incidence == 1.0
    assert est.che_incidence(tiny_dataset, 0.1, domain={"district_code": 1}).domain == "district_code=1"
    with pytest.raises(EmptyDomain):
        est.che_incidence(tiny_dataset, 0.1, domain={"district_code": 9})
    with pytest.raises(ValueError):
        est.che_incidence(tiny_dataset, 1.0)


def test_che_enumeration_oracle():
    rng = np.random.default_rng(7)
    for _ in range(30):
        hh = random_households(rng, int(rng.integers(2, 21)))
        for t in (0.05, 0.1, 0.2, 0.4):
            flags = [Fraction(h.oop_total) / Fraction(h.aexp) >= Fraction(t).limit_denominator(100) for h in hh]
            exact = frac_proportion(flags, [h.multiplier for h in hh])
            assert est.che_incidence(hh, t).incidence == pytest.approx(float(exact), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1000))
def test_che_scale_invariance_and_monotonicity(seed, c):
    hh = random_households(np.random.default_rng(seed), 15)
    base = [est.che_incidence(hh, t).incidence for t in (0.1, 0.2, 0.4)]
    assert base[0] >= base[1] >= base[2]
    scaled = SurveyDataset(hh).with_multipliers(c)
    for t, b in zip((0.1, 0.2, 0.4), base):
        assert abs(est.che_incidence(scaled, t).incidence - b) <= 1e-12


def test_che_by_district_order(small_synth):
    central, _, _ = small_synth
    out = est.che_by_district(central, (0.1, 0.4))
    assert [e.domain for e in out][:2] == ["district_code=1"] * 2
    assert len(out) == 6
    assert all(a.incidence >= b.incidence for a, b in zip(out[::2], out[1::2]))


# -- quintiles -------------------------------------------------------------

def test_quintiles_five_distinct_households():
    hh = [make_household(f"h{i}", aexp=10.0 * (i + 1)) for i in range(5)]
    cuts = est.quintile_cuts(hh)
    assert [est.assign_quintile(h, cuts) for h in hh] == [1, 2, 3, 4, 5]


def test_quintiles_all_equal_warns():
    hh = [make_household(f"h{i}", aexp=50.0) for i in range(6)]
    with pytest.warns(DegenerateDistribution):
        cuts = est.quintile_cuts(hh)
    assert list(est.assign_quintiles(hh, cuts)) == [1] * 6


def test_quintile_tie_goes_to_lower_class():
    cuts = est.QuintileCuts((1.0, 2.0, 3.0, 4.0))
    assert list(cuts.assign([1.0, 1.5, 4.0, 4.5])) == [1, 2, 4, 5]


def test_quintile_enumeration_oracle():
    rng = np.random.default_rng(3)
    for _ in range(40):
        hh = random_households(rng, int(rng.integers(5, 21)))
        pc = [Fraction(h.aexp) / h.hh_size for h in hh]
        pw = [int(h.multiplier) * h.hh_size for h in hh]
        expected = oracle_quintiles(pc, pw)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDistribution)
            got = list(est.assign_quintiles(hh, est.quintile_cuts(hh)))
        assert got == expected


def test_household_weighted_basis():
    hh = [make_household(f"h{i}", aexp=10.0 * (i + 1), hh_size=1 if i else 20) for i in range(5)]
    assert est.quintile_cuts(hh, "HouseholdWeighted").basis == "HouseholdWeighted"
    with pytest.raises(ValueError):
        est.quintile_cuts(hh, "Persons")


@pytest.mark.slow
def test_quintile_shares_monte_carlo():
    rng = np.random.default_rng(99)
    n = 10_000
    x = rng.lognormal(8, 0.7, n)
    w = rng.integers(1, 50, n).astype(float)
    q = est.QuintileClassifier().fit(x, sample_weight=w)
    classes = q.predict(x)
    shares = np.array([w[classes == k].sum() for k in range(1, 6)]) / w.sum()
    assert np.all(np.abs(shares - 0.2) < 0.005)


def test_che_by_quintile_independent_ratio():
    rng = np.random.default_rng(12)
    n = 20_000
    aexp = rng.lognormal(11, 0.6, n)
    ratio = rng.beta(1.2, 6, n)
    frame = pd.DataFrame({
        "aexp": aexp, "oop_total": ratio * aexp, "multiplier": 1.0, "hh_size": 1,
        "subsample": np.where(np.arange(n) % 2, "S1", "S2"),
    })
    inc = [e.incidence for e in est.che_by_quintile(frame, 0.1)]
    assert max(inc) - min(inc) < 0.03


def test_che_by_quintile_hand_oracle():
    rng = np.random.default_rng(8)
    hh = random_households(rng, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDistribution)
        estimates = est.che_by_quintile(hh, 0.1)
    classes = oracle_quintiles([Fraction(h.aexp) / h.hh_size for h in hh], [int(h.multiplier) * h.hh_size for h in hh])
    for k, e in enumerate(estimates, 1):
        members = [h for h, c in zip(hh, classes) if c == k]
        if not members:
            assert math.isnan(e.incidence)
            continue
        exact = frac_proportion([Fraction(h.oop_total) / Fraction(h.aexp) >= Fraction(1, 10) for h in members],
                                [h.multiplier for h in members])
        assert e.incidence == pytest.approx(float(exact), abs=1e-15)


def test_quintile_table_shape(small_synth):
    central, _, _ = small_synth
    table = est.che_quintile_table(central, (0.1,))
    assert list(table.columns) == ["che_10pct"]
    assert list(table.index) == [1, 2, 3, 4, 5]


# -- coverage and components ---------------------------------------------------

def test_coverage_examples():
    hh = [make_household(f"h{i}", coverage=True) for i in range(3)]
    assert est.coverage_rate(hh).rate == 1.0
    hh = [make_household("a", multiplier=9.0), make_household("b", multiplier=1.0, coverage=True)]
    assert est.coverage_rate(hh).rate == pytest.approx(0.1, abs=1e-15)


def test_coverage_is_person_weighted():
    hh = [make_household("a", multiplier=1.0, hh_size=4, coverage=True), make_household("b", multiplier=1.0)]
    assert est.coverage_rate(hh).rate == 0.8


def test_component_share_examples():
    single = [make_episode(costs={"medicines_other": 50.0})]
    shares = est.component_shares(single, "Outpatient")
    assert shares["medicines_other"] == 1.0
    assert sum(v for k, v in shares.items() if k != "medicines_other") == 0.0
    two = [make_episode("e1", costs={"medicines_other": 100.0}), make_episode("e2", costs={"doctor_fee": 100.0})]
    shares = est.component_shares(two, "Outpatient")
    assert shares["medicines_other"] == 0.5 and shares["doctor_fee"] == 0.5


def test_component_shares_enumeration_oracle():
    rng = np.random.default_rng(6)
    for trial in range(20):
        care = ("Inpatient", "Outpatient")[trial % 2]
        names = INPATIENT_COMPONENTS if care == "Inpatient" else OUTPATIENT_COMPONENTS
        eps = []
        for i in range(6 if trial == 0 else int(rng.integers(1, 21))):
            costs = {n: float(rng.integers(0, 500)) for n in names}
            costs[names[0]] += 1.0
            eps.append(make_episode(f"e{i}", care_type=care, costs=costs, multiplier=float(rng.integers(1, 30))))
        shares = est.component_shares(eps, care)
        denom = sum(Fraction(e.multiplier) * Fraction(e.cost_components[n]) for e in eps for n in names)
        for n in names:
            exact = sum(Fraction(e.multiplier) * Fraction(e.cost_components[n]) for e in eps) / denom
            assert abs(shares[n] - float(exact)) <= 1e-12


def test_component_share_errors():
    with pytest.raises(EmptyDomain):
        est.component_shares([make_episode()], "Inpatient")
    with pytest.raises(AllZeroCost):
        est.component_shares([make_episode()], "Outpatient")
    with pytest.raises(ValueError):
        est.component_shares([make_episode()], "Dental")


def test_component_domain_filter(tiny_dataset):
    assert est.component_shares(tiny_dataset, "Outpatient", {"subsample": "S2"})["doctor_fee"] == 1.0


def test_public_delivery_share():
    eps = [make_episode("a", is_delivery=True, facility="Public", multiplier=3.0),
           make_episode("b", is_delivery=True, multiplier=1.0),
           make_episode("c", facility="Public")]
    assert est.public_delivery_share(eps) == 0.75


# -- sklearn-style estimators --------------------------------------------------

def test_estimators_follow_sklearn_conventions():
    for cls, params in ((est.QuintileClassifier, {"levels": (0.5,)}), (est.CheIncidenceEstimator, {"thresholds": (0.2,)})):
        e = cls(**params)
        assert e.get_params() == params
        c = clone(e)
        assert c.get_params() == params and c is not e
        with pytest.raises(NotFittedError):
            e.transform(np.ones((3, 2)))


def test_che_estimator_matches_function(tiny_dataset):
    f = tiny_dataset.household_frame
    X = f[["oop_total", "aexp"]].to_numpy()
    m = est.CheIncidenceEstimator((0.06, 0.1)).fit(X, sample_weight=f["multiplier"])
    assert list(m.incidence_) == [est.che_incidence(tiny_dataset, t).incidence for t in (0.06, 0.1)]
    flags = m.transform(np.array([[10.0, 100.0], [1.0, 0.0]]))
    assert flags[0].tolist() == [1.0, 1.0] and np.isnan(flags[1]).all()
    with pytest.raises(ValueError):
        est.CheIncidenceEstimator().fit(np.ones((3, 3)))


def test_quintile_classifier_matches_function(small_synth):
    central, _, _ = small_synth
    f = central.household_frame
    pc = (f["aexp"] / f["hh_size"]).to_numpy()
    q = est.QuintileClassifier().fit(pc, sample_weight=f["multiplier"] * f["hh_size"])
    assert tuple(q.cuts_) == est.quintile_cuts(central).cuts
    assert (q.predict(pc) == est.assign_quintiles(central, est.quintile_cuts(central))).all()
    assert q.fit_transform(pc).shape == (len(pc), 1)


def test_weighted_quantile_small():
    assert list(est.weighted_quantile([3, 1, 2], [1, 1, 2], [0.25, 0.5, 0.75, 1.0])) == [1, 2, 2, 3]
    # exact boundary on a running sum with rounding error
    vals = np.arange(10.0)
    assert est.weighted_quantile(vals, np.full(10, 0.1), [0.3])[0] == 2.0
    with pytest.raises(EmptyDomain):
        est.weighted_quantile([1.0], [0.0], [0.5])


def test_exhaustive_domains_small():
    # every subset of 6 households: incidence equals the exact proportion
    base = random_households(np.random.default_rng(1), 6)
    for r in range(1, 7):
        for combo in itertools.combinations(base, r):
            exact = frac_proportion([Fraction(h.oop_total) >= Fraction(h.aexp) / 5 for h in combo],
                                    [h.multiplier for h in combo])
            assert est.che_incidence(list(combo), 0.2).incidence == pytest.approx(float(exact), abs=1e-15)
