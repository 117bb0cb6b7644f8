from pathlib import Path

import pytest

from cheq.data_model import COMPONENTS, EpisodeRecord, HouseholdRecord, SurveyDataset
from cheq.synth import SynthConfig, generate

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_CONFIG = SynthConfig(seed=20140101, districts=(1, 2), n_households=200)


def make_household(hh_id="h1", **kw):
    base = dict(
        hh_id=hh_id,
        district_code=1,
        sector="Rural",
        agency="Central",
        subsample="S1",
        stratum_id="01-R",
        multiplier=1.0,
        hh_size=1,
        aexp=100.0,
        oop_total=0.0,
        oop_inpatient=0.0,
        oop_outpatient=0.0,
        coverage=False,
    )
    base.update(kw)
    return HouseholdRecord(**base)


def make_episode(episode_id="e1", hh_id="h1", care_type="Outpatient", costs=None, **kw):
    names = COMPONENTS[care_type]
    components = {n: 0.0 for n in names}
    components.update(costs or {})
    base = dict(
        episode_id=episode_id,
        hh_id=hh_id,
        care_type=care_type,
        facility="Private",
        patient_sex="Male",
        social_group="Others",
        religion="Others",
        chronic=False,
        is_delivery=False,
        cost_components=components,
        multiplier=1.0,
    )
    base.update(kw)
    return EpisodeRecord(**base)


@pytest.fixture(scope="session")
def small_synth():
    """Three districts, 400 households each, with the population truth."""
    return generate(SynthConfig(seed=11, districts=(1, 2, 3), n_households=400, population_factor=3))


@pytest.fixture(scope="session")
def fixture_paths():
    return {
        "central": FIXTURES / "central_households.csv",
        "central_episodes": FIXTURES / "central_episodes.csv",
        "state": FIXTURES / "state_households.csv",
        "state_episodes": FIXTURES / "state_episodes.csv",
    }


@pytest.fixture
def tiny_dataset():
    hh = [
        make_household("a", subsample="S1", multiplier=2.0, aexp=100.0, oop_total=15.0, oop_outpatient=15.0),
        make_household("b", subsample="S2", multiplier=1.0, aexp=200.0, oop_total=10.0, oop_outpatient=10.0),
    ]
    eps = [
        make_episode("e1", "a", costs={"medicines_other": 15.0}),
        make_episode("e2", "b", costs={"doctor_fee": 10.0}),
    ]
    return SurveyDataset(hh, eps, "tiny")


COUNT_COLUMNS = {"n", "n_episodes", "low_n", "excluded", "district_code"}


def downstream_statistics(ds, thresholds=(0.1, 0.2, 0.4)):
    """Flat {name: float} of every weighted statistic the pipeline reports.

    Sample counts are left out since they legitimately change when records
    are duplicated.
    """
    from cheq import estimation as est
    from cheq.inequality import district_decomposition_table

    out = {}
    for t in thresholds:
        e = est.che_incidence(ds, t)
        out[f"che{t}"], out[f"che{t}_se"] = e.incidence, e.se
        for d in est.che_by_district(ds, [t]):
            out[f"che{t}_{d.domain}"], out[f"che{t}_{d.domain}_se"] = d.incidence, d.se
        for k, q in enumerate(est.che_by_quintile(ds, t), 1):
            out[f"che{t}_q{k}"], out[f"che{t}_q{k}_se"] = q.incidence, q.se
    out["coverage"] = est.coverage_rate(ds).rate
    for c in est.coverage_by_district(ds):
        out[f"cov_{c.domain}"], out[f"cov_{c.domain}_se"] = c.rate, c.se
    for care in ("Inpatient", "Outpatient"):
        for name, share in est.component_shares(ds, care).items():
            out[f"{care}_{name}"] = share
    table = district_decomposition_table(ds, "oop_all")
    for _, row in table.iterrows():
        for col, v in row.items():
            if col in COUNT_COLUMNS or isinstance(v, str) or col.endswith("_groups"):
                continue
            # percent columns are compared as the underlying fractions
            if col.endswith("_pct"):
                out[f"gini_{row['district_code']}_{col[:-4]}_share"] = float(v) / 100.0
            else:
                out[f"gini_{row['district_code']}_{col}"] = float(v)
    return out


def assert_same_statistics(a, b, tol):
    assert a.keys() == b.keys()
    for k in a:
        va, vb = a[k], b[k]
        if va != va:  # NaN
            assert vb != vb, k
        else:
            assert abs(va - vb) <= tol, (k, va, vb)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
