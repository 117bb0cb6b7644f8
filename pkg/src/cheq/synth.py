"""Seeded synthetic survey populations with known ground truth.

A finite population of households is generated per district. Two
independent stratified samples (one per agency) are drawn from it, so the
pooled estimators can be checked against population values computed by
direct enumeration.

Expenditure is lognormal; each care episode costs ``aexp * r`` with ``r``
Beta distributed, shifted by the household's expenditure class and scaled
by multiplicative group effects.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_model import (
    COMPONENTS,
    DISTRICTS,
    EpisodeRecord,
    HouseholdRecord,
    SurveyDataset,
    write_episodes,
    write_households,
)
from .exceptions import InvalidConfig

SOCIAL_PROBS = {"ST": 0.06, "SC": 0.27, "OBC": 0.07, "Others": 0.60}
# rough state-level spending profiles
INPATIENT_PROFILE = (0.38, 0.10, 0.20, 0.09, 0.047, 0.064, 0.048, 0.06)
OUTPATIENT_PROFILE = (0.1357, 0.0224, 0.6156, 0.0966, 0.0178, 0.0688, 0.0431)
PROFILE_CONCENTRATION = 40.0
PUBLIC_COST_FACTOR = 0.3


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    districts: tuple = tuple(sorted(DISTRICTS))
    n_households: int = 200
    population_factor: int = 5
    agency_split: float = 0.5
    aexp_mu: float = 11.0
    aexp_sigma: float = 0.6
    rural_share: float = 0.7
    mean_hh_size: float = 4.2
    inpatient_prob: float = 0.3
    outpatient_rate: float = 1.2
    inpatient_beta: tuple = (1.2, 6.0)
    outpatient_beta: tuple = (0.8, 14.0)
    quintile_shift: tuple = (1.3, 1.15, 1.0, 0.9, 0.8)
    private_share: float = 0.6
    chronic_prob: float = 0.2
    delivery_prob: float = 0.1
    muslim_share: float = 0.27
    coverage: dict = field(default_factory=dict)
    default_coverage: float = 0.14
    group_effects: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "districts", tuple(int(d) for d in self.districts))
        object.__setattr__(self, "inpatient_beta", tuple(self.inpatient_beta))
        object.__setattr__(self, "outpatient_beta", tuple(self.outpatient_beta))
        object.__setattr__(self, "quintile_shift", tuple(self.quintile_shift))
        object.__setattr__(self, "coverage", {int(k): float(v) for k, v in dict(self.coverage).items()})
        object.__setattr__(self, "group_effects", {k: dict(v) for k, v in dict(self.group_effects).items()})
        self.validate()

    def validate(self):
        probs = {
            "agency_split": self.agency_split,
            "rural_share": self.rural_share,
            "inpatient_prob": self.inpatient_prob,
            "private_share": self.private_share,
            "chronic_prob": self.chronic_prob,
            "delivery_prob": self.delivery_prob,
            "muslim_share": self.muslim_share,
            "default_coverage": self.default_coverage,
        }
        probs.update({f"coverage[{k}]": v for k, v in self.coverage.items()})
        for name, p in probs.items():
            if not 0 <= p <= 1:
                raise InvalidConfig(f"{name}={p} is not a probability")
        if not 0 < self.agency_split < 1:
            raise InvalidConfig("agency_split must be strictly between 0 and 1")
        if not self.aexp_sigma > 0:
            raise InvalidConfig("aexp_sigma must be > 0")
        if self.n_households < 8:
            raise InvalidConfig("n_households must be at least 8")
        if self.population_factor < 2:
            raise InvalidConfig("population_factor must be at least 2")
        if not self.districts or set(self.districts) - set(DISTRICTS):
            raise InvalidConfig(f"districts must be codes in 1..{len(DISTRICTS)}")
        if len(self.quintile_shift) != 5 or min(self.quintile_shift) <= 0:
            raise InvalidConfig("quintile_shift needs 5 positive factors")
        for a, b in (self.inpatient_beta, self.outpatient_beta):
            if a <= 0 or b <= 0:
                raise InvalidConfig("beta parameters must be positive")
        if self.outpatient_rate < 0:
            raise InvalidConfig("outpatient_rate must be >= 0")
        allowed = {"sex", "sector", "social", "religion"}
        if set(self.group_effects) - allowed:
            raise InvalidConfig(f"group_effects keys must be among {sorted(allowed)}")
        for effects in self.group_effects.values():
            if any(v <= 0 for v in effects.values()):
                raise InvalidConfig("group effects must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidConfig):
                raise
            raise InvalidConfig(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["districts"] = list(self.districts)
        return d


@dataclass(frozen=True)
class SynthTruth:
    """Population values computed by enumeration over the generated population."""

    population: SurveyDataset
    che_incidence: dict
    coverage: float
    gini_private_inpatient: float
    group_means: dict


def _effect(config, key, labels):
    out = np.ones(len(labels))
    for label, factor in config.group_effects.get(key, {}).items():
        out[labels == label] = factor
    return out


def _district_population(config, code, rng):
    """Columns for one district's population (households and episodes)."""
    n_pop = config.n_households * config.population_factor
    sector = np.where(rng.random(n_pop) < config.rural_share, "Rural", "Urban")
    hh_size = 1 + rng.poisson(config.mean_hh_size - 1, n_pop)
    aexp = np.round(np.exp(rng.normal(config.aexp_mu, config.aexp_sigma, n_pop)) * np.sqrt(hh_size), 2)
    social = rng.choice(list(SOCIAL_PROBS), size=n_pop, p=list(SOCIAL_PROBS.values()))
    religion = np.where(rng.random(n_pop) < config.muslim_share, "Muslim", "Others")
    cov_p = config.coverage.get(code, config.default_coverage)
    coverage = rng.random(n_pop) < cov_p

    # expenditure class within the district population, person-weighted
    pc = aexp / hh_size
    order = np.argsort(pc, kind="mergesort")
    cum = np.cumsum(hh_size[order]) / hh_size.sum()
    klass = np.empty(n_pop, dtype=int)
    klass[order] = np.minimum(np.searchsorted([0.2, 0.4, 0.6, 0.8], cum, side="left"), 4)
    shift = np.asarray(config.quintile_shift)[klass]

    n_ip = (rng.random(n_pop) < config.inpatient_prob).astype(int)
    n_op = rng.poisson(config.outpatient_rate, n_pop)
    owner = np.concatenate([np.repeat(np.arange(n_pop), n_ip), np.repeat(np.arange(n_pop), n_op)])
    care = np.array(["Inpatient"] * int(n_ip.sum()) + ["Outpatient"] * int(n_op.sum()), dtype=object)
    order = np.argsort(owner, kind="mergesort")
    owner, care = owner[order], care[order]
    m = len(owner)
    is_ip = care == "Inpatient"
    ratio = np.where(
        is_ip,
        rng.beta(*config.inpatient_beta, m),
        rng.beta(*config.outpatient_beta, m),
    )
    facility = np.where(rng.random(m) < config.private_share, "Private", "Public")
    sex = np.where(rng.random(m) < 0.5, "Male", "Female")
    chronic = rng.random(m) < config.chronic_prob
    delivery = is_ip & (sex == "Female") & (rng.random(m) < config.delivery_prob)
    effect = (
        _effect(config, "sex", sex)
        * _effect(config, "sector", sector[owner])
        * _effect(config, "social", np.where(np.isin(social[owner], ["SC", "ST"]), "SC&ST", "Others"))
        * _effect(config, "religion", religion[owner])
    )
    cost = aexp[owner] * ratio * shift[owner] * effect
    cost = np.where(facility == "Public", cost * PUBLIC_COST_FACTOR, cost)
    ip_split = rng.dirichlet(np.asarray(INPATIENT_PROFILE) * PROFILE_CONCENTRATION, m)
    op_split = rng.dirichlet(np.asarray(OUTPATIENT_PROFILE) * PROFILE_CONCENTRATION, m)
    return dict(
        code=code,
        n_pop=n_pop,
        sector=sector,
        hh_size=hh_size,
        aexp=aexp,
        social=social,
        religion=religion,
        coverage=coverage,
        owner=owner,
        care=care,
        facility=facility,
        sex=sex,
        chronic=chronic,
        delivery=delivery,
        cost=cost,
        ip_split=ip_split,
        op_split=op_split,
    )


def _as_lists(pop):
    """Plain-Python views of the population columns, built once per district."""
    if "_lists" in pop:
        return pop["_lists"]
    ip_parts = np.round(pop["cost"][:, None] * pop["ip_split"], 2).tolist()
    op_parts = np.round(pop["cost"][:, None] * pop["op_split"], 2).tolist()
    care = pop["care"].tolist()
    costs = []
    for j, c in enumerate(care):
        if c == "Inpatient":
            costs.append(dict(zip(COMPONENTS["Inpatient"], ip_parts[j])))
        else:
            costs.append(dict(zip(COMPONENTS["Outpatient"], op_parts[j])))
    eps_of = {}
    for j, i in enumerate(pop["owner"].tolist()):
        eps_of.setdefault(i, []).append(j)
    cols = {k: pop[k].tolist() for k in (
        "sector", "hh_size", "aexp", "social", "religion", "coverage",
        "facility", "sex", "chronic", "delivery",
    )}
    cols.update(care=care, costs=costs, totals=[math.fsum(c.values()) for c in costs], eps_of=eps_of)
    pop["_lists"] = cols
    return cols


def _materialise(pop, units, multipliers, subsamples, agency, prefix):
    """Household and episode records for the selected population units."""
    code = pop["code"]
    L = _as_lists(pop)
    households, episodes = [], []
    for i, mult, sub in zip(np.asarray(units).tolist(), np.asarray(multipliers, dtype=float).tolist(),
                            np.asarray(subsamples).tolist()):
        hh_id = f"{prefix}D{code:02d}H{i:06d}"
        ip, op = [], []
        for j in L["eps_of"].get(i, ()):
            (ip if L["care"][j] == "Inpatient" else op).append(L["totals"][j])
            episodes.append(
                EpisodeRecord(
                    episode_id=f"{prefix}D{code:02d}E{j:07d}",
                    hh_id=hh_id,
                    care_type=L["care"][j],
                    facility=L["facility"][j],
                    patient_sex=L["sex"][j],
                    social_group=L["social"][i],
                    religion=L["religion"][i],
                    chronic=L["chronic"][j],
                    is_delivery=L["delivery"][j],
                    cost_components=dict(L["costs"][j]),
                    multiplier=mult,
                )
            )
        sector = L["sector"][i]
        ip_total, op_total = math.fsum(ip), math.fsum(op)
        households.append(
            HouseholdRecord(
                hh_id=hh_id,
                district_code=code,
                sector=sector,
                agency=agency,
                subsample=sub,
                stratum_id=f"{code:02d}-{sector[0]}",
                multiplier=mult,
                hh_size=L["hh_size"][i],
                aexp=L["aexp"][i],
                oop_total=ip_total + op_total,
                oop_inpatient=ip_total,
                oop_outpatient=op_total,
                coverage=L["coverage"][i],
            )
        )
    return households, episodes


def _sample(pop, n_sample, rng, taken):
    """Stratified SRS by sector with proportional allocation.

    Units already in ``taken`` (drawn by the other agency) are skipped and
    the new draws are added to it.
    """
    units, mults = [], []
    for sector in ("Rural", "Urban"):
        in_stratum = pop["sector"] == sector
        stratum = np.flatnonzero(in_stratum & ~taken)
        size = int(in_stratum.sum())
        if len(stratum) == 0:
            continue
        n_s = max(2, int(round(n_sample * size / pop["n_pop"])))
        n_s = min(n_s, len(stratum))
        chosen = np.sort(rng.choice(stratum, size=n_s, replace=False))
        taken[chosen] = True
        units.append(chosen)
        mults.append(np.full(n_s, size / n_s))
    units = np.concatenate(units)
    mults = np.concatenate(mults)
    # interpenetrating subsamples: random half split
    perm = rng.permutation(len(units))
    subs = np.where(perm % 2 == 0, "S1", "S2")
    return units, mults, subs


def _truth(config, population):
    hh = population.household_frame
    ratio_ok = hh["aexp"].to_numpy() > 0
    oop = hh["oop_total"].to_numpy()[ratio_ok]
    aexp = hh["aexp"].to_numpy()[ratio_ok]
    che = {t: float(np.mean(oop / aexp >= t)) for t in (0.1, 0.2, 0.4)}
    persons = hh["hh_size"].to_numpy(float)
    coverage = float(persons[hh["coverage"].to_numpy()].sum() / persons.sum())
    ep = population.episode_frame
    sel = ep[(ep["care_type"] == "Inpatient") & (ep["facility"] == "Private")]
    y = np.sort(sel["total_cost"].to_numpy(float))
    n = len(y)
    if n and y.sum() > 0:
        # unit-weight Gini by rank formula
        gini = float(2 * np.arange(1, n + 1) @ y / (n * y.sum()) - (n + 1) / n)
    else:
        gini = math.nan
    means = {}
    social = np.where(sel["social_group"].isin(["SC", "ST"]), "SC&ST", "Others")
    for key, col in (("sex", sel["patient_sex"]), ("sector", sel["sector"]),
                     ("social", social), ("religion", sel["religion"])):
        col = np.asarray(col)
        means[key] = {str(c): float(y_.mean()) for c in np.unique(col)
                      for y_ in [sel["total_cost"].to_numpy(float)[col == c]]}
    return che, coverage, gini, means


def generate(config: SynthConfig, with_truth=True):
    """Draw a population and two agency samples from it.

    Returns
    -------
    (central, state, truth) : SurveyDataset, SurveyDataset, SynthTruth
        ``truth`` is None when ``with_truth`` is false, which skips building
        the full population records.
    """
    if not isinstance(config, SynthConfig):
        raise InvalidConfig("generate needs a SynthConfig")
    seeds = np.random.SeedSequence(config.seed).spawn(len(config.districts))
    n_central = max(4, int(round(config.n_households * config.agency_split)))
    n_state = max(4, config.n_households - n_central)
    central, state, pop_hh, pop_eps = ([], []), ([], []), [], []
    for code, ss in zip(config.districts, seeds):
        rng = np.random.default_rng(ss)
        pop = _district_population(config, code, rng)
        taken = np.zeros(pop["n_pop"], dtype=bool)
        for target, n_s, agency, prefix in ((central, n_central, "Central", "C-"), (state, n_state, "State", "S-")):
            units, mults, subs = _sample(pop, n_s, rng, taken)
            hh, eps = _materialise(pop, units, mults, subs, agency, prefix)
            target[0].extend(hh)
            target[1].extend(eps)
        if with_truth:
            all_units = np.arange(pop["n_pop"])
            subs = np.where(all_units % 2 == 0, "S1", "S2")
            hh, eps = _materialise(pop, all_units, np.ones(pop["n_pop"]), subs, "Central", "P-")
            pop_hh.extend(hh)
            pop_eps.extend(eps)
    truth = None
    if with_truth:
        population = SurveyDataset(pop_hh, pop_eps, "population")
        truth = SynthTruth(population, *_truth(config, population))
    return (
        SurveyDataset(central[0], central[1], "central"),
        SurveyDataset(state[0], state[1], "state"),
        truth,
    )


def write_samples(central, state, out_dir):
    """Write the four CSV files; returns their paths keyed by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "central_households": out / "central_households.csv",
        "central_episodes": out / "central_episodes.csv",
        "state_households": out / "state_households.csv",
        "state_episodes": out / "state_episodes.csv",
    }
    write_households(central, paths["central_households"])
    write_episodes(central, paths["central_episodes"])
    write_households(state, paths["state_households"])
    write_episodes(state, paths["state_episodes"])
    return paths
