"""
Fidelity of a synthetic population against the real one: concept prevalence by domain and sub-population.
"""
import logging
from typing import Callable, Dict, Iterable, Optional, Sequence, Set

import pandas as pd

from timelinegpt.tables import EventTables
from timelinegpt.tables.persons import female_person_ids
from timelinegpt.tables.visits import hospitalized_person_ids

VISIT_DOMAIN = "visit"

POPULATIONS: Dict[str, Callable[[EventTables], Set[str]]] = {
    "full": lambda tables: set(tables.persons["person_id"]),
    "female": female_person_ids,
    "hospitalized": hospitalized_person_ids,
}


def _occurrences(tables: EventTables) -> pd.DataFrame:
    visits = tables.visits[["person_id", "visit_concept_id"]].rename(columns={"visit_concept_id": "concept_id"})
    visits = visits.assign(domain=VISIT_DOMAIN)
    columns = ["person_id", "domain", "concept_id"]
    return pd.concat([tables.events[columns], visits[columns]], ignore_index=True)


def concept_prevalence(tables: EventTables, person_ids: Optional[Iterable[str]] = None) -> pd.Series:
    """
    The fraction of persons with at least one occurrence of each concept.

    :param tables: the event tables
    :param person_ids: optional: the population, every person by default
    :return: a Series indexed by (domain, concept_id)
    """
    population = set(tables.persons["person_id"]) if person_ids is None else set(person_ids)
    occurrences = _occurrences(tables)
    occurrences = occurrences[occurrences["person_id"].isin(population)]
    counts = occurrences.drop_duplicates().groupby(["domain", "concept_id"])["person_id"].nunique()
    if not population:
        return counts.astype(float)
    return counts / len(population)


def prevalence_report(real: EventTables, synthetic: EventTables,
                      populations: Sequence[str] = ("full", "female", "hospitalized")) -> pd.DataFrame:
    """
    Compares concept prevalence between a real and a synthetic population, one row per concept observed in either
    and per sub-population. A concept missing from one side has prevalence 0 there.

    :param real: the real event tables
    :param synthetic: the synthetic event tables
    :param populations: the sub-populations to report: full, female, hospitalized
    :return: a frame of population, domain, concept_id, real_prevalence, synthetic_prevalence
    """
    if real.n_persons == 0 or synthetic.n_persons == 0:
        raise ValueError("Prevalence needs two non-empty populations.")
    frames = []
    for name in populations:
        select = POPULATIONS.get(name)
        if select is None:
            raise ValueError(f"Unknown population [{name}], expected one of {sorted(POPULATIONS)}.")
        both = pd.concat([
            concept_prevalence(real, select(real)).rename("real_prevalence"),
            concept_prevalence(synthetic, select(synthetic)).rename("synthetic_prevalence"),
        ], axis=1).fillna(0.0)
        both = both.reset_index().rename(columns={"level_0": "domain", "level_1": "concept_id"})
        both.insert(0, "population", name)
        frames.append(both)
        logging.info("Compared prevalence population=%s concepts=%d", name, len(both))
    report = pd.concat(frames, ignore_index=True)
    return report.sort_values(["population", "domain", "concept_id"], kind="stable").reset_index(drop=True)


def cohort_concept_prevalence(tables: EventTables, cohort_concepts: Iterable[int], concepts: Iterable[int],
                              domain: str = "drug") -> pd.DataFrame:
    """
    The prevalence of a list of concepts inside the cohort of persons having any of the cohort concepts, such as
    the drugs prescribed to the persons diagnosed with a rare condition.

    :return: a frame of concept_id, persons and prevalence, the cohort size in its attrs
    """
    events = tables.events
    cohort = set(events.loc[events["concept_id"].isin(list(cohort_concepts)), "person_id"])
    concepts = [int(c) for c in concepts]
    selected = events[events["person_id"].isin(cohort) & (events["domain"] == domain)
                      & events["concept_id"].isin(concepts)]
    persons = selected.groupby("concept_id")["person_id"].nunique().reindex(concepts, fill_value=0)
    frame = pd.DataFrame({
        "concept_id": concepts,
        "persons": persons.to_numpy(),
        "prevalence": persons.to_numpy() / len(cohort) if cohort else 0.0,
    })
    frame.attrs["cohort_size"] = len(cohort)
    return frame
