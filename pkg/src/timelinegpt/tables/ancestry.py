from collections import defaultdict, deque
from typing import Iterable, Set

import pandas as pd

from timelinegpt.tables.base import Table, register_table


@register_table("ancestry")
class Ancestry(Table):
    """
    A class to represent (ancestor, descendant) concept pairs of the concept hierarchy
    """
    columns = {
        "ancestor_id": "int64",
        "descendant_id": "int64",
    }


def descendants(ancestry: pd.DataFrame, concept_ids: Iterable[int]) -> Set[int]:
    """
    Returns the given concepts together with every concept below them in the hierarchy.
    A concept is always its own descendant, and the closure is transitive even when the table only
    lists direct parent-child pairs.
    """
    children = defaultdict(set)
    for ancestor, descendant in zip(ancestry["ancestor_id"], ancestry["descendant_id"]):
        children[int(ancestor)].add(int(descendant))

    found = set()
    queue = deque(int(c) for c in concept_ids)
    while queue:
        concept = queue.popleft()
        if concept in found:
            continue
        found.add(concept)
        queue.extend(children.get(concept, ()))
    return found
