"""Relationship-count vectors for IFC objects.

Each object gets six integers: how often its id is quoted in each of these
relationship attributes (in this order):

    IfcRelConnectsElements.RelatingElement
    IfcRelConnectsElements.RelatedElement
    IfcRelAggregates.RelatingObject
    IfcRelAggregates.RelatedObjects
    IfcRelVoidsElement.RelatingBuildingElement
    IfcRelFillsElement.RelatedBuildingElement
"""

from __future__ import annotations

import enum
from collections import Counter
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

from .step import NULL, Ref, StepError, StepModel, instances_of_type


class RelationshipKind(enum.IntEnum):
    CONNECTS_RELATING = 0
    CONNECTS_RELATED = 1
    AGGREGATES_RELATING = 2
    AGGREGATES_RELATED = 3
    VOIDS_RELATING = 4
    FILLS_RELATED = 5


class RelationCountVector(NamedTuple):
    connects_relating: int = 0
    connects_related: int = 0
    aggregates_relating: int = 0
    aggregates_related: int = 0
    voids_relating: int = 0
    fills_related: int = 0


class RelationError(StepError):
    pass


class AttributeArityError(RelationError):
    def __init__(self, instance_id: int):
        super().__init__(f"#{instance_id}: monitored attribute slot missing")
        self.id = instance_id


class NonReferenceSlot(RelationError):
    def __init__(self, instance_id: int):
        super().__init__(f"#{instance_id}: monitored slot holds a non-reference value")
        self.id = instance_id


class UnknownObjectId(RelationError, KeyError):
    def __init__(self, object_id: int):
        RelationError.__init__(self, f"#{object_id} is not an instance of the model")
        self.id = object_id

    __str__ = RelationError.__str__


# 0-based attribute positions; identical in IFC2x3 and IFC4.
_CONNECTS_SLOTS = ((5, RelationshipKind.CONNECTS_RELATING), (6, RelationshipKind.CONNECTS_RELATED))

MONITORED_SLOTS: Dict[str, Tuple[Tuple[int, RelationshipKind], ...]] = {
    "IFCRELCONNECTSELEMENTS": _CONNECTS_SLOTS,
    "IFCRELCONNECTSELEMENT": _CONNECTS_SLOTS,
    "IFCRELAGGREGATES": ((4, RelationshipKind.AGGREGATES_RELATING),
                         (5, RelationshipKind.AGGREGATES_RELATED)),
    "IFCRELVOIDSELEMENT": ((4, RelationshipKind.VOIDS_RELATING),),
    "IFCRELFILLSELEMENT": ((5, RelationshipKind.FILLS_RELATED),),
}

# Subtypes of IfcRelConnectsElements that keep RelatingElement/RelatedElement at 5/6.
CONNECTS_SUBTYPES = ("IFCRELCONNECTSPATHELEMENTS", "IFCRELCONNECTSWITHREALIZINGELEMENTS")

RelationshipRecord = Tuple[RelationshipKind, List[int]]


def _slot_ids(value, instance_id: int) -> List[int]:
    if value is NULL:
        return []
    if isinstance(value, Ref):
        return [value.id]
    if isinstance(value, tuple) and all(isinstance(v, Ref) for v in value):
        return [v.id for v in value]
    raise NonReferenceSlot(instance_id)


def extract_relationship_records(model: StepModel,
                                 connects_subtypes: Iterable[str] = ()) -> List[RelationshipRecord]:
    """One (kind, ids) tuple per monitored slot of every relationship instance.

    Records are ordered by entity type (connects, aggregates, voids, fills,
    then any extra connects subtypes) and by instance id within a type.
    A null slot yields an empty id list.
    """
    slot_table = dict(MONITORED_SLOTS)
    for name in connects_subtypes:
        slot_table[name.upper()] = _CONNECTS_SLOTS
    records: List[RelationshipRecord] = []
    for type_name, slots in slot_table.items():
        for inst in instances_of_type(model, type_name):
            for index, kind in slots:
                if index >= len(inst.attributes):
                    raise AttributeArityError(inst.id)
                records.append((kind, _slot_ids(inst.attributes[index], inst.id)))
    return records


def count_vector_for(object_id: int, records: Iterable[RelationshipRecord]) -> RelationCountVector:
    counts = [0] * 6
    for kind, ids in records:
        counts[kind] += ids.count(object_id)
    return RelationCountVector(*counts)


def build_vectors(model: StepModel, object_ids: Sequence[int],
                  connects_subtypes: Iterable[str] = ()) -> Dict[int, RelationCountVector]:
    for object_id in object_ids:
        if object_id not in model:
            raise UnknownObjectId(object_id)
    tallies = [Counter() for _ in RelationshipKind]
    for kind, ids in extract_relationship_records(model, connects_subtypes):
        tallies[kind].update(ids)
    return {
        object_id: RelationCountVector(*(t[object_id] for t in tallies))
        for object_id in object_ids
    }
