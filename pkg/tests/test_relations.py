import random

import pytest

from ifc_grl import step
from ifc_grl.relations import (CONNECTS_SUBTYPES, AttributeArityError, NonReferenceSlot, RelationCountVector,
                               RelationshipKind as K, UnknownObjectId, build_vectors, count_vector_for,
                               extract_relationship_records)
from ifc_grl.synthetic import toy_fixture, write_corpus

from test_step import wrap

# Hand trace of src/ifc_grl/data/toy.ifc; see the relationship block at #100-#109.
TOY_VECTORS = {
    20: (0, 0, 0, 1, 1, 0),
    21: (0, 0, 0, 1, 1, 0),
    22: (1, 0, 0, 0, 0, 0),
    40: (0, 0, 0, 1, 0, 1),
    41: (0, 0, 0, 1, 0, 1),
    50: (0, 2, 0, 1, 0, 0),
    60: (0, 1, 0, 1, 0, 0),
    61: (2, 0, 0, 0, 0, 0),
    70: (0, 0, 0, 1, 0, 0),
}
# With IfcRelConnectsPathElements counted, #106 adds 21 -> relating, 22 -> related.
TOY_VECTORS_WITH_SUBTYPES = {**TOY_VECTORS, 21: (1, 0, 0, 1, 1, 0), 22: (1, 1, 0, 0, 0, 0)}


def toy_model():
    return step.load(toy_fixture()[0])


def test_voids_record():
    model = step.parse(wrap("#8=IFCRELVOIDSELEMENT('g',$,$,$,#3,#4);"))
    assert extract_relationship_records(model) == [(K.VOIDS_RELATING, [3])]


def test_aggregates_record():
    model = step.parse(wrap("#9=IFCRELAGGREGATES('g',$,$,$,#1,(#2,#3));"))
    assert extract_relationship_records(model) == [(K.AGGREGATES_RELATING, [1]), (K.AGGREGATES_RELATED, [2, 3])]


def test_no_relationships():
    assert extract_relationship_records(step.parse(wrap("#1=IFCWALL();"))) == []


def test_count_vector_examples():
    records = [(K.VOIDS_RELATING, [3]), (K.FILLS_RELATED, [5])]
    assert count_vector_for(3, records) == (0, 0, 0, 0, 1, 0)
    assert count_vector_for(5, records) == (0, 0, 0, 0, 0, 1)
    assert count_vector_for(99, records) == (0, 0, 0, 0, 0, 0)


def test_build_vectors_aggregate():
    model = step.parse(wrap("#1=A();\n#2=B();\n#3=C();\n#9=IFCRELAGGREGATES('g',$,$,$,#1,(#2,#3));"))
    assert build_vectors(model, [1, 2, 3]) == {
        1: (0, 0, 1, 0, 0, 0), 2: (0, 0, 0, 1, 0, 0), 3: (0, 0, 0, 1, 0, 0)}


def test_unknown_object():
    with pytest.raises(UnknownObjectId):
        build_vectors(step.parse(wrap("#1=A();")), [2])


def test_null_slot_counts_nothing():
    model = step.parse(wrap("#1=A();\n#5=IFCRELCONNECTSELEMENTS('g',$,$,$,$,$,#1);"))
    assert build_vectors(model, [1]) == {1: (0, 1, 0, 0, 0, 0)}


def test_singular_spelling_accepted():
    model = step.parse(wrap("#1=A();\n#2=B();\n#5=IFCRELCONNECTSELEMENT('g',$,$,$,$,#1,#2);"))
    assert build_vectors(model, [1, 2]) == {1: (1, 0, 0, 0, 0, 0), 2: (0, 1, 0, 0, 0, 0)}


def test_repeated_list_member_counts_each_time():
    model = step.parse(wrap("#1=A();\n#2=B();\n#5=IFCRELAGGREGATES('g',$,$,$,#1,(#2,#2));"))
    assert build_vectors(model, [2])[2].aggregates_related == 2


def test_bad_slots():
    with pytest.raises(AttributeArityError):
        extract_relationship_records(step.parse(wrap("#5=IFCRELVOIDSELEMENT('g',$,$,$);")))
    with pytest.raises(NonReferenceSlot):
        extract_relationship_records(step.parse(wrap("#5=IFCRELVOIDSELEMENT('g',$,$,$,'x',#2);")))


def test_toy_vectors():
    model = toy_model()
    assert build_vectors(model, list(TOY_VECTORS)) == TOY_VECTORS
    assert build_vectors(model, list(TOY_VECTORS), CONNECTS_SUBTYPES) == TOY_VECTORS_WITH_SUBTYPES


def test_toy_covers_all_relationship_types():
    names = {inst.type_name for inst in toy_model().instances.values()}
    assert {"IFCRELCONNECTSELEMENTS", "IFCRELAGGREGATES", "IFCRELVOIDSELEMENT", "IFCRELFILLSELEMENT"} <= names


def slot_totals(model, subtypes=()):
    """Per slot, the number of ids quoted, read straight from the records."""
    totals = [0] * 6
    for kind, ids in extract_relationship_records(model, subtypes):
        totals[kind] += len(ids)
    return totals


def test_sum_invariant_toy_and_corpus(tmp_path):
    write_corpus(tmp_path / "ifc", tmp_path / "obj", n_files=3, seed=5)
    paths = [toy_fixture()[0]] + sorted((tmp_path / "ifc").glob("*.ifc"))
    for path in paths:
        model = step.load(path)
        for subtypes in ((), CONNECTS_SUBTYPES):
            vectors = build_vectors(model, list(model.instances), subtypes)
            sums = [sum(v[k] for v in vectors.values()) for k in range(6)]
            assert sums == slot_totals(model, subtypes), path


def permuted(model: step.StepModel, seed: int):
    """Same graph with instance ids relabelled and records shuffled."""
    ids = list(model.instances)
    rng = random.Random(seed)
    new_ids = rng.sample(range(1000, 1000 + 10 * len(ids)), len(ids))
    mapping = dict(zip(ids, new_ids))

    def remap(v):
        if isinstance(v, step.Ref):
            return step.Ref(mapping[v.id])
        if isinstance(v, tuple):
            return tuple(remap(x) for x in v)
        return v

    records = [step.format_record(step.EntityInstance(mapping[i.id], i.type_name, remap(i.attributes)))
               for i in model.instances.values()]
    rng.shuffle(records)
    return step.parse(wrap("\n".join(records))), mapping


def test_order_independence():
    model = toy_model()
    base = build_vectors(model, list(TOY_VECTORS))
    for seed in range(5):
        other, mapping = permuted(model, seed)
        vectors = build_vectors(other, [mapping[i] for i in TOY_VECTORS])
        assert {i: vectors[mapping[i]] for i in TOY_VECTORS} == base


def test_removing_non_relationship_instances():
    model = toy_model()
    keep = {i: inst for i, inst in model.instances.items()
            if inst.type_name.startswith("IFCREL") or i in TOY_VECTORS}
    reduced = step.StepModel(keep)
    assert build_vectors(reduced, list(TOY_VECTORS)) == build_vectors(model, list(TOY_VECTORS))


def test_deterministic():
    model = toy_model()
    assert build_vectors(model, list(TOY_VECTORS)) == build_vectors(model, list(TOY_VECTORS))
    assert isinstance(next(iter(build_vectors(model, [20]).values())), RelationCountVector)
