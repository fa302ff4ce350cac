import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modular_dac.registry import REGISTRY
from modular_dac.structure import (
    L_MAX,
    AlgorithmStructure,
    StructureError,
    deserialize,
    from_names,
    generate,
    in_space,
    parse,
    serialize,
    validate,
)


def adjacency_ok(s: AlgorithmStructure) -> bool:
    """Second opinion on legality, written from the follower tables alone."""
    specs = s.specs()
    if specs[0].category != "Initialization" or specs[-1].category != "Completed" or s.L > L_MAX:
        return False
    for a, b in zip(s.trunk, s.trunk[1:]):
        # niching becomes active only once the niching module has run
        if not REGISTRY.is_legal_follower(REGISTRY.get(a), REGISTRY.get(b), False):
            return False
    niching = bool(s.branches)
    for chain in s.branches or [()]:
        seq = [s.trunk[-1], *chain, *s.tail]
        for a, b in zip(seq, seq[1:]):
            if not REGISTRY.is_legal_follower(REGISTRY.get(a), REGISTRY.get(b), niching):
                return False
    families = {x.family for x in specs if x.family}
    return len(families) <= 1


@pytest.mark.parametrize("tag", ["DE", "PSO_GA", "ALL"])
def test_generated_structures_are_legal(tag):
    rng = np.random.default_rng(1)
    for _ in range(2000):
        s = generate(tag, rng)
        assert validate(s) is None
        assert adjacency_ok(s)
        assert all(in_space(x, tag) for x in s.specs())


def test_de_space_contents():
    rng = np.random.default_rng(2)
    for _ in range(500):
        cats = [x.category for x in generate("DE", rng).specs()]
        assert "Mutation" in cats or "Multi_Strategy" in cats
        assert "Crossover" in cats or "Multi_Strategy" in cats


def test_pso_ga_space_has_no_de_ids():
    rng = np.random.default_rng(3)
    for _ in range(500):
        assert all(x.family != "DE" for x in generate("PSO_GA", rng).specs())


def test_coverage_of_all_space():
    rng = np.random.default_rng(0)
    seen = Counter()
    for _ in range(10000):
        seen.update(generate("ALL", rng).names())
    missing = {s.name for s in REGISTRY} - set(seen)
    # plain niching variants only appear as members of the niching ensembles
    assert missing == {"Niching_Rand", "Niching_Ranking", "Niching_Distance"}


def test_determinism():
    a = [serialize(generate("ALL", np.random.default_rng(9))) for _ in range(2)]
    assert a[0] == a[1]


def test_hand_examples():
    ok = from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Completed"], "DE")
    assert validate(ok) is None
    bad = from_names(["Uniform", "Sel_DE-like", "Completed"])
    v = validate(bad)
    assert v is not None and v.position == 1 and v.offender == "Sel_DE-like"
    share = from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Sharing", "Completed"])
    assert validate(share) is not None
    crossover_after_sel = from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Binomial", "Completed"])
    assert validate(crossover_after_sel) is not None


def test_family_mixing_rejected():
    mixed = from_names(["Uniform", "SBX", "Gaussian_mutation", "BC_Clip", "Sel_DE-like", "Completed"], "ALL")
    assert validate(mixed) is None
    mixed = from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Completed"], "PSO_GA")
    assert validate(mixed) is not None


def test_missing_completed_and_length():
    assert validate(from_names(["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like"])) is not None
    long = ["Uniform", "DE/rand/1", "Binomial", "BC_Clip", "Sel_DE-like", "Completed"]
    s = AlgorithmStructure(trunk=[REGISTRY.get(n).id for n in long[:-1]] * 4, tail=[REGISTRY.get("Completed").id])
    assert validate(s) is not None


def test_roundtrip_many():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        s = generate("ALL", rng)
        text = serialize(s)
        back = deserialize(text)
        assert back == s and serialize(back) == text
        assert (len(back.branches) == 0) == (not any(x.category == "Niching" or x.role == "Niching" for x in back.specs()))


def test_tampered_file_rejected():
    s = generate("DE", np.random.default_rng(5))
    obj = json.loads(serialize(s))
    sel = REGISTRY.get("Sel_DE-like")
    obj["trunk"].insert(1, {"id": sel.bits, "name": sel.name})
    text = json.dumps(obj)
    parse(text)  # structurally fine
    with pytest.raises(StructureError):
        deserialize(text)
    with pytest.raises(StructureError):
        deserialize("{not json")
    with pytest.raises(StructureError):
        serialize(parse(text))


@given(st.integers(0, 2**32 - 1), st.sampled_from(["DE", "PSO_GA", "ALL"]))
def test_niching_branches_match_ensemble(seed, tag):
    s = generate(tag, np.random.default_rng(seed))
    if s.branches:
        assert s.niching.n_nich == len(s.branches)
        for b in s.branches:
            assert REGISTRY.get(b[-1]).category in ("Selection", "Information_Sharing")
    assert s.L <= L_MAX
