"""Random generation, validation and (de)serialization of algorithm structures.

A structure is a trunk (Initialization, then either a whole operator
chain or a niching ensemble), one operator chain per niche when niching
is used, and a shared tail of Population_Reduction / Restart_Strategy
modules closed by Completed.  Generation is rejection sampling: a
candidate is drawn uniformly from the space's module pool and kept only
if it is a legal follower and the structure can still be completed
within ``L_MAX`` modules.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .registry import REGISTRY, Registry, SubModuleSpec

L_MAX = 16
MAX_ATTEMPTS = 1000
SPACE_TAGS = ("DE", "PSO_GA", "ALL")
TAIL_CATEGORIES = frozenset({"Population_Reduction", "Restart_Strategy", "Completed"})
FORMAT = "modular_dac.structure"
FORMAT_VERSION = 1


class GenerationError(RuntimeError):
    """A slot could not be filled within the attempt budget."""


class StructureError(ValueError):
    """Malformed or illegal structure file."""


@dataclass(frozen=True)
class Violation:
    position: int
    offender: str
    expected: str

    def __str__(self) -> str:
        return f"position {self.position}: {self.offender} is illegal here (expected {self.expected})"


@dataclass(frozen=True)
class AlgorithmStructure:
    trunk: tuple
    branches: tuple = ()
    tail: tuple = ()
    space_tag: str = "ALL"
    registry: Registry = field(default=REGISTRY, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(int(i) for i in self.trunk))
        object.__setattr__(self, "branches", tuple(tuple(int(i) for i in b) for b in self.branches))
        object.__setattr__(self, "tail", tuple(int(i) for i in self.tail))

    @property
    def flat(self) -> tuple:
        out = list(self.trunk)
        for b in self.branches:
            out.extend(b)
        out.extend(self.tail)
        return tuple(out)

    @property
    def L(self) -> int:
        return len(self.flat)

    @property
    def n_nich(self) -> int:
        return len(self.branches)

    def specs(self) -> list[SubModuleSpec]:
        return [self.registry.get(i) for i in self.flat]

    def layout(self) -> list[tuple[int, SubModuleSpec, int | None]]:
        """``(flat position, spec, branch index or None)`` in execution order."""
        rows, pos = [], 0
        for i in self.trunk:
            rows.append((pos, self.registry.get(i), None))
            pos += 1
        for k, b in enumerate(self.branches):
            for i in b:
                rows.append((pos, self.registry.get(i), k))
                pos += 1
        for i in self.tail:
            rows.append((pos, self.registry.get(i), None))
            pos += 1
        return rows

    @property
    def niching(self) -> SubModuleSpec | None:
        if not self.branches:
            return None
        return self.registry.get(self.trunk[-1])

    def names(self) -> list[str]:
        return [s.name for s in self.specs()]

    def describe(self) -> str:
        reg = self.registry
        parts = [" -> ".join(reg.get(i).name for i in self.trunk)]
        for k, b in enumerate(self.branches):
            parts.append(f"  [niche {k}] " + " -> ".join(reg.get(i).name for i in b))
        parts.append("  " + " -> ".join(reg.get(i).name for i in self.tail))
        return "\n".join(parts)


def in_space(spec: SubModuleSpec, space_tag: str, family: str | None = None) -> bool:
    if spec.family is None:
        return True
    if space_tag == "ALL":
        return family is None or spec.family == family
    return spec.family == space_tag


class _Sampler:
    """Precomputed legality tables for one (registry, space, family) pool."""

    def __init__(self, registry: Registry, space_tag: str, family: str | None):
        self.pool = [s for s in registry if in_space(s, space_tag, family) and s.category != "Initialization"]
        n = len(self.pool)
        self.index = {s.id: k for k, s in enumerate(self.pool)}
        self.inits = [s for s in registry if s.category == "Initialization"]
        all_prev = self.pool + self.inits
        self.prev_index = {s.id: k for k, s in enumerate(all_prev)}
        self.legal = np.zeros((2, len(all_prev), n), dtype=bool)
        for a in (0, 1):
            for i, p in enumerate(all_prev):
                for j, c in enumerate(self.pool):
                    self.legal[a, i, j] = registry.is_legal_follower(p, c, bool(a))
        self.is_tail = np.array([s.category in TAIL_CATEGORIES for s in self.pool])
        self.is_niching = np.array([s.is_multi and s.role == "Niching" for s in self.pool])
        self.dist = self._distances(all_prev)

    def _distances(self, all_prev) -> np.ndarray:
        # fewest further modules (Completed included) needed after each module
        # on a linear chain; niching is handled separately via chain_min
        inf = 10**6
        d = np.full(len(all_prev), inf)
        for i, s in enumerate(all_prev):
            if s.category == "Completed":
                d[i] = 0
        for _ in range(L_MAX + 2):
            for i in range(len(all_prev)):
                js = np.flatnonzero(self.legal[0, i] & ~self.is_niching)
                if len(js):
                    best = 1 + min(d[self.prev_index[self.pool[j].id]] for j in js)
                    d[i] = min(d[i], best)
        return d

    def need(self, spec: SubModuleSpec) -> int:
        """Modules still required after ``spec`` (Completed included)."""
        d = int(self.dist[self.prev_index[spec.id]])
        if spec.is_multi and spec.role == "Niching":
            return spec.n_nich * (d - 1) + 1
        return d

    def chain_min(self, niching: SubModuleSpec) -> int:
        """Shortest operator chain of one niche."""
        return int(self.dist[self.prev_index[niching.id]]) - 1


@lru_cache(maxsize=None)
def _sampler(space_tag: str, family: str | None) -> _Sampler:
    return _Sampler(REGISTRY, space_tag, family)


def _get_sampler(registry: Registry, space_tag: str, family: str | None) -> _Sampler:
    if registry is REGISTRY:
        return _sampler(space_tag, family)
    return _Sampler(registry, space_tag, family)


def generate(space_tag: str, rng, registry: Registry = REGISTRY) -> AlgorithmStructure:
    """Sample one legal structure from the ``space_tag`` module space."""
    space_tag = space_tag.upper()
    if space_tag not in SPACE_TAGS:
        raise ValueError(f"unknown space tag {space_tag!r}; expected one of {SPACE_TAGS}")
    rng = np.random.default_rng(rng)
    family = None
    S = _get_sampler(registry, space_tag, family)

    def lock(spec: SubModuleSpec):
        nonlocal family, S
        if space_tag == "ALL" and family is None and spec.family is not None:
            family = spec.family
            S = _get_sampler(registry, space_tag, family)

    def draw(prevs, used: int, n_future: int, niching, niching_active: bool, accept) -> SubModuleSpec:
        # n_future niches of ``niching`` still need at least one chain each
        attempts = 0
        while attempts < MAX_ATTEMPTS:
            chunk = rng.integers(0, len(S.pool), 64)
            for j in chunk:
                attempts += 1
                cand = S.pool[j]
                ok = all(S.legal[int(niching_active), S.prev_index[p.id], j] for p in prevs)
                if ok and accept(cand):
                    T = S
                    if space_tag == "ALL" and family is None and cand.family is not None:
                        T = _get_sampler(registry, space_tag, cand.family)
                    reserve = n_future * T.chain_min(niching) if n_future else 0
                    if used + 1 + T.need(cand) + reserve <= L_MAX:
                        return cand
                if attempts >= MAX_ATTEMPTS:
                    break
        raise GenerationError(
            f"no legal follower for {[p.name for p in prevs]} after {MAX_ATTEMPTS} attempts"
        )

    init = S.inits[int(rng.integers(0, len(S.inits)))]
    trunk, branches, tail = [init], [], []
    prev = init
    # trunk: either a niching ensemble or a full chain up to the tail
    while True:
        cand = draw([prev], len(trunk), 0, None, False, lambda c: True)
        lock(cand)
        if cand.category in TAIL_CATEGORIES:
            break
        trunk.append(cand)
        prev = cand
        if cand.is_multi and cand.role == "Niching":
            break
    finals = [prev]
    niching = trunk[-1] if (trunk[-1].is_multi and trunk[-1].role == "Niching") else None
    if niching is not None:
        finals = []
        used = len(trunk)
        for k in range(niching.n_nich):
            chain, bprev = [], niching
            while True:
                cand = draw([bprev], used, niching.n_nich - 1 - k, niching, True, lambda c: True)
                lock(cand)
                if cand.category in TAIL_CATEGORIES:
                    break  # branch end; the shared tail is drawn below
                chain.append(cand)
                used += 1
                bprev = cand
            branches.append(chain)
            finals.append(bprev)
        cand = None
    # tail: first module legal after every branch end, Completed last
    used = len(trunk) + sum(len(b) for b in branches)
    if niching is None:
        first = cand
    else:
        first = draw(finals, used, 0, None, True, lambda c: c.category in TAIL_CATEGORIES)
    tail.append(first)
    while tail[-1].category != "Completed":
        tail.append(draw([tail[-1]], used + len(tail), 0, None, False, lambda c: c.category in TAIL_CATEGORIES))
    return AlgorithmStructure(
        trunk=[s.id for s in trunk],
        branches=[[s.id for s in b] for b in branches],
        tail=[s.id for s in tail],
        space_tag=space_tag,
        registry=registry,
    )


def _expected(reg: Registry, prev: SubModuleSpec, niching_active: bool) -> str:
    return ", ".join(sorted({c.slot if not c.is_multi else f"Multi_Strategy({c.role})" for c in reg.legal_followers(prev, niching_active)})) or "nothing"


def validate(structure: AlgorithmStructure) -> Violation | None:
    """Return ``None`` when the structure is legal, else the first violation."""
    reg = structure.registry
    try:
        specs = structure.specs()
    except KeyError as exc:
        return Violation(-1, str(exc), "registered module ids")
    if not structure.trunk:
        return Violation(0, "<empty>", "an Initialization module")
    flat_len = len(specs)
    trunk = [reg.get(i) for i in structure.trunk]
    if trunk[0].category != "Initialization":
        return Violation(0, trunk[0].name, "an Initialization module")
    if flat_len > L_MAX:
        return Violation(L_MAX, specs[L_MAX].name, f"at most {L_MAX} modules")
    if not structure.tail or reg.get(structure.tail[-1]).category != "Completed":
        last = specs[-1].name if specs else "<empty>"
        return Violation(flat_len - 1, last, "Completed as the final module")

    def check_chain(seq, start_pos, prevs, niching_active, allowed=None):
        for off, spec in enumerate(seq):
            pos = start_pos + off
            for p in prevs:
                if not reg.is_legal_follower(p, spec, niching_active):
                    return Violation(pos, spec.name, f"a follower of {p.name}: {_expected(reg, p, niching_active)}")
            if allowed is not None and not allowed(spec):
                return Violation(pos, spec.name, "a module allowed in this segment")
            prevs = [spec]
        return None

    niching = trunk[-1] if (trunk[-1].is_multi and trunk[-1].role == "Niching") else None
    for pos, spec in enumerate(trunk[1:], start=1):
        if spec.category in TAIL_CATEGORIES:
            return Violation(pos, spec.name, "tail modules only after the operator chains")
        if spec.is_multi and spec.role == "Niching" and pos != len(trunk) - 1:
            return Violation(pos, spec.name, "niching as the last trunk module")
    v = check_chain(trunk[1:], 1, [trunk[0]], False)
    if v:
        return v
    pos = len(trunk)
    if niching is None:
        if structure.branches:
            return Violation(pos, reg.get(structure.branches[0][0]).name if structure.branches[0] else "<empty branch>", "no branches without a niching module")
        finals = [trunk[-1]]
    else:
        if len(structure.branches) != niching.n_nich:
            return Violation(len(trunk) - 1, niching.name, f"{niching.n_nich} branches, found {len(structure.branches)}")
        finals = []
        for b in structure.branches:
            bspecs = [reg.get(i) for i in b]
            if not bspecs:
                return Violation(pos, "<empty branch>", "a non-empty operator chain")
            v = check_chain(
                bspecs, pos, [niching], True,
                allowed=lambda s: s.category not in TAIL_CATEGORIES and not (s.is_multi and s.role == "Niching"),
            )
            if v:
                return v
            pos += len(bspecs)
            finals.append(bspecs[-1])
    tail = [reg.get(i) for i in structure.tail]
    v = check_chain(tail[:1], pos, finals, niching is not None, allowed=lambda s: s.category in TAIL_CATEGORIES)
    if v:
        return v
    v = check_chain(tail[1:], pos + 1, tail[:1], False, allowed=lambda s: s.category in TAIL_CATEGORIES)
    if v:
        return v
    for off, spec in enumerate(tail[:-1]):
        if spec.category == "Completed":
            return Violation(pos + off, spec.name, "Completed only as the final module")
    families = {}
    for p, spec in enumerate(specs):
        if spec.family is not None:
            families.setdefault(spec.family, p)
    if len(families) > 1:
        p = max(families.values())
        return Violation(p, specs[p].name, "controllable modules of a single algorithm family")
    tag = structure.space_tag
    if tag != "ALL":
        for p, spec in enumerate(specs):
            if not in_space(spec, tag):
                return Violation(p, spec.name, f"modules of the {tag} space")
    return None


def is_valid(structure: AlgorithmStructure) -> bool:
    return validate(structure) is None


def to_json_obj(structure: AlgorithmStructure) -> dict:
    reg = structure.registry

    def seg(ids):
        return [{"id": reg.get(i).bits, "name": reg.get(i).name} for i in ids]

    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "space_tag": structure.space_tag,
        "trunk": seg(structure.trunk),
        "branches": [seg(b) for b in structure.branches],
        "tail": seg(structure.tail),
    }


def serialize(structure: AlgorithmStructure) -> str:
    v = validate(structure)
    if v is not None:
        raise StructureError(f"refusing to serialize an illegal structure: {v}")
    return json.dumps(to_json_obj(structure), indent=2, sort_keys=True) + "\n"


def parse(text: str, registry: Registry = REGISTRY) -> AlgorithmStructure:
    """Decode without validating (used by the validator front-ends)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructureError(f"malformed structure JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != FORMAT:
        raise StructureError("not a structure file")
    if obj.get("version") != FORMAT_VERSION:
        raise StructureError(f"unsupported structure version {obj.get('version')!r}")

    def ids(seq):
        out = []
        for entry in seq:
            try:
                spec = registry.get(entry["id"])
            except (KeyError, TypeError):
                raise StructureError(f"unknown module entry {entry!r}") from None
            if "name" in entry and entry["name"] != spec.name:
                raise StructureError(f"id {entry['id']} is {spec.name}, file says {entry['name']}")
            out.append(spec.id)
        return out

    try:
        return AlgorithmStructure(
            trunk=ids(obj["trunk"]),
            branches=[ids(b) for b in obj.get("branches", [])],
            tail=ids(obj["tail"]),
            space_tag=str(obj.get("space_tag", "ALL")).upper(),
            registry=registry,
        )
    except KeyError as exc:
        raise StructureError(f"missing field {exc}") from None


def deserialize(text: str, registry: Registry = REGISTRY) -> AlgorithmStructure:
    structure = parse(text, registry)
    v = validate(structure)
    if v is not None:
        raise StructureError(f"illegal structure: {v}")
    return structure


def from_names(names, space_tag: str = "ALL", registry: Registry = REGISTRY) -> AlgorithmStructure:
    """Build a branch-free structure from a flat list of module names.

    Leading modules up to the last chain module form the trunk; trailing
    tail-category modules form the tail.
    """
    ids = [registry.get(n).id for n in names]
    k = len(ids)
    while k > 0 and registry.get(ids[k - 1]).category in TAIL_CATEGORIES:
        k -= 1
    return AlgorithmStructure(trunk=ids[:k], tail=ids[k:], space_tag=space_tag, registry=registry)
