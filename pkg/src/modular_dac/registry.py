"""Registry of every operator variant: identity, configuration space and
topology rule.

A module id packs ``[controllable | category (6 bits) | index (9 bits)]``
into one 16-bit integer, most significant bit first.  Category codes are
namespaced by the controllable bit.

Topology rules are stored as sets of *slot tags*.  A slot tag names a
category, optionally qualified by an algorithm style (``"Mutation/DE"``
versus ``"Mutation/GA"``).  A Multi_Strategy variant occupies the slot of
its ensemble members (its ``role``) and is admitted wherever the
predecessor lists both ``Multi_Strategy`` and that role.  Multi_Niching
variants are the only niching entry point and are admitted directly after
an Initialization module.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Sequence

UNCONTROLLABLE_CATEGORIES = {
    "Initialization": 1,
    "Niching": 2,
    "Boundary_Control": 3,
    "Selection": 4,
    "Restart_Strategy": 5,
    "Population_Reduction": 6,
    "Completed": 7,
}
CONTROLLABLE_CATEGORIES = {
    "Mutation": 1,
    "Crossover": 2,
    "PSO_Update": 3,
    "Multi_Strategy": 4,
    "Information_Sharing": 5,
}
CATEGORIES = tuple(UNCONTROLLABLE_CATEGORIES) + tuple(CONTROLLABLE_CATEGORIES)

# random choice each time the default configuration is materialized
RANDOM_DEFAULT = "random"


class UnknownModuleError(KeyError):
    pass


def encode_id(controllable: int, category_code: int, index: int) -> int:
    controllable = int(controllable)
    if controllable not in (0, 1):
        raise ValueError(f"controllable bit must be 0 or 1, got {controllable}")
    if not 0 <= category_code <= 63:
        raise ValueError(f"category code out of range: {category_code}")
    codes = CONTROLLABLE_CATEGORIES if controllable else UNCONTROLLABLE_CATEGORIES
    if category_code not in codes.values():
        raise ValueError(f"category code {category_code} is not registered under bit {controllable}")
    if not 1 <= index <= 511:
        raise ValueError(f"index out of range: {index}")
    return (controllable << 15) | (category_code << 9) | index


def split_id(module_id: int) -> tuple[int, int, int]:
    return (module_id >> 15) & 1, (module_id >> 9) & 0x3F, module_id & 0x1FF


def category_name(controllable: int, code: int) -> str:
    codes = CONTROLLABLE_CATEGORIES if controllable else UNCONTROLLABLE_CATEGORIES
    for name, c in codes.items():
        if c == code:
            return name
    raise UnknownModuleError(f"no category {code} under controllable bit {controllable}")


def id_bits(module_id: int) -> str:
    c, cat, idx = split_id(module_id)
    return f"{c}-{cat:06b}-{idx:09b}"


def parse_id_bits(text: str) -> int:
    digits = text.replace("-", "").strip()
    if len(digits) != 16 or set(digits) - {"0", "1"}:
        raise ValueError(f"not a 16-bit id: {text!r}")
    return int(digits, 2)


def id_vector(module_id: int) -> list[int]:
    return [(module_id >> (15 - k)) & 1 for k in range(16)]


@dataclass(frozen=True)
class ConfigParam:
    name: str
    kind: str  # "continuous" or "categorical"
    low: float = 0.0
    high: float = 1.0
    options: tuple = ()
    default: Any = None

    def __post_init__(self):
        if self.kind == "continuous":
            if not self.low < self.high:
                raise ValueError(f"{self.name}: empty range [{self.low}, {self.high}]")
            if not self.low <= self.default <= self.high:
                raise ValueError(f"{self.name}: default {self.default} outside range")
        elif self.kind == "categorical":
            if not self.options:
                raise ValueError(f"{self.name}: categorical parameter needs options")
            if self.default != RANDOM_DEFAULT and self.default not in self.options:
                raise ValueError(f"{self.name}: default {self.default!r} not an option")
        else:
            raise ValueError(f"unknown parameter kind {self.kind!r}")

    def summary(self) -> str:
        if self.kind == "continuous":
            return f"{self.name}∈[{self.low:g},{self.high:g}]={self.default:g}"
        return f"{self.name}∈{{{','.join(map(str, self.options))}}}={self.default}"


def _cont(name, low, high, default):
    return ConfigParam(name, "continuous", low=low, high=high, default=default)


def _cat(name, options, default=RANDOM_DEFAULT):
    return ConfigParam(name, "categorical", options=tuple(options), default=default)


@dataclass(frozen=True)
class SubModuleSpec:
    id: int
    name: str
    category: str
    slot: str
    followers: frozenset
    config_space: tuple = ()
    family: str | None = None  # "DE", "PSO_GA" or None when shared
    members: tuple = ()  # ensemble member names for Multi_Strategy
    role: str | None = None  # slot occupied by a Multi_Strategy ensemble
    n_nich: int | None = None
    description: str = ""

    @property
    def controllable(self) -> bool:
        return bool(self.id >> 15)

    @property
    def bits(self) -> str:
        return id_bits(self.id)

    @property
    def config_size(self) -> int:
        return len(self.config_space)

    @property
    def is_multi(self) -> bool:
        return self.category == "Multi_Strategy"

    def param(self, name: str) -> ConfigParam:
        for p in self.config_space:
            if p.name == name:
                return p
        raise KeyError(name)

    def get_default_config(self) -> dict:
        return {p.name: p.default for p in self.config_space}

    def summary(self) -> str:
        space = "; ".join(p.summary() for p in self.config_space) or "-"
        return f"{self.bits}  {self.name:<34} {self.category:<21} {space}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bits": self.bits,
            "name": self.name,
            "category": self.category,
            "controllable": self.controllable,
            "slot": self.slot,
            "followers": sorted(self.followers),
            "family": self.family,
            "members": list(self.members),
            "role": self.role,
            "n_nich": self.n_nich,
            "config_space": [
                {
                    "name": p.name,
                    "kind": p.kind,
                    **({"range": [p.low, p.high]} if p.kind == "continuous" else {"options": list(p.options)}),
                    "default": p.default,
                }
                for p in self.config_space
            ],
            "description": self.description,
        }


# follower sets quoted from the topology-rule column
_AFTER_INIT = frozenset({"Mutation/DE", "PSO_Update", "Crossover/GA", "Multi_Strategy"})
_AFTER_DE_MUT = frozenset({"Crossover/DE", "Multi_Strategy"})
_TO_BC = frozenset({"Boundary_Control", "Multi_Strategy"})
_AFTER_GA_CROSS = frozenset({"Mutation/GA", "Multi_Strategy"})
_AFTER_BC = frozenset({"Selection"})
_AFTER_SEL = frozenset({"Restart_Strategy", "Population_Reduction", "Completed", "Information_Sharing"})
_AFTER_RESTART = frozenset({"Completed"})
_AFTER_REDUCTION = frozenset({"Restart_Strategy", "Completed"})
_AFTER_SHARING = frozenset({"Population_Reduction", "Completed"})

F12 = (_cont("F1", 0, 1, 0.5), _cont("F2", 0, 1, 0.5))
F1 = (_cont("F1", 0, 1, 0.5),)
P05 = _cont("p", 0, 1, 0.05)


def _u(cat: str, index: int, name: str, slot: str, followers, description: str = "", **kw) -> SubModuleSpec:
    return SubModuleSpec(
        id=encode_id(0, UNCONTROLLABLE_CATEGORIES[cat], index),
        name=name,
        category=cat,
        slot=slot,
        followers=frozenset(followers),
        description=description,
        **kw,
    )


def _c(cat: str, index: int, name: str, slot: str, followers, space, family, description: str = "", **kw):
    return SubModuleSpec(
        id=encode_id(1, CONTROLLABLE_CATEGORIES[cat], index),
        name=name,
        category=cat,
        slot=slot,
        followers=frozenset(followers),
        config_space=tuple(space),
        family=family,
        description=description,
        **kw,
    )


def _base_specs() -> list[SubModuleSpec]:
    s: list[SubModuleSpec] = []
    for i, (name, desc) in enumerate(
        [
            ("Uniform", "x ~ U(lb, ub)"),
            ("Sobol", "scrambled Sobol' sequence"),
            ("LHS", "Latin hypercube sample"),
            ("Halton", "scrambled Halton sequence"),
            ("Normal", "x ~ N((ub+lb)/2, (ub-lb)/6), clipped"),
        ],
        start=1,
    ):
        s.append(_u("Initialization", i, name, "Initialization", _AFTER_INIT, desc))
    for i, name in enumerate(["Rand", "Ranking", "Distance"], start=1):
        s.append(_u("Niching", i, f"Niching_{name}", "Niching", _AFTER_INIT))
    for i, name in enumerate(["Clip", "Rand", "Periodic", "Reflect", "Halving"], start=1):
        s.append(_u("Boundary_Control", i, f"BC_{name}", "Boundary_Control", _AFTER_BC))
    for i, name in enumerate(["DE-like", "Crowding", "PSO-like", "Ranking", "Tournament", "Roulette"], start=1):
        s.append(_u("Selection", i, f"Sel_{name}", "Selection", _AFTER_SEL))
    for i, name in enumerate(
        ["Stagnation", "Obj_Convergence", "Solution_Convergence", "Obj&Solution_Convergence"], start=1
    ):
        s.append(_u("Restart_Strategy", i, f"Restart_{name}", "Restart_Strategy", _AFTER_RESTART))
    s.append(_u("Population_Reduction", 1, "Linear_Reduction", "Population_Reduction", _AFTER_REDUCTION))
    s.append(_u("Population_Reduction", 2, "Non-Linear_Reduction", "Population_Reduction", _AFTER_REDUCTION))
    s.append(_u("Completed", 1, "Completed", "Completed", ()))

    de_mut = [
        ("DE/rand/1", F1),
        ("DE/rand/2", F12),
        ("DE/best/1", F1),
        ("DE/best/2", F12),
        ("DE/current-to-best/1", F12),
        ("DE/current-to-rand/1", F12),
        ("DE/rand-to-best/1", F1),
        ("DE/current-to-pbest/1", F12 + (P05,)),
        ("DE/current-to-pbest/1+archive", F12 + (P05,)),
        ("DE/weighted-rand-to-pbest/1", F12 + (P05,)),
        ("DE/current-to-rand/1+archive", F12),
    ]
    for i, (name, space) in enumerate(de_mut, start=1):
        s.append(_c("Mutation", i, name, "Mutation/DE", _AFTER_DE_MUT, space, "DE"))
    s.append(_c("Mutation", 12, "Gaussian_mutation", "Mutation/GA", _TO_BC, [_cont("sigma", 0, 1, 0.1)], "PSO_GA"))
    s.append(_c("Mutation", 13, "Polynomial_mutation", "Mutation/GA", _TO_BC, [_cont("eta_m", 20, 100, 20)], "PSO_GA"))

    cr = _cont("Cr", 0, 1, 0.9)
    s.append(_c("Crossover", 1, "Binomial", "Crossover/DE", _TO_BC, [cr], "DE"))
    s.append(_c("Crossover", 2, "Exponential", "Crossover/DE", _TO_BC, [cr], "DE"))
    s.append(_c("Crossover", 3, "qbest_Binomial", "Crossover/DE", _TO_BC, [cr, _cont("p", 0, 1, 0.5)], "DE"))
    s.append(
        _c("Crossover", 4, "qbest_Binomial+archive", "Crossover/DE", _TO_BC, [cr, _cont("p", 0, 1, 0.18)], "DE")
    )
    s.append(_c("Crossover", 5, "SBX", "Crossover/GA", _AFTER_GA_CROSS, [_cont("eta_c", 20, 100, 20)], "PSO_GA"))
    s.append(_c("Crossover", 6, "Arithmetic", "Crossover/GA", _AFTER_GA_CROSS, [_cont("alpha", 0, 1, 0.5)], "PSO_GA"))

    w07 = _cont("w", 0.4, 0.9, 0.7)
    c_pso = (_cont("c1", 0, 2, 1.49445), _cont("c2", 0, 2, 1.49445))
    s.append(_c("PSO_Update", 1, "Vanilla_PSO", "PSO_Update", _TO_BC, (w07,) + c_pso, "PSO_GA"))
    fdr_space = (_cont("w", 0.4, 0.9, 0.729), _cont("c1", 0, 2, 1.0), _cont("c2", 0, 2, 1.0), _cont("c3", 0, 2, 2.0))
    s.append(_c("PSO_Update", 2, "FDR_PSO", "PSO_Update", _TO_BC, fdr_space, "PSO_GA"))
    s.append(_c("PSO_Update", 3, "CLPSO", "PSO_Update", _TO_BC, (w07,) + c_pso, "PSO_GA"))

    s.append(
        _c(
            "Information_Sharing",
            1,
            "Sharing",
            "Information_Sharing",
            _AFTER_SHARING,
            [_cat("target", (1, 2, 3, 4))],
            None,
            "replace the worst of this sub-population by the best of the target",
        )
    )
    return s


# explicitly specified ensembles; parameters listed after the op selector
_MULTI = [
    (1, "Multi_Niching_2", "Niching", ("Niching_Rand", "Niching_Ranking", "Niching_Distance"), _AFTER_INIT, {}, "Niching_Rand", 2, None),
    (2, "Multi_Niching_3", "Niching", ("Niching_Rand", "Niching_Ranking", "Niching_Distance"), _AFTER_INIT, {}, "Niching_Rand", 3, None),
    (3, "Multi_Niching_4", "Niching", ("Niching_Rand", "Niching_Ranking", "Niching_Distance"), _AFTER_INIT, {}, "Niching_Rand", 4, None),
    (4, "Multi_BC", "Boundary_Control", ("BC_Clip", "BC_Rand", "BC_Periodic", "BC_Reflect", "BC_Halving"), _AFTER_BC, {}, "BC_Clip", None, None),
    (5, "Multi_Mutation_1", "Mutation/DE", ("DE/current-to-pbest/1+archive", "DE/current-to-rand/1+archive", "DE/weighted-rand-to-pbest/1"), {"Crossover/DE"}, {"p": 0.18}, RANDOM_DEFAULT, None, None),
    (6, "Multi_Mutation_2", "Mutation/DE", ("DE/rand/1", "DE/rand/2", "DE/current-to-rand/1"), {"Crossover/DE"}, {}, RANDOM_DEFAULT, None, None),
    (7, "Multi_Mutation_3", "Mutation/DE", ("DE/rand/1", "DE/best/2", "DE/current-to-rand/1"), {"Crossover/DE"}, {}, RANDOM_DEFAULT, None, None),
    (8, "Multi_Crossover_1", "Crossover/DE", ("Binomial", "qbest_Binomial+archive"), {"Boundary_Control"}, {}, RANDOM_DEFAULT, None, ("Cr",)),
    (9, "Multi_Crossover_2", "Crossover/DE", ("Binomial", "Exponential"), {"Boundary_Control"}, {}, RANDOM_DEFAULT, None, None),
    (10, "Multi_PSO_1", "PSO_Update", ("FDR_PSO", "CLPSO"), {"Boundary_Control"}, {}, RANDOM_DEFAULT, None, None),
]
# further ensembles assembled with the generic combinator
_EXTRA_MULTI = [
    (11, "Multi_GA_Crossover", ("SBX", "Arithmetic")),
    (12, "Multi_GA_Mutation", ("Gaussian_mutation", "Polynomial_mutation")),
    (13, "Multi_PSO_2", ("Vanilla_PSO", "FDR_PSO", "CLPSO")),
    (14, "Multi_Mutation_4", ("DE/best/1", "DE/current-to-best/1", "DE/current-to-pbest/1")),
    (15, "Multi_Crossover_3", ("Binomial", "Exponential", "qbest_Binomial")),
]

_PARAM_ORDER = ("F1", "F2", "Cr", "p", "sigma", "eta_m", "eta_c", "alpha", "w", "c1", "c2", "c3")


def combine_multi_strategy(
    index: int,
    name: str,
    members: Sequence[SubModuleSpec],
    *,
    followers: Iterable[str] | None = None,
    default_overrides: dict | None = None,
    op_default=RANDOM_DEFAULT,
    n_nich: int | None = None,
    role: str | None = None,
    only: Sequence[str] | None = None,
) -> SubModuleSpec:
    """Build a Multi_Strategy ensemble from same-slot members.

    The first configuration selects the member, the remaining ones are the
    union of the members' parameters (first member wins on shared names).
    Unless given, followers are the members' followers minus
    Multi_Strategy.  ``only`` restricts the exposed parameters; members
    then run the hidden ones at their own defaults.
    """
    if not members:
        raise ValueError("an ensemble needs at least one member")
    slots = {m.slot for m in members}
    if len(slots) != 1:
        raise ValueError(f"ensemble members must share one slot, got {sorted(slots)}")
    role = role or slots.pop()
    params: dict[str, ConfigParam] = {}
    for m in members:
        for p in m.config_space:
            if only is None or p.name in only:
                params.setdefault(p.name, p)
    overrides = default_overrides or {}
    ordered = sorted(params.values(), key=lambda p: _PARAM_ORDER.index(p.name) if p.name in _PARAM_ORDER else 99)
    space = [_cat("op", tuple(m.name for m in members), op_default)]
    for p in ordered:
        if p.name in overrides:
            p = _cont(p.name, p.low, p.high, overrides[p.name])
        space.append(p)
    if followers is None:
        followers = set().union(*(m.followers for m in members)) - {"Multi_Strategy"}
    families = {m.family for m in members} - {None}
    if len(families) > 1:
        raise ValueError("an ensemble cannot mix algorithm families")
    return _c(
        "Multi_Strategy",
        index,
        name,
        "Multi_Strategy",
        followers,
        space,
        families.pop() if families else None,
        members=tuple(m.name for m in members),
        role=role,
        n_nich=n_nich,
    )


class Registry:
    """Immutable lookup over all sub-module variants."""

    def __init__(self, specs: Iterable[SubModuleSpec]):
        self._specs = tuple(specs)
        self._by_id = {}
        self._by_name = {}
        for spec in self._specs:
            if spec.id in self._by_id:
                raise ValueError(f"duplicate module id {spec.bits}")
            if spec.name in self._by_name:
                raise ValueError(f"duplicate module name {spec.name}")
            if spec.controllable != bool(spec.config_space):
                raise ValueError(f"{spec.name}: controllable iff config space non-empty")
            self._by_id[spec.id] = spec
            self._by_name[spec.name] = spec

    def __iter__(self):
        return iter(self._specs)

    def __len__(self):
        return len(self._specs)

    def __contains__(self, key) -> bool:
        return key in self._by_id or key in self._by_name

    def get(self, key: int | str | SubModuleSpec) -> SubModuleSpec:
        if isinstance(key, SubModuleSpec):
            return key
        try:
            if isinstance(key, str):
                if key in self._by_name:
                    return self._by_name[key]
                return self._by_id[parse_id_bits(key)]
            return self._by_id[int(key)]
        except (KeyError, ValueError):
            raise UnknownModuleError(f"unknown module {key!r}") from None

    def by_category(self, category: str) -> list[SubModuleSpec]:
        return [s for s in self._specs if s.category.lower() == category.lower()]

    def members(self, spec: SubModuleSpec) -> list[SubModuleSpec]:
        return [self.get(n) for n in spec.members]

    @cached_property
    def c_max(self) -> int:
        return max(s.config_size for s in self._specs)

    @cached_property
    def digest(self) -> str:
        blob = json.dumps(self.to_json_obj(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json_obj(self) -> list[dict]:
        return [s.to_dict() for s in self._specs]

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_json_obj(), indent=indent)

    def decode_id(self, module_id: int) -> tuple[bool, str, int]:
        spec = self.get(module_id)
        c, cat, idx = split_id(spec.id)
        return bool(c), category_name(c, cat), idx

    def is_legal_follower(self, prev: SubModuleSpec, cand: SubModuleSpec, niching_active: bool) -> bool:
        if cand.category == "Initialization":
            return False
        if cand.is_multi:
            if "Multi_Strategy" not in prev.followers:
                return False
            if cand.role == "Niching":
                return prev.category == "Initialization" and not niching_active
            return cand.role in prev.followers
        if cand.slot == "Information_Sharing":
            return niching_active and "Information_Sharing" in prev.followers
        return cand.slot in prev.followers

    def legal_followers(self, spec, niching_active: bool) -> list[SubModuleSpec]:
        spec = self.get(spec)
        return [c for c in self._specs if self.is_legal_follower(spec, c, niching_active)]


def build_registry() -> Registry:
    specs = _base_specs()
    by_name = {s.name: s for s in specs}
    for index, name, role, members, followers, overrides, op_default, n_nich, only in _MULTI:
        specs.append(
            combine_multi_strategy(
                index,
                name,
                [by_name[m] for m in members],
                followers=followers,
                default_overrides=overrides,
                op_default=op_default,
                n_nich=n_nich,
                role=role,
                only=only,
            )
        )
    for index, name, members in _EXTRA_MULTI:
        specs.append(combine_multi_strategy(index, name, [by_name[m] for m in members]))
    return Registry(specs)


REGISTRY = build_registry()


def decode_id(module_id: int) -> tuple[bool, str, int]:
    return REGISTRY.decode_id(module_id)


def legal_followers(spec, niching_active: bool) -> list[SubModuleSpec]:
    return REGISTRY.legal_followers(spec, niching_active)
