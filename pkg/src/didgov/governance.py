"""DID-specific governance configuration: groups, privileges and mechanisms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from .did import Did
from .errors import MalformedDocument


class Privilege(enum.IntEnum):
    """Group privilege levels, ordered from least (A) to full (D)."""

    A = 1
    B = 2
    C = 3
    D = 4

    @classmethod
    def parse(cls, text: Any) -> "Privilege":
        try:
            return cls[text]
        except (KeyError, TypeError):
            raise MalformedDocument(f"privilege must be one of A-D, got {text!r}") from None


class MechanismKind(str, enum.Enum):
    INDEPENDENT = "Independent"
    UNANIMITY = "Unanimity"
    N_OUT_OF_M = "NOutOfM"
    WEIGHTED_MAJORITY = "WeightedMajority"


@dataclass(frozen=True)
class CoordinationSpec:
    kind: MechanismKind
    n: int | None = None
    weights: Mapping[Did, int] | None = None
    threshold_numerator: int | None = None
    threshold_denominator: int | None = None

    def __post_init__(self) -> None:
        if self.kind is MechanismKind.N_OUT_OF_M:
            if not _pos_int(self.n):
                raise MalformedDocument("NOutOfM needs a positive integer n")
        elif self.n is not None:
            raise MalformedDocument(f"{self.kind.value} takes no n")
        if self.kind is MechanismKind.WEIGHTED_MAJORITY:
            if not self.weights or not all(_pos_int(w) for w in self.weights.values()):
                raise MalformedDocument("WeightedMajority needs positive integer weights")
            num, den = self.threshold_numerator, self.threshold_denominator
            if not (_pos_int(num) and _pos_int(den)) or num > den:
                raise MalformedDocument("threshold must satisfy 0 < numerator/denominator <= 1")
            # freeze the mapping so the mechanism stays hashable and immutable
            object.__setattr__(self, "weights", _FrozenWeights(self.weights))
        elif self.weights is not None or self.threshold_numerator is not None:
            raise MalformedDocument(f"{self.kind.value} takes no weights")

    @classmethod
    def independent(cls) -> "CoordinationSpec":
        return cls(MechanismKind.INDEPENDENT)

    @classmethod
    def unanimity(cls) -> "CoordinationSpec":
        return cls(MechanismKind.UNANIMITY)

    @classmethod
    def n_out_of_m(cls, n: int) -> "CoordinationSpec":
        return cls(MechanismKind.N_OUT_OF_M, n=n)

    @classmethod
    def weighted(cls, weights: Mapping[Did, int], numerator: int, denominator: int) -> "CoordinationSpec":
        return cls(MechanismKind.WEIGHTED_MAJORITY, weights=weights,
                   threshold_numerator=numerator, threshold_denominator=denominator)

    @property
    def threshold(self) -> Fraction:
        return Fraction(self.threshold_numerator, self.threshold_denominator)

    def check_members(self, members: tuple[Did, ...]) -> None:
        if self.kind is MechanismKind.N_OUT_OF_M and self.n > len(members):
            raise MalformedDocument(f"NOutOfM n={self.n} exceeds group size {len(members)}")
        if self.kind is MechanismKind.WEIGHTED_MAJORITY and set(self.weights) != set(members):
            raise MalformedDocument("weights must be keyed exactly by the group members")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.n is not None:
            out["n"] = self.n
        if self.weights is not None:
            out["weights"] = {str(d): w for d, w in self.weights.items()}
            out["thresholdNumerator"] = self.threshold_numerator
            out["thresholdDenominator"] = self.threshold_denominator
        return out

    @classmethod
    def from_json(cls, data: Any) -> "CoordinationSpec":
        if not isinstance(data, dict):
            raise MalformedDocument("mechanism must be a JSON object")
        allowed = {"kind", "n", "weights", "thresholdNumerator", "thresholdDenominator"}
        if set(data) - allowed:
            raise MalformedDocument(f"unknown mechanism properties {sorted(set(data) - allowed)}")
        try:
            kind = MechanismKind(data.get("kind"))
        except ValueError:
            raise MalformedDocument(f"unknown mechanism {data.get('kind')!r}") from None
        weights = data.get("weights")
        if weights is not None:
            if not isinstance(weights, dict):
                raise MalformedDocument("weights must be an object")
            weights = {Did.parse(k): v for k, v in weights.items()}
        return cls(
            kind,
            n=data.get("n"),
            weights=weights,
            threshold_numerator=data.get("thresholdNumerator"),
            threshold_denominator=data.get("thresholdDenominator"),
        )


class _FrozenWeights(dict):
    def __hash__(self) -> int:  # type: ignore[override]
        return hash(frozenset(self.items()))

    def _readonly(self, *args, **kwargs):
        raise TypeError("weights are immutable")

    __setitem__ = __delitem__ = update = pop = popitem = clear = setdefault = _readonly


@dataclass(frozen=True)
class GroupConfig:
    members: tuple[Did, ...]
    privilege: Privilege
    mechanism: CoordinationSpec
    time_limit: int | None = None

    def __post_init__(self) -> None:
        if not self.members:
            raise MalformedDocument("group needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise MalformedDocument("duplicate group member")
        if self.time_limit is not None and not _pos_int(self.time_limit):
            raise MalformedDocument("timeLimit must be a positive integer")
        self.mechanism.check_members(self.members)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "members": [str(m) for m in self.members],
            "privilege": self.privilege.name,
            "mechanism": self.mechanism.to_json(),
        }
        if self.time_limit is not None:
            out["timeLimit"] = self.time_limit
        return out

    @classmethod
    def from_json(cls, data: Any) -> "GroupConfig":
        if not isinstance(data, dict):
            raise MalformedDocument("group must be a JSON object")
        allowed = {"members", "privilege", "mechanism", "timeLimit"}
        if set(data) - allowed:
            raise MalformedDocument(f"unknown group properties {sorted(set(data) - allowed)}")
        members = data.get("members")
        if not isinstance(members, list):
            raise MalformedDocument("group members must be a list")
        if "mechanism" not in data:
            raise MalformedDocument("group has no mechanism")
        return cls(
            members=tuple(Did.parse(m) for m in members),
            privilege=Privilege.parse(data.get("privilege")),
            mechanism=CoordinationSpec.from_json(data["mechanism"]),
            time_limit=data.get("timeLimit"),
        )


@dataclass(frozen=True)
class GovernanceConfig:
    groups: Mapping[str, GroupConfig] = field(default_factory=dict)
    default_group: str | None = None
    config_version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", _FrozenGroups(self.groups))
        for gid in self.groups:
            if not isinstance(gid, str) or not gid:
                raise MalformedDocument("group ids must be non-empty strings")
        if self.default_group is not None and self.default_group not in self.groups:
            raise MalformedDocument(f"defaultGroup {self.default_group!r} is not a group")
        if not _pos_int(self.config_version):
            raise MalformedDocument("configVersion must be a positive integer")

    def has_full_privilege_group(self) -> bool:
        return any(g.privilege is Privilege.D for g in self.groups.values())

    def groups_of(self, member: Did) -> list[str]:
        return sorted(gid for gid, g in self.groups.items() if member in g.members)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "groups": {gid: g.to_json() for gid, g in self.groups.items()},
            "configVersion": self.config_version,
        }
        if self.default_group is not None:
            out["defaultGroup"] = self.default_group
        return out

    @classmethod
    def from_json(cls, data: Any) -> "GovernanceConfig":
        if not isinstance(data, dict):
            raise MalformedDocument("governance must be a JSON object")
        allowed = {"groups", "defaultGroup", "configVersion"}
        if set(data) - allowed:
            raise MalformedDocument(f"unknown governance properties {sorted(set(data) - allowed)}")
        groups = data.get("groups", {})
        if not isinstance(groups, dict):
            raise MalformedDocument("groups must be an object")
        return cls(
            groups={gid: GroupConfig.from_json(g) for gid, g in groups.items()},
            default_group=data.get("defaultGroup"),
            config_version=data.get("configVersion", 1),
        )


class _FrozenGroups(_FrozenWeights):
    pass


def _pos_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value > 0
