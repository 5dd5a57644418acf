"""Patch algebra over DDO resource elements.

A patch is an ordered list of add/update/remove operations, each addressing
one resource element through a selector. Patches are applied atomically to
the JSON form of the document and governance config, and the result is
re-validated through the normal parsers.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass
from typing import Any

from . import canonical
from .did import RELATIONSHIPS, Did, DidDocument, VerificationMethod
from .errors import (
    DuplicateEntry,
    LockoutRisk,
    MalformedDocument,
    MalformedPatch,
    SelectorNotFound,
    StalePatch,
    SubjectImmutable,
)
from .governance import CoordinationSpec, GovernanceConfig, GroupConfig

STATUS_TARGET = "status"
STATUS_INVALID = "invalid"


class Op(str, enum.Enum):
    ADD = "add"
    UPDATE = "update"
    REMOVE = "remove"


class ResourceKind(str, enum.Enum):
    VERIFICATION_METHOD = "VerificationMethodEntry"
    RELATIONSHIP = "RelationshipEntry"
    CONTROLLER = "ControllerEntry"
    ALSO_KNOWN_AS = "AlsoKnownAsEntry"
    SERVICE = "ServiceEntry"
    TRUSTEE = "TrusteeEntry"
    GROUP = "GroupEntry"
    MECHANISM_OF_GROUP = "MechanismOfGroup"
    STATUS = "StatusFlag"
    # never applicable; exists so that attempts are reported as SubjectImmutable
    SUBJECT_ID = "SubjectId"


FUNCTIONAL_KINDS = frozenset({
    ResourceKind.VERIFICATION_METHOD,
    ResourceKind.RELATIONSHIP,
    ResourceKind.ALSO_KNOWN_AS,
    ResourceKind.SERVICE,
})
_UPDATE_ONLY = frozenset({ResourceKind.STATUS, ResourceKind.MECHANISM_OF_GROUP})
GOVERNANCE_KINDS = frozenset({ResourceKind.GROUP, ResourceKind.MECHANISM_OF_GROUP})


@dataclass(frozen=True)
class ResourceSelector:
    kind: ResourceKind
    target_id: str

    def __post_init__(self) -> None:
        if not isinstance(self.target_id, str) or not self.target_id:
            raise MalformedPatch("selector targetId must be a non-empty string")

    def relationship_target(self) -> tuple[str, str]:
        """``(section, method id)`` for relationship selectors (``section:methodId``)."""
        section, sep, method_id = self.target_id.partition(":")
        if not sep or section not in RELATIONSHIPS or not method_id:
            raise MalformedPatch(
                f"relationship targetId must look like '<section>:<method id>', got {self.target_id!r}"
            )
        return section, method_id

    def to_json(self) -> dict[str, str]:
        return {"kind": self.kind.value, "targetId": self.target_id}


@dataclass(frozen=True, eq=False)
class PatchOp:
    op: Op
    selector: ResourceSelector
    payload: Any = None

    def __post_init__(self) -> None:
        if self.op is Op.REMOVE and self.payload is not None:
            raise MalformedPatch("remove takes no payload")
        if self.op is not Op.REMOVE and self.payload is None:
            raise MalformedPatch(f"{self.op.value} needs a payload")
        if self.selector.kind in _UPDATE_ONLY and self.op is not Op.UPDATE:
            raise MalformedPatch(f"{self.selector.kind.value} admits only update")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PatchOp) and self.to_json() == other.to_json()

    def __hash__(self) -> int:
        return hash(canonical.dumps(self.to_json()))

    def to_json(self) -> dict[str, Any]:
        out = {"op": self.op.value, "selector": self.selector.to_json()}
        if self.payload is not None:
            out["payload"] = self.payload
        return out

    @classmethod
    def from_json(cls, data: Any) -> "PatchOp":
        if not isinstance(data, dict) or set(data) - {"op", "selector", "payload"}:
            raise MalformedPatch("patch op must be {op, selector, payload?}")
        sel = data.get("selector")
        if not isinstance(sel, dict) or set(sel) != {"kind", "targetId"}:
            raise MalformedPatch("selector must be {kind, targetId}")
        try:
            op = Op(data.get("op"))
            kind = ResourceKind(sel["kind"])
        except ValueError as exc:
            raise MalformedPatch(str(exc)) from None
        return cls(op, ResourceSelector(kind, sel["targetId"]), copy.deepcopy(data.get("payload")))


@dataclass(frozen=True)
class UpdatePatch:
    base_version: int
    ops: tuple[PatchOp, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.base_version, int) or isinstance(self.base_version, bool) or self.base_version < 1:
            raise MalformedPatch("baseVersion must be a positive integer")
        if not self.ops:
            raise MalformedPatch("patch needs at least one op")
        selectors = [o.selector for o in self.ops]
        if len(set(selectors)) != len(selectors):
            raise MalformedPatch("two ops target the same selector")

    def to_json(self) -> dict[str, Any]:
        return {"baseVersion": self.base_version, "ops": [o.to_json() for o in self.ops]}

    @classmethod
    def from_json(cls, data: Any) -> "UpdatePatch":
        if not isinstance(data, dict) or set(data) != {"baseVersion", "ops"}:
            raise MalformedPatch("patch must be {baseVersion, ops}")
        if not isinstance(data["ops"], list):
            raise MalformedPatch("ops must be a list")
        return cls(data["baseVersion"], tuple(PatchOp.from_json(o) for o in data["ops"]))

    def invalidates(self) -> bool:
        return any(o.selector.kind is ResourceKind.STATUS for o in self.ops)


def parse_patch(text: str | bytes) -> UpdatePatch:
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedPatch(f"invalid JSON: {exc}") from exc
    return UpdatePatch.from_json(data)


class ClassKind(str, enum.Enum):
    FUNCTIONAL = "Functional"
    OWN_GROUP_GOVERNANCE = "OwnGroupGovernance"
    GROUP_CREATION = "GroupCreation"
    FULL_GOVERNANCE = "FullGovernance"
    STATUS = "Status"


@dataclass(frozen=True)
class ResourceClass:
    kind: ClassKind
    group_id: str | None = None

    def __str__(self) -> str:
        return f"{self.kind.value}({self.group_id})" if self.group_id else self.kind.value


def classify_op(op: PatchOp) -> ResourceClass:
    kind = op.selector.kind
    if kind in FUNCTIONAL_KINDS:
        return ResourceClass(ClassKind.FUNCTIONAL)
    if kind is ResourceKind.STATUS:
        return ResourceClass(ClassKind.STATUS)
    if kind in GOVERNANCE_KINDS and op.op is Op.UPDATE:
        return ResourceClass(ClassKind.OWN_GROUP_GOVERNANCE, op.selector.target_id)
    if kind is ResourceKind.GROUP and op.op is Op.ADD:
        return ResourceClass(ClassKind.GROUP_CREATION)
    return ResourceClass(ClassKind.FULL_GOVERNANCE)


# --- application -------------------------------------------------------------


def apply_patch(
    doc: DidDocument,
    gov: GovernanceConfig,
    patch: UpdatePatch,
    *,
    current_version: int | None = None,
) -> tuple[DidDocument, GovernanceConfig]:
    """Apply every op of ``patch`` in order, all or nothing.

    ``current_version`` is the version of ``doc`` in its registry; when given,
    it must equal the patch's base version.
    """
    if current_version is not None and patch.base_version != current_version:
        raise StalePatch(f"patch is based on version {patch.base_version}, document is at {current_version}")
    d = doc.to_json()
    g = gov.to_json()
    touched_gov = False
    for op in patch.ops:
        _APPLIERS[op.selector.kind](d, g, op)
        touched_gov = touched_gov or op.selector.kind in GOVERNANCE_KINDS
    if touched_gov:
        g["configVersion"] = gov.config_version + 1
    new_doc = DidDocument.from_json(d)
    new_gov = GovernanceConfig.from_json(g)
    if new_doc.id != doc.id:
        raise SubjectImmutable("the subject identifier cannot change")
    if not new_gov.has_full_privilege_group():
        raise LockoutRisk("patch would leave no group with privilege D")
    return new_doc, new_gov


def _find(items: list, key, target) -> int | None:
    for i, item in enumerate(items):
        if key(item) == target:
            return i
    return None


def _keyed_list_op(items: list, key, op: PatchOp, new_item, what: str) -> None:
    """Add/update/remove in a list whose entries are identified by ``key``."""
    target = op.selector.target_id
    idx = _find(items, key, target)
    if op.op is Op.ADD:
        if idx is not None:
            raise DuplicateEntry(f"{what} {target!r} already exists")
        items.append(new_item)
    elif idx is None:
        raise SelectorNotFound(f"no {what} {target!r}")
    elif op.op is Op.UPDATE:
        new_key = key(new_item)
        if new_key != target and _find(items, key, new_key) is not None:
            raise DuplicateEntry(f"{what} {new_key!r} already exists")
        items[idx] = new_item
    else:
        del items[idx]


def _same_id(op: PatchOp, payload_id: Any, what: str) -> None:
    if payload_id != op.selector.target_id:
        raise MalformedPatch(f"{what} payload id {payload_id!r} does not match targetId")


def _vm_payload(op: PatchOp) -> dict:
    try:
        vm = VerificationMethod.from_json(op.payload)
    except MalformedDocument as exc:
        raise MalformedPatch(f"bad verification method payload: {exc}") from exc
    return vm.to_json()


def _all_method_ids(d: dict) -> set[str]:
    ids = {vm["id"] for vm in d.get("verificationMethod", [])}
    for name in RELATIONSHIPS:
        ids.update(e["id"] for e in d.get(name, []) if isinstance(e, dict))
    return ids


def _apply_vm(d: dict, g: dict, op: PatchOp) -> None:
    items = d.setdefault("verificationMethod", [])
    new = None
    if op.op is not Op.REMOVE:
        new = _vm_payload(op)
        _same_id(op, new["id"], "verification method")
    if op.op is Op.ADD and op.selector.target_id in _all_method_ids(d):
        raise DuplicateEntry(f"verification method {op.selector.target_id!r} already exists")
    _keyed_list_op(items, lambda vm: vm["id"], op, new, "verification method")


def _apply_relationship(d: dict, g: dict, op: PatchOp) -> None:
    section, method_id = op.selector.relationship_target()
    items = d.setdefault(section, [])
    new = None
    if op.op is not Op.REMOVE:
        if isinstance(op.payload, str):
            new = op.payload
        else:
            new = _vm_payload(op)
        if (new if isinstance(new, str) else new["id"]) != method_id:
            raise MalformedPatch("relationship payload does not match targetId")
    idx = _find(items, lambda e: e if isinstance(e, str) else e["id"], method_id)
    if op.op is Op.ADD:
        if idx is not None:
            raise DuplicateEntry(f"{section} already lists {method_id!r}")
        if isinstance(new, dict) and method_id in _all_method_ids(d):
            raise DuplicateEntry(f"verification method {method_id!r} already exists")
        items.append(new)
    elif idx is None:
        raise SelectorNotFound(f"{section} does not list {method_id!r}")
    elif op.op is Op.UPDATE:
        items[idx] = new
    else:
        del items[idx]


def _did_value(text: Any) -> str:
    return str(Did.parse(text))


def _value_list(field_name: str, what: str, parse=lambda v: v):
    def apply(d: dict, g: dict, op: PatchOp) -> None:
        items = d.setdefault(field_name, [])
        target = parse(op.selector.target_id)
        new = None
        if op.op is not Op.REMOVE:
            if not isinstance(op.payload, str) or not op.payload:
                raise MalformedPatch(f"{what} payload must be a non-empty string")
            new = parse(op.payload)
            if op.op is Op.ADD and new != target:
                raise MalformedPatch(f"{what} payload does not match targetId")
        shifted = PatchOp(op.op, ResourceSelector(op.selector.kind, target), op.payload)
        _keyed_list_op(items, lambda v: v, shifted, new, what)

    return apply


def _apply_service(d: dict, g: dict, op: PatchOp) -> None:
    items = d.setdefault("service", [])
    new = None
    if op.op is not Op.REMOVE:
        if not isinstance(op.payload, dict):
            raise MalformedPatch("service payload must be an object")
        _same_id(op, op.payload.get("id"), "service")
        new = copy.deepcopy(op.payload)
    _keyed_list_op(items, lambda s: s.get("id"), op, new, "service")


def _apply_group(d: dict, g: dict, op: PatchOp) -> None:
    groups = g["groups"]
    gid = op.selector.target_id
    if op.op is Op.ADD:
        if gid in groups:
            raise DuplicateEntry(f"group {gid!r} already exists")
    elif gid not in groups:
        raise SelectorNotFound(f"no group {gid!r}")
    if op.op is Op.REMOVE:
        del groups[gid]
        if g.get("defaultGroup") == gid:
            del g["defaultGroup"]
        return
    try:
        groups[gid] = GroupConfig.from_json(op.payload).to_json()
    except MalformedDocument as exc:
        raise MalformedPatch(f"bad group payload: {exc}") from exc


def _apply_mechanism(d: dict, g: dict, op: PatchOp) -> None:
    gid = op.selector.target_id
    if gid not in g["groups"]:
        raise SelectorNotFound(f"no group {gid!r}")
    try:
        g["groups"][gid]["mechanism"] = CoordinationSpec.from_json(op.payload).to_json()
    except MalformedDocument as exc:
        raise MalformedPatch(f"bad mechanism payload: {exc}") from exc


def _apply_status(d: dict, g: dict, op: PatchOp) -> None:
    # status is registry metadata; validated here, recorded by the ledger
    if op.selector.target_id != STATUS_TARGET:
        raise SelectorNotFound(f"status selector must target {STATUS_TARGET!r}")
    if op.payload != STATUS_INVALID:
        raise MalformedPatch(f"status can only be set to {STATUS_INVALID!r}")


def _apply_subject(d: dict, g: dict, op: PatchOp) -> None:
    raise SubjectImmutable("the subject identifier cannot be added, updated or removed")


_APPLIERS = {
    ResourceKind.VERIFICATION_METHOD: _apply_vm,
    ResourceKind.RELATIONSHIP: _apply_relationship,
    ResourceKind.CONTROLLER: _value_list("controller", "controller", _did_value),
    ResourceKind.ALSO_KNOWN_AS: _value_list("alsoKnownAs", "alsoKnownAs entry"),
    ResourceKind.SERVICE: _apply_service,
    ResourceKind.TRUSTEE: _value_list("trustees", "trustee", _did_value),
    ResourceKind.GROUP: _apply_group,
    ResourceKind.MECHANISM_OF_GROUP: _apply_mechanism,
    ResourceKind.STATUS: _apply_status,
    ResourceKind.SUBJECT_ID: _apply_subject,
}
