"""DID identifiers and the DID document (DDO) model."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Iterator, Union

from . import canonical
from .crypto import KEY_TYPE, load_public_key
from .errors import MalformedDid, MalformedDocument, MalformedKey

if TYPE_CHECKING:
    from .governance import GovernanceConfig

_METHOD_RE = re.compile(r"[a-z0-9]+")
_MSID_RE = re.compile(r"[A-Za-z0-9._-]+")
_FRAGMENT_RE = re.compile(r"[A-Za-z0-9._-]+")

RELATIONSHIPS = ("authentication", "assertionMethod", "capabilityInvocation")


@dataclass(frozen=True, order=True)
class Did:
    method: str
    method_specific_id: str

    def __post_init__(self) -> None:
        if not _METHOD_RE.fullmatch(self.method or ""):
            raise MalformedDid(f"bad DID method {self.method!r}")
        if not _MSID_RE.fullmatch(self.method_specific_id or ""):
            raise MalformedDid(f"bad method-specific id {self.method_specific_id!r}")

    @classmethod
    def parse(cls, text: str) -> "Did":
        if not isinstance(text, str):
            raise MalformedDid(f"DID must be a string, got {type(text).__name__}")
        parts = text.split(":", 2)
        if len(parts) != 3 or parts[0] != "did":
            raise MalformedDid(f"not a DID: {text!r}")
        return cls(parts[1], parts[2])

    def __str__(self) -> str:
        return f"did:{self.method}:{self.method_specific_id}"


def split_did_url(url: str) -> tuple[Did, str]:
    """Split ``did:m:x#frag`` into its DID and fragment."""
    if not isinstance(url, str) or url.count("#") != 1:
        raise MalformedDid(f"not a fragment-qualified DID URL: {url!r}")
    base, frag = url.split("#")
    if not _FRAGMENT_RE.fullmatch(frag):
        raise MalformedDid(f"bad fragment in {url!r}")
    return Did.parse(base), frag


@dataclass(frozen=True)
class VerificationMethod:
    id: str
    controller: Did
    public_key: str
    key_type: str = KEY_TYPE

    def __post_init__(self) -> None:
        split_did_url(self.id)
        if self.key_type != KEY_TYPE:
            raise MalformedDocument(f"unsupported key type {self.key_type!r}")
        try:
            load_public_key(self.public_key)
        except MalformedKey as exc:
            raise MalformedDocument(f"{self.id}: {exc}") from exc

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "type": self.key_type,
            "controller": str(self.controller),
            "publicKeyBase64url": self.public_key,
        }

    @classmethod
    def from_json(cls, data: Any) -> "VerificationMethod":
        _expect_object(data, "verification method", {"id", "type", "controller", "publicKeyBase64url"})
        try:
            return cls(
                id=data["id"],
                controller=Did.parse(data["controller"]),
                public_key=data["publicKeyBase64url"],
                key_type=data["type"],
            )
        except KeyError as exc:
            raise MalformedDocument(f"verification method missing {exc}") from exc


@dataclass(frozen=True)
class Service:
    id: str
    type: str
    endpoint: str

    def __post_init__(self) -> None:
        for name in ("id", "type", "endpoint"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise MalformedDocument(f"service {name} must be a non-empty string")

    def to_json(self) -> dict[str, str]:
        return {"id": self.id, "type": self.type, "serviceEndpoint": self.endpoint}

    @classmethod
    def from_json(cls, data: Any) -> "Service":
        _expect_object(data, "service", {"id", "type", "serviceEndpoint"})
        try:
            return cls(data["id"], data["type"], data["serviceEndpoint"])
        except KeyError as exc:
            raise MalformedDocument(f"service missing {exc}") from exc


# A relationship entry is a reference (VM id) or an embedded method.
RelationshipEntry = Union[str, VerificationMethod]


def entry_id(entry: RelationshipEntry) -> str:
    return entry if isinstance(entry, str) else entry.id


@dataclass(frozen=True)
class DidDocument:
    id: Did
    controller: tuple[Did, ...] = ()
    verification_method: tuple[VerificationMethod, ...] = ()
    authentication: tuple[RelationshipEntry, ...] = ()
    assertion_method: tuple[RelationshipEntry, ...] = ()
    capability_invocation: tuple[RelationshipEntry, ...] = ()
    also_known_as: tuple[str, ...] = ()
    service: tuple[Service, ...] = ()
    trustees: tuple[Did, ...] = ()

    def __post_init__(self) -> None:
        _check_unique(self.controller, "controller")
        _check_unique(self.trustees, "trustee")
        _check_unique(self.also_known_as, "alsoKnownAs")
        _check_unique([s.id for s in self.service], "service id")
        declared = {vm.id for vm in self.verification_method}
        all_ids = [vm.id for vm in self.all_methods()]
        _check_unique(all_ids, "verification method id")
        for name in RELATIONSHIPS:
            section = self.relationship(name)
            _check_unique([entry_id(e) for e in section], f"{name} entry")
            for entry in section:
                if isinstance(entry, str) and entry not in declared:
                    raise MalformedDocument(f"{name} references unknown method {entry!r}")

    def relationship(self, name: str) -> tuple[RelationshipEntry, ...]:
        return getattr(self, _PY_NAMES[name])

    def all_methods(self) -> Iterator[VerificationMethod]:
        """Declared methods followed by methods embedded in relationship sections."""
        yield from self.verification_method
        for name in RELATIONSHIPS:
            for entry in self.relationship(name):
                if isinstance(entry, VerificationMethod):
                    yield entry

    def find_method(self, method_id: str) -> VerificationMethod | None:
        for vm in self.all_methods():
            if vm.id == method_id:
                return vm
        return None

    def methods_in(self, name: str) -> list[VerificationMethod]:
        """Resolved methods of one relationship section."""
        out = []
        for entry in self.relationship(name):
            out.append(self.find_method(entry) if isinstance(entry, str) else entry)
        return out

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": str(self.id)}
        if self.controller:
            out["controller"] = [str(d) for d in self.controller]
        if self.verification_method:
            out["verificationMethod"] = [vm.to_json() for vm in self.verification_method]
        for name in RELATIONSHIPS:
            section = self.relationship(name)
            if section:
                out[name] = [e if isinstance(e, str) else e.to_json() for e in section]
        if self.also_known_as:
            out["alsoKnownAs"] = list(self.also_known_as)
        if self.service:
            out["service"] = [s.to_json() for s in self.service]
        if self.trustees:
            out["trustees"] = [str(d) for d in self.trustees]
        return out

    @classmethod
    def from_json(cls, data: Any) -> "DidDocument":
        _expect_object(data, "document", set(_JSON_KEYS) | {"governance"})
        if "id" not in data:
            raise MalformedDocument("document has no id")
        kwargs: dict[str, Any] = {"id": Did.parse(data["id"])}
        kwargs["controller"] = tuple(Did.parse(d) for d in _list(data, "controller"))
        kwargs["verification_method"] = tuple(
            VerificationMethod.from_json(v) for v in _list(data, "verificationMethod")
        )
        for name in RELATIONSHIPS:
            entries = []
            for e in _list(data, name):
                if isinstance(e, str):
                    entries.append(e)
                else:
                    entries.append(VerificationMethod.from_json(e))
            kwargs[_PY_NAMES[name]] = tuple(entries)
        aka = _list(data, "alsoKnownAs")
        if not all(isinstance(a, str) and a for a in aka):
            raise MalformedDocument("alsoKnownAs entries must be non-empty strings")
        kwargs["also_known_as"] = tuple(aka)
        kwargs["service"] = tuple(Service.from_json(s) for s in _list(data, "service"))
        kwargs["trustees"] = tuple(Did.parse(d) for d in _list(data, "trustees"))
        return cls(**kwargs)


_PY_NAMES = {
    "authentication": "authentication",
    "assertionMethod": "assertion_method",
    "capabilityInvocation": "capability_invocation",
}
_JSON_KEYS = (
    "id",
    "controller",
    "verificationMethod",
    *RELATIONSHIPS,
    "alsoKnownAs",
    "service",
    "trustees",
)


def _expect_object(data: Any, what: str, allowed: set[str]) -> None:
    if not isinstance(data, dict):
        raise MalformedDocument(f"{what} must be a JSON object")
    extra = set(data) - allowed
    if extra:
        raise MalformedDocument(f"unknown {what} properties: {sorted(extra)}")


def _list(data: dict, key: str) -> list:
    value = data.get(key, [])
    if not isinstance(value, list):
        raise MalformedDocument(f"{key} must be a list")
    return value


def _check_unique(values: Iterable, what: str) -> None:
    seen = set()
    for v in values:
        if v in seen:
            raise MalformedDocument(f"duplicate {what}: {v}")
        seen.add(v)


def _load_json(text: str | bytes) -> Any:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc


def parse_document(text: str | bytes) -> DidDocument:
    """Parse DDO JSON. A sibling ``governance`` object is tolerated and ignored."""
    return DidDocument.from_json(_load_json(text))


def serialize_document(doc: DidDocument, gov: "GovernanceConfig | None" = None) -> bytes:
    data = doc.to_json()
    if gov is not None:
        data["governance"] = gov.to_json()
    return canonical.encode(data)


def parse_bundle(text: str | bytes) -> tuple[DidDocument, "GovernanceConfig"]:
    """Parse a DDO file carrying its ``governance`` section."""
    from .governance import GovernanceConfig

    data = _load_json(text)
    doc = DidDocument.from_json(data)
    if "governance" not in data:
        raise MalformedDocument("document has no governance section")
    return doc, GovernanceConfig.from_json(data["governance"])


def effective_controllers(doc: DidDocument) -> frozenset[Did]:
    """DIDs listed as controllers plus controllers of capabilityInvocation methods."""
    found = set(doc.controller)
    for vm in doc.methods_in("capabilityInvocation"):
        found.add(vm.controller)
    return frozenset(found)
