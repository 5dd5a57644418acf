"""Authorization proofs and the group privilege matrix.

Three proof types are accepted: a controller signature, a bearer token
issued by a trustee, and a credential issued by a trustee that is bound to a
holder DID (the holder proves control by signing the registry challenge).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Union

from . import canonical
from .crypto import KeyPair, Signature, sign, verify
from .did import Did, DidDocument, VerificationMethod, effective_controllers
from .errors import (
    BadSignature,
    ControlProofFailed,
    InvalidatedDid,
    MalformedDocument,
    NotAController,
    NotFound,
    TokenExhausted,
    TokenExpired,
    UntrustedIssuer,
)
from .governance import GovernanceConfig, GroupConfig, Privilege
from .patch import ClassKind, Op, PatchOp, ResourceKind, UpdatePatch, classify_op

if TYPE_CHECKING:
    from .ledger import Ledger

_NONCE_RE = re.compile(r"[0-9a-f]{32}")


def challenge(action: str, **context: Any) -> bytes:
    """Registry challenge bytes that a proof signs for one action."""
    return canonical.encode({"action": action, **context})


# --- permission matrix -------------------------------------------------------


class Effect(str, enum.Enum):
    ALLOW = "Allow"
    DENY = "Deny"


_A_RIGHTS = {(ClassKind.FUNCTIONAL, op) for op in Op}
_B_RIGHTS = _A_RIGHTS | {(ClassKind.OWN_GROUP_GOVERNANCE, Op.UPDATE)}
_C_RIGHTS = _B_RIGHTS | {(ClassKind.GROUP_CREATION, Op.ADD)}
_D_RIGHTS = {(ck, op) for ck in ClassKind for op in Op}

ALLOWED_RIGHTS: dict[Privilege, frozenset[tuple[ClassKind, Op]]] = {
    Privilege.A: frozenset(_A_RIGHTS),
    Privilege.B: frozenset(_B_RIGHTS),
    Privilege.C: frozenset(_C_RIGHTS),
    Privilege.D: frozenset(_D_RIGHTS),
}

PERMISSION_MATRIX: dict[tuple[Privilege, ClassKind, Op], Effect] = {
    (p, ck, op): Effect.ALLOW if (ck, op) in ALLOWED_RIGHTS[p] else Effect.DENY
    for p in Privilege
    for ck in ClassKind
    for op in Op
}


def effective_class(group_id: str, op: PatchOp, gov: GovernanceConfig) -> ClassKind:
    """Class of ``op`` as seen by a member of ``group_id``.

    Governance of another group, a change of one's own privilege, and creating
    a group above privilege A all count as full governance.
    """
    cls = classify_op(op)
    if cls.kind is ClassKind.OWN_GROUP_GOVERNANCE:
        if cls.group_id != group_id:
            return ClassKind.FULL_GOVERNANCE
        if op.selector.kind is ResourceKind.GROUP:
            current = gov.groups.get(group_id)
            if current is None or _payload_privilege(op) != current.privilege.name:
                return ClassKind.FULL_GOVERNANCE
    if cls.kind is ClassKind.GROUP_CREATION and _payload_privilege(op) != Privilege.A.name:
        return ClassKind.FULL_GOVERNANCE
    return cls.kind


def _payload_privilege(op: PatchOp) -> Any:
    return op.payload.get("privilege") if isinstance(op.payload, dict) else None


def group_covers(group_id: str, group: GroupConfig, op: PatchOp, gov: GovernanceConfig) -> bool:
    key = (group.privilege, effective_class(group_id, op, gov), op.op)
    return PERMISSION_MATRIX[key] is Effect.ALLOW


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed

    @classmethod
    def allow(cls) -> "Decision":
        return cls(True)

    @classmethod
    def deny(cls, reason: str) -> "Decision":
        return cls(False, reason)


# --- tokens and credentials --------------------------------------------------


@dataclass(frozen=True)
class Usage:
    """How often a token may be consumed; ``limit`` is None when unlimited."""

    limit: int | None

    def __post_init__(self) -> None:
        if self.limit is not None and (not isinstance(self.limit, int) or self.limit < 1):
            raise MalformedDocument("usage count must be a positive integer")

    @classmethod
    def times(cls, k: int) -> "Usage":
        return cls(k)

    def encode(self) -> str:
        if self.limit is None:
            return "unlimited"
        return "once" if self.limit == 1 else f"times:{self.limit}"

    @classmethod
    def parse(cls, text: Any) -> "Usage":
        if text == "once":
            return cls(1)
        if text == "unlimited":
            return cls(None)
        if isinstance(text, str) and text.startswith("times:") and text[6:].isdigit():
            return cls(int(text[6:]))
        raise MalformedDocument(f"usage must be once, unlimited or times:<k>, got {text!r}")


ONCE = Usage(1)
UNLIMITED = Usage(None)


def _parse_scope(values: Any) -> tuple[ResourceKind, ...]:
    if not isinstance(values, list):
        raise MalformedDocument("scope must be a list of resource kinds")
    try:
        return tuple(ResourceKind(v) for v in values)
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from None


def _check_nonce(nonce: Any) -> None:
    if not isinstance(nonce, str) or not _NONCE_RE.fullmatch(nonce):
        raise MalformedDocument("nonce must be 16 bytes as 32 lowercase hex digits")


@dataclass(frozen=True)
class BearerToken:
    issuer: Did
    scope: tuple[ResourceKind, ...]
    usage: Usage
    nonce: str
    expiry: int | None = None
    signature: str = ""

    def __post_init__(self) -> None:
        _check_nonce(self.nonce)

    def body(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "issuer": str(self.issuer),
            "scope": [k.value for k in self.scope],
            "usage": self.usage.encode(),
            "nonce": self.nonce,
        }
        if self.expiry is not None:
            out["expiry"] = self.expiry
        return out

    def to_json(self) -> dict[str, Any]:
        return {**self.body(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Any) -> "BearerToken":
        _expect(data, {"issuer", "scope", "usage", "nonce", "expiry", "signature"}, "token")
        return cls(
            issuer=Did.parse(data["issuer"]),
            scope=_parse_scope(data["scope"]),
            usage=Usage.parse(data["usage"]),
            nonce=data["nonce"],
            expiry=data.get("expiry"),
            signature=data["signature"],
        )


@dataclass(frozen=True)
class BoundCredential:
    issuer: Did
    holder: Did
    scope: tuple[ResourceKind, ...]
    usage: Usage
    nonce: str
    expiry: int | None = None
    holder_key: str | None = None
    signature: str = ""

    def __post_init__(self) -> None:
        _check_nonce(self.nonce)
        if self.holder_key is not None and self.holder != Did("key", self.holder_key):
            raise MalformedDocument("an ephemeral holder must be did:key:<holderKey>")

    def body(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "issuer": str(self.issuer),
            "holder": str(self.holder),
            "scope": [k.value for k in self.scope],
            "usage": self.usage.encode(),
            "nonce": self.nonce,
        }
        if self.expiry is not None:
            out["expiry"] = self.expiry
        if self.holder_key is not None:
            out["holderKey"] = self.holder_key
        return out

    def to_json(self) -> dict[str, Any]:
        return {**self.body(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Any) -> "BoundCredential":
        _expect(
            data,
            {"issuer", "holder", "scope", "usage", "nonce", "expiry", "holderKey", "signature"},
            "credential",
        )
        return cls(
            issuer=Did.parse(data["issuer"]),
            holder=Did.parse(data["holder"]),
            scope=_parse_scope(data["scope"]),
            usage=Usage.parse(data["usage"]),
            nonce=data["nonce"],
            expiry=data.get("expiry"),
            holder_key=data.get("holderKey"),
            signature=data["signature"],
        )


def _expect(data: Any, allowed: set[str], what: str) -> None:
    if not isinstance(data, dict):
        raise MalformedDocument(f"{what} must be a JSON object")
    if set(data) - allowed:
        raise MalformedDocument(f"unknown {what} properties {sorted(set(data) - allowed)}")
    required = allowed - {"expiry", "holderKey", "keyRef"}
    if required - set(data):
        raise MalformedDocument(f"{what} missing {sorted(required - set(data))}")


def issue_token(
    trustee_key: KeyPair,
    issuer: Did,
    scope: Iterable[ResourceKind],
    usage: Usage,
    expiry: int | None,
    nonce: str,
) -> BearerToken:
    unsigned = BearerToken(issuer, tuple(scope), usage, nonce, expiry)
    sig = sign(trustee_key, canonical.encode(unsigned.body()))
    return BearerToken(issuer, tuple(scope), usage, nonce, expiry, sig.encode())


def issue_credential(
    trustee_key: KeyPair,
    issuer: Did,
    holder: Did,
    scope: Iterable[ResourceKind],
    usage: Usage,
    expiry: int | None,
    nonce: str,
    holder_key: str | None = None,
) -> BoundCredential:
    unsigned = BoundCredential(issuer, holder, tuple(scope), usage, nonce, expiry, holder_key)
    sig = sign(trustee_key, canonical.encode(unsigned.body()))
    return BoundCredential(issuer, holder, tuple(scope), usage, nonce, expiry, holder_key, sig.encode())


# --- proofs ------------------------------------------------------------------


@dataclass(frozen=True)
class ControllerSignature:
    signer: Did
    key_ref: str
    signature: str

    def to_json(self) -> dict[str, Any]:
        return {
            "type": "ControllerSignature",
            "signer": str(self.signer),
            "keyRef": self.key_ref,
            "signature": self.signature,
        }


@dataclass(frozen=True)
class TokenProof:
    token: BearerToken

    def to_json(self) -> dict[str, Any]:
        return {"type": "BearerToken", "token": self.token.to_json()}


@dataclass(frozen=True)
class ControlProof:
    signature: str
    key_ref: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {"signature": self.signature}
        if self.key_ref is not None:
            out["keyRef"] = self.key_ref
        return out


@dataclass(frozen=True)
class CredentialProof:
    credential: BoundCredential
    control_proof: ControlProof

    def to_json(self) -> dict[str, Any]:
        return {
            "type": "BoundCredential",
            "credential": self.credential.to_json(),
            "controlProof": self.control_proof.to_json(),
        }


AuthorizationProof = Union[ControllerSignature, TokenProof, CredentialProof]


def parse_proof(data: Any) -> AuthorizationProof:
    if not isinstance(data, dict):
        raise MalformedDocument("proof must be a JSON object")
    kind = data.get("type")
    if kind == "ControllerSignature":
        _expect(data, {"type", "signer", "keyRef", "signature"}, "controller signature")
        return ControllerSignature(Did.parse(data["signer"]), data["keyRef"], data["signature"])
    if kind == "BearerToken":
        _expect(data, {"type", "token"}, "token proof")
        return TokenProof(BearerToken.from_json(data["token"]))
    if kind == "BoundCredential":
        _expect(data, {"type", "credential", "controlProof"}, "credential proof")
        cp = data["controlProof"]
        _expect(cp, {"signature", "keyRef"}, "control proof")
        return CredentialProof(
            BoundCredential.from_json(data["credential"]),
            ControlProof(cp["signature"], cp.get("keyRef")),
        )
    raise MalformedDocument(f"unknown proof type {kind!r}")


def sign_as_controller(key: KeyPair, signer: Did, key_ref: str, message: bytes) -> ControllerSignature:
    return ControllerSignature(signer, key_ref, sign(key, message).encode())


def prove_control(credential: BoundCredential, key: KeyPair, message: bytes,
                  key_ref: str | None = None) -> CredentialProof:
    return CredentialProof(credential, ControlProof(sign(key, message).encode(), key_ref))


def proof_token_id(proof_json: dict[str, Any]) -> tuple[str, str] | None:
    """``(issuer, nonce)`` of a serialized token or credential proof."""
    body = proof_json.get("token") or proof_json.get("credential")
    if proof_json.get("type") in ("BearerToken", "BoundCredential") and isinstance(body, dict):
        return body.get("issuer"), body.get("nonce")
    return None


# --- actors ------------------------------------------------------------------


class Basis(str, enum.Enum):
    CONTROLLER = "Controller"
    TOKEN = "Token"
    CREDENTIAL = "Credential"
    OWNER_SCOPED = "OwnerScoped"


@dataclass(frozen=True)
class AuthorizedActor:
    principal: str
    basis: Basis
    group_ids: tuple[str, ...] = ()
    scope: frozenset[ResourceKind] = field(default_factory=frozenset)

    @property
    def did(self) -> Did | None:
        if self.basis is Basis.TOKEN:
            return None
        return Did.parse(self.principal)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"principal": self.principal, "basis": self.basis.value}
        if self.basis is Basis.CONTROLLER:
            out["groups"] = list(self.group_ids)
        if self.basis in (Basis.TOKEN, Basis.CREDENTIAL):
            out["scope"] = sorted(k.value for k in self.scope)
        return out


def _verify_with(vm: VerificationMethod, message: bytes, signature: str) -> bool:
    return verify(vm.public_key, message, Signature.decode(signature))


def own_ddo_method(ledger: "Ledger", who: Did, key_ref: str) -> VerificationMethod | None:
    """``key_ref`` from ``who``'s own active DDO, if controlled by ``who``."""
    try:
        doc, _, meta = ledger.resolve(who)
    except NotFound:
        return None
    if not meta.active:
        return None
    vm = doc.find_method(key_ref)
    return vm if vm is not None and vm.controller == who else None


def _verify_controller(proof: ControllerSignature, doc: DidDocument, gov: GovernanceConfig,
                       ledger: "Ledger", message: bytes) -> AuthorizedActor:
    signer = proof.signer
    local = doc.find_method(proof.key_ref)
    if signer in effective_controllers(doc):
        if local is not None:
            # the governed document wins over the controller's own DDO
            vm = local if local.controller == signer else None
        elif signer in doc.controller:
            vm = own_ddo_method(ledger, signer, proof.key_ref)
        else:
            vm = None
        if vm is None:
            raise BadSignature(f"{proof.key_ref!r} is not a verification method of {signer}")
        if not _verify_with(vm, message, proof.signature):
            raise BadSignature(f"signature by {signer} does not verify")
        return AuthorizedActor(str(signer), Basis.CONTROLLER, tuple(gov.groups_of(signer)))
    if local is not None and local.controller == signer:
        if not _verify_with(local, message, proof.signature):
            raise BadSignature(f"signature by {signer} does not verify")
        return AuthorizedActor(str(signer), Basis.OWNER_SCOPED)
    raise NotAController(f"{signer} is neither a controller nor owns a method in the document")


def _check_issued(doc: DidDocument, ledger: "Ledger", issuer: Did, body: dict, signature: str,
                  usage: Usage, nonce: str, expiry: int | None, now: int) -> None:
    if issuer not in doc.trustees:
        raise UntrustedIssuer(f"{issuer} is not a trustee of {doc.id}")
    try:
        issuer_doc, _, meta = ledger.resolve(issuer)
    except NotFound:
        raise UntrustedIssuer(f"trustee {issuer} is not anchored") from None
    if not meta.active:
        raise UntrustedIssuer(f"trustee {issuer} is invalidated")
    message = canonical.encode(body)
    sig = Signature.decode(signature)
    keys = [vm for vm in issuer_doc.all_methods() if vm.controller == issuer]
    if not any(verify(vm.public_key, message, sig) for vm in keys):
        raise BadSignature(f"issuer signature does not verify against {issuer}'s methods")
    if expiry is not None and now >= expiry:
        raise TokenExpired(f"expired at {expiry}, now {now}")
    if usage.limit is not None and ledger.token_usage(str(issuer), nonce) >= usage.limit:
        raise TokenExhausted(f"token {nonce} already used {usage.limit} time(s)")


def _check_control(cred: BoundCredential, cp: ControlProof, ledger: "Ledger", message: bytes) -> None:
    sig = Signature.decode(cp.signature)
    if cred.holder_key is not None:
        if not verify(cred.holder_key, message, sig):
            raise ControlProofFailed(f"control proof does not verify for {cred.holder}")
        return
    vm = own_ddo_method(ledger, cred.holder, cp.key_ref or "")
    if vm is None:
        raise ControlProofFailed(f"{cp.key_ref!r} is not an anchored method of {cred.holder}")
    if not verify(vm.public_key, message, sig):
        raise ControlProofFailed(f"control proof does not verify for {cred.holder}")


def verify_proof(proof: AuthorizationProof, did: Did, ledger: "Ledger", now: int,
                 message: bytes) -> AuthorizedActor:
    """Check ``proof`` for an action on ``did`` whose challenge is ``message``.

    Never mutates the ledger; token usage is counted from existing records.
    """
    doc, gov, meta = ledger.resolve(did)
    if not meta.active:
        raise InvalidatedDid(f"{did} is invalidated")
    if isinstance(proof, ControllerSignature):
        return _verify_controller(proof, doc, gov, ledger, message)
    if isinstance(proof, TokenProof):
        t = proof.token
        _check_issued(doc, ledger, t.issuer, t.body(), t.signature, t.usage, t.nonce, t.expiry, now)
        return AuthorizedActor(f"token:{t.nonce}", Basis.TOKEN, scope=frozenset(t.scope))
    if isinstance(proof, CredentialProof):
        c = proof.credential
        _check_issued(doc, ledger, c.issuer, c.body(), c.signature, c.usage, c.nonce, c.expiry, now)
        _check_control(c, proof.control_proof, ledger, message)
        return AuthorizedActor(str(c.holder), Basis.CREDENTIAL, scope=frozenset(c.scope))
    raise TypeError(f"not a proof: {proof!r}")


# --- decisions ---------------------------------------------------------------


def check_authorization(actor: AuthorizedActor, patch: UpdatePatch, doc: DidDocument,
                        gov: GovernanceConfig) -> Decision:
    if actor.basis is Basis.OWNER_SCOPED:
        return owner_scope(Did.parse(actor.principal), patch, doc)
    for op in patch.ops:
        if actor.basis is Basis.CONTROLLER:
            groups = [(gid, gov.groups[gid]) for gid in actor.group_ids if gid in gov.groups]
            if not any(group_covers(gid, g, op, gov) for gid, g in groups):
                return Decision.deny(
                    f"no group of {actor.principal} may {op.op.value} {classify_op(op)}"
                )
        else:
            if op.selector.kind not in actor.scope:
                return Decision.deny(f"{op.selector.kind.value} is outside the delegated scope")
            if classify_op(op).kind is not ClassKind.FUNCTIONAL:
                return Decision.deny("delegated authorizations cover functional updates only")
    return Decision.allow()


def _owned(vm: VerificationMethod | None, actor: Did) -> bool:
    return vm is not None and vm.controller == actor


def owner_scope(actor: Did, patch: UpdatePatch, doc: DidDocument) -> Decision:
    """Allow a delegate to change only methods it controls (e.g. key rotation)."""
    if not any(vm.controller == actor for vm in doc.all_methods()):
        return Decision.deny(f"{actor} controls no method in {doc.id}")
    for op in patch.ops:
        kind = op.selector.kind
        if kind is ResourceKind.VERIFICATION_METHOD:
            method_id = op.selector.target_id
        elif kind is ResourceKind.RELATIONSHIP:
            method_id = op.selector.relationship_target()[1]
        else:
            return Decision.deny(f"{kind.value} is not an owned artifact")
        if op.op is not Op.ADD and not _owned(doc.find_method(method_id), actor):
            return Decision.deny(f"{method_id} is not controlled by {actor}")
        if isinstance(op.payload, dict):
            try:
                new = VerificationMethod.from_json(op.payload)
            except MalformedDocument as exc:
                return Decision.deny(f"bad payload: {exc}")
            if not _owned(new, actor):
                return Decision.deny(f"{actor} may not hand {method_id} to another controller")
        elif op.op is Op.ADD and not _owned(doc.find_method(method_id), actor):
            return Decision.deny(f"{method_id} is not controlled by {actor}")
    return Decision.allow()
