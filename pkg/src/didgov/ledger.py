"""Simulated verifiable data registry: an append-only, hash-chained log.

Record 0 is a genesis record carrying the registry's public key. Every record
is signed by the registry (the single sequencer) and chained to its
predecessor by digest. Document versions, proposals, votes and token usage
are derived by folding the records in order, so a reloaded log reproduces
the exact state it was written from.
"""

from __future__ import annotations

import contextlib
import enum
import json
import os
import threading
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

from . import canonical
from .authz import ControllerSignature, own_ddo_method, challenge, proof_token_id
from .coordination import (
    Proposal,
    ProposalStatus,
    Tally,
    Vote,
    evaluate,
)
from .crypto import KeyPair, Signature, digest, sign, verify
from .did import Did, DidDocument, effective_controllers, serialize_document
from .errors import (
    AlreadyAnchored,
    DidGovError,
    LedgerCorrupted,
    LockoutRisk,
    MalformedKey,
    MalformedSignature,
    NotFound,
    UnauthorizedAnchor,
    VersionOutOfRange,
)
from .governance import GovernanceConfig
from .patch import UpdatePatch, apply_patch

ZERO_DIGEST = "0" * 64
_RECORD_KEYS = frozenset(
    {"index", "prevDigest", "payload", "author", "timestamp", "signature", "recordDigest"}
)


class Lifecycle(str, enum.Enum):
    CREATED = "CREATED"
    ANCHORED = "ANCHORED"
    UPDATED = "UPDATED"
    INVALIDATED = "INVALIDATED"


TRANSITIONS: dict[Lifecycle, frozenset[Lifecycle]] = {
    Lifecycle.CREATED: frozenset({Lifecycle.ANCHORED}),
    Lifecycle.ANCHORED: frozenset({Lifecycle.UPDATED, Lifecycle.INVALIDATED}),
    Lifecycle.UPDATED: frozenset({Lifecycle.UPDATED, Lifecycle.INVALIDATED}),
    Lifecycle.INVALIDATED: frozenset(),
}


@dataclass(frozen=True)
class DocumentMetadata:
    version: int
    status: str
    lifecycle: Lifecycle
    updated_at: int

    @property
    def active(self) -> bool:
        return self.status == "active"

    def to_json(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "status": self.status,
            "lifecycle": self.lifecycle.value,
            "updatedAt": self.updated_at,
        }


@dataclass(frozen=True)
class LedgerRecord:
    index: int
    prev_digest: str
    payload: dict
    author: str
    timestamp: int
    signature: str
    record_digest: str

    @staticmethod
    def body(index: int, prev_digest: str, payload: dict, author: str, timestamp: int) -> dict:
        return {
            "index": index,
            "prevDigest": prev_digest,
            "payload": payload,
            "author": author,
            "timestamp": timestamp,
        }

    @property
    def kind(self) -> str:
        return self.payload["type"]

    def to_json(self) -> dict[str, Any]:
        out = self.body(self.index, self.prev_digest, self.payload, self.author, self.timestamp)
        out["signature"] = self.signature
        out["recordDigest"] = self.record_digest
        return out

    def line(self) -> str:
        return canonical.dumps(self.to_json())

    @classmethod
    def from_json(cls, data: dict) -> "LedgerRecord":
        return cls(
            data["index"],
            data["prevDigest"],
            data["payload"],
            data["author"],
            data["timestamp"],
            data["signature"],
            data["recordDigest"],
        )


def anchor_challenge(doc: DidDocument, gov: GovernanceConfig) -> bytes:
    return challenge("anchor", did=str(doc.id), document=digest(serialize_document(doc, gov)).hex())


# --- chain verification ------------------------------------------------------


@dataclass(frozen=True)
class ChainVerification:
    ok: bool
    failed_index: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"valid": self.ok}
        if not self.ok:
            out["failedIndex"] = self.failed_index
            out["reason"] = self.reason
        return out


@lru_cache(maxsize=16384)
def _check_line(line: str, index: int, prev_digest: str, prev_time: int,
                registry_key: str | None) -> tuple[str, str, int, str]:
    """Verify one serialized record; returns (error, recordDigest, timestamp, registryKey)."""
    try:
        data = json.loads(line)
    except ValueError:
        return "unparseable record", "", 0, ""
    if not isinstance(data, dict) or set(data) != _RECORD_KEYS:
        return "unexpected record fields", "", 0, ""
    if canonical.dumps(data) != line:
        return "record is not in canonical form", "", 0, ""
    if data["index"] != index:
        return f"index {data['index']!r} out of sequence", "", 0, ""
    if data["prevDigest"] != prev_digest:
        return "prevDigest does not match the preceding record", "", 0, ""
    ts = data["timestamp"]
    if not isinstance(ts, int) or isinstance(ts, bool) or ts < prev_time:
        return "timestamp goes backwards", "", 0, ""
    unsigned = {k: v for k, v in data.items() if k != "recordDigest"}
    record_digest = digest(canonical.encode(unsigned)).hex()
    if data["recordDigest"] != record_digest:
        return "recordDigest mismatch", "", 0, ""
    payload = data["payload"]
    if index == 0:
        if not isinstance(payload, dict) or payload.get("type") != "Genesis":
            return "first record is not a genesis record", "", 0, ""
        key = payload.get("registryKey")
        if registry_key is not None and key != registry_key:
            return "genesis key is not the trusted registry key", "", 0, ""
        registry_key = key
    body = {k: v for k, v in unsigned.items() if k != "signature"}
    try:
        good = verify(registry_key, canonical.encode(body), Signature.decode(data["signature"]))
    except (MalformedKey, MalformedSignature, TypeError) as exc:
        return f"unverifiable signature: {exc}", "", 0, ""
    if not good:
        return "signature is not by the registry", "", 0, ""
    return "", record_digest, ts, registry_key


def verify_lines(lines: Iterable[str], trusted_key: str | None = None) -> ChainVerification:
    prev, prev_time, key = ZERO_DIGEST, 0, trusted_key
    count = 0
    for index, line in enumerate(lines):
        error, prev, prev_time, key = _check_line(line, index, prev, prev_time, key)
        if error:
            return ChainVerification(False, index, error)
        count += 1
    if count == 0:
        return ChainVerification(False, 0, "empty ledger")
    return ChainVerification(True)


def verify_chain(source: Union["Ledger", str, Path, bytes, Iterable[str]],
                 trusted_key: str | None = None) -> ChainVerification:
    """Check digests, linkage and registry signatures of every record.

    ``source`` may be a ledger, a JSONL path, the raw file bytes or a list of lines.
    """
    if isinstance(source, Ledger):
        lines = [r.line() for r in source.records]
        trusted_key = trusted_key or source.registry_key
    elif isinstance(source, (str, Path)):
        lines = split_lines(Path(source).read_bytes())
    elif isinstance(source, bytes):
        lines = split_lines(source)
    else:
        lines = list(source)
    return verify_lines(lines, trusted_key)


def split_lines(raw: bytes) -> list[str]:
    """Split JSONL bytes on LF only; undecodable lines are kept and fail later."""
    out = []
    for chunk in raw.split(b"\n"):
        if chunk:
            try:
                out.append(chunk.decode("utf-8"))
            except UnicodeDecodeError:
                # a NUL prefix is never valid JSON, so the record is reported as unparseable
                out.append("\x00" + chunk.decode("utf-8", errors="replace"))
    return out


# --- derived state -----------------------------------------------------------


@dataclass
class _Version:
    doc: DidDocument
    gov: GovernanceConfig
    at: int


@dataclass
class _DidState:
    versions: list[_Version]
    lifecycle: Lifecycle
    record_indexes: list[int]


@dataclass
class _ProposalState:
    proposal: Proposal
    votes: dict[Did, Vote]
    closed: ProposalStatus | None = None  # Expired or Executed

    def tally(self) -> Tally:
        choices = dict(self.proposal.implicit_votes())
        choices.update({v: vote.choice for v, vote in self.votes.items()})
        return Tally.of(self.proposal.members, self.proposal.mechanism_snapshot, choices)

    def status(self) -> ProposalStatus:
        if self.closed is not None:
            return self.closed
        return evaluate(self.proposal, self.tally())


class Ledger:
    """In-process VDR with a single serialized writer."""

    def __init__(self, registry: KeyPair, *, path: str | Path | None = None, now: int = 0,
                 _records: list[LedgerRecord] | None = None) -> None:
        self._registry = registry
        self._lock = threading.RLock()
        self._records: list[LedgerRecord] = []
        self._dids: dict[Did, _DidState] = {}
        self._proposals: dict[str, _ProposalState] = {}
        self._token_uses: dict[tuple[str, str], int] = {}
        self._path = Path(path) if path is not None else None
        if _records is None:
            if self._path is not None and self._path.exists() and self._path.stat().st_size:
                raise LedgerCorrupted(f"{self._path} already holds a ledger; load it instead")
            self.append({"type": "Genesis", "registryKey": registry.public_key}, "registry", now)
        else:
            for record in _records:
                self._fold(record)
                self._records.append(record)

    # -- persistence --

    @classmethod
    def load(cls, path: str | Path, registry: KeyPair) -> "Ledger":
        """Load a JSONL ledger; the chain must verify against ``registry``."""
        path = Path(path)
        if not path.exists():
            raise NotFound(f"no ledger at {path}")
        lines = split_lines(path.read_bytes())
        check = verify_lines(lines, registry.public_key)
        if not check:
            raise LedgerCorrupted(
                f"record {check.failed_index}: {check.reason}", failedIndex=check.failed_index
            )
        records = [LedgerRecord.from_json(json.loads(line)) for line in lines]
        try:
            return cls(registry, path=path, _records=records)
        except DidGovError as exc:
            raise LedgerCorrupted(f"replay failed: {exc}") from exc

    # -- writing --

    @contextlib.contextmanager
    def writer(self) -> Iterator[None]:
        """Hold the single writer lock across a check-then-append sequence."""
        with self._lock:
            yield

    @property
    def registry_key(self) -> str:
        return self._registry.public_key

    @property
    def clock(self) -> int:
        return self._records[-1].timestamp if self._records else 0

    def append(self, payload: dict, author: str, now: int) -> LedgerRecord:
        with self._lock:
            index = len(self._records)
            prev = self._records[-1].record_digest if self._records else ZERO_DIGEST
            body = LedgerRecord.body(index, prev, payload, author, now)
            sig = sign(self._registry, canonical.encode(body)).encode()
            record_digest = digest(canonical.encode({**body, "signature": sig})).hex()
            record = LedgerRecord(index, prev, payload, author, now, sig, record_digest)
            self._fold(record)
            self._records.append(record)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(record.line() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            return record

    def anchor(self, doc: DidDocument, gov: GovernanceConfig, proof: Any, now: int) -> LedgerRecord:
        with self._lock:
            if doc.id in self._dids:
                raise AlreadyAnchored(f"{doc.id} is already anchored")
            if not gov.has_full_privilege_group():
                raise LockoutRisk("governance needs at least one group with privilege D")
            if not isinstance(proof, ControllerSignature):
                raise UnauthorizedAnchor("anchoring needs a controller signature")
            if proof.signer not in effective_controllers(doc) and proof.signer != doc.id:
                raise UnauthorizedAnchor(f"{proof.signer} does not control {doc.id}")
            vm = doc.find_method(proof.key_ref)
            if vm is None and proof.signer in doc.controller:
                # list-only controllers sign with a key from their own DDO
                vm = own_ddo_method(self, proof.signer, proof.key_ref)
            if vm is None or vm.controller != proof.signer:
                raise UnauthorizedAnchor(f"{proof.key_ref!r} is not a method of {proof.signer}")
            if not verify(vm.public_key, anchor_challenge(doc, gov), Signature.decode(proof.signature)):
                raise UnauthorizedAnchor("anchor signature does not verify")
            payload = {
                "type": "Anchor",
                "did": str(doc.id),
                "document": doc.to_json(),
                "governance": gov.to_json(),
                "proof": proof.to_json(),
            }
            return self.append(payload, str(proof.signer), now)

    # -- folding --

    def _fold(self, record: LedgerRecord) -> None:
        """Apply one record to the derived state; validates before mutating."""
        p = record.payload
        kind = p.get("type")
        if kind == "Genesis":
            if record.index != 0:
                raise LedgerCorrupted("genesis record after index 0")
            return
        did = Did.parse(p["did"])
        if kind == "Anchor":
            doc = DidDocument.from_json(p["document"])
            gov = GovernanceConfig.from_json(p["governance"])
            if did in self._dids or doc.id != did:
                raise LedgerCorrupted(f"bad anchor of {did}")
            self._dids[did] = _DidState([_Version(doc, gov, record.timestamp)],
                                        Lifecycle.ANCHORED, [record.index])
            return
        state = self._dids.get(did)
        if state is None:
            raise LedgerCorrupted(f"record {record.index} references unanchored {did}")
        if kind == "ProposalOpen":
            proposal = Proposal.from_json(p["proposal"])
            if proposal.proposal_id in self._proposals or proposal.did != did:
                raise LedgerCorrupted(f"bad proposal record {record.index}")
            self._proposals[proposal.proposal_id] = _ProposalState(proposal, {})
            self._count_token(p.get("proof"))
        elif kind == "VoteCast":
            ps = self._proposal_state(p["proposalId"])
            vote = Vote.from_json(p["vote"])
            if ps.status() is not ProposalStatus.PENDING or vote.voter in ps.votes:
                raise LedgerCorrupted(f"vote record {record.index} on a closed proposal")
            ps.votes[vote.voter] = vote
            self._count_token(p["vote"].get("proof"))
        elif kind == "Expire":
            ps = self._proposal_state(p["proposalId"])
            if ps.status() is not ProposalStatus.PENDING:
                raise LedgerCorrupted(f"expiry record {record.index} on a decided proposal")
            ps.closed = ProposalStatus.EXPIRED
        elif kind in ("Execute", "Invalidate"):
            ps = self._proposal_state(p["proposalId"])
            patch = UpdatePatch.from_json(p["patch"])
            if ps.status() is not ProposalStatus.APPROVED or patch != ps.proposal.patch:
                raise LedgerCorrupted(f"execution record {record.index} of an unapproved proposal")
            if state.lifecycle is Lifecycle.INVALIDATED:
                raise LedgerCorrupted(f"{did} is already invalidated")
            if (kind == "Invalidate") != patch.invalidates():
                raise LedgerCorrupted(f"record {record.index} has the wrong execution type")
            current = state.versions[-1]
            doc, gov = apply_patch(current.doc, current.gov, patch, current_version=len(state.versions))
            state.versions.append(_Version(doc, gov, record.timestamp))
            state.lifecycle = Lifecycle.INVALIDATED if kind == "Invalidate" else Lifecycle.UPDATED
            ps.closed = ProposalStatus.EXECUTED
        else:
            raise LedgerCorrupted(f"unknown record type {kind!r}")
        state.record_indexes.append(record.index)

    def _count_token(self, proof_json: Any) -> None:
        if isinstance(proof_json, dict):
            token_id = proof_token_id(proof_json)
            if token_id is not None:
                self._token_uses[token_id] = self._token_uses.get(token_id, 0) + 1

    def _proposal_state(self, pid: str) -> _ProposalState:
        try:
            return self._proposals[pid]
        except KeyError:
            raise NotFound(f"no proposal {pid}") from None

    # -- reading --

    @property
    def records(self) -> tuple[LedgerRecord, ...]:
        return tuple(self._records)

    def lines(self) -> list[str]:
        return [r.line() for r in self._records]

    def _state(self, did: Did | str) -> _DidState:
        did = Did.parse(did) if isinstance(did, str) else did
        try:
            return self._dids[did]
        except KeyError:
            raise NotFound(f"{did} is not anchored") from None

    def _metadata(self, state: _DidState, version: int) -> DocumentMetadata:
        last = len(state.versions)
        invalid = version == last and state.lifecycle is Lifecycle.INVALIDATED
        if invalid:
            lifecycle = Lifecycle.INVALIDATED
        else:
            lifecycle = Lifecycle.ANCHORED if version == 1 else Lifecycle.UPDATED
        return DocumentMetadata(version, "invalid" if invalid else "active", lifecycle,
                                state.versions[version - 1].at)

    def resolve(self, did: Did | str) -> tuple[DidDocument, GovernanceConfig, DocumentMetadata]:
        state = self._state(did)
        v = state.versions[-1]
        return v.doc, v.gov, self._metadata(state, len(state.versions))

    def resolve_version(self, did: Did | str, version: int) -> tuple[DidDocument, GovernanceConfig, DocumentMetadata]:
        state = self._state(did)
        if not isinstance(version, int) or not 1 <= version <= len(state.versions):
            raise VersionOutOfRange(f"version {version} not in 1..{len(state.versions)}")
        v = state.versions[version - 1]
        return v.doc, v.gov, self._metadata(state, version)

    def history(self, did: Did | str) -> list[LedgerRecord]:
        return [self._records[i] for i in self._state(did).record_indexes]

    def lifecycle_state(self, did: Did | str, drafts: Iterable[DidDocument | Did] = ()) -> Lifecycle:
        """Lifecycle of ``did``; ``drafts`` are locally held, not yet anchored documents."""
        did = Did.parse(did) if isinstance(did, str) else did
        if did in self._dids:
            return self._dids[did].lifecycle
        for draft in drafts:
            if (draft.id if isinstance(draft, DidDocument) else draft) == did:
                return Lifecycle.CREATED
        raise NotFound(f"{did} is unknown")

    def anchored_dids(self) -> list[Did]:
        return list(self._dids)

    def has_proposal(self, pid: str) -> bool:
        return pid in self._proposals

    def proposal(self, pid: str) -> Proposal:
        ps = self._proposal_state(pid)
        return replace(ps.proposal, status=ps.status())

    def tally(self, pid: str) -> Tally:
        return self._proposal_state(pid).tally()

    def votes(self, pid: str) -> dict[Did, Vote]:
        return dict(self._proposal_state(pid).votes)

    def proposals(self, did: Did | str | None = None) -> list[Proposal]:
        wanted = None if did is None else (Did.parse(did) if isinstance(did, str) else did)
        return [
            self.proposal(pid)
            for pid, ps in self._proposals.items()
            if wanted is None or ps.proposal.did == wanted
        ]

    def pending_proposals(self) -> list[Proposal]:
        return [p for p in self.proposals() if p.status is ProposalStatus.PENDING]

    def token_usage(self, issuer: str, nonce: str) -> int:
        return self._token_uses.get((issuer, nonce), 0)

    def verify_chain(self) -> ChainVerification:
        return verify_chain(self)

    def digest(self) -> str:
        """Digest of the newest record, which commits to the whole chain."""
        return self._records[-1].record_digest
