"""Update proposals, votes and the coordination mechanisms.

Evaluation is eager: a proposal leaves Pending as soon as no further vote
could change its outcome. The mechanism and member list in force when a
proposal is opened are frozen into it, so governance changes only bind
proposals opened afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from . import canonical
from .authz import (
    AuthorizationProof,
    AuthorizedActor,
    Basis,
    challenge,
    check_authorization,
    group_covers,
    parse_proof,
    verify_proof,
)
from .crypto import digest
from .did import Did
from .errors import (
    DeadlinePassed,
    DuplicateProposal,
    DuplicateVote,
    InvalidatedDid,
    NoCoveringGroup,
    NotApproved,
    NotEligible,
    ProposalClosed,
    StalePatch,
    StaleProposal,
    Unauthorized,
)
from .governance import CoordinationSpec, GovernanceConfig, MechanismKind
from .patch import ResourceKind, UpdatePatch, apply_patch

if TYPE_CHECKING:
    from .ledger import Ledger

# Governing group of token, credential and owner-scoped actors.
DELEGATED_GROUP = "@delegated"


class Choice(str, enum.Enum):
    APPROVE = "approve"
    REJECT = "reject"


class ProposalStatus(str, enum.Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"
    EXPIRED = "Expired"
    EXECUTED = "Executed"


@dataclass(frozen=True)
class Vote:
    voter: Did
    choice: Choice
    cast_at: int
    proof: AuthorizationProof | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "voter": str(self.voter),
            "choice": self.choice.value,
            "castAt": self.cast_at,
        }
        if self.proof is not None:
            out["proof"] = self.proof.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Vote":
        proof = data.get("proof")
        return cls(
            Did.parse(data["voter"]),
            Choice(data["choice"]),
            data["castAt"],
            parse_proof(proof) if proof is not None else None,
        )


@dataclass(frozen=True)
class Tally:
    approvals: frozenset[Did]
    rejections: frozenset[Did]
    approved_weight: int
    rejected_weight: int
    total_weight: int

    @classmethod
    def of(cls, members: Iterable[Did], mechanism: CoordinationSpec,
           choices: Mapping[Did, Choice]) -> "Tally":
        members = tuple(members)
        approvals = frozenset(v for v, c in choices.items() if c is Choice.APPROVE)
        rejections = frozenset(v for v, c in choices.items() if c is Choice.REJECT)
        if mechanism.kind is MechanismKind.WEIGHTED_MAJORITY:
            w = mechanism.weights
        else:
            w = {m: 1 for m in members}
        return cls(
            approvals,
            rejections,
            sum(w[v] for v in approvals),
            sum(w[v] for v in rejections),
            sum(w[m] for m in members),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "approvals": sorted(str(d) for d in self.approvals),
            "rejections": sorted(str(d) for d in self.rejections),
            "approvedWeight": self.approved_weight,
            "rejectedWeight": self.rejected_weight,
            "totalWeight": self.total_weight,
        }


def decide(mechanism: CoordinationSpec, member_count: int, tally: Tally) -> ProposalStatus:
    """Outcome of a vote state, ignoring time."""
    kind = mechanism.kind
    if kind is MechanismKind.INDEPENDENT:
        return ProposalStatus.APPROVED
    if kind is MechanismKind.UNANIMITY:
        if tally.rejections:
            return ProposalStatus.REJECTED
        if len(tally.approvals) == member_count:
            return ProposalStatus.APPROVED
        return ProposalStatus.PENDING
    if kind is MechanismKind.N_OUT_OF_M:
        if len(tally.approvals) >= mechanism.n:
            return ProposalStatus.APPROVED
        if len(tally.rejections) > member_count - mechanism.n:
            return ProposalStatus.REJECTED
        return ProposalStatus.PENDING
    num, den = mechanism.threshold_numerator, mechanism.threshold_denominator
    if tally.approved_weight * den > tally.total_weight * num:
        return ProposalStatus.APPROVED
    # best case: every member who has not voted yet approves
    reachable = tally.total_weight - tally.rejected_weight
    if reachable * den <= tally.total_weight * num:
        return ProposalStatus.REJECTED
    return ProposalStatus.PENDING


@dataclass(frozen=True)
class Proposal:
    proposal_id: str
    did: Did
    patch: UpdatePatch
    proposer: AuthorizedActor
    governing_group: str
    mechanism_snapshot: CoordinationSpec
    members: tuple[Did, ...]
    config_version_at_open: int
    opened_at: int
    deadline: int | None = None
    status: ProposalStatus = ProposalStatus.PENDING

    def implicit_votes(self) -> dict[Did, Choice]:
        """The proposer's own approval when it belongs to the governing group."""
        if self.proposer.basis is Basis.TOKEN:
            return {}
        who = Did.parse(self.proposer.principal)
        return {who: Choice.APPROVE} if who in self.members else {}

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "proposalId": self.proposal_id,
            "did": str(self.did),
            "patch": self.patch.to_json(),
            "proposer": self.proposer.to_json(),
            "governingGroup": self.governing_group,
            "mechanism": self.mechanism_snapshot.to_json(),
            "members": [str(m) for m in self.members],
            "configVersionAtOpen": self.config_version_at_open,
            "openedAt": self.opened_at,
        }
        if self.deadline is not None:
            out["deadline"] = self.deadline
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Proposal":
        p = data["proposer"]
        proposer = AuthorizedActor(
            p["principal"],
            Basis(p["basis"]),
            tuple(p.get("groups", ())),
            frozenset(ResourceKind(k) for k in p.get("scope", ())),
        )
        return cls(
            proposal_id=data["proposalId"],
            did=Did.parse(data["did"]),
            patch=UpdatePatch.from_json(data["patch"]),
            proposer=proposer,
            governing_group=data["governingGroup"],
            mechanism_snapshot=CoordinationSpec.from_json(data["mechanism"]),
            members=tuple(Did.parse(m) for m in data["members"]),
            config_version_at_open=data["configVersionAtOpen"],
            opened_at=data["openedAt"],
            deadline=data.get("deadline"),
        )


def proposal_id(did: Did, patch: UpdatePatch, proposer: AuthorizedActor, opened_at: int) -> str:
    body = {
        "did": str(did),
        "patch": patch.to_json(),
        "proposer": proposer.principal,
        "openedAt": opened_at,
    }
    return digest(canonical.encode(body)).hex()


def evaluate(proposal: Proposal, tally: Tally, now: int | None = None) -> ProposalStatus:
    outcome = decide(proposal.mechanism_snapshot, len(proposal.members), tally)
    if (
        outcome is ProposalStatus.PENDING
        and proposal.deadline is not None
        and now is not None
        and proposal.deadline <= now
    ):
        return ProposalStatus.EXPIRED
    return outcome


def select_governing_group(actor: AuthorizedActor, patch: UpdatePatch, gov: GovernanceConfig) -> str:
    """Most privileged of the actor's groups that covers every op; ties by group id."""
    if actor.basis is not Basis.CONTROLLER:
        return DELEGATED_GROUP
    covering = [
        gid
        for gid in actor.group_ids
        if gid in gov.groups
        and all(group_covers(gid, gov.groups[gid], op, gov) for op in patch.ops)
    ]
    if not covering:
        raise NoCoveringGroup(f"no single group of {actor.principal} covers the whole patch")
    return min(covering, key=lambda gid: (-gov.groups[gid].privilege, gid))


def propose_challenge(did: Did, patch: UpdatePatch) -> bytes:
    return challenge("propose", did=str(did), patch=patch.to_json())


def vote_challenge(proposal_id: str, voter: Did, choice: Choice) -> bytes:
    return challenge("vote", proposalId=proposal_id, voter=str(voter), choice=choice.value)


class Coordinator:
    """Opens proposals, records votes, expires and executes them on a ledger."""

    def __init__(self, ledger: "Ledger") -> None:
        self.ledger = ledger

    def open_proposal(self, did: Did, patch: UpdatePatch, proof: AuthorizationProof, now: int) -> Proposal:
        ledger = self.ledger
        with ledger.writer():
            doc, gov, meta = ledger.resolve(did)
            if not meta.active:
                raise InvalidatedDid(f"{did} is invalidated")
            if patch.base_version != meta.version:
                raise StalePatch(f"patch is based on version {patch.base_version}, document is at {meta.version}")
            actor = verify_proof(proof, did, ledger, now, propose_challenge(did, patch))
            decision = check_authorization(actor, patch, doc, gov)
            if not decision:
                raise Unauthorized(decision.reason)
            # surfaces SelectorNotFound, DuplicateEntry, LockoutRisk, ... before anything is recorded
            apply_patch(doc, gov, patch, current_version=meta.version)
            group_id = select_governing_group(actor, patch, gov)
            if group_id == DELEGATED_GROUP:
                mechanism, members, deadline = CoordinationSpec.independent(), (), None
            else:
                group = gov.groups[group_id]
                mechanism, members = group.mechanism, group.members
                deadline = now + group.time_limit if group.time_limit is not None else None
            pid = proposal_id(did, patch, actor, now)
            if ledger.has_proposal(pid):
                raise DuplicateProposal(f"proposal {pid} already exists")
            proposal = Proposal(pid, did, patch, actor, group_id, mechanism, members,
                                gov.config_version, now, deadline)
            ledger.append(
                {"type": "ProposalOpen", "did": str(did), "proposal": proposal.to_json(),
                 "proof": proof.to_json()},
                author=actor.principal,
                now=now,
            )
            return ledger.proposal(pid)

    def cast_vote(self, proposal_id: str, vote: Vote, now: int) -> Tally:
        ledger = self.ledger
        with ledger.writer():
            proposal = ledger.proposal(proposal_id)
            _, _, meta = ledger.resolve(proposal.did)
            if not meta.active:
                raise InvalidatedDid(f"{proposal.did} is invalidated")
            if proposal.status is not ProposalStatus.PENDING:
                raise ProposalClosed(f"proposal is {proposal.status.value}")
            if proposal.deadline is not None and now >= proposal.deadline:
                raise DeadlinePassed(f"deadline {proposal.deadline} reached at {now}")
            if vote.voter not in proposal.members:
                raise NotEligible(f"{vote.voter} is not a member of group {proposal.governing_group!r}")
            if vote.voter in ledger.votes(proposal_id) or vote.voter in proposal.implicit_votes():
                raise DuplicateVote(f"{vote.voter} already voted")
            if vote.proof is None:
                raise NotEligible("a vote needs an authorization proof")
            actor = verify_proof(vote.proof, proposal.did, ledger, now,
                                 vote_challenge(proposal_id, vote.voter, vote.choice))
            if actor.principal != str(vote.voter):
                raise NotEligible(f"proof is by {actor.principal}, not by {vote.voter}")
            ledger.append(
                {"type": "VoteCast", "did": str(proposal.did), "proposalId": proposal_id,
                 "vote": replace(vote, cast_at=now).to_json()},
                author=str(vote.voter),
                now=now,
            )
            return ledger.tally(proposal_id)

    def tick(self, now: int) -> list[Proposal]:
        ledger = self.ledger
        expired = []
        with ledger.writer():
            for proposal in ledger.pending_proposals():
                if proposal.deadline is not None and proposal.deadline <= now:
                    ledger.append(
                        {"type": "Expire", "did": str(proposal.did), "proposalId": proposal.proposal_id},
                        author="timekeeper",
                        now=now,
                    )
                    expired.append(ledger.proposal(proposal.proposal_id))
        return expired

    def execute(self, proposal_id: str, now: int) -> int:
        ledger = self.ledger
        with ledger.writer():
            proposal = ledger.proposal(proposal_id)
            _, _, meta = ledger.resolve(proposal.did)
            if not meta.active:
                raise InvalidatedDid(f"{proposal.did} is invalidated")
            if proposal.status is not ProposalStatus.APPROVED:
                raise NotApproved(f"proposal is {proposal.status.value}")
            if proposal.patch.base_version != meta.version:
                raise StaleProposal(
                    f"proposal is based on version {proposal.patch.base_version}, document is at {meta.version}"
                )
            kind = "Invalidate" if proposal.patch.invalidates() else "Execute"
            ledger.append(
                {"type": kind, "did": str(proposal.did), "proposalId": proposal_id,
                 "patch": proposal.patch.to_json()},
                author=proposal.proposer.principal,
                now=now,
            )
            return meta.version + 1
