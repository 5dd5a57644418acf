"""Shared builders for tests: seeded keys, documents in each declaration variant, a ledger harness."""

from __future__ import annotations

import hashlib
from typing import Iterable

from didgov import (
    Coordinator,
    CoordinationSpec,
    Did,
    DidDocument,
    GovernanceConfig,
    GroupConfig,
    Ledger,
    Op,
    PatchOp,
    Privilege,
    ResourceKind,
    ResourceSelector,
    UpdatePatch,
    VerificationMethod,
    generate_keypair,
)
from didgov.authz import sign_as_controller
from didgov.coordination import Choice, Vote, propose_challenge, vote_challenge
from didgov.ledger import anchor_challenge


def key(name: str):
    return generate_keypair(hashlib.sha256(name.encode()).digest())


def did(name: str) -> Did:
    return Did("gov", name)


def vm(subject: str, owner: str) -> VerificationMethod:
    return VerificationMethod(f"did:gov:{subject}#{owner}", did(owner), key(owner).public_key)


def self_doc(name: str, **kw) -> DidDocument:
    """A DDO whose subject controls it with its own key ``#key-1``."""
    m = VerificationMethod(f"did:gov:{name}#key-1", did(name), key(name).public_key)
    return DidDocument(did(name), verification_method=(m,), authentication=(m.id,),
                       capability_invocation=(m.id,), **kw)


def self_gov(name: str) -> GovernanceConfig:
    return GovernanceConfig({"root": GroupConfig((did(name),), Privilege.D, CoordinationSpec.independent())})


def variant_doc(subject: str, controllers: Iterable[str], variant: str, **kw) -> DidDocument:
    """Controllers declared as a bare list (a), list plus inlined keys (b) or invocation keys (c)."""
    controllers = list(controllers)
    if variant == "a":
        return DidDocument(did(subject), controller=tuple(did(c) for c in controllers), **kw)
    if variant == "b":
        return DidDocument(
            did(subject),
            controller=tuple(did(c) for c in controllers),
            verification_method=tuple(vm(subject, c) for c in controllers) + kw.pop("verification_method", ()),
            **kw,
        )
    if variant == "c":
        return DidDocument(did(subject), capability_invocation=tuple(vm(subject, c) for c in controllers), **kw)
    raise ValueError(variant)


def group(members: Iterable[str], privilege: str = "D", mechanism: CoordinationSpec | None = None,
          time_limit: int | None = None) -> GroupConfig:
    members = tuple(did(m) for m in members)
    if mechanism is None:
        mechanism = CoordinationSpec.independent() if len(members) == 1 else CoordinationSpec.unanimity()
    return GroupConfig(members, Privilege[privilege], mechanism, time_limit)


def gov(**groups: GroupConfig) -> GovernanceConfig:
    return GovernanceConfig(dict(groups))


def op(kind: ResourceKind, verb: Op, target: str, payload=None) -> PatchOp:
    return PatchOp(verb, ResourceSelector(kind, target), payload)


def add_service(subject: str, n: int) -> PatchOp:
    sid = f"did:gov:{subject}#svc-{n}"
    return op(ResourceKind.SERVICE, Op.ADD, sid, {"id": sid, "type": "Web", "serviceEndpoint": f"https://svc{n}.test"})


def patch(base: int, *ops: PatchOp) -> UpdatePatch:
    return UpdatePatch(base, tuple(ops))


class World:
    """A ledger plus coordinator driven by named, seeded actors."""

    def __init__(self, path=None) -> None:
        self.ledger = Ledger(key("registry"), path=path)
        self.co = Coordinator(self.ledger)

    def key_ref(self, subject: str, signer: str) -> str:
        # the signer's key inside the subject's DDO if present, else its own DDO key
        doc = self.ledger.resolve(did(subject))[0]
        local = f"did:gov:{subject}#{signer}"
        if doc.find_method(local) is not None:
            return local
        return f"did:gov:{signer}#key-1"

    def anchor(self, doc: DidDocument, g: GovernanceConfig, signer: str, now: int = 1, key_ref: str | None = None):
        if key_ref is None:
            local = [f"{doc.id}#{signer}", f"{doc.id}#key-1"]
            key_ref = next((r for r in local if doc.find_method(r)), f"did:gov:{signer}#key-1")
        ref = key_ref
        proof = sign_as_controller(key(signer), did(signer), ref, anchor_challenge(doc, g))
        return self.ledger.anchor(doc, g, proof, now)

    def anchor_self(self, name: str, now: int = 1, **kw):
        return self.anchor(self_doc(name, **kw), self_gov(name), name, now)

    def proof(self, subject: str, signer: str, message: bytes, key_ref: str | None = None):
        return sign_as_controller(key(signer), did(signer), key_ref or self.key_ref(subject, signer), message)

    def propose(self, subject: str, p: UpdatePatch, signer: str, now: int, key_ref: str | None = None):
        proof = self.proof(subject, signer, propose_challenge(did(subject), p), key_ref)
        return self.co.open_proposal(did(subject), p, proof, now)

    def propose_with(self, subject: str, p: UpdatePatch, proof, now: int):
        return self.co.open_proposal(did(subject), p, proof, now)

    def vote(self, pid: str, voter: str, choice: str, now: int, key_ref: str | None = None):
        proposal = self.ledger.proposal(pid)
        c = Choice(choice)
        proof = self.proof(proposal.did.method_specific_id, voter, vote_challenge(pid, did(voter), c), key_ref)
        return self.co.cast_vote(pid, Vote(did(voter), c, now, proof), now)

    def execute(self, pid: str, now: int) -> int:
        return self.co.execute(pid, now)

    def run(self, subject: str, p: UpdatePatch, proposer: str, voters: Iterable[str], now: int) -> int:
        """Propose, collect approvals from ``voters`` and execute."""
        proposal = self.propose(subject, p, proposer, now)
        for v in voters:
            self.vote(proposal.proposal_id, v, "approve", now)
        return self.execute(proposal.proposal_id, now)


def mechanism_cases(m: int):
    """(name, members, CoordinationSpec, oracle kwargs) for every mechanism over ``m`` members."""
    from fractions import Fraction

    members = [f"v{i}" for i in range(m)]
    dids = [did(v) for v in members]
    yield "Independent", members, CoordinationSpec.independent(), {}
    yield "Unanimity", members, CoordinationSpec.unanimity(), {}
    for n in range(1, m + 1):
        yield "NOutOfM", members, CoordinationSpec.n_out_of_m(n), {"n": n}
    weight_sets = [[1] * m, list(range(1, m + 1)), [3] + [1] * (m - 1), [2] * (m - 1) + [5]]
    for weights in weight_sets:
        for num, den in ((1, 2), (2, 3), (1, 1), (1, 4)):
            spec = CoordinationSpec.weighted(dict(zip(dids, weights)), num, den)
            yield "WeightedMajority", members, spec, {
                "weights": dict(zip(members, weights)), "threshold": Fraction(num, den)}
