"""Governed, ledger-anchored decentralized identifiers."""

from .authz import (
    AuthorizedActor,
    BearerToken,
    BoundCredential,
    ControllerSignature,
    CredentialProof,
    Decision,
    TokenProof,
    Usage,
    check_authorization,
    issue_credential,
    issue_token,
    owner_scope,
    verify_proof,
)
from .coordination import (
    Choice,
    Coordinator,
    Proposal,
    ProposalStatus,
    Tally,
    Vote,
    evaluate,
    select_governing_group,
)
from .crypto import KeyPair, digest, generate_keypair, sign, verify
from .did import (
    Did,
    DidDocument,
    Service,
    VerificationMethod,
    effective_controllers,
    parse_bundle,
    parse_document,
    serialize_document,
)
from .errors import DidGovError
from .governance import CoordinationSpec, GovernanceConfig, GroupConfig, Privilege
from .ledger import DocumentMetadata, Ledger, LedgerRecord, Lifecycle, verify_chain
from .patch import (
    Op,
    PatchOp,
    ResourceKind,
    ResourceSelector,
    UpdatePatch,
    apply_patch,
    classify_op,
    parse_patch,
)

__version__ = "0.1.0"

__all__ = [
    "AuthorizedActor",
    "BearerToken",
    "BoundCredential",
    "Choice",
    "ControllerSignature",
    "CoordinationSpec",
    "Coordinator",
    "CredentialProof",
    "Decision",
    "Did",
    "DidDocument",
    "DidGovError",
    "DocumentMetadata",
    "GovernanceConfig",
    "GroupConfig",
    "KeyPair",
    "Ledger",
    "LedgerRecord",
    "Lifecycle",
    "Op",
    "PatchOp",
    "Privilege",
    "Proposal",
    "ProposalStatus",
    "ResourceKind",
    "ResourceSelector",
    "Service",
    "Tally",
    "TokenProof",
    "UpdatePatch",
    "Usage",
    "VerificationMethod",
    "Vote",
    "apply_patch",
    "check_authorization",
    "classify_op",
    "digest",
    "effective_controllers",
    "evaluate",
    "generate_keypair",
    "issue_credential",
    "issue_token",
    "owner_scope",
    "parse_bundle",
    "parse_document",
    "parse_patch",
    "select_governing_group",
    "serialize_document",
    "sign",
    "verify",
    "verify_chain",
    "verify_proof",
]
