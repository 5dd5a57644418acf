"""Exception hierarchy.

Every domain error carries a stable ``name`` (the class name) which the CLI
reports verbatim as ``{"error": name}``.
"""

from __future__ import annotations

from typing import Any


class DidGovError(Exception):
    """Base class for all domain errors."""

    def __init__(self, message: str = "", **details: Any) -> None:
        super().__init__(message or self.__class__.__name__)
        self.details = details

    @property
    def name(self) -> str:
        return type(self).__name__

    def to_json(self) -> dict[str, Any]:
        out = {"error": self.name, "message": str(self)}
        out.update(self.details)
        return out


# did-core
class MalformedDid(DidGovError):
    pass


class MalformedDocument(DidGovError):
    pass


class MalformedPatch(DidGovError):
    pass


class StalePatch(DidGovError):
    pass


class SelectorNotFound(DidGovError):
    pass


class DuplicateEntry(DidGovError):
    pass


class SubjectImmutable(DidGovError):
    pass


class LockoutRisk(DidGovError):
    pass


# crypto
class MalformedKey(DidGovError):
    pass


class MalformedSignature(DidGovError):
    pass


# vdr-ledger
class AlreadyAnchored(DidGovError):
    pass


class UnauthorizedAnchor(DidGovError):
    pass


class NotFound(DidGovError):
    pass


class VersionOutOfRange(DidGovError):
    pass


class LedgerCorrupted(DidGovError):
    pass


# authz
class InvalidatedDid(DidGovError):
    pass


class UntrustedIssuer(DidGovError):
    pass


class TokenExhausted(DidGovError):
    pass


class TokenExpired(DidGovError):
    pass


class BadSignature(DidGovError):
    pass


class NotAController(DidGovError):
    pass


class ControlProofFailed(DidGovError):
    pass


# coordination
class Unauthorized(DidGovError):
    pass


class DuplicateProposal(DidGovError):
    pass


class ProposalClosed(DidGovError):
    pass


class DeadlinePassed(DidGovError):
    pass


class NotEligible(DidGovError):
    pass


class DuplicateVote(DidGovError):
    pass


class NotApproved(DidGovError):
    pass


class StaleProposal(DidGovError):
    pass


class NoCoveringGroup(DidGovError):
    pass


# cli
class UsageError(DidGovError):
    pass


class ScenarioAssertionFailed(DidGovError):
    def __init__(self, step: int, message: str = "", **details: Any) -> None:
        super().__init__(message or f"scenario step {step} failed", step=step, **details)
        self.step = step


def all_error_types() -> list[type[DidGovError]]:
    """Every concrete domain error, in declaration order."""
    return list(DidGovError.__subclasses__())
