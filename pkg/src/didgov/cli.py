"""Command-line front-end.

Every command prints one JSON object on stdout. Domain errors exit with
status 1 and ``{"error": <name>, ...}``; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from contextlib import redirect_stdout
from pathlib import Path
from typing import Any, Sequence

from . import canonical
from .authz import (
    BearerToken,
    BoundCredential,
    ControllerSignature,
    CredentialProof,
    TokenProof,
    Usage,
    issue_credential,
    issue_token,
    parse_proof,
    prove_control,
    sign_as_controller,
)
from .coordination import Choice, Coordinator, Vote, propose_challenge, vote_challenge
from .crypto import KeyPair, generate_keypair
from .did import Did, DidDocument, VerificationMethod, parse_bundle, serialize_document
from .errors import DidGovError, LedgerCorrupted, MalformedDocument, MalformedKey, NotEligible, NotFound, UsageError
from .governance import CoordinationSpec, GovernanceConfig, GroupConfig, Privilege
from .ledger import Ledger, anchor_challenge, verify_chain
from .patch import ResourceKind, parse_patch

LEDGER_ENV = "DIDGOV_LEDGER"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


# --- file helpers ------------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFound(f"no such file: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: invalid JSON: {exc}") from exc


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFound(f"no such file: {path}") from None


def _write_json(path: str, data: Any) -> None:
    Path(path).write_text(canonical.dumps(data) + "\n", encoding="utf-8")


def _load_key(path: str) -> KeyPair:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise MalformedKey(f"{path} is not a key file")
    return KeyPair.from_json(data)


def _seed(text: str | None) -> bytes | None:
    if text is None:
        return None
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise MalformedKey(f"seed must be hex, got {text!r}") from None


def _ledger_path(args: argparse.Namespace) -> Path:
    path = args.ledger or os.environ.get(LEDGER_ENV)
    if not path:
        raise UsageError(f"no ledger given; pass --ledger or set {LEDGER_ENV}")
    return Path(path)


def _registry_path(ledger_path: Path) -> Path:
    return ledger_path.with_name(ledger_path.name + ".registry.json")


def _open_ledger(args: argparse.Namespace) -> Ledger:
    path = _ledger_path(args)
    if not path.exists():
        raise NotFound(f"no ledger at {path}; run init first")
    return Ledger.load(path, _load_key(str(_registry_path(path))))


def _now(args: argparse.Namespace, ledger: Ledger) -> int:
    return ledger.clock if args.now is None else args.now


def _did_key_pair(text: str) -> tuple[Did, KeyPair]:
    did, sep, key_file = text.partition("=")
    if not sep:
        raise UsageError(f"expected DID=KEYFILE, got {text!r}")
    return Did.parse(did), _load_key(key_file)


# --- commands ----------------------------------------------------------------


def cmd_init(args: argparse.Namespace) -> dict:
    path = _ledger_path(args)
    registry = generate_keypair(_seed(args.seed))
    if path.exists() and path.stat().st_size:
        raise UsageError(f"{path} already exists")
    _write_json(str(_registry_path(path)), registry.to_json())
    ledger = Ledger(registry, path=path, now=args.now or 0)
    return {"ledger": str(path), "registryKey": registry.public_key, "digest": ledger.digest()}


def cmd_keygen(args: argparse.Namespace) -> dict:
    key = generate_keypair(_seed(args.seed))
    if args.out:
        _write_json(args.out, key.to_json())
        return {"keyType": key.key_type, "publicKey": key.public_key, "keyFile": args.out}
    return key.to_json()


def _default_governance(doc: DidDocument, members: list[Did]) -> GovernanceConfig:
    if not members:
        members = [doc.id]
    mech = CoordinationSpec.independent() if len(members) == 1 else CoordinationSpec.unanimity()
    return GovernanceConfig({"root": GroupConfig(tuple(members), Privilege.D, mech)})


def cmd_doc_create(args: argparse.Namespace) -> dict:
    subject = Did.parse(args.did)
    vms, auth, invocation = [], [], []
    if args.key:
        vm = VerificationMethod(f"{subject}#{args.key_id}", subject, _load_key(args.key).public_key)
        vms.append(vm)
        auth.append(vm.id)
    controllers = [Did.parse(c) for c in args.controller]
    for spec in args.controller_key:
        did, key = _did_key_pair(spec)
        if did not in controllers:
            controllers.append(did)
        vms.append(VerificationMethod(f"{subject}#{did.method_specific_id}", did, key.public_key))
    for spec in args.invoker:
        did, key = _did_key_pair(spec)
        invocation.append(VerificationMethod(f"{subject}#{did.method_specific_id}", did, key.public_key))
    doc = DidDocument(
        subject,
        controller=tuple(controllers),
        verification_method=tuple(vms),
        authentication=tuple(auth),
        capability_invocation=tuple(invocation),
        trustees=tuple(Did.parse(t) for t in args.trustee),
    )
    if args.governance:
        gov = GovernanceConfig.from_json(_read_json(args.governance))
    else:
        members = sorted(set(controllers) | {vm.controller for vm in invocation})
        gov = _default_governance(doc, members)
    Path(args.out).write_bytes(serialize_document(doc, gov) + b"\n")
    return {"did": str(subject), "lifecycle": "CREATED", "file": args.out}


def cmd_doc_anchor(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    doc, gov = parse_bundle(_read_text(args.doc))
    proof = parse_proof(_read_json(args.proof))
    record = ledger.anchor(doc, gov, proof, _now(args, ledger))
    _, _, meta = ledger.resolve(doc.id)
    return {"did": str(doc.id), "record": record.index, **meta.to_json()}


def _resolution(doc, gov, meta) -> dict:
    return {"document": doc.to_json(), "governance": gov.to_json(), "metadata": meta.to_json()}


def cmd_resolve(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    did = Did.parse(args.did)
    if args.version is None:
        return _resolution(*ledger.resolve(did))
    return _resolution(*ledger.resolve_version(did, args.version))


def cmd_propose(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    patch = parse_patch(_read_text(args.patch))
    proof = parse_proof(_read_json(args.proof))
    proposal = Coordinator(ledger).open_proposal(Did.parse(args.did), patch, proof, _now(args, ledger))
    return _proposal_view(ledger, proposal.proposal_id)


def _proposal_view(ledger: Ledger, pid: str) -> dict:
    p = ledger.proposal(pid)
    return {
        "proposalId": pid,
        "status": p.status.value,
        "governingGroup": p.governing_group,
        "deadline": p.deadline,
        "tally": ledger.tally(pid).to_json(),
    }


def _voter(proof) -> Did:
    if isinstance(proof, ControllerSignature):
        return proof.signer
    if isinstance(proof, CredentialProof):
        return proof.credential.holder
    raise NotEligible("bearer tokens do not carry voting rights")


def cmd_vote(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    proof = parse_proof(_read_json(args.proof))
    now = _now(args, ledger)
    vote = Vote(_voter(proof), Choice(args.choice), now, proof)
    Coordinator(ledger).cast_vote(args.proposal, vote, now)
    return _proposal_view(ledger, args.proposal)


def cmd_tick(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    expired = Coordinator(ledger).tick(args.now)
    return {"now": args.now, "expired": [p.proposal_id for p in expired]}


def cmd_execute(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    coordinator = Coordinator(ledger)
    did = ledger.proposal(args.proposal).did
    version = coordinator.execute(args.proposal, _now(args, ledger))
    _, _, meta = ledger.resolve(did)
    return {"proposalId": args.proposal, "did": str(did), "version": version, **meta.to_json()}


def cmd_proposal_show(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    view = _proposal_view(ledger, args.proposal)
    view["proposal"] = ledger.proposal(args.proposal).to_json()
    return view


def cmd_history(args: argparse.Namespace) -> dict:
    ledger = _open_ledger(args)
    return {"did": args.did, "records": [r.to_json() for r in ledger.history(Did.parse(args.did))]}


def cmd_verify_chain(args: argparse.Namespace) -> dict:
    path = _ledger_path(args)
    if not path.exists():
        raise NotFound(f"no ledger at {path}")
    registry = _registry_path(path)
    trusted = _load_key(str(registry)).public_key if registry.exists() else None
    result = verify_chain(path, trusted)
    if not result:
        report = result.to_json()
        raise LedgerCorrupted(f"record {report['failedIndex']}: {report['reason']}", **report)
    return result.to_json()


def cmd_token_issue(args: argparse.Namespace) -> dict:
    key = _load_key(args.key)
    scope = [ResourceKind(s) for s in args.scope]
    usage = Usage.parse(args.usage)
    issuer = Did.parse(args.issuer)
    if args.holder or args.holder_key:
        holder_key = _load_key(args.holder_key).public_key if args.holder_key else None
        holder = Did("key", holder_key) if holder_key else Did.parse(args.holder)
        token: Any = issue_credential(key, issuer, holder, scope, usage, args.expiry, args.nonce, holder_key)
    else:
        token = issue_token(key, issuer, scope, usage, args.expiry, args.nonce)
    _write_json(args.out, token.to_json())
    return {"file": args.out, **token.to_json()}


def cmd_token_show(args: argparse.Namespace) -> dict:
    data = _read_json(args.file)
    if isinstance(data, dict) and "holder" in data:
        return {"kind": "BoundCredential", **BoundCredential.from_json(data).to_json()}
    return {"kind": "BearerToken", **BearerToken.from_json(data).to_json()}


def _action_message(args: argparse.Namespace) -> bytes:
    if args.anchor_doc:
        return anchor_challenge(*parse_bundle(_read_text(args.anchor_doc)))
    if args.did and args.patch:
        return propose_challenge(Did.parse(args.did), parse_patch(_read_text(args.patch)))
    if args.proposal and args.choice:
        return vote_challenge(args.proposal, Did.parse(args.voter), Choice(args.choice))
    raise UsageError("give --anchor-doc, --did with --patch, or --proposal with --choice")


def _add_action_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--anchor-doc")
    p.add_argument("--did")
    p.add_argument("--patch")
    p.add_argument("--proposal")
    p.add_argument("--choice", choices=[c.value for c in Choice])
    p.add_argument("--out")


def _emit(args: argparse.Namespace, data: dict) -> dict:
    if args.out:
        _write_json(args.out, data)
        return {"file": args.out, "type": data["type"]}
    return data


def cmd_proof_controller(args: argparse.Namespace) -> dict:
    args.voter = args.signer
    proof = sign_as_controller(_load_key(args.key), Did.parse(args.signer), args.key_ref, _action_message(args))
    return _emit(args, proof.to_json())


def cmd_proof_token(args: argparse.Namespace) -> dict:
    return _emit(args, TokenProof(BearerToken.from_json(_read_json(args.token))).to_json())


def cmd_proof_credential(args: argparse.Namespace) -> dict:
    credential = BoundCredential.from_json(_read_json(args.credential))
    args.voter = str(credential.holder)
    proof = prove_control(credential, _load_key(args.key), _action_message(args), args.key_ref)
    return _emit(args, proof.to_json())


def cmd_scenario_run(args: argparse.Namespace) -> dict:
    from .scenario import ScenarioScript, run_scenario

    script = ScenarioScript.from_json(_read_json(args.file))
    return run_scenario(script, workdir=args.workdir)


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="didgov", description="Governed ledger-anchored DIDs")
    parser.add_argument("--ledger", help=f"ledger JSONL file (default: ${LEDGER_ENV})")
    parser.add_argument("--pretty", action="store_true", help="indented output")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("init", help="create a ledger and its registry key")
    p.add_argument("--seed")
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("keygen")
    p.add_argument("--seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_keygen)

    doc = sub.add_parser("doc").add_subparsers(dest="doc_command", parser_class=_Parser, required=True)
    p = doc.add_parser("create")
    p.add_argument("--did", required=True)
    p.add_argument("--key", help="subject key file")
    p.add_argument("--key-id", default="key-1")
    p.add_argument("--controller", action="append", default=[])
    p.add_argument("--controller-key", action="append", default=[], metavar="DID=KEYFILE")
    p.add_argument("--invoker", action="append", default=[], metavar="DID=KEYFILE")
    p.add_argument("--trustee", action="append", default=[])
    p.add_argument("--governance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_doc_create)
    p = doc.add_parser("anchor")
    p.add_argument("--doc", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_doc_anchor)

    p = sub.add_parser("resolve")
    p.add_argument("did")
    p.add_argument("--version", type=int)
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("propose")
    p.add_argument("--did", required=True)
    p.add_argument("--patch", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("vote")
    p.add_argument("--proposal", required=True)
    p.add_argument("--choice", required=True, choices=[c.value for c in Choice])
    p.add_argument("--proof", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("tick")
    p.add_argument("--now", type=int, required=True)
    p.set_defaults(func=cmd_tick)

    p = sub.add_parser("execute")
    p.add_argument("--proposal", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_execute)

    proposal = sub.add_parser("proposal").add_subparsers(dest="proposal_command", parser_class=_Parser, required=True)
    p = proposal.add_parser("show")
    p.add_argument("proposal")
    p.set_defaults(func=cmd_proposal_show)

    p = sub.add_parser("history")
    p.add_argument("did")
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("verify-chain")
    p.set_defaults(func=cmd_verify_chain)

    token = sub.add_parser("token").add_subparsers(dest="token_command", parser_class=_Parser, required=True)
    p = token.add_parser("issue", help="issue a bearer token, or a credential with --holder/--holder-key")
    p.add_argument("--key", required=True, help="trustee key file")
    p.add_argument("--issuer", required=True)
    p.add_argument("--scope", nargs="+", required=True, choices=[k.value for k in ResourceKind])
    p.add_argument("--usage", default="once")
    p.add_argument("--expiry", type=int)
    p.add_argument("--nonce", required=True)
    p.add_argument("--holder")
    p.add_argument("--holder-key", help="key file of an ephemeral did:key holder")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_token_issue)
    p = token.add_parser("show")
    p.add_argument("file")
    p.set_defaults(func=cmd_token_show)

    proof = sub.add_parser("proof").add_subparsers(dest="proof_command", parser_class=_Parser, required=True)
    p = proof.add_parser("controller")
    p.add_argument("--key", required=True)
    p.add_argument("--signer", required=True)
    p.add_argument("--key-ref", required=True)
    _add_action_args(p)
    p.set_defaults(func=cmd_proof_controller)
    p = proof.add_parser("token")
    p.add_argument("--token", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_proof_token)
    p = proof.add_parser("credential")
    p.add_argument("--credential", required=True)
    p.add_argument("--key", required=True, help="holder key file")
    p.add_argument("--key-ref")
    _add_action_args(p)
    p.set_defaults(func=cmd_proof_credential)

    scenario = sub.add_parser("scenario").add_subparsers(dest="scenario_command", parser_class=_Parser, required=True)
    p = scenario.add_parser("run")
    p.add_argument("file")
    p.add_argument("--workdir")
    p.set_defaults(func=cmd_scenario_run)
    return parser


def _hoist_globals(argv: list[str]) -> list[str]:
    # global flags are accepted anywhere on the line
    front, rest, i = [], [], 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--pretty":
            front.append(arg)
        elif arg == "--ledger" and i + 1 < len(argv):
            front += argv[i:i + 2]
            i += 1
        elif arg.startswith("--ledger="):
            front.append(arg)
        else:
            rest.append(arg)
        i += 1
    return front + rest


def run_command(argv: Sequence[str]) -> tuple[int, dict]:
    """Run one CLI invocation; returns (exit status, JSON output)."""
    parser = build_parser()
    argv = _hoist_globals(list(argv))
    try:
        # argparse prints help/usage to stdout or stderr; keep our stdout JSON-only
        with redirect_stdout(io.StringIO()):
            args = parser.parse_args(list(argv))
        return 0, args.func(args)
    except UsageError as exc:
        return 2, exc.to_json()
    except DidGovError as exc:
        return 1, exc.to_json()
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return code, {} if code == 0 else {"error": "UsageError", "message": "invalid usage"}


def render(output: dict, pretty: bool = False) -> str:
    if pretty:
        return json.dumps(output, indent=2, sort_keys=True, ensure_ascii=False)
    return canonical.dumps(output)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if any(a in ("-h", "--help") for a in argv):
        try:
            build_parser().parse_args(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else 0
    code, output = run_command(argv)
    print(render(output, pretty="--pretty" in argv))
    return code


if __name__ == "__main__":
    sys.exit(main())
