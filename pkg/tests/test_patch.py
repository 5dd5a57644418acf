import copy
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didgov import (
    CoordinationSpec,
    DidDocument,
    GovernanceConfig,
    Op,
    PatchOp,
    ResourceKind,
    UpdatePatch,
    apply_patch,
    classify_op,
    parse_patch,
)
from didgov.errors import (
    DidGovError,
    DuplicateEntry,
    LockoutRisk,
    MalformedDocument,
    MalformedPatch,
    SelectorNotFound,
    StalePatch,
    SubjectImmutable,
)
from didgov.governance import GroupConfig, MechanismKind, Privilege
from didgov.patch import ClassKind
from helpers import add_service, did, gov, group, key, op, patch, variant_doc, vm

BASE_DOC = variant_doc("acme", ["alice", "bob"], "b", service=())
BASE_GOV = gov(board=group(["alice", "bob"], "D"), ops=group(["bob"], "B"))


# --- governance value types --------------------------------------------------


def test_n_out_of_m_bounds():
    with pytest.raises(MalformedDocument):
        group(["alice", "bob"], mechanism=CoordinationSpec.n_out_of_m(3))
    with pytest.raises(MalformedDocument):
        CoordinationSpec.n_out_of_m(0)


def test_weights_must_match_members():
    spec = CoordinationSpec.weighted({did("alice"): 1}, 1, 2)
    with pytest.raises(MalformedDocument):
        group(["alice", "bob"], mechanism=spec)


@pytest.mark.parametrize("num,den", [(0, 2), (3, 2), (1, 0), (-1, 2)])
def test_threshold_range(num, den):
    with pytest.raises(MalformedDocument):
        CoordinationSpec.weighted({did("alice"): 1}, num, den)


def test_threshold_of_one_allowed():
    spec = CoordinationSpec.weighted({did("alice"): 1}, 1, 1)
    assert spec.kind is MechanismKind.WEIGHTED_MAJORITY


def test_governance_json_roundtrip():
    g = gov(board=group(["alice", "bob"], "D", CoordinationSpec.n_out_of_m(2), time_limit=5),
            w=group(["carol"], "A", CoordinationSpec.weighted({did("carol"): 2}, 1, 2)))
    assert GovernanceConfig.from_json(g.to_json()) == g


def test_default_group_must_exist():
    data = BASE_GOV.to_json()
    data["defaultGroup"] = "nope"
    with pytest.raises(MalformedDocument):
        GovernanceConfig.from_json(data)


def test_groups_of():
    assert BASE_GOV.groups_of(did("bob")) == ["board", "ops"]


# --- classify_op -------------------------------------------------------------


def _payload_for(kind: ResourceKind):
    return {"x": 1} if kind not in (ResourceKind.STATUS,) else "invalid"


def _all_ops():
    for kind, verb in itertools.product(ResourceKind, Op):
        try:
            yield op(kind, verb, "target", None if verb is Op.REMOVE else _payload_for(kind))
        except MalformedPatch:
            continue


def test_classify_is_total():
    seen = set()
    for o in _all_ops():
        cls = classify_op(o)
        assert cls.kind in ClassKind
        seen.add((o.selector.kind, o.op))
    expected = {(k, v) for k, v in itertools.product(ResourceKind, Op)
                if k not in (ResourceKind.STATUS, ResourceKind.MECHANISM_OF_GROUP) or v is Op.UPDATE}
    assert seen == expected


@pytest.mark.parametrize("kind,verb,expected", [
    (ResourceKind.VERIFICATION_METHOD, Op.ADD, ClassKind.FUNCTIONAL),
    (ResourceKind.RELATIONSHIP, Op.REMOVE, ClassKind.FUNCTIONAL),
    (ResourceKind.ALSO_KNOWN_AS, Op.UPDATE, ClassKind.FUNCTIONAL),
    (ResourceKind.SERVICE, Op.ADD, ClassKind.FUNCTIONAL),
    (ResourceKind.GROUP, Op.UPDATE, ClassKind.OWN_GROUP_GOVERNANCE),
    (ResourceKind.MECHANISM_OF_GROUP, Op.UPDATE, ClassKind.OWN_GROUP_GOVERNANCE),
    (ResourceKind.GROUP, Op.ADD, ClassKind.GROUP_CREATION),
    (ResourceKind.GROUP, Op.REMOVE, ClassKind.FULL_GOVERNANCE),
    (ResourceKind.CONTROLLER, Op.ADD, ClassKind.FULL_GOVERNANCE),
    (ResourceKind.TRUSTEE, Op.REMOVE, ClassKind.FULL_GOVERNANCE),
    (ResourceKind.STATUS, Op.UPDATE, ClassKind.STATUS),
])
def test_classify_examples(kind, verb, expected):
    o = op(kind, verb, "B", None if verb is Op.REMOVE else _payload_for(kind))
    assert classify_op(o).kind is expected


def test_own_group_class_carries_group():
    o = op(ResourceKind.MECHANISM_OF_GROUP, Op.UPDATE, "B", CoordinationSpec.n_out_of_m(2).to_json())
    assert classify_op(o).group_id == "B"


# --- patch value types -------------------------------------------------------


def test_status_only_update():
    for verb in (Op.ADD, Op.REMOVE):
        with pytest.raises(MalformedPatch):
            op(ResourceKind.STATUS, verb, "status", None if verb is Op.REMOVE else "invalid")


def test_payload_presence():
    with pytest.raises(MalformedPatch):
        op(ResourceKind.SERVICE, Op.ADD, "s")
    with pytest.raises(MalformedPatch):
        op(ResourceKind.SERVICE, Op.REMOVE, "s", {"id": "s"})


def test_duplicate_selectors_rejected():
    with pytest.raises(MalformedPatch):
        patch(1, add_service("acme", 1), add_service("acme", 1))


def test_empty_patch_rejected():
    with pytest.raises(MalformedPatch):
        UpdatePatch(1, ())


def test_patch_json_roundtrip():
    p = patch(3, add_service("acme", 1), op(ResourceKind.CONTROLLER, Op.REMOVE, "did:gov:bob"))
    assert parse_patch(__import__("json").dumps(p.to_json())) == p


@pytest.mark.parametrize("text", [
    "{", "[]", '{"baseVersion":1}', '{"baseVersion":0,"ops":[]}',
    '{"baseVersion":1,"ops":[{"op":"frob","selector":{"kind":"ServiceEntry","targetId":"x"}}]}',
    '{"baseVersion":1,"ops":[{"op":"remove","selector":{"kind":"Nope","targetId":"x"}}]}',
])
def test_malformed_patch_files(text):
    with pytest.raises(MalformedPatch):
        parse_patch(text)


# --- apply_patch -------------------------------------------------------------


def test_add_method_to_empty_document():
    empty = DidDocument(did("solo"))
    m = vm("solo", "alice")
    d2, _ = apply_patch(empty, gov(root=group(["alice"])),
                        patch(1, op(ResourceKind.VERIFICATION_METHOD, Op.ADD, m.id, m.to_json())))
    assert d2.verification_method == (m,)
    assert d2.controller == () and d2.service == ()


def test_remove_only_d_group_is_lockout():
    g = gov(board=group(["alice"], "D"), ops=group(["bob"], "B"))
    p = patch(1, op(ResourceKind.GROUP, Op.REMOVE, "board"))
    # oracle: enumerate the groups left after removal
    remaining = {gid: grp for gid, grp in g.groups.items() if gid != "board"}
    assert all(grp.privilege is not Privilege.D for grp in remaining.values())
    with pytest.raises(LockoutRisk):
        apply_patch(BASE_DOC, g, p)


def test_demoting_last_d_group_is_lockout():
    p = patch(1, op(ResourceKind.GROUP, Op.UPDATE, "board", group(["alice"], "C").to_json()))
    with pytest.raises(LockoutRisk):
        apply_patch(BASE_DOC, BASE_GOV, p)


def test_update_mechanism_bumps_config_version():
    g = gov(board=group(["alice"], "D"), B=group(["alice", "bob", "carol"], "B"))
    p = patch(1, op(ResourceKind.MECHANISM_OF_GROUP, Op.UPDATE, "B", CoordinationSpec.n_out_of_m(2).to_json()))
    _, g2 = apply_patch(BASE_DOC, g, p)
    assert g2.groups["B"].mechanism == CoordinationSpec.n_out_of_m(2)
    assert g2.config_version == g.config_version + 1
    assert g2.groups["board"] == g.groups["board"]


def test_functional_patch_keeps_config_version():
    _, g2 = apply_patch(BASE_DOC, BASE_GOV, patch(1, add_service("acme", 1)))
    assert g2 == BASE_GOV


def test_stale_patch():
    with pytest.raises(StalePatch):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, add_service("acme", 1)), current_version=2)


def test_selector_not_found():
    with pytest.raises(SelectorNotFound):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.SERVICE, Op.REMOVE, "did:gov:acme#nope")))
    with pytest.raises(SelectorNotFound):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.GROUP, Op.REMOVE, "nope")))


def test_duplicate_entry():
    m = vm("acme", "alice")
    with pytest.raises(DuplicateEntry):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.VERIFICATION_METHOD, Op.ADD, m.id, m.to_json())))
    with pytest.raises(DuplicateEntry):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.CONTROLLER, Op.ADD, "did:gov:bob", "did:gov:bob")))


def test_subject_immutable():
    with pytest.raises(SubjectImmutable):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.SUBJECT_ID, Op.UPDATE, "did:gov:acme", "did:gov:x")))


def test_status_payload_must_be_invalid():
    with pytest.raises(MalformedPatch):
        apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.STATUS, Op.UPDATE, "status", "active")))
    d2, g2 = apply_patch(BASE_DOC, BASE_GOV, patch(1, op(ResourceKind.STATUS, Op.UPDATE, "status", "invalid")))
    assert (d2, g2) == (BASE_DOC, BASE_GOV)


def test_relationship_reference_and_removal():
    p = patch(1, op(ResourceKind.RELATIONSHIP, Op.ADD, "authentication:did:gov:acme#alice", "did:gov:acme#alice"))
    d2, _ = apply_patch(BASE_DOC, BASE_GOV, p)
    assert d2.authentication == ("did:gov:acme#alice",)
    # the method is still referenced, so removing it would dangle
    with pytest.raises(MalformedDocument):
        apply_patch(d2, BASE_GOV, patch(1, op(ResourceKind.VERIFICATION_METHOD, Op.REMOVE, "did:gov:acme#alice")))


def test_controller_update_replaces_value():
    p = patch(1, op(ResourceKind.CONTROLLER, Op.UPDATE, "did:gov:bob", "did:gov:carol"))
    d2, _ = apply_patch(BASE_DOC, BASE_GOV, p)
    assert d2.controller == (did("alice"), did("carol"))


def test_removing_default_group_clears_it():
    g = GovernanceConfig({"board": group(["alice"]), "ops": group(["bob"], "B")}, default_group="ops")
    _, g2 = apply_patch(BASE_DOC, g, patch(1, op(ResourceKind.GROUP, Op.REMOVE, "ops")))
    assert g2.default_group is None


# --- properties --------------------------------------------------------------

OWNERS = ["alice", "bob", "carol", "dave"]


@st.composite
def ops_on_base(draw):
    kind = draw(st.sampled_from([ResourceKind.VERIFICATION_METHOD, ResourceKind.SERVICE, ResourceKind.CONTROLLER,
                                 ResourceKind.TRUSTEE, ResourceKind.ALSO_KNOWN_AS, ResourceKind.GROUP]))
    verb = draw(st.sampled_from(list(Op)))
    who = draw(st.sampled_from(OWNERS))
    if kind is ResourceKind.VERIFICATION_METHOD:
        m = vm("acme", who)
        payload = m.to_json()
        if verb is Op.UPDATE:
            payload = {**payload, "publicKeyBase64url": key(who + "-rotated").public_key}
        return op(kind, verb, m.id, None if verb is Op.REMOVE else payload)
    if kind is ResourceKind.SERVICE:
        sid = f"did:gov:acme#svc-{who}"
        return op(kind, verb, sid, None if verb is Op.REMOVE else {"id": sid, "type": "T", "serviceEndpoint": who})
    if kind in (ResourceKind.CONTROLLER, ResourceKind.TRUSTEE):
        target = f"did:gov:{who}"
        payload = target if verb is Op.ADD else f"did:gov:{draw(st.sampled_from(OWNERS))}-2"
        return op(kind, verb, target, None if verb is Op.REMOVE else payload)
    if kind is ResourceKind.ALSO_KNOWN_AS:
        target = f"https://{who}.test"
        return op(kind, verb, target, None if verb is Op.REMOVE else (target if verb is Op.ADD else target + "/x"))
    gid = draw(st.sampled_from(["board", "ops", "new"]))
    payload = group([who], draw(st.sampled_from("ABCD"))).to_json()
    return op(kind, verb, gid, None if verb is Op.REMOVE else payload)


def _entries(doc: DidDocument, g: GovernanceConfig) -> dict:
    """Flatten state into {(kind, id): value} for structural diffs."""
    d = doc.to_json()
    out = {}
    for m in d.get("verificationMethod", []):
        out[(ResourceKind.VERIFICATION_METHOD, m["id"])] = m
    for s in d.get("service", []):
        out[(ResourceKind.SERVICE, s["id"])] = s
    for c in d.get("controller", []):
        out[(ResourceKind.CONTROLLER, c)] = c
    for t in d.get("trustees", []):
        out[(ResourceKind.TRUSTEE, t)] = t
    for a in d.get("alsoKnownAs", []):
        out[(ResourceKind.ALSO_KNOWN_AS, a)] = a
    for gid, grp in g.to_json()["groups"].items():
        out[(ResourceKind.GROUP, gid)] = grp
    return out


def _touched_keys(o: PatchOp) -> set:
    keys = {(o.selector.kind, o.selector.target_id)}
    if o.op is Op.UPDATE and isinstance(o.payload, str):
        keys.add((o.selector.kind, o.payload))
    return keys


@settings(max_examples=300, deadline=None)
@given(st.lists(ops_on_base(), min_size=1, max_size=3, unique_by=lambda o: o.selector))
def test_apply_changes_only_named_entries_and_is_atomic(ops):
    doc = variant_doc("acme", ["alice", "bob"], "b", trustees=(did("carol"),))
    g = BASE_GOV
    before_doc, before_gov = copy.deepcopy(doc.to_json()), copy.deepcopy(g.to_json())
    try:
        d2, g2 = apply_patch(doc, g, UpdatePatch(1, tuple(ops)))
    except DidGovError:
        # atomic: inputs untouched on failure
        assert doc.to_json() == before_doc and g.to_json() == before_gov
        return
    old, new = _entries(doc, g), _entries(d2, g2)
    changed = {k for k in old.keys() | new.keys() if old.get(k) != new.get(k)}
    allowed = set().union(*(_touched_keys(o) for o in ops))
    assert changed <= allowed
    assert d2.id == doc.id
    assert g2.has_full_privilege_group()


def test_failed_patch_leaves_input_identical():
    doc, g = BASE_DOC, BASE_GOV
    before = (doc.to_json(), g.to_json())
    with pytest.raises(SelectorNotFound):
        apply_patch(doc, g, patch(1, add_service("acme", 1), op(ResourceKind.SERVICE, Op.REMOVE, "did:gov:acme#x")))
    assert (doc.to_json(), g.to_json()) == before


def test_group_config_value_types():
    grp = GroupConfig.from_json(group(["alice"], "C", time_limit=3).to_json())
    assert grp.privilege is Privilege.C and grp.time_limit == 3
