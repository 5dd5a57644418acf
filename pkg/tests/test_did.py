import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didgov import Did, DidDocument, Service, VerificationMethod, effective_controllers
from didgov.did import parse_bundle, parse_document, serialize_document, split_did_url
from didgov.errors import MalformedDid, MalformedDocument
from helpers import did, key, variant_doc, vm
from oracles import canonicalize

# sha256 over the stdlib canonicalization of each fixture, computed with hashlib.
FROZEN_DIGESTS = {
    "full": "792fd644bd77ffac1ac3eff6e6c4341f71cebea68dc708b98f16e1393b08b329",
    "solo": "7b0575b1f5204f08501bb918ef097456c841c415da61a97f6ffa6d60a71afa59",
    "variant_a": "b96a6615982699d28a6daedb8054891f7b889286165f6585c0198ff1895384bd",
    "variant_b": "14078884b764a0e77132dc058a89a32b1cb2593ebec5de4d3efd58cf8ea00aaf",
    "variant_c": "6e24273b88bffb27273a0faea013dd77dca9ee6090490e06f27bef4f434c88ab",
    "with_governance": "2523ab39c1d1f9a869a307d290f6c3e71de28baf6b5382c107a55980396c72b1",
}


def _serialize(text: str) -> bytes:
    if "governance" in json.loads(text):
        return serialize_document(*parse_bundle(text))
    return serialize_document(parse_document(text))


def test_corpus_is_complete(fixture_texts):
    assert set(fixture_texts) == set(FROZEN_DIGESTS)


def test_serialize_matches_canonicalization_oracle(fixture_texts):
    for name, text in fixture_texts.items():
        assert _serialize(text) == canonicalize(text), name


def test_serialize_is_idempotent(fixture_texts):
    for text in fixture_texts.values():
        once = _serialize(text)
        assert _serialize(once.decode()) == once


def test_digest_of_serialization_is_frozen(fixture_texts):
    for name, text in fixture_texts.items():
        assert hashlib.sha256(_serialize(text)).hexdigest() == FROZEN_DIGESTS[name], name


def test_key_order_does_not_matter():
    a = '{"id":"did:gov:x","controller":["did:gov:a"],"alsoKnownAs":["https://x"]}'
    b = '{"alsoKnownAs":["https://x"],  "controller":["did:gov:a"], "id":"did:gov:x"}'
    assert serialize_document(parse_document(a)) == serialize_document(parse_document(b))


def test_controller_list_only():
    doc = parse_document('{"id":"did:gov:acme","controller":["did:gov:alice","did:gov:bob"]}')
    assert doc.controller == (did("alice"), did("bob"))
    assert doc.verification_method == ()


def test_minimal_document():
    doc = parse_document('{"id":"did:gov:solo"}')
    assert doc.id == did("solo")
    assert effective_controllers(doc) == frozenset()


@pytest.mark.parametrize("text", ["did:gov", "gov:x", "did::x", "did:GOV:x", "did:gov:x y", "did:gov:", "did:gov:ü"])
def test_malformed_did(text):
    with pytest.raises(MalformedDid):
        Did.parse(text)


def test_bad_subject_is_malformed_did():
    with pytest.raises(MalformedDid):
        parse_document('{"id":"nope"}')


def test_did_string_roundtrip():
    assert str(Did.parse("did:gov:a.b-c_d")) == "did:gov:a.b-c_d"


def test_split_did_url():
    assert split_did_url("did:gov:x#k") == (did("x"), "k")
    with pytest.raises(MalformedDid):
        split_did_url("did:gov:x")


@pytest.mark.parametrize("text", [
    "[]",
    "not json",
    '{"controller":[]}',
    '{"id":"did:gov:x","bogus":1}',
    '{"id":"did:gov:x","controller":"did:gov:a"}',
    '{"id":"did:gov:x","controller":["did:gov:a","did:gov:a"]}',
    '{"id":"did:gov:x","authentication":["did:gov:x#missing"]}',
    '{"id":"did:gov:x","service":[{"id":"did:gov:x#s","type":"T","serviceEndpoint":"u"},'
    '{"id":"did:gov:x#s","type":"T","serviceEndpoint":"v"}]}',
    '{"id":"did:gov:x","verificationMethod":[{"id":"did:gov:x#k","type":"Ed25519",'
    '"controller":"did:gov:x","publicKeyBase64url":"short"}]}',
])
def test_malformed_documents(text):
    with pytest.raises(MalformedDocument):
        parse_document(text)


def test_duplicate_method_ids_across_sections():
    m = vm("x", "alice")
    with pytest.raises(MalformedDocument):
        DidDocument(did("x"), verification_method=(m,), capability_invocation=(m,))


def test_bundle_requires_governance():
    with pytest.raises(MalformedDocument):
        parse_bundle('{"id":"did:gov:x"}')


def test_variant_a_and_c_same_controllers():
    assert effective_controllers(variant_doc("acme", ["alice", "bob"], "a")) == \
        effective_controllers(variant_doc("acme", ["alice", "bob"], "c"))


def test_variant_b_same_as_a():
    assert effective_controllers(variant_doc("acme", ["alice", "bob"], "b")) == {did("alice"), did("bob")}


def test_authentication_keys_are_not_controllers():
    m = vm("acme", "dave")
    doc = DidDocument(did("acme"), verification_method=(m,), authentication=(m.id,))
    assert effective_controllers(doc) == frozenset()


def test_effective_controllers_is_a_set():
    doc = variant_doc("acme", ["alice"], "b", capability_invocation=("did:gov:acme#alice",))
    assert effective_controllers(doc) == {did("alice")}


# --- round-trip property -----------------------------------------------------

names = st.sampled_from(["alice", "bob", "carol", "dave", "erin"])


@st.composite
def documents(draw):
    subject = draw(st.sampled_from(["acme", "solo", "x.y-z"]))
    controllers = draw(st.lists(names, unique=True, max_size=3))
    owners = draw(st.lists(names, unique=True, max_size=4))
    methods = tuple(vm(subject, o) for o in owners)
    ids = [m.id for m in methods]
    auth = tuple(draw(st.lists(st.sampled_from(ids), unique=True))) if ids else ()
    inline = tuple(
        VerificationMethod(f"did:gov:{subject}#inv-{o}", did(o), key(o + "-inv").public_key)
        for o in draw(st.lists(names, unique=True, max_size=2))
    )
    services = tuple(
        Service(f"did:gov:{subject}#svc{i}", "Web", draw(st.text(min_size=1, max_size=8)))
        for i in range(draw(st.integers(0, 2)))
    )
    aka = tuple(draw(st.lists(st.text(min_size=1, max_size=10), unique=True, max_size=2)))
    trustees = tuple(did(t) for t in draw(st.lists(names, unique=True, max_size=2)))
    return DidDocument(
        did(subject),
        controller=tuple(did(c) for c in controllers),
        verification_method=methods,
        authentication=auth,
        capability_invocation=inline,
        also_known_as=aka,
        service=services,
        trustees=trustees,
    )


@settings(max_examples=200, deadline=None)
@given(documents())
def test_parse_serialize_roundtrip(doc):
    text = serialize_document(doc)
    again = parse_document(text)
    assert again == doc
    assert serialize_document(again) == text
    assert text == canonicalize(text.decode())


@settings(max_examples=100, deadline=None)
@given(documents(), documents())
def test_equal_documents_serialize_identically(a, b):
    assert (a == b) == (serialize_document(a) == serialize_document(b))
