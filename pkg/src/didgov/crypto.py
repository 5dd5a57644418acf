"""Keys, signatures and digests.

The whole package uses a single scheme, Ed25519 (deterministic signatures,
32-byte keys, 64-byte signatures). Keys and signatures travel as unpadded
base64url text.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import os
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import MalformedKey, MalformedSignature

KEY_TYPE = "Ed25519"
SIGNATURE_LENGTH = 64
KEY_LENGTH = 32


def b64url_encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not isinstance(text, str) or "=" in text:
        raise ValueError("expected unpadded base64url text")
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise ValueError(str(exc)) from exc


@dataclass(frozen=True)
class Digest:
    raw: bytes

    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return self.raw.hex()


@dataclass(frozen=True)
class Signature:
    raw: bytes
    key_type: str = KEY_TYPE

    def __post_init__(self) -> None:
        if self.key_type != KEY_TYPE or len(self.raw) != SIGNATURE_LENGTH:
            raise MalformedSignature(
                f"{self.key_type} signatures are {SIGNATURE_LENGTH} bytes, got {len(self.raw)}"
            )

    def encode(self) -> str:
        return b64url_encode(self.raw)

    @classmethod
    def decode(cls, text: str) -> "Signature":
        try:
            raw = b64url_decode(text)
        except ValueError as exc:
            raise MalformedSignature(f"undecodable signature: {exc}") from exc
        return cls(raw)


@dataclass(frozen=True)
class KeyPair:
    public_key: str
    private_key: bytes = field(repr=False)
    key_type: str = KEY_TYPE

    def _signer(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.private_key)

    def to_json(self) -> dict:
        """Key file form. Holds the secret; never embed in documents."""
        return {
            "keyType": self.key_type,
            "publicKey": self.public_key,
            "privateKey": b64url_encode(self.private_key),
        }

    @classmethod
    def from_json(cls, data: dict) -> "KeyPair":
        try:
            secret = b64url_decode(data["privateKey"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedKey(f"bad key file: {exc}") from exc
        kp = generate_keypair(secret)
        if data.get("publicKey") not in (None, kp.public_key):
            raise MalformedKey("public key does not match private key")
        return kp


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Deterministic when ``seed`` (32 bytes) is given."""
    if seed is None:
        seed = os.urandom(KEY_LENGTH)
    if len(seed) != KEY_LENGTH:
        raise MalformedKey(f"seed must be {KEY_LENGTH} bytes, got {len(seed)}")
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pub = sk.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(public_key=b64url_encode(pub), private_key=bytes(seed))


def load_public_key(public_key: str) -> Ed25519PublicKey:
    try:
        raw = b64url_decode(public_key)
    except ValueError as exc:
        raise MalformedKey(f"undecodable public key: {exc}") from exc
    if len(raw) != KEY_LENGTH:
        raise MalformedKey(f"{KEY_TYPE} public keys are {KEY_LENGTH} bytes, got {len(raw)}")
    return Ed25519PublicKey.from_public_bytes(raw)


def sign(key: KeyPair, message: bytes) -> Signature:
    return Signature(key._signer().sign(message))


def verify(public_key: str, message: bytes, sig: Signature | str) -> bool:
    pk = load_public_key(public_key)
    if isinstance(sig, str):
        sig = Signature.decode(sig)
    try:
        pk.verify(sig.raw, message)
    except InvalidSignature:
        return False
    return True


def digest(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())
