"""Key pairs, addresses, signatures, hybrid encryption and content digests.

Every actor key pair is derived deterministically from a 32-byte seed so that
identical scenario seeds reproduce identical chains byte for byte.  A key
pair's public identity is 64 bytes: an Ed25519 verification key (bytes 0..31)
concatenated with an X25519 encryption key (bytes 32..63), both derived from
the same seed.

Addresses are ``prefix(1) || sha256(public_key)[:20] || checksum(4)`` where
the checksum is the first 4 bytes of sha256(prefix || digest20).  The textual
form is lowercase hex of those 25 bytes (case-insensitive on decode).

Datum confidentiality uses ephemeral X25519 agreement + HKDF-SHA256 +
ChaCha20-Poly1305.  Callers that need byte-stable output pass an explicit
32-byte ephemeral seed (simulations draw it from their seeded RNG).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .errors import DecryptFailed, MalformedTx

SEED_LEN = 32
PUBKEY_LEN = 64
KEY_DIGEST_LEN = 20
ADDRESS_PREFIX = 0x53
AEAD_TAG_LEN = 16
AEAD_NONCE_LEN = 12


def digest(data: bytes) -> bytes:
    """The one 32-byte content digest used everywhere (SHA-256)."""
    return hashlib.sha256(data).digest()


def key_digest(public_key: bytes) -> bytes:
    return digest(public_key)[:KEY_DIGEST_LEN]


@dataclass(frozen=True)
class KeyPair:
    seed: bytes
    public_key: bytes  # ed25519 pub || x25519 pub

    @property
    def key_digest(self) -> bytes:
        return key_digest(self.public_key)

    @property
    def address(self) -> "Address":
        return derive_address(self.public_key)


@dataclass(frozen=True)
class Address:
    version_prefix: int
    key_digest: bytes
    checksum: bytes

    def encode(self) -> str:
        return (bytes([self.version_prefix]) + self.key_digest + self.checksum).hex()


@dataclass(frozen=True)
class CipherEnvelope:
    ephemeral_key: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def serialize(self) -> bytes:
        return self.ephemeral_key + self.nonce + self.tag + self.ciphertext

    @classmethod
    def deserialize(cls, data: bytes) -> "CipherEnvelope":
        if len(data) < 32 + AEAD_NONCE_LEN + AEAD_TAG_LEN:
            raise MalformedTx("cipher envelope too short")
        return cls(
            ephemeral_key=data[:32],
            nonce=data[32:32 + AEAD_NONCE_LEN],
            tag=data[44:44 + AEAD_TAG_LEN],
            ciphertext=data[60:],
        )


def _signing_key(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def _encryption_key(seed: bytes) -> X25519PrivateKey:
    # Separate scalar per seed so signing and encryption keys never coincide.
    material = hashlib.sha256(b"sensormarket/x25519" + seed).digest()
    return X25519PrivateKey.from_private_bytes(material)


def generate_keypair(seed: bytes) -> KeyPair:
    if len(seed) != SEED_LEN:
        raise ValueError(f"seed must be exactly {SEED_LEN} bytes, got {len(seed)}")
    ed_pub = _signing_key(seed).public_key().public_bytes(
        Encoding.Raw, PublicFormat.Raw
    )
    x_pub = _encryption_key(seed).public_key().public_bytes(
        Encoding.Raw, PublicFormat.Raw
    )
    return KeyPair(seed=seed, public_key=ed_pub + x_pub)


def derive_address(public_key: bytes) -> Address:
    kd = key_digest(public_key)
    checksum = digest(bytes([ADDRESS_PREFIX]) + kd)[:4]
    return Address(version_prefix=ADDRESS_PREFIX, key_digest=kd, checksum=checksum)


def decode_address(text: str) -> Address:
    try:
        raw = bytes.fromhex(text.lower())
    except ValueError:
        raise MalformedTx("address is not valid hex") from None
    if len(raw) != 1 + KEY_DIGEST_LEN + 4:
        raise MalformedTx("address has wrong length")
    prefix, kd, checksum = raw[0], raw[1:21], raw[21:]
    if digest(bytes([prefix]) + kd)[:4] != checksum:
        raise MalformedTx("address checksum mismatch")
    return Address(version_prefix=prefix, key_digest=kd, checksum=checksum)


def sign(seed: bytes, message: bytes) -> bytes:
    return _signing_key(seed).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != PUBKEY_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def _session_key(shared: bytes, eph_pub: bytes, recipient_x_pub: bytes) -> tuple[bytes, bytes]:
    okm = hashlib.sha256(b"sensormarket/session" + shared + eph_pub + recipient_x_pub).digest()
    nonce = hashlib.sha256(b"sensormarket/nonce" + shared + eph_pub).digest()[:AEAD_NONCE_LEN]
    return okm, nonce


def encrypt_for(public_key: bytes, plaintext: bytes, ephemeral_seed: bytes | None = None) -> CipherEnvelope:
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    if len(public_key) != PUBKEY_LEN:
        raise MalformedTx("recipient public key has wrong length")
    if ephemeral_seed is None:
        ephemeral_seed = os.urandom(SEED_LEN)
    eph_priv = X25519PrivateKey.from_private_bytes(
        hashlib.sha256(b"sensormarket/ephemeral" + ephemeral_seed).digest()
    )
    eph_pub = eph_priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    recipient_x_pub = public_key[32:]
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient_x_pub))
    key, nonce = _session_key(shared, eph_pub, recipient_x_pub)
    sealed = ChaCha20Poly1305(key).encrypt(nonce, plaintext, None)
    return CipherEnvelope(
        ephemeral_key=eph_pub,
        nonce=nonce,
        ciphertext=sealed[:-AEAD_TAG_LEN],
        tag=sealed[-AEAD_TAG_LEN:],
    )


def decrypt(seed: bytes, envelope: CipherEnvelope) -> bytes:
    x_priv = _encryption_key(seed)
    x_pub = x_priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    try:
        shared = x_priv.exchange(X25519PublicKey.from_public_bytes(envelope.ephemeral_key))
    except ValueError:
        raise DecryptFailed("malformed ephemeral key") from None
    key, _ = _session_key(shared, envelope.ephemeral_key, x_pub)
    try:
        return ChaCha20Poly1305(key).decrypt(
            envelope.nonce, envelope.ciphertext + envelope.tag, None
        )
    except InvalidTag:
        raise DecryptFailed("authentication failed") from None


def keypair_from_label(label: str) -> KeyPair:
    """Convenience: a reproducible key pair named by a text label."""
    return generate_keypair(digest(b"sensormarket/keypair/" + label.encode()))


# Exporting the raw private scalar is only needed by tests probing determinism.
def _raw_signing_private(seed: bytes) -> bytes:
    return _signing_key(seed).private_bytes(
        Encoding.Raw, PrivateFormat.Raw, NoEncryption()
    )
