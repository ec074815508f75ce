"""Label and payload encryption.

A label travels as two AES blocks ``(r, PRP_k(r+1) XOR (label || origin || 0...))``.
The tie-break value ``PRP_k(r+2)`` is never sent: whoever holds the key
recomputes it, so equal labels still decrypt to distinct, randomly ordered
effective tuples.

Payloads are sealed separately with AES-GCM and are opaque to the server.
"""
from __future__ import annotations

import random
import secrets
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from app import config
from app.exceptions import EncodingError, PayloadIntegrityError

BLOCK_BYTES = 16
BLOCK_BITS = BLOCK_BYTES * 8
LABEL_CT_BYTES = 2 * BLOCK_BYTES
NONCE_BYTES = 12
TAG_BYTES = 16

_BLOCK_MASK = (1 << BLOCK_BITS) - 1

PayloadCiphertext = bytes


class Origin(IntEnum):
    LEFT = 0b00
    INSERT = 0b01
    RIGHT = 0b11


class Ordering(IntEnum):
    LT = -1
    EQ = 0
    GT = 1


@dataclass(frozen=True, slots=True)
class LabelCiphertext:
    r: bytes
    masked: bytes

    @property
    def raw(self) -> bytes:
        return self.r + self.masked

    @classmethod
    def from_bytes(cls, data: bytes) -> LabelCiphertext:
        if len(data) != LABEL_CT_BYTES:
            raise EncodingError(
                f"label ciphertext must be {LABEL_CT_BYTES} bytes, got {len(data)}"
            )
        return cls(bytes(data[:BLOCK_BYTES]), bytes(data[BLOCK_BYTES:]))


class EffectiveTuple(NamedTuple):
    """Decrypted label; tuple comparison gives the effective total order."""

    label: int
    origin: int
    tiebreak: int
    ctbytes: bytes


@dataclass(frozen=True)
class SecretKey:
    prp_key: bytes
    payload_key: bytes
    label_bits: int = 64
    _local: threading.local = field(
        default_factory=threading.local, repr=False, compare=False
    )


def keygen(seed: int | str | bytes | None = None, label_bits: int | None = None) -> SecretKey:
    width = config.label_bits() if label_bits is None else label_bits
    if not 1 <= width <= BLOCK_BITS - 2:
        raise EncodingError(f"label width must be in [1, {BLOCK_BITS - 2}], got {width}")
    if seed is None:
        material = secrets.token_bytes(2 * BLOCK_BYTES)
    else:
        seed_bytes = seed if isinstance(seed, bytes) else str(seed).encode()
        material = HKDF(
            algorithm=hashes.SHA256(),
            length=2 * BLOCK_BYTES,
            salt=None,
            info=b"pope keygen",
        ).derive(seed_bytes)
    return SecretKey(material[:BLOCK_BYTES], material[BLOCK_BYTES:], width)


def prp(key: SecretKey, blocks: bytes) -> bytes:
    """Apply the block cipher to each 16-byte block of ``blocks``."""
    encryptor = getattr(key._local, "ecb", None)
    if encryptor is None:
        encryptor = Cipher(algorithms.AES(key.prp_key), modes.ECB()).encryptor()
        key._local.ecb = encryptor
    return encryptor.update(blocks)


def _counter(r: int, offset: int) -> bytes:
    return ((r + offset) & _BLOCK_MASK).to_bytes(BLOCK_BYTES, "big")


def _random_block(size: int, rng: random.Random | None) -> bytes:
    return rng.randbytes(size) if rng is not None else secrets.token_bytes(size)


def enc_label(
    key: SecretKey,
    label: int,
    origin: Origin = Origin.INSERT,
    rng: random.Random | None = None,
) -> LabelCiphertext:
    width = key.label_bits
    if label < 0 or label >> width:
        raise EncodingError(f"label {label} does not fit in {width} bits")
    r = _random_block(BLOCK_BYTES, rng)
    pad = int.from_bytes(prp(key, _counter(int.from_bytes(r, "big"), 1)), "big")
    plain = (label << (BLOCK_BITS - width)) | (int(origin) << (BLOCK_BITS - width - 2))
    return LabelCiphertext(r, (pad ^ plain).to_bytes(BLOCK_BYTES, "big"))


def dec_label(key: SecretKey, ct: LabelCiphertext) -> EffectiveTuple:
    r = int.from_bytes(ct.r, "big")
    stream = prp(key, _counter(r, 1) + _counter(r, 2))
    plain = int.from_bytes(stream[:BLOCK_BYTES], "big") ^ int.from_bytes(ct.masked, "big")
    width = key.label_bits
    return EffectiveTuple(
        label=plain >> (BLOCK_BITS - width),
        origin=(plain >> (BLOCK_BITS - width - 2)) & 0b11,
        tiebreak=int.from_bytes(stream[BLOCK_BYTES:], "big"),
        ctbytes=ct.r + ct.masked,
    )


def compare(key: SecretKey, a: LabelCiphertext, b: LabelCiphertext) -> Ordering:
    ta = dec_label(key, a)
    tb = dec_label(key, b)
    return Ordering((ta > tb) - (ta < tb))


def _aead(key: SecretKey) -> AESGCM:
    aead = getattr(key._local, "gcm", None)
    if aead is None:
        aead = AESGCM(key.payload_key)
        key._local.gcm = aead
    return aead


def enc_payload(
    key: SecretKey, data: bytes, rng: random.Random | None = None
) -> PayloadCiphertext:
    nonce = _random_block(NONCE_BYTES, rng)
    return nonce + _aead(key).encrypt(nonce, data, None)


def dec_payload(key: SecretKey, ct: PayloadCiphertext) -> bytes:
    if len(ct) < NONCE_BYTES + TAG_BYTES:
        raise PayloadIntegrityError("payload ciphertext is too short")
    try:
        return _aead(key).decrypt(ct[:NONCE_BYTES], ct[NONCE_BYTES:], None)
    except InvalidTag:
        raise PayloadIntegrityError("payload failed authentication")
