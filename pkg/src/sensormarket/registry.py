"""Decentralized sensor registry: first-claim-wins name records on the chain.

Records ride ordinary transaction payloads.  A registration or update counts
only if the carrying transaction's first input witness is signed by the
record's owner key (registration) or the current owner (update).  Collisions
inside one block resolve deterministically: for registrations the lower txid
wins, for updates the later position in the block wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import crypto, datastore, payload as payload_tags, wire
from .errors import MalformedTx, RecordTooLarge, UnknownName
from .ledger import (
    Block,
    Chain,
    MAX_PAYLOAD,
    PayToKeyHash,
    Transaction,
    TxOutput,
    txid,
)
from .simnet import Node, Simulation
from .wallet import Wallet

MAX_NAME_LEN = 64


@dataclass(frozen=True)
class SensorRecord:
    name: str
    owner_key_digest: bytes
    payment_digest: bytes
    data_type: str
    price_per_datum: int
    endpoint: str  # datastore locator hint, or "inline"

    def serialize(self) -> bytes:
        name_bytes = self.name.encode()
        if len(name_bytes) > MAX_NAME_LEN:
            raise MalformedTx(f"name exceeds {MAX_NAME_LEN} bytes")
        # The payment digest is elided when it equals the owner digest (the
        # common case), which keeps typical records inside the payload cap.
        if self.payment_digest == self.owner_key_digest:
            payment = wire.u8(0)
        else:
            payment = wire.u8(1) + self.payment_digest
        return (
            wire.varbytes(name_bytes)
            + self.owner_key_digest
            + payment
            + wire.varbytes(self.data_type.encode())
            + wire.u64(self.price_per_datum)
            + wire.varbytes(self.endpoint.encode())
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "SensorRecord":
        r = wire.Reader(data)
        name = r.varbytes().decode()
        if len(name.encode()) > MAX_NAME_LEN:
            raise MalformedTx("name too long")
        owner = r.read(crypto.KEY_DIGEST_LEN)
        payment = r.read(crypto.KEY_DIGEST_LEN) if r.u8() else owner
        data_type = r.varbytes().decode()
        price = r.u64()
        endpoint = r.varbytes().decode()
        r.expect_end()
        return cls(name, owner, payment, data_type, price, endpoint)


@dataclass
class IndexEntry:
    record: SensorRecord
    registration_txid: bytes
    last_update_height: int


def _record_from_payload(
    data: bytes, stores: Optional[dict[int, datastore.Store]]
) -> Optional[SensorRecord]:
    tag = data[0]
    try:
        if tag in (payload_tags.REGISTRY_REGISTER, payload_tags.REGISTRY_UPDATE):
            return SensorRecord.deserialize(data[1:])
        anchor = datastore.Anchor.deserialize(data[1:])
        if stores is None:
            return None
        blob = datastore.fetch(anchor, stores)
        return SensorRecord.deserialize(blob)
    except Exception:
        return None  # malformed or unfetchable records are simply not indexed


class Registry:
    """Name index maintained incrementally from the block-apply path."""

    def __init__(self, stores: Optional[dict[int, datastore.Store]] = None):
        self.index: dict[str, IndexEntry] = {}
        self.stores = stores

    def attach(self, node: Node) -> None:
        node.on_block.append(self.apply_block)
        for block in node.sim.chain.blocks[: node.known_height + 1]:
            self.apply_block(block)

    def apply_block(self, block: Block) -> None:
        registrations: dict[str, list[tuple[bytes, SensorRecord]]] = {}
        updates: list[tuple[bytes, SensorRecord, bytes]] = []
        for tx in block.transactions:
            signer = self._first_signer_digest(tx)
            if signer is None:
                continue
            for out in tx.outputs:
                if not out.payload:
                    continue
                tag = out.payload[0]
                if tag in (payload_tags.REGISTRY_REGISTER,
                           payload_tags.REGISTRY_REGISTER_ANCHORED):
                    record = _record_from_payload(out.payload, self.stores)
                    if record is not None and record.owner_key_digest == signer:
                        registrations.setdefault(record.name, []).append((txid(tx), record))
                elif tag in (payload_tags.REGISTRY_UPDATE,
                             payload_tags.REGISTRY_UPDATE_ANCHORED):
                    record = _record_from_payload(out.payload, self.stores)
                    if record is not None:
                        updates.append((txid(tx), record, signer))
        for name, claims in registrations.items():
            if name in self.index:
                continue  # first valid registration in an earlier block wins
            tid, record = min(claims, key=lambda c: c[0])
            self.index[name] = IndexEntry(record, tid, block.height)
        # Updates apply in block position order; within one block the later
        # transaction's record stands.
        for tid, record, signer in updates:
            entry = self.index.get(record.name)
            if entry is None:
                continue
            if entry.record.owner_key_digest != signer:
                continue  # not the owner: ignored
            if record.owner_key_digest != entry.record.owner_key_digest:
                continue  # ownership transfers are out of scope
            entry.record = record
            entry.last_update_height = block.height

    @staticmethod
    def _first_signer_digest(tx: Transaction) -> Optional[bytes]:
        for inp in tx.inputs:
            if inp.witness.signatures:
                return crypto.key_digest(inp.witness.signatures[0][0])
        return None

    @classmethod
    def rescan(cls, chain: Chain,
               stores: Optional[dict[int, datastore.Store]] = None) -> "Registry":
        registry = cls(stores)
        for block in chain.blocks:
            registry.apply_block(block)
        return registry

    def lookup(self, name: str) -> SensorRecord:
        entry = self.index.get(name)
        if entry is None:
            raise UnknownName(name)
        return entry.record

    def find_by_data_type(self, tag: str) -> list[SensorRecord]:
        return sorted(
            (e.record for e in self.index.values() if e.record.data_type == tag),
            key=lambda r: r.name,
        )

    def dump(self) -> list[dict]:
        return [
            {
                "name": name,
                "owner": entry.record.owner_key_digest.hex(),
                "payment_digest": entry.record.payment_digest.hex(),
                "data_type": entry.record.data_type,
                "price_per_datum": entry.record.price_per_datum,
                "endpoint": entry.record.endpoint,
                "registration_txid": entry.registration_txid.hex(),
                "last_update_height": entry.last_update_height,
            }
            for name, entry in sorted(self.index.items())
        ]


def _registry_tx(
    sim: Simulation,
    node: Node,
    wallet: Wallet,
    record: SensorRecord,
    inline_tag: int,
    anchored_tag: int,
    stores: Optional[list[datastore.Store]],
    replication: int,
) -> Transaction:
    body = record.serialize()
    if 1 + len(body) <= MAX_PAYLOAD:
        data = bytes([inline_tag]) + body
    else:
        if not stores:
            raise RecordTooLarge(
                f"record is {len(body)} bytes and no datastore is configured"
            )
        anchor = datastore.store(stores, body, replication)
        data = bytes([anchored_tag]) + anchor.serialize()
    tx = wallet.create_tx(
        [TxOutput(0, PayToKeyHash(wallet.key_digest), data)],
        fee=sim.config.default_fee,
    )
    sim.broadcast(tx, node)
    return tx


def register_sensor(
    sim: Simulation,
    node: Node,
    wallet: Wallet,
    record: SensorRecord,
    stores: Optional[list[datastore.Store]] = None,
    replication: int = 2,
) -> Transaction:
    """Broadcast a registration; the index honors it once confirmed (and only
    if the wallet key matches the record's owner digest)."""
    return _registry_tx(
        sim, node, wallet, record,
        payload_tags.REGISTRY_REGISTER, payload_tags.REGISTRY_REGISTER_ANCHORED,
        stores, replication,
    )


def update_record(
    sim: Simulation,
    node: Node,
    wallet: Wallet,
    record: SensorRecord,
    stores: Optional[list[datastore.Store]] = None,
    replication: int = 2,
) -> Transaction:
    return _registry_tx(
        sim, node, wallet, record,
        payload_tags.REGISTRY_UPDATE, payload_tags.REGISTRY_UPDATE_ANCHORED,
        stores, replication,
    )
