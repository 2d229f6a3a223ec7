"""The atomic datum-for-cash exchange: requester and sensor state machines.

Flow: the requester pays the sensor's address on-chain; the sensor notices
the confirmed payment, recovers the payer's public key from the payment's
first input witness, and answers with a delivery transaction whose payload
carries the datum encrypted for that key (inline if it fits the payload cap,
otherwise anchored in the datastore).  The requester decrypts on receipt.
Exactly two on-chain transactions per honest exchange.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from . import crypto, datastore, payload as payload_tags
from .errors import (
    AllReplicasBadOrMissing,
    AnchorMismatch,
    DecryptFailed,
    InsufficientFunds,
    NoSensorFunds,
)
from .ledger import Block, MAX_PAYLOAD, PayToKeyHash, Transaction, TxOutput, txid
from .simnet import Node, Simulation
from .wallet import Wallet

MARKER_VALUE = 1  # delivery transactions need one spendable unit to address the buyer


@dataclass
class PaymentNotice:
    payment_txid: bytes
    payer_public_key: bytes
    amount: int
    height: int


@dataclass
class DatumDelivery:
    payment_txid: Optional[bytes]
    delivery_txid: bytes
    plaintext: bytes
    sensor_digest: bytes
    request_time: Optional[float]
    delivery_time: float
    latency_blocks: int


def _paying_outputs(tx: Transaction, key_digest: bytes):
    for i, out in enumerate(tx.outputs):
        if isinstance(out.predicate, PayToKeyHash) and out.predicate.key_digest == key_digest:
            yield i, out


def _first_witness_key(tx: Transaction) -> Optional[bytes]:
    for inp in tx.inputs:
        if inp.witness.signatures:
            return inp.witness.signatures[0][0]
    return None


class SensorActor:
    """Sells one datum per confirmed payment of at least ``price_per_datum``."""

    def __init__(
        self,
        sim: Simulation,
        node: Node,
        keypair: crypto.KeyPair,
        price_per_datum: int,
        datum_source: Callable[[float], bytes],
        confirmation_depth: int = 1,
        stores: Optional[list[datastore.Store]] = None,
        replication: int = 2,
        actor_id: str = "sensor",
    ):
        self.sim = sim
        self.node = node
        self.keypair = keypair
        self.price_per_datum = price_per_datum
        self.datum_source = datum_source
        self.confirmation_depth = confirmation_depth
        self.stores = stores or []
        self.replication = replication
        self.actor_id = actor_id
        self.wallet = Wallet(keypair, node)
        self.handled: set[bytes] = set()
        self.fulfillments: list[dict] = []
        self._rng = sim.rng(f"sensor/{actor_id}")
        node.on_block.append(self._on_block)

    def _on_block(self, block: Block) -> None:
        for notice in self.detect_payment():
            self.fulfill(notice)

    def detect_payment(self) -> list[PaymentNotice]:
        """Confirmed, not-yet-handled incoming payments meeting the price."""
        notices = []
        top = self.node.known_height
        cutoff = top - self.confirmation_depth + 1
        for height in range(1, cutoff + 1):
            for tx in self.sim.chain.blocks[height].transactions:
                tid = txid(tx)
                if tid in self.handled:
                    continue
                payer_key = _first_witness_key(tx)
                if payer_key is None or crypto.key_digest(payer_key) == self.wallet.key_digest:
                    continue  # our own spend (change back to us) is not a payment
                if not self._is_plain_payment(tx):
                    continue  # contract settlements are not datum requests
                amount = sum(out.value for _, out in _paying_outputs(tx, self.wallet.key_digest))
                if amount == 0:
                    continue
                if amount < self.price_per_datum:
                    self.handled.add(tid)
                    self.sim.log_event(
                        "underpayment",
                        sensor=self.actor_id,
                        payment_txid=tid.hex(),
                        amount=amount,
                        price=self.price_per_datum,
                    )
                    continue
                notices.append(PaymentNotice(tid, payer_key, amount, height))
        return notices

    def _is_plain_payment(self, tx: Transaction) -> bool:
        """True when every input spends an ordinary key-hash output."""
        for inp in tx.inputs:
            prev = self.sim.chain.find_tx(inp.prev_txid)
            if prev is None:
                return False
            if not isinstance(prev.outputs[inp.prev_index].predicate, PayToKeyHash):
                return False
        return True

    def fulfill(self, notice: PaymentNotice) -> Transaction:
        datum = self.datum_source(self.sim.clock)
        envelope = crypto.encrypt_for(
            notice.payer_public_key, datum, ephemeral_seed=self._rng.randbytes(32)
        )
        sealed = envelope.serialize()
        if 1 + len(sealed) <= MAX_PAYLOAD:
            data = bytes([payload_tags.DATUM_INLINE]) + sealed
            mode = "inline"
        else:
            anchor = datastore.store(self.stores, sealed, self.replication)
            data = bytes([payload_tags.DATUM_ANCHORED]) + anchor.serialize()
            mode = "anchored"
        payer_digest = crypto.key_digest(notice.payer_public_key)
        try:
            tx = self.wallet.create_tx(
                [TxOutput(MARKER_VALUE, PayToKeyHash(payer_digest), data)],
                fee=self.sim.config.default_fee,
            )
        except InsufficientFunds as exc:
            raise NoSensorFunds(str(exc)) from exc
        self.handled.add(notice.payment_txid)
        self.sim.broadcast(tx, self.node)
        self.fulfillments.append(
            {
                "payment_txid": notice.payment_txid.hex(),
                "delivery_txid": txid(tx).hex(),
                "amount": notice.amount,
                "mode": mode,
                "time": self.sim.clock,
            }
        )
        return tx


@dataclass
class _Request:
    payment_txid: bytes
    sensor_digest: bytes
    time: float
    height: int


class RequesterActor:
    """Buys datums and decrypts confirmed deliveries."""

    def __init__(
        self,
        sim: Simulation,
        node: Node,
        keypair: crypto.KeyPair,
        confirmation_depth: int = 1,
        stores: Optional[list[datastore.Store]] = None,
        actor_id: str = "requester",
    ):
        self.sim = sim
        self.node = node
        self.keypair = keypair
        self.confirmation_depth = confirmation_depth
        self.stores = {s.store_id: s for s in (stores or [])}
        self.actor_id = actor_id
        self.wallet = Wallet(keypair, node)
        self.outstanding: list[_Request] = []
        self.deliveries: list[DatumDelivery] = []
        self.failures: list[dict] = []
        self._seen_deliveries: set[bytes] = set()
        self.on_datum: list[Callable[[DatumDelivery], None]] = []
        node.on_block.append(self._on_block)

    def initiate_purchase(
        self, sensor_payment_digest: bytes, price: int, amount: Optional[int] = None
    ) -> Transaction:
        pay_amount = price if amount is None else amount
        tx = self.wallet.pay(sensor_payment_digest, pay_amount, self.sim.config.default_fee)
        self.outstanding.append(
            _Request(txid(tx), sensor_payment_digest, self.sim.clock, self.node.known_height)
        )
        self.sim.broadcast(tx, self.node)
        return tx

    def _on_block(self, block: Block) -> None:
        self.receive_datum()

    def receive_datum(self) -> list[DatumDelivery]:
        """Decrypt confirmed deliveries matching outstanding requests."""
        new: list[DatumDelivery] = []
        top = self.node.known_height
        cutoff = top - self.confirmation_depth + 1
        for height in range(1, cutoff + 1):
            for tx in self.sim.chain.blocks[height].transactions:
                tid = txid(tx)
                if tid in self._seen_deliveries:
                    continue
                delivery = self._try_take_delivery(tx, tid, height)
                if delivery is not None:
                    new.append(delivery)
        for d in new:
            self.deliveries.append(d)
            for hook in self.on_datum:
                hook(d)
        return new

    def _try_take_delivery(
        self, tx: Transaction, tid: bytes, height: int
    ) -> Optional[DatumDelivery]:
        data = None
        for _, out in _paying_outputs(tx, self.wallet.key_digest):
            if out.payload and out.payload[0] in (
                payload_tags.DATUM_INLINE,
                payload_tags.DATUM_ANCHORED,
            ):
                data = out.payload
                break
        if data is None:
            return None
        sender_key = _first_witness_key(tx)
        if sender_key is None:
            return None
        sender_digest = crypto.key_digest(sender_key)
        request = next(
            (r for r in self.outstanding if r.sensor_digest == sender_digest), None
        )
        self._seen_deliveries.add(tid)
        if request is None:
            return None
        try:
            if data[0] == payload_tags.DATUM_INLINE:
                envelope = crypto.CipherEnvelope.deserialize(data[1:])
            else:
                anchor = datastore.Anchor.deserialize(data[1:])
                try:
                    sealed = datastore.fetch(
                        anchor,
                        self.stores,
                        on_tamper=lambda loc: self.sim.log_event(
                            "replica_tampered", requester=self.actor_id, store=loc
                        ),
                    )
                except AllReplicasBadOrMissing as exc:
                    raise AnchorMismatch(str(exc)) from exc
                if not datastore.verify_anchor(sealed, anchor):
                    raise AnchorMismatch("fetched content does not match anchor")
                envelope = crypto.CipherEnvelope.deserialize(sealed)
            plaintext = crypto.decrypt(self.keypair.seed, envelope)
        except (DecryptFailed, AnchorMismatch) as exc:
            # Request stays outstanding; the failure is surfaced in the report.
            self.failures.append(
                {
                    "delivery_txid": tid.hex(),
                    "error": type(exc).__name__,
                    "time": self.sim.clock,
                }
            )
            self.sim.log_event(
                "delivery_failed",
                requester=self.actor_id,
                delivery_txid=tid.hex(),
                error=type(exc).__name__,
            )
            return None
        self.outstanding.remove(request)
        return DatumDelivery(
            payment_txid=request.payment_txid,
            delivery_txid=tid,
            plaintext=plaintext,
            sensor_digest=sender_digest,
            request_time=request.time,
            delivery_time=self.sim.clock,
            latency_blocks=height - request.height,
        )
