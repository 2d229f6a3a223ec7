"""Unidirectional micropayment channel for sensor subscriptions.

One funding transaction locks the deposit in a 2-of-2 multisig; every
off-chain update re-signs a settlement transaction for the new balance split;
one settlement (or the pre-signed, height-locked refund) finally touches the
chain.  Before the funding transaction is broadcast, the counterparty must
co-sign the refund so the funder can always reclaim the deposit after the
expiry height.

Stale-state cheating is out of model: actors are honest by contract and the
simulation flags any attempt to settle an outdated state instead of punishing
it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from . import crypto
from .errors import (
    AlreadyClosed,
    CounterpartyRefused,
    InsufficientChannelBalance,
    StaleSequence,
    TimelockNotExpired,
)
from .ledger import (
    MultiSig,
    PayToKeyHash,
    Transaction,
    TxInput,
    TxOutput,
    Witness,
    sighash,
    txid,
)
from .simnet import Node, Simulation
from .wallet import Wallet


@dataclass
class ChannelState:
    sequence: int
    balance_requester: int
    balance_sensor: int
    settlement_tx: Transaction  # fully signed by both parties


class Channel:
    """Both ends of one requester-to-sensor channel, driven by the event loop."""

    def __init__(
        self,
        sim: Simulation,
        node: Node,
        funder_wallet: Wallet,
        funder_keypair: crypto.KeyPair,
        sensor_keypair: crypto.KeyPair,
        deposit: int,
        expiry_height: int,
        counterparty_cooperative: bool = True,
        datum_source: Optional[Callable[[float], bytes]] = None,
    ):
        if expiry_height <= sim.chain.height:
            raise ValueError("expiry height must lie in the future")
        self.sim = sim
        self.node = node
        self.funder_wallet = funder_wallet
        self.funder_keypair = funder_keypair
        self.sensor_keypair = sensor_keypair
        self.deposit = deposit
        self.expiry_height = expiry_height
        self.datum_source = datum_source
        self.funded = False
        self.closed = False
        self.settle_txid: Optional[bytes] = None
        self.paid_total = 0
        self.datums_delivered: list[bytes] = []
        self._pending: list[Callable[[], None]] = []
        self._stale_flagged = False

        fee = sim.config.default_fee
        wallet_before = dict(funder_wallet.utxos)
        funding = funder_wallet.create_tx(
            [TxOutput(deposit, MultiSig(2, (funder_keypair.public_key,
                                            sensor_keypair.public_key)))],
            fee=fee,
        )
        self.funding_txid = txid(funding)
        refund = self._build_settlement(deposit, 0, lock_height=expiry_height)
        if not counterparty_cooperative:
            # No co-signature on the refund: abort before anything is broadcast.
            funder_wallet.utxos = wallet_before
            raise CounterpartyRefused("counterparty withheld the initial refund signature")
        self.state = ChannelState(0, deposit, 0, refund)
        self._initial_refund = refund
        sim.broadcast(funding, node)
        node.when_confirmed(self.funding_txid, 1, self._on_funded)

    # --- internals ----------------------------------------------------------

    def _build_settlement(
        self, balance_requester: int, balance_sensor: int, lock_height: Optional[int] = None
    ) -> Transaction:
        fee = self.sim.config.default_fee
        share_r = fee // 2 if balance_sensor else fee
        share_s = fee - share_r if balance_sensor else 0
        outputs = []
        if balance_requester - share_r > 0:
            outputs.append(
                TxOutput(balance_requester - share_r,
                         PayToKeyHash(self.funder_keypair.key_digest))
            )
        if balance_sensor - share_s > 0:
            outputs.append(
                TxOutput(balance_sensor - share_s,
                         PayToKeyHash(self.sensor_keypair.key_digest))
            )
        tx = Transaction(
            inputs=(TxInput(self.funding_txid, 0),),
            outputs=tuple(outputs),
            lock_height=lock_height,
        )
        msg = sighash(tx, 0)
        witness = Witness(
            signatures=(
                (self.funder_keypair.public_key, crypto.sign(self.funder_keypair.seed, msg)),
                (self.sensor_keypair.public_key, crypto.sign(self.sensor_keypair.seed, msg)),
            )
        )
        return Transaction(
            inputs=(TxInput(self.funding_txid, 0, witness),),
            outputs=tx.outputs,
            lock_height=lock_height,
        )

    def _on_funded(self) -> None:
        self.funded = True
        pending, self._pending = self._pending, []
        for action in pending:
            action()

    def _once_funded(self, action: Callable[[], None]) -> None:
        if self.funded:
            action()
        else:
            self._pending.append(action)

    # --- operations ---------------------------------------------------------

    def pay(self, amount: int) -> ChannelState:
        """Move ``amount`` to the sensor side; both parties re-sign off-chain."""
        return self.propose_update(self.state.sequence + 1, amount)

    def propose_update(self, sequence: int, amount: int) -> ChannelState:
        if self.closed:
            raise AlreadyClosed("channel already settled")
        if sequence != self.state.sequence + 1:
            raise StaleSequence(
                f"proposed sequence {sequence}, expected {self.state.sequence + 1}"
            )
        if amount > self.state.balance_requester:
            raise InsufficientChannelBalance(
                f"payment {amount} exceeds requester balance {self.state.balance_requester}"
            )
        new_r = self.state.balance_requester - amount
        new_s = self.state.balance_sensor + amount
        settlement = self._build_settlement(new_r, new_s)
        self.state = ChannelState(sequence, new_r, new_s, settlement)
        self.paid_total += amount
        if self.datum_source is not None:
            # Sensor answers each counter-signed update with an encrypted datum,
            # delivered directly between the actors (no chain traffic).
            datum = self.datum_source(self.sim.clock)
            envelope = crypto.encrypt_for(
                self.funder_keypair.public_key,
                datum,
                ephemeral_seed=self.sim.rng("channel-datum").randbytes(32),
            )
            self.datums_delivered.append(crypto.decrypt(self.funder_keypair.seed, envelope))
        return self.state

    def close(self) -> Transaction:
        """Broadcast the latest fully signed settlement."""
        if self.closed:
            raise AlreadyClosed("channel already settled")
        self.closed = True
        settlement = self.state.settlement_tx
        self.settle_txid = txid(settlement)
        self._once_funded(lambda: self.sim.broadcast(settlement, self.node))
        return settlement

    def broadcast_settlement(self, state: ChannelState) -> Transaction:
        """Broadcast an arbitrary signed state; flags stale attempts."""
        if state.sequence < self.state.sequence:
            self._stale_flagged = True
            self.sim.log_event(
                "stale_settlement",
                channel=self.funding_txid.hex(),
                sequence=state.sequence,
                latest=self.state.sequence,
            )
            raise StaleSequence("refusing to settle an outdated state")
        return self.close()

    def refund_after_expiry(self) -> Transaction:
        if self.closed:
            raise AlreadyClosed("channel already settled")
        if self.sim.chain.height < self.expiry_height:
            raise TimelockNotExpired(
                f"height {self.sim.chain.height} < expiry {self.expiry_height}"
            )
        self.closed = True
        refund = self.state.settlement_tx if self.state.sequence == 0 else None
        if refund is None:
            # Honest funder can only reclaim via the pre-signed sequence-0 state.
            refund = self._initial_refund
        self.settle_txid = txid(refund)
        self.sim.broadcast(refund, self.node)
        return refund

    @property
    def onchain_txids(self) -> list[bytes]:
        ids = [self.funding_txid]
        if self.settle_txid is not None:
            ids.append(self.settle_txid)
        return ids

    def confirmed_onchain_count(self) -> int:
        return sum(
            1 for tid in self.onchain_txids if self.sim.chain.confirmations(tid) is not None
        )

    def summary(self) -> dict:
        return {
            "funding_txid": self.funding_txid.hex(),
            "settle_txid": self.settle_txid.hex() if self.settle_txid else None,
            "sequence": self.state.sequence,
            "balance_requester": self.state.balance_requester,
            "balance_sensor": self.state.balance_sensor,
            "paid_total": self.paid_total,
            "onchain_tx_count": self.confirmed_onchain_count(),
            "stale_flagged": self._stale_flagged,
            "datums_delivered": len(self.datums_delivered),
        }
