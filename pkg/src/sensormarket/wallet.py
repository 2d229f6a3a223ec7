"""Per-actor UTXO tracking and transaction building.

A wallet watches one node for confirmed blocks and keeps the set of
pay-to-key-hash outputs it controls.  Change outputs become spendable
immediately (unconfirmed chaining), which lets back-to-back purchases spend
each other's change without conflicts.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from . import crypto
from .errors import InsufficientFunds
from .ledger import (
    Block,
    PayToKeyHash,
    Predicate,
    Transaction,
    TxInput,
    TxOutput,
    Witness,
    sighash,
    txid,
)
from .simnet import Node


def sign_inputs(tx: Transaction, keypair: crypto.KeyPair,
                indices: Optional[list[int]] = None) -> Transaction:
    """Attach (pubkey, signature) witnesses for the given input indices."""
    if indices is None:
        indices = list(range(len(tx.inputs)))
    inputs = list(tx.inputs)
    for i in indices:
        sig = crypto.sign(keypair.seed, sighash(tx, i))
        old = inputs[i]
        witness = Witness(
            signatures=old.witness.signatures + ((keypair.public_key, sig),),
            oracle_signature=old.witness.oracle_signature,
        )
        inputs[i] = replace(old, witness=witness)
    return replace(tx, inputs=tuple(inputs))


class Wallet:
    def __init__(self, keypair: crypto.KeyPair, node: Node):
        self.keypair = keypair
        self.node = node
        self.utxos: dict[tuple[bytes, int], int] = {}
        node.on_block.append(self._scan_block)
        for block in node.sim.chain.blocks[: node.known_height + 1]:
            self._scan_block(block)

    @property
    def key_digest(self) -> bytes:
        return self.keypair.key_digest

    @property
    def balance(self) -> int:
        return sum(self.utxos.values())

    def _scan_block(self, block: Block) -> None:
        for tx in block.transactions:
            for inp in tx.inputs:
                self.utxos.pop(inp.outpoint, None)
            tid = txid(tx)
            for i, out in enumerate(tx.outputs):
                if (
                    isinstance(out.predicate, PayToKeyHash)
                    and out.predicate.key_digest == self.key_digest
                ):
                    self.utxos.setdefault((tid, i), out.value)

    def _select_coins(self, needed: int) -> list[tuple[tuple[bytes, int], int]]:
        picked = []
        total = 0
        for outpoint in sorted(self.utxos, key=lambda o: (o[0], o[1])):
            picked.append((outpoint, self.utxos[outpoint]))
            total += self.utxos[outpoint]
            if total >= needed:
                return picked
        raise InsufficientFunds(f"need {needed}, wallet holds {total}")

    def create_tx(
        self,
        payments: list[TxOutput],
        fee: int,
        lock_height: Optional[int] = None,
    ) -> Transaction:
        """Build, sign and account for a transaction paying ``payments``.

        Inputs are deducted from the wallet immediately and any change output
        becomes spendable right away.
        """
        total_out = sum(p.value for p in payments)
        coins = self._select_coins(total_out + fee)
        total_in = sum(v for _, v in coins)
        outputs = list(payments)
        change = total_in - total_out - fee
        if change > 0:
            outputs.append(TxOutput(change, PayToKeyHash(self.key_digest)))
        tx = Transaction(
            inputs=tuple(TxInput(op[0], op[1]) for op, _ in coins),
            outputs=tuple(outputs),
            lock_height=lock_height,
        )
        tx = sign_inputs(tx, self.keypair)
        tid = txid(tx)
        for outpoint, _ in coins:
            del self.utxos[outpoint]
        if change > 0:
            self.utxos[(tid, len(outputs) - 1)] = change
        return tx

    def pay(self, key_digest: bytes, amount: int, fee: int,
            payload: Optional[bytes] = None) -> Transaction:
        return self.create_tx([TxOutput(amount, PayToKeyHash(key_digest), payload)], fee)

    def exact_utxo(self, amount: int, fee: int) -> Optional[Transaction]:
        """Ensure the wallet holds a UTXO of exactly ``amount``.

        Returns a split transaction to broadcast, or None if one already
        exists.  Needed for anyone-can-pay pledges, which cannot take change.
        """
        for outpoint, value in self.utxos.items():
            if value == amount:
                return None
        return self.create_tx([TxOutput(amount, PayToKeyHash(self.key_digest))], fee)

    def take_exact_utxo(self, amount: int) -> tuple[bytes, int]:
        """Remove and return an outpoint of exactly ``amount`` from the wallet."""
        for outpoint, value in sorted(self.utxos.items()):
            if value == amount:
                del self.utxos[outpoint]
                return outpoint
        raise InsufficientFunds(f"no UTXO of exactly {amount}")
