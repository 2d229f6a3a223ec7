"""Fee-prioritized mempool and greedy block template selection.

First-seen wins: a transaction conflicting with a pool member is rejected.
Unconfirmed chains are allowed — a transaction may spend outputs of another
pool member, and block selection always places the parent first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import Conflict, MissingUtxo
from .ledger import (
    Chain,
    Transaction,
    UtxoEntry,
    UtxoSet,
    tx_size,
    txid,
    validate_transaction,
)


class _OverlayUtxo(UtxoSet):
    """Chain UTXO set extended with outputs created by pool members."""

    def __init__(self, base: UtxoSet, pool: "Mempool"):
        self._base = base
        self._pool = pool

    def get(self, outpoint):
        if outpoint in self._pool.spent_by:
            return None
        entry = self._base.get(outpoint)
        if entry is not None:
            return entry
        return self._pool.created.get(outpoint)

    def __contains__(self, outpoint) -> bool:
        return self.get(outpoint) is not None


@dataclass
class MempoolEntry:
    tx: Transaction
    txid: bytes
    fee: int
    size: int
    seq: int  # first-seen order

    @property
    def fee_rate(self) -> float:
        return self.fee / self.size


class Mempool:
    def __init__(self) -> None:
        self.entries: dict[bytes, MempoolEntry] = {}
        self.spent_by: dict[tuple[bytes, int], bytes] = {}  # outpoint -> txid
        self.created: dict[tuple[bytes, int], UtxoEntry] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, tid: bytes) -> bool:
        return tid in self.entries

    def insert(self, tx: Transaction, chain: Chain) -> MempoolEntry:
        """Validate against the next block height and admit, or raise."""
        tid = txid(tx)
        if tid in self.entries:
            return self.entries[tid]
        for inp in tx.inputs:
            holder = self.spent_by.get(inp.outpoint)
            if holder is not None:
                raise Conflict(
                    f"outpoint already spent by first-seen tx {holder.hex()[:16]}"
                )
        view = _OverlayUtxo(chain.utxo, self)
        height = chain.height + 1
        validate_transaction(tx, view, height)
        fee = sum(view.get(i.outpoint).output.value for i in tx.inputs) - sum(
            o.value for o in tx.outputs
        )
        entry = MempoolEntry(tx=tx, txid=tid, fee=fee, size=tx_size(tx), seq=self._seq)
        self._seq += 1
        self.entries[tid] = entry
        for inp in tx.inputs:
            self.spent_by[inp.outpoint] = tid
        for i, out in enumerate(tx.outputs):
            self.created[(tid, i)] = UtxoEntry(out, height)
        return entry

    def remove(self, tid: bytes) -> None:
        entry = self.entries.pop(tid, None)
        if entry is None:
            return
        for inp in entry.tx.inputs:
            if self.spent_by.get(inp.outpoint) == tid:
                del self.spent_by[inp.outpoint]
        for i in range(len(entry.tx.outputs)):
            self.created.pop((tid, i), None)

    def drop_confirmed(self, block_txs: tuple[Transaction, ...], chain: Chain) -> None:
        """Remove included transactions, then evict entries whose inputs are
        no longer satisfiable (conflicts and orphaned descendants)."""
        for tx in block_txs:
            self.remove(txid(tx))
        while True:
            stale = [
                e.txid
                for e in self.entries.values()
                if any(
                    inp.outpoint not in chain.utxo and inp.outpoint not in self.created
                    for inp in e.tx.inputs
                )
            ]
            if not stale:
                break
            for tid in stale:
                self.remove(tid)

    def select_for_block(self, max_block_size: int, chain: Chain) -> list[Transaction]:
        """Greedy by descending fee rate, ties by ascending txid.

        A transaction is eligible once all of its inputs are confirmed or
        provided by an already-selected pool member, so parents always come
        before their children.
        """
        selected: list[MempoolEntry] = []
        selected_ids: set[bytes] = set()
        provided: set[tuple[bytes, int]] = set()
        remaining = max_block_size
        candidates = sorted(self.entries.values(), key=lambda e: (-e.fee_rate, e.txid))
        while True:
            pick: Optional[MempoolEntry] = None
            for entry in candidates:
                if entry.txid in selected_ids or entry.size > remaining:
                    continue
                ok = all(
                    inp.outpoint in chain.utxo or inp.outpoint in provided
                    for inp in entry.tx.inputs
                )
                if ok:
                    pick = entry
                    break
            if pick is None:
                break
            selected.append(pick)
            selected_ids.add(pick.txid)
            remaining -= pick.size
            for i in range(len(pick.tx.outputs)):
                provided.add((pick.txid, i))
        return [e.tx for e in selected]
