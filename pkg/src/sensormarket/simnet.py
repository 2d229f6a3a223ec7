"""Deterministic discrete-event simulation of a small ledger network.

One seeded RNG is split per-subsystem by fixed labels so that adding an actor
never perturbs unrelated draws.  A single designated producer (node 0) builds
blocks at exponentially distributed intervals; there are no forks.  Simulated
time only — wall clock is never consulted.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import NotFound, ValidationError
from .ledger import Block, Chain, Transaction, block_hash, txid
from .mempool import Mempool


@dataclass
class SimConfig:
    rng_seed: int = 1
    mean_block_interval_s: float = 600.0
    propagation_delay_s: float = 1.0
    max_block_size: int = 1_000_000
    num_nodes: int = 2
    default_fee: int = 50  # flat voluntary fee actors attach per transaction

    def __post_init__(self) -> None:
        if self.mean_block_interval_s <= 0:
            raise ValueError("mean_block_interval_s must be positive")
        if self.propagation_delay_s < 0:
            raise ValueError("propagation delay must be non-negative")
        if self.num_nodes < 1:
            raise ValueError("need at least one node")


def next_block_delay(rng: random.Random, mean: float) -> float:
    """Exponentially distributed inter-block time with the given mean."""
    if mean <= 0:
        raise ValueError("mean must be positive")
    return rng.expovariate(1.0 / mean)


@dataclass(order=True)
class Event:
    fire_time: float
    seq: int
    kind: str = field(compare=False)
    callback: Callable[[], None] = field(compare=False)


class Node:
    """A network participant holding its own mempool and chain view height."""

    def __init__(self, index: int, sim: "Simulation"):
        self.index = index
        self.sim = sim
        self.mempool = Mempool()
        self.known_height = 0
        self.on_block: list[Callable[[Block], None]] = []
        self._watches: list[tuple[bytes, int, Callable[[], None]]] = []

    def receive_tx(self, tx: Transaction) -> bool:
        try:
            self.mempool.insert(tx, self.sim.chain)
            return True
        except ValidationError as exc:
            self.sim.log_event("tx_rejected", node=self.index,
                              txid=txid(tx).hex(), reason=type(exc).__name__)
            return False

    def deliver_block(self, block: Block) -> None:
        self.known_height = block.height
        self.mempool.drop_confirmed(block.transactions, self.sim.chain)
        for tid, k, callback in list(self._watches):
            confs = self.sim.chain.confirmations(tid, as_of_height=self.known_height)
            if confs is not None and confs >= k:
                self._watches.remove((tid, k, callback))
                callback()
        for hook in list(self.on_block):
            hook(block)

    def when_confirmed(self, tid: bytes, k: int, callback: Callable[[], None]) -> None:
        """Run callback once the tx has >= k confirmations at this node."""
        confs = self.sim.chain.confirmations(tid, as_of_height=self.known_height)
        if confs is not None and confs >= k:
            callback()
        else:
            self._watches.append((tid, k, callback))


def confirmations(node: Node, tid: bytes) -> int:
    """0 while only in the node's mempool, burial depth once confirmed."""
    confs = node.sim.chain.confirmations(tid, as_of_height=node.known_height)
    if confs is not None:
        return confs
    if tid in node.mempool:
        return 0
    raise NotFound(f"transaction {tid.hex()[:16]} unknown at node {node.index}")


class Simulation:
    def __init__(self, config: SimConfig, genesis_funding: tuple[Transaction, ...] = ()):
        self.config = config
        self.clock = 0.0
        self._heap: list[Event] = []
        self._seq = 0
        self._rngs: dict[str, random.Random] = {}
        self.chain = Chain(genesis_funding)
        self.nodes = [Node(i, self) for i in range(config.num_nodes)]
        self.producer = self.nodes[0]
        self.fee_credits = 0  # block producer income; not re-spendable
        self.events_log: list[dict] = []
        self._block_rng = self.rng("block-production")
        self._schedule_next_block()

    # --- randomness ---------------------------------------------------------

    def rng(self, label: str) -> random.Random:
        stream = self._rngs.get(label)
        if stream is None:
            material = hashlib.sha256(
                self.config.rng_seed.to_bytes(8, "little") + label.encode()
            ).digest()
            stream = random.Random(int.from_bytes(material, "little"))
            self._rngs[label] = stream
        return stream

    # --- event loop ---------------------------------------------------------

    def schedule(self, at: float, kind: str, callback: Callable[[], None]) -> None:
        if at < self.clock:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, Event(at, self._seq, kind, callback))
        self._seq += 1

    def schedule_in(self, delay: float, kind: str, callback: Callable[[], None]) -> None:
        self.schedule(self.clock + delay, kind, callback)

    def run_until(self, t_end: float) -> dict:
        if t_end < self.clock:
            raise ValueError("t_end is in the past")
        while self._heap and self._heap[0].fire_time <= t_end:
            event = heapq.heappop(self._heap)
            self.clock = event.fire_time
            event.callback()
        self.clock = t_end
        return self.snapshot()

    def snapshot(self) -> dict:
        return {
            "time": self.clock,
            "height": self.chain.height,
            "confirmed_tx_count": sum(
                len(b.transactions) for b in self.chain.blocks[1:]
            ),
            "total_fees": self.fee_credits,
        }

    def log_event(self, kind: str, **details) -> None:
        self.events_log.append({"kind": kind, "time": self.clock, **details})

    # --- network ------------------------------------------------------------

    def broadcast(self, tx: Transaction, origin: Node) -> None:
        origin.receive_tx(tx)
        for node in self.nodes:
            if node is origin:
                continue
            self.schedule_in(
                self.config.propagation_delay_s,
                "tx_broadcast",
                lambda n=node, t=tx: n.receive_tx(t),
            )

    # --- block production ----------------------------------------------------

    def _schedule_next_block(self) -> None:
        delay = next_block_delay(self._block_rng, self.config.mean_block_interval_s)
        self.schedule_in(delay, "block_produced", self._produce_block)

    def _produce_block(self) -> None:
        txs = tuple(
            self.producer.mempool.select_for_block(self.config.max_block_size, self.chain)
        )
        fees = sum(self.producer.mempool.entries[txid(t)].fee for t in txs)
        block = Block(
            height=self.chain.height + 1,
            prev_block_hash=block_hash(self.chain.tip),
            timestamp=self.clock,
            transactions=txs,
            fee_reward=fees,
        )
        self.chain.apply_block(block)
        self.fee_credits += fees
        self.producer.deliver_block(block)
        for node in self.nodes:
            if node is self.producer:
                continue
            self.schedule_in(
                self.config.propagation_delay_s,
                "block_delivery",
                lambda n=node, b=block: n.deliver_block(b),
            )
        self._schedule_next_block()
