"""Deterministic desk-scale simulator for a decentralized sensor-data market.

Sensors sell datums to requesters for cash over a minimal UTXO ledger.  The
package covers the atomic datum-for-cash exchange, micropayment channels,
escrow, assurance contracts, oracle-gated settlement, off-chain anchored
storage and a first-claim-wins sensor registry, all driven by a seeded
discrete-event simulation.
"""

from . import (
    channels,
    contracts,
    crypto,
    datastore,
    errors,
    exchange,
    ledger,
    mempool,
    registry,
    scenario,
    simnet,
    wallet,
)

__all__ = [
    "channels",
    "contracts",
    "crypto",
    "datastore",
    "errors",
    "exchange",
    "ledger",
    "mempool",
    "registry",
    "scenario",
    "simnet",
    "wallet",
]

__version__ = "0.1.0"
