"""Wallet coin tracking and transaction building."""

import pytest

from sensormarket.errors import InsufficientFunds
from sensormarket.ledger import PayToKeyHash, TxOutput, txid
from sensormarket.wallet import Wallet

from conftest import make_keypair, make_sim, run_blocks


def test_balance_tracks_confirmed_outputs():
    kp, other = make_keypair(0), make_keypair(1)
    sim = make_sim([(kp, 10_000)])
    wallet = Wallet(kp, sim.nodes[0])
    assert wallet.balance == 10_000
    tx = wallet.pay(other.key_digest, 3_000, fee=50)
    # Inputs deducted immediately, change credited immediately.
    assert wallet.balance == 10_000 - 3_000 - 50
    sim.broadcast(tx, sim.nodes[0])
    run_blocks(sim, 2)
    assert wallet.balance == 6_950
    their_wallet = Wallet(other, sim.nodes[0])
    assert their_wallet.balance == 3_000


def test_change_spendable_before_confirmation():
    kp, other = make_keypair(0), make_keypair(1)
    sim = make_sim([(kp, 10_000)])
    wallet = Wallet(kp, sim.nodes[0])
    t1 = wallet.pay(other.key_digest, 1_000, fee=50)
    t2 = wallet.pay(other.key_digest, 1_000, fee=50)  # spends t1's change
    assert t2.inputs[0].prev_txid == txid(t1)
    sim.broadcast(t1, sim.nodes[0])
    sim.broadcast(t2, sim.nodes[0])
    run_blocks(sim, 2)
    assert Wallet(other, sim.nodes[0]).balance == 2_000


def test_insufficient_funds():
    kp, other = make_keypair(0), make_keypair(1)
    sim = make_sim([(kp, 100)])
    wallet = Wallet(kp, sim.nodes[0])
    with pytest.raises(InsufficientFunds):
        wallet.pay(other.key_digest, 100, fee=1)


def test_exact_utxo_split_and_take():
    kp = make_keypair(0)
    sim = make_sim([(kp, 10_000)])
    wallet = Wallet(kp, sim.nodes[0])
    split = wallet.exact_utxo(400, fee=50)
    assert split is not None
    sim.broadcast(split, sim.nodes[0])
    run_blocks(sim, 2)
    outpoint = wallet.take_exact_utxo(400)
    assert sim.chain.utxo.get(outpoint).output.value == 400
    # Already holding an exact UTXO means no split needed.
    wallet2 = Wallet(kp, sim.nodes[0])
    assert wallet2.exact_utxo(400, fee=50) is None
    with pytest.raises(InsufficientFunds):
        wallet.take_exact_utxo(400)  # the only one was taken


def test_wallet_on_existing_chain_scans_history():
    kp, other = make_keypair(0), make_keypair(1)
    sim = make_sim([(kp, 10_000)])
    wallet = Wallet(kp, sim.nodes[0])
    sim.broadcast(wallet.pay(other.key_digest, 2_500, fee=50), sim.nodes[0])
    run_blocks(sim, 2)
    late = Wallet(other, sim.nodes[0])
    assert late.balance == 2_500
