"""The two-transaction datum purchase flow."""

import pytest

from sensormarket.datastore import Store
from sensormarket.errors import NoSensorFunds
from sensormarket.exchange import MARKER_VALUE, RequesterActor, SensorActor

from conftest import make_keypair, make_sim, run_blocks


PRICE = 100
FEE = 50  # SimConfig.default_fee


def setup_pair(req_funds=100_000, sensor_funds=5_000, datum=b"pm25=12.5",
               stores=None, default_fee=FEE, **sensor_kwargs):
    req_kp, sensor_kp = make_keypair(20), make_keypair(21)
    sim = make_sim(
        [(req_kp, req_funds), (sensor_kp, sensor_funds)],
        num_nodes=2, default_fee=default_fee,
    )
    sensor = SensorActor(
        sim, sim.nodes[1], sensor_kp, PRICE, lambda t: datum,
        stores=stores, **sensor_kwargs,
    )
    requester = RequesterActor(
        sim, sim.nodes[0], req_kp, stores=stores,
    )
    return sim, requester, sensor


def test_happy_path_two_transactions():
    sim, requester, sensor = setup_pair()
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert len(requester.deliveries) == 1
    d = requester.deliveries[0]
    assert d.plaintext == b"pm25=12.5"
    assert d.latency_blocks >= 1  # delivery can only follow the confirmed payment
    assert not requester.outstanding
    # Exactly two transactions ever touch the chain.
    assert sum(len(b.transactions) for b in sim.chain.blocks[1:]) == 2


def test_balances_after_exchange():
    sim, requester, sensor = setup_pair()
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert requester.wallet.balance == 100_000 - PRICE - FEE + MARKER_VALUE
    assert sensor.wallet.balance == 5_000 + PRICE - FEE - MARKER_VALUE
    assert sim.fee_credits == 2 * FEE


def test_underpayment_is_flagged_not_fulfilled():
    sim, requester, sensor = setup_pair()
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE, amount=PRICE - 1)
    run_blocks(sim, 8)
    assert not requester.deliveries
    assert len(requester.outstanding) == 1
    events = [e for e in sim.events_log if e["kind"] == "underpayment"]
    assert len(events) == 1 and events[0]["amount"] == PRICE - 1


def test_sequential_purchases_spend_change():
    sim, requester, sensor = setup_pair()
    for _ in range(3):
        requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 10)
    assert len(requester.deliveries) == 3
    assert requester.wallet.balance == 100_000 - 3 * (PRICE + FEE - MARKER_VALUE)


def test_confirmation_depth_delays_fulfillment():
    sim, requester, sensor = setup_pair(confirmation_depth=3)
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    pay_height = None
    run_blocks(sim, 10)
    d = requester.deliveries[0]
    assert d.latency_blocks >= 3


def test_large_datum_goes_through_datastore():
    stores = [Store(0), Store(1), Store(2)]
    datum = b"series=" + b",".join(b"%d" % i for i in range(60))
    sim, requester, sensor = setup_pair(datum=datum, stores=stores, replication=2)
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert requester.deliveries[0].plaintext == datum
    assert sensor.fulfillments[0]["mode"] == "anchored"
    # Two replicas actually hold the sealed blob.
    assert sum(1 for s in stores if s.blobs) == 2


def test_small_datum_stays_inline():
    sim, requester, sensor = setup_pair()
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert sensor.fulfillments[0]["mode"] == "inline"


def test_all_replicas_corrupt_leaves_request_outstanding():
    stores = [Store(0, byzantine=True), Store(1, byzantine=True)]
    datum = b"series=" + b",".join(b"%d" % i for i in range(60))
    sim, requester, sensor = setup_pair(datum=datum, stores=stores, replication=2)
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert not requester.deliveries
    assert len(requester.outstanding) == 1
    assert requester.failures and requester.failures[0]["error"] == "AnchorMismatch"
    # The failure is recorded exactly once even as more blocks arrive.
    run_blocks(sim, 5)
    assert len(requester.failures) == 1


def test_honest_replica_saves_the_fetch():
    stores = [Store(0, byzantine=True), Store(1)]
    datum = b"series=" + b",".join(b"%d" % i for i in range(60))
    sim, requester, sensor = setup_pair(datum=datum, stores=stores, replication=2)
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    run_blocks(sim, 8)
    assert requester.deliveries[0].plaintext == datum
    tampered = [e for e in sim.events_log if e["kind"] == "replica_tampered"]
    assert tampered and tampered[0]["store"] == 0


def test_broke_sensor_raises_no_sensor_funds():
    # Even with the incoming payment, the sensor cannot cover a 500 fee.
    sim, requester, sensor = setup_pair(sensor_funds=10, default_fee=500)
    requester.initiate_purchase(sensor.wallet.key_digest, PRICE)
    with pytest.raises(NoSensorFunds):
        run_blocks(sim, 8)


def test_unrelated_payment_between_actors_is_ignored():
    sim, requester, sensor = setup_pair()
    other = make_keypair(22)
    # A plain transfer from the sensor to the requester carries no datum
    # payload and must not be taken as a delivery.
    tx = sensor.wallet.pay(requester.wallet.key_digest, 200, fee=FEE)
    sim.broadcast(tx, sim.nodes[1])
    run_blocks(sim, 6)
    assert not requester.deliveries
