"""Contract patterns on top of the predicate algebra.

Escrow: 2-of-3 multisig between buyer, seller and a mediator who can never
move the funds alone.  Assurance contract: anyone-can-pay pledges that only
combine into a valid transaction once the campaign goal is covered.  Oracle:
a keyed service that signs a settlement only while its registered expression
evaluates true against its fact base.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import crypto
from .errors import (
    DoubleSpentPledge,
    InsufficientPledges,
    UnknownExpression,
)
from .ledger import (
    MultiSig,
    OracleGated,
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


# --- escrow -----------------------------------------------------------------

@dataclass
class EscrowAgreement:
    buyer_key: bytes
    seller_key: bytes
    mediator_key: bytes
    amount: int
    outpoint: tuple[bytes, int]
    status: str = "Funded"

    @property
    def predicate(self) -> MultiSig:
        return MultiSig(2, (self.buyer_key, self.seller_key, self.mediator_key))


def fund_escrow(
    sim: Simulation,
    node: Node,
    buyer_wallet: Wallet,
    buyer_key: bytes,
    seller_key: bytes,
    mediator_key: bytes,
    amount: int,
) -> EscrowAgreement:
    tx = buyer_wallet.create_tx(
        [TxOutput(amount, MultiSig(2, (buyer_key, seller_key, mediator_key)))],
        fee=sim.config.default_fee,
    )
    sim.broadcast(tx, node)
    return EscrowAgreement(
        buyer_key=buyer_key,
        seller_key=seller_key,
        mediator_key=mediator_key,
        amount=amount,
        outpoint=(txid(tx), 0),
    )


def build_escrow_spend(
    agreement: EscrowAgreement, destination_digest: bytes, fee: int
) -> Transaction:
    return Transaction(
        inputs=(TxInput(*agreement.outpoint),),
        outputs=(TxOutput(agreement.amount - fee, PayToKeyHash(destination_digest)),),
    )


def escrow_release(
    sim: Simulation,
    node: Node,
    agreement: EscrowAgreement,
    signer_a: crypto.KeyPair,
    signer_b: crypto.KeyPair,
    destination_digest: bytes,
) -> Transaction:
    """Spend the escrow to ``destination`` under two of the three keys.

    Signature validity is enforced by ledger validation on broadcast; calling
    this with keys outside the escrow set produces a transaction the chain
    rejects.
    """
    tx = build_escrow_spend(agreement, destination_digest, sim.config.default_fee)
    msg = sighash(tx, 0)
    witness = Witness(
        signatures=(
            (signer_a.public_key, crypto.sign(signer_a.seed, msg)),
            (signer_b.public_key, crypto.sign(signer_b.seed, msg)),
        )
    )
    tx = Transaction(
        inputs=(TxInput(*agreement.outpoint, witness),), outputs=tx.outputs
    )
    sim.broadcast(tx, node)
    seller_digest = crypto.key_digest(agreement.seller_key)
    agreement.status = "Released" if destination_digest == seller_digest else "Refunded"
    return tx


# --- assurance contracts ----------------------------------------------------

@dataclass(frozen=True)
class Campaign:
    entrepreneur_digest: bytes
    goal: int

    @property
    def goal_output(self) -> TxOutput:
        return TxOutput(self.goal, PayToKeyHash(self.entrepreneur_digest))


@dataclass(frozen=True)
class Pledge:
    contributor_key: bytes
    tx_input: TxInput  # anyone-can-pay, signed against the goal output
    amount: int


def make_pledge(
    wallet: Wallet, keypair: crypto.KeyPair, campaign: Campaign, amount: int
) -> Pledge:
    """Sign a contribution of one exact-value UTXO toward the campaign goal.

    The signature covers only this input plus the goal output, so pledges
    from different contributors can be merged later.  The partial transaction
    is invalid on its own whenever ``amount`` is below the goal.
    """
    if amount <= 0:
        raise ValueError("pledge amount must be positive")
    outpoint = wallet.take_exact_utxo(amount)
    template = Transaction(
        inputs=(TxInput(*outpoint, anyone_can_pay=True),),
        outputs=(campaign.goal_output,),
    )
    msg = sighash(template, 0)
    witness = Witness(
        signatures=((keypair.public_key, crypto.sign(keypair.seed, msg)),)
    )
    return Pledge(
        contributor_key=keypair.public_key,
        tx_input=TxInput(*outpoint, witness, anyone_can_pay=True),
        amount=amount,
    )


def assemble_assurance(
    sim: Simulation, node: Node, pledges: list[Pledge], campaign: Campaign
) -> Transaction:
    """Combine pledges into the goal transaction once they cover the goal."""
    total = 0
    for pledge in pledges:
        entry = sim.chain.utxo.get(pledge.tx_input.outpoint)
        if entry is None:
            raise DoubleSpentPledge(
                f"pledge UTXO {pledge.tx_input.prev_txid.hex()[:16]} already spent"
            )
        total += entry.output.value
    if total < campaign.goal:
        raise InsufficientPledges(campaign.goal - total)
    tx = Transaction(
        inputs=tuple(p.tx_input for p in pledges),
        outputs=(campaign.goal_output,),
    )
    sim.broadcast(tx, node)
    return tx


# --- oracle service ---------------------------------------------------------

_EXPR_RE = re.compile(r"^\s*(\w+)\s*(<=|>=|==|<|>)\s*(-?\d+(?:\.\d+)?)\s*$")

_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


@dataclass
class OracleService:
    """Signs settlements only while the registered expression holds."""

    keypair: crypto.KeyPair
    expressions: dict[str, tuple[str, str, float]] = field(default_factory=dict)
    facts: dict[str, float] = field(default_factory=dict)

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    def register_expression(self, expression_id: str, text: str) -> None:
        m = _EXPR_RE.match(text)
        if m is None:
            raise ValueError(f"expression {text!r} is not '<fact> <op> <number>'")
        fact, op, number = m.groups()
        self.expressions[expression_id] = (fact, op, float(number))

    def set_fact(self, name: str, value: float) -> None:
        self.facts[name] = value

    def evaluate(self, expression_id: str) -> bool:
        if expression_id not in self.expressions:
            raise UnknownExpression(expression_id)
        fact, op, number = self.expressions[expression_id]
        if fact not in self.facts:
            return False
        return _OPS[op](self.facts[fact], number)

    def sign_settlement(
        self, expression_id: str, settlement_tx: Transaction, input_index: int = 0
    ) -> Optional[bytes]:
        """Signature over the settlement, or None (refusal) if the expression
        is currently false or its fact is unknown."""
        if not self.evaluate(expression_id):
            return None
        return crypto.sign(self.keypair.seed, sighash(settlement_tx, input_index))


def oracle_gated_output(
    value: int, oracle: OracleService, expression_id: str, party_keys: tuple[bytes, bytes]
) -> TxOutput:
    return TxOutput(
        value,
        OracleGated(oracle.public_key, expression_id, MultiSig(2, party_keys)),
    )


class OracleBet:
    """Two parties stake on opposite outcomes of one external fact.

    Each party locks its stake in an oracle-gated 2-of-2 output.  After the
    fact is known, the settlement spending both stakes to the winner gets the
    parties' signatures plus the oracle's, which the oracle grants only for
    the expression that evaluates true.
    """

    def __init__(
        self,
        sim: Simulation,
        node: Node,
        party_a: tuple[Wallet, crypto.KeyPair],
        party_b: tuple[Wallet, crypto.KeyPair],
        stake: int,
        oracle: OracleService,
        expression_a_wins: str,
        expression_b_wins: str,
    ):
        self.sim = sim
        self.node = node
        self.wallet_a, self.key_a = party_a
        self.wallet_b, self.key_b = party_b
        self.stake = stake
        self.oracle = oracle
        self.expr_a = expression_a_wins
        self.expr_b = expression_b_wins
        self.settled: Optional[str] = None
        self.settle_txid: Optional[bytes] = None
        keys = (self.key_a.public_key, self.key_b.public_key)
        fee = sim.config.default_fee
        tx_a = self.wallet_a.create_tx(
            [oracle_gated_output(stake, oracle, expression_a_wins, keys)], fee
        )
        tx_b = self.wallet_b.create_tx(
            [oracle_gated_output(stake, oracle, expression_b_wins, keys)], fee
        )
        self.outpoint_a = (txid(tx_a), 0)
        self.outpoint_b = (txid(tx_b), 0)
        sim.broadcast(tx_a, node)
        sim.broadcast(tx_b, node)

    def _funded(self) -> bool:
        return (
            self.outpoint_a in self.sim.chain.utxo
            and self.outpoint_b in self.sim.chain.utxo
        )

    def build_settlement(self, winner_digest: bytes) -> Transaction:
        fee = self.sim.config.default_fee
        return Transaction(
            inputs=(TxInput(*self.outpoint_a), TxInput(*self.outpoint_b)),
            outputs=(TxOutput(2 * self.stake - fee, PayToKeyHash(winner_digest)),),
        )

    def maybe_settle(self) -> Optional[Transaction]:
        """Settle to whichever party's expression currently holds, if any."""
        if self.settled or not self._funded():
            return None
        try:
            a_wins = self.oracle.evaluate(self.expr_a)
            b_wins = self.oracle.evaluate(self.expr_b)
        except UnknownExpression:
            return None
        if not a_wins and not b_wins:
            return None
        winner_key = self.key_a if a_wins else self.key_b
        expression = self.expr_a if a_wins else self.expr_b
        tx = self.build_settlement(winner_key.key_digest)
        inputs = []
        for i, outpoint in enumerate((self.outpoint_a, self.outpoint_b)):
            msg = sighash(tx, i)
            oracle_sig = self.oracle.sign_settlement(expression, tx, i)
            if oracle_sig is None:
                return None
            witness = Witness(
                signatures=(
                    (self.key_a.public_key, crypto.sign(self.key_a.seed, msg)),
                    (self.key_b.public_key, crypto.sign(self.key_b.seed, msg)),
                ),
                oracle_signature=oracle_sig,
            )
            inputs.append(TxInput(*outpoint, witness))
        signed = Transaction(inputs=tuple(inputs), outputs=tx.outputs)
        self.sim.broadcast(signed, self.node)
        self.settled = "a" if a_wins else "b"
        self.settle_txid = txid(signed)
        return signed
