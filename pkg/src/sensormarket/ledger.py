"""Minimal UTXO transaction model with a predicate-script algebra.

Outputs are locked by one of five predicate forms instead of a stack-based
script interpreter.  Canonical serialization (see `wire`) defines txids,
signature messages and block sizes.

Signature messages ("sighash"): the transaction is serialized with all
witnesses stripped.  For a normal input the message covers every input's
outpoint and flag plus all outputs and the lock height.  For an input with
``anyone_can_pay`` set, the message covers only that input's own outpoint and
flag (plus outputs and lock height), which lets independently signed inputs
be combined into one transaction later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from . import crypto, wire
from .errors import (
    BadParent,
    BadSignature,
    InsufficientSigners,
    InvalidTxInBlock,
    MalformedTx,
    MissingUtxo,
    NegativeFee,
    OracleSignatureMissing,
    TimelockNotExpired,
)

MAX_PAYLOAD = 80
MAX_MULTISIG_KEYS = 15
MAX_PREDICATE_DEPTH = 4
GENESIS_PREV_HASH = b"\x00" * 32


# --- predicates -------------------------------------------------------------

@dataclass(frozen=True)
class PayToKeyHash:
    key_digest: bytes


@dataclass(frozen=True)
class MultiSig:
    m: int
    public_keys: tuple[bytes, ...]

    @property
    def n(self) -> int:
        return len(self.public_keys)


@dataclass(frozen=True)
class TimeLocked:
    unlock_height: int
    inner: "Predicate"


@dataclass(frozen=True)
class OracleGated:
    oracle_key: bytes
    expression_id: str
    inner: "Predicate"


@dataclass(frozen=True)
class AnyoneCanSpend:
    pass


Predicate = Union[PayToKeyHash, MultiSig, TimeLocked, OracleGated, AnyoneCanSpend]


def predicate_depth(p: Predicate) -> int:
    if isinstance(p, (TimeLocked, OracleGated)):
        return 1 + predicate_depth(p.inner)
    return 1


def check_predicate(p: Predicate) -> None:
    if predicate_depth(p) > MAX_PREDICATE_DEPTH:
        raise MalformedTx("predicate nesting too deep")
    while isinstance(p, (TimeLocked, OracleGated)):
        if isinstance(p, TimeLocked) and p.unlock_height < 0:
            raise MalformedTx("negative unlock height")
        p = p.inner
    if isinstance(p, PayToKeyHash) and len(p.key_digest) != crypto.KEY_DIGEST_LEN:
        raise MalformedTx("bad key digest length")
    if isinstance(p, MultiSig):
        if not 1 <= p.m <= p.n <= MAX_MULTISIG_KEYS:
            raise MalformedTx(f"bad multisig bounds m={p.m} n={p.n}")


def serialize_predicate(p: Predicate) -> bytes:
    if isinstance(p, PayToKeyHash):
        return wire.u8(0x01) + p.key_digest
    if isinstance(p, MultiSig):
        out = wire.u8(0x02) + wire.u8(p.m) + wire.u8(p.n)
        for pk in p.public_keys:
            out += wire.varbytes(pk)
        return out
    if isinstance(p, TimeLocked):
        return wire.u8(0x03) + wire.u64(p.unlock_height) + serialize_predicate(p.inner)
    if isinstance(p, OracleGated):
        return (
            wire.u8(0x04)
            + wire.varbytes(p.oracle_key)
            + wire.varbytes(p.expression_id.encode())
            + serialize_predicate(p.inner)
        )
    if isinstance(p, AnyoneCanSpend):
        return wire.u8(0x05)
    raise MalformedTx(f"unknown predicate {p!r}")


def read_predicate(r: wire.Reader) -> Predicate:
    tag = r.u8()
    if tag == 0x01:
        return PayToKeyHash(r.read(crypto.KEY_DIGEST_LEN))
    if tag == 0x02:
        m, n = r.u8(), r.u8()
        keys = tuple(r.varbytes() for _ in range(n))
        return MultiSig(m, keys)
    if tag == 0x03:
        height = r.u64()
        return TimeLocked(height, read_predicate(r))
    if tag == 0x04:
        oracle_key = r.varbytes()
        expression_id = r.varbytes().decode()
        return OracleGated(oracle_key, expression_id, read_predicate(r))
    if tag == 0x05:
        return AnyoneCanSpend()
    raise MalformedTx(f"unknown predicate tag {tag:#x}")


# --- transactions -----------------------------------------------------------

@dataclass(frozen=True)
class Witness:
    signatures: tuple[tuple[bytes, bytes], ...] = ()  # (public_key, signature)
    oracle_signature: Optional[bytes] = None


EMPTY_WITNESS = Witness()


@dataclass(frozen=True)
class TxOutput:
    value: int
    predicate: Predicate
    payload: Optional[bytes] = None


@dataclass(frozen=True)
class TxInput:
    prev_txid: bytes
    prev_index: int
    witness: Witness = EMPTY_WITNESS
    anyone_can_pay: bool = False

    @property
    def outpoint(self) -> tuple[bytes, int]:
        return (self.prev_txid, self.prev_index)


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    lock_height: Optional[int] = None


def _serialize_output(out: TxOutput) -> bytes:
    data = wire.u64(out.value) + serialize_predicate(out.predicate)
    if out.payload is None:
        data += wire.u8(0)
    else:
        data += wire.u8(1) + wire.varbytes(out.payload)
    return data


def _read_output(r: wire.Reader) -> TxOutput:
    value = r.u64()
    predicate = read_predicate(r)
    payload = r.varbytes() if r.u8() else None
    return TxOutput(value, predicate, payload)


def _serialize_witness(w: Witness) -> bytes:
    data = wire.u8(len(w.signatures))
    for pk, sig in w.signatures:
        data += wire.varbytes(pk) + wire.varbytes(sig)
    if w.oracle_signature is None:
        data += wire.u8(0)
    else:
        data += wire.u8(1) + wire.varbytes(w.oracle_signature)
    return data


def _read_witness(r: wire.Reader) -> Witness:
    sigs = tuple((r.varbytes(), r.varbytes()) for _ in range(r.u8()))
    oracle_sig = r.varbytes() if r.u8() else None
    return Witness(sigs, oracle_sig)


def _serialize_input(inp: TxInput, with_witness: bool) -> bytes:
    data = inp.prev_txid + wire.u32(inp.prev_index) + wire.u8(int(inp.anyone_can_pay))
    if with_witness:
        data += _serialize_witness(inp.witness)
    return data


def serialize_tx(tx: Transaction, with_witness: bool = True) -> bytes:
    data = wire.u16(len(tx.inputs))
    for inp in tx.inputs:
        data += _serialize_input(inp, with_witness)
    data += wire.u16(len(tx.outputs))
    for out in tx.outputs:
        data += _serialize_output(out)
    if tx.lock_height is None:
        data += wire.u8(0)
    else:
        data += wire.u8(1) + wire.u64(tx.lock_height)
    return data


def deserialize_tx(data: bytes) -> Transaction:
    r = wire.Reader(data)
    tx = read_tx(r)
    r.expect_end()
    return tx


def read_tx(r: wire.Reader) -> Transaction:
    n_in = r.u16()
    inputs = []
    for _ in range(n_in):
        prev_txid = r.read(32)
        prev_index = r.u32()
        flag = bool(r.u8())
        witness = _read_witness(r)
        inputs.append(TxInput(prev_txid, prev_index, witness, flag))
    outputs = tuple(_read_output(r) for _ in range(r.u16()))
    lock_height = r.u64() if r.u8() else None
    return Transaction(tuple(inputs), outputs, lock_height)


def txid(tx: Transaction) -> bytes:
    cached = getattr(tx, "_txid", None)
    if cached is None:
        cached = crypto.digest(serialize_tx(tx))
        object.__setattr__(tx, "_txid", cached)  # memo on the frozen instance
    return cached


def tx_size(tx: Transaction) -> int:
    return len(serialize_tx(tx))


def sighash(tx: Transaction, input_index: int) -> bytes:
    """Message signed by witnesses of input ``input_index``."""
    inp = tx.inputs[input_index]
    if inp.anyone_can_pay:
        data = wire.u8(0xA1) + _serialize_input(inp, with_witness=False)
    else:
        data = wire.u8(0xA0)
        for other in tx.inputs:
            data += _serialize_input(other, with_witness=False)
    data += wire.u16(len(tx.outputs))
    for out in tx.outputs:
        data += _serialize_output(out)
    if tx.lock_height is None:
        data += wire.u8(0)
    else:
        data += wire.u8(1) + wire.u64(tx.lock_height)
    return crypto.digest(data)


def satisfy(predicate: Predicate, witness: Witness, message: bytes, height: int) -> None:
    """Raise the first failing rule, or return on success."""
    if isinstance(predicate, AnyoneCanSpend):
        return
    if isinstance(predicate, PayToKeyHash):
        for pk, sig in witness.signatures:
            if crypto.key_digest(pk) == predicate.key_digest:
                if crypto.verify(pk, message, sig):
                    return
                raise BadSignature("signature does not verify for key-hash output")
        raise BadSignature("no witness key matches the output's key digest")
    if isinstance(predicate, MultiSig):
        provided = dict(witness.signatures)
        valid = 0
        for pk in predicate.public_keys:
            sig = provided.get(pk)
            if sig is not None and crypto.verify(pk, message, sig):
                valid += 1
        if valid < predicate.m:
            raise InsufficientSigners(
                f"{valid} valid signatures, {predicate.m} required"
            )
        return
    if isinstance(predicate, TimeLocked):
        if height < predicate.unlock_height:
            raise TimelockNotExpired(
                f"height {height} < unlock height {predicate.unlock_height}"
            )
        return satisfy(predicate.inner, witness, message, height)
    if isinstance(predicate, OracleGated):
        if witness.oracle_signature is None:
            raise OracleSignatureMissing("oracle signature required")
        if not crypto.verify(predicate.oracle_key, message, witness.oracle_signature):
            raise BadSignature("oracle signature does not verify")
        return satisfy(predicate.inner, witness, message, height)
    raise MalformedTx(f"unknown predicate {predicate!r}")


# --- UTXO set ---------------------------------------------------------------

@dataclass(frozen=True)
class UtxoEntry:
    output: TxOutput
    height: int


class UtxoSet:
    """Map from outpoint to unspent output, with copy-on-demand semantics."""

    def __init__(self, entries: Optional[dict[tuple[bytes, int], UtxoEntry]] = None):
        self._entries: dict[tuple[bytes, int], UtxoEntry] = dict(entries or {})

    def get(self, outpoint: tuple[bytes, int]) -> Optional[UtxoEntry]:
        return self._entries.get(outpoint)

    def add(self, outpoint: tuple[bytes, int], output: TxOutput, height: int) -> None:
        self._entries[outpoint] = UtxoEntry(output, height)

    def spend(self, outpoint: tuple[bytes, int]) -> UtxoEntry:
        entry = self._entries.pop(outpoint, None)
        if entry is None:
            raise MissingUtxo(f"outpoint {outpoint[0].hex()[:16]}:{outpoint[1]} not unspent")
        return entry

    def copy(self) -> "UtxoSet":
        return UtxoSet(self._entries)

    def items(self) -> Iterator[tuple[tuple[bytes, int], UtxoEntry]]:
        return iter(self._entries.items())

    def __contains__(self, outpoint: tuple[bytes, int]) -> bool:
        return outpoint in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, UtxoSet) and self._entries == other._entries


def tx_fee(tx: Transaction, utxo: UtxoSet) -> int:
    total_in = 0
    for inp in tx.inputs:
        entry = utxo.get(inp.outpoint)
        if entry is None:
            raise MissingUtxo(f"input {inp.prev_txid.hex()[:16]}:{inp.prev_index} not unspent")
        total_in += entry.output.value
    return total_in - sum(out.value for out in tx.outputs)


def validate_transaction(tx: Transaction, utxo: UtxoSet, height: int) -> None:
    """Raise a ValidationError naming the first failing rule; silent if valid."""
    if not tx.outputs:
        raise MalformedTx("transaction has no outputs")
    if not tx.inputs:
        raise MalformedTx("transaction has no inputs")
    seen: set[tuple[bytes, int]] = set()
    for inp in tx.inputs:
        if inp.outpoint in seen:
            raise MalformedTx("duplicate input outpoint")
        seen.add(inp.outpoint)
    for out in tx.outputs:
        if out.value < 0:
            raise MalformedTx("negative output value")
        if out.payload is not None and len(out.payload) > MAX_PAYLOAD:
            raise MalformedTx(f"payload exceeds {MAX_PAYLOAD} bytes")
        check_predicate(out.predicate)
    if tx.lock_height is not None and height < tx.lock_height:
        raise TimelockNotExpired(f"lock height {tx.lock_height} > height {height}")
    total_in = 0
    for i, inp in enumerate(tx.inputs):
        entry = utxo.get(inp.outpoint)
        if entry is None:
            raise MissingUtxo(
                f"input {inp.prev_txid.hex()[:16]}:{inp.prev_index} not unspent"
            )
        total_in += entry.output.value
        satisfy(entry.output.predicate, inp.witness, sighash(tx, i), height)
    if total_in < sum(out.value for out in tx.outputs):
        raise NegativeFee("outputs exceed inputs")


# --- blocks and chain -------------------------------------------------------

@dataclass(frozen=True)
class Block:
    height: int
    prev_block_hash: bytes
    timestamp: float
    transactions: tuple[Transaction, ...]
    fee_reward: int


def serialize_block(block: Block) -> bytes:
    data = (
        wire.u64(block.height)
        + block.prev_block_hash
        + wire.f64(block.timestamp)
        + wire.u64(block.fee_reward)
        + wire.u16(len(block.transactions))
    )
    for tx in block.transactions:
        data += serialize_tx(tx)
    return data


def deserialize_block(data: bytes) -> Block:
    r = wire.Reader(data)
    height = r.u64()
    prev_hash = r.read(32)
    timestamp = r.f64()
    fee_reward = r.u64()
    txs = tuple(read_tx(r) for _ in range(r.u16()))
    r.expect_end()
    return Block(height, prev_hash, timestamp, txs, fee_reward)


def block_hash(block: Block) -> bytes:
    return crypto.digest(serialize_block(block))


@dataclass
class _Undo:
    spent: list[tuple[tuple[bytes, int], UtxoEntry]]
    created: list[tuple[bytes, int]]


class Chain:
    """Append-only block chain with exact revert support.

    Height 0 is the genesis block; its transactions carry no inputs and mint
    the scenario's money supply, so value conservation is asserted from
    height 1 onward.
    """

    def __init__(self, genesis_funding: tuple[Transaction, ...], timestamp: float = 0.0):
        genesis = Block(
            height=0,
            prev_block_hash=GENESIS_PREV_HASH,
            timestamp=timestamp,
            transactions=genesis_funding,
            fee_reward=0,
        )
        self.blocks: list[Block] = []
        self.utxo = UtxoSet()
        self.tx_index: dict[bytes, int] = {}  # txid -> block height
        self._undo: list[_Undo] = []
        self._apply_genesis(genesis)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def _apply_genesis(self, genesis: Block) -> None:
        undo = _Undo(spent=[], created=[])
        for tx in genesis.transactions:
            if tx.inputs:
                raise InvalidTxInBlock("genesis transactions must not spend inputs")
            tid = txid(tx)
            for i, out in enumerate(tx.outputs):
                self.utxo.add((tid, i), out, 0)
                undo.created.append((tid, i))
            self.tx_index[tid] = 0
        self.blocks.append(genesis)
        self._undo.append(undo)

    def apply_block(self, block: Block) -> None:
        if block.prev_block_hash != block_hash(self.tip):
            raise BadParent("block does not extend the current tip")
        if block.height != self.height + 1:
            raise BadParent(f"expected height {self.height + 1}, got {block.height}")
        if block.timestamp <= self.tip.timestamp:
            raise BadParent("block timestamp not increasing")
        undo = _Undo(spent=[], created=[])
        total_fees = 0
        try:
            for tx in block.transactions:
                validate_transaction(tx, self.utxo, block.height)
                total_fees += tx_fee(tx, self.utxo)
                tid = txid(tx)
                for inp in tx.inputs:
                    undo.spent.append((inp.outpoint, self.utxo.spend(inp.outpoint)))
                for i, out in enumerate(tx.outputs):
                    self.utxo.add((tid, i), out, block.height)
                    undo.created.append((tid, i))
                self.tx_index[tid] = block.height
        except Exception as exc:
            self._rollback(undo, block)
            if isinstance(exc, (MalformedTx, MissingUtxo, BadSignature,
                                InsufficientSigners, TimelockNotExpired,
                                OracleSignatureMissing, NegativeFee)):
                raise InvalidTxInBlock(str(exc)) from exc
            raise
        if block.fee_reward != total_fees:
            self._rollback(undo, block)
            raise InvalidTxInBlock(
                f"fee_reward {block.fee_reward} != collected fees {total_fees}"
            )
        self.blocks.append(block)
        self._undo.append(undo)

    def _rollback(self, undo: _Undo, block: Block) -> None:
        for outpoint in undo.created:
            if outpoint in self.utxo:
                self.utxo.spend(outpoint)
        for outpoint, entry in undo.spent:
            self.utxo.add(outpoint, entry.output, entry.height)
        for tx in block.transactions:
            self.tx_index.pop(txid(tx), None)

    def revert_block(self) -> Block:
        if self.height == 0:
            raise BadParent("cannot revert the genesis block")
        block = self.blocks.pop()
        undo = self._undo.pop()
        self._rollback(undo, block)
        return block

    def confirmations(self, tid: bytes, as_of_height: Optional[int] = None) -> Optional[int]:
        """Burial depth at ``as_of_height`` (default tip); None if unconfirmed."""
        h = self.tx_index.get(tid)
        if h is None:
            return None
        top = self.height if as_of_height is None else as_of_height
        if h > top:
            return None
        return top - h + 1

    def find_tx(self, tid: bytes) -> Optional[Transaction]:
        h = self.tx_index.get(tid)
        if h is None:
            return None
        for tx in self.blocks[h].transactions:
            if txid(tx) == tid:
                return tx
        return None


def scan_chain_safety(chain: Chain) -> None:
    """Post-hoc audit: no double spends ever, conservation at every height > 0.

    Raises AssertionError on violation; used by reports and acceptance tests.
    """
    utxo: set[tuple[bytes, int]] = set()
    for block in chain.blocks:
        total_in = 0
        total_out = 0
        for tx in block.transactions:
            for inp in tx.inputs:
                assert inp.outpoint in utxo, "double spend or missing UTXO detected"
                utxo.discard(inp.outpoint)
            tid = txid(tx)
            for i, out in enumerate(tx.outputs):
                total_out += out.value
                utxo.add((tid, i))
            if block.height > 0:
                total_in += sum(_lookup_value(chain, inp.outpoint) for inp in tx.inputs)
        if block.height > 0:
            assert total_in == total_out + block.fee_reward, (
                f"value not conserved at height {block.height}"
            )


def _lookup_value(chain: Chain, outpoint: tuple[bytes, int]) -> int:
    tx = chain.find_tx(outpoint[0])
    if tx is None:
        raise MissingUtxo("outpoint refers to unknown transaction")
    return tx.outputs[outpoint[1]].value
