"""Simulated confidential token ledger: accounts with committed balances,
a receipt-root registry and verified zero-sum multi-transactions.

Single-writer deterministic state machine. Every state transition is appended
to an optional JSON-lines log; ``Ledger.replay`` rebuilds the state from it.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .crypto.group import production_group
from .crypto.merkle import MerkleProof, merkle_verify
from .zkp import deserialize, serialize, zkp_nn_prove, zkp_nn_verify, zkp_sum_verify

LOG_VERSION = 1
BALANCE_BITS = 96
SINK = hashlib.sha256(b"groupbuy/ledger/dummy-sink").hexdigest()
ROOT_TAG = b"groupbuy/receipt-root/v1"
MTX_TAG = b"groupbuy/multi-transaction/v1"

REJECT_UNKNOWN = "unknown account"
REJECT_SIGNATURE = "signature"
REJECT_SUM = "sum"
REJECT_RANGE = "range"


class LedgerError(Exception):
    pass


def pubkey_bytes(key):
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def address_of(pub):
    """ad = SHA-256(raw public key), hex."""
    return hashlib.sha256(pub).hexdigest()


def root_message(root, epoch, user):
    return ROOT_TAG + root + struct.pack(">q", epoch) + user.encode()


def _verify_sig(pub, sig, msg):
    try:
        Ed25519PublicKey.from_public_bytes(pub).verify(sig, msg)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass
class Account:
    address: str
    pubkey: bytes          # empty for the keyless sink
    balance: int           # Cm(Bal)


@dataclass(frozen=True)
class RootRecord:
    id: int
    user: str
    epoch: int
    root: bytes
    signature: bytes
    timestamp: int         # ledger height at registration


@dataclass(frozen=True)
class Entry:
    sender: str
    receiver: str
    cm: int                # Cm(val); positive val leaves the sender
    nn_proof: object       # NNProof on Cm(Bal) * Cm(val)^-1


@dataclass
class MultiTransaction:
    context: bytes
    entries: list
    sum_proof: object
    signatures: dict = field(default_factory=dict)   # address -> signature

    def body(self, group):
        out = MTX_TAG + struct.pack(">I", len(self.context)) + self.context
        for e in self.entries:
            out += bytes.fromhex(e.sender) + bytes.fromhex(e.receiver) + group.elem_bytes(e.cm)
            p = serialize(e.nn_proof, group) if e.nn_proof is not None else b""
            out += struct.pack(">I", len(p)) + p
        p = serialize(self.sum_proof, group) if self.sum_proof is not None else b""
        return out + struct.pack(">I", len(p)) + p

    def to_json(self, group):
        return {
            "context": self.context.hex(),
            "entries": [{"sender": e.sender, "receiver": e.receiver, "cm": format(e.cm, "x"),
                         "nn_proof": serialize(e.nn_proof, group).hex() if e.nn_proof else None}
                        for e in self.entries],
            "sum_proof": serialize(self.sum_proof, group).hex() if self.sum_proof else None,
            "signatures": {a: s.hex() for a, s in sorted(self.signatures.items())},
        }

    @classmethod
    def from_json(cls, d, group):
        entries = [Entry(e["sender"], e["receiver"], int(e["cm"], 16),
                         deserialize(bytes.fromhex(e["nn_proof"]), group) if e["nn_proof"] else None)
                   for e in d["entries"]]
        sp = deserialize(bytes.fromhex(d["sum_proof"]), group) if d["sum_proof"] else None
        return cls(bytes.fromhex(d["context"]), entries, sp,
                   {a: bytes.fromhex(s) for a, s in d["signatures"].items()})


def entry_context(context, address):
    return context + bytes.fromhex(address)


class Wallet:
    """Owner side of an account: signing key plus the balance opening."""

    def __init__(self, key=None, group=None):
        self.key = key or Ed25519PrivateKey.generate()
        self.group = group or production_group()
        self.pubkey = pubkey_bytes(self.key)
        self.address = address_of(self.pubkey)
        self.value = 0
        self.blinding = 0

    @classmethod
    def from_seed(cls, seed32, group=None):
        return cls(Ed25519PrivateKey.from_private_bytes(seed32), group)

    def credit(self, amount, r):
        q = self.group.q
        self.value += amount
        self.blinding = (self.blinding + r) % q

    def commitment(self):
        return self.group.commit(self.value, self.blinding)

    def payment_proof(self, val, r, context, rng=None):
        """NN proof that Bal - val stays in [0, 2^96); None when it cannot be built."""
        rest = self.value - val
        try:
            return zkp_nn_prove(self.group, self.group.commit(rest, self.blinding - r), rest,
                                (self.blinding - r) % self.group.q, BALANCE_BITS, rng,
                                context=entry_context(context, self.address))
        except ValueError:
            return None

    def sign(self, mtx):
        return self.key.sign(mtx.body(self.group))


class Ledger:
    def __init__(self, operator_pubkey, group=None, log_path=None):
        self.group = group or production_group()
        self.operator_pubkey = operator_pubkey
        self.accounts = {SINK: Account(SINK, b"", 1)}
        self.records = []
        self._by_key = {}
        self.height = 0
        self.log_path = log_path
        self._log({"op": "init", "version": LOG_VERSION, "operator": operator_pubkey.hex()})

    # -- log and replay -----------------------------------------------------

    def _log(self, rec):
        self.height += 1
        if self.log_path:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def replay(cls, path, group=None):
        with open(path) as f:
            recs = [json.loads(line) for line in f if line.strip()]
        if not recs or recs[0].get("op") != "init" or recs[0].get("version") != LOG_VERSION:
            raise LedgerError("not a ledger log of a supported version")
        led = cls(bytes.fromhex(recs[0]["operator"]), group)
        for r in recs[1:]:
            op = r["op"]
            if op == "open_account":
                led.open_account(bytes.fromhex(r["pubkey"]))
            elif op == "mint":
                led.mint(r["address"], r["amount"], int(r["r"], 16))
            elif op == "register_root":
                led.register_receipt_root(r["user"], r["epoch"], bytes.fromhex(r["root"]),
                                          bytes.fromhex(r["signature"]))
            elif op == "submit":
                led.submit_multi_transaction(MultiTransaction.from_json(r["mtx"], led.group))
            else:
                raise LedgerError(f"unknown log record {op!r}")
        return led

    # -- accounts -----------------------------------------------------------

    def open_account(self, pubkey):
        ad = address_of(pubkey)
        if ad in self.accounts:
            raise LedgerError("duplicate address")
        self.accounts[ad] = Account(ad, pubkey, 1)
        self._log({"op": "open_account", "pubkey": pubkey.hex()})
        return ad

    def mint(self, address, amount, r):
        """Token purchase: Cm(Bal) <- Cm(Bal) * Cm(amount, r)."""
        if address not in self.accounts or address == SINK:
            raise LedgerError(REJECT_UNKNOWN)
        if amount < 0:
            raise LedgerError("mint amount must be non-negative")
        acc = self.accounts[address]
        acc.balance = acc.balance * self.group.commit(amount, r) % self.group.P
        self._log({"op": "mint", "address": address, "amount": amount, "r": format(r, "x")})
        return acc.balance

    def balance(self, address):
        return self.accounts[address].balance

    def supply(self):
        """Product of all balance commitments; constant across transfers."""
        return self.group.prod(a.balance for a in self.accounts.values())

    # -- receipt registry ---------------------------------------------------

    def register_receipt_root(self, user, epoch, root, signature):
        if not _verify_sig(self.operator_pubkey, signature, root_message(root, epoch, user)):
            raise LedgerError("bad operator signature")
        if (user, epoch) in self._by_key:
            raise LedgerError(f"root already registered for ({user}, {epoch})")
        rec = RootRecord(len(self.records), user, epoch, root, signature, self.height)
        self.records.append(rec)
        self._by_key[(user, epoch)] = rec.id
        self._log({"op": "register_root", "user": user, "epoch": epoch, "root": root.hex(),
                   "signature": signature.hex()})
        return rec.id

    def root_of(self, user, epoch):
        if (user, epoch) not in self._by_key:
            raise LedgerError(f"no root registered for ({user}, {epoch})")
        return self.records[self._by_key[(user, epoch)]].root

    def verify_receipt_membership(self, leaf, proof, user, epoch):
        if isinstance(proof, dict):
            proof = MerkleProof.from_json(proof)
        return merkle_verify(self.root_of(user, epoch), leaf, proof)

    # -- multi-transactions -------------------------------------------------

    def check(self, mtx):
        """Reason the ledger would reject ``mtx``, or None."""
        G = self.group
        if not mtx.entries:
            return REJECT_SUM
        senders = [e.sender for e in mtx.entries]
        for e in mtx.entries:
            if e.sender not in self.accounts or e.sender == SINK or e.receiver != SINK:
                return REJECT_UNKNOWN
        if len(set(senders)) != len(senders) or set(mtx.signatures) != set(senders):
            return REJECT_SIGNATURE
        body = mtx.body(G)
        for ad in senders:
            if not _verify_sig(self.accounts[ad].pubkey, mtx.signatures[ad], body):
                return REJECT_SIGNATURE
        if not zkp_sum_verify(G, [e.cm for e in mtx.entries], 0, mtx.sum_proof, context=mtx.context):
            return REJECT_SUM
        for e in mtx.entries:
            rest = self.accounts[e.sender].balance * G.inv(e.cm) % G.P
            if e.nn_proof is None or not zkp_nn_verify(G, rest, e.nn_proof, BALANCE_BITS,
                                                       context=entry_context(mtx.context, e.sender)):
                return REJECT_RANGE
        return None

    def submit_multi_transaction(self, mtx):
        """Returns (True, None) or (False, reason); state changes only on accept."""
        reason = self.check(mtx)
        if reason is not None:
            return False, reason
        G = self.group
        sink = self.accounts[SINK]
        for e in mtx.entries:
            acc = self.accounts[e.sender]
            acc.balance = acc.balance * G.inv(e.cm) % G.P
            sink.balance = sink.balance * e.cm % G.P
        self._log({"op": "submit", "mtx": mtx.to_json(G)})
        return True, None

    # -- snapshot -----------------------------------------------------------

    def dump(self):
        return {
            "version": LOG_VERSION,
            "height": self.height,
            "sink": SINK,
            "accounts": [{"address": a.address, "pubkey": a.pubkey.hex(), "balance": format(a.balance, "x")}
                         for a in sorted(self.accounts.values(), key=lambda a: a.address)],
            "receipt_roots": [{"id": r.id, "user": r.user, "epoch": r.epoch, "root": r.root.hex(),
                               "signature": r.signature.hex(), "timestamp": r.timestamp}
                              for r in self.records],
        }
