"""Encrypted bill receipts: per-slot commitment tuples under a Merkle root."""

from dataclasses import dataclass

from .group import production_group
from .merkle import MerkleTree

FIELDS = ("a", "beta", "kappa", "mu", "nu")


@dataclass(frozen=True)
class ReceiptLeaf:
    t: int
    commitments: tuple  # Cm(a), Cm(beta), Cm(kappa), Cm(mu), Cm(nu)

    def encode(self, group):
        return self.t.to_bytes(8, "big", signed=True) + b"".join(group.elem_bytes(c) for c in self.commitments)


@dataclass(frozen=True)
class SlotOpening:
    t: int
    values: tuple     # signed ints in receipt order
    blindings: tuple  # field elements


@dataclass
class Receipt:
    user_id: str
    epoch: int
    leaves: list
    openings: list
    tree: MerkleTree

    @property
    def root(self):
        return self.tree.root

    def proof(self, k):
        return self.tree.prove(k)


def receipt_tree(bill, epoch, t0, t1, group=None, rng=None):
    """Commit each slot of ``bill`` in [t0, t1] and build the receipt tree.

    Returns the tree and the openings (to be handed to the bill owner)."""
    group = group or production_group()
    F = group.field
    leaves, openings = [], []
    for e in bill.window(t0, t1):
        vals = e.values()
        rs = tuple(F.random(rng) for _ in vals)
        cms = tuple(group.commit(F.encode(v), r) for v, r in zip(vals, rs))
        leaves.append(ReceiptLeaf(e.t, cms))
        openings.append(SlotOpening(e.t, vals, rs))
    tree = MerkleTree([lf.encode(group) for lf in leaves])
    return Receipt(bill.user_id, epoch, leaves, openings, tree)
