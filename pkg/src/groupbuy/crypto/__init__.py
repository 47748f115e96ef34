from .group import Field, Group, commit, production_group, toy_group
from .merkle import MerkleProof, MerkleTree, merkle_build, merkle_prove, merkle_verify
from .receipts import Receipt, ReceiptLeaf, SlotOpening, receipt_tree

__all__ = [
    "Field", "Group", "commit", "production_group", "toy_group",
    "MerkleProof", "MerkleTree", "merkle_build", "merkle_prove", "merkle_verify",
    "Receipt", "ReceiptLeaf", "SlotOpening", "receipt_tree",
]
