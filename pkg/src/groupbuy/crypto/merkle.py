"""Binary Merkle trees over SHA-256 with leaf/node domain separation."""

import hashlib
from dataclasses import dataclass

LEAF = b"\x00"
NODE = b"\x01"
PAD = hashlib.sha256(b"\x02groupbuy/merkle/pad").digest()


def H(data):
    return hashlib.sha256(data).digest()


def leaf_hash(data):
    return H(LEAF + data)


def node_hash(left, right):
    return H(NODE + left + right)


@dataclass(frozen=True)
class MerkleProof:
    index: int
    # (sibling hash, sibling_is_left) from the leaf level upwards
    path: tuple

    def __len__(self):
        return len(self.path)

    def to_json(self):
        return {"index": self.index, "path": [[s.hex(), left] for s, left in self.path]}

    @classmethod
    def from_json(cls, d):
        return cls(d["index"], tuple((bytes.fromhex(s), bool(left)) for s, left in d["path"]))


class MerkleTree:
    def __init__(self, leaves):
        if not leaves:
            raise ValueError("Merkle tree needs at least one leaf")
        self.leaves = list(leaves)
        level = [leaf_hash(x) for x in self.leaves]
        size = 1
        while size < len(level):
            size *= 2
        level += [PAD] * (size - len(level))
        self.levels = [level]
        while len(level) > 1:
            level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
            self.levels.append(level)

    @property
    def root(self):
        return self.levels[-1][0]

    @property
    def depth(self):
        return len(self.levels) - 1

    def prove(self, index):
        if not 0 <= index < len(self.leaves):
            raise IndexError(f"leaf index {index} out of range")
        path = []
        i = index
        for level in self.levels[:-1]:
            sib = i ^ 1
            path.append((level[sib], sib < i))
            i //= 2
        return MerkleProof(index, tuple(path))


def merkle_build(leaves):
    return MerkleTree(leaves)


def merkle_prove(tree, index):
    return tree.prove(index)


def merkle_verify(root, leaf, proof):
    acc = leaf_hash(leaf)
    i = proof.index
    for sib, sib_left in proof.path:
        if sib_left != bool(i & 1):
            return False
        acc = node_hash(sib, acc) if sib_left else node_hash(acc, sib)
        i //= 2
    return i == 0 and acc == root
