"""Sigma-protocol proofs over Pedersen commitments.

Variants:
    Cm   knowledge of an opening (x, r) of C = g^x h^r
    Mbs  C commits to a member of a public set (CDS OR-composition)
    NN   C commits to 0 <= x < 2^m via bit commitments
    Sum  commitments C_i open to values summing to a public y

Non-interactive proofs take their challenge from ``fiat_shamir`` over a
domain tag, the full statement and all announcements. The check functions
accept an explicit challenge so distributed provers can use a coin-tossed one.
"""

import hashlib
import struct
from dataclasses import dataclass

from .crypto.group import production_group

DEFAULT_RANGE_BITS = 64

TAG_CM = b"groupbuy/zkp/cm/v1"
TAG_MBS = b"groupbuy/zkp/mbs/v1"
TAG_NN = b"groupbuy/zkp/nn/v1"
TAG_SUM = b"groupbuy/zkp/sum/v1"

VARIANT_CM, VARIANT_MBS, VARIANT_NN, VARIANT_SUM = 1, 2, 3, 4


def _lp(b):
    return struct.pack(">I", len(b)) + b


def fiat_shamir(q, tag, *parts):
    """H(tag | parts...) mapped to Z_q; parts are length-prefixed bytes."""
    data = _lp(tag) + b"".join(_lp(p) for p in parts)
    wide = hashlib.sha256(b"\x00" + data).digest() + hashlib.sha256(b"\x01" + data).digest()
    return int.from_bytes(wide, "big") % q


def _int_bytes(v):
    """Signed int -> minimal length-prefixable bytes (for set members / public values)."""
    n = (v.bit_length() + 8) // 8 or 1
    return v.to_bytes(n, "big", signed=True)


def _elems(group, elems):
    return b"".join(group.elem_bytes(e) for e in elems)


# -- knowledge of opening --------------------------------------------------

@dataclass(frozen=True)
class CmProof:
    A: int      # Cm(x', r')
    psi: int
    zx: int
    zr: int


def cm_announce(group, rng=None):
    F = group.field
    xp, rp = F.random(rng), F.random(rng)
    return (xp, rp), group.commit(xp, rp)


def cm_respond(group, x, r, secret, psi):
    xp, rp = secret
    q = group.q
    return (xp + psi * x) % q, (rp + psi * r) % q


def cm_check(group, C, A, psi, zx, zr):
    """g^zx h^zr == A * C^psi"""
    return group.commit(zx, zr) == A * group.exp(C, psi) % group.P


def _cm_challenge(group, C, A, context):
    return fiat_shamir(group.q, TAG_CM, context, group.elem_bytes(C), group.elem_bytes(A))


def zkp_cm_prove(group, C, x, r, rng=None, context=b""):
    secret, A = cm_announce(group, rng)
    psi = _cm_challenge(group, C, A, context)
    zx, zr = cm_respond(group, x, r, secret, psi)
    return CmProof(A, psi, zx, zr)


def zkp_cm_verify(group, C, proof, context=b""):
    if not isinstance(proof, CmProof) or not _in_group(group, proof.A):
        return False
    if proof.psi != _cm_challenge(group, C, proof.A, context):
        return False
    return cm_check(group, C, proof.A, proof.psi, proof.zx, proof.zr)


# -- set membership --------------------------------------------------------

@dataclass(frozen=True)
class MbsProof:
    psi: int
    branches: tuple  # ((A_j, psi_j, z_j), ...) aligned with the public set


def _mbs_targets(group, C, members):
    # C / g^{x_j}; the proof shows one of these is h^r
    return [C * group.gexp(-x) % group.P for x in members]


def _mbs_commit(group, C, members, index, r, rng):
    """First move: real branch announces h^k, others are simulated."""
    F = group.field
    targets = _mbs_targets(group, C, members)
    k = F.random(rng)
    branches = []
    for j, T in enumerate(targets):
        if j == index:
            branches.append([group.hexp(k), None, None])
        else:
            psi_j, z_j = F.random(rng), F.random(rng)
            A = group.hexp(z_j) * group.exp(T, -psi_j) % group.P
            branches.append([A, psi_j, z_j])
    return k, branches


def _mbs_finish(group, branches, index, k, r, psi):
    q = group.q
    others = sum(b[1] for j, b in enumerate(branches) if j != index)
    psi_i = (psi - others) % q
    branches[index][1] = psi_i
    branches[index][2] = (k + psi_i * r) % q
    return tuple(tuple(b) for b in branches)


def mbs_check(group, C, members, psi, branches):
    if len(branches) != len(members) or not members:
        return False
    if sum(b[1] for b in branches) % group.q != psi % group.q:
        return False
    for T, (A, psi_j, z_j) in zip(_mbs_targets(group, C, members), branches):
        if not _in_group(group, A):
            return False
        if group.hexp(z_j) != A * group.exp(T, psi_j) % group.P:
            return False
    return True


def _mbs_statement(group, C, members, context):
    return [context, group.elem_bytes(C)] + [_int_bytes(x) for x in members]


def zkp_mbs_prove(group, members, C, index, r, rng=None, context=b""):
    """Prove C = g^{members[index]} h^r without revealing index."""
    members = list(members)
    k, branches = _mbs_commit(group, C, members, index, r, rng)
    psi = fiat_shamir(group.q, TAG_MBS, *_mbs_statement(group, C, members, context),
                      _elems(group, [b[0] for b in branches]))
    return MbsProof(psi, _mbs_finish(group, branches, index, k, r, psi))


def zkp_mbs_verify(group, members, C, proof, context=b""):
    members = list(members)
    if not isinstance(proof, MbsProof) or len(proof.branches) != len(members):
        return False
    psi = fiat_shamir(group.q, TAG_MBS, *_mbs_statement(group, C, members, context),
                      _elems(group, [b[0] for b in proof.branches]))
    return psi == proof.psi and mbs_check(group, C, members, psi, proof.branches)


# -- non-negativity --------------------------------------------------------

@dataclass(frozen=True)
class NNProof:
    bits: tuple       # Cm(b_i, r_i), least significant first
    bit_proofs: tuple  # per bit: ((A_0, psi_0, z_0), (A_1, psi_1, z_1))
    A: int            # Cm(0, r')
    psi: int
    zr: int


def _weighted(group, bits):
    """prod B_i^{2^i} by Horner's rule."""
    acc = 1
    for B in reversed(bits):
        acc = acc * acc % group.P * B % group.P
    return acc


def zkp_nn_prove(group, C, x, r, m=DEFAULT_RANGE_BITS, rng=None, context=b""):
    """Prove 0 <= x < 2^m for C = g^x h^r. Raises ValueError when x is out of range."""
    F = group.field
    if not 0 <= x < 2 ** m or 2 ** m >= group.q:
        raise ValueError("value outside the provable range")
    bvals = [(x >> i) & 1 for i in range(m)]
    rs = [F.random(rng) for _ in range(m)]
    bits = [group.commit(b, rb) for b, rb in zip(bvals, rs)]
    pending = [_mbs_commit(group, B, (0, 1), b, rb, rng) for B, b, rb in zip(bits, bvals, rs)]
    rp = F.random(rng)
    A = group.hexp(rp)
    psi = _nn_challenge(group, C, m, bits, [br for _, br in pending], A, context)
    proofs = tuple(_mbs_finish(group, br, b, k, rb, psi)
                   for (k, br), b, rb in zip(pending, bvals, rs))
    rB = sum(rb << i for i, rb in enumerate(rs))
    zr = (rp + psi * (rB - r)) % group.q
    return NNProof(tuple(bits), proofs, A, psi, zr)


def _nn_challenge(group, C, m, bits, branches, A, context):
    anns = [b[0] for br in branches for b in br]
    return fiat_shamir(group.q, TAG_NN, context, group.elem_bytes(C), _int_bytes(m),
                       _elems(group, bits), _elems(group, anns), group.elem_bytes(A))


def nn_check(group, C, bits, bit_proofs, A, psi, zr):
    """Bit proofs plus h^zr == A * (prod B_i^{2^i} / C)^psi."""
    if len(bits) != len(bit_proofs) or not _in_group(group, A):
        return False
    for B, br in zip(bits, bit_proofs):
        if not _in_group(group, B) or not mbs_check(group, B, (0, 1), psi, br):
            return False
    D = _weighted(group, bits) * group.inv(C) % group.P
    return group.hexp(zr) == A * group.exp(D, psi) % group.P


def zkp_nn_verify(group, C, proof, m=DEFAULT_RANGE_BITS, context=b""):
    if not isinstance(proof, NNProof) or len(proof.bits) != m:
        return False
    psi = _nn_challenge(group, C, m, proof.bits, proof.bit_proofs, proof.A, context)
    if psi != proof.psi:
        return False
    return nn_check(group, C, proof.bits, proof.bit_proofs, proof.A, psi, proof.zr)


# -- summation -------------------------------------------------------------

@dataclass(frozen=True)
class SumProof:
    Cp: int     # C' = h^{r'}
    beta: int
    zr: int


def sum_challenge(group, cms, y, Cp, context=b""):
    return fiat_shamir(group.q, TAG_SUM, context, _elems(group, cms), _int_bytes(y),
                       group.elem_bytes(Cp))


def sum_check(group, cms, y, Cp, beta, zr):
    """g^{beta*y} h^zr == C' * (prod C_i)^beta"""
    lhs = group.commit(beta * y, zr)
    return lhs == Cp * group.exp(group.prod(cms), beta) % group.P


def zkp_sum_prove(group, cms, y, blindings, rng=None, context=b""):
    """Single-prover form: the prover knows every blinding r_i."""
    rp = group.field.random(rng)
    Cp = group.hexp(rp)
    beta = sum_challenge(group, cms, y, Cp, context)
    zr = (rp + beta * sum(blindings)) % group.q
    return SumProof(Cp, beta, zr)


def zkp_sum_verify(group, cms, y, proof, context=b""):
    if not isinstance(proof, SumProof) or not cms or not _in_group(group, proof.Cp):
        return False
    beta = sum_challenge(group, cms, y, proof.Cp, context)
    return beta == proof.beta and sum_check(group, cms, y, proof.Cp, beta, proof.zr)


def _in_group(group, a):
    return isinstance(a, int) and 0 < a < group.P


# -- serialization ---------------------------------------------------------

def _scalars_elems(proof, group):
    """Flat list of (kind, value) fields in canonical order."""
    E, Z = "e", "z"
    if isinstance(proof, CmProof):
        return VARIANT_CM, [(E, proof.A), (Z, proof.psi), (Z, proof.zx), (Z, proof.zr)]
    if isinstance(proof, MbsProof):
        out = [(Z, proof.psi), (Z, len(proof.branches))]
        for A, p, z in proof.branches:
            out += [(E, A), (Z, p), (Z, z)]
        return VARIANT_MBS, out
    if isinstance(proof, NNProof):
        out = [(Z, len(proof.bits))] + [(E, B) for B in proof.bits]
        for br in proof.bit_proofs:
            for A, p, z in br:
                out += [(E, A), (Z, p), (Z, z)]
        out += [(E, proof.A), (Z, proof.psi), (Z, proof.zr)]
        return VARIANT_NN, out
    if isinstance(proof, SumProof):
        return VARIANT_SUM, [(E, proof.Cp), (Z, proof.beta), (Z, proof.zr)]
    raise TypeError(f"not a proof: {type(proof).__name__}")


def serialize(proof, group=None):
    """variant byte, then length-prefixed big-endian group elements / scalars."""
    group = group or production_group()
    variant, fields = _scalars_elems(proof, group)
    out = bytes([variant])
    for kind, v in fields:
        out += _lp(group.elem_bytes(v) if kind == "e" else group.scalar_bytes(v))
    return out


def deserialize(data, group=None):
    group = group or production_group()
    variant = data[0]
    pos = 1
    vals = []
    while pos < len(data):
        (n,) = struct.unpack(">I", data[pos:pos + 4])
        vals.append(int.from_bytes(data[pos + 4:pos + 4 + n], "big"))
        pos += 4 + n
    it = iter(vals)
    if variant == VARIANT_CM:
        return CmProof(*vals)
    if variant == VARIANT_MBS:
        psi, k = next(it), next(it)
        return MbsProof(psi, tuple((next(it), next(it), next(it)) for _ in range(k)))
    if variant == VARIANT_NN:
        m = next(it)
        bits = tuple(next(it) for _ in range(m))
        bps = tuple(tuple((next(it), next(it), next(it)) for _ in range(2)) for _ in range(m))
        return NNProof(bits, bps, next(it), next(it), next(it))
    if variant == VARIANT_SUM:
        return SumProof(*vals)
    raise ValueError(f"unknown proof variant {variant}")
