"""SPDZ-style engine: additive shares with MACs over Z_q, run in lockstep.

Every ``Shared`` holds one (value share, MAC share) pair per party; party i
only ever reads or writes index i, its own state. Interaction goes through
``Network`` frames. Checks on broadcast data are deterministic and identical
at every party, so the simulator evaluates them once for all.
"""

import hashlib
import random
import struct

from ..crypto.group import production_group
from ..zkp import cm_check, fiat_shamir
from .dealer import POS_BITS, PreprocessingExhausted
from .network import Network, TransportError

TAG_COIN = b"groupbuy/mpc/coin/v1"
TAG_MACCOEF = b"groupbuy/mpc/mac-coefficients/v1"
TAG_DZKP = b"groupbuy/mpc/dzkp-cm/v1"


class ProtocolAbort(Exception):
    """Session aborted; every party is notified and the session is dead."""

    def __init__(self, stage, reason):
        super().__init__(f"abort in {stage}: {reason}")
        self.stage = stage
        self.reason = reason


class Shared:
    __slots__ = ("v", "m")

    def __init__(self, v, m):
        self.v = v
        self.m = m

    def __repr__(self):
        return f"Shared(n={len(self.v)})"


class Party:
    def __init__(self, pid, stock, rng):
        self.id = pid
        self.stock = stock
        self.alpha = stock.alpha
        self.rng = rng
        self.aborted = False
        self.outputs = []   # values revealed privately to this party


class Fault:
    """A deviation by ``party`` at the ``occurrence``-th hit of ``point``.

    Points: ``open.share`` / ``open.decommit`` (opened share, before/after its
    commitment), ``mac.sigma``, ``coin.open``, ``input.z``, ``drop.<msg>``,
    ``contrib.bit`` / ``contrib.pos`` (a contributed random value)
    and ``result.<op>`` which shifts the party's value share (``target="value"``),
    its MAC share (``"mac"``) or both, the MAC by delta times the party's own
    key share (``"naive"``), of an operation's output."""

    def __init__(self, point, party=0, occurrence=1, delta=1, target="value"):
        self.point, self.party, self.occurrence = point, party, occurrence
        self.delta, self.target = delta, target
        self.hits = 0
        self.fired = False


def _h(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


class Engine:
    def __init__(self, field, stocks, net=None, seed=None, group=None, faults=(),
                 randomness="dealer"):
        self.F = field
        self.q = field.q
        self.n = len(stocks)
        self.group = group or production_group()
        if self.group.q != self.q:
            raise ValueError("engine field must match the commitment group order")
        self.net = net or Network(self.n, _h(b"session", str(seed).encode())[:16])
        rng = (lambda i: random.Random(f"{seed}/party/{i}")) if seed is not None else \
            (lambda i: random.SystemRandom())
        self.parties = [Party(i, stocks[i], rng(i)) for i in range(self.n)]
        self.pending = []   # (opened value, Shared) awaiting a MAC check
        self.faults = list(faults)
        self.randomness = randomness
        self.aborted = None
        self.stage = "init"
        self.op_counts = {}

    # -- bookkeeping -------------------------------------------------------

    def set_stage(self, stage):
        self.stage = stage
        self.net.set_stage(stage)

    def abort(self, reason):
        for p in self.parties:
            p.aborted = True
        self.aborted = ProtocolAbort(self.stage, reason)
        raise self.aborted

    def _alive(self):
        if self.aborted is not None:
            raise ProtocolAbort(self.stage, f"session already aborted ({self.aborted.reason})")

    def _count(self, op, k=1):
        self.op_counts[op] = self.op_counts.get(op, 0) + k

    def _fault(self, point, party, value):
        for f in self.faults:
            if f.point == point and f.party == party:
                f.hits += 1
                if f.hits == f.occurrence:
                    f.fired = True
                    return (value + f.delta) % self.q
        return value

    def _drops(self, kind, payloads, senders=None):
        """Silence a party's ``occurrence``-th message of this kind."""
        senders = range(len(payloads)) if senders is None else senders
        for f in self.faults:
            if f.point == f"drop.{kind}" and f.party in senders:
                f.hits += 1
                if f.hits == f.occurrence:
                    f.fired = True
                    payloads[f.party] = None
        return payloads

    def _tamper(self, op, xs):
        point = f"result.{op}"
        for f in self.faults:
            if f.point != point:
                continue
            for x in xs:
                f.hits += 1
                if f.hits == f.occurrence:
                    f.fired = True
                    i, q = f.party, self.q
                    if f.target in ("value", "naive"):
                        x.v[i] = (x.v[i] + f.delta) % q
                    if f.target == "mac":
                        x.m[i] = (x.m[i] + f.delta) % q
                    if f.target == "naive":
                        # scale the MAC with the only key share this party knows
                        x.m[i] = (x.m[i] + f.delta * self.parties[i].alpha) % q
        return xs

    def _exchange(self, kind, payloads):
        try:
            return self.net.exchange(kind, self._drops(kind, payloads))
        except TransportError as e:
            self.abort(f"timeout: {e}")

    def _broadcast(self, sender, kind, payload):
        if self._drops(kind, [payload] * self.n, (sender,))[sender] is None:
            payload = None
        try:
            return self.net.broadcast(sender, kind, payload)
        except TransportError as e:
            self.abort(f"timeout: {e}")

    def enc(self, xs):
        return b"".join(self.F.to_bytes(x) for x in xs)

    def dec(self, data):
        k = self.F.nbytes
        return [int.from_bytes(data[i:i + k], "big") for i in range(0, len(data), k)]

    # -- local operations --------------------------------------------------

    def const(self, c):
        c %= self.q
        v = [c] + [0] * (self.n - 1)
        return Shared(v, [p.alpha * c % self.q for p in self.parties])

    def add(self, x, y):
        q = self.q
        return Shared([(a + b) % q for a, b in zip(x.v, y.v)],
                      [(a + b) % q for a, b in zip(x.m, y.m)])

    def sub(self, x, y):
        q = self.q
        return Shared([(a - b) % q for a, b in zip(x.v, y.v)],
                      [(a - b) % q for a, b in zip(x.m, y.m)])

    def add_const(self, x, c):
        q = self.q
        c %= q
        v = list(x.v)
        v[0] = (v[0] + c) % q
        return Shared(v, [(m + p.alpha * c) % q for m, p in zip(x.m, self.parties)])

    def mul_const(self, x, c):
        q = self.q
        return Shared([a * c % q for a in x.v], [a * c % q for a in x.m])

    def lin(self, terms, const=0):
        """sum c_j * x_j + const for terms [(c_j, x_j)]."""
        q, n = self.q, self.n
        v = [0] * n
        m = [0] * n
        for c, x in terms:
            for i in range(n):
                v[i] += c * x.v[i]
                m[i] += c * x.m[i]
        out = Shared([a % q for a in v], [a % q for a in m])
        return self.add_const(out, const) if const else out

    def total(self, xs):
        return self.lin([(1, x) for x in xs])

    # -- input and output --------------------------------------------------

    def input(self, owner, values):
        """Owner secret-shares ``values``: broadcasts z = x - r for a dealt mask r."""
        self._alive()
        if not values:
            return []
        try:
            masks = [[p.stock.mask(owner) for _ in values] for p in self.parties]
            rs = [self.parties[owner].stock.own_mask_value() for _ in values]
        except PreprocessingExhausted as e:
            self.abort(str(e))
        zs = [self._fault("input.z", owner, (x - r) % self.q) for x, r in zip(values, rs)]
        zs = self.dec(self._broadcast(owner, "input", self.enc(zs)))
        out = []
        for k, z in enumerate(zs):
            sh = Shared([masks[i][k][0] for i in range(self.n)], [masks[i][k][1] for i in range(self.n)])
            out.append(self.add_const(sh, z))
        self._count("input", len(values))
        return self._tamper("input", out)

    def open(self, xs):
        """Commit-then-open of every party's shares; MAC check deferred."""
        self._alive()
        if not xs:
            return []
        nonces, shares = [], []
        for p in self.parties:
            nonces.append(p.rng.getrandbits(128).to_bytes(16, "big"))
            shares.append([self._fault("open.share", p.id, x.v[p.id]) for x in xs])
        rnd = struct.pack(">I", self.net.round)
        coms = [_h(b"open", self.net.session, rnd, nonces[i], self.enc(shares[i])) for i in range(self.n)]
        got = self._exchange("commit", coms)
        opened = []
        for p in self.parties:
            sh = [self._fault("open.decommit", p.id, s) for s in shares[p.id]]
            opened.append(nonces[p.id] + self.enc(sh))
        opened = self._exchange("open", opened)
        vals = [0] * len(xs)
        for i, data in enumerate(opened):
            if _h(b"open", self.net.session, rnd, data[:16], data[16:]) != got[i]:
                self.abort(f"party {i} opened shares that do not match its commitment")
            for k, s in enumerate(self.dec(data[16:])):
                vals[k] += s
        vals = [v % self.q for v in vals]
        self.pending.extend(zip(vals, xs))
        self._count("open", len(xs))
        return vals

    def open_to(self, owner, xs):
        """Reveal to ``owner`` only: open x - r for a mask r known to the owner."""
        self._alive()
        try:
            masks = [[p.stock.mask(owner) for _ in xs] for p in self.parties]
            rs = [self.parties[owner].stock.own_mask_value() for _ in xs]
        except PreprocessingExhausted as e:
            self.abort(str(e))
        ys = [self.sub(x, Shared([masks[i][k][0] for i in range(self.n)],
                                 [masks[i][k][1] for i in range(self.n)]))
              for k, x in enumerate(xs)]
        opened = self.open(ys)
        vals = [(y + r) % self.q for y, r in zip(opened, rs)]
        self.parties[owner].outputs.extend(vals)
        return vals

    def signed(self, x):
        return self.F.signed(x)

    # -- randomness and MAC checks -----------------------------------------

    def coin_toss(self):
        """Pedersen commit-reveal coin toss; returns 32 public random bytes."""
        self._alive()
        G = self.group
        vals = [(self.F.random(p.rng), self.F.random(p.rng)) for p in self.parties]
        coms = self._exchange("coin_commit", [G.elem_bytes(G.commit(r, s)) for r, s in vals])
        opens = []
        for p in self.parties:
            r, s = vals[p.id]
            opens.append(self.enc([self._fault("coin.open", p.id, r), s]))
        opens = self._exchange("coin_open", opens)
        rs = []
        for i, data in enumerate(opens):
            r, s = self.dec(data)
            if G.elem_bytes(G.commit(r, s)) != coms[i]:
                self.abort(f"party {i} coin opening does not match its commitment")
            rs.append(self.F.to_bytes(r))
        self._count("coin_toss")
        return _h(TAG_COIN, *rs)

    def challenge(self, tag, *parts):
        """Field challenge from a fresh coin toss, bound to a statement."""
        return fiat_shamir(self.q, tag, self.coin_toss(), *parts)

    def check_macs(self):
        """Batch check of every deferred opening with coin-tossed coefficients."""
        self._alive()
        if not self.pending:
            return
        seed = self.coin_toss()
        q = self.q
        coefs = [fiat_shamir(q, TAG_MACCOEF, seed, struct.pack(">I", j)) for j in range(len(self.pending))]
        sigmas = []
        for p in self.parties:
            i, a = p.id, p.alpha
            s = 0
            for c, (x, sh) in zip(coefs, self.pending):
                s += c * (sh.m[i] - a * x)
            sigmas.append(self._fault("mac.sigma", i, s % q))
        nonces = [p.rng.getrandbits(128).to_bytes(16, "big") for p in self.parties]
        coms = self._exchange("mac_commit", [_h(b"mac", nonces[i], self.enc([sigmas[i]])) for i in range(self.n)])
        opens = self._exchange("mac_open", [nonces[i] + self.enc([sigmas[i]]) for i in range(self.n)])
        total = 0
        for i, data in enumerate(opens):
            if _h(b"mac", data) != coms[i]:
                self.abort(f"party {i} MAC-check share does not match its commitment")
            total += self.dec(data[16:])[0]
        self._count("mac_check")
        checked = len(self.pending)
        self.pending = []
        if total % q:
            self.abort(f"MAC check failed over {checked} opened values")

    def verify_unopened(self, xs):
        """MAC-check values that stay secret: open a + sum r_j x_j for a dealt
        uniform a (first component of a triple), then run the batch check."""
        self._alive()
        if not xs:
            return
        seed = self.coin_toss()
        coefs = [fiat_shamir(self.q, TAG_MACCOEF, b"unopened", seed, struct.pack(">I", j))
                 for j in range(len(xs))]
        a = self._triples(1)[0][0]
        self.open([self.add(a, self.lin(list(zip(coefs, xs))))])
        self.check_macs()

    # -- multiplication ----------------------------------------------------

    def _triples(self, k):
        try:
            per = [[p.stock.triple() for _ in range(k)] for p in self.parties]
        except PreprocessingExhausted as e:
            self.abort(str(e))
        out = []
        for j in range(k):
            a = Shared([per[i][j][0] for i in range(self.n)], [per[i][j][1] for i in range(self.n)])
            b = Shared([per[i][j][2] for i in range(self.n)], [per[i][j][3] for i in range(self.n)])
            c = Shared([per[i][j][4] for i in range(self.n)], [per[i][j][5] for i in range(self.n)])
            out.append((a, b, c))
        return out

    def mul(self, pairs):
        """Beaver multiplication of each (x, y); one batched opening."""
        self._alive()
        if not pairs:
            return []
        triples = self._triples(len(pairs))
        eps = [self.sub(x, a) for (x, _), (a, _, _) in zip(pairs, triples)]
        dels = [self.sub(y, b) for (_, y), (_, b, _) in zip(pairs, triples)]
        opened = self.open(eps + dels)
        k = len(pairs)
        out = []
        for j, (a, b, c) in enumerate(triples):
            e, d = opened[j], opened[k + j]
            z = self.lin([(1, c), (e, b), (d, a)], e * d % self.q)
            out.append(z)
        self._count("mul", k)
        return self._tamper("mul", out)

    # -- shared randomness -------------------------------------------------

    def rand_bits(self, k):
        self._alive()
        if k == 0:
            return []
        if self.randomness == "contributed":
            out = self._rand_bits_contributed(k)
        else:
            try:
                per = [[p.stock.bit() for _ in range(k)] for p in self.parties]
            except PreprocessingExhausted as e:
                self.abort(str(e))
            out = [Shared([per[i][j][0] for i in range(self.n)], [per[i][j][1] for i in range(self.n)])
                   for j in range(k)]
        self._count("rand_bit", k)
        return self._tamper("rand_bit", out)

    def rand_pos(self, k):
        self._alive()
        if k == 0:
            return []
        if self.randomness == "contributed":
            out = self._rand_pos_contributed(k)
        else:
            try:
                per = [[p.stock.positive() for _ in range(k)] for p in self.parties]
            except PreprocessingExhausted as e:
                self.abort(str(e))
            out = [Shared([per[i][j][0] for i in range(self.n)], [per[i][j][1] for i in range(self.n)])
                   for j in range(k)]
        self._count("rand_pos", k)
        return self._tamper("rand_pos", out)

    def _contribute(self, values_per_party, prove, check):
        """Each party inputs its values, commits to them, links the commitments
        to the shares and attaches a non-interactive proof on the commitment."""
        G = self.group
        shared, claims = [], []
        for p in self.parties:
            vals = values_per_party[p.id]
            xs = self.input(p.id, vals)
            blinds = [self.F.random(p.rng) for _ in vals]
            cms = [G.commit(v, r) for v, r in zip(vals, blinds)]
            proofs = [prove(C, v, r, p.rng) for C, v, r in zip(cms, vals, blinds)]
            self._broadcast(p.id, "announce", b"".join(G.elem_bytes(C) for C in cms))
            for C, pr in zip(cms, proofs):
                if not check(C, pr):
                    self.abort(f"party {p.id} contributed an invalid value proof")
            claims += [(p.id, C, x, v, r) for C, x, v, r in zip(cms, xs, vals, blinds)]
            shared.append(xs)
        self.dzkp_cm(claims)
        return shared

    def _rand_bits_contributed(self, k):
        from ..zkp import zkp_mbs_prove, zkp_mbs_verify
        G = self.group
        vals = [[self._fault("contrib.bit", p.id, p.rng.randrange(2)) for _ in range(k)] for p in self.parties]
        shared = self._contribute(
            vals,
            lambda C, v, r, rng: self._try_prove(zkp_mbs_prove, G, (0, 1), C, v, r, rng,
                                                 context=self.net.session),
            lambda C, pr: pr is not None and zkp_mbs_verify(G, (0, 1), C, pr, context=self.net.session))
        out = []
        for j in range(k):
            b = shared[0][j]
            for i in range(1, self.n):
                b = self.xor(b, shared[i][j])
            out.append(b)
        return out

    def xor(self, b, c):
        """1 - (1 - b(1-c)) * (1 - (1-b)c) on shared bits."""
        one_c = self.add_const(self.mul_const(c, -1), 1)
        one_b = self.add_const(self.mul_const(b, -1), 1)
        x, y = self.mul([(b, one_c), (one_b, c)])
        (prod,) = self.mul([(self.add_const(self.mul_const(x, -1), 1),
                             self.add_const(self.mul_const(y, -1), 1))])
        return self.add_const(self.mul_const(prod, -1), 1)

    def _rand_pos_contributed(self, k):
        from ..zkp import zkp_nn_prove, zkp_nn_verify
        G = self.group
        vals = [[self._fault("contrib.pos", p.id, p.rng.randrange(2 ** POS_BITS)) for _ in range(k)]
                for p in self.parties]
        shared = self._contribute(
            vals,
            lambda C, v, r, rng: self._try_prove(zkp_nn_prove, G, C, v, r, POS_BITS, rng,
                                                 context=self.net.session),
            lambda C, pr: pr is not None and zkp_nn_verify(G, C, pr, POS_BITS, context=self.net.session))
        return [self.add_const(self.total([shared[i][j] for i in range(self.n)]), 1) for j in range(k)]

    @staticmethod
    def _try_prove(prove, *args, **kw):
        """A party whose contribution is out of range has no valid proof to send."""
        try:
            return prove(*args, **kw)
        except (ValueError, IndexError):
            return None

    # -- distributed proof of knowledge of a committed, shared value --------

    def dzkp_cm(self, claims):
        """For each claim (owner, C, <x>, x, r): prove <x> opens C.

        The owner shares r, x', r' and announces A = Cm(x', r'); one coin-tossed
        challenge psi covers the batch; the parties open z_x = x' + psi x and
        z_r = r' + psi r and everybody checks g^z_x h^z_r = A C^psi. Returns the
        shared blindings <r>, one per claim."""
        self._alive()
        if not claims:
            return []
        G = self.group
        by_owner = {}
        for idx, c in enumerate(claims):
            by_owner.setdefault(c[0], []).append(idx)
        A = [None] * len(claims)
        rsh, xpsh, rpsh = [None] * len(claims), [None] * len(claims), [None] * len(claims)
        for owner, idxs in sorted(by_owner.items()):
            p = self.parties[owner]
            secrets_ = [(self.F.random(p.rng), self.F.random(p.rng)) for _ in idxs]
            anns = [G.commit(xp, rp) for xp, rp in secrets_]
            got = self._broadcast(owner, "announce", b"".join(G.elem_bytes(a) for a in anns))
            k = G.nbytes
            anns = [int.from_bytes(got[j:j + k], "big") for j in range(0, len(got), k)]
            flat = []
            for idx, (xp, rp) in zip(idxs, secrets_):
                flat += [claims[idx][4], xp, rp]
            shares = self.input(owner, flat)
            for j, idx in enumerate(idxs):
                A[idx] = anns[j]
                rsh[idx], xpsh[idx], rpsh[idx] = shares[3 * j], shares[3 * j + 1], shares[3 * j + 2]
        stmt = b"".join(G.elem_bytes(c[1]) + G.elem_bytes(a) for c, a in zip(claims, A))
        psi = self.challenge(TAG_DZKP, self.net.session, stmt)
        zs = []
        for idx, c in enumerate(claims):
            zs.append(self.add(xpsh[idx], self.mul_const(c[2], psi)))
            zs.append(self.add(rpsh[idx], self.mul_const(rsh[idx], psi)))
        opened = self.open(zs)
        self.check_macs()
        for idx, c in enumerate(claims):
            if not cm_check(G, c[1], A[idx], psi, opened[2 * idx], opened[2 * idx + 1]):
                self.abort(f"knowledge-of-commitment proof failed for a value of party {c[0]}")
        self._count("dzkp_cm", len(claims))
        return rsh

    # -- comparisons -------------------------------------------------------

    def _sign_nonneg(self, w):
        return self.F.signed(w) >= 0

    def min(self, pairs):
        """Blind shuffle by a random bit, open w = R(u - v), keep v if w >= 0 else u."""
        self._alive()
        if not pairs:
            return []
        k = len(pairs)
        bits = self.rand_bits(k)
        ts = self.mul([(b, self.sub(y, x)) for b, (x, y) in zip(bits, pairs)])
        us = [self.add(x, t) for (x, _), t in zip(pairs, ts)]
        vs = [self.sub(self.add(x, y), u) for (x, y), u in zip(pairs, us)]
        Rs = self.rand_pos(k)
        ws = self.open(self.mul([(R, self.sub(u, v)) for R, u, v in zip(Rs, us, vs)]))
        out = [v if self._sign_nonneg(w) else u for w, u, v in zip(ws, us, vs)]
        self._count("min", k)
        return self._tamper("min", out)

    def _masked_diff(self, pairs):
        Rs = self.rand_pos(len(pairs))
        return self.open(self.mul([(R, self.sub(x, y)) for R, (x, y) in zip(Rs, pairs)]))

    def less(self, pairs):
        """Public bits [x < y] from the sign of w = R(x - y)."""
        self._alive()
        out = [int(self.F.signed(w) < 0) for w in self._masked_diff(pairs)]
        self._count("less", len(pairs))
        return out

    def eq(self, pairs):
        """Public bits [x == y] from w = R(x - y) == 0."""
        self._alive()
        out = [int(w == 0) for w in self._masked_diff(pairs)]
        self._count("eq", len(pairs))
        return out

    def leq_shared(self, pairs):
        """Shared bits [x <= y] with a public output of random sign.

        d = 2(x - y) - 1 is odd, never zero; w = R (1 - 2b) d is opened and the
        bit is [w < 0] xor b."""
        self._alive()
        if not pairs:
            return []
        k = len(pairs)
        bits = self.rand_bits(k)
        ds = [self.add_const(self.mul_const(self.sub(x, y), 2), -1) for x, y in pairs]
        bds = self.mul(list(zip(bits, ds)))
        ss = [self.sub(d, self.mul_const(bd, 2)) for d, bd in zip(ds, bds)]
        Rs = self.rand_pos(k)
        ws = self.open(self.mul(list(zip(Rs, ss))))
        out = []
        for w, b in zip(ws, bits):
            if self.F.signed(w) < 0:
                out.append(self.add_const(self.mul_const(b, -1), 1))
            else:
                out.append(b)
        self._count("leq_shared", k)
        return self._tamper("leq_shared", out)

    # -- test-harness helpers ----------------------------------------------

    def reconstruct(self, x):
        """White-box: (value, MAC) sums. Not part of the protocol."""
        return sum(x.v) % self.q, sum(x.m) % self.q

    def consumed(self):
        return [p.stock.used for p in self.parties]
