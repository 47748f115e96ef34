"""Session orchestration: registration, validated bill sharing, the private
group decision, compensations and the confidential payment batch.

Users are the MPC parties (party i = roster[i]). Anything a user computes
from its own private data is done in plain Python on that user's objects;
everything involving another user's data goes through the engine.
"""

import hashlib
import itertools
import json
import os
import random
import struct
import time
from dataclasses import dataclass, field

from .crypto.group import production_group
from .crypto.merkle import MerkleProof
from .crypto.receipts import receipt_tree
from .ledger import SINK, Entry, MultiTransaction
from .model import HOURS, RATIO_SCALE, fee_to_cost
from .mpc.dealer import Counts, Dealer
from .mpc.engine import Engine, ProtocolAbort
from .mpc.network import Network
from .planner import EGALITARIAN, PROPORTIONAL, SCHEMES, group_decide, proportional_ratio
from .zkp import SumProof, sum_challenge, sum_check

STAGES = ("Init", "Sharing", "Deciding", "Compensating", "Paying", "Done", "Aborted")

_registrations = itertools.count()


class LedgerRejected(ProtocolAbort):
    """The ledger refused the payment batch."""


@dataclass
class SessionState:
    session_id: bytes
    roster: list
    group_plan: object
    scheme: str
    epoch: tuple                  # (t0, t1)
    ledger_epoch: int = 0
    stage: str = "Init"
    carried: tuple = None         # (<Opt_i>, <Opt_g>) lists from a Stay

    def advance(self, stage):
        if self.stage == "Aborted":
            raise ProtocolAbort(stage, "session already aborted")
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ValueError(f"stage cannot move back from {self.stage} to {stage}")
        self.stage = stage


@dataclass
class UserInput:
    """What a user brings to a session: its bill, its receipt openings and
    (for the payment stage) its wallet."""
    user_id: str
    bill: object
    receipt: object
    wallet: object = None


@dataclass
class PrivateBillInput:
    user_id: str
    rows: list                    # per slot: (<a>, <beta>, <kappa>, <mu>, <nu>)


@dataclass
class Outcome:
    verdict: str = None
    join_slot: int = None
    mode: str = None
    joiners: list = field(default_factory=list)
    theta: list = None            # per user, known only to that user (None if not joining)
    phi: list = None
    sums: tuple = None            # (sum C_alt, sum C_g) revealed for compensations
    accepted: bool = None
    abort: object = None
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def aborted(self):
        return self.abort is not None

    def decision(self):
        return {"verdict": self.verdict, "join_slot": self.join_slot, "mode": self.mode,
                "joiners": list(self.joiners), "theta": self.theta, "phi": self.phi}


def preprocessing_counts(n, slots, randomness="dealer"):
    """Upper bound on the preprocessing one epoch consumes."""
    per_user = 9 * n + 3
    counts = Counts(triples=n * slots + per_user * slots + 4,
                    bits=4 * n * slots, positives=(4 * n + 3) * slots)
    masks = 20 * slots + 8
    if randomness == "contributed":
        masks += 4 * (counts.bits + counts.positives)
        counts.triples += 3 * (n - 1) * counts.bits
    counts.masks = {i: masks for i in range(n)}
    return counts


def stage0_register(users, group_plan, scheme=EGALITARIAN, epoch=(1, 14), ledger=None,
                    ledger_epoch=0, compensations=True, seed=None, faults=(),
                    randomness="dealer", group=None, slot_hours=HOURS):
    """Open a session for ``users`` (ids, roster order = party order)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if len(users) < group_plan.min_signups:
        raise ValueError(f"roster of {len(users)} is below the group threshold {group_plan.min_signups}")
    if len(set(users)) != len(users):
        raise ValueError("duplicate user in roster")
    t0, t1 = epoch
    if t1 < t0:
        raise ValueError("empty epoch")
    nonce = os.urandom(16) if seed is None else struct.pack(">Q", next(_registrations))
    sid = hashlib.sha256(b"groupbuy/session" + str(seed).encode() + nonce +
                         json.dumps(list(users)).encode()).digest()[:16]
    state = SessionState(sid, list(users), group_plan, scheme, (t0, t1), ledger_epoch)
    return Session(state, ledger=ledger, compensations=compensations, seed=seed, faults=faults,
                   randomness=randomness, group=group, slot_hours=slot_hours)


class Session:
    def __init__(self, state, ledger=None, compensations=True, seed=None, faults=(),
                 randomness="dealer", group=None, slot_hours=HOURS, engine=None, dealer=None):
        self.state = state
        self.ledger = ledger
        self.compensations = compensations
        self.seed = seed
        self.G = group or (ledger.group if ledger else production_group())
        self.F = self.G.field
        self.slot_hours = slot_hours
        self.faults = list(faults)
        n = len(state.roster)
        slots = state.epoch[1] - state.epoch[0] + 1
        rng = random.Random(f"{seed}:dealer:{state.session_id.hex()}") if seed is not None \
            else random.SystemRandom()
        self.dealer = dealer or Dealer(self.F, n, rng)
        stocks = self.dealer.deal(preprocessing_counts(n, slots, randomness))
        if engine is None:
            net = Network(n, state.session_id)
            engine = Engine(self.F, stocks, net=net, seed=seed, group=self.G,
                            faults=self.faults, randomness=randomness)
        else:
            for p, st in zip(engine.parties, stocks):
                _merge_stock(p.stock, st)
        self.engine = engine
        self.rng = [random.Random(f"{seed}:user:{i}") if seed is not None else random.SystemRandom()
                    for i in range(n)]
        self.outcome = Outcome()
        self._join = None

    @property
    def n(self):
        return len(self.state.roster)

    @property
    def context(self):
        return self.state.session_id + struct.pack(">q", self.state.ledger_epoch)

    def _fault(self, point, party, value):
        return self.engine._fault(point, party, value)

    def _run(self, stage, label, fn, *args):
        self.state.advance(stage)
        self.engine.set_stage(label)
        start = time.perf_counter()
        try:
            return fn(*args)
        except ProtocolAbort as e:
            self.state.stage = "Aborted"
            self.outcome.abort = e
            raise
        finally:
            self.outcome.timings[label] = time.perf_counter() - start

    # -- Stage 1 ------------------------------------------------------------

    def stage1_share_and_validate(self, inputs):
        return self._run("Sharing", "stage1", self._stage1, inputs)

    def _stage1(self, inputs):
        eng, G, F = self.engine, self.G, self.F
        t0, t1 = self.state.epoch
        if [u.user_id for u in inputs] != self.state.roster:
            raise ValueError("inputs must follow the roster order")
        claims, shared = [], []
        for i, u in enumerate(inputs):
            rows = u.bill.window(t0, t1)
            receipt = u.receipt
            if self._fault("proto.stale_root", i, 0):
                # a well-formed receipt that the operator never registered
                receipt = receipt_tree(u.bill, receipt.epoch, t0, t1, G, self.rng[i])
            index = {lf.t: k for k, lf in enumerate(receipt.leaves)}
            msgs, leaves = [], []
            for e in rows:
                k = index.get(e.t)
                if k is None:
                    eng.abort(f"user {u.user_id} has no receipt leaf for slot {e.t}")
                leaf = receipt.leaves[k]
                leaves.append((leaf, receipt.openings[k]))
                msgs.append({"leaf": leaf.encode(G).hex(), "proof": receipt.proof(k).to_json()})
            got = json.loads(eng._broadcast(i, "proof", json.dumps(msgs).encode()))
            for m in got:
                leaf = bytes.fromhex(m["leaf"])
                try:
                    ok = self.ledger.verify_receipt_membership(
                        leaf, MerkleProof.from_json(m["proof"]), u.user_id, self.state.ledger_epoch)
                except Exception as exc:
                    eng.abort(f"receipt of user {u.user_id} not verifiable: {exc}")
                if not ok:
                    eng.abort(f"receipt leaf of user {u.user_id} is not under its registered root")
            values = []
            for _, op in leaves:
                values += [self._fault("proto.misreport", i, v) for v in op.values]
            xs = eng.input(i, [F.encode(v) for v in values])
            for k, (leaf, op) in enumerate(leaves):
                for j in range(5):
                    claims.append((i, leaf.commitments[j], xs[5 * k + j],
                                   F.encode(op.values[j]), op.blindings[j]))
            shared.append(PrivateBillInput(u.user_id, [tuple(xs[5 * k:5 * k + 5]) for k in range(len(rows))]))
        eng.dzkp_cm(claims)
        return shared

    # -- Stage 2 ------------------------------------------------------------

    def stage2_decide(self, inputs):
        return self._run("Deciding", "stage2", self._stage2, inputs)

    def _stage2(self, inputs):
        eng, g = self.engine, self.state.group_plan
        n = self.n
        t0, t1 = self.state.epoch
        cg = fee_to_cost(g.connection_fee)
        dg = fee_to_cost(g.disconnection_fee)
        if self.state.carried is not None:
            opt_i, opt_g = list(self.state.carried[0]), list(self.state.carried[1])
        else:
            opt_i = [eng.const(0) for _ in range(n)]
            opt_g = [eng.const(0) for _ in range(n)]
        T = t1 - t0 + 1
        # a * beta for every user and slot, in one batch
        abs_ = eng.mul([(inputs[i].rows[k][0], inputs[i].rows[k][1]) for k in range(T) for i in range(n)])
        for k in range(T):
            t = t0 + k
            pp, pm = g.import_rate(t, self.slot_hours), g.feedin(t)
            A, B, I1, I2, nus = [], [], [], [], []
            for i in range(n):
                a, _, kappa, mu, nu = inputs[i].rows[k]
                kg = eng.lin([(pm, a), (pp - pm, abs_[k * n + i])])
                A.append(eng.add(opt_g[i], kg))
                B.append(eng.add_const(eng.lin([(1, opt_i[i]), (1, kg), (1, nu)]), cg))
                I1.append(eng.add(opt_i[i], kappa))
                I2.append(eng.add_const(eng.lin([(1, opt_g[i]), (1, kappa), (1, mu)]), dg))
                nus.append(nu)
            mins = eng.min(list(zip(A, B)) + list(zip(I1, I2)))
            opt_g, opt_i = mins[:n], mins[n:]
            C_alt = opt_i
            C_g = [eng.add_const(eng.add(opt_g[i], nus[i]), cg) for i in range(n)]
            bits = eng.leq_shared(list(zip(A, B)) + list(zip(C_g, C_alt)))
            pref = eng.mul(list(zip(bits[:n], bits[n:])))
            (m,) = eng.open([eng.total(pref)])
            eng.check_macs()
            if m >= g.min_signups:
                mine = [eng.open_to(i, [pref[i]])[0] for i in range(n)]
                eng.check_macs()
                joiners = [i for i in range(n) if mine[i] == 1]
                return self._joined(t, "uncompensated", joiners, C_alt, C_g, opt_g, nus)
            if not self.compensations:
                continue
            sum_alt, sum_g = eng.total(C_alt), eng.total(C_g)
            if not eng.less([(sum_g, sum_alt)])[0]:
                continue
            if not eng.eq([(eng.total(opt_g), eng.total(A))])[0]:
                continue
            if self.state.scheme == PROPORTIONAL and not eng.less([(eng.const(0), sum_alt)])[0]:
                continue
            eng.check_macs()
            return self._joined(t, "compensated", list(range(n)), C_alt, C_g, opt_g, nus)
        eng.verify_unopened(opt_i + opt_g)
        self.state.carried = (opt_i, opt_g)
        self.outcome.verdict = "Stay"
        return "Stay"

    def _joined(self, t, mode, joiners, C_alt, C_g, opt_g, nus):
        self._join = {"t": t, "mode": mode, "joiners": joiners, "C_alt": C_alt,
                      "C_g": C_g, "opt_g": opt_g, "nu": nus}
        o = self.outcome
        o.verdict, o.join_slot, o.mode, o.joiners = "Join", t, mode, joiners
        return "Join"

    # -- Stage 3 ------------------------------------------------------------

    def stage3_compensate(self, inputs, bills):
        return self._run("Compensating", "stage3", self._stage3, inputs, bills)

    def _stage3(self, inputs, bills):
        eng, F, n = self.engine, self.F, self.n
        j = self._join
        if j is None:
            raise ValueError("compensations need a Join verdict")
        cg = fee_to_cost(self.state.group_plan.connection_fee)
        # user i knows its own nu at the join slot
        my_nu = [bills[i].window(j["t"], j["t"])[0].nu for i in range(n)]
        theta, phi = [None] * n, [None] * n
        if j["mode"] == "uncompensated":
            for i in j["joiners"]:
                theta[i] = (cg + my_nu[i]) * RATIO_SCALE
                phi[i] = 0
            self._phi_shares = None
        else:
            sum_alt, sum_g = (F.signed(v) for v in eng.open([eng.total(j["C_alt"]), eng.total(j["C_g"])]))
            eng.check_macs()
            self.outcome.sums = (sum_alt, sum_g)
            if self.state.scheme == EGALITARIAN:
                share, rem = divmod((sum_g - sum_alt) * RATIO_SCALE, n)
                th = [eng.add_const(eng.lin([(RATIO_SCALE, j["C_alt"][i]), (-RATIO_SCALE, j["opt_g"][i])]),
                                    share + (rem if i == 0 else 0)) for i in range(n)]
            else:
                ratio, rem = proportional_ratio(sum_alt, sum_g)
                th = [eng.add_const(eng.lin([(ratio, j["C_alt"][i]), (-RATIO_SCALE, j["opt_g"][i])]),
                                    rem if i == 0 else 0) for i in range(n)]
            ph = [eng.add_const(eng.sub(th[i], eng.mul_const(j["nu"][i], RATIO_SCALE)), -cg * RATIO_SCALE)
                  for i in range(n)]
            ph = eng._tamper("phi", ph)
            for i in range(n):
                phi[i] = F.signed(eng.open_to(i, [ph[i]])[0])
                theta[i] = phi[i] + (cg + my_nu[i]) * RATIO_SCALE
            eng.check_macs()
            self._phi_shares = ph
        self.outcome.theta, self.outcome.phi = theta, phi
        return theta, phi

    # -- Stage 4 ------------------------------------------------------------

    def stage4_pay(self, inputs):
        return self._run("Paying", "stage4", self._stage4, inputs)

    def _stage4(self, inputs):
        eng, G, F = self.engine, self.G, self.F
        payers = self.outcome.joiners
        phi = self.outcome.phi
        ctx = self.context
        blinds, cms = {}, {}
        for i in payers:
            blinds[i] = F.random(self.rng[i])
            shown = self._fault("proto.payment_cm", i, F.encode(phi[i]))
            C = G.commit(shown, blinds[i])
            cms[i] = G.elem_from_bytes(eng._broadcast(i, "announce", G.elem_bytes(C)))
        # link each announced commitment to the shared compensation
        r_sh = eng.dzkp_cm([(i, cms[i], self._phi_shares[i], F.encode(phi[i]), blinds[i]) for i in payers])
        # distributed sum proof: C' = prod h^{r'_j}, z = sum r'_j + beta * sum r_i
        rps = [F.random(self.rng[j]) for j in range(self.n)]
        rp_sh, Cp = [], 1
        for j in range(self.n):
            rp_sh += eng.input(j, [rps[j]])
            Cp = Cp * G.elem_from_bytes(eng._broadcast(j, "announce", G.elem_bytes(G.hexp(rps[j])))) % G.P
        cm_list = [cms[i] for i in payers]
        beta = sum_challenge(G, cm_list, 0, Cp, ctx)
        (z,) = eng.open([eng.add(eng.total(rp_sh), eng.mul_const(eng.total(r_sh), beta))])
        eng.check_macs()
        if not sum_check(G, cm_list, 0, Cp, beta, z):
            eng.abort("payment commitments do not sum to zero")
        entries = []
        for i in payers:
            w = inputs[i].wallet
            entries.append(Entry(w.address, SINK, cms[i], w.payment_proof(phi[i], blinds[i], ctx, self.rng[i])))
        mtx = MultiTransaction(ctx, entries, SumProof(Cp, beta, z))
        for i in payers:
            sig = eng._broadcast(i, "signature", inputs[i].wallet.sign(mtx))
            mtx.signatures[inputs[i].wallet.address] = sig
        ok, reason = self.ledger.submit_multi_transaction(mtx)
        self.outcome.accepted = ok
        self.mtx = mtx
        if not ok:
            err = LedgerRejected(self.engine.stage, f"ledger rejected the payment batch ({reason})")
            self.engine.aborted = err
            raise err
        for i in payers:
            inputs[i].wallet.credit(-phi[i], -blinds[i])
        return mtx

    # -- driver -------------------------------------------------------------

    def run(self, inputs):
        """Stages 1-4; returns the Outcome (aborts are recorded, not raised)."""
        o = self.outcome
        try:
            shared = self.stage1_share_and_validate(inputs)
            if self.stage2_decide(shared) == "Join":
                self.stage3_compensate(shared, [u.bill for u in inputs])
                if o.mode == "compensated" and self.ledger is not None and all(u.wallet for u in inputs):
                    self.stage4_pay(inputs)
            self.state.advance("Done")
        except ProtocolAbort as e:
            self.state.stage = "Aborted"
            o.abort = e
        o.stats = self.engine.net.stats()
        o.stats["preprocessing"] = [u.to_json() for u in self.engine.consumed()]
        o.stats["operations"] = dict(self.engine.op_counts)
        return o

    def next_epoch(self, epoch, ledger_epoch):
        """Continue after a Stay with the carried DP state (same engine and key)."""
        if self.state.stage != "Done" or self.outcome.verdict != "Stay":
            raise ValueError("only a completed Stay session can be continued")
        st = SessionState(self.state.session_id, self.state.roster, self.state.group_plan,
                          self.state.scheme, tuple(epoch), ledger_epoch, carried=self.state.carried)
        return Session(st, ledger=self.ledger, compensations=self.compensations, seed=self.seed,
                       faults=self.faults, randomness=self.engine.randomness, group=self.G,
                       slot_hours=self.slot_hours, engine=self.engine, dealer=self.dealer)


def _merge_stock(stock, extra):
    stock.triples.extend(extra.triples)
    for o, dq in extra.masks.items():
        stock.masks.setdefault(o, type(dq)()).extend(dq)
    stock.mask_values.extend(extra.mask_values)
    stock.bits.extend(extra.bits)
    stock.positives.extend(extra.positives)


def plaintext_outcome(bills, group_plan, scheme=EGALITARIAN, compensations=True, carried=None,
                      epoch=None, slot_hours=HOURS):
    """Oracle outcome with the same fields as an MPC run."""
    t0, t1 = epoch if epoch else (None, None)
    d = group_decide(bills, group_plan, scheme, compensations, carried, t0, t1, slot_hours)
    o = Outcome(verdict=d.verdict)
    if d.joined:
        o.join_slot, o.mode, o.joiners = d.join_slot, d.mode, list(d.joiners)
        o.theta, o.phi = d.theta, d.phi
        if d.mode == "compensated":
            o.sums = (sum(d.C_alt), sum(d.C_g))
    return o, d
