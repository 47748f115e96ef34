"""Scenario plumbing: synthetic traces, operator billing, ledger set-up and
end-to-end runs in plaintext or MPC mode."""

import csv
import hashlib
import json
import os
import random
import time
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .crypto.group import production_group
from .crypto.receipts import receipt_tree
from .ledger import Ledger, Wallet, pubkey_bytes, root_message
from .model import (COMP_SCALE, COST_SCALE, RATIO_SCALE, DemandTrace, cost_op, fmt_fixed,
                    load_plans, load_traces, make_bill, tariff_plans)
from .protocol import UserInput, plaintext_outcome, stage0_register
from .planner import EGALITARIAN

PROFILES = ("household", "pv", "mixed")
MODES = ("plaintext", "mpc")
DEFAULT_SEED = 33
INITIAL_TOKENS = 10 ** 6


def _seeded_rng(seed, role):
    return random.Random(f"{seed}:{role}")


def _seed_bytes(seed, role):
    return hashlib.sha256(f"groupbuy:{seed}:{role}".encode()).digest()


# -- traces -------------------------------------------------------------------

def gen_traces(users, days, profile="mixed", seed=DEFAULT_SEED):
    """Daily net demand (kWh, 2 decimals) per user.

    household: a per-user level in [4, 16] kWh/day with day-to-day noise.
    pv: household consumption minus rooftop generation; sunny days export.
    mixed: user 3 (index 2) has PV, the others are households."""
    if users < 1:
        raise ValueError("need at least one user")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    rng = _seeded_rng(seed, "traces")
    traces = []
    for i in range(users):
        pv = profile == "pv" or (profile == "mixed" and i == 2)
        level = rng.uniform(4, 16)
        cap = rng.uniform(0.8, 1.4) * level
        vals = []
        for _ in range(days):
            use = max(0.5, level * (1 + 0.2 * rng.gauss(0, 1)))
            if pv:
                use -= cap * rng.choice((0.2, 0.6, 1.0, 1.3))
            vals.append(f"{use:.2f}")
        if pv and days and all(v[0] != "-" for v in vals):
            k = rng.randrange(days)
            vals[k] = f"{-abs(float(vals[k])) - 0.5:.2f}"
        traces.append(DemandTrace.from_kwh(f"u{i + 1}", vals))
    return traces


# -- operator and ledger --------------------------------------------------------

def operator_key(seed):
    return Ed25519PrivateKey.from_private_bytes(_seed_bytes(seed, "operator"))


def bill_commit(bills, ledger, op_key, epoch_id, t0, t1, group=None, seed=None):
    """Commit each bill slot-by-slot, register the roots, return the receipts."""
    group = group or ledger.group
    receipts = {}
    for b in bills:
        rng = _seeded_rng(seed, f"receipt:{b.user_id}:{epoch_id}") if seed is not None else None
        rc = receipt_tree(b, epoch_id, t0, t1, group, rng)
        sig = op_key.sign(root_message(rc.root, epoch_id, b.user_id))
        ledger.register_receipt_root(b.user_id, epoch_id, rc.root, sig)
        receipts[b.user_id] = rc
    return receipts


def receipt_openings_json(receipt, group):
    return {"user_id": receipt.user_id, "epoch": receipt.epoch, "root": receipt.root.hex(),
            "slots": [{"t": op.t, "values": list(op.values), "blindings": [format(r, "x") for r in op.blindings],
                       "leaf": lf.encode(group).hex(), "proof": receipt.proof(k).to_json()}
                      for k, (lf, op) in enumerate(zip(receipt.leaves, receipt.openings))]}


def make_wallets(roster, ledger, seed, tokens=INITIAL_TOKENS):
    wallets = []
    for uid in roster:
        w = Wallet.from_seed(_seed_bytes(seed, f"wallet:{uid}"), ledger.group)
        ledger.open_account(w.pubkey)
        r = _seeded_rng(seed, f"mint:{uid}").randrange(ledger.group.q)
        amount = tokens * COMP_SCALE
        ledger.mint(w.address, amount, r)
        w.credit(amount, r)
        wallets.append(w)
    return wallets


# -- scenarios ------------------------------------------------------------------

@dataclass
class Scenario:
    plans: list
    traces: list
    scheme: str = EGALITARIAN
    epoch: tuple = None                 # (t0, t1); whole trace by default
    seed: int = DEFAULT_SEED
    mode: str = "plaintext"
    compensations: bool = True
    standalone: int = 0                 # plan ids
    group: int = 1
    randomness: str = "dealer"
    ledger_epoch: int = 0

    @property
    def roster(self):
        return [tr.user_id for tr in self.traces]

    def window(self):
        if self.epoch:
            return tuple(self.epoch)
        slots = self.traces[0].slots
        return slots[0], slots[-1]

    def plan(self, pid):
        for p in self.plans:
            if p.id == pid:
                return p
        raise ValueError(f"no plan with id {pid}")


def default_scenario(**kw):
    kw.setdefault("seed", DEFAULT_SEED)
    return Scenario(tariff_plans(), gen_traces(4, 14, "mixed", kw["seed"]), **kw)


def load_scenario(path, **overrides):
    """Scenario JSON: {"plans": file, "traces": file, "scheme", "epoch", "seed", ...}.
    Relative file names resolve against the scenario file's directory."""
    with open(path) as f:
        d = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    res = lambda p: p if os.path.isabs(p) else os.path.join(base, p)
    plans = load_plans(res(d["plans"])) if "plans" in d else tariff_plans()
    traces = load_traces(res(d["traces"]))
    kw = {k: d[k] for k in ("scheme", "epoch", "seed", "mode", "compensations", "standalone",
                             "group", "randomness", "ledger_epoch") if k in d}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(plans, traces, **kw)


@dataclass
class RunReport:
    roster: list
    days: list
    cost: dict                     # user -> accumulated cost series (cost units)
    standalone: dict               # user -> never-switch accumulated series
    verdict: str
    join_slot: int
    mode: str
    joiners: list
    theta: list
    phi: list
    sums: tuple
    abort: dict = None
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def decision(self):
        return {"verdict": self.verdict, "join_slot": self.join_slot, "mode": self.mode,
                "joiners": self.joiners, "theta": self.theta, "phi": self.phi}

    def ratios(self):
        return {u: self.cost[u][-1] / self.standalone[u][-1] if self.standalone[u][-1] else None
                for u in self.roster}

    def summary(self):
        """Deterministic summary document (no wall-clock values)."""
        fmt_c = lambda v: None if v is None else fmt_fixed(v, COMP_SCALE)
        return {
            "roster": self.roster,
            "verdict": self.verdict,
            "join_slot": self.join_slot,
            "mode": self.mode,
            "joiners": [self.roster[i] for i in self.joiners],
            "theta": {u: fmt_c(self.theta[i]) if self.theta else None for i, u in enumerate(self.roster)},
            "phi": {u: fmt_c(self.phi[i]) if self.phi else None for i, u in enumerate(self.roster)},
            "theta_raw": self.theta,
            "phi_raw": self.phi,
            "final_cost": {u: fmt_fixed(self.cost[u][-1], COST_SCALE) for u in self.roster},
            "standalone_cost": {u: fmt_fixed(self.standalone[u][-1], COST_SCALE) for u in self.roster},
            "cost_ratio": {u: None if r is None else round(r, 6) for u, r in self.ratios().items()},
            "abort": self.abort,
            "communication": self.stats.get("bytes", {}),
            "messages": self.stats.get("messages", {}),
        }


def cost_series(trace, standalone, group_plan, join_slot=None, theta=None):
    """Accumulated cost (cost units): standalone rates before the join slot,
    group rates from it on, and theta (compensation units) paid at the join."""
    acc, out = 0, []
    for t, a in trace.samples:
        if join_slot is not None and t >= join_slot:
            acc += cost_op(group_plan, t, a)
            if t == join_slot:
                acc += theta // RATIO_SCALE
        else:
            acc += cost_op(standalone, t, a)
        out.append(acc)
    return out


def run_scenario(sc, faults=(), keep_log=False, log_path=None):
    """Full pipeline; plaintext mode short-circuits all cryptography."""
    if sc.mode not in MODES:
        raise ValueError(f"unknown mode {sc.mode!r}")
    sa, gp = sc.plan(sc.standalone), sc.plan(sc.group)
    t0, t1 = sc.window()
    traces = [tr.window(t0, t1) if hasattr(tr, "window") else tr for tr in sc.traces]
    bills = [make_bill(tr, sa) for tr in traces]
    timings = {}
    start = time.perf_counter()
    if sc.mode == "plaintext":
        o, _ = plaintext_outcome(bills, gp, sc.scheme, sc.compensations, epoch=(t0, t1))
        stats, abort = {}, None
        timings["plaintext"] = time.perf_counter() - start
    else:
        group = production_group()
        op_key = operator_key(sc.seed)
        ledger = Ledger(pubkey_bytes(op_key), group)
        receipts = bill_commit(bills, ledger, op_key, sc.ledger_epoch, t0, t1, group, sc.seed)
        wallets = make_wallets(sc.roster, ledger, sc.seed)
        sess = stage0_register(sc.roster, gp, sc.scheme, (t0, t1), ledger, sc.ledger_epoch,
                               sc.compensations, sc.seed, faults, sc.randomness, group)
        inputs = [UserInput(u, b, receipts[u], w) for u, b, w in zip(sc.roster, bills, wallets)]
        o = sess.run(inputs)
        if log_path:
            sess.engine.net.write_log(log_path)
        stats = o.stats
        abort = {"stage": o.abort.stage, "reason": o.abort.reason,
                 "ledger": type(o.abort).__name__ == "LedgerRejected"} if o.abort else None
        timings.update(o.timings)
        timings["total"] = time.perf_counter() - start
        run_scenario.last_session = sess
    joined = o.verdict == "Join" and abort is None
    cost, alone = {}, {}
    for i, tr in enumerate(traces):
        j = joined and i in o.joiners
        cost[tr.user_id] = cost_series(tr, sa, gp, o.join_slot if j else None, o.theta[i] if j else None)
        alone[tr.user_id] = cost_series(tr, sa, gp)
    return RunReport(sc.roster, [t for t, _ in traces[0].samples], cost, alone,
                     o.verdict, o.join_slot, o.mode, list(o.joiners), o.theta, o.phi, o.sums,
                     abort, stats, timings)


def write_report(report, out_dir):
    """summary.json, cost.csv and timings.json (the only non-deterministic file)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(report.summary(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "cost.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["user_id", "day", "accumulated_cost", "standalone_cost"])
        for u in report.roster:
            for d, c, s in zip(report.days, report.cost[u], report.standalone[u]):
                w.writerow([u, d, fmt_fixed(c, COST_SCALE), fmt_fixed(s, COST_SCALE)])
    with open(os.path.join(out_dir, "timings.json"), "w") as f:
        json.dump(report.timings, f, indent=2, sort_keys=True)
        f.write("\n")
