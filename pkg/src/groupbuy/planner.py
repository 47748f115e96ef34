"""Plaintext reference: offline optimum, WFA, the group decision and compensations.

Costs are ints in cost units (model.COST_SCALE); compensations theta/phi are
ints in compensation units (model.COMP_SCALE).
"""

import math
from dataclasses import dataclass, field

from .model import RATIO_SCALE, HOURS, cost_op, cost_sw, fee_to_cost

INF = math.inf

EGALITARIAN = "egalitarian"
PROPORTIONAL = "proportional"
SCHEMES = (EGALITARIAN, PROPORTIONAL)


@dataclass
class OptTable:
    """opt[t][x]: offline optimum over slots 1..t ending in plan x (t = 0..T)."""
    opt: list
    plans: list

    def __getitem__(self, t):
        return self.opt[t]

    def __len__(self):
        return len(self.opt)

    @property
    def final(self):
        return min(self.opt[-1])


def _tenure_cap(plans):
    return max(p.contract_duration for p in plans) + 1


def offline_opt(trace, plans, initial_plan=None, initial_tenure=0, slot_hours=HOURS):
    """Forward DP over (plan, tenure) states, then backward extraction.

    With ``initial_plan=None`` every plan starts at cost 0 (Opt^0 = 0). With an
    initial plan, entering another plan at time 0 pays the switch from it.
    Returns (OptTable, selection list)."""
    n = len(plans)
    cap = _tenure_cap(plans)
    ten0 = min(initial_tenure, cap)
    # layer: {(x, tenure): cost}; back: {(x, tenure): predecessor state}
    layer = {}
    if initial_plan is None:
        for x in range(n):
            layer[(x, ten0)] = 0
    else:
        x0 = plans.index(initial_plan)
        for x in range(n):
            if x == x0:
                layer[(x, ten0)] = 0
            else:
                layer[(x, 0)] = cost_sw(plans[x0], plans[x], initial_tenure)
    table = [_project(layer, n)]
    backs = []
    for t, a in trace.samples:
        ops = [cost_op(p, t, a, slot_hours) for p in plans]
        nxt, back = {}, {}
        for (x, ten), c in sorted(layer.items()):
            for y in range(n):
                if y == x:
                    key, cost = (y, min(ten + 1, cap)), c + ops[y]
                else:
                    key, cost = (y, 1), c + ops[y] + cost_sw(plans[x], plans[y], ten)
                if cost < nxt.get(key, INF):
                    nxt[key] = cost
                    back[key] = (x, ten)
        layer = nxt
        backs.append(back)
        table.append(_project(layer, n))
    # backward extraction from the cheapest final state, lowest plan index on ties
    state = min(layer, key=lambda k: (layer[k], k[0], k[1]))
    seq = []
    for back in reversed(backs):
        seq.append(plans[state[0]])
        state = back[state]
    seq.reverse()
    return OptTable(table, list(plans)), seq


def _project(layer, n):
    row = [INF] * n
    for (x, _), c in layer.items():
        row[x] = min(row[x], c)
    return row


def wfa_candidates(opt_table, t, op_costs):
    """Plans satisfying the no-switch constraint Opt^t[x] = Opt^{t-1}[x] + op(x)."""
    return [x for x in range(len(op_costs))
            if opt_table[t][x] == opt_table[t - 1][x] + op_costs[x]]


def wfa_step(opt_table, prev, t, trace, plans, tenure=0, slot_hours=HOURS):
    """WFA selection at slot index t (1-based within the trace)."""
    slot, a = trace.samples[t - 1]
    ops = [cost_op(p, slot, a, slot_hours) for p in plans]
    cands = wfa_candidates(opt_table, t, ops)
    if not cands:
        raise AssertionError("no plan satisfies the WFA constraint")
    best = min(cands, key=lambda x: (opt_table[t][x] + cost_sw(prev, plans[x], tenure), x))
    return plans[best]


def run_wfa(trace, plans, initial_plan, initial_tenure=0, pinned=False, slot_hours=HOURS):
    """Online WFA from ``initial_plan``. ``pinned`` builds the work function
    from the same start state (standard MTS); otherwise Opt^0 = 0 for all plans.
    Returns (selections, total cost)."""
    table, _ = offline_opt(trace, plans, initial_plan if pinned else None,
                           initial_tenure, slot_hours)
    prev, tenure = initial_plan, initial_tenure
    seq, total = [], 0
    for k, (t, a) in enumerate(trace.samples, start=1):
        x = wfa_step(table, prev, k, trace, plans, tenure, slot_hours)
        if x != prev:
            total += cost_sw(prev, x, tenure)
            tenure = 1
        else:
            tenure += 1
        total += cost_op(x, t, a, slot_hours)
        seq.append(x)
        prev = x
    return seq, total


def competitive_ratio(traces, plans, initial_plan=None, slot_hours=HOURS):
    """max over traces of WFA cost / offline optimum, both from the same start.

    Instances with a non-positive optimum have no defined ratio and are
    skipped; returns None when no instance has one."""
    initial_plan = initial_plan or plans[0]
    worst = None
    for tr in traces:
        table, _ = offline_opt(tr, plans, initial_plan, 0, slot_hours)
        opt = table.final
        if opt <= 0:
            continue
        _, online = run_wfa(tr, plans, initial_plan, 0, pinned=True, slot_hours=slot_hours)
        r = online / opt
        worst = r if worst is None else max(worst, r)
    return worst


# -- compensation schemes ---------------------------------------------------

def _check_feasible(C_alt, C_g, opt_g):
    if not (len(C_alt) == len(C_g) == len(opt_g)) or not C_alt:
        raise ValueError("per-user vectors must be non-empty and aligned")
    if not sum(C_g) < sum(C_alt):
        raise ValueError("group feasibility violated: sum C_g >= sum C_alt")


def egalitarian_theta(C_alt, C_g, opt_g):
    """theta_i = C_alt_i + (sum C_g - sum C_alt)/n - opt_g_i, in compensation units.

    The per-capita term is floored; the remainder goes to user 0."""
    _check_feasible(C_alt, C_g, opt_g)
    return egalitarian_from_sums(C_alt, opt_g, sum(C_alt), sum(C_g))


def egalitarian_from_sums(C_alt, opt_g, sum_alt, sum_g):
    n = len(C_alt)
    share, rem = divmod((sum_g - sum_alt) * RATIO_SCALE, n)
    theta = [c * RATIO_SCALE + share - o * RATIO_SCALE for c, o in zip(C_alt, opt_g)]
    theta[0] += rem
    return theta


def proportional_ratio(sum_alt, sum_g):
    """floor(sum_g / sum_alt) at RATIO_SCALE and the residue it leaves."""
    if sum_alt <= 0:
        raise ValueError("proportional sharing needs a positive alternative cost")
    ratio = sum_g * RATIO_SCALE // sum_alt
    return ratio, sum_g * RATIO_SCALE - sum_alt * ratio


def proportional_theta(C_alt, C_g, opt_g):
    """theta_i = C_alt_i * (sum C_g / sum C_alt) - opt_g_i, in compensation units.

    The ratio is floored at RATIO_SCALE; the residue goes to user 0."""
    _check_feasible(C_alt, C_g, opt_g)
    return proportional_from_sums(C_alt, opt_g, sum(C_alt), sum(C_g))


def proportional_from_sums(C_alt, opt_g, sum_alt, sum_g):
    ratio, rem = proportional_ratio(sum_alt, sum_g)
    theta = [c * ratio - o * RATIO_SCALE for c, o in zip(C_alt, opt_g)]
    theta[0] += rem
    return theta


def compensate(scheme, C_alt, C_g, opt_g):
    if scheme == EGALITARIAN:
        return egalitarian_theta(C_alt, C_g, opt_g)
    if scheme == PROPORTIONAL:
        return proportional_theta(C_alt, C_g, opt_g)
    raise ValueError(f"unknown scheme {scheme!r}")


# -- group decision (two-state DP per user) ---------------------------------

@dataclass
class GroupDecision:
    verdict: str                       # "Join" | "Stay"
    join_slot: int = None
    mode: str = None                   # "compensated" | "uncompensated"
    joiners: list = field(default_factory=list)
    theta: list = None                 # compensation units, per user (None if not joining)
    phi: list = None
    C_alt: list = None                 # cost units at the decision slot
    C_g: list = None
    opt_i: list = None                 # carried DP state after the last processed slot
    opt_g: list = None
    history: list = field(default_factory=list)

    @property
    def joined(self):
        return self.verdict == "Join"


def group_decide(bills, group_plan, scheme=EGALITARIAN, compensations=True,
                 carried=None, t0=None, t1=None, slot_hours=HOURS):
    """Group decision over per-user bill entries for slots t0..t1.

    ``bills`` is a list of BillRecord (one per user, same slots); ``carried``
    is (opt_i, opt_g) from a previous Stay epoch, zeros otherwise.

    Per slot and user:
        Opt_g <- min(Opt_g + kg, Opt_i + kg + c(g) + nu)
        Opt_i <- min(Opt_i + kappa, Opt_g + kappa + mu + d(g))
    then the uncompensated path (count of users whose group path did not
    switch and whose C_g <= C_alt reaches N(g)) is tried before the
    compensated one (sum C_g < sum C_alt and no user's Opt_g switched).
    Proportional sharing also needs sum C_alt > 0 for its ratio."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    n = len(bills)
    if n < group_plan.min_signups:
        raise ValueError(f"{n} users below the group threshold {group_plan.min_signups}")
    first = [e.t for e in bills[0].entries]
    t0 = first[0] if t0 is None else t0
    t1 = first[-1] if t1 is None else t1
    rows = [b.window(t0, t1) for b in bills]
    opt_i, opt_g = ([0] * n, [0] * n) if carried is None else (list(carried[0]), list(carried[1]))
    cg = fee_to_cost(group_plan.connection_fee)
    dg = fee_to_cost(group_plan.disconnection_fee)
    hist = []
    for k in range(t1 - t0 + 1):
        t = t0 + k
        new_i, new_g, eq = [], [], []
        for i in range(n):
            e = rows[i][k]
            kg = cost_op(group_plan, t, e.a, slot_hours)
            A = opt_g[i] + kg
            B = opt_i[i] + kg + cg + e.nu
            new_g.append(min(A, B))
            eq.append(A <= B)
            new_i.append(min(opt_i[i] + e.kappa, opt_g[i] + e.kappa + e.mu + dg))
        opt_i, opt_g = new_i, new_g
        C_alt = list(opt_i)
        C_g = [opt_g[i] + cg + rows[i][k].nu for i in range(n)]
        hist.append({"t": t, "sum_alt": sum(C_alt), "sum_g": sum(C_g), "all_eq": all(eq)})
        pref = [i for i in range(n) if eq[i] and C_g[i] <= C_alt[i]]
        if len(pref) >= group_plan.min_signups:
            theta = [(cg + rows[i][k].nu) * RATIO_SCALE if i in pref else None for i in range(n)]
            phi = [0 if i in pref else None for i in range(n)]
            return GroupDecision("Join", t, "uncompensated", pref, theta, phi, C_alt, C_g,
                                 opt_i, opt_g, hist)
        feasible = sum(C_g) < sum(C_alt) and (scheme != PROPORTIONAL or sum(C_alt) > 0)
        if compensations and feasible and all(eq):
            theta = compensate(scheme, C_alt, C_g, opt_g)
            phi = [theta[i] - (cg + rows[i][k].nu) * RATIO_SCALE for i in range(n)]
            return GroupDecision("Join", t, "compensated", list(range(n)), theta, phi,
                                 C_alt, C_g, opt_i, opt_g, hist)
    return GroupDecision("Stay", opt_i=opt_i, opt_g=opt_g, history=hist)
