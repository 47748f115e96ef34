"""Energy plans, demand traces, bills and the plaintext cost formulas.

All quantities are fixed-point integers:

* kWh, rates and fees at scale ``S`` (10^4),
* costs at ``COST_SCALE`` (S^2), since cost = rate * demand,
* compensations and token amounts at ``COMP_SCALE`` (COST_SCALE * RATIO_SCALE),
  which leaves room for the proportional ratio without breaking exact sums.
"""

import csv
import json
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP

S = 10**4
COST_SCALE = S * S
RATIO_SCALE = 10**8
COMP_SCALE = COST_SCALE * RATIO_SCALE

# |demand| bound in kWh; keeps per-epoch costs far inside the signed MPC window
MAX_DEMAND_KWH = 10**6
MAX_DEMAND = MAX_DEMAND_KWH * S

HOURS = 24


def to_fixed(value, scale=S):
    """Exact decimal -> fixed-point int. Rejects values that need rounding."""
    d = Decimal(str(value)) * scale
    if d != d.to_integral_value():
        raise ValueError(f"{value!r} has more precision than scale {scale}")
    return int(d)


def from_fixed(value, scale=S):
    return Decimal(value) / scale


def fmt_fixed(value, scale=S, places=4):
    q = Decimal(1).scaleb(-places)
    return str((Decimal(value) / scale).quantize(q, rounding=ROUND_HALF_UP))


def fee_to_cost(fee):
    """Fee at scale S -> cost units."""
    return fee * S


def _hours_in(window):
    lo, hi = window
    if lo <= hi:
        return set(range(lo, hi + 1))
    return set(range(lo, HOURS)) | set(range(0, hi + 1))


@dataclass(frozen=True)
class EnergyPlan:
    """Tariff tuple <p+, p-, c, d, T> plus the sign-up threshold.

    Rates and fees are ints at scale S. Hours inside ``peak_window`` use the peak
    rate, hours inside ``offpeak_window`` the off-peak rate; shoulder hours that
    fall in neither are billed at the peak rate.
    """
    id: int
    peak_rate: int
    offpeak_rate: int
    feedin_rate: int = 0
    connection_fee: int = 0
    disconnection_fee: int = 0
    contract_duration: int = 0
    min_signups: int = 1
    peak_window: tuple = (8, 19)
    offpeak_window: tuple = (21, 6)
    name: str = ""
    # slot -> (import rate, feed-in rate), both at scale S
    rate_overrides: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        for f in ("peak_rate", "offpeak_rate", "feedin_rate", "connection_fee",
                  "disconnection_fee", "contract_duration"):
            if getattr(self, f) < 0:
                raise ValueError(f"plan {self.id}: {f} must be >= 0")
        if self.min_signups < 1:
            raise ValueError(f"plan {self.id}: min_signups must be >= 1")
        for w in (self.peak_window, self.offpeak_window):
            if len(w) != 2 or not all(0 <= h < HOURS for h in w):
                raise ValueError(f"plan {self.id}: bad hour window {w}")
        if not self.peak_window[0] <= self.peak_window[1]:
            raise ValueError(f"plan {self.id}: peak window must not wrap midnight")

    @property
    def is_group(self):
        return self.min_signups > 1

    def hour_rate(self, hour):
        hour %= HOURS
        if hour in _hours_in(self.offpeak_window) and hour not in _hours_in(self.peak_window):
            return self.offpeak_rate
        return self.peak_rate

    def import_rate(self, t, slot_hours=HOURS):
        """p+^t at scale S. Slots are 1-based; multi-hour slots use the
        hour-weighted average rounded half-up to scale S."""
        if t in self.rate_overrides:
            return self.rate_overrides[t][0]
        start = (t - 1) * slot_hours
        total = sum(self.hour_rate(start + h) for h in range(slot_hours))
        return (2 * total + slot_hours) // (2 * slot_hours)

    def feedin(self, t):
        if t in self.rate_overrides:
            return self.rate_overrides[t][1]
        return self.feedin_rate

    def to_json(self):
        d = {
            "id": self.id,
            "name": self.name,
            "peak_rate": fmt_fixed(self.peak_rate),
            "offpeak_rate": fmt_fixed(self.offpeak_rate),
            "feedin_rate": fmt_fixed(self.feedin_rate),
            "connection_fee": fmt_fixed(self.connection_fee),
            "disconnection_fee": fmt_fixed(self.disconnection_fee),
            "contract_duration": self.contract_duration,
            "min_signups": self.min_signups,
            "peak_window": list(self.peak_window),
            "offpeak_window": list(self.offpeak_window),
        }
        if self.rate_overrides:
            d["rate_overrides"] = {str(t): [fmt_fixed(a), fmt_fixed(b)]
                                   for t, (a, b) in sorted(self.rate_overrides.items())}
        return d

    @classmethod
    def from_json(cls, d):
        overrides = {int(t): (to_fixed(a), to_fixed(b))
                     for t, (a, b) in d.get("rate_overrides", {}).items()}
        return cls(
            id=int(d["id"]),
            name=d.get("name", ""),
            peak_rate=to_fixed(d["peak_rate"]),
            offpeak_rate=to_fixed(d["offpeak_rate"]),
            feedin_rate=to_fixed(d.get("feedin_rate", 0)),
            connection_fee=to_fixed(d.get("connection_fee", 0)),
            disconnection_fee=to_fixed(d.get("disconnection_fee", 0)),
            contract_duration=int(d.get("contract_duration", 0)),
            min_signups=int(d.get("min_signups", 1)),
            peak_window=tuple(d.get("peak_window", (8, 19))),
            offpeak_window=tuple(d.get("offpeak_window", (21, 6))),
            rate_overrides=overrides,
        )


def tariff_plans(feedin="0.05", standalone_contract=365, group_contract=365, min_signups=3):
    """Evaluation tariffs: standalone 1.6/1.0 with disconnect fee 16, group
    0.6/0.3 with disconnect fee 30, zero connection fees. Feed-in rate and
    contract lengths are not part of the published table."""
    standalone = EnergyPlan(id=0, name="standalone", peak_rate=to_fixed("1.6"),
                            offpeak_rate=to_fixed("1.0"), feedin_rate=to_fixed(feedin),
                            disconnection_fee=to_fixed(16),
                            contract_duration=standalone_contract)
    group = EnergyPlan(id=1, name="group", peak_rate=to_fixed("0.6"),
                       offpeak_rate=to_fixed("0.3"), feedin_rate=to_fixed(feedin),
                       disconnection_fee=to_fixed(30), contract_duration=group_contract,
                       min_signups=min_signups)
    return [standalone, group]


def load_plans(path):
    with open(path) as f:
        doc = json.load(f)
    if isinstance(doc, dict):
        doc = doc["plans"]
    return [EnergyPlan.from_json(d) for d in doc]


def save_plans(plans, path):
    with open(path, "w") as f:
        json.dump([p.to_json() for p in plans], f, indent=2)
        f.write("\n")


@dataclass(frozen=True)
class DemandTrace:
    user_id: str
    samples: tuple  # ((t, a), ...) with a at scale S

    def __post_init__(self):
        ts = [t for t, _ in self.samples]
        for prev, cur in zip(ts, ts[1:]):
            if cur != prev + 1:
                raise ValueError(f"{self.user_id}: timeslots must be contiguous and increasing")
        for t, a in self.samples:
            if abs(a) >= MAX_DEMAND:
                raise ValueError(f"{self.user_id}: demand at slot {t} outside window")

    def __len__(self):
        return len(self.samples)

    @property
    def slots(self):
        return [t for t, _ in self.samples]

    @property
    def demand(self):
        return [a for _, a in self.samples]

    def window(self, t0, t1):
        return DemandTrace(self.user_id, tuple((t, a) for t, a in self.samples if t0 <= t <= t1))

    @classmethod
    def from_kwh(cls, user_id, values, start=1):
        return cls(user_id, tuple((start + k, to_fixed(v)) for k, v in enumerate(values)))


def load_traces(path):
    """CSV with header user_id,timeslot,demand_kwh -> {user_id: DemandTrace}."""
    rows = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["user_id", "timeslot", "demand_kwh"]:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        for r in reader:
            rows.setdefault(r["user_id"], []).append((int(r["timeslot"]), to_fixed(r["demand_kwh"])))
    return {u: DemandTrace(u, tuple(sorted(s))) for u, s in rows.items()}


def save_traces(traces, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user_id", "timeslot", "demand_kwh"])
        for tr in traces:
            for t, a in tr.samples:
                w.writerow([tr.user_id, t, fmt_fixed(a)])


def cost_op(plan, t, a, slot_hours=HOURS):
    """Operational cost in cost units; negative demand earns the feed-in rate."""
    if a >= 0:
        return plan.import_rate(t, slot_hours) * a
    return plan.feedin(t) * a


def fee_applies(prev, tenure):
    return tenure <= prev.contract_duration


def cost_sw(prev, nxt, tenure):
    """Switching cost in cost units. ``tenure`` counts consecutive slots on prev."""
    if prev == nxt:
        return 0
    fee = nxt.connection_fee
    if fee_applies(prev, tenure):
        fee += prev.disconnection_fee
    return fee_to_cost(fee)


def total_cost(trace, selections, initial_plan=None, initial_tenure=0, slot_hours=HOURS):
    """Sum of operational and switching costs for a selection sequence.

    Without ``initial_plan`` the sequence starts for free in its first plan."""
    if len(selections) != len(trace):
        raise ValueError("selections and trace differ in length")
    if not selections:
        return 0
    prev = initial_plan if initial_plan is not None else selections[0]
    tenure = initial_tenure
    total = 0
    for (t, a), x in zip(trace.samples, selections):
        if x != prev:
            total += cost_sw(prev, x, tenure)
            tenure = 1
        else:
            tenure += 1
        total += cost_op(x, t, a, slot_hours)
        prev = x
    return total


@dataclass(frozen=True)
class BillEntry:
    t: int
    a: int        # scale S
    beta: int     # 0/1
    kappa: int    # cost units
    mu: int       # cost units
    nu: int       # cost units
    tenure: int
    plan_id: int

    def values(self):
        """Committed tuple in receipt order (a, beta, kappa, mu, nu)."""
        return (self.a, self.beta, self.kappa, self.mu, self.nu)


@dataclass(frozen=True)
class BillRecord:
    user_id: str
    entries: tuple

    def window(self, t0, t1):
        got = [e for e in self.entries if t0 <= e.t <= t1]
        if [e.t for e in got] != list(range(t0, t1 + 1)):
            raise ValueError(f"bill for {self.user_id} does not cover slots {t0}..{t1}")
        return got


def make_bill(trace, plan, tenure=0, slot_hours=HOURS):
    """Bill for a user on ``plan`` throughout the trace, having already been
    on it for ``tenure`` slots before the first sample.

    nu^t is the fee for leaving ``plan`` at t: d(plan) while the slots spent on
    it before t are within the contract duration."""
    entries = []
    for k, (t, a) in enumerate(trace.samples):
        before = tenure + k
        nu = fee_to_cost(plan.disconnection_fee) if fee_applies(plan, before) else 0
        entries.append(BillEntry(t=t, a=a, beta=1 if a >= 0 else 0,
                                 kappa=cost_op(plan, t, a, slot_hours),
                                 mu=fee_to_cost(plan.connection_fee), nu=nu,
                                 tenure=before, plan_id=plan.id))
    return BillRecord(trace.user_id, tuple(entries))
