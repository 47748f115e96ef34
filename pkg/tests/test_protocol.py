import random
from types import SimpleNamespace

import pytest

from groupbuy.crypto.group import production_group
from groupbuy.ledger import Ledger, pubkey_bytes
from groupbuy.model import COST_SCALE, RATIO_SCALE, DemandTrace, make_bill, tariff_plans
from groupbuy.mpc.engine import Fault
from groupbuy.planner import EGALITARIAN, PROPORTIONAL, group_decide
from groupbuy.protocol import LedgerRejected, UserInput, plaintext_outcome, stage0_register
from groupbuy.scenario import INITIAL_TOKENS, bill_commit, make_wallets, operator_key

C, R = COST_SCALE, RATIO_SCALE
JOIN_DEMAND = [["15", "15", "5"], ["15", "15", "5"], ["2", "2", "2"]]


def build(demands, scheme=EGALITARIAN, compensations=True, seed=7, faults=(), min_signups=3,
          randomness="dealer", tokens=INITIAL_TOKENS, epoch=None, ledger_epochs=None):
    """Ledger, receipts, wallets and a registered session for ``demands``."""
    G = production_group()
    plans = tariff_plans(min_signups=min_signups)
    roster = [f"u{i + 1}" for i in range(len(demands))]
    bills = [make_bill(DemandTrace.from_kwh(u, d), plans[0]) for u, d in zip(roster, demands)]
    t0, t1 = epoch or (1, len(demands[0]))
    op = operator_key(seed)
    ledger = Ledger(pubkey_bytes(op), G)
    receipts = {}
    for le, (a, b) in (ledger_epochs or {0: (t0, t1)}).items():
        receipts[le] = bill_commit(bills, ledger, op, le, a, b, G, seed)
    wallets = make_wallets(roster, ledger, seed, tokens)
    sess = stage0_register(roster, plans[1], scheme, (t0, t1), ledger, 0, compensations, seed,
                           faults, randomness, G)
    inputs = [UserInput(u, b, receipts[0][u], w) for u, b, w in zip(roster, bills, wallets)]
    return SimpleNamespace(sess=sess, inputs=inputs, bills=bills, plans=plans, ledger=ledger,
                           wallets=wallets, receipts=receipts, G=G, roster=roster)


# -- registration ---------------------------------------------------------------

def test_stage0_registration():
    plans = tariff_plans()
    s = stage0_register(["a", "b", "c", "d"], plans[1], seed=1)
    assert s.state.stage == "Init" and len(s.state.session_id) == 16
    with pytest.raises(ValueError):
        stage0_register(["a", "b"], plans[1], seed=1)
    with pytest.raises(ValueError):
        stage0_register(["a", "a", "b"], plans[1], seed=1)
    with pytest.raises(ValueError):
        stage0_register(["a", "b", "c"], plans[1], scheme="shapley", seed=1)
    again = stage0_register(["a", "b", "c", "d"], plans[1], seed=1)
    assert again.state.session_id != s.state.session_id


def test_stages_only_move_forward():
    s = stage0_register(["a", "b", "c"], tariff_plans()[1], seed=1)
    s.state.advance("Deciding")
    with pytest.raises(ValueError):
        s.state.advance("Sharing")


# -- honest runs ------------------------------------------------------------------

def test_honest_compensated_run_pays_through_ledger():
    env = build(JOIN_DEMAND)
    supply = env.ledger.supply()
    o = env.sess.run(env.inputs)
    want, d = plaintext_outcome(env.bills, env.plans[1], EGALITARIAN, True)
    assert not o.aborted and env.sess.state.stage == "Done"
    assert (o.verdict, o.join_slot, o.mode) == ("Join", 2, "compensated")
    assert o.decision() == want.decision() and o.sums == want.sums
    assert sum(o.phi) == 0 and o.accepted
    for w in env.wallets:
        assert env.ledger.balance(w.address) == w.commitment()
    assert [w.value for w in env.wallets] == [INITIAL_TOKENS * C * R - p for p in o.phi]
    assert env.ledger.supply() == supply


def test_symmetric_users_get_equal_theta():
    env = build([["15", "15", "5"]] * 3)
    o = env.sess.run(env.inputs)
    if o.mode == "compensated":
        assert len(set(o.theta[1:])) == 1 and o.theta[0] >= o.theta[1]
    else:
        assert len(set(o.theta)) == 1


def test_dominated_group_stays():
    env = build([["0.5", "0.5"]] * 3)
    o = env.sess.run(env.inputs)
    assert o.verdict == "Stay" and not o.aborted and o.accepted is None


def test_stage3_worked_instance():
    # [DERIVED] C_alt = (100, 50), C_g = (80, 48), Opt_g = (60, 30) -> theta = (29, 9)
    env = build([["1"], ["1"]], min_signups=2)
    s = env.sess
    eng = s.engine
    nus = [20 * C, 18 * C]   # the group connection fee is zero, so nu is the whole switching cost
    consts = lambda vs: [eng.const(eng.F.encode(v * C)) for v in vs]
    s._joined(1, "compensated", [0, 1], consts([100, 50]), consts([80, 48]), consts([60, 30]),
              [eng.const(v) for v in nus])
    bills = [SimpleNamespace(window=lambda a, b, nu=nu: [SimpleNamespace(nu=nu)]) for nu in nus]
    s.state.stage = "Deciding"
    theta, phi = s.stage3_compensate(None, bills)
    assert theta == [29 * C * R, 9 * C * R]
    assert sum(phi) == 0 and sum(theta) == 38 * C * R
    assert s.outcome.sums == (150 * C, 128 * C)


def test_uncompensated_join_skips_payment():
    env = build([["20"] * 3] * 3, compensations=False)
    o = env.sess.run(env.inputs)
    assert (o.verdict, o.mode) == ("Join", "uncompensated")
    assert o.phi == [0, 0, 0] and o.theta == [16 * C * R] * 3
    assert o.accepted is None and "stage4" not in o.timings


def test_insufficient_balance_rejected_by_ledger():
    env = build(JOIN_DEMAND, tokens=0)
    o = env.sess.run(env.inputs)
    assert isinstance(o.abort, LedgerRejected) and "range" in o.abort.reason
    assert o.accepted is False and env.sess.state.stage == "Aborted"


# -- MPC vs plaintext -------------------------------------------------------------

def random_demands(rng, n, T):
    out = []
    for _ in range(n):
        level = rng.uniform(0.5, 18)
        row = [level * rng.uniform(0.6, 1.4) for _ in range(T)]
        if rng.random() < 0.2:
            row[rng.randrange(T)] = -rng.uniform(0, 4)
        out.append([f"{v:.2f}" for v in row])
    return out


@pytest.mark.parametrize("case", range(50))
def test_mpc_matches_plaintext(case):
    rng = random.Random(f"equiv-{case}")
    n, T = rng.randint(2, 6), rng.randint(7, 14)
    scheme = rng.choice((EGALITARIAN, PROPORTIONAL))
    comp = rng.random() < 0.8
    env = build(random_demands(rng, n, T), scheme, comp, seed=case, min_signups=rng.randint(2, n))
    o = env.sess.run(env.inputs)
    want, _ = plaintext_outcome(env.bills, env.plans[1], scheme, comp)
    assert not o.aborted, o.abort
    assert o.decision() == want.decision()
    assert o.sums == want.sums
    if o.mode == "compensated":
        assert o.accepted and sum(o.phi) == 0


# -- fault injection ----------------------------------------------------------------

def fault_cases():
    cases = []
    for p in range(3):
        cases += [("proto.misreport", p, k, "value") for k in (1, 2, 3, 4, 5)]
        cases += [("proto.stale_root", p, 1, "value"), ("proto.payment_cm", p, 1, "value")]
        cases += [("input.z", p, k, "value") for k in (1, 4, 9)]
        for point in ("open.share", "open.decommit"):
            cases += [(point, p, k, "value") for k in (1, 5, 20)]
        # a run has 8 batched MAC checks and 10 coin tosses
        for point in ("mac.sigma", "coin.open"):
            cases += [(point, p, k, "value") for k in (1, 5, 8)]
        for kind in ("commit", "open", "coin_commit", "coin_open", "mac_commit", "mac_open",
                     "input", "proof", "announce", "signature"):
            cases.append((f"drop.{kind}", p, 1, "value"))
        for op in ("mul", "min", "leq_shared", "rand_bit", "rand_pos", "input", "phi"):
            cases += [(f"result.{op}", p, 1, t) for t in ("value", "mac", "naive")]
            cases += [(f"result.{op}", p, 2, "value"), (f"result.{op}", p, 3, "mac")]
        cases += [("contrib.bit", p, 1, "value"), ("contrib.pos", p, 1, "value")]
    return cases


FAULTS = fault_cases()


def test_fault_suite_size():
    assert len(FAULTS) >= 200


@pytest.mark.parametrize("point,party,occ,target", FAULTS,
                         ids=[f"{c[0]}-p{c[1]}-{c[2]}-{c[3]}" for c in FAULTS])
def test_fault_aborts(point, party, occ, target):
    # a contribution moved inside its valid set is an honest draw; move it outside
    delta = {"contrib.bit": 2, "contrib.pos": -(2 ** 41)}.get(point, 1)
    f = Fault(point, party, occ, delta=delta, target=target)
    randomness = "contributed" if point.startswith("contrib.") else "dealer"
    env = build(JOIN_DEMAND, faults=[f], randomness=randomness)
    o = env.sess.run(env.inputs)
    assert f.fired
    assert o.aborted and env.sess.state.stage == "Aborted"
    assert o.accepted is not True


# -- privacy ------------------------------------------------------------------------

def foreign_hits(env, o, floor=2 ** 10):
    """(receiver, owner) pairs where a receiver's inbox holds the 32-byte field
    encoding of another user's demand, kappa or phi. Values below ``floor``
    are skipped: their encodings are mostly zero bytes and match by accident."""
    G = env.G
    enc = lambda v: G.scalar_bytes(G.field.encode(v))
    secrets = []
    for i, b in enumerate(env.bills):
        vals = {v for e in b.entries for v in (e.a, e.kappa)}
        if o.phi and o.phi[i] is not None:
            vals.add(o.phi[i])
        secrets.append({enc(v) for v in vals if abs(v) >= floor})
    hits = []
    for p in range(len(env.bills)):
        seen = env.sess.engine.net.received_bytes(p)
        hits += [(p, i) for i, own in enumerate(secrets) if i != p and any(x in seen for x in own)]
    return hits


def test_transcripts_hold_no_foreign_plaintexts():
    env = build(JOIN_DEMAND + [["7.25", "3.5", "9"]])
    o = env.sess.run(env.inputs)
    assert o.mode == "compensated" and not o.aborted
    assert foreign_hits(env, o) == []


def test_scan_detects_a_planted_leak():
    env = build(JOIN_DEMAND)
    o = env.sess.run(env.inputs)
    net = env.sess.engine.net
    net.send(0, 1, "announce", env.G.scalar_bytes(env.G.field.encode(env.bills[0].entries[0].a)))
    assert foreign_hits(env, o) == [(1, 0)]


def test_log_records_every_frame(tmp_path):
    env = build(JOIN_DEMAND)
    env.sess.run(env.inputs)
    net = env.sess.engine.net
    path = tmp_path / "session.log"
    net.write_log(str(path))
    assert len(path.read_text().splitlines()) == sum(net.msgs.values())


# -- epochs -------------------------------------------------------------------------

def test_stay_then_next_epoch_matches_long_run():
    demands = [["0.5"] * 3 + ["15"] * 3, ["0.5"] * 3 + ["15"] * 3, ["0.5"] * 3 + ["2"] * 3]
    env = build(demands, epoch=(1, 3), ledger_epochs={0: (1, 3), 1: (4, 6)})
    o1 = env.sess.run(env.inputs)
    assert o1.verdict == "Stay" and not o1.aborted
    nxt = env.sess.next_epoch((4, 6), 1)
    inputs = [UserInput(u.user_id, u.bill, env.receipts[1][u.user_id], u.wallet) for u in env.inputs]
    o2 = nxt.run(inputs)
    whole = group_decide(env.bills, env.plans[1], EGALITARIAN, True)
    assert not o2.aborted and whole.joined
    assert (o2.verdict, o2.join_slot, o2.mode, o2.theta, o2.phi) == \
        (whole.verdict, whole.join_slot, whole.mode, whole.theta, whole.phi)
    with pytest.raises(ValueError):
        nxt.next_epoch((7, 9), 2)
