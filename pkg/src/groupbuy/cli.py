"""Command-line front end.

Subcommands: gen-traces, bill-commit, run, report, ledger dump.
Files default to the data directory ($GROUPBUY_DATA, else ./groupbuy-data).
Settings resolve as command-line flags > --config JSON file > built-in defaults.
Exit codes: 0 ok, 2 validation failure, 3 protocol abort, 4 ledger rejection.
"""

import argparse
import csv
import json
import os
import sys

from .ledger import Ledger, LedgerError, pubkey_bytes
from .model import load_plans, load_traces, make_bill, save_plans, save_traces, tariff_plans
from .scenario import (DEFAULT_SEED, MODES, PROFILES, Scenario, bill_commit, gen_traces, operator_key,
                       receipt_openings_json, run_scenario, write_report)
from .planner import SCHEMES

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT, EXIT_LEDGER = 0, 2, 3, 4
DATA_ENV = "GROUPBUY_DATA"

DEFAULTS = {
    "users": 4, "days": 14, "profile": "mixed", "seed": DEFAULT_SEED,
    "scheme": "egalitarian", "mode": "plaintext", "compensations": True,
    "standalone": 0, "group": 1, "epoch_id": 0, "randomness": "dealer",
}


class ValidationError(Exception):
    pass


def data_dir():
    return os.environ.get(DATA_ENV) or os.path.join(os.getcwd(), "groupbuy-data")


def _path(p, name):
    return p or os.path.join(data_dir(), name)


def _settings(args):
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg = json.load(f)
    def get(key):
        v = getattr(args, key, None)
        if v is not None:
            return v
        return cfg.get(key, DEFAULTS.get(key))
    return get


def _plans(path):
    return load_plans(path) if path else tariff_plans()


def _traces(path):
    return list(load_traces(_path(path, "traces.csv")).values())


def _open_ledger(path, op_pub):
    if os.path.exists(path):
        led = Ledger.replay(path)
        if led.operator_pubkey != op_pub:
            raise ValidationError("ledger log belongs to a different operator key")
        led.log_path = path
        return led
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return Ledger(op_pub, log_path=path)


# -- subcommands ------------------------------------------------------------------

def cmd_gen_traces(args):
    get = _settings(args)
    traces = gen_traces(get("users"), get("days"), get("profile"), get("seed"))
    out = _path(args.out, "traces.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_traces(traces, out)
    print(f"wrote {len(traces)} traces x {get('days')} slots to {out}")
    return EXIT_OK


def cmd_bill_commit(args):
    get = _settings(args)
    plans = _plans(args.plans)
    sa = next((p for p in plans if p.id == get("standalone")), None)
    if sa is None:
        raise ValidationError(f"no plan with id {get('standalone')}")
    traces = _traces(args.traces)
    key = operator_key(get("seed"))
    ledger = _open_ledger(_path(args.ledger, "ledger.log"), pubkey_bytes(key))
    bills = [make_bill(tr, sa) for tr in traces]
    slots = traces[0].slots
    receipts = bill_commit(bills, ledger, key, get("epoch_id"), slots[0], slots[-1], seed=get("seed"))
    out = _path(args.out_dir, "receipts")
    os.makedirs(out, exist_ok=True)
    for uid, rc in receipts.items():
        with open(os.path.join(out, f"{uid}.epoch{get('epoch_id')}.json"), "w") as f:
            json.dump(receipt_openings_json(rc, ledger.group), f, indent=1)
    print(f"registered {len(receipts)} receipt roots for epoch {get('epoch_id')}; openings in {out}")
    return EXIT_OK


def cmd_run(args):
    get = _settings(args)
    plans = _plans(args.plans or (get("plans") if args.config else None))
    traces = _traces(args.traces or get("traces"))
    if get("scheme") not in SCHEMES or get("mode") not in MODES:
        raise ValidationError("bad scheme or mode")
    comp = get("compensations") if args.compensations is None else args.compensations
    sc = Scenario(plans, traces, get("scheme"), tuple(args.epoch) if args.epoch else None,
                  get("seed"), get("mode"), comp, get("standalone"), get("group"),
                  get("randomness"), get("epoch_id"))
    out = _path(args.out_dir, "report")
    os.makedirs(out, exist_ok=True)
    rep = run_scenario(sc, log_path=os.path.join(out, "transcript.jsonl") if sc.mode == "mpc" else None)
    write_report(rep, out)
    if rep.abort:
        print(f"ABORT in {rep.abort['stage']}: {rep.abort['reason']}", file=sys.stderr)
        return EXIT_LEDGER if rep.abort["ledger"] else EXIT_ABORT
    ratio = max(r for r in rep.ratios().values() if r is not None)
    print(f"{rep.verdict} at slot {rep.join_slot} ({rep.mode}); worst cost ratio {ratio:.3f}; report in {out}")
    return EXIT_OK


def cmd_report(args):
    out = _path(args.out_dir, "figures")
    os.makedirs(out, exist_ok=True)
    summaries = []
    for d in args.reports:
        with open(os.path.join(d, "summary.json")) as f:
            summaries.append((d, json.load(f)))
    with open(os.path.join(out, "cost_vs_day.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["report", "user_id", "day", "accumulated_cost", "standalone_cost"])
        for d, _ in summaries:
            with open(os.path.join(d, "cost.csv"), newline="") as g:
                for r in csv.DictReader(g):
                    w.writerow([d, r["user_id"], r["day"], r["accumulated_cost"], r["standalone_cost"]])
    with open(os.path.join(out, "net_compensation.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["report", "user_id", "theta", "phi"])
        for d, s in summaries:
            for u in s["roster"]:
                w.writerow([d, u, s["theta"].get(u), s["phi"].get(u)])
    with open(os.path.join(out, "bytes_vs_users.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["report", "users", "stage1_bytes", "stage2_bytes", "total_bytes"])
        for d, s in summaries:
            c = s.get("communication", {})
            w.writerow([d, len(s["roster"]), c.get("stage1", 0), c.get("stage2", 0), sum(c.values())])
    print(f"wrote figure data for {len(summaries)} report(s) to {out}")
    return EXIT_OK


def cmd_ledger_dump(args):
    led = Ledger.replay(_path(args.ledger, "ledger.log"))
    json.dump(led.dump(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser():
    d = DEFAULTS
    p = argparse.ArgumentParser(prog="groupbuy", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-traces", help="write synthetic daily-demand traces")
    g.add_argument("--users", type=int, help=f"number of users (default {d['users']})")
    g.add_argument("--days", type=int, help=f"daily slots (default {d['days']})")
    g.add_argument("--profile", choices=PROFILES, help=f"demand profile (default {d['profile']})")
    g.add_argument("--seed", type=int, help=f"RNG seed (default {d['seed']})")
    g.add_argument("--out", help="trace CSV (default <data>/traces.csv)")
    g.add_argument("--config", help="JSON settings file")
    g.set_defaults(fn=cmd_gen_traces)

    b = sub.add_parser("bill-commit", help="operator: commit bills and register receipt roots")
    b.add_argument("--traces", help="trace CSV (default <data>/traces.csv)")
    b.add_argument("--plans", help="plans JSON (default: built-in tariff table)")
    b.add_argument("--standalone", type=int, help=f"plan id users are billed on (default {d['standalone']})")
    b.add_argument("--epoch-id", dest="epoch_id", type=int, help=f"ledger epoch (default {d['epoch_id']})")
    b.add_argument("--seed", type=int, help=f"operator key and blinding seed (default {d['seed']})")
    b.add_argument("--ledger", help="ledger log (default <data>/ledger.log)")
    b.add_argument("--out-dir", dest="out_dir", help="receipt openings (default <data>/receipts)")
    b.add_argument("--config", help="JSON settings file")
    b.set_defaults(fn=cmd_bill_commit)

    r = sub.add_parser("run", help="run a scenario in plaintext or MPC mode")
    r.add_argument("--traces", help="trace CSV (default <data>/traces.csv)")
    r.add_argument("--plans", help="plans JSON (default: built-in tariff table)")
    r.add_argument("--scheme", choices=SCHEMES, help=f"compensation scheme (default {d['scheme']})")
    r.add_argument("--mode", choices=MODES, help=f"execution mode (default {d['mode']})")
    r.add_argument("--seed", type=int, help=f"scenario seed (default {d['seed']})")
    r.add_argument("--epoch", type=int, nargs=2, metavar=("T0", "T1"), help="slot window (default: whole trace)")
    r.add_argument("--standalone", type=int, help=f"standalone plan id (default {d['standalone']})")
    r.add_argument("--group", type=int, help=f"group plan id (default {d['group']})")
    r.add_argument("--randomness", choices=("dealer", "contributed"),
                   help=f"source of comparison randomness (default {d['randomness']})")
    r.add_argument("--epoch-id", dest="epoch_id", type=int, help=f"ledger epoch (default {d['epoch_id']})")
    c = r.add_mutually_exclusive_group()
    c.add_argument("--compensations", dest="compensations", action="store_true", default=None,
                   help="enable mutual compensations (default)")
    c.add_argument("--no-compensations", dest="compensations", action="store_false")
    r.add_argument("--out-dir", dest="out_dir", help="report directory (default <data>/report)")
    r.add_argument("--config", help="JSON settings file")
    r.set_defaults(fn=cmd_run)

    rp = sub.add_parser("report", help="emit figure data from run reports")
    rp.add_argument("reports", nargs="+", help="report directories")
    rp.add_argument("--out-dir", dest="out_dir", help="output directory (default <data>/figures)")
    rp.set_defaults(fn=cmd_report)

    lg = sub.add_parser("ledger", help="ledger queries")
    lsub = lg.add_subparsers(dest="ledger_cmd", required=True)
    dump = lsub.add_parser("dump", help="print the ledger state rebuilt from its log")
    dump.add_argument("--ledger", help="ledger log (default <data>/ledger.log)")
    dump.set_defaults(fn=cmd_ledger_dump)

    sp = sub.add_parser("plans", help="write the built-in tariff table as JSON")
    sp.add_argument("--out", help="plans JSON (default <data>/plans.json)")
    sp.set_defaults(fn=lambda a: (save_plans(tariff_plans(), _path(a.out, "plans.json")), EXIT_OK)[1])
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LedgerError as e:
        print(f"ledger rejected: {e}", file=sys.stderr)
        return EXIT_LEDGER
    except (ValidationError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
