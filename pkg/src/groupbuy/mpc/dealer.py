"""Trusted-dealer preprocessing: MAC key shares, triples, input masks, random bits/positives.

The dealer is a separate role: it samples everything, hands each party its
bundle and is then dropped. Tests may keep the dealer object to read alpha.
Any object with ``deal(counts) -> [PartyStock]`` can replace it.
"""

import json
from collections import deque
from dataclasses import dataclass, field

POS_BITS = 40
MAX_PARTIES = 2 ** 10
BUNDLE_VERSION = 1


class PreprocessingExhausted(Exception):
    pass


@dataclass
class Counts:
    triples: int = 0
    masks: dict = field(default_factory=dict)   # owner -> count
    bits: int = 0
    positives: int = 0

    def add(self, other):
        masks = dict(self.masks)
        for k, v in other.masks.items():
            masks[k] = masks.get(k, 0) + v
        return Counts(self.triples + other.triples, masks,
                      self.bits + other.bits, self.positives + other.positives)

    def to_json(self):
        return {"triples": self.triples, "masks": {str(k): v for k, v in sorted(self.masks.items())},
                "bits": self.bits, "positives": self.positives}


class PartyStock:
    """One party's preprocessing bundle. Entries are (share, mac share) pairs."""

    def __init__(self, party, alpha):
        self.party = party
        self.alpha = alpha
        self.triples = deque()
        self.masks = {}
        self.mask_values = deque()   # clear r for this party's own masks
        self.bits = deque()
        self.positives = deque()
        self.used = Counts()

    def _pop(self, dq, what):
        if not dq:
            raise PreprocessingExhausted(f"party {self.party}: {what} stock exhausted")
        return dq.popleft()

    def triple(self):
        self.used.triples += 1
        return self._pop(self.triples, "triple")

    def mask(self, owner):
        self.used.masks[owner] = self.used.masks.get(owner, 0) + 1
        return self._pop(self.masks.setdefault(owner, deque()), f"input mask of party {owner}")

    def own_mask_value(self):
        return self._pop(self.mask_values, "own mask value")

    def bit(self):
        self.used.bits += 1
        return self._pop(self.bits, "random bit")

    def positive(self):
        self.used.positives += 1
        return self._pop(self.positives, "random positive")

    def remaining(self):
        return Counts(len(self.triples), {k: len(v) for k, v in self.masks.items()},
                      len(self.bits), len(self.positives))

    def to_json(self):
        h = lambda v: format(v, "x")
        pair = lambda p: [h(p[0]), h(p[1])]
        return {
            "version": BUNDLE_VERSION,
            "party": self.party,
            "alpha": h(self.alpha),
            "triples": [[h(v) for v in t] for t in self.triples],
            "masks": {str(o): [pair(p) for p in dq] for o, dq in sorted(self.masks.items())},
            "mask_values": [h(v) for v in self.mask_values],
            "bits": [pair(p) for p in self.bits],
            "positives": [pair(p) for p in self.positives],
        }

    @classmethod
    def from_json(cls, d):
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError("unsupported bundle version")
        x = lambda s: int(s, 16)
        st = cls(d["party"], x(d["alpha"]))
        st.triples = deque(tuple(x(v) for v in t) for t in d["triples"])
        st.masks = {int(o): deque((x(a), x(b)) for a, b in ps) for o, ps in d["masks"].items()}
        st.mask_values = deque(x(v) for v in d["mask_values"])
        st.bits = deque((x(a), x(b)) for a, b in d["bits"])
        st.positives = deque((x(a), x(b)) for a, b in d["positives"])
        return st


def save_bundle(stock, path):
    with open(path, "w") as f:
        json.dump(stock.to_json(), f)


def load_bundle(path):
    with open(path) as f:
        return PartyStock.from_json(json.load(f))


class Dealer:
    def __init__(self, field, n, rng):
        if not 1 <= n <= MAX_PARTIES:
            raise ValueError(f"party count must be in 1..{MAX_PARTIES}")
        self.F = field
        self.n = n
        self.rng = rng
        self.alpha_shares = [field.random(rng) for _ in range(n)]
        self.alpha = sum(self.alpha_shares) % field.q

    def share(self, x):
        """Additive shares of x and of alpha*x."""
        F, n, rng = self.F, self.n, self.rng
        q = F.q
        vs = [F.random(rng) for _ in range(n - 1)]
        vs.append((x - sum(vs)) % q)
        ms = [F.random(rng) for _ in range(n - 1)]
        ms.append((self.alpha * x - sum(ms)) % q)
        return vs, ms

    def deal(self, counts):
        F, n, rng = self.F, self.n, self.rng
        q = F.q
        stocks = [PartyStock(i, self.alpha_shares[i]) for i in range(n)]
        for _ in range(counts.triples):
            a, b = F.random(rng), F.random(rng)
            sa, sb, sc = self.share(a), self.share(b), self.share(a * b % q)
            for i in range(n):
                stocks[i].triples.append((sa[0][i], sa[1][i], sb[0][i], sb[1][i], sc[0][i], sc[1][i]))
        for owner, k in sorted(counts.masks.items()):
            for _ in range(k):
                r = F.random(rng)
                vs, ms = self.share(r)
                for i in range(n):
                    stocks[i].masks.setdefault(owner, deque()).append((vs[i], ms[i]))
                stocks[owner].mask_values.append(r)
        for _ in range(counts.bits):
            vs, ms = self.share(rng.randrange(2))
            for i in range(n):
                stocks[i].bits.append((vs[i], ms[i]))
        for _ in range(counts.positives):
            # same range as n contributions below 2^POS_BITS plus one
            vs, ms = self.share(rng.randrange(n * (2 ** POS_BITS - 1) + 1) + 1)
            for i in range(n):
                stocks[i].positives.append((vs[i], ms[i]))
        return stocks
