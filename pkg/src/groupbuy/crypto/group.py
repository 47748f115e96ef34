"""Prime-order Schnorr groups, the scalar field and Pedersen commitments."""

import hashlib
import secrets

import gmpy2

# Production parameters. q is the first prime at or above the 256-bit
# expansion of Q_TAG (offset Q_OFFSET); P = k*q + 1 with k the even value
# below expand(P_TAG, 2048) // q, advanced by K_OFFSET. See derive_params().
Q_TAG = b"groupbuy/schnorr-2048-256/q"
P_TAG = b"groupbuy/schnorr-2048-256/P"
Q_OFFSET = 24
K_OFFSET = 554
G_TAG = b"groupbuy/generator/g"
H_TAG = b"groupbuy/generator/h"

_Q = 0x86bd9cd324bb6bcf6971500d8def19daf9ad2bdb52d4eca0ec6cfb1ce1f7ee7b
_P = int(
    "efde0e7a360e57886ecea78e71c8ce7090643293f2aeeaf08147ea74b1286f64"
    "aead3899aa5f006de415669ed32a08664ffc71dc772feaa125bded596bc78d90"
    "35adf4f7b1d91b26498d2346ba1f8ee4d01fb058779eccbe3da644b7fbcd8088"
    "dd5b1c0cc1f4e15076752202430547e422e849443d37413bd401c206214c29f3"
    "e3ea03cf9ef47ed0ec46e89fa695663b60fba3830ff2660c63ea1f04d4096679"
    "b1e95463763f1c04380a73ca795e08a0690874801ba8d99ad463d046d1cbcac1"
    "3e717eda99fa8d765c188f6b7615ac87d74b426022f56eead00e72eb00afcdb3"
    "45aa7a9ce2b94edbf6eaa891d8e806af181ad879445cb812f27f08829570eaf9", 16)


def expand(tag, bits):
    """SHA-256 counter-mode expansion of ``tag`` to a ``bits``-bit integer with the top bit set."""
    out = b""
    c = 0
    while len(out) * 8 < bits:
        out += hashlib.sha256(tag + c.to_bytes(4, "big")).digest()
        c += 1
    v = int.from_bytes(out, "big") >> (len(out) * 8 - bits)
    return v | (1 << (bits - 1))


def derive_params():
    """Recompute (P, q) from the tags and offsets."""
    q = expand(Q_TAG, 256) + Q_OFFSET
    k = expand(P_TAG, 2048) // q
    k -= k % 2
    k += K_OFFSET
    return k * q + 1, q


def hash_to_group(P, q, tag):
    """Nothing-up-my-sleeve generator: hash to Z_P^*, raise to the cofactor."""
    k = (P - 1) // q
    ctr = 0
    while True:
        x = expand(tag + ctr.to_bytes(4, "big"), P.bit_length() + 64) % P
        y = int(gmpy2.powmod(x, k, P))
        if y not in (0, 1):
            return y
        ctr += 1


class Field:
    """Z_q with a signed view: [0, (q-1)/2] are non-negative, the rest encode negatives."""

    def __init__(self, q):
        self.q = q
        self.half = (q - 1) // 2
        self.nbytes = (q.bit_length() + 7) // 8

    def __eq__(self, other):
        return isinstance(other, Field) and other.q == self.q

    def __hash__(self):
        return hash(self.q)

    def encode(self, v):
        return v % self.q

    def signed(self, x):
        x %= self.q
        return x if x <= self.half else x - self.q

    def add(self, a, b):
        return (a + b) % self.q

    def sub(self, a, b):
        return (a - b) % self.q

    def mul(self, a, b):
        return (a * b) % self.q

    def neg(self, a):
        return -a % self.q

    def inv(self, a):
        if a % self.q == 0:
            raise ZeroDivisionError("zero has no inverse")
        return pow(a, -1, self.q)

    def random(self, rng=None):
        if rng is None:
            return secrets.randbelow(self.q)
        return rng.randrange(self.q)

    def to_bytes(self, x):
        return (x % self.q).to_bytes(self.nbytes, "big")


class _FixedBase:
    """Windowed table of base^(d * 2^(w*i)) for fast fixed-base exponentiation."""

    W = 8

    def __init__(self, base, P, ebits):
        self.P = gmpy2.mpz(P)
        nwin = (ebits + self.W - 1) // self.W
        rows = []
        cur = gmpy2.mpz(base)
        for _ in range(nwin):
            row = [gmpy2.mpz(1), cur]
            for _ in range(2, 1 << self.W):
                row.append(row[-1] * cur % self.P)
            rows.append(row)
            cur = row[-1] * cur % self.P
        self.rows = rows

    def pow(self, e):
        acc = gmpy2.mpz(1)
        P = self.P
        i = 0
        mask = (1 << self.W) - 1
        while e:
            d = e & mask
            if d:
                acc = acc * self.rows[i][d] % P
            e >>= self.W
            i += 1
        return int(acc)


class Group:
    """Order-q subgroup of Z_P^* with independent generators g, h."""

    def __init__(self, P, q, g, h, name="", fixed_base=True):
        if (P - 1) % q:
            raise ValueError("q must divide P - 1")
        self.P, self.q, self.g, self.h = P, q, g, h
        self.name = name
        self.field = Field(q)
        self.nbytes = (P.bit_length() + 7) // 8
        self._tables = None
        self._use_tables = fixed_base

    def __eq__(self, other):
        return isinstance(other, Group) and (self.P, self.q, self.g, self.h) == (other.P, other.q, other.g, other.h)

    def __hash__(self):
        return hash((self.P, self.q, self.g, self.h))

    def __repr__(self):
        return f"Group({self.name or hex(self.P)[:12]}, |q|={self.q.bit_length()})"

    @property
    def identity(self):
        return 1

    def _fixed(self):
        if self._tables is None:
            self._tables = (_FixedBase(self.g, self.P, self.q.bit_length()),
                            _FixedBase(self.h, self.P, self.q.bit_length()))
        return self._tables

    def mul(self, a, b):
        return a * b % self.P

    def inv(self, a):
        return int(gmpy2.invert(a, self.P))

    def exp(self, base, e):
        return int(gmpy2.powmod(base, e % self.q, self.P))

    def gexp(self, e):
        if self._use_tables:
            return self._fixed()[0].pow(e % self.q)
        return self.exp(self.g, e)

    def hexp(self, e):
        if self._use_tables:
            return self._fixed()[1].pow(e % self.q)
        return self.exp(self.h, e)

    def prod(self, elems):
        acc = gmpy2.mpz(1)
        for e in elems:
            acc = acc * e % self.P
        return int(acc)

    def is_element(self, a):
        return 0 < a < self.P and gmpy2.powmod(a, self.q, self.P) == 1

    def commit(self, x, r):
        """Pedersen commitment g^x h^r."""
        return self.gexp(x) * self.hexp(r) % self.P

    def elem_bytes(self, a):
        return a.to_bytes(self.nbytes, "big")

    def elem_from_bytes(self, b):
        return int.from_bytes(b, "big")

    def scalar_bytes(self, x):
        return self.field.to_bytes(x)


def production_group():
    return _PRODUCTION


def toy_group():
    """P = 23, q = 11, g = 4, h = 9; for hand-checkable examples only."""
    return _TOY


_PRODUCTION = Group(_P, _Q, hash_to_group(_P, _Q, G_TAG), hash_to_group(_P, _Q, H_TAG),
                    name="schnorr-2048-256")
_TOY = Group(23, 11, 4, 9, name="toy-23", fixed_base=False)


def commit(x, r, group=None):
    return (group or _PRODUCTION).commit(x, r)
