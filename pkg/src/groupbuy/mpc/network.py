"""In-process loopback transport with framed messages and per-party transcripts.

Frame layout (big-endian):
    type:u8 | sender:u16 | session:16 bytes | round:u32 | length:u32 | payload
Broadcasts are counted once in the byte statistics (as sent), point-to-point
messages once per receiver.
"""

import json
import struct
from collections import defaultdict

HEADER = struct.Struct(">BH16sII")

MSG_TYPES = {
    "input": 1,
    "commit": 2,
    "open": 3,
    "coin_commit": 4,
    "coin_open": 5,
    "mac_commit": 6,
    "mac_open": 7,
    "announce": 8,
    "proof": 9,
    "signature": 10,
}
MSG_NAMES = {v: k for k, v in MSG_TYPES.items()}


class TransportError(Exception):
    """A party failed to deliver a message for the current round."""


def encode_frame(kind, sender, session, rnd, payload):
    return HEADER.pack(MSG_TYPES[kind], sender, session, rnd, len(payload)) + payload


def decode_frame(data):
    t, sender, session, rnd, n = HEADER.unpack_from(data)
    payload = data[HEADER.size:HEADER.size + n]
    if len(payload) != n:
        raise ValueError("truncated frame")
    return MSG_NAMES[t], sender, session, rnd, payload


class Network:
    def __init__(self, n, session_id, keep_log=True):
        if len(session_id) != 16:
            raise ValueError("session id must be 16 bytes")
        self.n = n
        self.session = session_id
        self.round = 0
        self.stage = "init"
        self.bytes = defaultdict(int)
        self.msgs = defaultdict(int)
        self.keep_log = keep_log
        # per receiver: list of raw frames it received
        self.inbox = [[] for _ in range(n)]
        self.log = []

    def set_stage(self, stage):
        self.stage = stage

    def _record(self, frame, sender, receivers):
        if not self.keep_log:
            return
        for r in receivers:
            self.inbox[r].append(frame)
        self.log.append({"round": self.round, "stage": self.stage, "from": sender,
                         "to": receivers if len(receivers) != self.n - 1 else "all",
                         "frame": frame.hex()})

    def exchange(self, kind, payloads):
        """One round where every party broadcasts ``payloads[i]``.

        Returns the payloads as decoded by the receivers. ``None`` marks a
        party that stayed silent, which the receivers treat as a timeout."""
        self.round += 1
        out = []
        for sender, p in enumerate(payloads):
            if p is None:
                raise TransportError(f"party {sender} sent nothing in round {self.round} ({kind})")
            frame = encode_frame(kind, sender, self.session, self.round, p)
            self.bytes[self.stage] += len(frame)
            self.msgs[self.stage] += 1
            self._record(frame, sender, [r for r in range(self.n) if r != sender])
            out.append(decode_frame(frame)[4])
        return out

    def broadcast(self, sender, kind, payload):
        """A single party broadcasts; returns the delivered payload."""
        self.round += 1
        if payload is None:
            raise TransportError(f"party {sender} sent nothing in round {self.round} ({kind})")
        frame = encode_frame(kind, sender, self.session, self.round, payload)
        self.bytes[self.stage] += len(frame)
        self.msgs[self.stage] += 1
        self._record(frame, sender, [r for r in range(self.n) if r != sender])
        return decode_frame(frame)[4]

    def send(self, sender, receiver, kind, payload):
        self.round += 1
        if payload is None:
            raise TransportError(f"party {sender} sent nothing in round {self.round} ({kind})")
        frame = encode_frame(kind, sender, self.session, self.round, payload)
        self.bytes[self.stage] += len(frame)
        self.msgs[self.stage] += 1
        self._record(frame, sender, [receiver])
        return decode_frame(frame)[4]

    def received_bytes(self, party):
        return b"".join(self.inbox[party])

    def write_log(self, path):
        with open(path, "w") as f:
            for rec in self.log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def stats(self):
        return {"bytes": dict(self.bytes), "messages": dict(self.msgs), "rounds": self.round}
