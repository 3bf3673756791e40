"""Message passing between agent parties and the MPC server.

Parties exchange :class:`Envelope` records whose payload is a tuple of
group elements; nothing else is expressible on the wire. Every delivered
message is appended to an :class:`AuditLog` that only the harness holding
the transport can read.

Two backends share one protocol implementation:

* :class:`SequentialTransport` runs every protocol round in the calling
  thread (deterministic, used by tests and the CLI by default);
* :class:`ConcurrentTransport` runs party-local work of a round on a thread
  pool and releases the next round only once all of it has been delivered.

Bulk traffic (all neighbor sessions of one simulation step) is sent as an
:class:`EnvelopeBatch`, a columnar block of envelopes sharing a round and kind.
"""

from __future__ import annotations

import enum
import io
import json
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .mpc import Modulus, ShareSet
from .rng import derive_key, sender_key, uniform_mod

SERVER = 0

PartyId = int


class TransportError(RuntimeError):
    pass


class UnknownPartyError(TransportError):
    pass


class RoundViolationError(TransportError):
    pass


class SessionAbortedError(TransportError):
    """A participant dropped out before share distribution; nothing was released."""


class Kind(enum.IntEnum):
    SHARE = 1
    PARTIAL_SUM = 2
    BROADCAST_PARAMS = 3
    RESULT = 4


@dataclass(frozen=True)
class Envelope:
    src: PartyId
    dst: PartyId
    round: int
    kind: Kind
    payload: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        payload = tuple(self.payload)
        for v in payload:
            # only group elements travel; floats, bools and records are rejected
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"envelope payload must hold group elements, got {type(v).__name__}")
            if not 0 <= int(v) < (1 << 64):
                raise ValueError("payload element outside uint64 range")
        object.__setattr__(self, "payload", tuple(int(v) for v in payload))

    def to_bytes(self) -> bytes:
        body = struct.pack("<QQQB", self.src, self.dst, self.round, int(self.kind))
        body += struct.pack("<Q", len(self.payload))
        body += struct.pack(f"<{len(self.payload)}Q", *self.payload)
        return struct.pack("<Q", len(body)) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        env, rest = cls.read_record(data)
        if rest:
            raise ValueError("trailing bytes after envelope record")
        return env

    @classmethod
    def read_record(cls, data: bytes) -> tuple["Envelope", bytes]:
        if len(data) < 8:
            raise ValueError("truncated record length")
        (length,) = struct.unpack_from("<Q", data, 0)
        body = data[8:8 + length]
        if len(body) != length or length < 33:
            raise ValueError("truncated envelope record")
        src, dst, rnd, kind, n = struct.unpack_from("<QQQBQ", body, 0)
        if length != 33 + 8 * n:
            raise ValueError("payload length disagrees with record length")
        payload = struct.unpack_from(f"<{n}Q", body, 33)
        return cls(src, dst, rnd, Kind(kind), payload), data[8 + length:]


def read_records(data: bytes) -> list[Envelope]:
    out = []
    while data:
        env, data = Envelope.read_record(data)
        out.append(env)
    return out


@dataclass
class EnvelopeBatch:
    """Columnar block of envelopes with a common round and kind."""

    round: int
    kind: Kind
    src: np.ndarray
    dst: np.ndarray
    payload: np.ndarray  # (rows, m) uint64

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.payload = np.asarray(self.payload, dtype=np.uint64)
        if self.payload.ndim != 2 or not (len(self.src) == len(self.dst) == len(self.payload)):
            raise ValueError("inconsistent envelope batch columns")

    def __len__(self) -> int:
        return len(self.src)

    def __iter__(self) -> Iterator[Envelope]:
        for s, d, row in zip(self.src.tolist(), self.dst.tolist(), self.payload.tolist()):
            yield Envelope(s, d, self.round, self.kind, tuple(row))

    def select(self, mask: np.ndarray) -> "EnvelopeBatch":
        return EnvelopeBatch(self.round, self.kind, self.src[mask], self.dst[mask], self.payload[mask])


class AuditLog:
    """Append-only record of delivered traffic."""

    def __init__(self):
        self._entries: list[Envelope | EnvelopeBatch] = []
        self._lock = threading.Lock()

    def append(self, item: Envelope | EnvelopeBatch) -> None:
        with self._lock:
            self._entries.append(item)

    def __iter__(self) -> Iterator[Envelope]:
        for item in list(self._entries):
            if isinstance(item, Envelope):
                yield item
            else:
                yield from item

    def __len__(self) -> int:
        return sum(1 if isinstance(e, Envelope) else len(e) for e in self._entries)

    def kinds(self) -> set[Kind]:
        return {e.kind for e in self._entries}

    def columns(self) -> dict[str, np.ndarray]:
        """All traffic as flat columns; payload rows are zero-padded, ``width`` holds each real length."""
        parts = []
        for item in self._entries:
            if isinstance(item, Envelope):
                item = EnvelopeBatch(item.round, item.kind, [item.src], [item.dst],
                                     np.array([item.payload], dtype=np.uint64).reshape(1, -1))
            parts.append(item)
        if not parts:
            empty = np.zeros(0, dtype=np.int64)
            return {"src": empty, "dst": empty, "round": empty, "kind": empty,
                    "payload": np.zeros((0, 0), dtype=np.uint64), "width": empty}
        width = max(b.payload.shape[1] for b in parts)
        payload = np.full((sum(len(b) for b in parts), width), np.uint64(0))
        widths = np.concatenate([np.full(len(b), b.payload.shape[1]) for b in parts])
        row = 0
        for b in parts:
            payload[row:row + len(b), :b.payload.shape[1]] = b.payload
            row += len(b)
        return {
            "src": np.concatenate([b.src for b in parts]),
            "dst": np.concatenate([b.dst for b in parts]),
            "round": np.concatenate([np.full(len(b), b.round) for b in parts]),
            "kind": np.concatenate([np.full(len(b), int(b.kind)) for b in parts]),
            "payload": payload,
            "width": widths,
        }

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        for env in self:
            buf.write(env.to_bytes())
        return buf.getvalue()


@dataclass
class SessionLayout:
    """A batch of independent SecureSum sessions run in the same rounds.

    ``members[offsets[s]:offsets[s + 1]]`` are the participants of session
    ``s``; ``reconstructor[s]`` receives the partial sums and
    ``extra_recipients[s]`` (optional) receive the reconstructed result.
    """

    offsets: np.ndarray
    members: np.ndarray
    reconstructor: np.ndarray
    extra_recipients: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.members = np.asarray(self.members, dtype=np.int64)
        self.reconstructor = np.asarray(self.reconstructor, dtype=np.int64)
        if self.offsets[-1] != len(self.members) or len(self.reconstructor) != len(self.offsets) - 1:
            raise ValueError("inconsistent session layout")
        sizes = np.diff(self.offsets)
        if (sizes < 1).any():
            raise ValueError("every session needs at least one participant")
        self.session_of = np.repeat(np.arange(len(sizes)), sizes)
        self.local_index = np.arange(len(self.members)) - self.offsets[self.session_of]
        pairs = np.stack([self.session_of, self.members], axis=1)
        if len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValueError("a party appears twice in one session")

    @property
    def n_sessions(self) -> int:
        return len(self.offsets) - 1

    def share_routes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(sender, recipient, keep) per row of the session share tensor; self-shares stay local."""
        sizes = np.diff(self.offsets)
        senders, recipients = [], []
        for n in np.unique(sizes):
            sess = np.nonzero(sizes == n)[0]
            mem = self.members[self.offsets[sess][:, None] + np.arange(n)[None, :]]
            senders.append((sess, np.repeat(mem, n, axis=1)))
            recipients.append((sess, np.tile(mem, (1, n))))
        starts = np.concatenate([[0], np.cumsum(sizes * sizes)])
        src = np.empty(starts[-1], dtype=np.int64)
        dst = np.empty(starts[-1], dtype=np.int64)
        for (sess, s_rows), (_, d_rows) in zip(senders, recipients):
            idx = (starts[sess][:, None] + np.arange(s_rows.shape[1])[None, :]).ravel()
            src[idx] = s_rows.ravel()
            dst[idx] = d_rows.ravel()
        return src, dst, src != dst


class Transport:
    """Sequential in-process backend; also the base class of the concurrent one."""

    backend = "sequential"

    def __init__(self, parties: Iterable[PartyId] = (), record: bool = True):
        self._parties: set[int] = set(int(p) for p in parties)
        self._dropped: set[int] = set()
        self._mail: dict[int, list[Envelope | EnvelopeBatch]] = {}
        self._next_round = 0
        self._closed_before = 0
        self._last_round: dict[int, int] = {}
        self._lock = threading.RLock()
        self.record = record
        self.audit = AuditLog()
        self.messages_sent = 0
        self.elements_sent = 0

    # -- membership ------------------------------------------------------
    def add_parties(self, parties: Iterable[PartyId]) -> None:
        self._parties.update(int(p) for p in parties)

    @property
    def parties(self) -> frozenset[int]:
        return frozenset(self._parties)

    def drop(self, party: PartyId) -> None:
        """Simulate a crash of ``party``; sessions involving it abort."""
        self._dropped.add(int(party))

    def is_live(self, party: PartyId) -> bool:
        return party in self._parties and party not in self._dropped

    def _check_party(self, party: int) -> None:
        if party not in self._parties:
            raise UnknownPartyError(f"unknown party {party}")

    # -- rounds ----------------------------------------------------------
    def open_round(self) -> int:
        with self._lock:
            r = self._next_round
            self._next_round += 1
            self._mail.setdefault(r, [])
            return r

    def close_round(self, rnd: int) -> None:
        with self._lock:
            self._mail.pop(rnd, None)
            self._closed_before = max(self._closed_before, rnd + 1)

    def _check_round(self, src: int, rnd: int) -> None:
        if rnd < self._closed_before:
            raise RoundViolationError(f"round {rnd} is already closed")
        if rnd < self._last_round.get(src, -1):
            raise RoundViolationError(f"party {src} sent round {rnd} after round {self._last_round[src]}")
        self._last_round[src] = rnd

    # -- delivery --------------------------------------------------------
    def send(self, env: Envelope) -> int:
        """Deliver one envelope; returns its sequence number within the round."""
        with self._lock:
            self._check_party(env.src)
            self._check_party(env.dst)
            self._check_round(env.src, env.round)
            box = self._mail.setdefault(env.round, [])
            box.append(env)
            self.messages_sent += 1
            self.elements_sent += len(env.payload)
            if self.record:
                self.audit.append(env)
            return len(box) - 1

    def send_batch(self, batch: EnvelopeBatch) -> None:
        if not len(batch):
            return
        with self._lock:
            ids = np.unique(np.concatenate([batch.src, batch.dst]))
            unknown = [int(i) for i in ids if int(i) not in self._parties]
            if unknown:
                raise UnknownPartyError(f"unknown parties {unknown[:5]}")
            if batch.round < self._closed_before:
                raise RoundViolationError(f"round {batch.round} is already closed")
            self._mail.setdefault(batch.round, []).append(batch)
            self.messages_sent += len(batch)
            self.elements_sent += batch.payload.size
            if self.record:
                self.audit.append(batch)

    def recv(self, to: PartyId, rnd: int) -> list[Envelope]:
        """All envelopes addressed to ``to`` in round ``rnd``, in send order."""
        self._check_party(to)
        out: list[Envelope] = []
        with self._lock:
            for item in self._mail.get(rnd, []):
                if isinstance(item, Envelope):
                    if item.dst == to:
                        out.append(item)
                else:
                    out.extend(item.select(item.dst == to))
        return out

    # -- protocol execution hooks -----------------------------------------
    def map_parties(self, fn, items: Sequence) -> list:
        """Run party-local work for one round; returns when all of it is done."""
        return [fn(item) for item in items]

    def compute_partials(self, keys: np.ndarray, offsets: np.ndarray, values: np.ndarray, p: int) -> np.ndarray:
        return kernels.session_partials(keys, offsets, values, p)


class SequentialTransport(Transport):
    pass


class ConcurrentTransport(Transport):
    """Round-barrier backend: party-local work of a round runs on a thread pool."""

    backend = "concurrent"

    def __init__(self, parties: Iterable[PartyId] = (), record: bool = True, workers: int = 4,
                 chunk: int = 64):
        super().__init__(parties, record)
        self.workers = workers
        self.chunk = chunk
        self._pool = ThreadPoolExecutor(max_workers=workers)

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def map_parties(self, fn, items: Sequence) -> list:
        futures = [self._pool.submit(fn, item) for item in items]
        # barrier: the round releases only once every party's work is delivered
        return [f.result() for f in futures]

    def compute_partials(self, keys, offsets, values, p):
        offsets = np.asarray(offsets, dtype=np.int64)
        n_sessions = len(offsets) - 1
        if n_sessions <= self.chunk:
            return kernels.session_partials(keys, offsets, values, p)
        out = np.zeros_like(np.asarray(values, dtype=np.uint64))
        bounds = list(range(0, n_sessions, self.chunk)) + [n_sessions]

        def work(span):
            a, b = span
            lo, hi = offsets[a], offsets[b]
            out[lo:hi] = kernels.session_partials(keys[a:b], offsets[a:b + 1] - lo, values[lo:hi], p)

        self.map_parties(work, list(zip(bounds[:-1], bounds[1:])))
        return out


def make_transport(backend: str = "sequential", parties: Iterable[PartyId] = (), record: bool = True,
                   **kwargs) -> Transport:
    if backend == "sequential":
        return SequentialTransport(parties, record)
    if backend == "concurrent":
        return ConcurrentTransport(parties, record, **kwargs)
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# SecureSum
# ---------------------------------------------------------------------------

def session_keys(base_key: int, count: int) -> np.ndarray:
    """Independent per-session keys derived from one protocol key."""
    idx = np.arange(count, dtype=np.uint64)
    return kernels.mix64(np.uint64(base_key) ^ kernels.mix64(idx + np.uint64(0x9E3779B97F4A7C15)))


def secure_sum_batch(transport: Transport, layout: SessionLayout, values: np.ndarray,
                     modulus: Modulus, key: int) -> np.ndarray:
    """Run every session of ``layout`` through the share, partial-sum and result rounds.

    ``values`` holds each participant's contribution, shape ``(len(members), m)``,
    already encoded in Z_p. Returns the reconstructed sum per session, shape
    ``(n_sessions, m)``, as held by each session's reconstructor.
    """
    p = modulus.p
    values = np.ascontiguousarray(values, dtype=np.uint64)
    if values.ndim == 1:
        values = values[:, None]
    if len(values) != len(layout.members):
        raise ValueError("one value row per session member required")
    if (values >= np.uint64(p)).any():
        raise ValueError("session inputs must be reduced mod p")

    down = [m for m in np.unique(layout.members).tolist() if not transport.is_live(m)]
    down += [r for r in np.unique(layout.reconstructor).tolist() if not transport.is_live(r)]
    if down:
        raise SessionAbortedError(f"parties {sorted(set(down))[:5]} unavailable; session aborted")

    keys = session_keys(key, layout.n_sessions)
    m = values.shape[1]

    share_round = transport.open_round()
    if transport.record:
        shares = kernels.session_shares(keys, layout.offsets, values, p)
        src, dst, keep = layout.share_routes()
        transport.send_batch(EnvelopeBatch(share_round, Kind.SHARE, src[keep], dst[keep], shares[keep]))
        # recipient-major regrouping: each participant sums the column addressed to it
        sizes = np.diff(layout.offsets)
        starts = np.concatenate([[0], np.cumsum(sizes * sizes)])
        n_of = sizes[layout.session_of]
        col_rows = (starts[layout.session_of][:, None]
                    + np.arange(n_of.max())[None, :] * n_of[:, None]
                    + layout.local_index[:, None])
        valid = np.arange(n_of.max())[None, :] < n_of[:, None]
        gathered = np.zeros((len(layout.members), n_of.max(), m), dtype=np.uint64)
        gathered[valid] = shares[col_rows[valid]]
        partials = kernels.group_mod_sum(gathered.reshape(-1, m),
                                         np.arange(0, gathered.shape[0] * gathered.shape[1] + 1,
                                                   gathered.shape[1]), p)
    else:
        transport.messages_sent += int((np.diff(layout.offsets) ** 2 - np.diff(layout.offsets)).sum())
        partials = transport.compute_partials(keys, layout.offsets, values, p)
    transport.close_round(share_round)

    partial_round = transport.open_round()
    recon = layout.reconstructor[layout.session_of]
    remote = layout.members != recon
    if transport.record:
        transport.send_batch(EnvelopeBatch(partial_round, Kind.PARTIAL_SUM, layout.members[remote],
                                           recon[remote], partials[remote]))
    else:
        transport.messages_sent += int(remote.sum())
    totals = kernels.group_mod_sum(partials, layout.offsets, p)
    transport.close_round(partial_round)

    if layout.extra_recipients:
        result_round = transport.open_round()
        for s, extra in sorted(layout.extra_recipients.items()):
            for r in extra:
                if r != layout.reconstructor[s]:
                    transport.send(Envelope(int(layout.reconstructor[s]), int(r), result_round,
                                            Kind.RESULT, tuple(int(v) for v in totals[s])))
        transport.close_round(result_round)
    return totals


def broadcast(transport: Transport, src: PartyId, recipients: Iterable[PartyId],
              payload: Sequence[int]) -> int:
    """Send the same group-element payload to every recipient in one round."""
    rnd = transport.open_round()
    recipients = np.fromiter(recipients, dtype=np.int64)
    rows = np.tile(np.asarray(payload, dtype=np.uint64), (len(recipients), 1))
    transport.send_batch(EnvelopeBatch(rnd, Kind.BROADCAST_PARAMS,
                                       np.full(len(recipients), src), recipients, rows))
    transport.close_round(rnd)
    return rnd


def _as_vector(v) -> list[int]:
    if isinstance(v, (int, np.integer)):
        return [int(v)]
    return [int(x) for x in v]


def run_secure_sum_session(transport: Transport, initiator: PartyId, participants: Sequence[PartyId],
                           local_values: Mapping[PartyId, int | Sequence[int]],
                           recipients: Sequence[PartyId], modulus: Modulus,
                           key: int | None = None) -> dict[PartyId, int | tuple[int, ...]]:
    """One SecureSum session; returns the result as held by each recipient.

    The initiator reconstructs when it is a recipient (otherwise the first
    recipient does) and forwards the result to the other recipients.
    """
    participants = [int(p) for p in participants]
    if not participants:
        raise ValueError("a session needs at least one participant")
    if len(set(participants)) != len(participants):
        raise ValueError("duplicate participant")
    recipients = [int(r) for r in recipients]
    if not recipients:
        raise ValueError("a session needs at least one recipient")
    for party in [*participants, *recipients, initiator]:
        transport._check_party(party)
    recon = initiator if initiator in recipients else recipients[0]
    rows = [_as_vector(local_values[p]) for p in participants]
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ValueError("all local values must have the same length")
    if key is None:
        key = derive_key("session", transport._next_round)
    extra = tuple(r for r in recipients if r != recon)
    layout = SessionLayout([0, len(participants)], participants, [recon],
                           {0: extra} if extra else {})
    values = np.array(rows, dtype=object)
    if any(not 0 <= v < modulus.p for r in rows for v in r):
        raise ValueError("local values must be group elements")
    if isinstance(transport, ConcurrentTransport):
        totals = _threaded_session(transport, layout, [list(r) for r in rows], modulus, key)
    else:
        totals = secure_sum_batch(transport, layout, values.astype(np.uint64), modulus, key)[0].tolist()
    result = tuple(int(v) for v in totals)
    scalar = all(isinstance(local_values[p], (int, np.integer)) for p in participants)
    return {r: (result[0] if scalar else result) for r in recipients}


def _threaded_session(transport: ConcurrentTransport, layout: SessionLayout, rows: list[list[int]],
                      modulus: Modulus, key: int) -> list[int]:
    """One session with a thread per party and an explicit barrier between rounds."""
    p = modulus.p
    members = layout.members.tolist()
    recon = int(layout.reconstructor[0])
    n, m = len(members), len(rows[0])
    dead = [q for q in [*members, recon] if not transport.is_live(q)]
    if dead:
        raise SessionAbortedError(f"parties {sorted(set(dead))[:5]} unavailable; session aborted")
    skey = int(session_keys(key, 1)[0])
    share_round = transport.open_round()
    partial_round = transport.open_round()
    barrier = threading.Barrier(n)
    results: dict[str, list[int]] = {}

    def party(q: int) -> None:
        me = members[q]
        k = sender_key(skey, q)
        draws = [[uniform_mod(k, r * m + c, p) for c in range(m)] for r in range(n - 1)]
        resid = [(rows[q][c] - sum(d[c] for d in draws)) % p for c in range(m)]
        mine = draws + [resid]
        for r, dst in enumerate(members):
            if dst != me:
                transport.send(Envelope(me, dst, share_round, Kind.SHARE, tuple(mine[r])))
        barrier.wait()
        got = [env.payload for env in transport.recv(me, share_round) if env.src in members]
        sigma = [(mine[q][c] + sum(g[c] for g in got)) % p for c in range(m)]
        if me == recon:
            results["own"] = sigma
        else:
            transport.send(Envelope(me, recon, partial_round, Kind.PARTIAL_SUM, tuple(sigma)))
        barrier.wait()

    errors: list[BaseException] = []

    def guarded(q: int) -> None:
        try:
            party(q)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)
            barrier.abort()

    # one thread per party: the barrier needs all of them alive at once
    threads = [threading.Thread(target=guarded, args=(q,), daemon=True) for q in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise SessionAbortedError("party failure during session") from errors[0]
    transport.close_round(share_round)
    partials = [env.payload for env in transport.recv(recon, partial_round)]
    if "own" in results:
        partials.append(tuple(results["own"]))
    total = [sum(pp[c] for pp in partials) % p for c in range(m)]
    transport.close_round(partial_round)
    extra = layout.extra_recipients.get(0, ())
    if extra:
        rnd = transport.open_round()
        for r in extra:
            transport.send(Envelope(recon, r, rnd, Kind.RESULT, tuple(total)))
        transport.close_round(rnd)
    return total


def exchange_share_sets(transport: Transport, share_sets: Mapping[PartyId, ShareSet],
                        reconstructor: PartyId) -> tuple[dict[PartyId, int], int]:
    """Run the share and partial-sum rounds for precomputed, addressed share sets.

    Each participant keeps the share addressed to itself, sends the rest,
    sums what it holds and sends that partial sum to ``reconstructor``.
    Returns the partial sums by party and the reconstructed total.
    """
    parties = sorted(share_sets)
    p = next(iter(share_sets.values())).modulus.p
    for owner, ss in share_sets.items():
        if set(ss.shares) != set(parties):
            raise ValueError(f"share set of {owner} is not addressed to every participant")
    share_round = transport.open_round()
    for owner in parties:
        for dst, v in sorted(share_sets[owner].shares.items()):
            if dst != owner:
                transport.send(Envelope(owner, dst, share_round, Kind.SHARE, (int(v),)))
    partials = {}
    for me in parties:
        got = [env.payload[0] for env in transport.recv(me, share_round)]
        partials[me] = (share_sets[me].shares[me] + sum(got)) % p
    transport.close_round(share_round)
    partial_round = transport.open_round()
    for me in parties:
        if me != reconstructor:
            transport.send(Envelope(me, reconstructor, partial_round, Kind.PARTIAL_SUM, (partials[me],)))
    received = [env.payload[0] for env in transport.recv(reconstructor, partial_round)]
    own = partials.get(reconstructor, 0)
    transport.close_round(partial_round)
    return partials, (own + sum(received)) % p


# ---------------------------------------------------------------------------
# socket-mode session manifest
# ---------------------------------------------------------------------------

def write_manifest(path: str | Path, parties: Sequence[PartyId], base_port: int = 47000,
                   host: str = "127.0.0.1", modulus: Modulus | None = None) -> dict:
    """Session manifest for the optional local-socket mode: one port per party."""
    manifest = {
        "format": "secureabm-session/1",
        "record": {"length_prefix": "u64le", "ids": "u64le", "round": "u64le",
                   "kind": "u8", "payload": "u64le-count-then-values"},
        "kinds": {k.name.lower().replace("_", "-"): int(k) for k in Kind},
        "modulus": (modulus or Modulus()).p,
        "parties": [{"id": int(pid), "host": host, "port": base_port + i} for i, pid in enumerate(parties)],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("format") != "secureabm-session/1":
        raise ValueError("not a secureabm session manifest")
    ids = [p["id"] for p in manifest["parties"]]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate party id in manifest")
    return manifest
