"""Secure population statistics: indicator counts, histograms and sensitivities.

An indicator is a conjunction of atomic conditions over agent fields,
serialized as JSON so the server can broadcast it and the audit log can
record it. Each agent evaluates the indicator on its own record and the
server learns only the SecureSum of the results.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .engine import AgentRecord
from .mpc import FixedPointCodec
from .rng import derive_key
from .transport import (Envelope, Kind, SessionLayout, Transport, make_transport,
                        secure_sum_batch)

STATUS_NAMES = {"susceptible": 0, "infected": 1, "recovered": 2}
FIELDS = {
    "status": "numeric",
    "age": "numeric",
    "susceptibility": "numeric",
    "compliance": "numeric",
    "ethnicity": "categorical",
    "zip_sector": "categorical",
}
OPS = ("eq", "in", "range")


class IndicatorError(ValueError):
    pass


class PreconditionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Condition:
    field: str
    op: str
    value: Any

    def validate(self) -> None:
        if self.field not in FIELDS:
            raise IndicatorError(f"unknown field {self.field!r}; known: {sorted(FIELDS)}")
        if self.op not in OPS:
            raise IndicatorError(f"unknown operator {self.op!r}")
        if self.op == "range":
            if FIELDS[self.field] != "numeric":
                raise IndicatorError(f"range condition on categorical field {self.field!r}")
            lo, hi = self.value
            if not lo < hi:
                raise IndicatorError(f"empty range [{lo}, {hi})")
        if self.op == "in" and not isinstance(self.value, (list, tuple)):
            raise IndicatorError("'in' needs a list of values")

    def to_dict(self) -> dict:
        v = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"field": self.field, "op": self.op, "value": v}


def _status_value(v):
    return STATUS_NAMES.get(v, v) if isinstance(v, str) else v


@dataclass(frozen=True)
class IndicatorSpec:
    """Conjunction of conditions; the empty conjunction is always true."""

    conditions: tuple[Condition, ...] = ()

    def __post_init__(self):
        for c in self.conditions:
            c.validate()

    @classmethod
    def parse(cls, data: list | dict | str) -> "IndicatorSpec":
        if isinstance(data, str):
            data = json.loads(data)
        if isinstance(data, dict):
            data = data.get("all", [])
        conds = []
        for item in data:
            try:
                conds.append(Condition(item["field"], item["op"],
                                       tuple(item["value"]) if isinstance(item["value"], list) else item["value"]))
            except (KeyError, TypeError) as exc:
                raise IndicatorError(f"malformed condition {item!r}") from exc
        return cls(tuple(conds))

    def to_json(self) -> str:
        return json.dumps({"all": [c.to_dict() for c in self.conditions]}, sort_keys=True)

    def __and__(self, other: "IndicatorSpec") -> "IndicatorSpec":
        return IndicatorSpec(self.conditions + other.conditions)

    def evaluate(self, agents: Sequence[AgentRecord]) -> np.ndarray:
        """Each agent's own 0/1 value of the indicator."""
        cols = _agent_columns(agents)
        out = np.ones(len(agents), dtype=bool)
        for c in self.conditions:
            col = cols[c.field]
            if c.op == "eq":
                v = _status_value(c.value) if c.field == "status" else c.value
                out &= col == v
            elif c.op == "in":
                vals = [_status_value(v) if c.field == "status" else v for v in c.value]
                out &= np.isin(col, np.array(vals, dtype=col.dtype))
            else:
                lo, hi = c.value
                out &= (col >= lo) & (col < hi)
        return out.astype(np.int64)


def infected() -> IndicatorSpec:
    return IndicatorSpec((Condition("status", "eq", 1),))


def ever_infected() -> IndicatorSpec:
    return IndicatorSpec((Condition("status", "in", (1, 2)),))


def _agent_columns(agents: Sequence[AgentRecord]) -> dict[str, np.ndarray]:
    state = np.array([a.state if a.state is not None else (0.0, 0.0) for a in agents], dtype=float).reshape(len(agents), -1)
    return {
        "status": state[:, 0],
        "compliance": state[:, 1] if state.shape[1] > 1 else np.zeros(len(agents)),
        "age": np.array([a.attributes.get("age", math.nan) for a in agents], dtype=float),
        "susceptibility": np.array([a.attributes.get("susceptibility", 1.0) for a in agents], dtype=float),
        "ethnicity": np.array([a.attributes.get("ethnicity", "") for a in agents], dtype=object),
        "zip_sector": np.array([a.attributes.get("zip_sector", "") for a in agents], dtype=object),
    }


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def _text_payload(text: str) -> tuple[int, ...]:
    """Bytes of ``text`` packed 7 per group element, prefixed with the byte length."""
    raw = text.encode()
    return (len(raw), *(int.from_bytes(raw[i:i + 7], "little") for i in range(0, len(raw), 7)))


def payload_text(payload: Sequence[int]) -> str:
    n, words = payload[0], payload[1:]
    raw = b"".join(int(w).to_bytes(7, "little") for w in words)
    return raw[:n].decode()


def _broadcast_definition(transport: Transport, server: int, ids: Sequence[int], text: str) -> None:
    rnd = transport.open_round()
    payload = _text_payload(text)
    for i in ids:
        transport.send(Envelope(server, int(i), rnd, Kind.BROADCAST_PARAMS, payload))
    transport.close_round(rnd)


def _transport_for(transport, server, agents):
    if transport is not None:
        return transport
    return make_transport("sequential", [server, *(a.id for a in agents)], record=False)


def _secure_counts(transport, server, agents, columns: np.ndarray, codec: FixedPointCodec, key: int) -> np.ndarray:
    """One session per column of ``columns`` (N, S); every agent shares its own entries."""
    n, s = columns.shape
    ids = np.array([a.id for a in agents], dtype=np.int64)
    layout = SessionLayout(np.arange(s + 1) * n, np.tile(ids, s), np.full(s, server))
    values = (columns.T.reshape(-1, 1) % codec.modulus.p).astype(np.uint64)
    return secure_sum_batch(transport, layout, values, codec.modulus, key)[:, 0]


def secure_summary_statistic(server: int, agents: Sequence[AgentRecord], indicator: IndicatorSpec,
                             transport: Transport | None = None, codec: FixedPointCodec | None = None,
                             seed: int = 0) -> int:
    """Number of agents satisfying ``indicator``; the server sees only the sum."""
    if not isinstance(indicator, IndicatorSpec):
        indicator = IndicatorSpec.parse(indicator)
    codec = codec or FixedPointCodec()
    transport = _transport_for(transport, server, agents)
    _broadcast_definition(transport, server, [a.id for a in agents], indicator.to_json())
    local = indicator.evaluate(agents)[:, None]
    return int(_secure_counts(transport, server, agents, local, codec,
                              derive_key("statistic", seed, indicator.to_json()))[0])


@dataclass
class Histogram:
    dimension: str
    bins: list
    counts: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def labels(self) -> list[str]:
        return [f"[{b[0]:g},{b[1]:g})" if isinstance(b, tuple) else str(b) for b in self.bins]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "count"])
        for label, c in zip(self.labels(), self.counts):
            w.writerow([label, c])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"dimension": self.dimension, "bins": self.labels(), "counts": self.counts}, indent=1)

    def sector_table(self) -> str:
        """(sector, count) rows for map tooling; only meaningful for zip_sector."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sector", "count"])
        for b, c in zip(self.bins, self.counts):
            w.writerow([b, c])
        return buf.getvalue()


def validate_bins(dimension: str, bins: Sequence) -> list:
    if dimension not in FIELDS:
        raise IndicatorError(f"unknown field {dimension!r}")
    if not bins:
        raise IndicatorError("histogram needs at least one bin")
    if FIELDS[dimension] == "numeric" and dimension != "status":
        ranges = [tuple(float(v) for v in b) for b in bins]
        for lo, hi in ranges:
            if not lo < hi:
                raise IndicatorError(f"empty bin [{lo}, {hi})")
        for (lo1, hi1), (lo2, hi2) in zip(ranges, ranges[1:]):
            if lo2 < hi1:
                raise IndicatorError(f"overlapping bins [{lo1}, {hi1}) and [{lo2}, {hi2})")
            if lo2 > hi1:
                raise IndicatorError(f"gap between bins at [{hi1}, {lo2})")
        return ranges
    if len(set(bins)) != len(bins):
        raise IndicatorError("duplicate categorical bin")
    return list(bins)


def _bin_condition(dimension: str, b) -> Condition:
    if isinstance(b, tuple):
        return Condition(dimension, "range", b)
    return Condition(dimension, "eq", b)


DEFAULT_AGE_BINS = [(0, 10), (10, 20), (20, 30), (30, 40), (40, 50), (50, 60), (60, 70), (70, 80), (80, math.inf)]


def secure_histogram(server: int, agents: Sequence[AgentRecord], dimension: str, bins: Sequence,
                     base: IndicatorSpec | None = None, transport: Transport | None = None,
                     codec: FixedPointCodec | None = None, seed: int = 0) -> Histogram:
    """Counts of ``base`` (default: currently infected) per bin, one SecureSum session per bin."""
    bins = validate_bins(dimension, bins)
    base = infected() if base is None else base
    indicators = [base & IndicatorSpec((_bin_condition(dimension, b),)) for b in bins]
    codec = codec or FixedPointCodec()
    transport = _transport_for(transport, server, agents)
    ids = [a.id for a in agents]
    _broadcast_definition(transport, server, ids, json.dumps([json.loads(i.to_json()) for i in indicators]))
    local = np.stack([ind.evaluate(agents) for ind in indicators], axis=1)
    counts = _secure_counts(transport, server, agents, local, codec,
                            derive_key("histogram", seed, dimension))
    return Histogram(dimension, bins, [int(c) for c in counts])


def secure_sensitivity(server: int, agents: Sequence[AgentRecord], indicator: IndicatorSpec,
                       transport: Transport | None = None, codec: FixedPointCodec | None = None,
                       seed: int = 0) -> np.ndarray:
    """Sum over agents in Omega of their latest stored parameter gradient."""
    if not agents:
        raise PreconditionError("empty population")
    empty = [a.id for a in agents if not a.grad_store]
    if empty:
        raise PreconditionError(f"agents {empty[:5]} have no stored gradient; run a simulation step first")
    codec = codec or FixedPointCodec()
    transport = _transport_for(transport, server, agents)
    _broadcast_definition(transport, server, [a.id for a in agents], indicator.to_json())
    mask = indicator.evaluate(agents).astype(float)
    grads = np.array([np.atleast_1d(a.grad_store[-1]) for a in agents], dtype=float)
    contrib = grads * mask[:, None]
    n, k = contrib.shape
    ids = np.array([a.id for a in agents], dtype=np.int64)
    layout = SessionLayout([0, n], ids, [server])
    totals = secure_sum_batch(transport, layout, codec.encode_array(contrib), codec.modulus,
                              derive_key("sensitivity", seed, indicator.to_json()))
    return codec.decode_array(totals[0])


def random_indicator(rng: np.random.Generator, agents: Sequence[AgentRecord], max_terms: int = 3) -> IndicatorSpec:
    """Random conjunction over the population schema, for oracle tests."""
    cols = _agent_columns(agents)
    conds = []
    for fld in rng.choice(list(FIELDS), size=rng.integers(1, max_terms + 1), replace=False):
        col = cols[fld]
        if fld in ("ethnicity", "zip_sector"):
            cats = sorted(set(col.tolist()))
            if rng.random() < 0.5:
                conds.append(Condition(fld, "eq", cats[rng.integers(len(cats))]))
            else:
                pick = rng.choice(len(cats), size=min(len(cats), rng.integers(1, 4)), replace=False)
                conds.append(Condition(fld, "in", tuple(cats[i] for i in sorted(pick))))
        elif fld in ("status", "compliance"):
            vals = (0, 1, 2) if fld == "status" else (0, 1)
            conds.append(Condition(fld, "eq", int(rng.choice(vals))))
        else:
            lo = float(np.floor(rng.uniform(np.nanmin(col), np.nanmax(col) + 1)))
            conds.append(Condition(fld, "range", (lo, lo + float(rng.integers(1, 40)))))
    return IndicatorSpec(tuple(conds))
