"""Synthetic agent populations and their contact graphs.

The generator stands in for a census-derived city graph: agents live in
households, and school-age or employed agents additionally join one class
or workplace. The contact graph is the union of cliques over those groups.
All default distributions are synthetic toy values with a student-heavy
20-30 age band; they are not census data.

On disk a population is two files in one directory:

``agents.jsonl``
    one JSON object per line: ``id``, ``age``, ``ethnicity``,
    ``zip_sector``, ``susceptibility``; sorted by id.
``edges.csv``
    header ``source,target`` (optionally ``,weight``); each undirected edge
    once with ``source < target``. A file may instead list both directions
    of every edge, but then it must be fully symmetric.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import AgentRecord

ETHNICITY_CATEGORIES = ("White", "Mixed", "Asian", "Black", "Other")


class PopulationError(ValueError):
    """Invalid population spec or malformed population file."""


class AsymmetricEdgeError(PopulationError):
    pass


def _default_ages():
    return [(0, 5, 0.05), (5, 18, 0.13), (18, 20, 0.06), (20, 30, 0.25),
            (30, 45, 0.18), (45, 65, 0.20), (65, 90, 0.13)]


def _default_zips():
    return {f"OX{d} {s}": w for (d, s, w) in [
        (1, 1, 0.10), (1, 2, 0.09), (1, 3, 0.06), (1, 4, 0.07), (2, 6, 0.08), (2, 7, 0.07),
        (3, 7, 0.08), (3, 9, 0.06), (4, 1, 0.10), (4, 2, 0.08), (4, 3, 0.11), (4, 4, 0.10)]}


@dataclass
class PopulationSpec:
    """Distributions driving :func:`generate_population`. Weights are normalized on validation."""

    n_agents: int = 1000
    household_sizes: dict[int, float] = field(
        default_factory=lambda: {1: 0.29, 2: 0.35, 3: 0.16, 4: 0.14, 5: 0.06})
    workplace_sizes: dict[int, float] = field(
        default_factory=lambda: {2: 0.2, 5: 0.3, 10: 0.3, 20: 0.2})
    school_sizes: dict[int, float] = field(default_factory=lambda: {15: 0.3, 25: 0.5, 30: 0.2})
    age_bins: list[tuple[int, int, float]] = field(default_factory=_default_ages)
    ethnicity_weights: dict[str, float] = field(
        default_factory=lambda: {"White": 0.77, "Mixed": 0.04, "Asian": 0.11, "Black": 0.04, "Other": 0.04})
    zip_sectors: dict[str, float] = field(default_factory=_default_zips)
    school_age: tuple[int, int] = (5, 18)
    work_age: tuple[int, int] = (18, 65)
    employment_rate: float = 0.75
    susceptibility: float = 1.0
    # total school places to fill; None means every school-age agent is enrolled
    school_capacity: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationSpec":
        data = dict(data)
        for key in ("household_sizes", "workplace_sizes", "school_sizes"):
            if key in data:
                data[key] = {int(k): float(v) for k, v in data[key].items()}
        if "age_bins" in data:
            data["age_bins"] = [tuple(b) for b in data["age_bins"]]
        for key in ("school_age", "work_age"):
            if key in data:
                data[key] = tuple(data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise PopulationError(f"unknown population spec fields: {sorted(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if self.n_agents < 1:
            raise PopulationError("n_agents must be >= 1")
        for name in ("household_sizes", "workplace_sizes", "school_sizes", "ethnicity_weights", "zip_sectors"):
            dist = getattr(self, name)
            if not dist or any(w < 0 for w in dist.values()) or sum(dist.values()) <= 0:
                raise PopulationError(f"{name} must be a non-empty non-negative distribution")
        for name in ("household_sizes", "workplace_sizes", "school_sizes"):
            if any(int(k) < 1 for k in getattr(self, name)):
                raise PopulationError(f"{name} keys must be positive group sizes")
        unknown = set(self.ethnicity_weights) - set(ETHNICITY_CATEGORIES)
        if unknown:
            raise PopulationError(f"unknown ethnicity categories {sorted(unknown)}")
        if not self.age_bins or any(lo >= hi or w < 0 for lo, hi, w in self.age_bins):
            raise PopulationError("age bins must be non-empty (lo, hi, weight) with lo < hi")
        if not 0 <= self.employment_rate <= 1:
            raise PopulationError("employment_rate must lie in [0, 1]")
        if self.school_capacity is not None and self.school_capacity < 0:
            raise PopulationError("school_capacity must be >= 0")
        if self.susceptibility < 0:
            raise PopulationError("susceptibility must be >= 0")


def _normalized(dist: dict) -> tuple[list, np.ndarray]:
    keys = list(dist)
    w = np.array([dist[k] for k in keys], dtype=float)
    return keys, w / w.sum()


@dataclass
class ContactGraph:
    """Symmetric adjacency over agent positions ``0..n-1`` in CSR form."""

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Undirected edges as rows ``(i, j)`` with ``i < j``, sorted."""
        src = np.repeat(np.arange(self.n_nodes), self.degrees)
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "ContactGraph":
        """Build from undirected pairs; duplicates merge, self-loops are rejected."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if (edges[:, 0] == edges[:, 1]).any():
            raise PopulationError("self-loop in contact graph")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise PopulationError("edge endpoint outside population")
        a, b = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
        w = None if weights is None else np.asarray(weights, dtype=float)
        code = a * n + b
        code, first = np.unique(code, return_index=True)
        a, b = code // n, code % n
        if w is not None:
            w = w[first]
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        ww = None if w is None else np.concatenate([w, w])[order]
        return cls(indptr, dst, ww)

    @classmethod
    def complete(cls, n: int) -> "ContactGraph":
        idx = np.arange(n)
        indices = np.concatenate([np.delete(idx, i) for i in range(n)]) if n > 1 else np.zeros(0, np.int64)
        return cls(np.arange(n + 1) * (n - 1), indices)

    def is_symmetric(self) -> bool:
        src = np.repeat(np.arange(self.n_nodes), self.degrees)
        fwd = np.sort(src * self.n_nodes + self.indices)
        rev = np.sort(self.indices * self.n_nodes + src)
        return bool(np.array_equal(fwd, rev)) and not (src == self.indices).any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContactGraph):
            return NotImplemented
        same_w = (self.weights is None and other.weights is None) or (
            self.weights is not None and other.weights is not None
            and np.array_equal(self.weights, other.weights))
        return (np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices) and same_w)


def _clique_edges(members: np.ndarray) -> np.ndarray:
    if len(members) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    i, j = np.triu_indices(len(members), k=1)
    return np.column_stack([members[i], members[j]])


def _chunk(members: np.ndarray, sizes_dist: dict[int, float], rng: np.random.Generator) -> list[np.ndarray]:
    sizes, w = _normalized(sizes_dist)
    groups, start = [], 0
    while start < len(members):
        size = int(sizes[rng.choice(len(sizes), p=w)])
        groups.append(members[start:start + size])
        start += size
    return groups


def agents_from_graph(attrs: Sequence[dict], graph: ContactGraph, first_id: int = 1) -> list[AgentRecord]:
    agents = []
    for pos, a in enumerate(attrs):
        nbr = graph.neighbors(pos)
        w = None if graph.weights is None else tuple(graph.weights[graph.indptr[pos]:graph.indptr[pos + 1]].tolist())
        agents.append(AgentRecord(
            id=first_id + pos,
            neighbors=tuple(int(first_id + j) for j in nbr),
            attributes=dict(a),
            edge_weights=w,
        ))
    return agents


def generate_population(spec: PopulationSpec | None = None, seed: int = 0
                        ) -> tuple[list[AgentRecord], ContactGraph]:
    """Sample demographics and build the household/school/workplace contact graph.

    Agents receive ids ``1..n`` (party 0 is the MPC server); graph positions
    are ``id - 1``.
    """
    spec = spec or PopulationSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.n_agents

    bins = np.array([(lo, hi) for lo, hi, _ in spec.age_bins])
    bw = np.array([w for *_, w in spec.age_bins], dtype=float)
    which = rng.choice(len(bins), size=n, p=bw / bw.sum())
    ages = rng.integers(bins[which, 0], bins[which, 1])

    cats, cw = _normalized(spec.ethnicity_weights)
    ethnicity = np.asarray(cats, dtype=object)[rng.choice(len(cats), size=n, p=cw)]

    school = np.nonzero((ages >= spec.school_age[0]) & (ages < spec.school_age[1]))[0]
    if spec.school_capacity is not None and spec.school_capacity > len(school):
        raise PopulationError(
            f"school capacity {spec.school_capacity} exceeds school-age population {len(school)}")

    edges = []
    households = _chunk(rng.permutation(n), spec.household_sizes, rng)
    zips, zw = _normalized(spec.zip_sectors)
    zip_of = np.empty(n, dtype=object)
    for hh in households:
        zip_of[hh] = zips[rng.choice(len(zips), p=zw)]
        edges.append(_clique_edges(hh))
    enrolled = rng.permutation(school)
    if spec.school_capacity is not None:
        enrolled = enrolled[:spec.school_capacity]
    for group in _chunk(enrolled, spec.school_sizes, rng):
        edges.append(_clique_edges(group))
    workers = np.nonzero((ages >= spec.work_age[0]) & (ages < spec.work_age[1]))[0]
    workers = workers[rng.random(len(workers)) < spec.employment_rate]
    for group in _chunk(rng.permutation(workers), spec.workplace_sizes, rng):
        edges.append(_clique_edges(group))

    graph = ContactGraph.from_edges(n, np.concatenate(edges) if edges else np.zeros((0, 2)))
    attrs = [
        {"age": int(ages[i]), "ethnicity": str(ethnicity[i]), "zip_sector": str(zip_of[i]),
         "susceptibility": float(spec.susceptibility)}
        for i in range(n)
    ]
    return agents_from_graph(attrs, graph), graph


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

_AGENT_FIELDS = ("id", "age", "ethnicity", "zip_sector", "susceptibility")


def save_population(agents: Sequence[AgentRecord], graph: ContactGraph, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ordered = sorted(agents, key=lambda a: a.id)
    with open(path / "agents.jsonl", "w", newline="\n") as fh:
        for a in ordered:
            row = {"id": a.id, **{k: a.attributes[k] for k in _AGENT_FIELDS[1:]}}
            fh.write(json.dumps(row, sort_keys=False) + "\n")
    ids = np.array([a.id for a in ordered])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    weighted = graph.weights is not None
    writer.writerow(["source", "target", "weight"] if weighted else ["source", "target"])
    src = np.repeat(np.arange(graph.n_nodes), graph.degrees)
    keep = src < graph.indices
    for k in np.nonzero(keep)[0]:
        row = [int(ids[src[k]]), int(ids[graph.indices[k]])]
        if weighted:
            row.append(repr(float(graph.weights[k])))
        writer.writerow(row)
    (path / "edges.csv").write_text(buf.getvalue())


def _parse_agent(line: str, lineno: int) -> dict:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PopulationError(f"agents.jsonl line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(row, dict):
        raise PopulationError(f"agents.jsonl line {lineno}: expected an object")
    missing = [k for k in _AGENT_FIELDS if k not in row]
    if missing:
        raise PopulationError(f"agents.jsonl line {lineno}: missing fields {missing}")
    if row["ethnicity"] not in ETHNICITY_CATEGORIES:
        raise PopulationError(f"agents.jsonl line {lineno}: unknown ethnicity category {row['ethnicity']!r}")
    if not isinstance(row["id"], int) or row["id"] < 1:
        raise PopulationError(f"agents.jsonl line {lineno}: id must be a positive integer")
    if not isinstance(row["age"], (int, float)) or row["age"] < 0:
        raise PopulationError(f"agents.jsonl line {lineno}: invalid age")
    if not isinstance(row["susceptibility"], (int, float)) or row["susceptibility"] < 0:
        raise PopulationError(f"agents.jsonl line {lineno}: invalid susceptibility")
    return row


def load_population(path: str | Path) -> tuple[list[AgentRecord], ContactGraph]:
    path = Path(path)
    rows = []
    with open(path / "agents.jsonl") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                rows.append(_parse_agent(line, lineno))
    rows.sort(key=lambda r: r["id"])
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise PopulationError("agents.jsonl: duplicate agent id")
    pos = {aid: i for i, aid in enumerate(ids)}

    pairs, weights = [], []
    with open(path / "edges.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header not in (["source", "target"], ["source", "target", "weight"]):
            raise PopulationError("edges.csv line 1: header must be source,target[,weight]")
        weighted = len(header) == 3
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise PopulationError(f"edges.csv line {lineno}: expected {len(header)} fields")
            try:
                a, b = int(rec[0]), int(rec[1])
                w = float(rec[2]) if weighted else None
            except ValueError:
                raise PopulationError(f"edges.csv line {lineno}: non-numeric field") from None
            if a not in pos or b not in pos:
                raise PopulationError(f"edges.csv line {lineno}: unknown agent id")
            if a == b:
                raise PopulationError(f"edges.csv line {lineno}: self-loop")
            pairs.append((a, b, lineno))
            weights.append(w)

    directed = {(a, b) for a, b, _ in pairs}
    if any(a > b for a, b, _ in pairs) or len(directed) != len(pairs):
        # a two-direction listing: every edge must appear both ways
        for a, b, lineno in pairs:
            if (b, a) not in directed:
                raise AsymmetricEdgeError(f"edges.csv line {lineno}: edge ({a},{b}) has no reverse ({b},{a})")
        keep = [k for k, (a, b, _) in enumerate(pairs) if a < b]
    else:
        keep = list(range(len(pairs)))
    edge_arr = np.array([[pos[pairs[k][0]], pos[pairs[k][1]]] for k in keep], dtype=np.int64).reshape(-1, 2)
    w = np.array([weights[k] for k in keep]) if weighted else None
    graph = ContactGraph.from_edges(len(rows), edge_arr, w)
    attrs = [{k: r[k] for k in _AGENT_FIELDS[1:]} for r in rows]
    agents = []
    for i, r in enumerate(rows):
        nbr = graph.neighbors(i)
        ew = None if graph.weights is None else tuple(graph.weights[graph.indptr[i]:graph.indptr[i + 1]].tolist())
        agents.append(AgentRecord(id=r["id"], neighbors=tuple(ids[j] for j in nbr),
                                  attributes=attrs[i], edge_weights=ew))
    return agents, graph


def graph_from_agents(agents: Sequence[AgentRecord]) -> ContactGraph:
    ordered = sorted(agents, key=lambda a: a.id)
    pos = {a.id: i for i, a in enumerate(ordered)}
    edges = [(pos[a.id], pos[b]) for a in ordered for b in a.neighbors]
    directed = set(edges)
    for a, b in edges:
        if (b, a) not in directed:
            raise AsymmetricEdgeError(f"agent {ordered[a].id} lists {ordered[b].id} but not vice versa")
    return ContactGraph.from_edges(len(ordered), [e for e in edges if e[0] < e[1]])


def complete_population(n: int, susceptibility: float = 1.0, first_id: int = 1) -> list[AgentRecord]:
    """Every agent neighbors every other; used for the mean-field limit."""
    attrs = [{"age": 30, "ethnicity": "White", "zip_sector": "OX1 1", "susceptibility": susceptibility}
             for _ in range(n)]
    return agents_from_graph(attrs, ContactGraph.complete(n), first_id)


def iter_ids(agents: Iterable[AgentRecord]) -> list[int]:
    return [a.id for a in agents]
