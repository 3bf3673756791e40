"""Secure agent-based simulation engine.

Agents exchange model messages with their graph neighbours through
SecureSum sessions, update synchronously, and report per-step aggregate
statistics and their parameter gradients to the MPC server through one
more SecureSum over the whole population.

A :class:`ModelDefinition` is written once in vectorized form. Arrays of
agent state carry a leading replicate axis ``R`` so several independent
simulations (different seeds or parameters) can share protocol rounds;
``run_secure_simulation`` is the ``R = 1`` case.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Any, Sequence

import numpy as np

from . import kernels
from .mpc import EncodingOverflowError, FixedPointCodec
from .rng import GOLDEN, derive_key
from .transport import (SERVER, SessionLayout, Transport, broadcast, make_transport,
                        run_secure_sum_session, secure_sum_batch)

PartyId = int


@dataclass
class AgentRecord:
    """One agent: identity, private state, neighbourhood and stored gradients."""

    id: PartyId
    neighbors: tuple[PartyId, ...] = ()
    attributes: dict[str, Any] = field(default_factory=dict)
    state: np.ndarray | None = None
    edge_weights: tuple[float, ...] | None = None
    grad_store: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.id < 1:
            raise ValueError("agent ids start at 1; party 0 is the server")
        self.neighbors = tuple(int(j) for j in self.neighbors)
        if self.id in self.neighbors:
            raise ValueError(f"agent {self.id} lists itself as a neighbour")
        if self.edge_weights is not None and len(self.edge_weights) != len(self.neighbors):
            raise ValueError("one edge weight per neighbour required")


@dataclass
class PopulationArrays:
    """Column view of a list of agents, indexed by position."""

    ids: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    attributes: dict[str, np.ndarray]

    @classmethod
    def from_agents(cls, agents: Sequence[AgentRecord]) -> "PopulationArrays":
        ids = np.array([a.id for a in agents], dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate agent id")
        pos = {int(a): i for i, a in enumerate(ids)}
        degrees = np.array([len(a.neighbors) for a in agents], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(degrees)])
        try:
            indices = np.array([pos[j] for a in agents for j in a.neighbors], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"neighbour {exc.args[0]} is not in the population") from None
        weights = np.array([w for a in agents for w in (a.edge_weights or (1.0,) * len(a.neighbors))],
                           dtype=float)
        keys = set().union(*(a.attributes for a in agents)) if agents else set()
        attrs = {}
        for k in keys:
            col = [a.attributes.get(k) for a in agents]
            attrs[k] = np.array(col, dtype=float if all(isinstance(v, (int, float)) for v in col) else object)
        return cls(ids, indptr, indices, weights, attrs)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def column(self, name: str, default: float) -> np.ndarray:
        col = self.attributes.get(name)
        return np.full(self.n, default) if col is None else col.astype(float)


def agent_uniforms(seeds: np.ndarray, purpose: str, ids: np.ndarray, step: int) -> np.ndarray:
    """Per-agent U[0,1) draws, shape ``(R, N)``, keyed by (seed, purpose, agent id, step)."""
    base = np.array([derive_key(int(s), purpose) for s in seeds], dtype=np.uint64)
    agent = kernels.mix64(ids.astype(np.uint64) + np.uint64(GOLDEN))
    keys = kernels.mix64(base[:, None] ^ agent[None, :])
    return kernels.uniform01(keys, np.uint64(step))


def stack_params(params: Sequence[Any]) -> SimpleNamespace:
    """Dataclass parameters of R replicates as ``(R, 1)`` arrays that broadcast over agents."""
    names = [f.name for f in dataclasses.fields(params[0])]
    return SimpleNamespace(**{n: np.array([getattr(p, n) for p in params], dtype=float)[:, None]
                              for n in names})


class ModelDefinition:
    """Vectorized agent model.

    ``states`` arrays have shape ``(R, N, k)``; parameter views come from
    :func:`stack_params`. Subclasses define the message, update, statistic
    and gradient functions; aggregation is always a sum.
    """

    statistic_names: tuple[str, ...] = ()
    grad_params: tuple[str, ...] = ()

    def init_state(self, pop: PopulationArrays, theta, seeds: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def message(self, src_states: np.ndarray, edge_weights: np.ndarray, theta, t: int) -> np.ndarray:
        """M(z_j, e_ij, theta, t) for a batch of (receiver, sender) rows, shape ``(R, rows)``."""
        raise NotImplementedError

    def update(self, states, messages, pop, theta, t, seeds) -> tuple[np.ndarray, np.ndarray]:
        """New states and per-agent ``grad_theta f`` contributions ``(R, N, len(grad_params))``."""
        raise NotImplementedError

    def statistics(self, states, new_states, pop, theta) -> np.ndarray:
        """Per-agent h contributions, ``(R, N, len(statistic_names))``."""
        raise NotImplementedError

    def statistic_bounds(self, pop: PopulationArrays, theta) -> np.ndarray:
        """Upper bounds on |h| and |grad h| per agent, in server payload order."""
        raise NotImplementedError

    def theta_vector(self, theta) -> list[float]:
        return [float(v) for v in dataclasses.astuple(theta)]

    @property
    def width(self) -> int:
        return len(self.statistic_names) + len(self.grad_params)


@dataclass
class SimulationOutput:
    x: np.ndarray
    prevalence: np.ndarray
    grad_x: np.ndarray
    grad_names: tuple[str, ...]
    n_agents: int
    step_seconds: np.ndarray
    messages: np.ndarray
    final_states: np.ndarray | None = None

    def __post_init__(self):
        if not len(self.x) == len(self.grad_x) == len(self.prevalence):
            raise ValueError("series lengths differ")

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.x)

    @property
    def n_t(self) -> int:
        return len(self.x)

    def attack_rate(self, initial_infected: int = 0) -> float:
        return (initial_infected + float(self.x.sum())) / self.n_agents

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "new_infections", "prevalence", *(f"grad_{n}" for n in self.grad_names)])
        for t in range(self.n_t):
            w.writerow([t, int(self.x[t]), int(self.prevalence[t]), *(repr(float(g)) for g in self.grad_x[t])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "n_agents": self.n_agents,
            "new_infections": [int(v) for v in self.x],
            "prevalence": [int(v) for v in self.prevalence],
            "cumulative": [int(v) for v in self.cumulative],
            "grad_x": {n: [float(v) for v in self.grad_x[:, k]] for k, n in enumerate(self.grad_names)},
            "metrics": {"step_seconds": [float(v) for v in self.step_seconds],
                        "messages": [int(v) for v in self.messages]},
        }, indent=1)


# ---------------------------------------------------------------------------
# secure path
# ---------------------------------------------------------------------------

@dataclass
class _NeighborPlan:
    """Session layout for 'sum my neighbours' messages', one session per agent."""

    layout: SessionLayout
    src_pos: np.ndarray   # graph position of the member contributing each row
    is_self: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, pop: PopulationArrays, replicates: int) -> "_NeighborPlan":
        n, deg = pop.n, pop.degrees
        sizes = deg + 1
        total = int(sizes.sum())
        starts = np.concatenate([[0], np.cumsum(sizes)])
        src_pos = np.empty(total, dtype=np.int64)
        # self rows contribute zero; their weight only matters for the uniform-weight shortcut
        weights = np.full(total, pop.weights[0] if len(pop.weights) else 1.0)
        is_self = np.zeros(total, dtype=bool)
        src_pos[starts[:-1]] = np.arange(n)
        is_self[starts[:-1]] = True
        nbr_rows = np.ones(total, dtype=bool)
        nbr_rows[starts[:-1]] = False
        src_pos[nbr_rows] = pop.indices
        weights[nbr_rows] = pop.weights
        offsets = np.concatenate([[0], np.cumsum(np.tile(sizes, replicates))])
        members = np.tile(pop.ids[src_pos], replicates)
        layout = SessionLayout(offsets, members, np.tile(pop.ids, replicates))
        return cls(layout, src_pos, is_self, weights)


def _check_headroom(model: ModelDefinition, pop: PopulationArrays, theta, codec: FixedPointCodec) -> None:
    worst = pop.n * np.max(np.abs(model.statistic_bounds(pop, theta)))
    if not worst < codec.bound:
        raise EncodingOverflowError(
            f"population aggregate bound {worst:.3g} exceeds codec range {codec.bound:.3g}")


def _edge_messages(model, states, src_pos, weights, theta, t) -> np.ndarray:
    """Messages along edges; evaluated once per sender when all edge weights agree."""
    if len(weights) and np.all(weights == weights[0]):
        per_node = model.message(states, np.full(states.shape[1], weights[0]), theta, t)
        return per_node[:, src_pos]
    return model.message(states[:, src_pos], weights, theta, t)


def _secure_neighbor_sums(transport, plan, model, states, theta, t, codec, key) -> np.ndarray:
    R = states.shape[0]
    msg = _edge_messages(model, states, plan.src_pos, plan.weights, theta, t)
    msg = np.where(plan.is_self, 0.0, msg)
    enc = codec.encode_array(msg).reshape(-1, 1)
    totals = secure_sum_batch(transport, plan.layout, enc, codec.modulus, key)
    return codec.decode_array(totals[:, 0]).reshape(R, -1)


def _secure_population_sum(transport, layout, contributions, codec, key) -> np.ndarray:
    R, N, m = contributions.shape
    enc = codec.encode_array(contributions.reshape(R * N, m))
    totals = secure_sum_batch(transport, layout, enc, codec.modulus, key)
    return codec.decode_array(totals).reshape(R, m)


def _outputs(model, n_agents, stats, grads, seconds, messages, final_states):
    n_stat = len(model.statistic_names)
    outs = []
    for r in range(stats.shape[1]):
        outs.append(SimulationOutput(
            x=np.rint(stats[:, r, 0]).astype(np.int64),
            prevalence=np.rint(stats[:, r, 1]).astype(np.int64) if n_stat > 1 else np.zeros(len(stats), np.int64),
            grad_x=grads[:, r, :].copy(),
            grad_names=model.grad_params,
            n_agents=n_agents,
            step_seconds=seconds.copy(),
            messages=messages.copy(),
            final_states=final_states[r],
        ))
    return outs


def run_secure_simulations(agents: Sequence[AgentRecord], model: ModelDefinition, thetas: Sequence[Any],
                           n_t: int, seeds: Sequence[int], transport: Transport | None = None,
                           codec: FixedPointCodec | None = None, server: PartyId = SERVER,
                           write_back: bool = False) -> list[SimulationOutput]:
    """Run ``len(seeds)`` independent secure simulations sharing protocol rounds.

    Each replicate has its own parameters and seed; results are identical to
    running the replicates one at a time.
    """
    if len(thetas) != len(seeds):
        raise ValueError("one parameter set per seed required")
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    codec = codec or FixedPointCodec()
    pop = PopulationArrays.from_agents(agents)
    R, N = len(seeds), pop.n
    seeds_arr = np.asarray(seeds, dtype=np.int64)
    theta = stack_params(thetas)
    for th in thetas:
        _check_headroom(model, pop, stack_params([th]), codec)
    own_transport = transport is None
    if own_transport:
        transport = make_transport("sequential", [server, *pop.ids.tolist()], record=False)

    # θ and the statistic definition go to every agent before the first step
    for th in thetas:
        broadcast(transport, server, pop.ids.tolist(),
                  [int(v) for v in codec.encode_array(model.theta_vector(th))])

    plan = _NeighborPlan.build(pop, R)
    server_layout = SessionLayout(np.arange(R + 1) * N, np.tile(pop.ids, R), np.full(R, server))
    states = model.init_state(pop, theta, seeds_arr)
    width = model.width
    n_stat = len(model.statistic_names)
    stats = np.zeros((n_t, R, n_stat))
    grads = np.zeros((n_t, R, width - n_stat))
    seconds = np.zeros(n_t)
    messages = np.zeros(n_t, dtype=np.int64)
    grad_store = np.zeros((n_t, N, width - n_stat)) if write_back and R == 1 else None
    seed_tag = [int(s) for s in seeds_arr]

    for t in range(n_t):
        t0, m0 = time.perf_counter(), transport.messages_sent
        agg = _secure_neighbor_sums(transport, plan, model, states, theta, t, codec,
                                    derive_key("neighbors", t, *seed_tag))
        new_states, grad_f = model.update(states, agg, pop, theta, t, seeds_arr)
        contrib = np.concatenate([model.statistics(states, new_states, pop, theta), grad_f], axis=2)
        totals = _secure_population_sum(transport, server_layout, contrib, codec,
                                        derive_key("server", t, *seed_tag))
        stats[t], grads[t] = totals[:, :n_stat], totals[:, n_stat:]
        if grad_store is not None:
            grad_store[t] = grad_f[0]
        states = new_states
        seconds[t] = time.perf_counter() - t0
        messages[t] = transport.messages_sent - m0

    if own_transport and hasattr(transport, "close"):
        transport.close()
    if grad_store is not None:
        for i, a in enumerate(agents):
            a.state = states[0, i].copy()
            a.grad_store = list(grad_store[:, i, :])
    return _outputs(model, N, stats, grads, seconds, messages, states)


def run_secure_simulation(server: PartyId, agents: Sequence[AgentRecord], model: ModelDefinition,
                          theta: Any, n_t: int, seed: int, transport: Transport | None = None,
                          codec: FixedPointCodec | None = None, write_back: bool = True) -> SimulationOutput:
    return run_secure_simulations(agents, model, [theta], n_t, [seed], transport, codec, server,
                                  write_back)[0]


# ---------------------------------------------------------------------------
# plaintext oracle
# ---------------------------------------------------------------------------

def _plain_neighbor_sums(pop: PopulationArrays, model, states, theta, t, scale: int) -> np.ndarray:
    R = states.shape[0]
    msg = _edge_messages(model, states, pop.indices, pop.weights, theta, t)
    # same fixed-point grid as the secure path; float sums of integers are exact below 2**53
    ints = np.rint(np.asarray(msg, dtype=float) * scale)
    owner = np.repeat(np.arange(pop.n), pop.degrees)
    sums = np.zeros((R, pop.n))
    for r in range(R):
        sums[r] = np.bincount(owner, weights=ints[r], minlength=pop.n)
    return sums / scale


def run_centralized_simulations(agents: Sequence[AgentRecord], model: ModelDefinition, thetas: Sequence[Any],
                                n_t: int, seeds: Sequence[int], scale: int | None = None
                                ) -> list[SimulationOutput]:
    """Plaintext oracle with the same randomness contract as the secure path."""
    scale = scale or FixedPointCodec().scale
    pop = PopulationArrays.from_agents(agents)
    R = len(seeds)
    seeds_arr = np.asarray(seeds, dtype=np.int64)
    theta = stack_params(thetas)
    states = model.init_state(pop, theta, seeds_arr)
    n_stat = len(model.statistic_names)
    stats = np.zeros((n_t, R, n_stat))
    grads = np.zeros((n_t, R, len(model.grad_params)))
    seconds = np.zeros(n_t)
    for t in range(n_t):
        t0 = time.perf_counter()
        agg = _plain_neighbor_sums(pop, model, states, theta, t, scale)
        new_states, grad_f = model.update(states, agg, pop, theta, t, seeds_arr)
        stats[t] = model.statistics(states, new_states, pop, theta).sum(axis=1)
        grads[t] = grad_f.sum(axis=1)
        states = new_states
        seconds[t] = time.perf_counter() - t0
    return _outputs(model, pop.n, stats, grads, seconds, np.zeros(n_t, np.int64), states)


def run_centralized_simulation(agents: Sequence[AgentRecord], model: ModelDefinition, theta: Any,
                               n_t: int, seed: int, scale: int | None = None) -> SimulationOutput:
    return run_centralized_simulations(agents, model, [theta], n_t, [seed], scale)[0]


# ---------------------------------------------------------------------------
# single-agent update
# ---------------------------------------------------------------------------

def secure_agent_update(agent: AgentRecord, neighbors: Sequence[AgentRecord], model: ModelDefinition,
                        theta: Any, t: int, seed: int, transport: Transport,
                        codec: FixedPointCodec | None = None) -> AgentRecord:
    """One agent's step: SecureSum over its neighbours' messages, then the local update.

    Only ``agent`` learns the aggregated message. ``neighbors`` supply their
    own message contributions; their states never leave them unshared.
    """
    codec = codec or FixedPointCodec()
    if agent.state is None:
        raise ValueError(f"agent {agent.id} has no state")
    by_id = {a.id: a for a in neighbors}
    missing = [j for j in agent.neighbors if j not in by_id]
    if missing:
        raise ValueError(f"neighbour records missing for {missing[:5]}")
    theta_v = stack_params([theta])
    weights = agent.edge_weights or (1.0,) * len(agent.neighbors)
    local = {agent.id: 0}
    for j, w in zip(agent.neighbors, weights):
        src = np.asarray(by_id[j].state, dtype=float)[None, None, :]
        m_j = model.message(src, np.array([w]), theta_v, t)[0, 0]
        local[j] = int(codec.encode_array([m_j])[0])
    result = run_secure_sum_session(transport, agent.id, [agent.id, *agent.neighbors], local,
                                    [agent.id], codec.modulus,
                                    key=derive_key("agent-update", seed, agent.id, t))
    agg = codec.decode(result[agent.id])
    pop = PopulationArrays.from_agents([dataclasses.replace(agent, neighbors=(), edge_weights=None)])
    pop.indptr = np.array([0, len(agent.neighbors)])
    states = np.asarray(agent.state, dtype=float)[None, None, :]
    new_states, grad_f = model.update(states, np.array([[agg]]), pop, theta_v, t,
                                      np.array([seed], dtype=np.int64))
    agent.state = new_states[0, 0]
    agent.grad_store.append(grad_f[0, 0])
    return agent
