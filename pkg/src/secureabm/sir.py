"""SIR epidemic on a contact graph, with optional mask compliance.

States are 0 (susceptible), 1 (infected) and 2 (recovered). A susceptible
agent with ``n_i`` neighbours is infected with probability
``1 - exp(-beta * S_i * dt * m_i / n_i)``, where ``m_i`` counts infected,
non-compliant neighbours. Infected agents recover with probability
``1 - exp(-gamma * dt)``.

Gradients are taken of the expected one-step infection count on the
realized state, not through the Bernoulli draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .engine import ModelDefinition, PopulationArrays, agent_uniforms

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2


@dataclass(frozen=True)
class ModelParams:
    beta: float = 0.5
    gamma: float = 0.1
    i0: float = 0.01
    dt: float = 1.0
    n_t: int = 60
    alpha: float = 0.0

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not (0 <= self.i0 <= 1 and 0 <= self.alpha <= 1):
            raise ValueError("i0 and alpha must lie in [0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")

    @property
    def r0(self) -> float:
        return self.beta / self.gamma if self.gamma > 0 else math.inf

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model parameters {sorted(unknown)}")
        return cls(**data)


def p_inf(m: float, n_i: int, params: ModelParams, susceptibility: float = 1.0) -> float:
    if m < 0:
        raise ValueError("message sum must be non-negative")
    if n_i == 0:
        return 0.0
    return 1.0 - math.exp(-params.beta * susceptibility * params.dt * m / n_i)


def p_rec(params: ModelParams) -> float:
    return 1.0 - math.exp(-params.gamma * params.dt)


def sir_update(z: int, m: float, n_i: int, params: ModelParams, u: float,
               susceptibility: float = 1.0) -> int:
    """One transition given a uniform draw ``u``."""
    if z == SUSCEPTIBLE:
        return INFECTED if u < p_inf(m, n_i, params, susceptibility) else SUSCEPTIBLE
    if z == INFECTED:
        return RECOVERED if u < p_rec(params) else INFECTED
    if z == RECOVERED:
        return RECOVERED
    raise ValueError(f"invalid SIR state {z}")


@dataclass
class Snapshot:
    """Population state at one step, for expected-value computations."""

    z: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None
    susceptibility: np.ndarray | None = None
    compliance: np.ndarray | None = None

    @classmethod
    def from_graph(cls, z, graph, susceptibility=None, compliance=None) -> "Snapshot":
        return cls(np.asarray(z), graph.indptr, graph.indices, graph.weights, susceptibility, compliance)

    def lam_unit(self, dt: float) -> np.ndarray:
        """lambda_i = S_i * dt * m_i / n_i (zero for isolated agents)."""
        n = len(self.z)
        src = (self.z == INFECTED).astype(float)
        if self.compliance is not None:
            src = src * (1 - np.asarray(self.compliance, dtype=float))
        msg = src[self.indices]
        if self.weights is not None:
            msg = msg * self.weights
        deg = np.diff(self.indptr)
        owner = np.repeat(np.arange(n), deg)
        m = np.bincount(owner, weights=msg, minlength=n)
        s = np.ones(n) if self.susceptibility is None else np.asarray(self.susceptibility, dtype=float)
        return np.divide(s * dt * m, deg, out=np.zeros(n), where=deg > 0)


def expected_new_infections(snapshot: Snapshot, params: ModelParams) -> float:
    lam = snapshot.lam_unit(params.dt)
    sus = snapshot.z == SUSCEPTIBLE
    return float(np.sum(1.0 - np.exp(-params.beta * lam[sus])))


def grad_beta_expected(snapshot: Snapshot, params: ModelParams) -> float:
    """d/d beta of :func:`expected_new_infections`: sum of lambda_i * chi_i over susceptibles."""
    lam = snapshot.lam_unit(params.dt)
    sus = snapshot.z == SUSCEPTIBLE
    return float(np.sum(lam[sus] * np.exp(-params.beta * lam[sus])))


class SIRModel(ModelDefinition):
    """Vectorized SIR model for the engine; state columns are (z, compliance).

    Server statistics are new infections and (unless ``with_prevalence`` is
    off) prevalence. Gradient columns are d/d beta of expected new
    infections and, when ``with_gamma`` is set, d/d gamma of the expected
    number still infected next step.
    """

    def __init__(self, with_gamma: bool = False, with_prevalence: bool = True):
        self.with_gamma = with_gamma
        self.with_prevalence = with_prevalence
        self.statistic_names = ("new_infections", "prevalence") if with_prevalence else ("new_infections",)
        self.grad_params = ("beta", "gamma") if with_gamma else ("beta",)

    def init_state(self, pop: PopulationArrays, theta, seeds) -> np.ndarray:
        u0 = agent_uniforms(seeds, "initial-infection", pop.ids, 0)
        uc = agent_uniforms(seeds, "compliance", pop.ids, 0)
        z = np.where(u0 < theta.i0, INFECTED, SUSCEPTIBLE).astype(float)
        c = (uc < theta.alpha).astype(float)
        return np.stack([z, c], axis=2)

    def message(self, src_states, edge_weights, theta, t):
        z, c = src_states[..., 0], src_states[..., 1]
        return (z == INFECTED) * (1.0 - c) * edge_weights

    def _lambda(self, messages, pop, theta):
        deg = pop.degrees
        s = pop.column("susceptibility", 1.0)
        safe = np.maximum(deg, 1)
        return np.where(deg > 0, s * theta.dt * messages / safe, 0.0)

    def update(self, states, messages, pop, theta, t, seeds):
        z = states[..., 0]
        lam = self._lambda(messages, pop, theta)
        chi = np.exp(-theta.beta * lam)
        pi = 1.0 - chi
        pr = 1.0 - np.exp(-theta.gamma * theta.dt)
        u = agent_uniforms(seeds, "transition", pop.ids, t)
        new_z = np.where(z == SUSCEPTIBLE, np.where(u < pi, INFECTED, SUSCEPTIBLE),
                         np.where(z == INFECTED, np.where(u < pr, RECOVERED, INFECTED), RECOVERED))
        new_states = states.copy()
        new_states[..., 0] = new_z
        grads = [np.where(z == SUSCEPTIBLE, lam * chi, 0.0)]
        if self.with_gamma:
            grads.append(np.where(z == INFECTED, -theta.dt * np.exp(-theta.gamma * theta.dt), 0.0))
        return new_states, np.stack(grads, axis=2)

    def statistics(self, states, new_states, pop, theta):
        z, nz = states[..., 0], new_states[..., 0]
        cols = [(z == SUSCEPTIBLE) & (nz == INFECTED)]
        if self.with_prevalence:
            cols.append(nz == INFECTED)
        return np.stack(cols, axis=2).astype(float)

    def statistic_bounds(self, pop, theta):
        s = pop.column("susceptibility", 1.0)
        w = np.max(pop.weights, initial=1.0)
        dt = float(np.max(theta.dt))
        bounds = [1.0] * len(self.statistic_names) + [float(np.max(s, initial=1.0)) * dt * w]
        if self.with_gamma:
            bounds.append(dt)
        return np.array(bounds)

    def theta_vector(self, theta: Any) -> list[float]:
        return [theta.beta, theta.gamma, theta.i0, theta.dt, float(theta.n_t), theta.alpha]


def final_size(r0: float, tol: float = 1e-14) -> float:
    """Root in (0, 1] of z = 1 - exp(-r0 z) by fixed-point iteration (0 when r0 <= 1)."""
    if r0 <= 1:
        return 0.0
    z = 1.0
    for _ in range(100_000):
        nz = 1.0 - math.exp(-r0 * z)
        if abs(nz - z) < tol:
            return nz
        z = nz
    return z
