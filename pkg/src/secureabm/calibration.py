"""Gradient-assisted generalized variational inference over model parameters.

The server holds a mean-field Gaussian ``q_phi`` over the calibrated
parameters and minimizes

    L(phi) = E_q[ loss(x(theta), y) ] + w * KL(q_phi || prior)

with reparameterized samples ``theta = mu + softplus(rho) * u``. Each
sample's simulation returns the aggregate series ``x`` and its parameter
gradient, so the sample gradient is ``dloss/dx . dx/dtheta . dtheta/dphi``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .rng import derive_key

Simulator = Callable[[Sequence[np.ndarray], Sequence[int]], list[tuple[np.ndarray, np.ndarray]]]


class CalibrationError(RuntimeError):
    pass


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class VariationalParams:
    mu: np.ndarray
    rho: np.ndarray
    family: str = "gaussian"

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if self.family != "gaussian":
            raise ValueError(f"unsupported variational family {self.family!r}")
        if self.mu.shape != self.rho.shape:
            raise ValueError("mu and rho must have the same shape")

    @classmethod
    def from_moments(cls, mean, std) -> "VariationalParams":
        return cls(np.asarray(mean, dtype=float), softplus_inv(std))

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    def density(self, theta) -> np.ndarray:
        return _normal_pdf(np.asarray(theta, dtype=float), self.mu, self.sigma)

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.mu.copy(), self.rho.copy(), self.family)


@dataclass(frozen=True)
class Prior:
    loc: tuple[float, ...] = (0.7,)
    scale: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        if len(self.loc) != len(self.scale):
            raise ValueError("prior loc and scale lengths differ")
        if any(s <= 0 for s in self.scale):
            raise ValueError("prior scale must be positive")

    def density(self, theta) -> np.ndarray:
        return _normal_pdf(np.asarray(theta, dtype=float), np.array(self.loc), np.array(self.scale))


def _normal_pdf(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


@dataclass
class CalibrationConfig:
    y: np.ndarray
    n_agents: int
    loss: str = "l2"
    w: float = 5e-3
    n_mc: int = 10
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    bandwidth: float | None = None
    init_mean: tuple[float, ...] | None = None
    init_std: tuple[float, ...] | None = None
    max_resample: int = 100

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.w <= 0:
            raise ValueError("w must be positive")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in ("l2", "mmd"):
            raise ValueError(f"unknown loss {self.loss!r}")


# ---------------------------------------------------------------------------
# pieces of the objective
# ---------------------------------------------------------------------------

def sample_reparam(phi: VariationalParams, u) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """theta = mu + softplus(rho) * u with its diagonal Jacobian in phi."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("base draw must be finite")
    theta = phi.mu + phi.sigma * u
    return theta, {"mu": np.ones_like(theta), "rho": u * sigmoid(phi.rho)}


def _check_lengths(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"series lengths differ: {x.shape} vs {y.shape}")
    return x, y


def loss_l2(x, y, n_agents: int = 1) -> float:
    x, y = _check_lengths(x, y)
    return float(np.sum(((x - y) / n_agents) ** 2))


def median_bandwidth(n_t: int) -> float:
    t = np.arange(n_t, dtype=float)
    d = np.abs(t[:, None] - t[None, :])[np.triu_indices(n_t, k=1)]
    return float(np.median(d)) if len(d) else 1.0


def _gram(n_t: int, bandwidth: float) -> np.ndarray:
    t = np.arange(n_t, dtype=float)
    return np.exp(-((t[:, None] - t[None, :]) ** 2) / (2 * bandwidth ** 2))


def loss_mmd(x, y, bandwidth: float | None = None, n_agents: int = 1) -> float:
    """Squared MMD between the series as weighted point sets on the time axis."""
    x, y = _check_lengths(x, y)
    h = bandwidth or median_bandwidth(len(x))
    d = (x - y) / n_agents
    return float(d @ _gram(len(x), h) @ d)


def loss_grad_x(x, y, loss: str = "l2", n_agents: int = 1, bandwidth: float | None = None) -> np.ndarray:
    x, y = _check_lengths(x, y)
    d = (x - y) / n_agents
    if loss == "l2":
        return 2 * d / n_agents
    if loss == "mmd":
        h = bandwidth or median_bandwidth(len(x))
        return 2 * (_gram(len(x), h) @ d) / n_agents
    raise ValueError(f"unknown loss {loss!r}")


def loss_value(x, y, loss: str = "l2", n_agents: int = 1, bandwidth: float | None = None) -> float:
    if loss == "l2":
        return loss_l2(x, y, n_agents)
    if loss == "mmd":
        return loss_mmd(x, y, bandwidth, n_agents)
    raise ValueError(f"unknown loss {loss!r}")


def kl_gaussian_to_prior(phi: VariationalParams, prior: Prior) -> tuple[float, dict[str, np.ndarray]]:
    m, s = np.array(prior.loc), np.array(prior.scale)
    sig = phi.sigma
    kl = np.log(s / sig) + (sig ** 2 + (phi.mu - m) ** 2) / (2 * s ** 2) - 0.5
    d_sigma = -1.0 / sig + sig / s ** 2
    return float(kl.sum()), {"mu": (phi.mu - m) / s ** 2, "rho": d_sigma * sigmoid(phi.rho)}


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.b1, self.b2 = lr, betas[0], betas[1]
        self.eps, self.weight_decay = eps, weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            self.m[k] = m = self.b1 * m + (1 - self.b1) * g
            self.v[k] = v = self.b2 * v + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p = params[k]
            p -= self.lr * self.weight_decay * p
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TraceRow:
    epoch: int
    loss: float
    kl: float
    mu: tuple[float, ...]
    sigma: tuple[float, ...]


@dataclass
class CalibrationResult:
    phi: VariationalParams
    trace: list[TraceRow] = field(default_factory=list)
    param_names: tuple[str, ...] = ("beta",)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.param_names
        w.writerow(["epoch", "loss", "kl", *(f"mu_{n}" for n in names), *(f"sigma_{n}" for n in names)])
        for r in self.trace:
            w.writerow([r.epoch, repr(r.loss), repr(r.kl), *map(repr, r.mu), *map(repr, r.sigma)])
        return buf.getvalue()

    def posterior_json(self) -> str:
        return json.dumps({
            "family": self.phi.family,
            "params": list(self.param_names),
            "mean": [float(v) for v in self.phi.mu],
            "std": [float(v) for v in self.phi.sigma],
            "rho": [float(v) for v in self.phi.rho],
        }, indent=1)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(self.trace_csv())
        (out / "posterior.json").write_text(self.posterior_json())


def objective_and_grad(phi: VariationalParams, us: np.ndarray, simulate: Simulator, seeds: Sequence[int],
                       prior: Prior, config: CalibrationConfig) -> tuple[float, float, dict[str, np.ndarray]]:
    """Monte Carlo estimate of L(phi) and its reparameterized gradient for fixed draws ``us``."""
    thetas, jacs = zip(*(sample_reparam(phi, u) for u in us))
    results = simulate(list(thetas), list(seeds))
    g_mu = np.zeros_like(phi.mu)
    g_rho = np.zeros_like(phi.rho)
    total = 0.0
    for (x, grad_x), jac in zip(results, jacs):
        total += loss_value(x, config.y, config.loss, config.n_agents, config.bandwidth)
        dl_dx = loss_grad_x(x, config.y, config.loss, config.n_agents, config.bandwidth)
        dl_dtheta = dl_dx @ np.asarray(grad_x).reshape(len(x), -1)
        g_mu += dl_dtheta * jac["mu"]
        g_rho += dl_dtheta * jac["rho"]
    k = len(us)
    kl, kl_grad = kl_gaussian_to_prior(phi, prior)
    obj = total / k + config.w * kl
    grads = {"mu": g_mu / k + config.w * kl_grad["mu"], "rho": g_rho / k + config.w * kl_grad["rho"]}
    return obj, kl, grads


def _base_draws(phi: VariationalParams, seed: int, epoch: int, config: CalibrationConfig) -> np.ndarray:
    """Standard-normal draws; samples with a negative rate are redrawn."""
    rng = np.random.default_rng(derive_key(seed, "calibration", epoch))
    us = []
    while len(us) < config.n_mc:
        for _ in range(config.max_resample):
            u = rng.standard_normal(phi.mu.shape)
            if np.all(phi.mu + phi.sigma * u >= 0):
                break
        else:
            raise CalibrationError("posterior mass below zero; could not draw a non-negative rate")
        us.append(u)
    return np.array(us)


def secure_calibrate(simulate: Simulator, prior: Prior, config: CalibrationConfig, seed: int,
                     param_names: tuple[str, ...] = ("beta",),
                     on_epoch: Callable[[TraceRow], None] | None = None) -> CalibrationResult:
    """Train q_phi; ``simulate`` maps parameter samples and seeds to ``(x, dx/dtheta)`` pairs.

    Use :func:`secure_simulator` to drive the secure engine; the server only
    ever sees the aggregates that simulator returns.
    """
    mean = config.init_mean if config.init_mean is not None else prior.loc
    std = config.init_std if config.init_std is not None else prior.scale
    phi = VariationalParams.from_moments(mean, std)
    opt = AdamW(config.lr, config.betas, config.eps, config.weight_decay)
    result = CalibrationResult(phi, [], param_names)
    for epoch in range(config.epochs):
        us = _base_draws(phi, seed, epoch, config)
        seeds = [derive_key(seed, "simulation", epoch, k) & 0x7FFFFFFFFFFFFFFF for k in range(config.n_mc)]
        obj, kl, grads = objective_and_grad(phi, us, simulate, seeds, prior, config)
        if not (math.isfinite(obj) and all(np.all(np.isfinite(g)) for g in grads.values())):
            raise CalibrationError(f"non-finite objective or gradient at epoch {epoch}: "
                                   f"loss={obj}, grads={ {k: v.tolist() for k, v in grads.items()} }")
        opt.step({"mu": phi.mu, "rho": phi.rho}, grads)
        row = TraceRow(epoch, obj, kl, tuple(phi.mu.tolist()), tuple(phi.sigma.tolist()))
        result.trace.append(row)
        if on_epoch:
            on_epoch(row)
    return result


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------

def secure_simulator(agents, model, base_params, n_t: int, param_names=("beta",), transport=None,
                     codec=None) -> Simulator:
    """Adapter running the secure engine for a batch of parameter samples."""
    from .engine import run_secure_simulations

    grad_cols = [model.grad_params.index(n) for n in param_names]

    def simulate(thetas, seeds):
        params = [dataclasses.replace(base_params, **{n: float(v) for n, v in zip(param_names, th)})
                  for th in thetas]
        outs = run_secure_simulations(agents, model, params, n_t, seeds, transport, codec)
        return [(o.x.astype(float), o.grad_x[:, grad_cols]) for o in outs]

    return simulate


def centralized_simulator(agents, model, base_params, n_t: int, param_names=("beta",)) -> Simulator:
    from .engine import run_centralized_simulations

    grad_cols = [model.grad_params.index(n) for n in param_names]

    def simulate(thetas, seeds):
        params = [dataclasses.replace(base_params, **{n: float(v) for n, v in zip(param_names, th)})
                  for th in thetas]
        outs = run_centralized_simulations(agents, model, params, n_t, seeds)
        return [(o.x.astype(float), o.grad_x[:, grad_cols]) for o in outs]

    return simulate


def surrogate_simulator(snapshots, base_params) -> Simulator:
    """Deterministic stand-in: x_t(beta) is the expected infection count on a frozen snapshot.

    Its beta-gradient is exact, which makes the assembled chain rule
    checkable against finite differences of the objective.
    """
    from .sir import expected_new_infections, grad_beta_expected

    def simulate(thetas, seeds):
        out = []
        for th in thetas:
            p = dataclasses.replace(base_params, beta=float(th[0]))
            x = np.array([expected_new_infections(s, p) for s in snapshots])
            g = np.array([[grad_beta_expected(s, p)] for s in snapshots])
            out.append((x, g))
        return out

    return simulate
