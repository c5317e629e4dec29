"""Tabular particle learner trained by the MMD^2 temporal-difference gradient.

Each (state key, action) owns M particles in R^N. A sampled transition
(s, a, r, s') yields the target cloud Y_i = r + gamma * Z_target(s', a')_i
and the online cloud Z(s, a) descends the off-diagonal MMD^2 statistic
between Z and Y. The target table is a periodic copy of the online one.
"""
from __future__ import annotations

import ast
import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Iterator

import numpy as np

from . import _fast
from .kernels import KernelSpec, kernel_mean, preset
from .mdp import Env, Policy

TABLE_FORMAT = "md3qn-particles 1"


class Mode(str, enum.Enum):
    EVALUATION = "evaluation"
    CONTROL = "control"
    CONSTRAINT = "constraint"


class Variant(str, enum.Enum):
    JOINT = "joint"
    MARGINAL_SUM = "marginal-sum"
    MARGINAL_PROD = "marginal-prod"


# --------------------------------------------------------------------------
# particle table


def _parse_key(text: str) -> Hashable:
    """Inverse of ``repr`` for literals, tuples and frozensets of them."""

    def conv(node):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "frozenset":
            if node.keywords or len(node.args) > 1:
                raise ValueError(f"unsupported key {text!r}")
            return frozenset(conv(node.args[0])) if node.args else frozenset()
        if isinstance(node, ast.Tuple):
            return tuple(conv(e) for e in node.elts)
        if isinstance(node, (ast.Set, ast.List)):
            return [conv(e) for e in node.elts]
        return ast.literal_eval(node)

    return conv(ast.parse(text, mode="eval").body)


def _key_seed(key: Hashable, seed: int) -> int:
    h = hashlib.blake2b(repr(key).encode(), digest_size=8, key=int(seed).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


class ParticleTable:
    """Lazily allocated map key -> (A, M, N) particle array.

    A new row is drawn i.i.d. from U(init_low, init_high) with a generator
    seeded by a hash of ``repr(key)`` and the table seed, so a row's initial
    value does not depend on when it is first touched.
    """

    def __init__(self, n_actions: int, M: int, N: int, seed: int = 0, init_low: float = 0.0, init_high: float = 0.1):
        if M < 2:
            raise ValueError("need at least two particles")
        self.n_actions, self.M, self.N = n_actions, M, N
        self.seed = seed
        self.init_low, self.init_high = init_low, init_high
        self.rows: dict[Hashable, np.ndarray] = {}

    def initial_row(self, key: Hashable) -> np.ndarray:
        rng = np.random.default_rng(_key_seed(key, self.seed))
        return rng.uniform(self.init_low, self.init_high, size=(self.n_actions, self.M, self.N))

    def row(self, key: Hashable) -> np.ndarray:
        r = self.rows.get(key)
        if r is None:
            r = self.rows[key] = self.initial_row(key)
        return r

    def peek(self, key: Hashable) -> np.ndarray:
        """Row for ``key`` without allocating it."""
        r = self.rows.get(key)
        return r if r is not None else self.initial_row(key)

    def __getitem__(self, item) -> np.ndarray:
        key, a = item
        return self.row(key)[a]

    def __contains__(self, key) -> bool:
        return key in self.rows

    def __len__(self) -> int:
        return len(self.rows)

    def keys(self):
        return self.rows.keys()

    def copy(self) -> "ParticleTable":
        out = ParticleTable(self.n_actions, self.M, self.N, self.seed, self.init_low, self.init_high)
        out.rows = {k: v.copy() for k, v in self.rows.items()}
        return out

    def dumps(self) -> str:
        lines = [f"{TABLE_FORMAT} actions={self.n_actions} particles={self.M} sources={self.N} seed={self.seed}"]
        for key in sorted(self.rows, key=repr):
            lines.append(f"key {key!r}")
            for block in self.rows[key]:
                lines.extend(" ".join(format(float(v), ".17g") for v in p) for p in block)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ParticleTable":
        lines = text.splitlines()
        head = lines[0].split()
        if " ".join(head[:2]) != TABLE_FORMAT:
            raise ValueError("not a particle table dump")
        meta = dict(item.split("=") for item in head[2:])
        A, M, N = int(meta["actions"]), int(meta["particles"]), int(meta["sources"])
        table = cls(A, M, N, int(meta["seed"]))
        i = 1
        while i < len(lines):
            if not lines[i].startswith("key "):
                raise ValueError(f"line {i + 1}: expected a key line")
            key = _parse_key(lines[i][4:])
            vals = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1 : i + 1 + A * M]])
            table.rows[key] = vals.reshape(A, M, N)
            i += 1 + A * M
        return table


def greedy_action(table: ParticleTable, key: Hashable) -> int:
    """argmax_a of the particle mean of sum_n Z_n; lowest index on ties."""
    row = table.peek(key)
    return int(np.argmax(row.sum(axis=2).mean(axis=1)))


# --------------------------------------------------------------------------
# constraint scoring


@dataclass(frozen=True)
class ConstraintSpec:
    """Satisfied when every component strictly exceeds its threshold."""

    thresholds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.thresholds)

    def satisfied(self, values: np.ndarray, thresholds: np.ndarray | None = None) -> np.ndarray:
        thr = self.array if thresholds is None else thresholds
        return np.all(np.asarray(values) > thr, axis=-1)


def estimate_constraint_prob(particles: np.ndarray, spec: ConstraintSpec, thresholds: np.ndarray | None = None) -> float:
    """Fraction of particles meeting every threshold."""
    thr = spec.array if thresholds is None else thresholds
    if particles.shape[-1] != len(thr):
        raise ValueError("threshold count does not match particle dimension")
    return float(np.mean(np.all(particles > thr, axis=-1)))


def constraint_scores(row: np.ndarray, thresholds: np.ndarray, variant: Variant | str) -> np.ndarray:
    """Per-action score of an (A, M, N) row.

    The marginal variants only look at one column at a time.
    """
    variant = Variant(variant)
    hit = row > thresholds
    if variant is Variant.JOINT:
        return hit.all(axis=2).mean(axis=1)
    marginals = hit.mean(axis=1)
    if variant is Variant.MARGINAL_SUM:
        return marginals.sum(axis=1)
    return marginals.prod(axis=1)


def constraint_greedy_action(
    table: ParticleTable,
    key: Hashable,
    spec: ConstraintSpec,
    variant: Variant | str = Variant.JOINT,
    thresholds: np.ndarray | None = None,
) -> int:
    thr = spec.array if thresholds is None else thresholds
    return int(np.argmax(constraint_scores(table.peek(key), thr, variant)))


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(x), np.zeros_like(x))


def adam_update(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Bias-corrected Adam step; ``state`` is advanced in place."""
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    state.t += 1
    state.m *= beta1
    state.m += (1 - beta1) * grad
    state.v *= beta2
    state.v += (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_update(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return params - lr * grad


# --------------------------------------------------------------------------
# replay


@dataclass(frozen=True, eq=False)
class StoredTransition:
    key: Hashable
    action: int
    reward: np.ndarray
    next_key: Hashable
    terminal: bool
    # residual constraint thresholds in force at the next state
    next_thresholds: np.ndarray | None = None


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling and FIFO eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(len(self._items), size=count)

    def sample(self, count: int, rng: np.random.Generator) -> list:
        return [self._items[i] for i in self.sample_indices(count, rng)]

    def __iter__(self) -> Iterator:
        return iter(self._items)


# --------------------------------------------------------------------------
# configuration


@dataclass
class LearnerConfig:
    M: int = 200
    kernel: KernelSpec = field(default_factory=lambda: preset("W1"))
    lr: float = 0.03
    lr_final: float | None = 0.002
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_sync_period: int = 10
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_steps: int = 20_000
    replay_capacity: int = 10_000
    batch_size: int = 64
    min_replay: int = 500
    train_every: int = 4
    mode: Mode = Mode.EVALUATION
    variant: Variant = Variant.JOINT
    init_low: float = 0.0
    init_high: float = 0.1

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.variant = Variant(self.variant)
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not self.lr > 0 or (self.lr_final is not None and not self.lr_final > 0):
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("target_sync_period", "eps_decay_steps", "replay_capacity", "batch_size", "train_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.min_replay < 1:
            raise ValueError("min_replay must be positive")

    def with_overrides(self, **kw) -> "LearnerConfig":
        return replace(self, **kw)


def epsilon_at(step: int, cfg: LearnerConfig) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_steps."""
    frac = min(1.0, step / cfg.eps_decay_steps)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def lr_at(step: int, total: int, cfg: LearnerConfig) -> float:
    """Geometric interpolation from lr to lr_final over the run."""
    if cfg.lr_final is None or total <= 1:
        return cfg.lr
    frac = min(1.0, step / (total - 1))
    return cfg.lr * (cfg.lr_final / cfg.lr) ** frac


# --------------------------------------------------------------------------
# gradients


def _next_action(tr, target: ParticleTable, cfg: LearnerConfig, rng, policy: Policy | None, spec: ConstraintSpec | None) -> int:
    if cfg.mode is Mode.EVALUATION:
        if policy is None:
            raise ValueError("evaluation mode needs a policy")
        return policy.sample(tr.next_key, rng)
    if cfg.mode is Mode.CONTROL:
        return greedy_action(target, tr.next_key)
    if spec is None:
        raise ValueError("constraint mode needs a ConstraintSpec")
    thr = spec.array if tr.next_thresholds is None else tr.next_thresholds
    return constraint_greedy_action(target, tr.next_key, spec, cfg.variant, thr)


def bellman_target(tr, target: ParticleTable, a_next: int | None, gamma: float) -> np.ndarray:
    """Y_i = r + gamma * Z_target(s', a')_i, or M copies of r at a terminal."""
    r = np.asarray(tr.reward, dtype=float)
    if tr.terminal:
        return np.broadcast_to(r, (target.M, target.N)).copy()
    return r + gamma * target.peek(tr.next_key)[a_next]


def td_gradient(
    tr,
    online: ParticleTable,
    target: ParticleTable,
    cfg: LearnerConfig,
    gamma: float,
    rng: np.random.Generator | None = None,
    policy: Policy | None = None,
    spec: ConstraintSpec | None = None,
) -> np.ndarray:
    """MMD^2 gradient for the online cloud at (tr.key, tr.action)."""
    a_next = None if tr.terminal else _next_action(tr, target, cfg, rng, policy, spec)
    Y = bellman_target(tr, target, a_next, gamma)
    Z = online[tr.key, tr.action]
    inv, plan = _fast.prepare(cfg.kernel.squared_bandwidths)
    return _fast.self_grad(Z, inv, plan) + _fast.cross_grad(Z, Y, inv, plan)


# --------------------------------------------------------------------------
# training loop


@dataclass
class OracleReference:
    """Oracle samples with their self-kernel mean cached for repeated MMD^2."""

    samples: np.ndarray
    kernel: KernelSpec = field(default_factory=lambda: preset("W1"))
    _kyy: float | None = field(default=None, repr=False)

    def mmd2(self, particles: np.ndarray) -> float:
        if self._kyy is None:
            self._kyy = kernel_mean(self.kernel, self.samples, self.samples)
        v = kernel_mean(self.kernel, particles, particles) - 2.0 * kernel_mean(self.kernel, particles, self.samples)
        return max(0.0, v + self._kyy)


@dataclass
class Schedule:
    total_steps: int
    eval_every: int = 1000
    eval_state: object = None
    eval_action: int | None = None
    oracle: OracleReference | None = None
    eval_episodes: int = 50

    def __post_init__(self):
        if self.total_steps < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("schedule counts must be positive")


@dataclass
class TrainResult:
    online: ParticleTable
    target: ParticleTable
    metrics: list[tuple[int, str, float]]
    updates: int

    def metric(self, name: str) -> list[tuple[int, float]]:
        return [(s, v) for s, n, v in self.metrics if n == name]


class Learner:
    """Holds online/target tables, optimizer state and replay for one run."""

    def __init__(
        self,
        env: Env,
        cfg: LearnerConfig,
        seed: int = 0,
        policy: Policy | None = None,
        constraint: ConstraintSpec | None = None,
    ):
        if cfg.mode is Mode.EVALUATION and policy is None:
            policy = Policy.uniform(env.n_actions)
        if cfg.mode is Mode.CONSTRAINT and constraint is None:
            raise ValueError("constraint mode needs a ConstraintSpec")
        self.env, self.cfg, self.seed = env, cfg, seed
        self.policy, self.constraint = policy, constraint
        self.gamma = env.gamma
        self.online = ParticleTable(env.n_actions, cfg.M, env.n_sources, seed, cfg.init_low, cfg.init_high)
        self.target = self.online.copy()
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.adam: dict[tuple, AdamState] = {}
        self.updates = 0
        streams = np.random.SeedSequence(seed).spawn(4)
        self.env_rng, self.act_rng, self.replay_rng, self.target_rng = (np.random.default_rng(s) for s in streams)
        self._inv, self._plan = _fast.prepare(cfg.kernel.squared_bandwidths)

    # action selection -----------------------------------------------------

    def behaviour_action(self, key, thresholds, eps: float) -> int:
        cfg = self.cfg
        if cfg.mode is Mode.EVALUATION:
            return self.policy.sample(key, self.act_rng)
        if self.act_rng.random() < eps:
            return int(self.act_rng.integers(self.env.n_actions))
        return self.greedy(self.online, key, thresholds)

    def greedy(self, table: ParticleTable, key, thresholds) -> int:
        if self.cfg.mode is Mode.CONSTRAINT:
            return constraint_greedy_action(table, key, self.constraint, self.cfg.variant, thresholds)
        return greedy_action(table, key)

    # updates --------------------------------------------------------------

    def update(self, batch: list[StoredTransition], lr: float) -> None:
        """Accumulate one gradient per transition into its row, then step."""
        groups: dict[tuple, dict] = {}
        for tr in batch:
            a_next = None if tr.terminal else _next_action(
                tr, self.target, self.cfg, self.target_rng, self.policy, self.constraint
            )
            g = groups.setdefault((tr.key, tr.action), {"n": 0, "targets": {}})
            g["n"] += 1
            # transitions with the same (r, s', a') share one target cloud
            tkey = (tr.next_key, a_next, tr.terminal, np.asarray(tr.reward).tobytes())
            ent = g["targets"].get(tkey)
            if ent is None:
                g["targets"][tkey] = [bellman_target(tr, self.target, a_next, self.gamma), 1]
            else:
                ent[1] += 1
        for (key, a), g in groups.items():
            row = self.online.row(key)
            Z = row[a]
            grad = g["n"] * _fast.self_grad(Z, self._inv, self._plan)
            for Y, count in g["targets"].values():
                grad += count * _fast.cross_grad(Z, Y, self._inv, self._plan)
            if self.cfg.optimizer == "adam":
                st = self.adam.get((key, a))
                if st is None:
                    st = self.adam[key, a] = AdamState.zeros_like(Z)
                row[a] = adam_update(Z, grad, st, lr, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
            else:
                row[a] = sgd_update(Z, grad, lr)
        self.updates += 1
        if self.updates % self.cfg.target_sync_period == 0:
            self.sync_target()

    def sync_target(self) -> None:
        self.target = self.online.copy()

    # evaluation -----------------------------------------------------------

    def greedy_episodes(self, episodes: int, rng: np.random.Generator) -> np.ndarray:
        """Discounted returns of the greedy policy, shape (episodes, N)."""
        out = np.zeros((episodes, self.env.n_sources))
        thr0 = None if self.constraint is None else self.constraint.array
        for e in range(episodes):
            state, thr = self.env.reset(rng), thr0
            discount = 1.0
            for _ in range(100_000):
                a = self.greedy(self.online, self.env.key(state), thr)
                state, r, terminal = self.env.step(state, a, rng)
                out[e] += discount * r
                discount *= self.gamma
                if thr is not None:
                    thr = (thr - r) / self.gamma
                if terminal or discount < 1e-12:
                    break
        return out

    def evaluate(self, step: int, schedule: Schedule) -> list[tuple[int, str, float]]:
        rows = []
        if schedule.oracle is not None and schedule.eval_state is not None:
            key = self.env.key(schedule.eval_state)
            a = 0 if schedule.eval_action is None else schedule.eval_action
            rows.append((step, "eval_mmd2", schedule.oracle.mmd2(self.online.peek(key)[a])))
        if self.cfg.mode is not Mode.EVALUATION:
            rng = np.random.default_rng([self.seed, 1, step])
            returns = self.greedy_episodes(schedule.eval_episodes, rng)
            rows.append((step, "greedy_return", float(returns.sum(axis=1).mean())))
            if self.constraint is not None:
                rows.append((step, "satisfy_prob", float(self.constraint.satisfied(returns).mean())))
        return rows

    # main loop ------------------------------------------------------------

    def run(self, schedule: Schedule, on_metric: Callable[[int, str, float], None] | None = None) -> TrainResult:
        cfg, env = self.cfg, self.env
        metrics: list[tuple[int, str, float]] = []

        def emit(rows):
            for row in rows:
                metrics.append(row)
                if on_metric is not None:
                    on_metric(*row)

        thr0 = None if self.constraint is None else self.constraint.array
        state, thr = env.reset(self.env_rng), thr0
        for step in range(schedule.total_steps):
            key = env.key(state)
            a = self.behaviour_action(key, thr, epsilon_at(step, cfg))
            nxt, r, terminal = env.step(state, a, self.env_rng)
            r = np.asarray(r, dtype=float)
            nthr = None if thr is None else (thr - r) / self.gamma
            self.replay.add(StoredTransition(key, a, r, env.key(nxt), bool(terminal), nthr))
            if terminal:
                state, thr = env.reset(self.env_rng), thr0
            else:
                state, thr = nxt, nthr
            if len(self.replay) >= cfg.min_replay and step % cfg.train_every == 0:
                batch = self.replay.sample(cfg.batch_size, self.replay_rng)
                self.update(batch, lr_at(step, schedule.total_steps, cfg))
            if (step + 1) % schedule.eval_every == 0 or step + 1 == schedule.total_steps:
                if not metrics or metrics[-1][0] != step + 1:
                    emit(self.evaluate(step + 1, schedule))
        return TrainResult(self.online, self.target, metrics, self.updates)


def train(
    env: Env,
    cfg: LearnerConfig,
    schedule: Schedule,
    seed: int = 0,
    policy: Policy | None = None,
    constraint: ConstraintSpec | None = None,
    on_metric: Callable[[int, str, float], None] | None = None,
) -> TrainResult:
    """Run one seeded training job; deterministic given its arguments."""
    return Learner(env, cfg, seed, policy, constraint).run(schedule, on_metric)
