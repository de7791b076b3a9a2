"""Actor-critic network and the PPO clipped-surrogate update, in plain numpy.

The network is a single shared hidden layer of rectified-linear units with
two heads: four action logits and one state value.  All weights live in one
flat vector so that optimizers and finite-difference checks can treat the
model as a point in R^n.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .world import N_ACTIONS

CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    pass


class ActorCritic:
    """Per-species policy network; one instance is shared by all conspecifics."""

    def __init__(
        self,
        input_size: int,
        hidden_size: int = 128,
        n_actions: int = N_ACTIONS,
        species: str = "",
        seed: int | None = 0,
        theta: np.ndarray | None = None,
        version: int = CHECKPOINT_VERSION,
    ):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.n_actions = int(n_actions)
        self.species = species
        self.version = version
        self._shapes = [
            ("W1", (self.input_size, self.hidden_size)),
            ("b1", (self.hidden_size,)),
            ("Wa", (self.hidden_size, self.n_actions)),
            ("ba", (self.n_actions,)),
            ("Wv", (self.hidden_size, 1)),
            ("bv", (1,)),
        ]
        n = sum(math.prod(s) for _, s in self._shapes)
        if theta is None:
            self.theta = np.zeros(n)
            if seed is not None:
                self._init(np.random.default_rng(seed))
        else:
            theta = np.asarray(theta)
            if theta.shape != (n,):
                raise ValueError(f"weight vector has {theta.size} entries, layout needs {n}")
            self.theta = theta.copy()

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return (self.input_size, self.hidden_size, self.n_actions)

    def _init(self, rng: np.random.Generator) -> None:
        p = self.params()
        p["W1"][:] = rng.normal(0.0, math.sqrt(2.0 / self.input_size), p["W1"].shape)
        p["Wa"][:] = rng.normal(0.0, 0.01 / math.sqrt(self.hidden_size), p["Wa"].shape)
        p["Wv"][:] = rng.normal(0.0, 1.0 / math.sqrt(self.hidden_size), p["Wv"].shape)

    def params(self, theta: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Named views into ``theta`` (default: own weights)."""
        theta = self.theta if theta is None else theta
        out, off = {}, 0
        for name, shape in self._shapes:
            size = math.prod(shape)
            out[name] = theta[off : off + size].reshape(shape)
            off += size
        return out

    def copy(self) -> "ActorCritic":
        return ActorCritic(*self.layer_sizes, species=self.species, theta=self.theta, version=self.version)

    def snapshot(self, dtype=np.float32) -> "ActorCritic":
        """Read-only copy for rollouts; float32 halves the cost of acting."""
        snap = ActorCritic(*self.layer_sizes, species=self.species, theta=self.theta.astype(dtype), version=self.version)
        snap.theta.setflags(write=False)
        return snap

    # -- forward / backward ---------------------------------------------------

    def forward(self, X: np.ndarray, theta: np.ndarray | None = None):
        p = self.params(theta)
        X = np.asarray(X, dtype=p["W1"].dtype)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_size:
            raise ValueError(f"observation has {X.shape[1]} features, policy expects {self.input_size}")
        pre = X @ p["W1"] + p["b1"]
        h = np.maximum(pre, 0.0)
        logits = h @ p["Wa"] + p["ba"]
        values = (h @ p["Wv"] + p["bv"])[:, 0]
        return logits, values, (X, pre, h)

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        X, pre, h = cache
        p = self.params(theta)
        grad = np.zeros(self.n_params)
        g = self.params(grad)
        g["Wa"][:] = h.T @ dlogits
        g["ba"][:] = dlogits.sum(axis=0)
        g["Wv"][:] = h.T @ dvalues[:, None]
        g["bv"][:] = dvalues.sum()
        dh = dlogits @ p["Wa"].T + dvalues[:, None] @ p["Wv"].T
        dpre = dh * (pre > 0)
        g["W1"][:] = X.T @ dpre
        g["b1"][:] = dpre.sum(axis=0)
        return grad

    def probabilities(self, X: np.ndarray) -> np.ndarray:
        logits, _, _ = self.forward(X)
        return softmax(logits)

    def act_batch(self, X: np.ndarray, rng: np.random.Generator, greedy: bool = False):
        logits, values, _ = self.forward(X)
        logp = log_softmax(logits)
        if greedy:
            actions = np.argmax(logits, axis=1)
        else:
            actions = sample_categorical(np.exp(logp), rng)
        return actions, logp[np.arange(len(actions)), actions], values

    # -- checkpoints ------------------------------------------------------------

    def header(self) -> dict:
        return {
            "version": self.version,
            "species": self.species,
            "layer_sizes": list(self.layer_sizes),
            "n_params": self.n_params,
        }

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(self.header())), theta=self.theta.astype(np.float64))

    @classmethod
    def load(cls, path) -> "ActorCritic":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            theta = data["theta"]
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported policy checkpoint version {header.get('version')}")
        pol = cls(*header["layer_sizes"], species=header["species"], theta=theta)
        if pol.n_params != header["n_params"]:
            raise ValueError("parameter count does not match recorded layout")
        return pol


class RandomPolicy:
    """Uniform scripted stand-in with the same acting interface."""

    def __init__(self, n_actions: int = N_ACTIONS):
        self.n_actions = n_actions

    def act_batch(self, X, rng, greedy: bool = False):
        n = len(X)
        actions = rng.integers(self.n_actions, size=n)
        return actions, np.full(n, -math.log(self.n_actions)), np.zeros(n)

    def snapshot(self, dtype=None):
        return self


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] * cdf[:, -1:] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def act(policy: ActorCritic, observation: np.ndarray, rng: np.random.Generator) -> tuple[int, float, float]:
    """Sample one action; returns (action, log-probability, value estimate)."""
    a, lp, v = policy.act_batch(np.asarray(observation)[None, :], rng)
    return int(a[0]), float(lp[0]), float(v[0])


# ---------------------------------------------------------------------------
# trajectories and advantages


@dataclass
class Trajectory:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    bootstrap_value: float = 0.0
    species: str = ""
    stage: str = ""
    seed: int = 0
    length: int = 0  # world steps the focal agent lived through

    def append(self, obs, action, logp, reward, value, done=False) -> None:
        self.obs.append(obs)
        self.actions.append(int(action))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


@dataclass
class PPOHyperparams:
    gamma: float = 0.99
    learning_rate: float = 3e-4
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    epochs: int = 10
    minibatch_size: int = 64
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.01
    max_grad_norm: float = 0.5
    rollout_steps: int = 2048
    normalize_advantages: bool = True
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def compute_advantages(traj: Trajectory, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets for one trajectory."""
    T = len(traj)
    if T == 0:
        raise ValueError("empty trajectory")
    r = np.asarray(traj.rewards, dtype=float)
    v = np.asarray(traj.values, dtype=float)
    done = np.asarray(traj.dones, dtype=float)
    next_v = np.append(v[1:], traj.bootstrap_value)
    delta = r + gamma * next_v * (1.0 - done) - v
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        last = delta[t] + gamma * lam * (1.0 - done[t]) * last
        adv[t] = last
    return adv, adv + v


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    old_logps: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.old_logps[idx], self.advantages[idx], self.returns[idx])


def make_batch(trajectories: Sequence[Trajectory], hp: PPOHyperparams) -> Batch:
    trajs = [t for t in trajectories if len(t)]
    if not trajs:
        raise ValueError("empty batch")
    advs, rets = zip(*(compute_advantages(t, hp.gamma, hp.gae_lambda) for t in trajs))
    return Batch(
        obs=np.concatenate([np.asarray(t.obs) for t in trajs]),
        actions=np.concatenate([np.asarray(t.actions, dtype=int) for t in trajs]),
        old_logps=np.concatenate([np.asarray(t.logps, dtype=float) for t in trajs]),
        advantages=np.concatenate(advs),
        returns=np.concatenate(rets),
    )


# ---------------------------------------------------------------------------
# loss, gradient, optimisers


def ppo_loss(policy: ActorCritic, theta: np.ndarray, batch: Batch, hp: PPOHyperparams, with_grad: bool = True):
    """Loss to minimise (negated clipped surrogate + value loss - entropy bonus).

    Returns ``(loss, grad or None, diagnostics)``.
    """
    n = len(batch)
    if n == 0:
        return 0.0, (np.zeros(policy.n_params) if with_grad else None), {}
    logits, values, cache = policy.forward(np.asarray(batch.obs, dtype=theta.dtype), theta)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.old_logps)
    eps = hp.clip_epsilon
    A = batch.advantages
    unclipped = ratio * A
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * A
    surrogate = np.minimum(unclipped, clipped)
    entropy = -(p * logp_all).sum(axis=1)
    value_err = values - batch.returns
    policy_loss = -surrogate.mean()
    value_loss = float(np.mean(value_err**2))
    loss = policy_loss + hp.value_loss_coeff * value_loss - hp.entropy_coeff * entropy.mean()
    diag = {
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": float(entropy.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean(batch.old_logps - logp)),
    }
    if not with_grad:
        return float(loss), None, diag
    # ratio branch active where the unclipped term attains the minimum
    active = unclipped <= clipped
    g = np.where(active, A * ratio, 0.0)
    onehot = np.zeros_like(p)
    onehot[rows, batch.actions] = 1.0
    dlogits = -(g[:, None] * (onehot - p)) / n
    dlogits += hp.entropy_coeff * p * (logp_all + entropy[:, None]) / n
    dvalues = 2.0 * hp.value_loss_coeff * value_err / n
    grad = policy.backward(cache, dlogits, dvalues, theta)
    return float(loss), grad, diag


class Adam:
    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr: float = 3e-4):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        theta -= self.lr * grad


def make_optimizer(hp: PPOHyperparams):
    if hp.optimizer == "adam":
        return Adam(hp.learning_rate)
    if hp.optimizer == "sgd":
        return SGD(hp.learning_rate)
    raise ValueError(f"unknown optimizer {hp.optimizer!r}")


def ppo_update(
    policy: ActorCritic,
    batch: Batch | Sequence[Trajectory],
    hp: PPOHyperparams,
    optimizer=None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Run ``hp.epochs`` passes of minibatch gradient steps on ``policy`` in place.

    Returns averaged diagnostics.  A non-finite loss aborts before any
    weights from the offending minibatch are applied.
    """
    if not isinstance(batch, Batch):
        batch = make_batch(batch, hp)
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    if hp.normalize_advantages and n > 1:
        A = batch.advantages
        batch = Batch(batch.obs, batch.actions, batch.old_logps, (A - A.mean()) / (A.std() + 1e-8), batch.returns)
    optimizer = optimizer or make_optimizer(hp)
    rng = rng or np.random.default_rng(0)
    totals: dict[str, float] = {}
    count = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for k, start in enumerate(range(0, n, hp.minibatch_size)):
            mb = batch.subset(order[start : start + hp.minibatch_size])
            loss, grad, diag = ppo_loss(policy, policy.theta, mb, hp)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NonFiniteLossError(f"non-finite loss in epoch {epoch}, minibatch {k} (rows {start}..)")
            norm = float(np.linalg.norm(grad))
            if hp.max_grad_norm and norm > hp.max_grad_norm:
                grad *= hp.max_grad_norm / norm
            optimizer.step(policy.theta, grad)
            if not np.all(np.isfinite(policy.theta)):
                raise NonFiniteLossError(f"non-finite weights after epoch {epoch}, minibatch {k}")
            for key, val in diag.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    return {k: v / count for k, v in totals.items()}


def gradient_check(
    policy: ActorCritic,
    batch: Batch,
    epsilon: float = 1e-5,
    hp: PPOHyperparams | None = None,
    grad_fn: Callable | None = None,
    floor: float = 1e-6,
) -> float:
    """Max over parameters of |analytic - central difference| / max(|a|, |n|, floor)."""
    hp = hp or PPOHyperparams()
    if len(batch) == 0:
        return 0.0
    theta = policy.theta.astype(np.float64).copy()
    if grad_fn is None:
        _, analytic, _ = ppo_loss(policy, theta, batch, hp)
    else:
        analytic = grad_fn(policy, theta, batch, hp)
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + epsilon
        fp, _, _ = ppo_loss(policy, theta, batch, hp, with_grad=False)
        theta[i] = old - epsilon
        fm, _, _ = ppo_loss(policy, theta, batch, hp, with_grad=False)
        theta[i] = old
        numeric[i] = (fp - fm) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
