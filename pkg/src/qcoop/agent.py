"""Independent Q-learning agent: multi-head epsilon-greedy control plus
per-episode minibatch training with Adam on the mean-squared TD error.

There is no target network; TD targets come from the live network.  All heads
of an agent share the same shaped reward in their targets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class Transition:
    obs: np.ndarray
    actions: np.ndarray  # chosen slot per head, aligned with head order
    reward: float  # shaped
    next_obs: np.ndarray
    terminal: bool


class ReplayBuffer:
    """FIFO transition store; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def append(self, transition: Transition) -> None:
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, rng: np.random.Generator, size: int) -> list[Transition]:
        """Uniform sample with replacement."""
        idx = rng.integers(0, len(self._items), size=size)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay or the clipped exponential used in the spatial game."""

    kind: str  # "linear" | "exponential"
    eps_initial: float
    eps_final: float
    horizon: int

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ConfigError(f"unknown epsilon schedule {self.kind!r}")
        if self.horizon <= 0:
            raise ConfigError("schedule horizon must be positive")


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    """Exploration rate for ``episode`` (0-based).

    The exponential form is eps_initial * 0.95 ** (100 * episode / horizon)
    floored at eps_final, i.e. the floor engages once the decay passes it
    rather than pinning epsilon from the start.
    """
    if episode < 0:
        raise ConfigError("episode must be non-negative")
    if schedule.kind == "linear":
        value = schedule.eps_initial * (1.0 - episode / schedule.horizon)
    else:
        value = schedule.eps_initial * 0.95 ** (100.0 * episode / schedule.horizon)
    return max(schedule.eps_final, value)


class Adam:
    """Adam over named parameter groups with per-group learning rates."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        rates: dict[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.rates = rates
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            self.params[name] -= self.rates[name] * m_hat / (np.sqrt(v_hat) + self.eps)


def select_actions(net, observation, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Independent epsilon-greedy choice per head; ties break to the lowest slot."""
    q = net.forward(observation)
    return _select_from_q(net, q, epsilon, rng)


def _select_from_q(net, q: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    choices = []
    for _, sl in net.head_slices():
        if rng.random() < epsilon:
            choices.append(int(rng.integers(sl.stop - sl.start)))
        else:
            choices.append(int(np.argmax(q[sl])))
    return np.array(choices, dtype=np.int64)


def td_target(reward: float, next_obs, net, gamma: float, terminal: bool) -> np.ndarray:
    """Per-head backup target; the shaped reward is shared across heads."""
    heads = net.head_slices()
    if terminal:
        return np.full(len(heads), reward)
    q_next = net.forward(next_obs)
    return np.array([reward + gamma * float(q_next[sl].max()) for _, sl in heads])


class QAgent:
    """One learner: network, replay buffer, optimizer, and a Q cache.

    The cache memoizes forward passes keyed by observation bytes and is
    invalidated on every optimizer step; matrix games only ever see a handful
    of distinct observations, so this removes nearly all redundant circuit
    evaluations.
    """

    def __init__(
        self,
        net,
        *,
        gamma: float,
        alpha: float,
        alpha_w: float,
        buffer_capacity: int,
        minibatches: int,
        batch_size: int,
        rng: np.random.Generator,
    ):
        self.net = net
        self.gamma = gamma
        self.minibatches = minibatches
        self.batch_size = batch_size
        self.rng = rng
        self.buffer = ReplayBuffer(buffer_capacity)
        groups = net.param_groups()
        rates = {
            name: alpha_w if net.learning_rate_key(name) == "alpha_w" else alpha
            for name in groups
        }
        self.opt = Adam(groups, rates)
        self._q_cache: dict[bytes, np.ndarray] = {}
        self._heads = net.head_slices()

    def q_values(self, observation) -> np.ndarray:
        obs = np.asarray(observation, dtype=np.float64)
        key = obs.tobytes()
        q = self._q_cache.get(key)
        if q is None:
            q = self.net.forward(obs)
            if len(self._q_cache) >= 4096:
                self._q_cache.clear()
            self._q_cache[key] = q
        return q

    def env_q_values(self, observation) -> np.ndarray:
        _, sl = self._heads[0]
        return self.q_values(observation)[sl]

    def select_actions(self, observation, epsilon: float) -> np.ndarray:
        return _select_from_q(self.net, self.q_values(observation), epsilon, self.rng)

    def store(self, obs, actions, reward, next_obs, terminal) -> None:
        if len(actions) != len(self._heads):
            raise ConfigError(f"{len(actions)} actions for {len(self._heads)} heads")
        self.buffer.append(
            Transition(
                np.asarray(obs, dtype=np.float64),
                np.asarray(actions, dtype=np.int64),
                float(reward),
                np.asarray(next_obs, dtype=np.float64),
                bool(terminal),
            )
        )

    def train_episode(self) -> float:
        """Run the configured minibatches, one Adam step each; returns the last loss.

        Within a minibatch, Q-values, jacobians and bootstrap values are
        computed once per distinct observation and shared across samples.
        """
        if len(self.buffer) == 0:
            raise ConfigError("cannot train from an empty replay buffer")
        n_slots = self.net.n_slots
        last_loss = 0.0
        for _ in range(self.minibatches):
            batch = self.buffer.sample(self.rng, self.batch_size)

            obs_index: dict[bytes, int] = {}
            unique_obs = []
            for t in batch:
                key = t.obs.tobytes()
                if key not in obs_index:
                    obs_index[key] = len(unique_obs)
                    unique_obs.append(t.obs)
            next_index: dict[bytes, int] = {}
            extra_obs = []
            for t in batch:
                key = t.next_obs.tobytes()
                if not t.terminal and key not in obs_index and key not in next_index:
                    next_index[key] = len(extra_obs)
                    extra_obs.append(t.next_obs)
            q_all, jac = self.net.q_jacobian_batch(unique_obs)
            q_extra = self.net.forward_batch(extra_obs) if extra_obs else None

            coeffs = np.zeros((len(unique_obs), n_slots))
            loss = 0.0
            inv_b = 1.0 / self.batch_size
            for t in batch:
                row = obs_index[t.obs.tobytes()]
                if not t.terminal:
                    nk = t.next_obs.tobytes()
                    q_next = q_all[obs_index[nk]] if nk in obs_index else q_extra[next_index[nk]]
                for head_idx, (_, sl) in enumerate(self._heads):
                    slot = sl.start + int(t.actions[head_idx])
                    target = t.reward
                    if not t.terminal:
                        target += self.gamma * float(q_next[sl].max())
                    residual = q_all[row, slot] - target
                    loss += residual * residual * inv_b
                    coeffs[row, slot] += 2.0 * residual * inv_b
            grads = {
                group: np.tensordot(coeffs, j, axes=([0, 1], [0, 1]))
                for group, j in jac.items()
            }
            self.opt.step(grads)
            self._q_cache.clear()
            last_loss = loss
        return last_loss
