"""Reward-shaping communication protocols between environment step and replay.

Four families:

* Token acknowledgment (``mate_rew`` / ``mate_td``): a two-phase exchange.
  Agents whose monotonic-improvement measure is non-negative send a request
  token to their peers; receivers acknowledge positively when accepting the
  token keeps their own measure non-negative, negatively otherwise.  Both
  received requests and received responses shape the reward.
* Token derivation (``automate`` / ``mediate_i`` / ``mediate_s``): the same
  exchange with tokens learned online from epoch-to-epoch shifts of the
  agents' state-value estimates, optionally agreed on through an
  additive-share consensus.
* Gifting: an extra binary head lets an agent hand reward to its peer, either
  zero-sum or from a per-episode budget.
* Message passing (``rial``): learned two-bit messages delivered into the next
  step's observations, with no reward modification.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

AUTOMATE = "automate"
MEDIATE_I = "mediate_i"
MEDIATE_S = "mediate_s"
MEDIATE_VARIANTS = (AUTOMATE, MEDIATE_I, MEDIATE_S)


# ---------------------------------------------------------------------------
# monotonic improvement measures
# ---------------------------------------------------------------------------


def mi_rew(r_hat: float, r_bar: float) -> float:
    """Reward-difference measure: current (possibly shaped) reward minus the episode mean."""
    return r_hat - r_bar


def state_value(env_q: np.ndarray, epsilon: float, normalized: bool = False) -> float:
    """Value estimate (1 - eps) * max Q + eps * sum Q over the environment head.

    ``normalized`` divides the sum term by the action count, turning it into
    the exact epsilon-greedy expectation; the plain sum is the default.
    """
    total = float(env_q.sum())
    if normalized:
        total /= env_q.size
    return (1.0 - epsilon) * float(env_q.max()) + epsilon * total


def mi_td(
    r_hat: float,
    obs,
    next_obs,
    net,
    gamma: float,
    epsilon: float,
    normalized: bool = False,
) -> float:
    """Temporal-difference measure r + gamma * V(next) - V(current) on the agent's own Q."""
    v_cur = state_value(net.env_q_values(obs), epsilon, normalized)
    v_next = state_value(net.env_q_values(next_obs), epsilon, normalized)
    return r_hat + gamma * v_next - v_cur


# ---------------------------------------------------------------------------
# token exchange
# ---------------------------------------------------------------------------


@dataclass
class MateEvents:
    """What happened during one exchange step, for metrics and tests."""

    requests_sent: list[int]
    requests_received: list[list[float]]
    responses_received: list[list[float]]


def mate_exchange(
    raw_rewards,
    mi_values,
    mi_recheck,
    request_tokens,
    response_tokens,
) -> tuple[np.ndarray, MateEvents]:
    """Run the request and response phases and shape the rewards.

    Phase 1: agent i sends ``request_tokens[i]`` to every other agent iff
    ``mi_values[i] >= 0``.  Phase 2: every receiver j replies with
    +-``response_tokens[j]`` depending on ``mi_recheck(j, raw[j] + x) >= 0``.
    Shaped reward: raw + max(received requests, default 0) + min(received
    responses, default 0).  Request credit applies regardless of whether the
    receiver accepted.
    """
    raw = np.asarray(raw_rewards, dtype=np.float64)
    n = raw.size
    requests: list[list[float]] = [[] for _ in range(n)]
    senders: list[list[int]] = [[] for _ in range(n)]
    sent = [0] * n
    for i in range(n):
        if mi_values[i] >= 0:
            sent[i] = n - 1
            for j in range(n):
                if j != i:
                    requests[j].append(float(request_tokens[i]))
                    senders[j].append(i)
    responses: list[list[float]] = [[] for _ in range(n)]
    for j in range(n):
        for value, i in zip(requests[j], senders[j]):
            accept = mi_recheck(j, raw[j] + value) >= 0
            responses[i].append(float(response_tokens[j]) if accept else -float(response_tokens[j]))
    shaped = raw.copy()
    for i in range(n):
        if requests[i]:
            shaped[i] += max(requests[i])
        if responses[i]:
            shaped[i] += min(responses[i])
    return shaped, MateEvents(sent, requests, responses)


# ---------------------------------------------------------------------------
# learned tokens
# ---------------------------------------------------------------------------


@dataclass
class MediateState:
    """Per-agent token-learning state."""

    variant: str
    local_token: float = 0.1
    consensus_token: float = 0.1
    alpha: float = 0.1
    epoch_length: int = 5
    up_on_drop: bool = True  # raise the token when the value estimate deteriorated
    samples_current: list[float] = field(default_factory=list)
    samples_previous: list[float] = field(default_factory=list)
    r_min: float | None = None  # smallest |r| over nonzero raw rewards seen so far

    def __post_init__(self):
        if self.variant not in MEDIATE_VARIANTS:
            raise ConfigError(f"unknown token-learning variant {self.variant!r}")

    def observe_reward(self, reward: float) -> None:
        if reward != 0.0:
            mag = abs(reward)
            self.r_min = mag if self.r_min is None else min(self.r_min, mag)

    def observe_value(self, value: float) -> None:
        self.samples_current.append(value)

    def exchange_token(self) -> float:
        return self.local_token if self.variant == AUTOMATE else self.consensus_token


def mediate_epoch_update(state: MediateState) -> None:
    """Move the local token by alpha * |dV| / |V_prev| * |r_min| and clamp at zero.

    dV compares the previous epoch's median value estimate against the
    current epoch's; deterioration raises the token (with ``up_on_drop``),
    improvement lowers it.  Without a completed previous epoch this only
    rotates the sample windows.
    """
    prev, cur = state.samples_previous, state.samples_current
    if prev and cur:
        v_prev = statistics.median(prev)
        v_cur = statistics.median(cur)
        if abs(v_prev) < 1e-8 or state.r_min is None:
            delta = 0.0
        else:
            delta = state.alpha * abs(v_prev - v_cur) / abs(v_prev) * state.r_min
        direction = 1.0 if v_cur < v_prev else (-1.0 if v_cur > v_prev else 0.0)
        if not state.up_on_drop:
            direction = -direction
        state.local_token = max(0.0, state.local_token + direction * delta)
    state.samples_previous = cur
    state.samples_current = []


def mediate_consensus(tokens, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Additive-share agreement on the mean of all local tokens.

    Each agent splits its token into n random shares summing exactly to it,
    keeps one and distributes the rest; summing everyone's partial sums
    reconstructs sum(tokens), so every agent ends up with the identical mean.
    Returns (consensus value, share matrix) where ``shares[i, j]`` is what
    agent i handed to agent j.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n = tokens.size
    if n < 2:
        raise ConfigError("consensus needs at least two agents")
    shares = np.empty((n, n))
    for i in range(n):
        cuts = rng.uniform(0.0, tokens[i], size=n - 1)
        shares[i, : n - 1] = cuts
        shares[i, n - 1] = tokens[i] - cuts.sum()
    partials = shares.sum(axis=0)  # partial sum held by each agent
    consensus = float(partials.sum() / n)
    return consensus, shares


# ---------------------------------------------------------------------------
# gifting
# ---------------------------------------------------------------------------


@dataclass
class GiftingState:
    variant: str  # "zerosum" | "budget"
    gift_amount: float = 1.0
    budget_limit: float = 10.0
    budget: float = 10.0
    gifts_sent_episode: int = 0

    def reset_episode(self) -> None:
        self.budget = self.budget_limit
        self.gifts_sent_episode = 0


def gifting_apply(decisions, states: list[GiftingState], raw_rewards) -> tuple[np.ndarray, list[bool]]:
    """Apply gift decisions (slot 1 = gift) and return shaped rewards.

    Zero-sum gifts transfer the amount from giver to receiver; budget gifts
    come out of the giver's per-episode budget and cost the giver nothing,
    with exhausted budgets making further gifts inert.  Returns the shaped
    rewards plus a per-agent flag telling whether a transfer actually happened.
    """
    shaped = np.asarray(raw_rewards, dtype=np.float64).copy()
    n = shaped.size
    effective = [False] * n
    for i, decision in enumerate(decisions):
        if decision != 1:
            continue
        state = states[i]
        recipient = (i + 1) % n
        if state.variant == "zerosum":
            shaped[recipient] += state.gift_amount
            shaped[i] -= state.gift_amount
            state.gifts_sent_episode += 1
            effective[i] = True
        else:
            if state.budget >= state.gift_amount:
                shaped[recipient] += state.gift_amount
                state.budget -= state.gift_amount
                state.gifts_sent_episode += 1
                effective[i] = True
    return shaped, effective


# ---------------------------------------------------------------------------
# message passing
# ---------------------------------------------------------------------------


@dataclass
class RialState:
    """Messages in flight: bits chosen at step t appear in observations at t+1."""

    n_agents: int = 2
    n_bits: int = 2
    last_sent: list[np.ndarray] = field(default_factory=list)

    def reset(self, rng: np.random.Generator) -> None:
        self.last_sent = [
            rng.integers(0, 2, size=self.n_bits).astype(np.float64) for _ in range(self.n_agents)
        ]

    def fragments(self, agent: int) -> np.ndarray:
        """Observation fragment for ``agent``: own sent bits then the peer's."""
        other = (agent + 1) % self.n_agents
        return np.concatenate([self.last_sent[agent], self.last_sent[other]])


def rial_exchange(state: RialState, messages) -> list[np.ndarray]:
    """Deliver this step's chosen bits; returns each agent's next-step fragment."""
    if len(messages) != state.n_agents:
        raise ConfigError("one message per agent required")
    state.last_sent = [np.asarray(m, dtype=np.float64) for m in messages]
    for m in state.last_sent:
        if m.size != state.n_bits or not np.all(np.isin(m, (0.0, 1.0))):
            raise ConfigError(f"messages must be {state.n_bits} bits")
    return [state.fragments(i) for i in range(state.n_agents)]


# ---------------------------------------------------------------------------
# step drivers used by the experiment loop
# ---------------------------------------------------------------------------


@dataclass
class StepContext:
    step: int
    raw_rewards: np.ndarray
    obs: list[np.ndarray]
    next_obs: list[np.ndarray]
    agents: list
    epsilon: float
    gift_decisions: list[int] | None = None


class _RunningMean:
    __slots__ = ("count", "mean")

    def __init__(self):
        self.count = 0
        self.mean = 0.0

    def update(self, value: float) -> float:
        self.count += 1
        self.mean += (value - self.mean) / self.count
        return self.mean


class NoProtocol:
    """Identity shaping: shaped rewards equal raw rewards exactly."""

    name = "baseline"

    def begin_episode(self, rng) -> None:
        pass

    def shape_step(self, ctx: StepContext) -> np.ndarray:
        return ctx.raw_rewards

    def end_episode(self, episode: int, rng) -> None:
        pass

    def token_mean(self) -> float | None:
        return None

    def observation_fragment(self, agent: int) -> np.ndarray | None:
        return None


class MateProtocol(NoProtocol):
    """Fixed-token acknowledgment exchange with either improvement measure."""

    def __init__(
        self,
        mi_kind: str,
        x_token: float = 1.0,
        y_token: float = 1.0,
        gamma: float = 0.9,
        normalized_value: bool = False,
        trace=None,
    ):
        if mi_kind not in ("rew", "td"):
            raise ConfigError(f"unknown improvement measure {mi_kind!r}")
        if x_token < 0 or y_token < 0:
            raise ConfigError("token values must be non-negative")
        self.name = f"mate_{mi_kind}"
        self.mi_kind = mi_kind
        self.x_token = x_token
        self.y_token = y_token
        self.gamma = gamma
        self.normalized_value = normalized_value
        self.trace = trace
        self._means: list[_RunningMean] = []
        self.tokens_exchanged = 0

    def begin_episode(self, rng) -> None:
        self._means = []

    def _request_tokens(self, n: int) -> list[float]:
        return [self.x_token] * n

    def _response_tokens(self, n: int) -> list[float]:
        return [self.y_token] * n

    def _values(self, ctx: StepContext) -> tuple[list[float], list[float]]:
        v_cur, v_next = [], []
        for i, agent in enumerate(ctx.agents):
            v_cur.append(state_value(agent.env_q_values(ctx.obs[i]), ctx.epsilon, self.normalized_value))
            v_next.append(state_value(agent.env_q_values(ctx.next_obs[i]), ctx.epsilon, self.normalized_value))
        return v_cur, v_next

    def shape_step(self, ctx: StepContext) -> np.ndarray:
        n = len(ctx.agents)
        raw = ctx.raw_rewards
        if self.mi_kind == "rew":
            if not self._means:
                self._means = [_RunningMean() for _ in range(n)]
            means = [self._means[i].update(float(raw[i])) for i in range(n)]
            mi_values = [mi_rew(float(raw[i]), means[i]) for i in range(n)]

            def recheck(j: int, r_plus: float) -> float:
                return mi_rew(r_plus, means[j])

        else:
            v_cur, v_next = self._values(ctx)
            self._observe_values(v_cur, raw)
            mi_values = [
                float(raw[i]) + self.gamma * v_next[i] - v_cur[i] for i in range(n)
            ]

            def recheck(j: int, r_plus: float) -> float:
                return r_plus + self.gamma * v_next[j] - v_cur[j]

        shaped, events = mate_exchange(
            raw, mi_values, recheck, self._request_tokens(n), self._response_tokens(n)
        )
        self.tokens_exchanged += sum(events.requests_sent)
        if self.trace is not None:
            for i in range(n):
                self.trace.write(
                    f"step={ctx.step} agent={i} mi={mi_values[i]:.6f} "
                    f"req_in={events.requests_received[i]} res_in={events.responses_received[i]} "
                    f"shaped={shaped[i]:.6f}\n"
                )
        return shaped

    def _observe_values(self, v_cur: list[float], raw: np.ndarray) -> None:
        pass

    def token_mean(self) -> float | None:
        return 0.5 * (self.x_token + self.y_token)


class MediateProtocol(MateProtocol):
    """Token-learning exchange; always uses the temporal-difference measure."""

    def __init__(
        self,
        variant: str,
        n_agents: int = 2,
        gamma: float = 0.9,
        token_alpha: float = 0.1,
        epoch_length: int = 5,
        init_token: float = 0.1,
        up_on_drop: bool = True,
        normalized_value: bool = False,
        trace=None,
    ):
        super().__init__("td", gamma=gamma, normalized_value=normalized_value, trace=trace)
        self.name = variant
        self.states = [
            MediateState(
                variant,
                local_token=init_token,
                consensus_token=init_token,
                alpha=token_alpha,
                epoch_length=epoch_length,
                up_on_drop=up_on_drop,
            )
            for _ in range(n_agents)
        ]
        self.epoch_length = epoch_length

    def _request_tokens(self, n: int) -> list[float]:
        return [s.exchange_token() for s in self.states]

    def _response_tokens(self, n: int) -> list[float]:
        return [s.exchange_token() for s in self.states]

    def _observe_values(self, v_cur: list[float], raw: np.ndarray) -> None:
        for state, v, r in zip(self.states, v_cur, raw):
            state.observe_value(v)
            state.observe_reward(float(r))

    def end_episode(self, episode: int, rng) -> None:
        if (episode + 1) % self.epoch_length != 0:
            return
        variant = self.states[0].variant
        if variant == MEDIATE_S:
            for s in self.states:
                s.local_token = s.consensus_token
        for s in self.states:
            mediate_epoch_update(s)
        if variant in (MEDIATE_I, MEDIATE_S):
            consensus, _ = mediate_consensus([s.local_token for s in self.states], rng)
            for s in self.states:
                s.consensus_token = consensus

    def token_mean(self) -> float:
        return float(np.mean([s.exchange_token() for s in self.states]))


class GiftingProtocol(NoProtocol):
    """Binary gift head shaping; the environment rewards are otherwise untouched."""

    def __init__(self, variant: str, gift_amount: float = 1.0, budget: float = 10.0, trace=None):
        if variant not in ("zerosum", "budget"):
            raise ConfigError(f"unknown gifting variant {variant!r}")
        self.name = f"gifting_{variant}"
        self.variant = variant
        self.states = [
            GiftingState(variant, gift_amount=gift_amount, budget_limit=budget, budget=budget)
            for _ in range(2)
        ]
        self.trace = trace

    def begin_episode(self, rng) -> None:
        for s in self.states:
            s.reset_episode()

    def budgets(self) -> list[float]:
        return [s.budget for s in self.states]

    def shape_step(self, ctx: StepContext) -> np.ndarray:
        shaped, effective = gifting_apply(ctx.gift_decisions, self.states, ctx.raw_rewards)
        if self.trace is not None:
            for i, decision in enumerate(ctx.gift_decisions):
                self.trace.write(
                    f"step={ctx.step} agent={i} gift={decision} effective={effective[i]} "
                    f"shaped={shaped[i]:.6f}\n"
                )
        return shaped


class RialProtocol(NoProtocol):
    """Two-bit learned messages with one-step delivery delay; no reward shaping."""

    name = "rial"

    def __init__(self, n_agents: int = 2, n_bits: int = 2):
        self.state = RialState(n_agents, n_bits)

    def begin_episode(self, rng) -> None:
        self.state.reset(rng)

    def deliver(self, messages) -> None:
        rial_exchange(self.state, messages)

    def observation_fragment(self, agent: int) -> np.ndarray:
        return self.state.fragments(agent)
