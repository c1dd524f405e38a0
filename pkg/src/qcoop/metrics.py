"""Per-episode cooperation metrics and final greedy policy evaluation.

All quantities are computed from RAW environment rewards; shaped rewards are
logged in separate columns so token exchanges and gifts never distort the
game-level comparison.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

CSV_COLUMNS = (
    "episode",
    "C",
    "FC",
    "I",
    "FG",
    "token_mean",
    "epsilon",
    "r0_raw",
    "r1_raw",
    "r0_shaped",
    "r1_shaped",
)


@dataclass
class EpisodeRecord:
    """Accumulator for one episode's metric row."""

    episode: int
    epsilon: float = 0.0
    collective: float = 0.0  # C: sum of raw rewards over agents and steps
    mutual_coop: int = 0  # FC: steps where every agent played the cooperative action
    inequality: float = 0.0  # I: sum over steps of |r0 - r1|
    gift_events: int = 0
    decisions: int = 0  # |D| = agents x steps, the FG denominator
    token_mean: float | None = None
    raw_returns: np.ndarray = field(default_factory=lambda: np.zeros(2))
    shaped_returns: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def gift_fraction(self) -> float | None:
        if self.decisions == 0:
            return None
        return self.gift_events / self.decisions


def accumulate(
    record: EpisodeRecord,
    raw_rewards,
    env_actions,
    cooperative_action: int,
    shaped_rewards=None,
    gift_decisions=None,
) -> None:
    """Fold one step into the record; gift columns stay absent without a gifting head."""
    raw = np.asarray(raw_rewards, dtype=np.float64)
    record.collective += float(raw.sum())
    if all(int(a) == cooperative_action for a in env_actions):
        record.mutual_coop += 1
    record.inequality += float(abs(raw[0] - raw[1]))
    record.raw_returns += raw
    shaped = raw if shaped_rewards is None else np.asarray(shaped_rewards, dtype=np.float64)
    record.shaped_returns += shaped
    if gift_decisions is not None:
        record.gift_events += sum(int(d) == 1 for d in gift_decisions)
        record.decisions += len(gift_decisions)


def write_episode_csv(path, records: list[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            fg = r.gift_fraction
            writer.writerow(
                [
                    r.episode,
                    repr(r.collective),
                    r.mutual_coop,
                    repr(r.inequality),
                    "" if fg is None else repr(fg),
                    "" if r.token_mean is None else repr(r.token_mean),
                    repr(r.epsilon),
                    repr(float(r.raw_returns[0])),
                    repr(float(r.raw_returns[1])),
                    repr(float(r.shaped_returns[0])),
                    repr(float(r.shaped_returns[1])),
                ]
            )


def read_episode_csv(path) -> dict[str, np.ndarray]:
    """Columns as float arrays; empty cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV schema in {path}: {header}")
        rows = list(reader)
    out = {}
    for k, name in enumerate(CSV_COLUMNS):
        out[name] = np.array([float(row[k]) if row[k] != "" else np.nan for row in rows])
    return out


# ---------------------------------------------------------------------------
# final greedy policy evaluation
# ---------------------------------------------------------------------------


def enumerate_observations(protocol: str, budget_samples=(0.0, 5.0, 10.0)) -> list[np.ndarray]:
    """Every observation a matrix-game agent of this protocol can see.

    Plain protocols enumerate the 4 joint-action pairs; the messaging
    protocol adds all 16 message-bit patterns; the budgeted gifting variant
    samples the budget at a fixed grid since it is a continuous feature.
    """
    pairs = [np.array(p, dtype=np.float64) for p in itertools.product((0.0, 1.0), repeat=2)]
    if protocol == "rial":
        out = []
        for pair in pairs:
            for bits in itertools.product((0.0, 1.0), repeat=4):
                out.append(np.concatenate([pair, bits]))
        return out
    if protocol == "gifting_budget":
        return [np.append(pair, b) for pair in pairs for b in budget_samples]
    if protocol == "gifting_zerosum" or protocol in (
        "baseline", "mate_rew", "mate_td", "automate", "mediate_i", "mediate_s",
    ):
        return pairs
    raise ConfigError(f"no observation enumeration for protocol {protocol!r}")


def final_policy_eval(agents, protocol: str, cooperative_action: int = 0) -> list[float]:
    """Fraction of enumerated observations where the greedy env action cooperates."""
    observations = enumerate_observations(protocol)
    fractions = []
    for agent in agents:
        coop = 0
        for obs in observations:
            greedy = int(np.argmax(agent.env_q_values(obs)))
            coop += greedy == cooperative_action
        fractions.append(coop / len(observations))
    return fractions


def write_final_eval(path, fractions: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "coop_fraction"])
        for i, frac in enumerate(fractions):
            writer.writerow([i, repr(float(frac))])


def read_final_eval(path) -> list[float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["agent", "coop_fraction"]:
            raise ConfigError(f"unexpected final-eval schema in {path}: {header}")
        return [float(row[1]) for row in reader]
