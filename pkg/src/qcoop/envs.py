"""Iterated 2x2 matrix games and the apple-gathering gridworld.

Matrix games expose the previous joint action as the observation; the
gridworld gives each agent a rotated egocentric 5x5 window flattened to 100
non-negative features.  Both are fully deterministic given their RNG streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, InputError

MATRIX_ENVS = ("ipd", "stag_hunt", "chicken")

# row = player-0 action, column = player-1 action, innermost = (r0, r1);
# action 0 is the cooperative one in every dilemma
DEFAULT_PAYOFFS = {
    "ipd": [[[3, 3], [0, 5]], [[5, 0], [1, 1]]],
    "stag_hunt": [[[4, 4], [1, 3]], [[3, 1], [2, 2]]],
    "chicken": [[[3, 3], [2, 4]], [[4, 2], [1, 1]]],
}

ACTION_LABELS = {
    "ipd": ("cooperate", "defect"),
    "stag_hunt": ("hunt", "forage"),
    "chicken": ("chicken", "dare"),
}


@dataclass(frozen=True)
class PayoffMatrix:
    """2x2 reward table with the ordering constraints of its dilemma."""

    kind: str
    payoffs: np.ndarray  # (2, 2, 2) floats
    cooperative_action: int = 0

    @classmethod
    def default(cls, kind: str) -> "PayoffMatrix":
        return cls.from_table(kind, DEFAULT_PAYOFFS[kind])

    @classmethod
    def from_table(cls, kind: str, table) -> "PayoffMatrix":
        if kind not in MATRIX_ENVS:
            raise ConfigError(f"unknown matrix game {kind!r}")
        payoffs = np.asarray(table, dtype=np.float64)
        if payoffs.shape != (2, 2, 2):
            raise ConfigError(f"payoff table must be 2x2x2, got {payoffs.shape}")
        matrix = cls(kind, payoffs)
        matrix.validate()
        return matrix

    def validate(self) -> None:
        p = self.payoffs
        for a in range(2):
            for b in range(2):
                if p[a, b, 0] != p[b, a, 1]:
                    raise ConfigError("payoff table must be symmetric between the players")
        r, s, t, pu = p[0, 0, 0], p[0, 1, 0], p[1, 0, 0], p[1, 1, 0]
        if self.kind == "ipd":
            if not (t > r > pu > s):
                raise ConfigError(f"prisoner's dilemma needs T > R > P > S, got {(t, r, pu, s)}")
            if not (2 * r > s + t > 2 * pu):
                raise ConfigError(f"prisoner's dilemma needs 2R > S + T > 2P, got {(r, s, t, pu)}")
        elif self.kind == "chicken":
            if not (t > r > s > pu):
                raise ConfigError(f"chicken needs T > R > S > P, got {(t, r, s, pu)}")
        else:  # stag hunt
            others = [p[0, 1, 0], p[0, 1, 1], p[1, 0, 0], p[1, 0, 1], p[1, 1, 0], p[1, 1, 1]]
            if not all(r > o for o in others):
                raise ConfigError("stag hunt needs the mutual-hunt payoff strictly highest")

    def rewards(self, a0: int, a1: int) -> tuple[float, float]:
        return float(self.payoffs[a0, a1, 0]), float(self.payoffs[a0, a1, 1])


class MatrixGame:
    """Iterated 2-player game; both agents observe the same previous joint action."""

    n_agents = 2

    def __init__(self, payoff: PayoffMatrix, episode_len: int = 50):
        self.payoff = payoff
        self.episode_len = episode_len
        self.step_count = 0
        self._prev_joint: tuple[int, int] | None = None

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        """Independent uniformly random fake previous joint action per agent."""
        self.step_count = 0
        self._prev_joint = None
        return [rng.integers(0, 2, size=2).astype(np.float64) for _ in range(2)]

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, bool]:
        """Returns (rewards, next shared observation, done)."""
        if self.step_count >= self.episode_len:
            raise ConfigError("episode already finished")
        a0, a1 = int(actions[0]), int(actions[1])
        if a0 not in (0, 1) or a1 not in (0, 1):
            raise InputError(f"actions must be binary, got {(a0, a1)}")
        rewards = np.array(self.payoff.rewards(a0, a1))
        self.step_count += 1
        self._prev_joint = (a0, a1)
        obs = np.array([a0, a1], dtype=np.float64)
        return rewards, obs, self.step_count >= self.episode_len


def matrix_step(game: MatrixGame, joint_action) -> tuple[np.ndarray, np.ndarray, bool]:
    return game.step(joint_action)


def matrix_reset(game: MatrixGame, rng: np.random.Generator) -> list[np.ndarray]:
    return game.reset(rng)


# ---------------------------------------------------------------------------
# gridworld
# ---------------------------------------------------------------------------

STAY, FORWARD, STRAFE_LEFT, STRAFE_RIGHT, ROTATE_LEFT, ROTATE_RIGHT = range(6)
HARVEST_ACTIONS = (STAY, FORWARD, STRAFE_LEFT, STRAFE_RIGHT, ROTATE_LEFT, ROTATE_RIGHT)

# orientation index -> (d_row, d_col); N, E, S, W
_DIRS = ((-1, 0), (0, 1), (1, 0), (0, -1))

# regrowth probability by the number of apples within Euclidean distance 2
REGROWTH_TABLE = ((0, 0.0), (1, 0.01), (3, 0.05), (5, 0.1))

_NEIGHBOR_OFFSETS = [
    (dr, dc)
    for dr in range(-2, 3)
    for dc in range(-2, 3)
    if 0 < dr * dr + dc * dc <= 4
]


def regrowth_probability(n_nearby: int, table=REGROWTH_TABLE) -> float:
    prob = 0.0
    for threshold, p in table:
        if n_nearby >= threshold:
            prob = p
    return prob


@dataclass
class HarvestMap:
    walls: np.ndarray  # bool (rows, cols)
    spawn_cells: np.ndarray  # bool, apple regrowth sites (initially filled)
    agent_starts: list[tuple[int, int]]

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape


def load_map(text: str, n_agents: int = 2) -> HarvestMap:
    """Parse an ASCII map: ``#`` wall, ``.`` empty, ``A`` apple site, digits agent spawns."""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise InputError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError("map rows must have equal length")
    shape = (len(rows), width)
    walls = np.zeros(shape, dtype=bool)
    spawns = np.zeros(shape, dtype=bool)
    starts: dict[int, tuple[int, int]] = {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls[r, c] = True
            elif ch == "A":
                spawns[r, c] = True
            elif ch.isdigit():
                starts[int(ch)] = (r, c)
            elif ch != ".":
                raise InputError(f"unknown map character {ch!r}")
    missing = [i for i in range(1, n_agents + 1) if i not in starts]
    if missing:
        raise InputError(f"map lacks spawn markers for agents {missing}")
    if not spawns.any():
        raise InputError("map has no apple cells")
    return HarvestMap(walls, spawns, [starts[i] for i in range(1, n_agents + 1)])


def default_map(n_agents: int = 2) -> HarvestMap:
    text = resources.files("qcoop.maps").joinpath("default_harvest.map").read_text()
    return load_map(text, n_agents)


class HarvestGame:
    """Common-pool apple gathering: apples regrow by local density, so greedy
    over-harvesting starves the patch (regrowth probability is zero with no
    neighbors left)."""

    n_actions = 6

    def __init__(self, game_map: HarvestMap | None = None, episode_len: int = 250,
                 n_agents: int = 2, regrowth_table=REGROWTH_TABLE):
        self.map = game_map or default_map(n_agents)
        self.episode_len = episode_len
        self.n_agents = n_agents
        self.regrowth_table = tuple(regrowth_table)
        self.apples = np.zeros(self.map.shape, dtype=bool)
        self.positions: list[tuple[int, int]] = []
        self.orientations: list[int] = []
        self.step_count = 0

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        self.apples = self.map.spawn_cells.copy()
        self.positions = list(self.map.agent_starts)
        self.orientations = [0] * self.n_agents  # everyone starts facing north
        self.step_count = 0
        return [self.observe(i) for i in range(self.n_agents)]

    def _walkable(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        rows, cols = self.map.shape
        return 0 <= r < rows and 0 <= c < cols and not self.map.walls[r, c]

    def step(self, actions, rng: np.random.Generator):
        """Simultaneous moves, apple collection, then density-based regrowth."""
        if self.step_count >= self.episode_len:
            raise ConfigError("episode already finished")
        proposals = []
        for i, action in enumerate(actions):
            action = int(action)
            if action not in HARVEST_ACTIONS:
                raise ConfigError(f"invalid action {action}")
            r, c = self.positions[i]
            o = self.orientations[i]
            if action == ROTATE_LEFT:
                self.orientations[i] = (o - 1) % 4
            elif action == ROTATE_RIGHT:
                self.orientations[i] = (o + 1) % 4
            target = (r, c)
            if action in (FORWARD, STRAFE_LEFT, STRAFE_RIGHT):
                heading = {FORWARD: o, STRAFE_LEFT: (o - 1) % 4, STRAFE_RIGHT: (o + 1) % 4}[action]
                dr, dc = _DIRS[heading]
                candidate = (r + dr, c + dc)
                if self._walkable(candidate):
                    target = candidate
            proposals.append(target)
        self.positions = self._resolve_moves(self.positions, proposals)

        rewards = np.zeros(self.n_agents)
        for i, pos in enumerate(self.positions):
            if self.apples[pos]:
                rewards[i] += 1.0
                self.apples[pos] = False

        self._regrow(rng)
        self.step_count += 1
        done = self.step_count >= self.episode_len
        return rewards, [self.observe(i) for i in range(self.n_agents)], done

    def _resolve_moves(self, current, proposals):
        """Contested cells block every contender; blocked agents cascade.

        A contest is two agents resolving to the same cell (including one that
        is simply staying there) or a pairwise swap; either way both keep
        their current cells.  The loop reruns until stable so an agent whose
        target only became occupied by a blocked mover is blocked too.
        """
        final = list(proposals)
        for _ in range(self.n_agents + 1):
            changed = False
            for i in range(self.n_agents):
                for j in range(i + 1, self.n_agents):
                    same_target = final[i] == final[j]
                    swap = final[i] == current[j] and final[j] == current[i] and not same_target
                    if same_target or swap:
                        if final[i] != current[i]:
                            final[i] = current[i]
                            changed = True
                        if final[j] != current[j]:
                            final[j] = current[j]
                            changed = True
            if not changed:
                break
        return final

    def _regrow(self, rng: np.random.Generator) -> None:
        occupied = set(self.positions)
        rows, cols = self.map.shape
        sites = np.argwhere(self.map.spawn_cells & ~self.apples)
        for r, c in sites:
            if (r, c) in occupied:
                continue
            nearby = 0
            for dr, dc in _NEIGHBOR_OFFSETS:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and self.apples[rr, cc]:
                    nearby += 1
            prob = regrowth_probability(nearby, self.regrowth_table)
            if prob > 0.0 and rng.random() < prob:
                self.apples[r, c] = True

    def observe(self, agent: int) -> np.ndarray:
        """Rotated egocentric 5x5 window, channels-last, flattened row-major.

        Channels: apple, other agent, wall/out-of-bounds, own orientation
        (uniform plane, orientation index / 3).  "Up" in the window is the
        agent's facing direction.
        """
        r0, c0 = self.positions[agent]
        o = self.orientations[agent]
        rows, cols = self.map.shape
        window = np.zeros((5, 5, 4))
        window[:, :, 3] = o / 3.0
        others = {pos for i, pos in enumerate(self.positions) if i != agent}
        for wr in range(5):
            for wc in range(5):
                dr, dc = wr - 2, wc - 2
                if o == 0:
                    world = (dr, dc)
                elif o == 1:
                    world = (dc, -dr)
                elif o == 2:
                    world = (-dr, -dc)
                else:
                    world = (-dc, dr)
                rr, cc = r0 + world[0], c0 + world[1]
                if not (0 <= rr < rows and 0 <= cc < cols) or self.map.walls[rr, cc]:
                    window[wr, wc, 2] = 1.0
                    continue
                if self.apples[rr, cc]:
                    window[wr, wc, 0] = 1.0
                if (rr, cc) in others:
                    window[wr, wc, 1] = 1.0
        return window.reshape(-1)


def harvest_step(game: HarvestGame, joint_actions, rng: np.random.Generator):
    return game.step(joint_actions, rng)


def harvest_observe(game: HarvestGame, agent: int) -> np.ndarray:
    return game.observe(agent)
