"""Per-protocol Q-networks: data re-uploading circuits plus output heads.

Every network maps an observation to one Q-value per action slot.  Slots are
grouped into heads (environment action, gift decision, message bits), each
selecting independently.  The circuit repeats [embedding, RZ-RY-RZ rotations
per qubit, circular CNOT ring] ``n_layers`` times and measures each slot's
qubit in Z; measurements are rescaled from [-1, 1] to [0, 1] and either
multiplied by trainable per-slot output scales or, for the spatial-game
network, fed through a small dense layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import fastsim, qsim
from .errors import ConfigError, InputError

MATRIX_PROTOCOLS = (
    "baseline",
    "mate_rew",
    "mate_td",
    "automate",
    "mediate_i",
    "mediate_s",
    "gifting_zerosum",
    "gifting_budget",
    "rial",
)
PROTOCOLS = MATRIX_PROTOCOLS + ("harvest_iql",)

_EXPECTED_QUBITS = {"gifting_zerosum": 4, "gifting_budget": 4, "rial": 6, "harvest_iql": 7}

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Head:
    """A named group of output slots choosing one action independently."""

    name: str
    n_slots: int
    qubits: tuple[int, ...] | None = None  # None when slots come from the dense layer


@dataclass(frozen=True)
class QubitEmbed:
    """Embedding rule for one qubit: a basis bit, a scaled angle, or nothing."""

    kind: str  # "basis" | "angle" | "none"
    feature: int | None = None
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: str  # "qubitwise" | "amplitude"
    n_features: int
    qubit_embeds: tuple[QubitEmbed, ...] = ()


@dataclass
class QNetwork:
    protocol: str
    n_qubits: int
    n_layers: int
    theta: np.ndarray  # (n_layers, n_qubits, 3), radians
    heads: list[Head]
    embedding: EmbeddingSpec
    out_scales: np.ndarray | None = None  # one per slot; None when dense head present
    dense_w: np.ndarray | None = None  # (n_actions, n_qubits)
    dense_b: np.ndarray | None = None
    _executor: fastsim.Executor | None = field(default=None, repr=False, compare=False)
    _embed_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        expected = _EXPECTED_QUBITS.get(self.protocol, 2)
        if self.n_qubits != expected:
            raise ConfigError(
                f"{self.protocol} requires {expected} qubits, layout has {self.n_qubits}"
            )
        if self.theta.shape != (self.n_layers, self.n_qubits, 3):
            raise ConfigError(f"theta shape {self.theta.shape} does not match layout")
        if self.dense_w is None and self.out_scales is None:
            raise ConfigError("network needs output scales or a dense head")
        if self.out_scales is not None and self.out_scales.shape != (self.n_slots,):
            raise ConfigError("one output scale per slot required")

    # -- structure ---------------------------------------------------------

    @property
    def n_slots(self) -> int:
        return sum(h.n_slots for h in self.heads)

    def head_slices(self) -> list[tuple[str, slice]]:
        out, start = [], 0
        for h in self.heads:
            out.append((h.name, slice(start, start + h.n_slots)))
            start += h.n_slots
        return out

    def observables(self) -> list[int]:
        if self.dense_w is not None:
            return list(range(self.n_qubits))
        qubits = []
        for h in self.heads:
            qubits.extend(h.qubits)
        return qubits

    def n_params(self) -> int:
        return self.theta.size

    @property
    def obs_arity(self) -> int:
        return self.embedding.n_features

    def embedding_structure(self) -> list[qsim.GateOp]:
        """One repetition of the embedding gates, angles bound to embed slots."""
        if self.embedding.kind == "amplitude":
            return qsim.mottonen_structure(self.n_qubits)
        gates, slot = [], 0
        for q, rule in enumerate(self.embedding.qubit_embeds):
            if rule.kind == "none":
                continue
            gates.append(qsim.GateOp(qsim.RX, target=q, embed_index=slot))
            slot += 1
        return gates

    def circuit_structure(self) -> qsim.CircuitProgram:
        """The full re-uploading circuit with per-input angles left symbolic."""
        embed = self.embedding_structure()
        gates: list[qsim.GateOp] = []
        for layer in range(self.n_layers):
            gates.extend(embed)
            for q in range(self.n_qubits):
                base = (layer * self.n_qubits + q) * 3
                gates.append(qsim.GateOp(qsim.RZ, target=q, param_index=base))
                gates.append(qsim.GateOp(qsim.RY, target=q, param_index=base + 1))
                gates.append(qsim.GateOp(qsim.RZ, target=q, param_index=base + 2))
            for q in range(self.n_qubits):
                gates.append(
                    qsim.GateOp(qsim.CNOT, target=(q + 1) % self.n_qubits, control=q)
                )
        return qsim.CircuitProgram(self.n_qubits, gates, self.observables())

    def circuit_for(self, observation) -> qsim.CircuitProgram:
        """The concrete circuit for one observation, all angles fixed."""
        embeds = self.embed_vector(observation)
        structure = self.circuit_structure()
        gates = []
        for g in structure.gates:
            if g.embed_index is not None:
                gates.append(qsim.GateOp(g.kind, g.target, angle=float(embeds[g.embed_index])))
            else:
                gates.append(g)
        return qsim.CircuitProgram(structure.n_qubits, gates, structure.observables)

    def embed_vector(self, observation) -> np.ndarray:
        """Per-input gate angles, one entry per embedding slot (cached)."""
        obs = np.asarray(observation, dtype=np.float64)
        if obs.ndim != 1 or obs.size != self.embedding.n_features:
            raise ConfigError(
                f"{self.protocol} expects {self.embedding.n_features} features, got shape {obs.shape}"
            )
        key = obs.tobytes()
        cached = self._embed_cache.get(key)
        if cached is not None:
            return cached
        if self.embedding.kind == "amplitude":
            vec = qsim.mottonen_angles(obs, self.n_qubits)
        else:
            angles = []
            for rule in self.embedding.qubit_embeds:
                if rule.kind == "none":
                    continue
                value = obs[rule.feature]
                if rule.kind == "basis":
                    if value not in (0.0, 1.0):
                        raise InputError(f"basis feature must be 0/1, got {value!r}")
                    angles.append(value * math.pi)
                else:
                    angles.append(qsim.scale_to_angle(value, rule.lo, rule.hi))
            vec = np.array(angles)
        if len(self._embed_cache) >= 4096:
            self._embed_cache.clear()
        self._embed_cache[key] = vec
        return vec

    def _exec(self) -> fastsim.Executor:
        if self._executor is None:
            self._executor = fastsim.Executor(self.circuit_structure(), self.n_params())
        return self._executor

    # -- evaluation --------------------------------------------------------

    def forward(self, observation) -> np.ndarray:
        """Q-values for all slots, deterministic in (parameters, observation)."""
        z = self._exec().z_values(self.theta.ravel(), self.embed_vector(observation))[0]
        return self._q_from_z(z)

    def forward_batch(self, observations: list) -> np.ndarray:
        embeds = np.stack([self.embed_vector(o) for o in observations])
        z = self._exec().z_values(self.theta.ravel(), embeds)
        return self._q_from_z(z)

    def _q_from_z(self, z: np.ndarray) -> np.ndarray:
        rescaled = 0.5 * (z + 1.0)
        if self.dense_w is not None:
            return rescaled @ self.dense_w.T + self.dense_b
        return self.out_scales * rescaled

    def env_q_values(self, observation) -> np.ndarray:
        name, sl = self.head_slices()[0]
        return self.forward(observation)[sl]

    # -- gradients ---------------------------------------------------------

    def param_groups(self) -> dict[str, np.ndarray]:
        groups = {"theta": self.theta}
        if self.out_scales is not None:
            groups["out_scales"] = self.out_scales
        if self.dense_w is not None:
            groups["dense_w"] = self.dense_w
            groups["dense_b"] = self.dense_b
        return groups

    def learning_rate_key(self, group: str) -> str:
        return "alpha_w" if group == "out_scales" else "alpha"

    def q_jacobian_batch(self, observations: list) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Q-values (batch, slots) and dQ/dparam per group (batch, slots, *shape)."""
        embeds = np.stack([self.embed_vector(o) for o in observations])
        z, dz = self._exec().z_and_grad(self.theta.ravel(), embeds)
        batch = z.shape[0]
        m = 0.5 * (z + 1.0)
        dm = 0.5 * dz  # (batch, n_obs, n_params)
        jac: dict[str, np.ndarray] = {}
        if self.dense_w is not None:
            q = m @ self.dense_w.T + self.dense_b
            n_act, n_q = self.dense_w.shape
            jac["theta"] = np.einsum("aq,bqp->bap", self.dense_w, dm).reshape(
                batch, n_act, *self.theta.shape
            )
            jw = np.zeros((batch, n_act, n_act, n_q))
            for a in range(n_act):
                jw[:, a, a, :] = m
            jac["dense_w"] = jw
            jac["dense_b"] = np.broadcast_to(np.eye(n_act), (batch, n_act, n_act)).copy()
        else:
            q = self.out_scales * m
            jac["theta"] = (self.out_scales[None, :, None] * dm).reshape(
                batch, self.n_slots, *self.theta.shape
            )
            js = np.zeros((batch, self.n_slots, self.n_slots))
            idx = np.arange(self.n_slots)
            js[:, idx, idx] = m
            jac["out_scales"] = js
        return q, jac

    def q_jacobian(self, observation):
        q, jac = self.q_jacobian_batch([observation])
        return q[0], {k: v[0] for k, v in jac.items()}


def gradient(net, observation, slot: int) -> dict[str, np.ndarray]:
    """dQ[slot]/dparam for every trainable group of ``net``."""
    _, jac = net.q_jacobian(observation)
    return {k: v[slot] for k, v in jac.items()}


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def build_layout(
    protocol: str,
    rng: np.random.Generator,
    n_layers: int | None = None,
    budget_max: float = 10.0,
) -> QNetwork:
    """Construct the network for one protocol with freshly initialized parameters."""
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")

    if protocol in ("baseline", "mate_rew", "mate_td", "automate", "mediate_i", "mediate_s"):
        n_qubits, layers = 2, n_layers or 4
        heads = [Head("env", 2, (0, 1))]
        embeds = (QubitEmbed("basis", 0), QubitEmbed("basis", 1))
        spec = EmbeddingSpec("qubitwise", 2, embeds)
    elif protocol == "gifting_zerosum":
        n_qubits, layers = 4, n_layers or 4
        heads = [Head("env", 2, (0, 1)), Head("gift", 2, (2, 3))]
        embeds = (
            QubitEmbed("basis", 0),
            QubitEmbed("basis", 1),
            QubitEmbed("none"),
            QubitEmbed("none"),
        )
        spec = EmbeddingSpec("qubitwise", 2, embeds)
    elif protocol == "gifting_budget":
        n_qubits, layers = 4, n_layers or 4
        heads = [Head("env", 2, (0, 1)), Head("gift", 2, (2, 3))]
        embeds = (
            QubitEmbed("basis", 0),
            QubitEmbed("basis", 1),
            QubitEmbed("angle", 2, 0.0, budget_max),
            QubitEmbed("none"),
        )
        spec = EmbeddingSpec("qubitwise", 3, embeds)
    elif protocol == "rial":
        n_qubits, layers = 6, n_layers or 4
        heads = [
            Head("env", 2, (0, 1)),
            Head("msg_bit_0", 2, (2, 3)),
            Head("msg_bit_1", 2, (4, 5)),
        ]
        embeds = tuple(QubitEmbed("basis", f) for f in range(6))
        spec = EmbeddingSpec("qubitwise", 6, embeds)
    else:  # harvest_iql
        n_qubits, layers = 7, n_layers or 1
        heads = [Head("env", 6, None)]
        spec = EmbeddingSpec("amplitude", 100)

    theta = rng.uniform(-math.pi, math.pi, size=(layers, n_qubits, 3))
    if protocol == "harvest_iql":
        limit = math.sqrt(6.0 / (n_qubits + 6))
        dense_w = rng.uniform(-limit, limit, size=(6, n_qubits))
        dense_b = np.zeros(6)
        return QNetwork(protocol, n_qubits, layers, theta, heads, spec,
                        out_scales=None, dense_w=dense_w, dense_b=dense_b)
    scales = np.ones(sum(h.n_slots for h in heads))
    return QNetwork(protocol, n_qubits, layers, theta, heads, spec, out_scales=scales)


# ---------------------------------------------------------------------------
# classical baseline network
# ---------------------------------------------------------------------------


@dataclass
class ClassicalQNetwork:
    """Plain dense ReLU network used as the non-quantum comparison point."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    heads: list[Head]

    @property
    def n_slots(self) -> int:
        return self.layer_sizes[-1]

    @property
    def obs_arity(self) -> int:
        return self.layer_sizes[0]

    def head_slices(self) -> list[tuple[str, slice]]:
        return [("env", slice(0, self.n_slots))]

    def forward(self, observation) -> np.ndarray:
        x = np.asarray(observation, dtype=np.float64)
        if x.shape != (self.layer_sizes[0],):
            raise ConfigError(f"expected {self.layer_sizes[0]} features, got shape {x.shape}")
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = np.maximum(w @ x + b, 0.0)
        return self.weights[-1] @ x + self.biases[-1]

    def env_q_values(self, observation) -> np.ndarray:
        return self.forward(observation)

    def param_groups(self) -> dict[str, np.ndarray]:
        groups = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            groups[f"w{i}"] = w
            groups[f"b{i}"] = b
        return groups

    def learning_rate_key(self, group: str) -> str:
        return "alpha"

    def q_jacobian(self, observation):
        q, jac = self.q_jacobian_batch([observation])
        return q[0], {k: v[0] for k, v in jac.items()}

    def q_jacobian_batch(self, observations: list):
        qs, jacs = [], []
        for obs in observations:
            q, jac = self._jacobian_single(np.asarray(obs, dtype=np.float64))
            qs.append(q)
            jacs.append(jac)
        stacked = {k: np.stack([j[k] for j in jacs]) for k in jacs[0]}
        return np.stack(qs), stacked

    def _jacobian_single(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = w @ h + b
            pre.append(a)
            h = np.maximum(a, 0.0)
            acts.append(h)
        q = self.weights[-1] @ h + self.biases[-1]
        n_out = q.size
        jac = {}
        # seed with identity and walk backwards through the layers
        delta = np.eye(n_out)
        last = len(self.weights) - 1
        jac[f"w{last}"] = np.einsum("oa,h->oah", np.eye(n_out), acts[-1])
        jac[f"b{last}"] = np.eye(n_out)
        delta = delta @ self.weights[-1]
        for i in range(last - 1, -1, -1):
            delta = delta * (pre[i] > 0)
            jac[f"w{i}"] = np.einsum("oa,h->oah", delta, acts[i])
            jac[f"b{i}"] = delta
            if i > 0:
                delta = delta @ self.weights[i]
        return q, jac

    def forward_batch(self, observations: list) -> np.ndarray:
        return np.stack([self.forward(o) for o in observations])


def build_classical_baseline(
    rng: np.random.Generator,
    n_inputs: int = 100,
    hidden: tuple[int, ...] = (64, 64),
    n_actions: int = 6,
) -> ClassicalQNetwork:
    sizes = (n_inputs,) + tuple(hidden) + (n_actions,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ClassicalQNetwork(sizes, weights, biases, [Head("env", n_actions, None)])


def forward_classical(net: ClassicalQNetwork, observation) -> np.ndarray:
    """Dense ReLU forward pass of the classical comparison network."""
    return net.forward(observation)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(net, path) -> None:
    """Write parameters plus enough metadata to rebuild the network."""
    if isinstance(net, ClassicalQNetwork):
        meta = {"version": CHECKPOINT_VERSION, "kind": "classical",
                "layer_sizes": list(net.layer_sizes)}
        arrays = {}
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        np.savez(path, meta=json.dumps(meta), **arrays)
        return
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": "vqc",
        "protocol": net.protocol,
        "n_layers": net.n_layers,
        "budget_hi": None,
    }
    for rule in net.embedding.qubit_embeds:
        if rule.kind == "angle":
            meta["budget_hi"] = rule.hi
    arrays = {"theta": net.theta}
    if net.out_scales is not None:
        arrays["out_scales"] = net.out_scales
    if net.dense_w is not None:
        arrays["dense_w"] = net.dense_w
        arrays["dense_b"] = net.dense_b
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
        rng = np.random.default_rng(0)
        if meta["kind"] == "classical":
            sizes = meta["layer_sizes"]
            net = build_classical_baseline(rng, sizes[0], tuple(sizes[1:-1]), sizes[-1])
            for i in range(len(net.weights)):
                net.weights[i][:] = data[f"w{i}"]
                net.biases[i][:] = data[f"b{i}"]
            return net
        kwargs = {}
        if meta.get("budget_hi") is not None:
            kwargs["budget_max"] = meta["budget_hi"]
        net = build_layout(meta["protocol"], rng, n_layers=meta["n_layers"], **kwargs)
        net.theta[:] = data["theta"]
        if net.out_scales is not None:
            net.out_scales[:] = data["out_scales"]
        if net.dense_w is not None:
            net.dense_w[:] = data["dense_w"]
            net.dense_b[:] = data["dense_b"]
        return net
