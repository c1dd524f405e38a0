"""Exact complex-amplitude statevector simulator with adjoint-method gradients.

Conventions used throughout:

* Qubit 0 is the most significant bit of the basis-state index, so for two
  qubits the amplitude order is |00>, |01>, |10>, |11>.
* Rotation gates are RX(t) = exp(-i t X / 2), RY(t) = exp(-i t Y / 2),
  RZ(t) = exp(-i t Z / 2).
* A gate angle is resolved from, in order: the trainable parameter vector
  (``param_index``), the per-input embedding vector (``embed_index``), or the
  fixed ``angle`` field.  Only ``param_index`` gates receive gradients.

All executors accept amplitudes with arbitrary leading batch axes; the basis
dimension is always the last axis.  Batched runs evaluate one circuit
structure against many embedding vectors at once, which is what makes
minibatch training affordable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

logger = logging.getLogger(__name__)

RX = "rx"
RY = "ry"
RZ = "rz"
CNOT = "cnot"

_ROTATIONS = (RX, RY, RZ)
_KINDS = _ROTATIONS + (CNOT,)


@dataclass(frozen=True)
class GateOp:
    """One gate in a circuit: a rotation on ``target`` or a CNOT."""

    kind: str
    target: int
    control: int | None = None
    angle: float = 0.0
    param_index: int | None = None
    embed_index: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown gate kind {self.kind!r}")
        if self.kind == CNOT:
            if self.control is None:
                raise ConfigError("CNOT requires a control qubit")
            if self.control == self.target:
                raise ConfigError("CNOT control and target must differ")
        elif self.control is not None:
            raise ConfigError(f"{self.kind} takes no control qubit")
        if self.param_index is not None and self.embed_index is not None:
            raise ConfigError("a gate cannot be both trainable and embedding-bound")


@dataclass
class StateVector:
    """Dense register of ``2**n_qubits`` complex amplitudes."""

    n_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass
class CircuitProgram:
    """Ordered gate list plus the qubits measured in the Z basis."""

    n_qubits: int
    gates: list[GateOp] = field(default_factory=list)
    observables: list[int] = field(default_factory=list)

    def n_params(self) -> int:
        indices = [g.param_index for g in self.gates if g.param_index is not None]
        return max(indices) + 1 if indices else 0

    def n_embeds(self) -> int:
        indices = [g.embed_index for g in self.gates if g.embed_index is not None]
        return max(indices) + 1 if indices else 0

    def validate(self, n_params: int | None = None) -> None:
        for g in self.gates:
            _check_qubit(self.n_qubits, g.target)
            if g.control is not None:
                _check_qubit(self.n_qubits, g.control)
            if n_params is not None and g.param_index is not None and g.param_index >= n_params:
                raise ConfigError(
                    f"gate parameter index {g.param_index} outside vector of length {n_params}"
                )
        for q in self.observables:
            _check_qubit(self.n_qubits, q)


def _check_qubit(n_qubits: int, q: int) -> None:
    if not 0 <= q < n_qubits:
        raise ConfigError(f"qubit index {q} out of range for {n_qubits} qubits")


# ---------------------------------------------------------------------------
# low-level amplitude updates (in place, on raw arrays, last axis = basis)
# ---------------------------------------------------------------------------


def _broadcastable(m, data_ndim: int):
    """Reshape per-batch coefficient arrays so they broadcast over basis axes."""
    if np.ndim(m) == 0:
        return m
    m = np.asarray(m)
    return m.reshape(m.shape + (1,) * (data_ndim - m.ndim))


def _apply_1q(amps: np.ndarray, n_qubits: int, target: int, entries) -> None:
    """Apply a 2x2 matrix to ``target``; entries may be scalars or (batch,) vectors."""
    m00, m01, m10, m11 = entries
    pre = 1 << target
    post = 1 << (n_qubits - 1 - target)
    view = amps.reshape(amps.shape[:-1] + (pre, 2, post))
    a0 = view[..., 0, :]
    a1 = view[..., 1, :]
    if isinstance(m01, (int, float)) and m01 == 0 and m10 == 0:
        # diagonal gate (RZ): two in-place scalings
        a0 *= _broadcastable(m00, a0.ndim)
        a1 *= _broadcastable(m11, a1.ndim)
        return
    m00 = _broadcastable(m00, a0.ndim)
    m01 = _broadcastable(m01, a0.ndim)
    m10 = _broadcastable(m10, a0.ndim)
    m11 = _broadcastable(m11, a0.ndim)
    new0 = m00 * a0 + m01 * a1
    view[..., 1, :] = m10 * a0 + m11 * a1
    view[..., 0, :] = new0


def _apply_cnot(amps: np.ndarray, n_qubits: int, control: int, target: int) -> None:
    first, second = (control, target) if control < target else (target, control)
    d1 = 1 << first
    d2 = 1 << (second - first - 1)
    d3 = 1 << (n_qubits - 1 - second)
    view = amps.reshape(amps.shape[:-1] + (d1, 2, d2, 2, d3))
    if control < target:
        sel0 = (Ellipsis, 1, slice(None), 0, slice(None))
        sel1 = (Ellipsis, 1, slice(None), 1, slice(None))
    else:
        sel0 = (Ellipsis, 0, slice(None), 1, slice(None))
        sel1 = (Ellipsis, 1, slice(None), 1, slice(None))
    swapped = view[sel0].copy()
    view[sel0] = view[sel1]
    view[sel1] = swapped


def _rotation_entries(kind: str, angle):
    """Matrix entries of RX/RY/RZ; ``angle`` may be a scalar or a vector."""
    h = 0.5 * np.asarray(angle) if np.ndim(angle) else 0.5 * angle
    if np.ndim(angle):
        c, s = np.cos(h), np.sin(h)
    else:
        c, s = math.cos(h), math.sin(h)
    if kind == RX:
        return c, -1j * s, -1j * s, c
    if kind == RY:
        return c, -s, s, c
    return c - 1j * s, 0, 0, c + 1j * s


def _rotation_derivative_entries(kind: str, angle):
    """Entry-wise derivative of the rotation matrix with respect to its angle."""
    h = 0.5 * angle
    c, s = 0.5 * math.cos(h), 0.5 * math.sin(h)
    if kind == RX:
        return -s, -1j * c, -1j * c, -s
    if kind == RY:
        return -s, -c, c, -s
    return -s - 1j * c, 0.0, 0.0, -s + 1j * c


def _resolve_angle(gate: GateOp, params, embeds):
    """Scalar or per-batch vector angle for ``gate``."""
    if gate.param_index is not None:
        if params is None:
            raise ConfigError("circuit has trainable gates but no parameter vector was given")
        return float(params[gate.param_index])
    if gate.embed_index is not None:
        if embeds is None:
            raise ConfigError("circuit has embedding gates but no embedding vector was given")
        embeds = np.asarray(embeds)
        return embeds[..., gate.embed_index]
    return gate.angle


def _apply_gate_inplace(
    amps: np.ndarray,
    n_qubits: int,
    gate: GateOp,
    params=None,
    embeds=None,
    invert: bool = False,
) -> None:
    if gate.kind == CNOT:
        _apply_cnot(amps, n_qubits, gate.control, gate.target)
        return
    angle = _resolve_angle(gate, params, embeds)
    if invert:
        angle = -angle
    _apply_1q(amps, n_qubits, gate.target, _rotation_entries(gate.kind, angle))


def _z_values(amps: np.ndarray, n_qubits: int, observables) -> np.ndarray:
    """<Z_q> per observable; amps (..., dim) -> result (..., n_obs)."""
    probs = amps.real * amps.real + amps.imag * amps.imag
    total = probs.sum(axis=-1)
    cols = []
    for q in observables:
        pre = 1 << q
        post = 1 << (n_qubits - 1 - q)
        p1 = probs.reshape(probs.shape[:-1] + (pre, 2, post))[..., 1, :].sum(axis=(-2, -1))
        cols.append(total - 2.0 * p1)
    return np.stack(cols, axis=-1) if cols else np.zeros(probs.shape[:-1] + (0,))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def zero_state(n_qubits: int) -> StateVector:
    return StateVector.zero(n_qubits)


def apply_gate(state: StateVector, gate: GateOp, params=None, embeds=None) -> StateVector:
    """Return a new state with ``gate`` applied; the input is untouched."""
    _check_qubit(state.n_qubits, gate.target)
    if gate.control is not None:
        _check_qubit(state.n_qubits, gate.control)
    out = state.amplitudes.copy()
    _apply_gate_inplace(out, state.n_qubits, gate, params, embeds)
    return StateVector(state.n_qubits, out)


def run_program(
    program: CircuitProgram,
    params=None,
    state_prep: StateVector | None = None,
    embeds=None,
) -> StateVector:
    """Execute all gates of ``program`` starting from ``state_prep`` or |0...0>."""
    if state_prep is None:
        amps = np.zeros(1 << program.n_qubits, dtype=np.complex128)
        amps[0] = 1.0
    else:
        amps = state_prep.amplitudes.astype(np.complex128, copy=True)
    n = program.n_qubits
    for gate in program.gates:
        _apply_gate_inplace(amps, n, gate, params, embeds)
    return StateVector(n, amps)


def expectation_z(state: StateVector, qubit: int) -> float:
    """Exact <Z> of ``qubit``: +1 weight where its bit is 0, -1 where it is 1."""
    _check_qubit(state.n_qubits, qubit)
    return float(_z_values(state.amplitudes, state.n_qubits, [qubit])[0])


def expectations_z(state: StateVector, qubits) -> np.ndarray:
    for q in qubits:
        _check_qubit(state.n_qubits, q)
    return _z_values(state.amplitudes, state.n_qubits, list(qubits))


def basis_embed_gates(bits, n_qubits: int, qubits: list[int] | None = None) -> list[GateOp]:
    """RX(b*pi) per qubit; emitted for every embedded qubit so the circuit shape is data-independent."""
    targets = list(range(len(bits))) if qubits is None else qubits
    if len(targets) != len(bits):
        raise InputError(f"{len(bits)} bits for {len(targets)} qubits")
    gates = []
    for q, b in zip(targets, bits):
        if b not in (0, 1):
            raise InputError(f"basis embedding requires bits in {{0, 1}}, got {b!r}")
        _check_qubit(n_qubits, q)
        gates.append(GateOp(RX, target=q, angle=float(b) * math.pi))
    return gates


def basis_embed(bits) -> StateVector:
    """Prepare the basis state of a bit pattern (up to global phase) from |0...0>."""
    bits = np.asarray(bits)
    if bits.size == 0:
        raise InputError("empty bit vector")
    n = bits.size
    state = zero_state(n)
    for gate in basis_embed_gates(bits, n):
        state = apply_gate(state, gate)
    return state


def angle_embed(value: float, lo: float, hi: float, qubit: int = 0) -> GateOp:
    """Map a scalar in [lo, hi] onto an RX angle in [0, pi]; out-of-range values clamp with a warning."""
    if hi <= lo:
        raise ConfigError(f"empty angle-embedding range [{lo}, {hi}]")
    clamped = min(max(value, lo), hi)
    if clamped != value:
        logger.warning("angle embedding clamped %r into [%r, %r]", value, lo, hi)
    scaled = (clamped - lo) / (hi - lo) * math.pi
    return GateOp(RX, target=qubit, angle=scaled)


def scale_to_angle(value: float, lo: float, hi: float) -> float:
    """The clamped [lo, hi] -> [0, pi] mapping used by angle embedding."""
    clamped = min(max(value, lo), hi)
    if clamped != value:
        logger.warning("angle embedding clamped %r into [%r, %r]", value, lo, hi)
    return (clamped - lo) / (hi - lo) * math.pi


# ---------------------------------------------------------------------------
# amplitude embedding via the Mottonen RY cascade
# ---------------------------------------------------------------------------
#
# Non-negative inputs only: with all amplitudes real and >= 0 the phase
# (RZ) stage of the decomposition is the identity and is omitted.  Signed or
# complex targets would need that extra stage.

_M_CACHE: dict[int, np.ndarray] = {}


def _gray_code(i: int) -> int:
    return i ^ (i >> 1)


def _angle_mixer(k: int) -> np.ndarray:
    """Matrix turning multiplexed-rotation angles into the gate angles of the CNOT ladder."""
    m = _M_CACHE.get(k)
    if m is None:
        size = 1 << k
        m = np.empty((size, size))
        for i in range(size):
            g = _gray_code(i)
            for j in range(size):
                m[i, j] = (-1) ** bin(j & g).count("1")
        m /= size
        _M_CACHE[k] = m
    return m


def _control_sequence(k: int) -> list[int]:
    if k == 0:
        return []
    side = _control_sequence(k - 1)[:-1]
    return side + [k - 1] + side + [k - 1]


def mottonen_angles(features, n_qubits: int) -> np.ndarray:
    """RY angles of the cascade, in gate order, for a non-negative feature vector.

    The all-zero vector yields all-zero angles, whose gates compose to the
    identity, leaving |0...0>.
    """
    feats = np.asarray(features, dtype=np.float64).ravel()
    if feats.size == 0:
        raise InputError("empty feature vector")
    if np.any(feats < 0):
        raise InputError("amplitude embedding expects non-negative features")
    dim = 1 << n_qubits
    if feats.size > dim:
        raise InputError(f"{feats.size} features exceed {dim} amplitudes of {n_qubits} qubits")
    probs = np.zeros(dim)
    probs[: feats.size] = feats * feats
    angles = []
    for k in range(n_qubits):
        blocks = probs.reshape(1 << k, 2, -1)
        upper = blocks[:, 1, :].sum(axis=1)
        total = upper + blocks[:, 0, :].sum(axis=1)
        ratio = np.divide(upper, total, out=np.zeros_like(upper), where=total > 0)
        alphas = 2.0 * np.arcsin(np.sqrt(np.clip(ratio, 0.0, 1.0)))
        if k == 0:
            angles.append(alphas)
        else:
            angles.append(_angle_mixer(k) @ alphas)
    return np.concatenate(angles)


def mottonen_structure(n_qubits: int, embed_offset: int = 0) -> list[GateOp]:
    """Cascade skeleton with RY angles bound to embedding slots, CNOTs fixed."""
    gates: list[GateOp] = []
    slot = embed_offset
    for k in range(n_qubits):
        if k == 0:
            gates.append(GateOp(RY, target=0, embed_index=slot))
            slot += 1
            continue
        seq = _control_sequence(k)
        for i in range(1 << k):
            gates.append(GateOp(RY, target=k, embed_index=slot))
            slot += 1
            gates.append(GateOp(CNOT, target=k, control=k - 1 - seq[i]))
    return gates


def amplitude_embed_gates(features, n_qubits: int) -> list[GateOp]:
    """Fixed-angle gate sequence preparing normalized ``features`` as amplitudes."""
    angles = mottonen_angles(features, n_qubits)
    gates = []
    for gate in mottonen_structure(n_qubits):
        if gate.kind == CNOT:
            gates.append(gate)
        else:
            gates.append(GateOp(RY, target=gate.target, angle=float(angles[gate.embed_index])))
    return gates


def amplitude_embed(features, n_qubits: int) -> StateVector:
    """Prepare the normalized feature vector as state amplitudes via the RY cascade."""
    state = zero_state(n_qubits)
    amps = state.amplitudes
    for gate in amplitude_embed_gates(features, n_qubits):
        _apply_gate_inplace(amps, n_qubits, gate)
    return state


# ---------------------------------------------------------------------------
# execution and gradients, optionally batched over embedding vectors
# ---------------------------------------------------------------------------


def run_batched(program: CircuitProgram, params, embeds: np.ndarray) -> np.ndarray:
    """Z expectations for a batch of embedding vectors; returns (batch, n_obs)."""
    embeds = np.asarray(embeds, dtype=np.float64)
    batch = embeds.shape[0]
    n = program.n_qubits
    amps = np.zeros((batch, 1 << n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for gate in program.gates:
        _apply_gate_inplace(amps, n, gate, params, embeds)
    return _z_values(amps, n, program.observables)


def forward_with_gradient(
    program: CircuitProgram,
    params,
    state_prep: StateVector | None = None,
    embeds=None,
) -> tuple[np.ndarray, np.ndarray]:
    """One forward pass plus the adjoint backward sweep.

    Returns ``(z, grad)`` where ``z[k]`` is <Z> of ``observables[k]`` and
    ``grad[k, j]`` its derivative w.r.t. ``params[j]``.  With a batched
    ``embeds`` matrix of shape (batch, n_embeds) the shapes grow a leading
    batch axis: z (batch, n_obs), grad (batch, n_obs, n_params).

    The sweep walks the gate list backwards, unwinding each gate from the ket
    while carrying one bra per observable; each trainable gate contributes
    2 Re <b_i| dU_i/dtheta |k_i> to its parameter's column.  Gates bound to
    embeddings or fixed angles are constants and receive nothing.
    """
    params = np.asarray(params, dtype=np.float64)
    program.validate(len(params))
    n = program.n_qubits
    dim = 1 << n

    batched = embeds is not None and np.ndim(embeds) == 2
    if embeds is not None:
        embeds = np.asarray(embeds, dtype=np.float64)
    lead = (embeds.shape[0],) if batched else ()

    if state_prep is None:
        ket = np.zeros(lead + (dim,), dtype=np.complex128)
        ket[..., 0] = 1.0
    else:
        ket = np.broadcast_to(state_prep.amplitudes, lead + (dim,)).astype(np.complex128)

    for gate in program.gates:
        _apply_gate_inplace(ket, n, gate, params, embeds)

    obs = program.observables
    z = _z_values(ket, n, obs)

    n_obs = len(obs)
    grad = np.zeros(lead + (n_obs, len(params)))
    if len(params) == 0 or n_obs == 0:
        return z, grad

    # bras[..., k, :] = Z_{obs[k]} |psi>
    bras = np.repeat(ket[..., None, :], n_obs, axis=-2)
    for k, q in enumerate(obs):
        pre = 1 << q
        post = 1 << (n - 1 - q)
        view = bras.reshape(bras.shape[:-2] + (n_obs, pre, 2, post))
        view[..., k, :, 1, :] *= -1.0

    bra_embeds = embeds[..., None, :] if (batched and embeds is not None) else embeds
    for gate in reversed(program.gates):
        _apply_gate_inplace(ket, n, gate, params, embeds, invert=True)
        if gate.param_index is not None:
            poked = ket.copy()
            angle = float(params[gate.param_index])
            _apply_1q(poked, n, gate.target, _rotation_derivative_entries(gate.kind, angle))
            overlap = 2.0 * np.real(np.einsum("...kd,...d->...k", np.conj(bras), poked))
            grad[..., gate.param_index] += overlap
        _apply_gate_inplace(bras, n, gate, params, bra_embeds, invert=True)
    return z, grad


def adjoint_gradient(
    program: CircuitProgram,
    params,
    state_prep: StateVector | None = None,
    embeds=None,
) -> np.ndarray:
    """Gradient matrix d<Z_q>/d(params[j]) with shape (observables, parameters)."""
    _, grad = forward_with_gradient(program, params, state_prep, embeds)
    return grad


def parameter_shift_gradient(
    program: CircuitProgram,
    params,
    state_prep: StateVector | None = None,
    embeds=None,
) -> np.ndarray:
    """Shift-rule gradient: (f(theta + pi/2) - f(theta - pi/2)) / 2 per gate.

    Evaluated gate by gate (not parameter by parameter), so parameters shared
    between gates accumulate correctly.  Kept as an independent cross-check of
    the adjoint sweep; it never reuses the backward-pass code.
    """
    params = np.asarray(params, dtype=np.float64)
    program.validate(len(params))
    grad = np.zeros((len(program.observables), len(params)))
    for pos, gate in enumerate(program.gates):
        if gate.param_index is None:
            continue
        plus = _run_with_shift(program, params, pos, +0.5 * math.pi, state_prep, embeds)
        minus = _run_with_shift(program, params, pos, -0.5 * math.pi, state_prep, embeds)
        grad[:, gate.param_index] += 0.5 * (plus - minus)
    return grad


def _run_with_shift(program, params, gate_pos, shift, state_prep, embeds) -> np.ndarray:
    n = program.n_qubits
    if state_prep is None:
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[0] = 1.0
    else:
        amps = state_prep.amplitudes.astype(np.complex128, copy=True)
    for pos, gate in enumerate(program.gates):
        if pos == gate_pos:
            angle = float(_resolve_angle(gate, params, embeds)) + shift
            _apply_1q(amps, n, gate.target, _rotation_entries(gate.kind, angle))
        else:
            _apply_gate_inplace(amps, n, gate, params, embeds)
    return _z_values(amps, n, program.observables)
