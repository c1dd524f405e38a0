"""Independent reference implementations used only to check the package.

Everything here goes through full 2^n x 2^n matrices built with Kronecker
products, deliberately sharing no code with the indexed-update simulator.
"""

from __future__ import annotations

import numpy as np

from qcoop import qsim

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    gen = {"rx": X, "ry": Y, "rz": Z}[kind]
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * gen


def lift_single(matrix: np.ndarray, target: int, n_qubits: int) -> np.ndarray:
    """Embed a 2x2 matrix acting on ``target`` (qubit 0 = most significant)."""
    op = np.array([[1.0 + 0j]])
    for q in range(n_qubits):
        op = np.kron(op, matrix if q == target else I2)
    return op


def cnot_matrix(control: int, target: int, n_qubits: int) -> np.ndarray:
    dim = 1 << n_qubits
    op = np.zeros((dim, dim), dtype=complex)
    for basis in range(dim):
        cbit = (basis >> (n_qubits - 1 - control)) & 1
        out = basis ^ (1 << (n_qubits - 1 - target)) if cbit else basis
        op[out, basis] = 1.0
    return op


def gate_matrix(gate: qsim.GateOp, n_qubits: int, params=None) -> np.ndarray:
    if gate.kind == "cnot":
        return cnot_matrix(gate.control, gate.target, n_qubits)
    angle = gate.angle if gate.param_index is None else float(params[gate.param_index])
    return lift_single(rotation_matrix(gate.kind, angle), gate.target, n_qubits)


def run_dense(program: qsim.CircuitProgram, params=None, state_prep=None) -> np.ndarray:
    if state_prep is None:
        psi = np.zeros(1 << program.n_qubits, dtype=complex)
        psi[0] = 1.0
    else:
        psi = np.asarray(state_prep.amplitudes, dtype=complex).copy()
    for gate in program.gates:
        psi = gate_matrix(gate, program.n_qubits, params) @ psi
    return psi


def z_expectations_dense(psi: np.ndarray, qubits, n_qubits: int) -> np.ndarray:
    out = []
    for q in qubits:
        op = lift_single(Z, q, n_qubits)
        out.append(np.real(np.conj(psi) @ op @ psi))
    return np.array(out)


def run_and_measure(program: qsim.CircuitProgram, params=None, state_prep=None) -> np.ndarray:
    psi = run_dense(program, params, state_prep)
    return z_expectations_dense(psi, program.observables, program.n_qubits)


def finite_difference_gradient(
    program: qsim.CircuitProgram, params: np.ndarray, state_prep=None, h: float = 1e-4
) -> np.ndarray:
    """Central differences of the dense-matrix evaluation."""
    params = np.asarray(params, dtype=float)
    grad = np.zeros((len(program.observables), len(params)))
    for j in range(len(params)):
        up = params.copy()
        up[j] += h
        down = params.copy()
        down[j] -= h
        grad[:, j] = (run_and_measure(program, up, state_prep) - run_and_measure(program, down, state_prep)) / (
            2 * h
        )
    return grad


def random_layered_program(rng: np.random.Generator, n_qubits: int, n_layers: int) -> tuple[qsim.CircuitProgram, np.ndarray]:
    """Random embedding-plus-rotation-layer circuit in the house style."""
    gates = []
    idx = 0
    for _ in range(n_layers):
        for q in range(n_qubits):
            gates.append(qsim.GateOp("rx", target=q, angle=rng.uniform(0, np.pi)))
        for q in range(n_qubits):
            for kind in ("rz", "ry", "rz"):
                gates.append(qsim.GateOp(kind, target=q, param_index=idx))
                idx += 1
        if n_qubits > 1:
            for q in range(n_qubits):
                gates.append(qsim.GateOp("cnot", target=(q + 1) % n_qubits, control=q))
    program = qsim.CircuitProgram(n_qubits, gates, observables=list(range(n_qubits)))
    params = rng.uniform(-np.pi, np.pi, size=idx)
    return program, params
