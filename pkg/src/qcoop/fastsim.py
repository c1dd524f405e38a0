"""Compiled execution kernels for the statevector simulator.

The while-loop numpy implementation in :mod:`qcoop.qsim` is the readable
reference; training needs something faster, because matrix-game circuits are
tiny (4-128 amplitudes) and numpy's per-call overhead dwarfs the arithmetic.
This module packs a :class:`~qcoop.qsim.CircuitProgram` into flat arrays and
runs forward passes and adjoint sweeps in numba-compiled loops.  Results agree
with the reference implementation to float round-off; the test suite asserts
this on random circuits.

If numba is unavailable the :class:`Executor` transparently falls back to the
reference path.
"""

from __future__ import annotations

import numpy as np

from . import qsim

try:  # pragma: no cover - exercised implicitly by the import succeeding
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

_KIND_CODE = {qsim.RX: 0, qsim.RY: 1, qsim.RZ: 2, qsim.CNOT: 3}
_BIND_FIXED, _BIND_PARAM, _BIND_EMBED = 0, 1, 2


def _pack(program: qsim.CircuitProgram):
    g = program.gates
    kinds = np.array([_KIND_CODE[x.kind] for x in g], dtype=np.int8)
    targets = np.array([x.target for x in g], dtype=np.int8)
    controls = np.array([-1 if x.control is None else x.control for x in g], dtype=np.int8)
    binds = np.empty(len(g), dtype=np.int8)
    indices = np.zeros(len(g), dtype=np.int32)
    angles = np.zeros(len(g), dtype=np.float64)
    for i, x in enumerate(g):
        if x.param_index is not None:
            binds[i], indices[i] = _BIND_PARAM, x.param_index
        elif x.embed_index is not None:
            binds[i], indices[i] = _BIND_EMBED, x.embed_index
        else:
            binds[i], angles[i] = _BIND_FIXED, x.angle
    obs = np.array(program.observables, dtype=np.int8)
    return kinds, targets, controls, binds, indices, angles, obs


if HAVE_NUMBA:

    @_nb.njit(cache=True)
    def _rot_entries(kind, angle):
        h = 0.5 * angle
        c = np.cos(h)
        s = np.sin(h)
        if kind == 0:  # RX
            return c + 0j, -1j * s, -1j * s, c + 0j
        if kind == 1:  # RY
            return c + 0j, -s + 0j, s + 0j, c + 0j
        return c - 1j * s, 0j, 0j, c + 1j * s  # RZ

    @_nb.njit(cache=True)
    def _rot_derivative_entries(kind, angle):
        h = 0.5 * angle
        c = 0.5 * np.cos(h)
        s = 0.5 * np.sin(h)
        if kind == 0:
            return -s + 0j, -1j * c, -1j * c, -s + 0j
        if kind == 1:
            return -s + 0j, -c + 0j, c + 0j, -s + 0j
        return -s - 1j * c, 0j, 0j, -s + 1j * c

    @_nb.njit(cache=True)
    def _apply_rot(amps, row, n, target, m00, m01, m10, m11):
        bit = 1 << (n - 1 - target)
        dim = amps.shape[1]
        for i in range(dim):
            if i & bit:
                continue
            j = i | bit
            a0 = amps[row, i]
            a1 = amps[row, j]
            amps[row, i] = m00 * a0 + m01 * a1
            amps[row, j] = m10 * a0 + m11 * a1

    @_nb.njit(cache=True)
    def _apply_cnot(amps, row, n, control, target):
        cbit = 1 << (n - 1 - control)
        tbit = 1 << (n - 1 - target)
        dim = amps.shape[1]
        for i in range(dim):
            if (i & cbit) and not (i & tbit):
                j = i | tbit
                tmp = amps[row, i]
                amps[row, i] = amps[row, j]
                amps[row, j] = tmp

    @_nb.njit(cache=True)
    def _apply_gate(amps, emap, n, kind, target, control, bind, index, fixed, params, embeds, sign):
        rows = amps.shape[0]
        if kind == 3:
            for r in range(rows):
                _apply_cnot(amps, r, n, control, target)
            return
        if bind == 2:  # per-row embedding angle
            for r in range(rows):
                angle = sign * embeds[emap[r], index]
                m00, m01, m10, m11 = _rot_entries(kind, angle)
                _apply_rot(amps, r, n, target, m00, m01, m10, m11)
            return
        angle = fixed if bind == 0 else params[index]
        angle *= sign
        m00, m01, m10, m11 = _rot_entries(kind, angle)
        for r in range(rows):
            _apply_rot(amps, r, n, target, m00, m01, m10, m11)

    @_nb.njit(cache=True)
    def _forward(kinds, targets, controls, binds, indices, angles, params, embeds, n, obs):
        batch = embeds.shape[0]
        dim = 1 << n
        amps = np.zeros((batch, dim), dtype=np.complex128)
        for b in range(batch):
            amps[b, 0] = 1.0
        emap = np.arange(batch)
        for g in range(kinds.size):
            _apply_gate(
                amps, emap, n, kinds[g], targets[g], controls[g], binds[g], indices[g],
                angles[g], params, embeds, 1.0,
            )
        z = np.empty((batch, obs.size))
        for b in range(batch):
            for k in range(obs.size):
                bit = 1 << (n - 1 - obs[k])
                acc = 0.0
                for i in range(dim):
                    p = amps[b, i].real ** 2 + amps[b, i].imag ** 2
                    acc += -p if i & bit else p
                z[b, k] = acc
        return amps, z

    @_nb.njit(cache=True)
    def _adjoint(kinds, targets, controls, binds, indices, angles, params, embeds, n, obs, n_params):
        ket, z = _forward(kinds, targets, controls, binds, indices, angles, params, embeds, n, obs)
        batch = embeds.shape[0]
        dim = 1 << n
        n_obs = obs.size
        grad = np.zeros((batch, n_obs, n_params))
        if n_params == 0 or n_obs == 0:
            return z, grad

        bras = np.empty((batch * n_obs, dim), dtype=np.complex128)
        bra_map = np.empty(batch * n_obs, dtype=np.int64)
        for b in range(batch):
            for k in range(n_obs):
                r = b * n_obs + k
                bra_map[r] = b
                bit = 1 << (n - 1 - obs[k])
                for i in range(dim):
                    bras[r, i] = -ket[b, i] if i & bit else ket[b, i]

        ket_map = np.arange(batch)
        poked = np.empty((batch, dim), dtype=np.complex128)
        for g in range(kinds.size - 1, -1, -1):
            _apply_gate(
                ket, ket_map, n, kinds[g], targets[g], controls[g], binds[g], indices[g],
                angles[g], params, embeds, -1.0,
            )
            if binds[g] == 1:
                poked[:, :] = ket
                m00, m01, m10, m11 = _rot_derivative_entries(kinds[g], params[indices[g]])
                for b in range(batch):
                    _apply_rot(poked, b, n, targets[g], m00, m01, m10, m11)
                for b in range(batch):
                    for k in range(n_obs):
                        r = b * n_obs + k
                        acc = 0j
                        for i in range(dim):
                            acc += np.conj(bras[r, i]) * poked[b, i]
                        grad[b, k, indices[g]] += 2.0 * acc.real
            _apply_gate(
                bras, bra_map, n, kinds[g], targets[g], controls[g], binds[g], indices[g],
                angles[g], params, embeds, -1.0,
            )
        return z, grad


class Executor:
    """Packed, reusable runner for one circuit structure.

    ``embeds`` rows supply the per-input gate angles, so one Executor serves
    every observation a network will ever see.
    """

    def __init__(self, program: qsim.CircuitProgram, n_params: int):
        program.validate(n_params)
        self.program = program
        self.n_params = n_params
        self.n_embeds = program.n_embeds()
        self._packed = _pack(program) if HAVE_NUMBA else None

    def _embed_matrix(self, embeds) -> np.ndarray:
        embeds = np.asarray(embeds, dtype=np.float64)
        if embeds.ndim == 1:
            embeds = embeds[None, :]
        if embeds.shape[1] != self.n_embeds:
            raise ValueError(
                f"expected {self.n_embeds} embedding angles per row, got {embeds.shape[1]}"
            )
        return np.ascontiguousarray(embeds)

    def z_values(self, params, embeds) -> np.ndarray:
        """Z expectations, shape (batch, n_observables)."""
        embeds = self._embed_matrix(embeds)
        if self._packed is not None:
            kinds, targets, controls, binds, indices, angles, obs = self._packed
            params = np.ascontiguousarray(params, dtype=np.float64)
            _, z = _forward(
                kinds, targets, controls, binds, indices, angles, params, embeds,
                self.program.n_qubits, obs,
            )
            return z
        return qsim.run_batched(self.program, params, embeds)

    def z_and_grad(self, params, embeds) -> tuple[np.ndarray, np.ndarray]:
        """Z expectations plus adjoint gradients, shapes (batch, n_obs) and (batch, n_obs, n_params)."""
        embeds = self._embed_matrix(embeds)
        if self._packed is not None:
            kinds, targets, controls, binds, indices, angles, obs = self._packed
            params = np.ascontiguousarray(params, dtype=np.float64)
            return _adjoint(
                kinds, targets, controls, binds, indices, angles, params, embeds,
                self.program.n_qubits, obs, self.n_params,
            )
        return qsim.forward_with_gradient(self.program, params, embeds=embeds)
