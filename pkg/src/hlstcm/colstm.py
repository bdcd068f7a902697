"""Concurrent LSTM: p gated sub-memory units feeding one shared memory.

Each slot s keeps private input/forget/modulation gates and a private
sub-cell c^s. A per-slot cell gate pi^s (private input-side weight, shared
recurrent weight and bias) meters how much of each sub-cell enters the
shared co-memory ``c = sum_s pi^s * c^s``, which is recomputed every step:
only the sub-cells and the common hidden state recur. A single output gate
reads all slot inputs plus the previous hidden state.

Per-slot input-side weights are fused as five row blocks ``i, f, pi, g, o``
(the ``o`` block holds this slot's additive term of the shared output gate);
per-slot recurrent weights fuse ``i, f, g``.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, as_float_array, matvec, sigmoid, tanh_act

# forward() test hook: force every cell gate fully open. Used only by
# equivalence tests; no training or CLI path sets it.
CLAMP_CELL_GATES_TO_ONE = "clamp-cell-gates-to-one"


@dataclass
class CoSlotParams:
    """One slot's private weights.

    W_in: (5*d_co, d_in) row blocks i, f, pi, g, o (all input-side).
    W_rec: (3*d_co, d_co) row blocks i, f, g (recurrent-side).
    b: (3*d_co,) blocks i, f, g.
    """

    W_in: np.ndarray
    W_rec: np.ndarray
    b: np.ndarray

    @property
    def d_co(self):
        return self.W_rec.shape[1]

    @property
    def d_in(self):
        return self.W_in.shape[1]

    # Views by role; cell-gate and output-gate blocks have no per-slot
    # recurrent counterpart (those weights are shared across slots).
    @property
    def W_ix(self):
        return self.W_in[:self.d_co]

    @property
    def W_fx(self):
        return self.W_in[self.d_co:2 * self.d_co]

    @property
    def W_pi_in(self):
        return self.W_in[2 * self.d_co:3 * self.d_co]

    @property
    def W_gx(self):
        return self.W_in[3 * self.d_co:4 * self.d_co]

    @property
    def W_ox(self):
        return self.W_in[4 * self.d_co:]

    @property
    def W_ih(self):
        return self.W_rec[:self.d_co]

    @property
    def W_fh(self):
        return self.W_rec[self.d_co:2 * self.d_co]

    @property
    def W_gh(self):
        return self.W_rec[2 * self.d_co:]

    @property
    def b_i(self):
        return self.b[:self.d_co]

    @property
    def b_f(self):
        return self.b[self.d_co:2 * self.d_co]

    @property
    def b_g(self):
        return self.b[2 * self.d_co:]

    def zeros_like(self):
        return CoSlotParams(
            np.zeros_like(self.W_in), np.zeros_like(self.W_rec), np.zeros_like(self.b)
        )

    def copy(self):
        return CoSlotParams(self.W_in.copy(), self.W_rec.copy(), self.b.copy())


@dataclass
class CoLstmParams:
    """p slot blocks plus the shared cell-gate / output-gate tensors."""

    slots: list
    W_pi_h: np.ndarray  # (d_co, d_co) shared cell-gate recurrent weight
    b_pi: np.ndarray    # (d_co,) shared cell-gate bias
    W_oh: np.ndarray    # (d_co, d_co) shared output-gate recurrent weight
    b_o: np.ndarray     # (d_co,) shared output-gate bias

    @property
    def p(self):
        return len(self.slots)

    @property
    def d_co(self):
        return self.W_pi_h.shape[1]

    @property
    def d_in(self):
        return self.slots[0].d_in

    def zeros_like(self):
        return CoLstmParams(
            [s.zeros_like() for s in self.slots],
            np.zeros_like(self.W_pi_h),
            np.zeros_like(self.b_pi),
            np.zeros_like(self.W_oh),
            np.zeros_like(self.b_o),
        )

    def copy(self):
        return CoLstmParams(
            [s.copy() for s in self.slots],
            self.W_pi_h.copy(),
            self.b_pi.copy(),
            self.W_oh.copy(),
            self.b_o.copy(),
        )


@dataclass
class CoLstmState:
    sub_cells: np.ndarray  # (p, d_co)
    h: np.ndarray          # (d_co,)

    def copy(self):
        return CoLstmState(self.sub_cells.copy(), self.h.copy())


def zero_state(p, d_co, dtype=np.float64):
    return CoLstmState(np.zeros((p, d_co), dtype=dtype), np.zeros(d_co, dtype=dtype))


def init_params(p, d_in, d_co, seed=0):
    """Glorot-uniform weights per block, forget biases +1, rest zero."""
    if p < 1:
        raise ValueError(f"slot count must be >= 1, got {p}")
    if d_in < 1 or d_co < 1:
        raise ValueError(f"dimensions must be >= 1, got d_in={d_in}, d_co={d_co}")
    rng = np.random.default_rng(seed)
    r_in = np.sqrt(6.0 / (d_in + d_co))
    r_rec = np.sqrt(6.0 / (d_co + d_co))
    slots = []
    for _ in range(p):
        W_in = rng.uniform(-r_in, r_in, size=(5 * d_co, d_in))
        W_rec = rng.uniform(-r_rec, r_rec, size=(3 * d_co, d_co))
        b = np.zeros(3 * d_co)
        b[d_co:2 * d_co] = 1.0  # forget-gate block
        slots.append(CoSlotParams(W_in, W_rec, b))
    W_pi_h = rng.uniform(-r_rec, r_rec, size=(d_co, d_co))
    W_oh = rng.uniform(-r_rec, r_rec, size=(d_co, d_co))
    return CoLstmParams(slots, W_pi_h, np.zeros(d_co), W_oh, np.zeros(d_co))


class CoLstmTape:
    """Stacked per-step cache: slot inputs, gate values, sub-cells, shared state.

    ``gates[s, t]`` holds post-activation blocks i, f, pi, g; the stored pi
    already reflects slot masking (0) or the clamp hook (1), so the backward
    pass recovers the correct zero derivative for both from the stored value.
    """

    def __init__(self, p, T, d_in, d_co, h0, c0, present, dtype=np.float64):
        self.u = np.empty((p, T, d_in), dtype=dtype)
        self.gates = np.empty((p, T, 4 * d_co), dtype=dtype)
        self.c_sub = np.empty((p, T, d_co), dtype=dtype)
        self.o = np.empty((T, d_co), dtype=dtype)
        self.c_co = np.empty((T, d_co), dtype=dtype)
        self.tanh_c = np.empty((T, d_co), dtype=dtype)
        self.h = np.empty((T, d_co), dtype=dtype)
        self.h0 = h0.copy()
        self.c0 = c0.copy()
        self.present = present.copy()

    def __len__(self):
        return self.h.shape[0]


def _check_inputs(cp, inputs, name="inputs"):
    u = as_float_array(inputs)
    if u.ndim == 2:
        u = u[:, None, :]  # (p, d_in) -> (p, 1, d_in)
    if u.ndim != 3 or u.shape[0] != cp.p or u.shape[2] != cp.d_in:
        raise ShapeError(
            f"{name} shape {np.shape(inputs)} does not match p={cp.p}, d_in={cp.d_in}"
        )
    return u


def _resolve_present(cp, present):
    if present is None:
        return np.ones(cp.p, dtype=bool)
    present = np.asarray(present, dtype=bool)
    if present.shape != (cp.p,):
        raise ShapeError(f"present mask shape {present.shape} does not match p={cp.p}")
    return present


def _step(cp, u_t, h_prev, c_prev, present, clamp, tape, t):
    p, d = cp.p, cp.d_co
    pi_rec = matvec(cp.W_pi_h, h_prev) + cp.b_pi
    a_o = matvec(cp.W_oh, h_prev) + cp.b_o
    c_co = np.zeros(d, dtype=tape.h.dtype)
    a = np.empty(4 * d, dtype=tape.h.dtype)
    for s in range(p):
        slot = cp.slots[s]
        a_in = matvec(slot.W_in, u_t[s])
        a_rec = matvec(slot.W_rec, h_prev)
        a[:2 * d] = a_in[:2 * d] + a_rec[:2 * d] + slot.b[:2 * d]
        a[2 * d:3 * d] = a_in[2 * d:3 * d] + pi_rec
        a[3 * d:] = a_in[3 * d:4 * d] + a_rec[2 * d:] + slot.b[2 * d:]
        gates = tape.gates[s, t]
        gates[:3 * d] = sigmoid(a[:3 * d])
        gates[3 * d:] = tanh_act(a[3 * d:])
        i = gates[:d]
        f = gates[d:2 * d]
        pi = gates[2 * d:3 * d]
        g = gates[3 * d:]
        c_s = f * c_prev[s] + i * g
        tape.c_sub[s, t] = c_s
        if not present[s]:
            pi[:] = 0.0  # absent slot: no contribution to co-memory or output gate
        elif clamp:
            pi[:] = 1.0
        if present[s]:
            c_co += pi * c_s
            a_o += a_in[4 * d:]
    o = sigmoid(a_o)
    tc = np.tanh(c_co)
    h = o * tc
    tape.o[t] = o
    tape.c_co[t] = c_co
    tape.tanh_c[t] = tc
    tape.h[t] = h
    return h


def forward_step(cp, inputs, prev, present=None, gate_override=None):
    """One step from state ``prev`` given the p slot input vectors.

    Returns (new CoLstmState, tape of length 1). ``gate_override`` accepts
    only CLAMP_CELL_GATES_TO_ONE.
    """
    u = _check_inputs(cp, inputs)
    if u.shape[1] != 1:
        raise ShapeError("forward_step expects exactly one vector per slot")
    present = _resolve_present(cp, present)
    if prev.sub_cells.shape != (cp.p, cp.d_co) or prev.h.shape != (cp.d_co,):
        raise ShapeError(
            f"state shapes {prev.sub_cells.shape}/{prev.h.shape} do not match "
            f"p={cp.p}, d_co={cp.d_co}"
        )
    clamp = _resolve_override(gate_override)
    dtype = np.result_type(cp.W_pi_h, u)
    tape = CoLstmTape(cp.p, 1, cp.d_in, cp.d_co, prev.h, prev.sub_cells, present, dtype=dtype)
    tape.u[:, 0, :] = u[:, 0, :]
    _step(cp, u[:, 0, :], prev.h, prev.sub_cells, present, clamp, tape, 0)
    return CoLstmState(tape.c_sub[:, 0, :].copy(), tape.h[0].copy()), tape


def forward_seq(cp, input_seqs, init=None, present=None, gate_override=None):
    """Unroll over p aligned input sequences of shape (p, T, d_in).

    Returns (hidden states (T, d_co), tape). Ragged slot sequences are
    rejected by the array conversion.
    """
    u = _check_inputs(cp, input_seqs, "input_seqs")
    if u.shape[1] == 0:
        raise ShapeError("empty input sequence")
    present = _resolve_present(cp, present)
    dtype = np.result_type(cp.W_pi_h, u)
    if init is None:
        init = zero_state(cp.p, cp.d_co, dtype=dtype)
    clamp = _resolve_override(gate_override)
    T = u.shape[1]
    tape = CoLstmTape(cp.p, T, cp.d_in, cp.d_co, init.h, init.sub_cells, present, dtype=dtype)
    tape.u[:] = u
    h = init.h
    c_sub = init.sub_cells
    for t in range(T):
        h = _step(cp, u[:, t, :], h, c_sub, present, clamp, tape, t)
        c_sub = tape.c_sub[:, t, :]
    return tape.h.copy(), tape


def _resolve_override(gate_override):
    if gate_override is None:
        return False
    if gate_override == CLAMP_CELL_GATES_TO_ONE:
        return True
    raise ValueError(f"unknown gate_override {gate_override!r}")


def backward_seq(cp, tape, dh_seq):
    """Exact reverse-mode gradients for every tensor and slot input.

    Two carriers run backward through time: the common hidden gradient
    (through all gate preactivations) and one cell gradient per slot
    (through each sub-cell's forget path). The co-memory is a per-step
    quantity: its gradient splits into the cell gates and the sub-cells
    at the same step only. Shared tensors accumulate over all slots.
    Returns (CoLstmParams-shaped grads, slot input grads (p, T, d_in)).
    """
    T = len(tape)
    p, d = cp.p, cp.d_co
    dh_seq = np.asarray(dh_seq, dtype=np.float64)
    if dh_seq.shape != (T, d):
        raise ShapeError(f"dh_seq shape {dh_seq.shape} does not match tape ({T}, {d})")
    grads = cp.zeros_like()
    du = np.empty((p, T, cp.d_in))
    dh_rec = np.zeros(d)
    dc_rec = np.zeros((p, d))
    da5 = np.empty(5 * d)
    da3 = np.empty(3 * d)
    for t in range(T - 1, -1, -1):
        o = tape.o[t]
        tc = tape.tanh_c[t]
        h_prev = tape.h[t - 1] if t > 0 else tape.h0
        dh = dh_seq[t] + dh_rec
        do = dh * tc
        da_o = do * o * (1.0 - o)
        dc_co = dh * o * (1.0 - tc * tc)

        grads.b_o += da_o
        grads.W_oh += da_o[:, None] * h_prev
        dh_prev = cp.W_oh.T @ da_o
        da_pi_sum = np.zeros(d)
        for s in range(p):
            slot = cp.slots[s]
            gates = tape.gates[s, t]
            i = gates[:d]
            f = gates[d:2 * d]
            pi = gates[2 * d:3 * d]
            g = gates[3 * d:]
            c_prev_s = tape.c_sub[s, t - 1] if t > 0 else tape.c0[s]
            # Stored pi is 0 for masked and 1 for clamped slots; both give
            # pi*(1-pi) = 0, so no gradient leaks through those gates.
            da_pi = (dc_co * tape.c_sub[s, t]) * pi * (1.0 - pi)
            dc_s = dc_rec[s] + dc_co * pi
            da5[:d] = (dc_s * g) * i * (1.0 - i)
            da5[d:2 * d] = (dc_s * c_prev_s) * f * (1.0 - f)
            da5[2 * d:3 * d] = da_pi
            da5[3 * d:4 * d] = (dc_s * i) * (1.0 - g * g)
            da5[4 * d:] = da_o if tape.present[s] else 0.0

            sg = grads.slots[s]
            sg.W_in += da5[:, None] * tape.u[s, t]
            da3[:2 * d] = da5[:2 * d]
            da3[2 * d:] = da5[3 * d:4 * d]
            sg.W_rec += da3[:, None] * h_prev
            sg.b += da3
            da_pi_sum += da_pi
            du[s, t] = slot.W_in.T @ da5
            dh_prev += slot.W_rec.T @ da3
            dc_rec[s] = dc_s * f
        grads.b_pi += da_pi_sum
        grads.W_pi_h += da_pi_sum[:, None] * h_prev
        dh_prev += cp.W_pi_h.T @ da_pi_sum
        dh_rec = dh_prev
    return grads, du
