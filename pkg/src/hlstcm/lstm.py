"""Standard LSTM unit: fused-gate forward step, sequence unroll, exact BPTT.

Gate preactivations are stored fused as four stacked blocks in the order
``i, f, o, g`` so a step costs two matvecs instead of eight. Per-gate
matrices remain addressable as zero-copy views (``W_ix``, ``b_f``, ...).
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, as_float_array, matvec, sigmoid, tanh_act

# Row-block order inside the fused weight matrices / bias.
GATE_ORDER = ("i", "f", "o", "g")


def _block(arr, d, idx):
    return arr[idx * d:(idx + 1) * d]


@dataclass
class SpLstmParams:
    """Fused LSTM weights: W_x (4*d_h, d_x), W_h (4*d_h, d_h), b (4*d_h,)."""

    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray

    @property
    def d_h(self):
        return self.W_h.shape[1]

    @property
    def d_x(self):
        return self.W_x.shape[1]

    def _gate(self, arr, name):
        return _block(arr, self.d_h, GATE_ORDER.index(name))

    # Per-gate views onto the fused storage (writes propagate).
    @property
    def W_ix(self):
        return self._gate(self.W_x, "i")

    @property
    def W_fx(self):
        return self._gate(self.W_x, "f")

    @property
    def W_ox(self):
        return self._gate(self.W_x, "o")

    @property
    def W_gx(self):
        return self._gate(self.W_x, "g")

    @property
    def W_ih(self):
        return self._gate(self.W_h, "i")

    @property
    def W_fh(self):
        return self._gate(self.W_h, "f")

    @property
    def W_oh(self):
        return self._gate(self.W_h, "o")

    @property
    def W_gh(self):
        return self._gate(self.W_h, "g")

    @property
    def b_i(self):
        return self._gate(self.b, "i")

    @property
    def b_f(self):
        return self._gate(self.b, "f")

    @property
    def b_o(self):
        return self._gate(self.b, "o")

    @property
    def b_g(self):
        return self._gate(self.b, "g")

    def zeros_like(self):
        return SpLstmParams(
            np.zeros_like(self.W_x), np.zeros_like(self.W_h), np.zeros_like(self.b)
        )

    def copy(self):
        return SpLstmParams(self.W_x.copy(), self.W_h.copy(), self.b.copy())


@dataclass
class SpLstmState:
    h: np.ndarray
    c: np.ndarray

    def copy(self):
        return SpLstmState(self.h.copy(), self.c.copy())


def zero_state(d_h, dtype=np.float64):
    return SpLstmState(np.zeros(d_h, dtype=dtype), np.zeros(d_h, dtype=dtype))


def init_params(d_x, d_h, scheme="glorot", seed=0):
    """Glorot-uniform weights, zero biases except forget bias at +1.

    The forget-gate offset keeps the cell path open early in training.
    Deterministic for a given seed.
    """
    if d_x < 1 or d_h < 1:
        raise ValueError(f"dimensions must be >= 1, got d_x={d_x}, d_h={d_h}")
    if scheme != "glorot":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    r_x = np.sqrt(6.0 / (d_x + d_h))
    r_h = np.sqrt(6.0 / (d_h + d_h))
    W_x = rng.uniform(-r_x, r_x, size=(4 * d_h, d_x))
    W_h = rng.uniform(-r_h, r_h, size=(4 * d_h, d_h))
    b = np.zeros(4 * d_h)
    b[d_h:2 * d_h] = 1.0  # forget-gate block
    return SpLstmParams(W_x, W_h, b)


class SpLstmTape:
    """Per-step activations cached for the backward pass.

    Arrays are stacked over time: x (T, d_x), gates (T, 4*d_h) holding
    post-activation i, f, o, g, c (T, d_h), h (T, d_h), tanh_c (T, d_h).
    """

    def __init__(self, T, d_x, d_h, h0, c0, dtype=np.float64):
        self.x = np.empty((T, d_x), dtype=dtype)
        self.gates = np.empty((T, 4 * d_h), dtype=dtype)
        self.c = np.empty((T, d_h), dtype=dtype)
        self.h = np.empty((T, d_h), dtype=dtype)
        self.tanh_c = np.empty((T, d_h), dtype=dtype)
        self.h0 = h0.copy()
        self.c0 = c0.copy()

    def __len__(self):
        return self.x.shape[0]


def _step(p, x_t, h_prev, c_prev):
    """One LSTM step; returns (h, c, gates, tanh_c)."""
    d = p.d_h
    a = matvec(p.W_x, x_t) + matvec(p.W_h, h_prev) + p.b
    gates = np.empty(4 * d, dtype=a.dtype)
    gates[:3 * d] = sigmoid(a[:3 * d])       # i, f, o
    gates[3 * d:] = tanh_act(a[3 * d:])      # g
    i = gates[:d]
    f = gates[d:2 * d]
    o = gates[2 * d:3 * d]
    g = gates[3 * d:]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, gates, tc


def forward_step(p, x_t, prev):
    """Advance one step from ``prev``; returns (state, tape_of_length_1)."""
    x_t = as_float_array(x_t)
    if x_t.shape != (p.d_x,):
        raise ShapeError(f"input shape {x_t.shape} does not match d_x={p.d_x}")
    if prev.h.shape != (p.d_h,) or prev.c.shape != (p.d_h,):
        raise ShapeError(f"state dims {prev.h.shape}/{prev.c.shape} do not match d_h={p.d_h}")
    dtype = np.result_type(p.W_x, x_t)
    tape = SpLstmTape(1, p.d_x, p.d_h, prev.h, prev.c, dtype=dtype)
    h, c, gates, tc = _step(p, x_t, prev.h, prev.c)
    tape.x[0] = x_t
    tape.gates[0] = gates
    tape.c[0] = c
    tape.h[0] = h
    tape.tanh_c[0] = tc
    return SpLstmState(h, c), tape


def forward_seq(p, xs, init=None):
    """Unroll over a sequence; returns (list of states, tape).

    Uses the same step kernel as ``forward_step``, so restarting from any
    saved state reproduces the remaining trajectory element-exactly.
    """
    xs = as_float_array(xs)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError(f"expected a nonempty (T, d_x) input sequence, got shape {xs.shape}")
    if xs.shape[1] != p.d_x:
        raise ShapeError(f"input dim {xs.shape[1]} does not match d_x={p.d_x}")
    dtype = np.result_type(p.W_x, xs)
    if init is None:
        init = zero_state(p.d_h, dtype=dtype)
    T = xs.shape[0]
    tape = SpLstmTape(T, p.d_x, p.d_h, init.h, init.c, dtype=dtype)
    h, c = init.h, init.c
    states = []
    for t in range(T):
        h, c, gates, tc = _step(p, xs[t], h, c)
        tape.x[t] = xs[t]
        tape.gates[t] = gates
        tape.c[t] = c
        tape.h[t] = h
        tape.tanh_c[t] = tc
        states.append(SpLstmState(h, c))
    return states, tape


def backward_seq(p, tape, dh_seq, dc_final=None):
    """Exact reverse-mode gradients through an unrolled sequence.

    ``dh_seq[t]`` is the loss gradient w.r.t. h_t from outside the
    recurrence (shape (T, d_h)); ``dc_final`` optionally seeds the final
    cell gradient. Returns (SpLstmParams-shaped grads, dx array (T, d_x)).
    Parameter gradients accumulate over all timesteps.
    """
    T = len(tape)
    d = p.d_h
    dh_seq = np.asarray(dh_seq, dtype=np.float64)
    if dh_seq.shape != (T, d):
        raise ShapeError(f"dh_seq shape {dh_seq.shape} does not match tape ({T}, {d})")
    grads = p.zeros_like()
    dx = np.empty((T, p.d_x))
    dh_rec = np.zeros(d)
    dc = np.zeros(d) if dc_final is None else np.asarray(dc_final, dtype=np.float64).copy()
    da = np.empty(4 * d)
    for t in range(T - 1, -1, -1):
        gates = tape.gates[t]
        i = gates[:d]
        f = gates[d:2 * d]
        o = gates[2 * d:3 * d]
        g = gates[3 * d:]
        tc = tape.tanh_c[t]
        c_prev = tape.c[t - 1] if t > 0 else tape.c0
        h_prev = tape.h[t - 1] if t > 0 else tape.h0

        dh = dh_seq[t] + dh_rec
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da[:d] = (dc * g) * i * (1.0 - i)
        da[d:2 * d] = (dc * c_prev) * f * (1.0 - f)
        da[2 * d:3 * d] = do * o * (1.0 - o)
        da[3 * d:] = (dc * i) * (1.0 - g * g)

        grads.b += da
        grads.W_x += da[:, None] * tape.x[t]
        grads.W_h += da[:, None] * h_prev
        dx[t] = p.W_x.T @ da
        dh_rec = p.W_h.T @ da
        dc = dc * f
    return grads, dx
