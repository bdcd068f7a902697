"""Full classifier architectures over per-person feature sequences.

Variants:
  hlstcm     per-person LSTMs -> optional tanh projection -> concurrent
             LSTM over all persons -> classify the final hidden state.
  two-group  two concurrent LSTMs over two slot groups; their hidden
             states are concatenated each step and fed to a top LSTM.
  b1         features mean-pooled over persons and time, linear softmax.
  b2         per-step concatenation of all persons' features, single LSTM.
  b3         independent per-person LSTMs; the per-person softmax scores
             are averaged.
  b4         per-person LSTMs max-pooled element-wise each step into a
             whole-scene LSTM.

The classifier head applies tanh to the logits before the softmax
(bounding them to (-1, 1)); ``linear_logits`` disables that for ablation.
b1 always uses linear logits.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import colstm, lstm
from .numerics import ShapeError, as_float_array, matvec, softmax

VARIANTS = ("hlstcm", "two-group", "b1", "b2", "b3", "b4")

_LOG_FLOOR = 1e-300


@dataclass
class HlstcmConfig:
    """Dimensions and switches shared by every variant.

    d_proj = 0 feeds per-person hidden states to the concurrent layer
    directly. d_top = 0 resolves to d_co for the two-group variant.
    group_a lists the slot indices of group A (two-group only); empty
    means the first ceil(p/2) slots.
    """

    p: int = 3
    d_x: int = 16
    d_sp: int = 32
    d_proj: int = 16
    d_co: int = 32
    k: int = 4
    T: int = 10
    variant: str = "hlstcm"
    d_top: int = 0
    group_a: tuple = ()
    share_sp_params: bool = False
    linear_logits: bool = False
    cumulative_loss: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("p", "d_x", "d_sp", "d_co", "T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.d_proj < 0 or self.d_top < 0:
            raise ValueError("d_proj and d_top must be >= 0")
        if self.variant == "two-group":
            if not self.group_a:
                self.group_a = tuple(range(math.ceil(self.p / 2)))
            self.group_a = tuple(sorted(self.group_a))
            if not set(self.group_a) < set(range(self.p)) or not self.group_a:
                raise ValueError(
                    f"group_a {self.group_a} must be a nonempty proper subset of slots 0..{self.p - 1}"
                )
            if self.d_top == 0:
                self.d_top = self.d_co
        if self.variant == "b1" and self.cumulative_loss:
            raise ValueError("cumulative_loss is undefined for the static-pool variant b1")

    @property
    def group_b(self):
        return tuple(s for s in range(self.p) if s not in self.group_a)

    @property
    def co_input_dim(self):
        return self.d_proj if self.d_proj > 0 else self.d_sp

    @property
    def has_proj(self):
        return self.variant in ("hlstcm", "two-group") and self.d_proj > 0

    @property
    def n_sp(self):
        if self.variant in ("b1", "b2"):
            return 0
        return 1 if self.share_sp_params else self.p

    @property
    def n_co(self):
        return {"hlstcm": 1, "two-group": 2}.get(self.variant, 0)

    @property
    def n_heads(self):
        if self.variant == "b3":
            return self.n_sp
        return 1

    @property
    def head_dim(self):
        return {
            "hlstcm": self.d_co,
            "two-group": self.d_top,
            "b1": self.d_x,
            "b2": self.d_co,
            "b3": self.d_sp,
            "b4": self.d_co,
        }[self.variant]

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["group_a"] = list(self.group_a)
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "group_a" in d:
            d["group_a"] = tuple(d["group_a"])
        return cls(**d)


@dataclass
class HeadParams:
    W: np.ndarray  # (k, d_out)
    b: np.ndarray  # (k,)

    def zeros_like(self):
        return HeadParams(np.zeros_like(self.W), np.zeros_like(self.b))

    def copy(self):
        return HeadParams(self.W.copy(), self.b.copy())


@dataclass
class HlstcmParams:
    """Every learnable tensor of one model; gradients reuse this layout."""

    sp: list
    proj_W: np.ndarray | None
    proj_b: np.ndarray | None
    co: list
    top: lstm.SpLstmParams | None
    heads: list

    def zeros_like(self):
        return HlstcmParams(
            [s.zeros_like() for s in self.sp],
            None if self.proj_W is None else np.zeros_like(self.proj_W),
            None if self.proj_b is None else np.zeros_like(self.proj_b),
            [c.zeros_like() for c in self.co],
            None if self.top is None else self.top.zeros_like(),
            [h.zeros_like() for h in self.heads],
        )

    def copy(self):
        return self.map_arrays(np.copy)

    def map_arrays(self, fn):
        """Structurally identical params with ``fn`` applied to every array."""

        def sp_map(s):
            return lstm.SpLstmParams(fn(s.W_x), fn(s.W_h), fn(s.b))

        def co_map(c):
            return colstm.CoLstmParams(
                [colstm.CoSlotParams(fn(s.W_in), fn(s.W_rec), fn(s.b)) for s in c.slots],
                fn(c.W_pi_h), fn(c.b_pi), fn(c.W_oh), fn(c.b_o))

        return HlstcmParams(
            [sp_map(s) for s in self.sp],
            None if self.proj_W is None else fn(self.proj_W),
            None if self.proj_b is None else fn(self.proj_b),
            [co_map(c) for c in self.co],
            None if self.top is None else sp_map(self.top),
            [HeadParams(fn(h.W), fn(h.b)) for h in self.heads],
        )


@dataclass
class Sample:
    """One clip: per-person feature sequences, a label, slot occupancy."""

    features: np.ndarray  # (p, T, d_x)
    label: int
    present: np.ndarray | None = None  # (p,) bool; None means all present
    id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ShapeError(f"features must be (p, T, d_x), got shape {self.features.shape}")
        if self.present is None:
            self.present = np.ones(self.features.shape[0], dtype=bool)
        else:
            self.present = np.asarray(self.present, dtype=bool)
        if self.present.shape != (self.features.shape[0],):
            raise ShapeError(
                f"present mask shape {self.present.shape} does not match p={self.features.shape[0]}"
            )
        if not self.present.any():
            raise ValueError(f"sample {self.id!r} has no present slots")

    def check_against(self, config):
        expect = (config.p, config.T, config.d_x)
        if self.features.shape != expect:
            raise ShapeError(
                f"sample {self.id!r} features {self.features.shape} do not match config {expect}"
            )
        if not 0 <= self.label < config.k:
            raise ValueError(f"sample {self.id!r} label {self.label} outside 0..{config.k - 1}")


def _glorot(rng, rows, cols):
    r = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-r, r, size=(rows, cols))


def init_model_params(config, seed=0):
    """Build all tensors for ``config.variant``; deterministic per seed."""
    ss = np.random.SeedSequence(seed)

    def child():
        return ss.spawn(1)[0]

    sp = []
    if config.variant == "b3" or config.n_sp:
        d_in = config.d_x
        for _ in range(config.n_sp):
            sp.append(lstm.init_params(d_in, config.d_sp, seed=child()))
    proj_W = proj_b = None
    if config.has_proj:
        rng = np.random.default_rng(child())
        proj_W = _glorot(rng, config.d_proj, config.d_sp)
        proj_b = np.zeros(config.d_proj)
    co = []
    if config.variant == "hlstcm":
        co.append(colstm.init_params(config.p, config.co_input_dim, config.d_co, seed=child()))
    elif config.variant == "two-group":
        for group in (config.group_a, config.group_b):
            co.append(colstm.init_params(len(group), config.co_input_dim, config.d_co, seed=child()))
    top = None
    if config.variant == "two-group":
        top = lstm.init_params(2 * config.d_co, config.d_top, seed=child())
    elif config.variant == "b2":
        top = lstm.init_params(config.p * config.d_x, config.d_co, seed=child())
    elif config.variant == "b4":
        top = lstm.init_params(config.d_sp, config.d_co, seed=child())
    heads = []
    for _ in range(config.n_heads):
        rng = np.random.default_rng(child())
        heads.append(HeadParams(_glorot(rng, config.k, config.head_dim), np.zeros(config.k)))
    return HlstcmParams(sp, proj_W, proj_b, co, top, heads)


def named_tensors(params):
    """(name, array) pairs in the fixed declaration order used everywhere:
    checkpoints, optimizer state, and gradient-check reports."""
    out = []
    for i, s in enumerate(params.sp):
        out += [(f"sp.{i}.W_x", s.W_x), (f"sp.{i}.W_h", s.W_h), (f"sp.{i}.b", s.b)]
    if params.proj_W is not None:
        out += [("proj.W", params.proj_W), ("proj.b", params.proj_b)]
    for u, c in enumerate(params.co):
        for j, slot in enumerate(c.slots):
            out += [
                (f"co.{u}.s{j}.W_in", slot.W_in),
                (f"co.{u}.s{j}.W_rec", slot.W_rec),
                (f"co.{u}.s{j}.b", slot.b),
            ]
        out += [
            (f"co.{u}.W_pi_h", c.W_pi_h),
            (f"co.{u}.b_pi", c.b_pi),
            (f"co.{u}.W_oh", c.W_oh),
            (f"co.{u}.b_o", c.b_o),
        ]
    if params.top is not None:
        out += [("top.W_x", params.top.W_x), ("top.W_h", params.top.W_h), ("top.b", params.top.b)]
    for i, h in enumerate(params.heads):
        out += [(f"head.{i}.W", h.W), (f"head.{i}.b", h.b)]
    return out


def param_count(params):
    return sum(a.size for _, a in named_tensors(params))


@dataclass
class ModelTape:
    """Forward cache for one sample; field population depends on variant."""

    n_steps: int
    present: np.ndarray
    probs: np.ndarray
    z: np.ndarray | None = None                # final-step logits (post-tanh unless linear)
    sp_tapes: list | None = None               # per absolute slot
    U: np.ndarray | None = None                # (p, n, d_proj) projected slot inputs
    co_tapes: list | None = None
    top_tape: lstm.SpLstmTape | None = None
    pool_pos: np.ndarray | None = None         # (n, d_sp) argmax position among present slots
    present_idx: np.ndarray | None = None
    b1_xbar: np.ndarray | None = None
    slot_z: np.ndarray | None = None           # (p, k) b3 per-person logits
    slot_probs: np.ndarray | None = None       # (p, k)
    z_seq: np.ndarray | None = None            # cumulative mode: (n, k)
    probs_seq: np.ndarray | None = None        # cumulative mode: (n, k)
    slot_z_seq: np.ndarray | None = None       # cumulative b3: (p, n, k)
    slot_probs_seq: np.ndarray | None = None


def _sp_params(params, config, s):
    return params.sp[0] if config.share_sp_params else params.sp[s]


def _head_apply(head, x, linear):
    a = matvec(head.W, x) + head.b
    z = a if linear else np.tanh(a)
    return z, softmax(z)


def _run_sp_layer(params, config, sample, n):
    tapes = []
    for s in range(config.p):
        _, tape = lstm.forward_seq(_sp_params(params, config, s), sample.features[s, :n])
        tapes.append(tape)
    return tapes


def _project(params, tapes, n, p):
    d_proj = params.proj_W.shape[0]
    U = np.empty((p, n, d_proj), dtype=np.result_type(params.proj_W, tapes[0].h))
    for s in range(p):
        U[s] = np.tanh(tapes[s].h @ params.proj_W.T + params.proj_b)
    return U


def _slot_inputs(params, config, sample, n):
    """Per-person hidden sequences, projected when configured."""
    tapes = _run_sp_layer(params, config, sample, n)
    if config.has_proj:
        U = _project(params, tapes, n, config.p)
    else:
        U = np.stack([t.h for t in tapes])
    return tapes, U


def _forward_steps(params, config, sample, n, clamp=False):
    sample.check_against(config)
    v = config.variant
    cumulative = config.cumulative_loss
    override = colstm.CLAMP_CELL_GATES_TO_ONE if clamp else None
    tape = ModelTape(n_steps=n, present=sample.present.copy(), probs=None)

    if v == "b1":
        xbar = sample.features[sample.present, :n, :].mean(axis=(0, 1))
        tape.b1_xbar = xbar
        tape.z, tape.probs = _head_apply(params.heads[0], xbar, linear=True)
        return tape

    if v in ("hlstcm", "two-group"):
        tape.sp_tapes, tape.U = _slot_inputs(params, config, sample, n)
        if v == "hlstcm":
            _, co_tape = colstm.forward_seq(params.co[0], tape.U, present=sample.present,
                                            gate_override=override)
            tape.co_tapes = [co_tape]
            top_h = co_tape.h
        else:
            tape.co_tapes = []
            parts = []
            for u, group in enumerate((config.group_a, config.group_b)):
                idx = list(group)
                _, co_tape = colstm.forward_seq(params.co[u], tape.U[idx],
                                                present=sample.present[idx],
                                                gate_override=override)
                tape.co_tapes.append(co_tape)
                parts.append(co_tape.h)
            concat = np.concatenate(parts, axis=1)
            _, tape.top_tape = lstm.forward_seq(params.top, concat)
            top_h = tape.top_tape.h
    elif v == "b2":
        x_cat = sample.features[:, :n, :].transpose(1, 0, 2).reshape(n, config.p * config.d_x)
        _, tape.top_tape = lstm.forward_seq(params.top, x_cat)
        top_h = tape.top_tape.h
    elif v == "b4":
        tape.sp_tapes = _run_sp_layer(params, config, sample, n)
        idx = np.flatnonzero(sample.present)
        tape.present_idx = idx
        stack = np.stack([tape.sp_tapes[s].h for s in idx])  # (P, n, d_sp)
        tape.pool_pos = np.argmax(stack, axis=0)             # first max -> lowest slot
        pooled = np.take_along_axis(stack, tape.pool_pos[None], 0)[0]
        _, tape.top_tape = lstm.forward_seq(params.top, pooled)
        top_h = tape.top_tape.h
    elif v == "b3":
        tape.sp_tapes = _run_sp_layer(params, config, sample, n)
        idx = np.flatnonzero(sample.present)
        tape.present_idx = idx
        step_list = list(range(n)) if cumulative else [n - 1]
        dtype = np.result_type(params.heads[0].W, tape.sp_tapes[0].h)
        slot_z = np.zeros((config.p, len(step_list), config.k), dtype=dtype)
        slot_probs = np.zeros_like(slot_z)
        mean = np.zeros((len(step_list), config.k), dtype=dtype)
        for col, t in enumerate(step_list):
            for s in idx:
                head = params.heads[0 if config.share_sp_params else s]
                z_s, y_s = _head_apply(head, tape.sp_tapes[s].h[t], config.linear_logits)
                slot_z[s, col] = z_s
                slot_probs[s, col] = y_s
                mean[col] += y_s
            mean[col] /= len(idx)
        if cumulative:
            tape.slot_z_seq = slot_z
            tape.slot_probs_seq = slot_probs
            tape.probs_seq = mean
        else:
            tape.slot_z = slot_z[:, 0]
            tape.slot_probs = slot_probs[:, 0]
        tape.probs = mean[-1]
        return tape
    else:  # pragma: no cover
        raise ValueError(v)

    # Shared single-head classification from the top-level hidden sequence.
    if cumulative:
        dtype = np.result_type(params.heads[0].W, top_h)
        tape.z_seq = np.empty((n, config.k), dtype=dtype)
        tape.probs_seq = np.empty((n, config.k), dtype=dtype)
        for t in range(n):
            tape.z_seq[t], tape.probs_seq[t] = _head_apply(
                params.heads[0], top_h[t], config.linear_logits)
        tape.z = tape.z_seq[-1]
        tape.probs = tape.probs_seq[-1]
    else:
        tape.z, tape.probs = _head_apply(params.heads[0], top_h[-1], config.linear_logits)
    return tape


def forward(params, config, sample, clamp_cell_gates=False):
    """Class probabilities for one sample; also returns the backward tape.

    ``clamp_cell_gates`` is a test-only hook forcing the concurrent layer's
    cell gates to one; no training entry point sets it.
    """
    tape = _forward_steps(params, config, sample, config.T, clamp=clamp_cell_gates)
    return tape.probs, tape


def n_partial_steps(ratio, T):
    """ceil(ratio*T) with a guard against float representation of ratio*T."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"observation ratio must be in (0, 1], got {ratio}")
    return max(1, math.ceil(ratio * T - 1e-9))


def forward_partial(params, config, sample, ratio):
    """Classify from the hidden state after the first ceil(ratio*T) steps."""
    n = n_partial_steps(ratio, config.T)
    tape = _forward_steps(params, config, sample, n)
    return tape.probs


def loss(probs, label):
    """Negative log probability of ``label``; probabilities are floored at
    1e-300 before the log so an underflowed class stays finite.

    Returns a numpy scalar in the dtype of ``probs`` (float64 normally;
    the gradient checker evaluates in extended precision).
    """
    probs = as_float_array(probs)
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} outside 0..{probs.shape[0] - 1}")
    p_l = probs[label]
    return -np.log(p_l if p_l > _LOG_FLOOR else probs.dtype.type(_LOG_FLOOR))


def sample_loss(tape, label):
    """Loss the training objective assigns this sample: final-step by
    default, summed over steps in cumulative mode."""
    if tape.probs_seq is not None:
        return sum(loss(tape.probs_seq[t], label) for t in range(tape.probs_seq.shape[0]))
    return loss(tape.probs, label)


def predict(probs):
    """Argmax class; ties resolve to the lowest index."""
    return int(np.argmax(probs))


def _head_cotangent(z, probs, label, linear):
    dz = probs.copy()
    dz[label] -= 1.0
    return dz if linear else dz * (1.0 - z * z)


def _single_head_backward(params, config, tape, label, top_h, grads):
    """Head gradients plus the cotangent sequence for the top-level hidden."""
    n = tape.n_steps
    head = params.heads[0]
    hg = grads.heads[0]
    dh_seq = np.zeros((n, top_h.shape[1]))
    if config.cumulative_loss:
        for t in range(n):
            da = _head_cotangent(tape.z_seq[t], tape.probs_seq[t], label, config.linear_logits)
            hg.W += da[:, None] * top_h[t]
            hg.b += da
            dh_seq[t] += head.W.T @ da
    else:
        da = _head_cotangent(tape.z, tape.probs, label, config.linear_logits)
        hg.W += da[:, None] * top_h[n - 1]
        hg.b += da
        dh_seq[n - 1] += head.W.T @ da
    return dh_seq


def _sp_layer_backward(params, config, tape, dH, grads):
    """Backward through optional projection and the per-person LSTMs.

    dH is the cotangent of the (possibly projected) slot inputs (p, n, d).
    Absent slots carry exact zeros and are skipped.
    """
    for s in range(config.p):
        if not tape.present[s]:
            continue
        if config.has_proj:
            u = tape.U[s]
            da = dH[s] * (1.0 - u * u)
            grads.proj_W += da.T @ tape.sp_tapes[s].h
            grads.proj_b += da.sum(axis=0)
            dh_sp = da @ params.proj_W
        else:
            dh_sp = dH[s]
        g, _ = lstm.backward_seq(_sp_params(params, config, s), tape.sp_tapes[s], dh_sp)
        gs = grads.sp[0] if config.share_sp_params else grads.sp[s]
        gs.W_x += g.W_x
        gs.W_h += g.W_h
        gs.b += g.b


def backward(params, config, tape, label):
    """Exact gradient of the sample loss w.r.t. every tensor in ``params``."""
    grads = params.zeros_like()
    v = config.variant
    n = tape.n_steps

    if v == "b1":
        da = _head_cotangent(tape.z, tape.probs, label, linear=True)
        grads.heads[0].W += da[:, None] * tape.b1_xbar
        grads.heads[0].b += da
        return grads

    if v == "b3":
        idx = tape.present_idx
        P = len(idx)
        dH = np.zeros((config.p, n, config.d_sp))
        if config.cumulative_loss:
            cols = list(range(n))
            probs_by_col = tape.probs_seq
            slot_z = tape.slot_z_seq
            slot_probs = tape.slot_probs_seq
        else:
            cols = [0]
            probs_by_col = tape.probs[None]
            slot_z = tape.slot_z[:, None]
            slot_probs = tape.slot_probs[:, None]
        for col in cols:
            t = col if config.cumulative_loss else n - 1
            ybar = probs_by_col[col]
            dupstream = -1.0 / max(ybar[label], _LOG_FLOOR) / P
            for s in idx:
                y_s = slot_probs[s, col]
                # softmax vector-Jacobian product with cotangent
                # dupstream * e_label on this branch's probabilities
                dy = np.zeros(config.k)
                dy[label] = dupstream
                dz = y_s * (dy - np.dot(dy, y_s))
                z_s = slot_z[s, col]
                da = dz if config.linear_logits else dz * (1.0 - z_s * z_s)
                hi = 0 if config.share_sp_params else s
                grads.heads[hi].W += da[:, None] * tape.sp_tapes[s].h[t]
                grads.heads[hi].b += da
                dH[s, t] += params.heads[hi].W.T @ da
        _sp_layer_backward(params, config, tape, dH, grads)
        return grads

    if v == "hlstcm":
        co_tape = tape.co_tapes[0]
        dh_seq = _single_head_backward(params, config, tape, label, co_tape.h, grads)
        co_g, dU = colstm.backward_seq(params.co[0], co_tape, dh_seq)
        _accumulate_co(grads.co[0], co_g)
        _sp_layer_backward(params, config, tape, dU, grads)
        return grads

    # Remaining variants classify from the top LSTM.
    dh_top = _single_head_backward(params, config, tape, label, tape.top_tape.h, grads)
    top_g, dx_top = lstm.backward_seq(params.top, tape.top_tape, dh_top)
    grads.top.W_x += top_g.W_x
    grads.top.W_h += top_g.W_h
    grads.top.b += top_g.b

    if v == "b2":
        return grads  # input gradients are not propagated further

    if v == "two-group":
        d = config.d_co
        dU = np.zeros((config.p, n, config.co_input_dim))
        for u, group in enumerate((config.group_a, config.group_b)):
            dh_group = dx_top[:, u * d:(u + 1) * d]
            co_g, dU_g = colstm.backward_seq(params.co[u], tape.co_tapes[u], dh_group)
            _accumulate_co(grads.co[u], co_g)
            for j, s in enumerate(group):
                dU[s] = dU_g[j]
        _sp_layer_backward(params, config, tape, dU, grads)
        return grads

    if v == "b4":
        dH = np.zeros((config.p, n, config.d_sp))
        for pos, s in enumerate(tape.present_idx):
            dH[s] = np.where(tape.pool_pos == pos, dx_top, 0.0)
        _sp_layer_backward(params, config, tape, dH, grads)
        return grads

    raise ValueError(v)  # pragma: no cover


def _accumulate_co(dst, src):
    for ds, ss in zip(dst.slots, src.slots):
        ds.W_in += ss.W_in
        ds.W_rec += ss.W_rec
        ds.b += ss.b
    dst.W_pi_h += src.W_pi_h
    dst.b_pi += src.b_pi
    dst.W_oh += src.W_oh
    dst.b_o += src.b_o
