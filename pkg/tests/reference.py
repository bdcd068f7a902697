"""Independent straight-line transcriptions of the recurrences, used as
dual-implementation oracles. These deliberately share no code with the
package: plain per-gate matrices, naive sigmoid, explicit loops.
"""

import numpy as np


def sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_step(w, x, h_prev, c_prev):
    """w: dict with W_ix..W_gh and b_i..b_g as separate arrays."""
    i = sig(w["W_ix"] @ x + w["W_ih"] @ h_prev + w["b_i"])
    f = sig(w["W_fx"] @ x + w["W_fh"] @ h_prev + w["b_f"])
    o = sig(w["W_ox"] @ x + w["W_oh"] @ h_prev + w["b_o"])
    g = np.tanh(w["W_gx"] @ x + w["W_gh"] @ h_prev + w["b_g"])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def lstm_weights(params):
    """Pull copies of the per-gate matrices out of a fused SpLstmParams."""
    return {name: np.array(getattr(params, name)) for name in (
        "W_ix", "W_ih", "b_i", "W_fx", "W_fh", "b_f",
        "W_ox", "W_oh", "b_o", "W_gx", "W_gh", "b_g")}


def lstm_seq(w, xs, d_h):
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    hs = []
    for x in xs:
        h, c = lstm_step(w, x, h, c)
        hs.append(h)
    return np.array(hs)


def colstm_weights(params):
    """Unfused copies of CoLstmParams: per-slot dicts plus the shared tensors."""
    slots = []
    for s in params.slots:
        slots.append({name: np.array(getattr(s, name)) for name in (
            "W_ix", "W_ih", "b_i", "W_fx", "W_fh", "b_f",
            "W_gx", "W_gh", "b_g", "W_pi_in", "W_ox")})
    shared = {name: np.array(getattr(params, name)) for name in (
        "W_pi_h", "b_pi", "W_oh", "b_o")}
    return slots, shared


def colstm_step(slots, shared, inputs, h_prev, c_prev, present=None, clamp=False):
    """One concurrent step; returns (h, new sub-cells, per-step record)."""
    p = len(slots)
    if present is None:
        present = [True] * p
    a_o = shared["W_oh"] @ h_prev + shared["b_o"]
    c_co = np.zeros_like(h_prev)
    cs, rec = [], []
    for s in range(p):
        w = slots[s]
        u = inputs[s]
        i = sig(w["W_ix"] @ u + w["W_ih"] @ h_prev + w["b_i"])
        f = sig(w["W_fx"] @ u + w["W_fh"] @ h_prev + w["b_f"])
        g = np.tanh(w["W_gx"] @ u + w["W_gh"] @ h_prev + w["b_g"])
        c_s = f * c_prev[s] + i * g
        pi = sig(w["W_pi_in"] @ u + shared["W_pi_h"] @ h_prev + shared["b_pi"])
        if not present[s]:
            pi = np.zeros_like(pi)
        elif clamp:
            pi = np.ones_like(pi)
        if present[s]:
            c_co = c_co + pi * c_s
            a_o = a_o + w["W_ox"] @ u
        cs.append(c_s)
        rec.append({"i": i, "f": f, "g": g, "pi": pi, "c": c_s, "u": u})
    o = sig(a_o)
    h = o * np.tanh(c_co)
    step = {"rec": rec, "o": o, "c_co": c_co, "h": h, "h_prev": h_prev,
            "c_prev": [np.array(c) for c in c_prev], "present": list(present)}
    return h, cs, step


def colstm_seq(slots, shared, input_seqs, present=None, clamp=False):
    """input_seqs: (p, T, d_in). Returns (hidden (T, d_co), step records)."""
    p, T = input_seqs.shape[0], input_seqs.shape[1]
    d = shared["b_o"].shape[0]
    h = np.zeros(d)
    c = [np.zeros(d) for _ in range(p)]
    hs, steps = [], []
    for t in range(T):
        h, c, step = colstm_step(slots, shared, input_seqs[:, t], h, c, present, clamp)
        hs.append(h)
        steps.append(step)
    return np.array(hs), steps


def colstm_backward(slots, shared, steps, dh_seq):
    """Reverse-mode through the recorded steps; plain per-gate arithmetic.

    Returns (grads dict, per-slot input grads (p, T, d_in), per-slot
    cell-gate bias contributions (p, d_co) whose sum is the shared b_pi
    gradient).
    """
    p = len(slots)
    T = len(steps)
    d = shared["b_o"].shape[0]
    g_slots = [{k: np.zeros_like(v) for k, v in w.items()} for w in slots]
    g_shared = {k: np.zeros_like(v) for k, v in shared.items()}
    b_pi_by_slot = np.zeros((p, d))
    du = np.zeros((p, T, slots[0]["W_ix"].shape[1]))
    dh_rec = np.zeros(d)
    dc_rec = [np.zeros(d) for _ in range(p)]
    for t in range(T - 1, -1, -1):
        st = steps[t]
        o, c_co, h_prev = st["o"], st["c_co"], st["h_prev"]
        tc = np.tanh(c_co)
        dh = dh_seq[t] + dh_rec
        do = dh * tc
        da_o = do * o * (1 - o)
        dc_co = dh * o * (1 - tc * tc)
        g_shared["b_o"] += da_o
        g_shared["W_oh"] += np.outer(da_o, h_prev)
        dh_prev = shared["W_oh"].T @ da_o
        for s in range(p):
            r = st["rec"][s]
            w = slots[s]
            gs = g_slots[s]
            i, f, g, pi, c_s, u = r["i"], r["f"], r["g"], r["pi"], r["c"], r["u"]
            present = st["present"][s]
            da_pi = (dc_co * c_s) * pi * (1 - pi)
            dc_s = dc_rec[s] + dc_co * pi
            di = (dc_s * g) * i * (1 - i)
            df = (dc_s * st["c_prev"][s]) * f * (1 - f)
            dg = (dc_s * i) * (1 - g * g)
            gs["b_i"] += di
            gs["b_f"] += df
            gs["b_g"] += dg
            gs["W_ix"] += np.outer(di, u)
            gs["W_fx"] += np.outer(df, u)
            gs["W_gx"] += np.outer(dg, u)
            gs["W_ih"] += np.outer(di, h_prev)
            gs["W_fh"] += np.outer(df, h_prev)
            gs["W_gh"] += np.outer(dg, h_prev)
            gs["W_pi_in"] += np.outer(da_pi, u)
            g_shared["b_pi"] += da_pi
            g_shared["W_pi_h"] += np.outer(da_pi, h_prev)
            b_pi_by_slot[s] += da_pi
            du_s = (w["W_ix"].T @ di + w["W_fx"].T @ df + w["W_gx"].T @ dg
                    + w["W_pi_in"].T @ da_pi)
            if present:
                gs["W_ox"] += np.outer(da_o, u)
                du_s = du_s + w["W_ox"].T @ da_o
            du[s, t] = du_s
            dh_prev = dh_prev + (w["W_ih"].T @ di + w["W_fh"].T @ df
                                 + w["W_gh"].T @ dg + shared["W_pi_h"].T @ da_pi)
            dc_rec[s] = dc_s * f
        dh_rec = dh_prev
    return {"slots": g_slots, "shared": g_shared}, du, b_pi_by_slot


def model_forward_hlstcm(params, config, features):
    """End-to-end transcription for the hierarchical variant (all present)."""
    p = config.p
    sp_h = []
    for s in range(p):
        spp = params.sp[0] if config.share_sp_params else params.sp[s]
        sp_h.append(lstm_seq(lstm_weights(spp), features[s], config.d_sp))
    if config.d_proj > 0:
        u = np.stack([np.tanh(h @ params.proj_W.T + params.proj_b) for h in sp_h])
    else:
        u = np.stack(sp_h)
    slots, shared = colstm_weights(params.co[0])
    hs, _ = colstm_seq(slots, shared, u)
    z = params.heads[0].W @ hs[-1] + params.heads[0].b
    if not config.linear_logits:
        z = np.tanh(z)
    e = np.exp(z - z.max())
    return e / e.sum()
