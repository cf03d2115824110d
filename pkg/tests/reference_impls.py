"""Scalar reference implementations of every optimizer update rule.

These are deliberately naive: plain Python floats, explicit loops over index
tuples, no numpy. They exist so the vectorized library code can be checked
against an independent second route. Keep them stupid and readable; do not
"optimize" them to share code with the library.

Tensors are represented as ``dict[index_tuple, float]`` plus a shape tuple.
Slot variables at reduced shape are ``dict[slot_tuple, float]`` where the
slot tuple zeroes out every reduced axis.
"""

import itertools
import math


def indices(shape):
    return list(itertools.product(*(range(n) for n in shape)))


def slot_of(idx, reduced):
    return tuple(0 if r else i for i, r in zip(idx, reduced))


def slot_indices(shape, reduced):
    return sorted({slot_of(i, reduced) for i in indices(shape)})


def slice_members(shape, reduced, slot):
    return [i for i in indices(shape) if slot_of(i, reduced) == slot]


def slice_quadratic_mean(x, shape, reduced, slot):
    """Quadratic mean of one collapsed slice.

    With no reduced axes at all the operation is the identity (the signed
    entry comes back), matching the library contract for an all-false mask.
    """
    if not any(reduced):
        return x[slot]
    members = slice_members(shape, reduced, slot)
    return math.sqrt(sum(x[i] * x[i] for i in members) / len(members))


def full_quadratic_mean(x, shape):
    n = len(indices(shape))
    return math.sqrt(sum(v * v for v in x.values()) / n)


def warmup_factor(t, warmup_steps):
    return min(1.0, (t + 1) / max(1, warmup_steps))


def ref_amos_step(
    theta,
    g,
    shape,
    reduced,
    v,
    b,
    m,
    *,
    xi,
    eta,
    beta,
    t,
    mu=None,
    chi=None,
    warmup_steps=0,
    c_const=None,
    d_const=None,
    guard=1e-30,
):
    """One Amos update for a single variable, element by element.

    Returns (delta, v_new, b_new, m_new); ``m`` and ``m_new`` are None when
    momentum is off.
    """
    p = c_const if c_const is not None else 0.25 * math.sqrt(xi)
    q = d_const if d_const is not None else 0.25 * math.sqrt(xi * eta)
    xi_t = xi * warmup_factor(t, warmup_steps)
    bias = 1.0 - beta ** (t + 1)

    if chi is not None:
        g = {i: gi * (chi / max(chi, abs(gi))) for i, gi in g.items()}

    slots = slot_indices(shape, reduced)
    m2g = {s: slice_quadratic_mean(g, shape, reduced, s) for s in slots}

    v_new, b_new, c, d, gamma = {}, {}, {}, {}, {}
    for s in slots:
        v_new[s] = beta * v[s] + (1.0 - beta) * m2g[s] ** 2
        v_hat = v_new[s] / bias
        c[s] = (1.0 + p * b[s]) ** -0.5
        d[s] = (1.0 + q * b[s]) ** -1.0
        denom = max(math.sqrt(v_hat), guard)
        if m2g[s] != 0.0:
            r = m2g[s] / denom
            gamma[s] = c[s] * (xi_t * xi_t) * (r * r)
        else:
            gamma[s] = 0.0
        b_new[s] = b[s] + gamma[s] * (1.0 + b[s])

    delta = {}
    for i in indices(shape):
        s = slot_of(i, reduced)
        v_hat = v_new[s] / bias
        denom = max(math.sqrt(v_hat), guard)
        delta[i] = d[s] * (xi_t * eta * (g[i] / denom) + 0.5 * gamma[s] * theta[i])

    m_new = None
    if m is not None:
        m_new = {i: mu * m[i] + (1.0 - mu) * delta[i] for i in indices(shape)}
        delta = dict(m_new)
    return delta, v_new, b_new, m_new


def ref_adamw_alpha(t, *, alpha, warmup_steps, max_steps, schedule="linear", rsqrt_ref_step=None):
    ramp = warmup_factor(t, warmup_steps)
    if schedule == "constant":
        return alpha * ramp
    if schedule == "rsqrt":
        ref = rsqrt_ref_step
        if t <= ref:
            return alpha * ramp
        return alpha * math.sqrt(ref / t)
    decay = max(0.0, (max_steps - t) / (max_steps - warmup_steps))
    return alpha * min(ramp, decay)


def ref_adamw_step(
    theta,
    g,
    shape,
    m,
    v,
    *,
    alpha,
    beta1,
    beta2,
    eps,
    weight_decay,
    t,
    warmup_steps=0,
    max_steps=None,
    schedule="constant",
    rsqrt_ref_step=None,
):
    a_t = ref_adamw_alpha(
        t,
        alpha=alpha,
        warmup_steps=warmup_steps,
        max_steps=max_steps,
        schedule=schedule,
        rsqrt_ref_step=rsqrt_ref_step,
    )
    bc1 = 1.0 - beta1 ** (t + 1)
    bc2 = 1.0 - beta2 ** (t + 1)
    delta, m_new, v_new = {}, {}, {}
    for i in indices(shape):
        m_new[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v_new[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m_hat = m_new[i] / bc1
        v_hat = v_new[i] / bc2
        delta[i] = a_t * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * theta[i])
    return delta, m_new, v_new


def ref_sgd_step(theta, g, shape, *, alpha, lam, t):
    a_t = alpha / (1.0 + alpha * lam * t)
    return {i: a_t * (g[i] + lam * theta[i]) for i in indices(shape)}


def ref_adagrad_step(theta, g, shape, accum, *, alpha, eps):
    delta, accum_new = {}, {}
    for i in indices(shape):
        accum_new[i] = accum[i] + g[i] * g[i]
        delta[i] = alpha * g[i] / (math.sqrt(accum_new[i]) + eps)
    return delta, accum_new


def to_dict(arr):
    """numpy array -> {index: float} (test-side adapter, not part of the oracle)."""
    out = {}
    for i in indices(arr.shape):
        out[i] = float(arr[i])
    return out


def slots_to_dict(arr, shape, reduced):
    out = {}
    for s in slot_indices(shape, reduced):
        out[s] = float(arr[s])
    return out
