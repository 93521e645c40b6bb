"""Finite-difference gradient verification.

The analytic gradients in this package are hand-derived, so the independent
oracle is central differencing in float64. Errors are reported per parameter
group as norm-relative: max|a - n| / max(1e-12, max|n|). Elementwise ratios
would be meaningless for entries whose true gradient is ~0.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from recdcl import model
from recdcl.corpus import Batch, InteractionTable
from recdcl.graph import build
from recdcl.losses import (
    KernelParams,
    LossTerm,
    bcl_loss,
    bpr_loss,
    cross_correlation,
    cross_correlation_vjp,
    dcl_loss,
    directau_loss,
    total_loss,
    uibt_loss,
    uuii_loss,
)

DEFAULT_STEP = 1e-5
PASS_TOL = 1e-5


def numerical_grad(
    f: Callable[[], float], arrays: dict[str, np.ndarray], h: float = DEFAULT_STEP
) -> dict[str, np.ndarray]:
    """Central differences of f() wrt every entry of every array, in place."""
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f()
            flat[idx] = orig - h
            fm = f()
            flat[idx] = orig
            gflat[idx] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def rel_error(
    analytic: np.ndarray, numeric: np.ndarray, scale: float | None = None
) -> float:
    """max|a - n| over max(1e-12, scale).

    Default scale is the larger of the two gradients' max magnitudes. For a
    parameter group whose true gradient is identically zero (the projector
    bias under batch standardization, say) that default compares finite-
    difference noise against itself, so multi-group checks pass the whole
    objective's gradient scale in explicitly.
    """
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    if scale is None:
        scale = max(
            float(np.max(np.abs(numeric))) if numeric.size else 0.0,
            float(np.max(np.abs(analytic))) if analytic.size else 0.0,
        )
    return diff / max(1e-12, scale)


def check_gradients(
    f: Callable[[], float],
    arrays: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    h: float = DEFAULT_STEP,
) -> dict[str, float]:
    """Per-group errors, all relative to the objective's overall gradient scale."""
    numeric = numerical_grad(f, arrays, h)
    scale = 0.0
    for name in arrays:
        if numeric[name].size:
            scale = max(scale, float(np.max(np.abs(numeric[name]))))
            scale = max(scale, float(np.max(np.abs(analytic[name]))))
    return {
        name: rel_error(analytic[name], numeric[name], scale) for name in arrays
    }


# ---------------------------------------------------------------------------
# the composed suite: every objective through the full encoder


def _tiny_setting(seed: int):
    """3 users + 4 items (7 nodes), F=5, L=2, batch of 4 with a repeated user."""
    users = np.array([0, 0, 1, 1, 2, 2], dtype=np.int64)
    items = np.array([0, 1, 1, 2, 2, 3], dtype=np.int64)
    table = InteractionTable(
        user_count=3, item_count=4, users=users, items=items,
        split=np.zeros(6, dtype=np.int8),
        user_tokens=[f"u{i}" for i in range(3)],
        item_tokens=[f"i{i}" for i in range(4)],
    )
    graph = build(table)
    state = model.init(3, 4, dim=5, n_layers=2, seed=seed)
    # Freshly initialized biases are zero, which leaves some ReLU rows dead
    # and the matching predictor rows at exactly zero norm. The cosine term
    # is non-differentiable there and central differences blow up, so jitter
    # the biases to land the check on a smooth point.
    rng = np.random.default_rng([seed, 8, 1])
    for b in (state.bp, state.b1, state.b2):
        b[:] = 0.3 * rng.standard_normal(b.shape)
    batch = Batch(users=np.array([0, 1, 2, 0]), items=np.array([1, 2, 3, 0]))
    return graph, state, batch


_GAMMA = 0.7
_GAMMA_AU = 0.8
_LAMBDA = 1.3
_ALPHA = 0.2
_BETA = 5.0
_TAU = 0.4
_KERNEL = KernelParams()


def _loss_and_grads(name: str, state, graph, batch, frozen: dict):
    """Evaluate one composed objective; returns (value, param grads or None)."""
    cache = model.forward(state, graph, batch)
    if name == "uibt":
        c = cross_correlation(cache.Zu, cache.Zi)
        value, d_c = uibt_loss(c, _GAMMA)
        d_zu, d_zi = cross_correlation_vjp(cache.Zu, cache.Zi, d_c)
        return value, model.backward(state, cache, grad_Zu=d_zu, grad_Zi=d_zi)
    if name == "uuii":
        value, d_zu, d_zi = uuii_loss(cache.Zu, cache.Zi, _KERNEL)
        return value, model.backward(state, cache, grad_Zu=d_zu, grad_Zi=d_zi)
    if name == "bcl":
        value, d_pu, d_pi = bcl_loss(cache.Pu, cache.Pi, frozen["tu"], frozen["ti"])
        return value, model.backward(state, cache, grad_Pu=d_pu, grad_Pi=d_pi)
    if name == "directau":
        value, d_xu, d_xi = directau_loss(cache.EU, cache.EI, _GAMMA_AU)
        return value, model.backward(state, cache, grad_EU=d_xu, grad_EI=d_xi)
    if name == "dcl":
        c = cross_correlation(cache.Zu, cache.Zi)
        value, g = dcl_loss(cache.EU, cache.EI, c, _GAMMA_AU, _LAMBDA)
        d_zu, d_zi = cross_correlation_vjp(cache.Zu, cache.Zi, g["C"])
        return value, model.backward(
            state, cache, grad_EU=g["xu"], grad_EI=g["xi"], grad_Zu=d_zu, grad_Zi=d_zi
        )
    if name == "bpr":
        rows_n = frozen["neg_items"] + state.n_users
        en = cache.E[rows_n]
        pos = np.einsum("ij,ij->i", cache.EU_raw, cache.EI_raw)
        neg = np.einsum("ij,ij->i", cache.EU_raw, en)
        value, d_pos, d_neg = bpr_loss(pos, neg)
        d_eu = d_pos[:, None] * cache.EI_raw + d_neg[:, None] * en
        d_ei = d_pos[:, None] * cache.EU_raw
        d_en = d_neg[:, None] * cache.EU_raw
        return value, model.backward(
            state, cache,
            raw_grads=[(cache.rows_u, d_eu), (cache.rows_i, d_ei), (rows_n, d_en)],
        )
    if name == "total":
        c = cross_correlation(cache.Zu, cache.Zi)
        uibt_v, d_c = uibt_loss(c, _GAMMA)
        d_zu1, d_zi1 = cross_correlation_vjp(cache.Zu, cache.Zi, d_c)
        uuii_v, d_zu2, d_zi2 = uuii_loss(cache.Zu, cache.Zi, _KERNEL)
        bcl_v, d_pu, d_pi = bcl_loss(cache.Pu, cache.Pi, frozen["tu"], frozen["ti"])
        report = total_loss(
            LossTerm(uibt_v, {"Zu": d_zu1, "Zi": d_zi1}),
            LossTerm(uuii_v, {"Zu": d_zu2, "Zi": d_zi2}),
            LossTerm(bcl_v, {"Pu": d_pu, "Pi": d_pi}),
            _ALPHA, _BETA,
        )
        return report.total, model.backward(
            state, cache,
            grad_Zu=report.grads["Zu"], grad_Zi=report.grads["Zi"],
            grad_Pu=report.grads["Pu"], grad_Pi=report.grads["Pi"],
        )
    raise ValueError(f"unknown composition {name!r}")


SUITE = ("uibt", "uuii", "bcl", "directau", "dcl", "bpr", "total")


def run_suite(seed: int = 0, h: float = DEFAULT_STEP) -> dict[str, dict]:
    """Check every composed objective against central differences.

    Returns {composition: {"max_rel_error": float, "per_group": {...}}}.
    Target-view inputs of the batch-wise loss are frozen at the base point,
    mirroring the stop-gradient semantics the analytic path implements.
    """
    graph, state, batch = _tiny_setting(seed)

    base_cache = model.forward(state, graph, batch)
    hist = model.new_historical(state)
    rng = np.random.default_rng([seed, 8])
    hist.values = rng.standard_normal(hist.values.shape)
    hist.initialized = True
    tu, ti = model.mix_historical(base_cache, hist, _TAU)
    neg_items = np.array([2, 3, 0, 3], dtype=np.int64)
    frozen = {"tu": tu, "ti": ti, "neg_items": neg_items}

    results = {}
    params = state.params()
    for name in SUITE:
        _, analytic = _loss_and_grads(name, state, graph, batch, frozen)
        value_fn = lambda: _loss_and_grads(name, state, graph, batch, frozen)[0]
        per_group = check_gradients(value_fn, params, analytic, h)
        results[name] = {
            "max_rel_error": max(per_group.values()),
            "per_group": per_group,
        }
    return results
