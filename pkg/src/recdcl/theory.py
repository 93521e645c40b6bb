"""Numerical companions to the batch-wise/feature-wise objective analysis.

Everything here is a pure function over small dense matrices: the InfoNCE
batch objective and its quadratic surrogate, the feature-wise objective, the
constant-gap identity linking the two, the push-away geometry on the unit
circle with its rotation (non-)invariances, and the embedding-entropy
measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TheoryError(ValueError):
    """Domain violation (zero-norm column, bad K, malformed input)."""


# ---------------------------------------------------------------------------
# objectives


def standardize_columns(z: np.ndarray) -> np.ndarray:
    """Exact per-column zero mean, unit (biased) std. Constant columns error."""
    z = np.asarray(z, dtype=np.float64)
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    if np.any(sd == 0):
        raise TheoryError("constant column cannot be standardized")
    return (z - mu) / sd


@dataclass
class ObjectivePair:
    """A (Z, Zhat) matrix pair, optionally declared column-standardized."""

    Z: np.ndarray
    Zhat: np.ndarray
    standardized: bool = False

    def validate(self, tol: float = 1e-10) -> "ObjectivePair":
        if self.Z.shape != self.Zhat.shape:
            raise TheoryError("Z and Zhat must share a shape")
        if self.standardized:
            for m in (self.Z, self.Zhat):
                if np.abs(m.mean(axis=0)).max() > tol or np.abs(m.std(axis=0) - 1).max() > tol:
                    raise TheoryError("matrix declared standardized is not")
        return self


def infonce_bcl(z: np.ndarray, zhat: np.ndarray) -> float:
    """sum_i [ -z_i . zhat_i + log sum_j exp(z_i . zhat_j) ]."""
    z = np.asarray(z, dtype=np.float64)
    zhat = np.asarray(zhat, dtype=np.float64)
    logits = z @ zhat.T
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    return float((lse - np.diagonal(logits)).sum())


def bcl_surrogate(z: np.ndarray, zhat: np.ndarray) -> float:
    """Quadratic batch-wise surrogate, elementwise form:
    sum_i (1 - z_i.zhat_i)^2 + sum_{j != i} (z_i.zhat_j)^2."""
    g = np.asarray(z, dtype=np.float64) @ np.asarray(zhat, dtype=np.float64).T
    diag = np.diagonal(g)
    off = g.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sum((1.0 - diag) ** 2) + np.sum(off**2))


def bcl_surrogate_frobenius(z: np.ndarray, zhat: np.ndarray) -> float:
    """Same objective as ||I - Z Zhat^T||_F^2 (cross-check form)."""
    g = np.asarray(z, dtype=np.float64) @ np.asarray(zhat, dtype=np.float64).T
    return float(np.sum((np.eye(g.shape[0]) - g) ** 2))


def fcl_objective(z: np.ndarray, zhat: np.ndarray, lam: float = 1.0) -> float:
    """Feature-wise objective over the column-cosine matrix
    C_mn = <Z_:,m, Zhat_:,n> / (||Z_:,m|| ||Zhat_:,n||):
    sum_m (1 - C_mm)^2 + lam * sum_{m != n} C_mn^2."""
    z = np.asarray(z, dtype=np.float64)
    zhat = np.asarray(zhat, dtype=np.float64)
    nz = np.linalg.norm(z, axis=0)
    nh = np.linalg.norm(zhat, axis=0)
    if np.any(nz == 0) or np.any(nh == 0):
        raise TheoryError("zero-norm column in cosine normalization")
    c = (z.T @ zhat) / np.outer(nz, nh)
    diag = np.diagonal(c)
    off = c.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sum((1.0 - diag) ** 2) + lam * np.sum(off**2))


def fcl_objective_frobenius(z: np.ndarray, zhat: np.ndarray) -> float:
    """||I - Z^T Zhat||_F^2; matches fcl_objective at lam=1 with unit columns."""
    c = np.asarray(z, dtype=np.float64).T @ np.asarray(zhat, dtype=np.float64)
    return float(np.sum((np.eye(c.shape[0]) - c) ** 2))


def observation1_gap(
    z: np.ndarray, zhat: np.ndarray | None = None, scale: float | None = None
) -> float:
    """|batch-wise trace form - feature-wise trace form - (N - D)|.

    With columns scaled to unit norm the two trace forms
    N + Tr(Zh Z^T Z Zh^T) - 2 Tr(Zh Z^T) and D + Tr(Zh^T Z Z^T Zh) - 2 Tr(Zh^T Z)
    differ exactly by N - D when Zhat = Z. By default each column is divided
    by its own norm; an explicit `scale` multiplies both matrices instead.
    """
    z = np.asarray(z, dtype=np.float64)
    zhat = z if zhat is None else np.asarray(zhat, dtype=np.float64)
    n, d = z.shape
    if scale is None:
        nz = np.linalg.norm(z, axis=0)
        nh = np.linalg.norm(zhat, axis=0)
        if np.any(nz == 0) or np.any(nh == 0):
            raise TheoryError("zero-norm column cannot be unit-scaled")
        zs = z / nz
        hs = zhat / nh
    else:
        zs = z * scale
        hs = zhat * scale
    g_batch = zs @ hs.T
    g_feat = zs.T @ hs
    batch_side = n + float(np.sum(g_batch**2)) - 2.0 * float(np.trace(g_batch))
    feat_side = d + float(np.sum(g_feat**2)) - 2.0 * float(np.trace(g_feat))
    return abs(batch_side - feat_side - (n - d))


# ---------------------------------------------------------------------------
# push-away geometry


def push_away_objectives(z: np.ndarray) -> tuple[float, float]:
    """(f_B, f_F) for unit-row Z: total off-diagonal mass of Z Z^T, and the
    squared off-diagonal Frobenius mass of Z^T Z."""
    z = np.asarray(z, dtype=np.float64)
    zzt = z @ z.T
    f_b = float(zzt.sum() - np.trace(zzt))
    ztz = z.T @ z
    off = ztz.copy()
    np.fill_diagonal(off, 0.0)
    f_f = float(np.sum(off**2))
    return f_b, f_f


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix via QR of a Gaussian draw."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diagonal(r))


def rotation_invariance_check(z: np.ndarray, trials: int = 100, seed: int = 0) -> dict:
    """f_B under right rotations and f_F under left rotations stay fixed; the
    sum f_B + f_F does not, and a concrete 45-degree counterexample is
    reported alongside the Monte-Carlo deviations."""
    z = np.asarray(z, dtype=np.float64)
    n, d = z.shape
    rng = np.random.default_rng([seed, 6])
    f_b0, f_f0 = push_away_objectives(z)
    max_db = 0.0
    max_df = 0.0
    max_dsum = 0.0
    for _ in range(trials):
        r_b = random_rotation(d, rng)
        r_f = random_rotation(n, rng)
        f_b1, f_f1 = push_away_objectives(z @ r_b)
        f_b2, f_f2 = push_away_objectives(r_f @ z)
        max_db = max(max_db, abs(f_b1 - f_b0))
        max_df = max(max_df, abs(f_f2 - f_f0))
        max_dsum = max(
            max_dsum, abs((f_b1 + f_f1) - (f_b0 + f_f0)), abs((f_b2 + f_f2) - (f_b0 + f_f0))
        )

    # axis-aligned antipodal pair, rotated 45 degrees: f_B stays -2 while
    # f_F jumps from 0 to 2, so the sum moves by 2
    pair = np.array([[1.0, 0.0], [-1.0, 0.0]])
    theta = np.pi / 4
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    before = push_away_objectives(pair)
    after = push_away_objectives(pair @ rot)
    return {
        "trials": trials,
        "max_delta_f_b_right": max_db,
        "max_delta_f_f_left": max_df,
        "max_delta_sum_observed": max_dsum,
        "counterexample": {
            "z": pair.tolist(),
            "rotation_degrees": 45.0,
            "sum_before": before[0] + before[1],
            "sum_after": after[0] + after[1],
            "delta": abs((after[0] + after[1]) - (before[0] + before[1])),
        },
    }


ANGLE_TOL = 1e-3     # radians, antipodal / axis alignment
OFFDIAG_TOL = 1e-3   # absolute, off-diagonal mass of Z^T Z


@dataclass
class ToyResult:
    z1: np.ndarray
    z2: np.ndarray
    label: str
    flags: dict[str, bool]
    objective: str
    seed: int


def _toy_gradient(objective: str, z1: np.ndarray, z2: np.ndarray):
    t = z1[0] * z1[1] + z2[0] * z2[1]  # the off-diagonal entry of Z^T Z
    g1 = np.zeros(2)
    g2 = np.zeros(2)
    if objective in ("bcl", "both"):
        # f_B = 2 z1.z2
        g1 += 2.0 * z2
        g2 += 2.0 * z1
    if objective in ("fcl", "both"):
        # f_F = 2 t^2
        g1 += 4.0 * t * z1[::-1]
        g2 += 4.0 * t * z2[::-1]
    return g1, g2


def toy_negative_pair_optimize(
    objective: str, seed: int, steps: int = 5000, lr: float = 0.05
) -> ToyResult:
    """Minimize the chosen push-away objective for one negative pair on the
    unit circle by projected gradient descent, then classify the endpoint.

    Labels, most specific first: axis-antipodal (both points sit on an axis
    and oppose each other), antipodal, orthogonal-offdiag (off-diagonal of
    Z^T Z vanished), undecided.
    """
    if objective not in ("bcl", "fcl", "both"):
        raise TheoryError(f"unknown toy objective {objective!r}")
    rng = np.random.default_rng([seed, 7])
    angles = rng.uniform(0.0, 2.0 * np.pi, size=2)
    z1 = np.array([np.cos(angles[0]), np.sin(angles[0])])
    z2 = np.array([np.cos(angles[1]), np.sin(angles[1])])
    for _ in range(steps):
        g1, g2 = _toy_gradient(objective, z1, z2)
        z1 = z1 - lr * g1
        z2 = z2 - lr * g2
        z1 /= np.linalg.norm(z1)
        z2 /= np.linalg.norm(z2)

    cos_tol = np.cos(ANGLE_TOL)
    antipodal = float(z1 @ z2) <= -cos_tol
    t = z1[0] * z1[1] + z2[0] * z2[1]
    offdiag_zero = abs(t) <= OFFDIAG_TOL
    on_axis = (np.max(np.abs(z1)) >= cos_tol) and (np.max(np.abs(z2)) >= cos_tol)
    axis_antipodal = antipodal and on_axis
    flags = {
        "antipodal": bool(antipodal),
        "offdiag_zero": bool(offdiag_zero),
        "axis_antipodal": bool(axis_antipodal),
    }
    if axis_antipodal:
        label = "axis-antipodal"
    elif antipodal:
        label = "antipodal"
    elif offdiag_zero:
        label = "orthogonal-offdiag"
    else:
        label = "undecided"
    return ToyResult(z1=z1, z2=z2, label=label, flags=flags,
                     objective=objective, seed=seed)


def run_toy_histogram(
    objective: str, seeds: int = 200, steps: int = 5000, lr: float = 0.05,
    base_seed: int = 0,
) -> dict:
    """Classification histogram over per-seed toy optimizations (JSON-ready)."""
    labels: dict[str, int] = {}
    flag_counts = {"antipodal": 0, "offdiag_zero": 0, "axis_antipodal": 0}
    for s in range(seeds):
        res = toy_negative_pair_optimize(objective, base_seed + s, steps, lr)
        labels[res.label] = labels.get(res.label, 0) + 1
        for key in flag_counts:
            flag_counts[key] += int(res.flags[key])
    return {
        "objective": objective,
        "seeds": seeds,
        "steps": steps,
        "lr": lr,
        "classification": dict(sorted(labels.items())),
        "flag_counts": flag_counts,
        "tolerances": {"angle_rad": ANGLE_TOL, "offdiag": OFFDIAG_TOL},
    }


# ---------------------------------------------------------------------------
# embedding entropy


@dataclass
class EntropyReport:
    mean_entropy: float
    zero_rows: int
    method: str
    k: int

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "K": self.k,
            "mean_entropy": self.mean_entropy,
            "zero_rows": self.zero_rows,
        }


def _row_entropies(values: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Entropy of each row's K nonnegative values normalized to probabilities.

    All-zero rows take the uniform-limit value ln K and are counted."""
    sums = values.sum(axis=1)
    zero = sums == 0
    safe = np.where(zero, 1.0, sums)
    p = values / safe[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    ent = -plogp.sum(axis=1)
    ent[zero] = np.log(k)
    return ent, int(zero.sum())


def entropy_each_sample(e: np.ndarray, k: int) -> EntropyReport:
    """Per row: top-K absolute values -> probability vector -> entropy; mean
    over rows, natural log."""
    e = np.asarray(e, dtype=np.float64)
    if not 1 <= k <= e.shape[1]:
        raise TheoryError(f"K must be in [1, {e.shape[1]}], got {k}")
    topk = np.sort(np.abs(e), axis=1)[:, -k:]
    ent, zero_rows = _row_entropies(topk, k)
    return EntropyReport(float(ent.mean()), zero_rows, "each-sample", k)


def entropy_mean_sample(e: np.ndarray, k: int) -> EntropyReport:
    """Pick the K dimensions with the largest mean absolute value, then score
    every row on exactly those columns."""
    e = np.asarray(e, dtype=np.float64)
    if not 1 <= k <= e.shape[1]:
        raise TheoryError(f"K must be in [1, {e.shape[1]}], got {k}")
    mean_abs = np.abs(e).mean(axis=0)
    dims = np.lexsort((np.arange(e.shape[1]), -mean_abs))[:k]
    vals = np.abs(e[:, dims])
    ent, zero_rows = _row_entropies(vals, k)
    return EntropyReport(float(ent.mean()), zero_rows, "mean-sample", k)
