"""Training objectives with analytic gradients.

Every op returns its scalar value together with gradients for the inputs it
differentiates, in 8-byte floats. Target-view inputs of the batch-wise loss
never get gradients returned: stop-gradient is structural here, not a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class LossError(ValueError):
    """Invalid loss input (shape, batch size, or kernel domain)."""


@dataclass(frozen=True)
class KernelParams:
    """Polynomial kernel (a*g + c)^e for the feature-wise uniformity loss."""

    a: float = 1.0
    c: float = 1e-7
    e: int = 4

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0 and self.e >= 1):
            raise LossError(f"kernel needs a > 0, c > 0, e >= 1, got {self}")


@dataclass
class LossTerm:
    """One objective component: scalar value + gradients keyed by input name."""

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class LossReport:
    """Composed training objective with merged gradients."""

    uibt: float
    uuii: float
    bcl: float
    total: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def _as2d(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise LossError(f"{name} must be 2-d, got shape {x.shape}")
    return x


def cross_correlation(zu: np.ndarray, zi: np.ndarray) -> np.ndarray:
    """C = Zu^T Zi / B over column-standardized batch embeddings."""
    zu = _as2d(zu, "zu")
    zi = _as2d(zi, "zi")
    if zu.shape != zi.shape:
        raise LossError(f"shape mismatch {zu.shape} vs {zi.shape}")
    if zu.shape[0] < 2:
        raise LossError("cross correlation needs batch size >= 2")
    return (zu.T @ zi) / zu.shape[0]


def cross_correlation_vjp(
    zu: np.ndarray, zi: np.ndarray, d_c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient on C back to (Zu, Zi)."""
    b = zu.shape[0]
    return (zi @ d_c.T) / b, (zu @ d_c) / b


def uibt_loss(c: np.ndarray, gamma: float) -> tuple[float, np.ndarray]:
    """Cross-correlation-to-identity loss: diagonal pulled to 1, off-diagonal to 0.

    loss = (1/F) sum_m (1 - C_mm)^2 + (gamma/F) sum_{m != n} C_mn^2
    """
    c = _as2d(c, "C")
    f = c.shape[0]
    if c.shape[1] != f:
        raise LossError(f"C must be square, got {c.shape}")
    diag = np.diagonal(c)
    off = c - np.diag(diag)
    value = float(np.sum((1.0 - diag) ** 2) / f + gamma * np.sum(off**2) / f)
    d_c = (2.0 * gamma / f) * off
    np.fill_diagonal(d_c, -2.0 * (1.0 - diag) / f)
    return value, d_c


def _uuii_side(
    z: np.ndarray, params: KernelParams, include_diagonal: bool
) -> tuple[float, np.ndarray]:
    f = z.shape[1]
    gram = z.T @ z
    p = params.a * gram + params.c
    powed = p**params.e
    if include_diagonal:
        count = f * f
        total = float(powed.sum())
    else:
        # summing then subtracting the trace would cancel catastrophically
        # when off-diagonal terms are tiny (c^e) against O(1) diagonals
        count = f * (f - 1)
        masked = powed.copy()
        np.fill_diagonal(masked, 0.0)
        total = float(masked.sum())
    s = total / count
    if s <= 0:
        raise LossError(f"kernel mean {s} not positive, log undefined")
    value = 0.5 * float(np.log(s))
    d_gram = (0.5 / s) * params.e * params.a * p ** (params.e - 1) / count
    if not include_diagonal:
        np.fill_diagonal(d_gram, 0.0)
    d_z = z @ (d_gram + d_gram.T)
    return value, d_z


def uuii_loss(
    zu: np.ndarray,
    zi: np.ndarray,
    params: KernelParams = KernelParams(),
    include_diagonal: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Feature-wise uniformity: polynomial-kernel log-mean over column inner
    products, computed within users and within items and summed.

    The default index set excludes the Gram diagonal; include_diagonal=True
    averages over all F^2 entries instead.
    """
    zu = _as2d(zu, "zu")
    zi = _as2d(zi, "zi")
    if zu.shape[0] < 2 or zi.shape[0] < 2:
        raise LossError("uuii needs batch size >= 2")
    if not include_diagonal and (zu.shape[1] < 2 or zi.shape[1] < 2):
        raise LossError("uuii without diagonal needs >= 2 features")
    vu, du = _uuii_side(zu, params, include_diagonal)
    vi, di = _uuii_side(zi, params, include_diagonal)
    return vu + vi, du, di


def _neg_cosine(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative cosine over aligned rows; gradient wrt a only.

    Zero-norm rows on either side contribute 0 with zero gradient.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    na_safe = np.where(ok, na, 1.0)
    nb_safe = np.where(ok, nb, 1.0)
    dots = np.einsum("ij,ij->i", a, b)
    cos = np.where(ok, dots / (na_safe * nb_safe), 0.0)
    n = a.shape[0]
    value = -float(cos.sum()) / n
    # d(-cos)/da = -(b_hat - cos * a_hat) / ||a||
    a_hat = a / na_safe[:, None]
    b_hat = b / nb_safe[:, None]
    d_a = -(b_hat - cos[:, None] * a_hat) / na_safe[:, None] / n
    d_a[~ok] = 0.0
    return value, d_a


def bcl_loss(
    pu: np.ndarray, pi: np.ndarray, tu: np.ndarray, ti: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-wise loss: symmetric negative cosine between predictor outputs
    and fixed target views.

    tu/ti are the user/item target views; their gradients are never computed
    or returned (structural stop-gradient).
    """
    pu = _as2d(pu, "pu")
    pi = _as2d(pi, "pi")
    tu = np.asarray(tu, dtype=np.float64)
    ti = np.asarray(ti, dtype=np.float64)
    if not (pu.shape == pi.shape == tu.shape == ti.shape):
        raise LossError("bcl inputs must share one B x F shape")
    v1, d_pu = _neg_cosine(pu, ti)
    v2, d_pi = _neg_cosine(pi, tu)
    return 0.5 * v1 + 0.5 * v2, 0.5 * d_pu, 0.5 * d_pi


def _uniformity_side(x: np.ndarray) -> tuple[float, np.ndarray]:
    """log mean_{k != l} exp(-2 ||x_k - x_l||^2) over ordered pairs, with gradient."""
    b = x.shape[0]
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    w = np.exp(-2.0 * d2)
    np.fill_diagonal(w, 0.0)
    total = float(w.sum())
    value = float(np.log(total / (b * (b - 1))))
    # dU/dx_k = -(8/S) sum_{l != k} w_kl (x_k - x_l), S the ordered-pair sum
    row = w.sum(axis=1)
    d_x = -(8.0 / total) * (row[:, None] * x - w @ x)
    return value, d_x


def directau_loss(
    xu: np.ndarray, xi: np.ndarray, gamma_au: float = 1.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Alignment plus uniformity on the hypersphere.

    alignment = mean ||xu_k - xi_k||^2 over positive pairs; uniformity is the
    log-mean Gaussian-potential term averaged over the user and item sides.
    """
    xu = _as2d(xu, "xu")
    xi = _as2d(xi, "xi")
    if xu.shape != xi.shape:
        raise LossError(f"shape mismatch {xu.shape} vs {xi.shape}")
    b = xu.shape[0]
    if b < 2:
        raise LossError("uniformity needs batch size >= 2")
    diff = xu - xi
    align = float(np.sum(diff * diff)) / b
    d_xu = (2.0 / b) * diff
    d_xi = -(2.0 / b) * diff
    uu, d_uu = _uniformity_side(xu)
    ui, d_ui = _uniformity_side(xi)
    value = align + gamma_au * 0.5 * (uu + ui)
    d_xu += gamma_au * 0.5 * d_uu
    d_xi += gamma_au * 0.5 * d_ui
    return value, d_xu, d_xi


def fcl_offdiag_loss(c: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    """Redundancy-reduction term alone: lam * sum of squared off-diagonals."""
    c = _as2d(c, "C")
    off = c - np.diag(np.diagonal(c))
    value = float(lam * np.sum(off**2))
    d_c = 2.0 * lam * off
    return value, d_c


def dcl_loss(
    xu: np.ndarray,
    xi: np.ndarray,
    c: np.ndarray,
    gamma_au: float = 1.0,
    lam: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Alignment/uniformity plus the off-diagonal redundancy term on C."""
    au_val, d_xu, d_xi = directau_loss(xu, xi, gamma_au)
    fcl_val, d_c = fcl_offdiag_loss(c, lam)
    return au_val + fcl_val, {"xu": d_xu, "xi": d_xi, "C": d_c}


def bpr_loss(
    scores_pos: np.ndarray, scores_neg: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Pairwise ranking loss -sum log sigmoid(pos - neg), in stable softplus form."""
    pos = np.asarray(scores_pos, dtype=np.float64).ravel()
    neg = np.asarray(scores_neg, dtype=np.float64).ravel()
    if pos.shape != neg.shape:
        raise LossError("positive and negative score vectors must align")
    d = pos - neg
    value = float(np.logaddexp(0.0, -d).sum())
    d_pos = expit(d) - 1.0
    return value, d_pos, -d_pos


def total_loss(
    uibt: LossTerm, uuii: LossTerm, bcl: LossTerm, alpha: float, beta: float
) -> LossReport:
    """Weighted three-term objective: uibt + alpha * uuii + beta * bcl."""
    total = uibt.value + alpha * uuii.value + beta * bcl.value
    grads: dict[str, np.ndarray] = {}
    for coeff, term in ((1.0, uibt), (alpha, uuii), (beta, bcl)):
        for key, g in term.grads.items():
            if key in grads:
                grads[key] = grads[key] + coeff * g
            else:
                grads[key] = coeff * g
    return LossReport(
        uibt=float(uibt.value),
        uuii=float(uuii.value),
        bcl=float(bcl.value),
        total=float(total),
        grads=grads,
    )
