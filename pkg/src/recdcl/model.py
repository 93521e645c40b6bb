"""Trainable state, encoder forward/backward, historical cache, checkpoints.

The encoder is an L-layer linear graph convolution: layer embeddings are
averaged, rows are L2-normalized (zero rows stay zero), and batch slices feed
a projector (linear + per-feature batch standardization) and a predictor
(linear -> rectifier -> linear). All gradients are hand-derived; finite
differences are the independent check, so nothing here may call into an
autograd framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from recdcl.corpus import Batch
from recdcl.graph import BipartiteGraph, propagate, propagate_transpose

STD_EPS = 1e-9
CHECKPOINT_MAGIC = b"RDCL"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("E0", "Wp", "bp", "W1", "b1", "W2", "b2")


class ModelError(ValueError):
    """Invalid model configuration or malformed checkpoint."""


@dataclass
class ModelState:
    """All trainable parameters. Users occupy node rows [0, n_users)."""

    n_users: int
    n_items: int
    dim: int
    n_layers: int
    E0: np.ndarray  # (n_users+n_items, F)
    Wp: np.ndarray  # (F, F) projector linear
    bp: np.ndarray  # (F,)
    W1: np.ndarray  # (F, F) predictor first linear
    b1: np.ndarray  # (F,)
    W2: np.ndarray  # (F, F) predictor second linear
    b2: np.ndarray  # (F,)
    projector_identity: bool = False

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every parameter tensor, keyed by group name."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelState":
        return ModelState(
            n_users=self.n_users,
            n_items=self.n_items,
            dim=self.dim,
            n_layers=self.n_layers,
            projector_identity=self.projector_identity,
            **{name: getattr(self, name).copy() for name in PARAM_NAMES},
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(getattr(self, name)).all() for name in PARAM_NAMES)


@dataclass
class HistoricalCache:
    """Per-node final embeddings remembered from an earlier iteration.

    Before the first mix the cache is seeded with the current full embedding
    table, so the first mixed view equals the current view.
    """

    values: np.ndarray  # (n_nodes, F)
    initialized: bool = False


@dataclass
class ForwardCache:
    """Every intermediate needed to run the reverse pass."""

    graph: BipartiteGraph
    batch: Batch
    layers: list[np.ndarray]
    E: np.ndarray
    norms: np.ndarray
    Etilde: np.ndarray
    rows_u: np.ndarray  # global node ids of batch users
    rows_i: np.ndarray  # global node ids of batch items
    EU_raw: np.ndarray
    EI_raw: np.ndarray
    EU: np.ndarray  # normalized slices
    EI: np.ndarray
    Yu: np.ndarray  # projector linear outputs (or EU when identity)
    Yi: np.ndarray
    Zu: np.ndarray  # standardized projector outputs
    Zi: np.ndarray
    std_u: tuple[np.ndarray, np.ndarray]  # (sigma, sigma+eps) per feature
    std_i: tuple[np.ndarray, np.ndarray]
    A1u: np.ndarray  # predictor pre-activations
    A1i: np.ndarray
    Hu: np.ndarray
    Hi: np.ndarray
    Pu: np.ndarray  # predictor outputs
    Pi: np.ndarray


def _xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init(
    n_users: int,
    n_items: int,
    dim: int,
    n_layers: int,
    seed: int = 0,
    projector_identity: bool = False,
) -> ModelState:
    """Xavier-uniform weights, zero biases, seeded deterministically."""
    if dim < 2:
        raise ModelError("embedding dimension must be >= 2")
    if n_layers < 0:
        raise ModelError("layer count must be >= 0")
    if n_users < 1 or n_items < 1:
        raise ModelError("need at least one user and one item")
    rng = np.random.default_rng([seed, 3])
    n = n_users + n_items
    return ModelState(
        n_users=n_users,
        n_items=n_items,
        dim=dim,
        n_layers=n_layers,
        E0=_xavier_uniform((n, dim), rng),
        Wp=_xavier_uniform((dim, dim), rng),
        bp=np.zeros(dim),
        W1=_xavier_uniform((dim, dim), rng),
        b1=np.zeros(dim),
        W2=_xavier_uniform((dim, dim), rng),
        b2=np.zeros(dim),
        projector_identity=projector_identity,
    )


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit L2 rows; zero rows are left untouched. Returns (normalized, norms)."""
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms


def embed(state: ModelState, graph: BipartiteGraph) -> tuple[list[np.ndarray], np.ndarray, np.ndarray, np.ndarray]:
    """Full-table encoder: per-layer embeddings, mean E, row norms, normalized Etilde."""
    layers = [np.asarray(state.E0, dtype=np.float64)]
    for _ in range(state.n_layers):
        layers.append(propagate(graph, layers[-1]))
    e = sum(layers) / (state.n_layers + 1)
    etilde, norms = normalize_rows(e)
    return layers, e, norms, etilde


def final_embeddings(state: ModelState, graph: BipartiteGraph) -> np.ndarray:
    """Just the mean-aggregated table E (scoring uses this, unnormalized)."""
    return embed(state, graph)[1]


def _standardize(y: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    mu = y.mean(axis=0)
    sigma = np.sqrt(((y - mu) ** 2).mean(axis=0))
    s = sigma + STD_EPS
    return (y - mu) / s, (sigma, s)


def _standardize_backward(
    d_z: np.ndarray, z: np.ndarray, std: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    sigma, s = std
    sigma_safe = np.where(sigma > 0, sigma, 1.0)
    gbar = d_z.mean(axis=0)
    gz = (d_z * z).mean(axis=0)
    return (d_z - gbar) / s - z * (gz / sigma_safe)


def forward(state: ModelState, graph: BipartiteGraph, batch: Batch) -> ForwardCache:
    """Encoder + projector + predictor on one batch, caching all intermediates."""
    users = np.asarray(batch.users, dtype=np.int64)
    items = np.asarray(batch.items, dtype=np.int64)
    if len(users) and (users.min() < 0 or users.max() >= state.n_users):
        raise ModelError("batch user index out of range")
    if len(items) and (items.min() < 0 or items.max() >= state.n_items):
        raise ModelError("batch item index out of range")

    layers, e, norms, etilde = embed(state, graph)
    rows_u = users
    rows_i = items + state.n_users
    eu_raw, ei_raw = e[rows_u], e[rows_i]
    eu, ei = etilde[rows_u], etilde[rows_i]

    if state.projector_identity:
        yu, yi = eu, ei
    else:
        yu = eu @ state.Wp + state.bp
        yi = ei @ state.Wp + state.bp
    zu, std_u = _standardize(yu)
    zi, std_i = _standardize(yi)

    a1u = eu @ state.W1 + state.b1
    a1i = ei @ state.W1 + state.b1
    hu = np.maximum(a1u, 0.0)
    hi = np.maximum(a1i, 0.0)
    pu = hu @ state.W2 + state.b2
    pi = hi @ state.W2 + state.b2

    return ForwardCache(
        graph=graph, batch=batch, layers=layers, E=e, norms=norms, Etilde=etilde,
        rows_u=rows_u, rows_i=rows_i, EU_raw=eu_raw, EI_raw=ei_raw, EU=eu, EI=ei,
        Yu=yu, Yi=yi, Zu=zu, Zi=zi, std_u=std_u, std_i=std_i,
        A1u=a1u, A1i=a1i, Hu=hu, Hi=hi, Pu=pu, Pi=pi,
    )


def _normalize_backward(
    d_tilde: np.ndarray, tilde: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    """Row-wise d(x/||x||) adjoint; zero-norm rows get zero gradient."""
    safe = np.where(norms > 0, norms, 1.0)
    inner = np.einsum("ij,ij->i", tilde, d_tilde)
    out = (d_tilde - tilde * inner[:, None]) / safe[:, None]
    out[norms == 0] = 0.0
    return out


def backward(
    state: ModelState,
    cache: ForwardCache,
    grad_EU: np.ndarray | None = None,
    grad_EI: np.ndarray | None = None,
    *,
    grad_Zu: np.ndarray | None = None,
    grad_Zi: np.ndarray | None = None,
    grad_Pu: np.ndarray | None = None,
    grad_Pi: np.ndarray | None = None,
    raw_grads: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> dict[str, np.ndarray]:
    """Reverse pass from any mix of upstream gradients to parameter gradients.

    grad_EU/grad_EI sit on the normalized batch slices, grad_Zu/grad_Zi on the
    standardized projector outputs, grad_Pu/grad_Pi on the predictor outputs.
    raw_grads entries (node_rows, grad_matrix) attach to the unnormalized
    final embedding directly (ranking-loss path). Batch-slice gradients are
    scatter-added over duplicate rows.
    """
    b = len(cache.batch)
    f = state.dim
    zeros = lambda: np.zeros((b, f))
    d_eu = grad_EU.copy() if grad_EU is not None else zeros()
    d_ei = grad_EI.copy() if grad_EI is not None else zeros()
    grads = {
        "Wp": np.zeros_like(state.Wp), "bp": np.zeros_like(state.bp),
        "W1": np.zeros_like(state.W1), "b1": np.zeros_like(state.b1),
        "W2": np.zeros_like(state.W2), "b2": np.zeros_like(state.b2),
    }

    if grad_Zu is not None or grad_Zi is not None:
        for d_z, z, std, slc in (
            (grad_Zu, cache.Zu, cache.std_u, "u"),
            (grad_Zi, cache.Zi, cache.std_i, "i"),
        ):
            if d_z is None:
                continue
            d_y = _standardize_backward(d_z, z, std)
            if state.projector_identity:
                d_slice = d_y
            else:
                src = cache.EU if slc == "u" else cache.EI
                grads["Wp"] += src.T @ d_y
                grads["bp"] += d_y.sum(axis=0)
                d_slice = d_y @ state.Wp.T
            if slc == "u":
                d_eu += d_slice
            else:
                d_ei += d_slice

    if grad_Pu is not None or grad_Pi is not None:
        for d_p, a1, h, src, slc in (
            (grad_Pu, cache.A1u, cache.Hu, cache.EU, "u"),
            (grad_Pi, cache.A1i, cache.Hi, cache.EI, "i"),
        ):
            if d_p is None:
                continue
            grads["W2"] += h.T @ d_p
            grads["b2"] += d_p.sum(axis=0)
            d_h = d_p @ state.W2.T
            d_a1 = d_h * (a1 > 0)
            grads["W1"] += src.T @ d_a1
            grads["b1"] += d_a1.sum(axis=0)
            d_slice = d_a1 @ state.W1.T
            if slc == "u":
                d_eu += d_slice
            else:
                d_ei += d_slice

    # normalized-slice gradients go through the row-normalization adjoint
    # per occurrence, then scatter-add into the full node dimension
    d_e = np.zeros_like(cache.E)
    for rows, d_slice, tilde in (
        (cache.rows_u, d_eu, cache.EU),
        (cache.rows_i, d_ei, cache.EI),
    ):
        d_pre = _normalize_backward(d_slice, tilde, cache.norms[rows])
        np.add.at(d_e, rows, d_pre)
    if raw_grads:
        for rows, g in raw_grads:
            np.add.at(d_e, rows, g)

    # mean over layers 0..L, each extra layer adds one adjoint propagation
    scale = 1.0 / (state.n_layers + 1)
    t = d_e * scale
    d_x0 = t.copy()
    for _ in range(state.n_layers):
        t = propagate_transpose(cache.graph, t)
        d_x0 += t
    grads["E0"] = d_x0
    return grads


def mix_historical(
    cache: ForwardCache, hist: HistoricalCache, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Target views: tau * cached + (1 - tau) * current, on pre-normalization
    embeddings, then row-normalized. Callers must treat the result as constant."""
    if not 0.0 <= tau <= 1.0:
        raise ModelError(f"tau must be in [0, 1], got {tau}")
    if not hist.initialized:
        hist.values[:] = cache.E
        hist.initialized = True
    mixed_u = tau * hist.values[cache.rows_u] + (1.0 - tau) * cache.EU_raw
    mixed_i = tau * hist.values[cache.rows_i] + (1.0 - tau) * cache.EI_raw
    return normalize_rows(mixed_u)[0], normalize_rows(mixed_i)[0]


def update_historical(hist: HistoricalCache, cache: ForwardCache) -> None:
    """Remember this iteration's final embeddings for the rows it touched."""
    hist.values[cache.rows_u] = cache.EU_raw
    hist.values[cache.rows_i] = cache.EI_raw
    hist.initialized = True


def new_historical(state: ModelState) -> HistoricalCache:
    return HistoricalCache(
        values=np.zeros((state.n_users + state.n_items, state.dim)), initialized=False
    )


def save_checkpoint(state: ModelState, hist: HistoricalCache, path: str | Path) -> None:
    """Binary layout: magic, version, (n_users, n_items, F, L) as little-endian
    int64, then E0, projector, predictor, historical cache as little-endian f64
    row-major blocks."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5q", CHECKPOINT_VERSION, state.n_users, state.n_items,
                             state.dim, state.n_layers))
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(getattr(state, name), dtype="<f8")
            fh.write(arr.tobytes())
        fh.write(np.ascontiguousarray(hist.values, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelState, HistoricalCache]:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: bad magic {magic!r}")
        header = fh.read(40)
        if len(header) != 40:
            raise ModelError(f"{path}: truncated header")
        version, n_users, n_items, dim, n_layers = struct.unpack("<5q", header)
        if version != CHECKPOINT_VERSION:
            raise ModelError(f"{path}: unsupported version {version}")
        n = n_users + n_items
        shapes = {
            "E0": (n, dim), "Wp": (dim, dim), "bp": (dim,),
            "W1": (dim, dim), "b1": (dim,), "W2": (dim, dim), "b2": (dim,),
        }
        arrays = {}
        for name in PARAM_NAMES:
            shape = shapes[name]
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ModelError(f"{path}: truncated block {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        buf = fh.read(n * dim * 8)
        if len(buf) != n * dim * 8:
            raise ModelError(f"{path}: truncated historical cache")
        hist_values = np.frombuffer(buf, dtype="<f8").reshape((n, dim)).copy()
        if fh.read(1):
            raise ModelError(f"{path}: trailing bytes")
    state = ModelState(n_users=n_users, n_items=n_items, dim=dim, n_layers=n_layers,
                       **arrays)
    # the wire format has no initialized flag; an all-zero cache means unseeded
    hist = HistoricalCache(values=hist_values, initialized=bool(np.any(hist_values)))
    return state, hist
