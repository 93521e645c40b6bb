"""Training loop: config resolution, Adam, epoch driver, early stopping."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from recdcl import corpus as corpus_mod
from recdcl import evaluation, model
from recdcl.corpus import InteractionTable
from recdcl.graph import BipartiteGraph, build
from recdcl.losses import (
    KernelParams,
    LossTerm,
    bcl_loss,
    bpr_loss,
    cross_correlation,
    cross_correlation_vjp,
    dcl_loss,
    total_loss,
    uibt_loss,
    uuii_loss,
)

HISTORY_HEADER = (
    "epoch,loss_uibt,loss_uuii,loss_bcl,loss_total,"
    "recall@10,recall@20,recall@50,ndcg@10,ndcg@20,ndcg@50"
)
EVAL_KS = (10, 20, 50)


class ConfigError(ValueError):
    """Bad training configuration value or unknown config key."""


class TrainingError(RuntimeError):
    """Non-finite loss or gradient encountered during training."""


@dataclass
class TrainConfig:
    """Everything a training run needs. Field names double as config-file keys."""

    F: int = 64
    L: int = 2
    B: int = 256
    lr: float = 1e-3
    epochs: int = 100
    gamma: float = 0.01           # off-diagonal weight of the feature-wise loss
    alpha: float = 0.2            # weight of the uniformity term
    beta: float = 5.0             # weight of the batch-wise term
    tau: float = 0.1              # historical mix ratio
    kernel_a: float = 1.0
    kernel_c: float = 1e-7
    kernel_e: int = 4
    lambda_dcl: float = 1.0
    gamma_au: float = 1.0
    objective: str = "recdcl"     # recdcl | dcl | bpr
    eval_every: int = 1           # 0 disables validation evaluation
    patience: int = 10
    seed: int = 0
    uibt_weight: float = 1.0      # ablation knob; 1.0 is the composed objective
    uuii_include_diagonal: bool = False
    projector_identity: bool = False
    score_normalized: bool = False

    def validate(self) -> "TrainConfig":
        if self.F < 2:
            raise ConfigError("F must be >= 2")
        if self.L < 0:
            raise ConfigError("L must be >= 0")
        if self.B < 2:
            raise ConfigError("B must be >= 2")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must be in [0, 1]")
        if self.objective not in ("recdcl", "dcl", "bpr"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        KernelParams(self.kernel_a, self.kernel_c, self.kernel_e)
        return self

    def kernel(self) -> KernelParams:
        return KernelParams(self.kernel_a, self.kernel_c, self.kernel_e)


PRESETS: dict[str, dict] = {
    "beauty": dict(F=2048, B=256, gamma=0.01, alpha=0.2, tau=0.1, beta=5.0),
    "food": dict(F=2048, B=1024, gamma=0.05, alpha=1.0, tau=0.3, beta=10.0),
    "game": dict(F=2048, B=1024, gamma=0.01, alpha=0.2, tau=0.3, beta=10.0),
    "yelp": dict(F=2048, B=1024, gamma=0.1, alpha=2.0, tau=0.5, beta=1.0),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_file(path: str | Path) -> dict:
    """Line-oriented `key = value` file; '#' starts a comment; unknown keys error."""
    out: dict = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = _coerce(key.strip(), value)
    return out


def parse_overrides(pairs: list[str]) -> dict:
    out: dict = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override must look like KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = _coerce(key.strip(), value)
    return out


def resolve_config(
    preset: str | None = None,
    config_path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> TrainConfig:
    """Precedence: preset < config file < overrides < explicit seed flag."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_path is not None:
        values.update(parse_config_file(config_path))
    if overrides:
        values.update(parse_overrides(overrides))
    if seed is not None:
        values["seed"] = seed
    return TrainConfig(**values).validate()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard bias-corrected Adam, updating parameters in place."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter group {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def _sample_negatives(
    rng: np.random.Generator,
    users: np.ndarray,
    n_items: int,
    train_sets: list[set[int]],
) -> np.ndarray:
    neg = rng.integers(0, n_items, size=len(users))
    for k, u in enumerate(users.tolist()):
        while neg[k] in train_sets[u]:
            neg[k] = rng.integers(0, n_items)
    return neg


def compute_batch_loss(
    state: model.ModelState,
    cache: model.ForwardCache,
    hist: model.HistoricalCache,
    config: TrainConfig,
    neg_items: np.ndarray | None = None,
):
    """Objective dispatch: returns (loss summary dict, parameter grads)."""
    if config.objective == "recdcl":
        c = cross_correlation(cache.Zu, cache.Zi)
        uibt_v, d_c = uibt_loss(c, config.gamma)
        d_zu1, d_zi1 = cross_correlation_vjp(cache.Zu, cache.Zi, d_c)
        uuii_v, d_zu2, d_zi2 = uuii_loss(
            cache.Zu, cache.Zi, config.kernel(), config.uuii_include_diagonal
        )
        target_u, target_i = model.mix_historical(cache, hist, config.tau)
        bcl_v, d_pu, d_pi = bcl_loss(cache.Pu, cache.Pi, target_u, target_i)
        w = config.uibt_weight
        report = total_loss(
            LossTerm(w * uibt_v, {"Zu": w * d_zu1, "Zi": w * d_zi1}),
            LossTerm(uuii_v, {"Zu": d_zu2, "Zi": d_zi2}),
            LossTerm(bcl_v, {"Pu": d_pu, "Pi": d_pi}),
            config.alpha,
            config.beta,
        )
        grads = model.backward(
            state,
            cache,
            grad_Zu=report.grads["Zu"],
            grad_Zi=report.grads["Zi"],
            grad_Pu=report.grads["Pu"],
            grad_Pi=report.grads["Pi"],
        )
        summary = {
            "loss_uibt": report.uibt,
            "loss_uuii": report.uuii,
            "loss_bcl": report.bcl,
            "loss_total": report.total,
        }
        return summary, grads

    if config.objective == "dcl":
        c = cross_correlation(cache.Zu, cache.Zi)
        value, g = dcl_loss(cache.EU, cache.EI, c, config.gamma_au, config.lambda_dcl)
        d_zu, d_zi = cross_correlation_vjp(cache.Zu, cache.Zi, g["C"])
        grads = model.backward(
            state, cache, grad_EU=g["xu"], grad_EI=g["xi"],
            grad_Zu=d_zu, grad_Zi=d_zi,
        )
        summary = {"loss_uibt": 0.0, "loss_uuii": 0.0, "loss_bcl": 0.0,
                   "loss_total": value}
        return summary, grads

    if config.objective == "bpr":
        rows_n = np.asarray(neg_items, dtype=np.int64) + state.n_users
        en_raw = cache.E[rows_n]
        pos = np.einsum("ij,ij->i", cache.EU_raw, cache.EI_raw)
        neg = np.einsum("ij,ij->i", cache.EU_raw, en_raw)
        value, d_pos, d_neg = bpr_loss(pos, neg)
        d_eu = d_pos[:, None] * cache.EI_raw + d_neg[:, None] * en_raw
        d_ei = d_pos[:, None] * cache.EU_raw
        d_en = d_neg[:, None] * cache.EU_raw
        grads = model.backward(
            state, cache,
            raw_grads=[(cache.rows_u, d_eu), (cache.rows_i, d_ei), (rows_n, d_en)],
        )
        summary = {"loss_uibt": 0.0, "loss_uuii": 0.0, "loss_bcl": 0.0,
                   "loss_total": value}
        return summary, grads

    raise ConfigError(f"unknown objective {config.objective!r}")


def train_epoch(
    state: model.ModelState,
    graph: BipartiteGraph,
    table: InteractionTable,
    hist: model.HistoricalCache,
    adam: AdamState,
    config: TrainConfig,
    epoch: int,
    train_sets: list[set[int]] | None = None,
) -> dict:
    """One pass over shuffled train batches. Returns mean per-batch losses."""
    sums = {"loss_uibt": 0.0, "loss_uuii": 0.0, "loss_bcl": 0.0, "loss_total": 0.0}
    n_batches = 0
    skipped = 0
    neg_rng = np.random.default_rng([config.seed, 4, epoch])
    if config.objective == "bpr" and train_sets is None:
        train_sets = [set(arr.tolist()) for arr in table.items_by_user(corpus_mod.TRAIN)]
    for batch in corpus_mod.batches(table, config.B, config.seed, epoch):
        if len(batch) < 2:
            skipped += 1  # standardization needs at least two rows
            continue
        cache = model.forward(state, graph, batch)
        neg = None
        if config.objective == "bpr":
            neg = _sample_negatives(neg_rng, batch.users, state.n_items, train_sets)
        summary, grads = compute_batch_loss(state, cache, hist, config, neg)
        if not np.isfinite(summary["loss_total"]):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}: {summary}"
            )
        adam_step(state.params(), grads, adam, config.lr)
        if config.objective == "recdcl":
            model.update_historical(hist, cache)
        for key in sums:
            sums[key] += summary[key]
        n_batches += 1
    if n_batches == 0:
        raise TrainingError("epoch produced no usable batches")
    out = {key: val / n_batches for key, val in sums.items()}
    out["n_batches"] = n_batches
    out["skipped"] = skipped
    return out


@dataclass
class FitResult:
    state: model.ModelState
    hist: model.HistoricalCache
    history: list[dict]
    best_epoch: int
    best_valid_recall20: float
    epochs_run: int


def _history_row(epoch: int, summary: dict, metrics) -> dict:
    row = {
        "epoch": epoch,
        "loss_uibt": summary["loss_uibt"],
        "loss_uuii": summary["loss_uuii"],
        "loss_bcl": summary["loss_bcl"],
        "loss_total": summary["loss_total"],
    }
    for k in EVAL_KS:
        row[f"recall@{k}"] = metrics.recall[k]
        row[f"ndcg@{k}"] = metrics.ndcg[k]
    return row


def write_history_csv(history: list[dict], path: str | Path) -> None:
    cols = HISTORY_HEADER.split(",")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for row in history:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".10g")


def fit(
    config: TrainConfig,
    data: str | Path | InteractionTable,
    out_dir: str | Path | None = None,
) -> FitResult:
    """Full training run with validation-based early stopping.

    Keeps the parameters of the best validation Recall@20 evaluation; stops
    after `patience` consecutive evaluations without improvement. With
    eval_every=0 no evaluation happens and the final parameters win.
    Writes best.ckpt and history.csv under out_dir when given.
    """
    config.validate()
    if isinstance(data, InteractionTable):
        table = data
    else:
        table = corpus_mod.ingest(data)
        table = corpus_mod.split(table, seed=config.seed)
    graph = build(table)
    state = model.init(
        table.user_count, table.item_count, config.F, config.L,
        seed=config.seed, projector_identity=config.projector_identity,
    )
    hist = model.new_historical(state)
    adam = AdamState()
    has_valid = int((table.split == corpus_mod.VALID).sum()) > 0
    if config.eval_every > 0 and not has_valid:
        raise ConfigError("eval_every > 0 but the corpus has no validation pairs")

    history: list[dict] = []
    best_state = state.copy()
    best_hist_values = hist.values.copy()
    best_recall = -np.inf
    best_epoch = 0
    stale = 0
    epochs_run = 0
    for epoch in range(1, config.epochs + 1):
        summary = train_epoch(state, graph, table, hist, adam, config, epoch)
        epochs_run = epoch
        if config.eval_every > 0 and epoch % config.eval_every == 0:
            metrics = evaluation.evaluate(
                state, graph, table, corpus_mod.VALID, EVAL_KS,
                normalized=config.score_normalized,
            )
            history.append(_history_row(epoch, summary, metrics))
            if metrics.recall[20] > best_recall:
                best_recall = metrics.recall[20]
                best_state = state.copy()
                best_hist_values = hist.values.copy()
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if config.eval_every == 0 or not history:
        best_state = state.copy()
        best_hist_values = hist.values.copy()
        best_epoch = epochs_run
        best_recall = float("nan")

    best_hist = model.HistoricalCache(
        values=best_hist_values, initialized=bool(np.any(best_hist_values))
    )
    result = FitResult(
        state=best_state,
        hist=best_hist,
        history=history,
        best_epoch=best_epoch,
        best_valid_recall20=float(best_recall),
        epochs_run=epochs_run,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save_checkpoint(best_state, best_hist, out / "best.ckpt")
        write_history_csv(history, out / "history.csv")
    return result
