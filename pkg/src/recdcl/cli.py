"""Command-line entry point: data prep, training, evaluation, verification.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every failure prints a
single `ERROR[<category>]:` line to stderr; every run writes a run.json
manifest under the output directory. The RECDCL_NUM_THREADS environment
variable caps BLAS threads (applied before numpy loads).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_env() -> None:
    n = os.environ.get("RECDCL_NUM_THREADS")
    if not n:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, n)


class UsageExit(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR[usage]: {message}", file=sys.stderr)
        raise UsageExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="recdcl", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable")
    common.add_argument("--preset", help="named config preset (beauty/food/game/yelp)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="seed override")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse a raw interaction TSV")
    p.add_argument("--data", required=True)

    p = sub.add_parser("split", parents=[common], help="assign per-user train/valid/test")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, help="raw TSV or split manifest")

    p = sub.add_parser("eval", parents=[common], help="rank the catalog for a checkpoint")
    p.add_argument("--data", required=True, help="split manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["valid", "test"])

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of every objective")

    p = sub.add_parser("theory", parents=[common], help="objective-analysis checks")
    p.add_argument("--check", default="all",
                   choices=["obs1", "rotation", "figure1", "all"])
    p.add_argument("--seeds", type=int, default=200, help="figure1 seed count")
    p.add_argument("--trials", type=int, default=100, help="rotation trial count")
    p.add_argument("--steps", type=int, default=5000, help="toy optimizer steps")

    p = sub.add_parser("entropy", parents=[common], help="embedding-entropy study")
    p.add_argument("--data", required=True, help="split manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", default="each-sample",
                   choices=["each-sample", "mean-sample"])
    p.add_argument("--k", type=int, required=True)
    return parser


def _build_id() -> str:
    digest = hashlib.sha256()
    pkg = Path(__file__).parent
    for path in sorted(pkg.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:12]


def _write_run_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "run.json").open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_table(path: str, seed: int):
    """Manifest files keep their labels; raw TSVs are ingested and split."""
    from recdcl import corpus

    if corpus.looks_like_manifest(path):
        return corpus.read_manifest(path)
    table = corpus.ingest(path)
    return corpus.split(table, seed=seed)


def _resolve(args):
    from recdcl import trainer

    return trainer.resolve_config(
        preset=args.preset, config_path=args.config,
        overrides=args.set, seed=args.seed,
    )


def _cmd_ingest(args) -> tuple[int, dict]:
    from recdcl import corpus

    table = corpus.ingest(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_tsv(table, out / "pairs.tsv")
    _write_json(out / "ingest.json", table.counts())
    return 0, {"outputs": ["pairs.tsv", "ingest.json"], "counts": table.counts()}


def _cmd_split(args) -> tuple[int, dict]:
    from recdcl import corpus

    try:
        ratios = tuple(float(x) for x in args.ratios.split(","))
    except ValueError:
        raise corpus.CorpusError(f"bad --ratios {args.ratios!r}")
    if len(ratios) != 3:
        raise corpus.CorpusError("--ratios needs three comma-separated numbers")
    seed = args.seed if args.seed is not None else 0
    table = corpus.ingest(args.data)
    table = corpus.split(table, ratios, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_manifest(table, out / "split.manifest")
    _write_json(out / "split.json", table.counts())
    return 0, {"outputs": ["split.manifest", "split.json"], "counts": table.counts()}


def _cmd_train(args) -> tuple[int, dict]:
    import dataclasses

    from recdcl import trainer

    config = _resolve(args)
    table = _load_table(args.data, config.seed)
    result = trainer.fit(config, table, out_dir=args.out)
    info = {
        "outputs": ["best.ckpt", "history.csv"],
        "resolved_config": dataclasses.asdict(config),
        "best_epoch": result.best_epoch,
        "best_valid_recall20": result.best_valid_recall20,
        "epochs_run": result.epochs_run,
    }
    return 0, info


def _cmd_eval(args) -> tuple[int, dict]:
    import dataclasses

    from recdcl import corpus, evaluation, graph, model, trainer

    config = _resolve(args)
    table = _load_table(args.data, config.seed)
    state, _ = model.load_checkpoint(args.checkpoint)
    if (state.n_users, state.n_items) != (table.user_count, table.item_count):
        raise model.ModelError(
            f"checkpoint is for {state.n_users}x{state.n_items} nodes, data has "
            f"{table.user_count}x{table.item_count}"
        )
    g = graph.build(table)
    split = corpus.SPLIT_NAMES[args.split]
    metrics = evaluation.evaluate(
        state, g, table, split, trainer.EVAL_KS, normalized=config.score_normalized
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval.json", metrics.as_dict())
    row = {"epoch": 0, "loss_uibt": 0.0, "loss_uuii": 0.0, "loss_bcl": 0.0,
           "loss_total": 0.0}
    for k in trainer.EVAL_KS:
        row[f"recall@{k}"] = metrics.recall[k]
        row[f"ndcg@{k}"] = metrics.ndcg[k]
    trainer.write_history_csv([row], out / "eval.csv")
    print(json.dumps(metrics.as_dict(), sort_keys=True))
    return 0, {"outputs": ["eval.json", "eval.csv"],
               "resolved_config": dataclasses.asdict(config),
               "metrics": metrics.as_dict()}


def _cmd_gradcheck(args) -> tuple[int, dict]:
    from recdcl import gradcheck

    seed = args.seed if args.seed is not None else 0
    results = gradcheck.run_suite(seed=seed)
    worst = 0.0
    report = {}
    for name, entry in results.items():
        err = entry["max_rel_error"]
        worst = max(worst, err)
        status = "PASS" if err < gradcheck.PASS_TOL else "FAIL"
        print(f"{name}: max rel error {err:.3e} {status}")
        report[name] = err
    payload = {"per_loss": report, "max_rel_error": worst,
               "tolerance": gradcheck.PASS_TOL}
    _write_json(Path(args.out) / "gradcheck.json", payload)
    ok = worst < gradcheck.PASS_TOL
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (worst {worst:.3e})")
    return (0 if ok else 2), {"outputs": ["gradcheck.json"], **payload}


def _cmd_theory(args) -> tuple[int, dict]:
    import numpy as np

    from recdcl import theory

    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    payload: dict = {}
    if args.check in ("obs1", "all"):
        rng = np.random.default_rng([seed, 9])
        gaps = []
        for n in (8, 16, 32):
            for d in (4, 8, 16):
                z = theory.standardize_columns(rng.standard_normal((n, d)))
                gaps.append(theory.observation1_gap(z))
        payload["obs1"] = {"cases": len(gaps), "max_gap": max(gaps)}
    if args.check in ("rotation", "all"):
        rng = np.random.default_rng([seed, 10])
        z = rng.standard_normal((6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        payload["rotation"] = theory.rotation_invariance_check(z, trials=args.trials,
                                                               seed=seed)
    if args.check in ("figure1", "all"):
        payload["figure1"] = {
            obj: theory.run_toy_histogram(obj, seeds=args.seeds, steps=args.steps,
                                          base_seed=seed)
            for obj in ("bcl", "fcl", "both")
        }
    _write_json(out / "theory.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0, {"outputs": ["theory.json"], **payload}


def _cmd_entropy(args) -> tuple[int, dict]:
    from recdcl import graph, model, theory

    seed = args.seed if args.seed is not None else 0
    table = _load_table(args.data, seed)
    state, _ = model.load_checkpoint(args.checkpoint)
    g = graph.build(table)
    e = model.final_embeddings(state, g)
    fn = theory.entropy_each_sample if args.method == "each-sample" else theory.entropy_mean_sample
    report = fn(e, args.k)
    _write_json(Path(args.out) / "entropy.json", report.as_dict())
    print(json.dumps(report.as_dict(), sort_keys=True))
    return 0, {"outputs": ["entropy.json"], **report.as_dict()}


_COMMANDS = {
    "ingest": _cmd_ingest,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "theory": _cmd_theory,
    "entropy": _cmd_entropy,
}


def run(argv: list[str]) -> int:
    _apply_thread_env()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit as exc:
        return int(exc.code or 1)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    started = time.time()
    out_dir = Path(args.out)
    try:
        code, info = _COMMANDS[args.command](args)
    except Exception as exc:  # categorize and map to exit code
        category, exit_code = _categorize(exc)
        print(f"ERROR[{category}]: {exc}", file=sys.stderr)
        return exit_code
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "seed": args.seed,
        "build_id": _build_id(),
        "wall_time_s": round(time.time() - started, 6),
    }
    manifest.update(info)
    _write_run_manifest(out_dir, manifest)
    return code


def _categorize(exc: Exception) -> tuple[str, int]:
    from recdcl.corpus import CorpusError
    from recdcl.evaluation import EvalError
    from recdcl.graph import GraphError
    from recdcl.losses import LossError
    from recdcl.model import ModelError
    from recdcl.theory import TheoryError
    from recdcl.trainer import ConfigError, TrainingError

    if isinstance(exc, ConfigError):
        return "usage", 1
    if isinstance(exc, (CorpusError, GraphError, EvalError)):
        return "data", 2
    if isinstance(exc, (LossError, TrainingError, TheoryError)):
        return "numeric", 2
    if isinstance(exc, ModelError):
        return "checkpoint", 2
    if isinstance(exc, OSError):
        return "io", 2
    return "internal", 2


def main(argv: list[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
