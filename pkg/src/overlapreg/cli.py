"""Command-line surface: gen / train / register / eval.

Every command is deterministic given its inputs and --seed (default taken
from the OVERLAPREG_SEED environment variable). Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from .checkpoint import (
    CheckpointError,
    checkpoint_from_training,
    load_checkpoint,
    restore_store,
    save_checkpoint,
)
from .cloud_io import CloudFormatError, read_cloud, write_cloud
from .config import ConfigError, RansacConfig, RunConfig, load_run_config
from .geometry import RigidTransform
from .matching import RegistrationError, SamplerMode
from .metrics import (
    EvalThresholds,
    PairMetrics,
    ecdf_curve,
    feature_match_recall,
    gt_correspondence_set,
    inlier_ratio,
    overlap_after_filtering,
    registration_recall,
    registration_rmse,
    rre_rte,
    chamfer_modified,
    write_metrics_csv,
    write_summary_json,
)
from .network import init_params
from .pipeline import register_clouds
from .synth import make_dataset
from .training import TrainState, fit

_MODE_ALIASES = {
    "rand": "rand",
    "topk": "top_k_om",
    "top_k_om": "top_k_om",
    "prob": "prob_om",
    "prob_om": "prob_om",
}

ECDF_GRID = [round(x, 2) for x in np.linspace(0.0, 1.0, 51)]


def _default_seed() -> int:
    raw = os.environ.get("OVERLAPREG_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"OVERLAPREG_SEED must be an integer, got {raw!r}") from None


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    count = args.count if args.count is not None else cfg.data.count
    os.makedirs(args.out_dir, exist_ok=True)
    samples = make_dataset(cfg.data.gen, count, seed=args.seed, p_v_range=cfg.data.p_v_range)
    for i, s in enumerate(samples):
        stem = f"pair_{i:05d}"
        names = {
            "source": f"{stem}_source.xyz",
            "target": f"{stem}_target.xyz",
            "raw_source": f"{stem}_raw_source.xyz",
            "raw_target": f"{stem}_raw_target.xyz",
        }
        write_cloud(s.source, os.path.join(args.out_dir, names["source"]))
        write_cloud(s.target, os.path.join(args.out_dir, names["target"]))
        write_cloud(s.raw_source, os.path.join(args.out_dir, names["raw_source"]))
        write_cloud(s.raw_target, os.path.join(args.out_dir, names["raw_target"]))
        sidecar = {
            "id": stem,
            "seed": int(s.seed),
            "overlap": float(s.overlap),
            "gt": s.gt.flat(),
            "files": names,
        }
        with open(os.path.join(args.out_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(sidecar, sort_keys=True) + "\n")
    print(f"wrote {len(samples)} pairs to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    n_epochs = args.epochs if args.epochs is not None else cfg.n_epochs
    samples = make_dataset(
        cfg.data.gen, cfg.data.count, seed=args.seed, p_v_range=cfg.data.p_v_range
    )
    store = init_params(cfg.model, seed=args.seed)
    state = TrainState()

    def save(report) -> None:
        save_checkpoint(
            checkpoint_from_training(store, cfg.model, cfg.optim, state), args.out
        )
        print(
            f"epoch {report.epoch}: circle={report.circle:.4f} overlap={report.overlap:.4f} "
            f"matchability={report.matchability:.4f} match_rate={report.match_rate:.3f}",
            file=sys.stderr,
        )

    fit(
        samples,
        store,
        cfg.model,
        cfg.loss,
        cfg.optim,
        n_epochs,
        state=state,
        log_path=args.log,
        on_epoch=save,
    )
    if n_epochs == 0:
        save_checkpoint(checkpoint_from_training(store, cfg.model, cfg.optim, state), args.out)
    print(f"wrote checkpoint {args.out}")
    return 0


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------


def _sampler_from_args(args: argparse.Namespace) -> SamplerMode:
    return SamplerMode(mode=_MODE_ALIASES[args.mode], k=args.k, seed=args.seed)


def cmd_register(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    store, _ = restore_store(ckpt)
    source = read_cloud(args.source)
    target = read_cloud(args.target)
    ransac = RansacConfig(iters=args.iters, inlier_thresh=args.inlier_thresh)
    result = register_clouds(
        source, target, store, ckpt.model, _sampler_from_args(args), ransac
    )
    for row in result.transform.matrix():
        print(" ".join(_fmt(v) for v in row))
    print(
        f"matches={len(result.correspondences)} inliers={int(result.inlier_mask.sum())}",
        file=sys.stderr,
    )
    if args.out_aligned:
        write_cloud(result.transform.apply(source), args.out_aligned)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_pairs_dir(pairs_dir: str) -> list[dict]:
    if not os.path.isdir(pairs_dir):
        raise FileNotFoundError(f"pairs directory not found: {pairs_dir}")
    sidecars = sorted(glob.glob(os.path.join(pairs_dir, "pair_*.json")))
    if not sidecars:
        raise FileNotFoundError(f"no pair sidecars found in {pairs_dir}")
    loaded = []
    for path in sidecars:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        obj["_dir"] = pairs_dir
        loaded.append(obj)
    return loaded


def _eval_one(sidecar: dict, store, model, sampler: SamplerMode, ransac, thr) -> tuple:
    base = sidecar["_dir"]
    clouds = {
        key: read_cloud(os.path.join(base, name)) for key, name in sidecar["files"].items()
    }
    gt = RigidTransform.from_flat(sidecar["gt"])
    p, q = clouds["source"], clouds["target"]
    scored = None
    try:
        result = register_clouds(p, q, store, model, sampler, ransac)
        scored = (result.scored_p, result.scored_q)
        ir = inlier_ratio(result.correspondences, p, q, gt, thr.tau1)
        h_star = gt_correspondence_set(p, q, gt, thr.tau1)
        rmse = (
            registration_rmse(result.transform, h_star, p, q)
            if len(h_star)
            else float("inf")
        )
        rre, rte = rre_rte(result.transform, gt)
        chamfer = chamfer_modified(p, q, result.transform, clouds["raw_source"], clouds["raw_target"])
    except RegistrationError:
        # count a failed estimate as maximally wrong rather than dropping it
        ir, rmse, rre, rte, chamfer = 0.0, float("inf"), 180.0, float("inf"), float("inf")
    if scored is None:
        from .pipeline import extract_pair

        scored = extract_pair(p, q, store, model)
    before, after = overlap_after_filtering(
        p, q, gt, scored[0].overlap, scored[1].overlap, model.voxel
    )
    row = PairMetrics(
        pair_id=sidecar["id"],
        overlap=float(sidecar["overlap"]),
        n_samples=sampler.k,
        inlier_ratio=ir,
        rmse=rmse,
        rre=rre,
        rte=rte,
        chamfer=chamfer,
        success=rmse < thr.rmse_thresh,
    )
    return row, before, after


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    store, _ = restore_store(ckpt)
    thr = EvalThresholds(tau1=args.tau1, tau2=args.tau2, rmse_thresh=args.rmse_thresh)
    ransac = RansacConfig(iters=args.iters, inlier_thresh=args.inlier_thresh)
    sidecars = _load_pairs_dir(args.pairs_dir)
    os.makedirs(args.out_dir, exist_ok=True)

    rows = []
    befores = []
    afters = []
    for i, sidecar in enumerate(sidecars):
        sampler = SamplerMode(
            mode=_MODE_ALIASES[args.mode], k=args.k, seed=_pair_seed(args.seed, i)
        )
        row, before, after = _eval_one(sidecar, store, ckpt.model, sampler, ransac, thr)
        rows.append(row)
        befores.append(before)
        afters.append(after)

    write_metrics_csv(os.path.join(args.out_dir, "metrics.csv"), rows)

    curve_before = ecdf_curve(befores, ECDF_GRID)
    curve_after = ecdf_curve(afters, ECDF_GRID)
    with open(os.path.join(args.out_dir, "ecdf.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "ecdf_overlap_before", "ecdf_overlap_after"])
        for (x, yb), (_, ya) in zip(curve_before, curve_after):
            writer.writerow([_fmt(x), _fmt(yb), _fmt(ya)])

    finite_rmse = [r.rmse for r in rows if np.isfinite(r.rmse)]
    finite_chamfer = [r.chamfer for r in rows if np.isfinite(r.chamfer)]
    finite_rte = [r.rte for r in rows if np.isfinite(r.rte)]
    summary = {
        "n_pairs": len(rows),
        "n_samples": args.k,
        "fmr": feature_match_recall([r.inlier_ratio for r in rows], thr.tau2),
        "rr": registration_recall([r.rmse for r in rows], thr.rmse_thresh),
        "mean_inlier_ratio": float(np.mean([r.inlier_ratio for r in rows])),
        "mean_rmse": float(np.mean(finite_rmse)) if finite_rmse else None,
        "mean_rre": float(np.mean([r.rre for r in rows])),
        "mean_rte": float(np.mean(finite_rte)) if finite_rte else None,
        "mean_chamfer": float(np.mean(finite_chamfer)) if finite_chamfer else None,
        "mean_overlap_before": float(np.mean(befores)),
        "mean_overlap_after": float(np.mean(afters)),
        "ecdf_grid": ECDF_GRID,
    }
    write_summary_json(os.path.join(args.out_dir, "summary.json"), summary)
    print(f"evaluated {len(rows)} pairs; outputs in {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlapreg",
        description="Overlap-aware partial point cloud registration toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_kwargs = dict(type=int, default=None, help="global seed (env OVERLAPREG_SEED)")

    p_gen = sub.add_parser("gen", help="generate a synthetic pair dataset")
    p_gen.add_argument("--config", default=None, help="RunConfig JSON path")
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--count", type=int, default=None, help="override data.count")
    p_gen.add_argument("--seed", **seed_kwargs)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train on generated pairs")
    p_train.add_argument("--config", default=None, help="RunConfig JSON path")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", default=None, help="epoch JSONL log path")
    p_train.add_argument("--epochs", type=int, default=None, help="override n_epochs")
    p_train.add_argument("--seed", **seed_kwargs)
    p_train.set_defaults(func=cmd_train)

    p_reg = sub.add_parser("register", help="register two cloud files")
    p_reg.add_argument("--ckpt", required=True)
    p_reg.add_argument("--source", required=True)
    p_reg.add_argument("--target", required=True)
    p_reg.add_argument("--mode", choices=sorted(_MODE_ALIASES), default="prob")
    p_reg.add_argument("--k", type=int, default=250)
    p_reg.add_argument("--iters", type=int, default=RansacConfig().iters)
    p_reg.add_argument("--inlier-thresh", type=float, default=RansacConfig().inlier_thresh)
    p_reg.add_argument("--out-aligned", default=None, help="write aligned source here")
    p_reg.add_argument("--seed", **seed_kwargs)
    p_reg.set_defaults(func=cmd_register)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a pair directory")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--pairs-dir", required=True)
    p_eval.add_argument("--out-dir", required=True)
    p_eval.add_argument("--mode", choices=sorted(_MODE_ALIASES), default="prob")
    p_eval.add_argument("--k", type=int, default=250)
    p_eval.add_argument("--iters", type=int, default=1000)
    p_eval.add_argument("--inlier-thresh", type=float, default=RansacConfig().inlier_thresh)
    p_eval.add_argument("--tau1", type=float, default=EvalThresholds().tau1)
    p_eval.add_argument("--tau2", type=float, default=EvalThresholds().tau2)
    p_eval.add_argument("--rmse-thresh", type=float, default=EvalThresholds().rmse_thresh)
    p_eval.add_argument("--seed", **seed_kwargs)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if getattr(args, "seed", None) is None:
            args.seed = _default_seed()
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CloudFormatError, CheckpointError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RegistrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
