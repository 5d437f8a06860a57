"""Command-line entry point: prepare, train, evaluate, sweep-noise, verify, weights."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .activations import ADVOCATED, Activation, as_activation
from .config import ExperimentConfig, load_config
from .data import (SplitBundle, k_core_filter, load_interactions, load_split, make_noise_pool,
                   save_split, spawn_rngs, split_iid, split_ood)
from .errors import ConfigError, DataError, PSLError, TrainingError
from .losses import LossSpec, psl_spec
from .metrics import evaluate
from .model import LightGCNGraph, config_hash, forward_tables, load_checkpoint, save_checkpoint
from .optim import train
from .theory import run_verification, weight_curve

log = logging.getLogger("pslrec")


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def write_csv(path, header: Sequence[str], rows) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def split_fingerprint(split: SplitBundle) -> str:
    """Hash of the user and item id spaces, so checkpoints can refuse foreign splits."""
    ul = split.train.user_labels or tuple(str(u) for u in range(split.n_users))
    il = split.train.item_labels or tuple(str(i) for i in range(split.n_items))
    return config_hash({"users": list(ul), "items": list(il)})


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "version": __version__}


# --------------------------------------------------------------------------- prepare


def prepare_split(cfg: ExperimentConfig) -> SplitBundle:
    if not cfg.data.path:
        raise ConfigError("data.path is required")
    d = load_interactions(cfg.data.path)
    if cfg.data.k_core > 1:
        d = k_core_filter(d, cfg.data.k_core)
    if d.n_interactions == 0:
        raise DataError(f"no interactions survive the {cfg.data.k_core}-core filter")
    split_rng, noise_rng = spawn_rngs(cfg.seed, 2)
    s = cfg.split
    if s.kind == "ood":
        return split_ood(d, s.test_frac, split_rng)
    bundle = split_iid(d, s.test_frac, s.val_frac, split_rng)
    if s.kind == "noise":
        bundle = make_noise_pool(bundle, s.noise_frac, noise_rng)
    return bundle


def cmd_prepare(args) -> int:
    cfg = load_config(args.config, args.set)
    bundle = prepare_split(cfg)
    out = save_split(bundle, args.out, seed=cfg.seed, extra={"config_hash": cfg.hash()})
    print(out)
    return 0


# --------------------------------------------------------------------------- train


def _grid_cells(cfg: ExperimentConfig) -> list[dict]:
    g = cfg.grid
    lrs = g.lr or [cfg.train.lr]
    wds = g.weight_decay or [cfg.train.weight_decay]
    taus = g.tau or [cfg.loss.tau]
    return [{"lr": lr, "weight_decay": wd, "tau": tau} for lr, wd, tau in itertools.product(lrs, wds, taus)]


def _graph(split: SplitBundle, backbone: str, layers: int) -> Optional[LightGCNGraph]:
    return LightGCNGraph(split.train, layers) if backbone == "lightgcn" else None


def run_grid(cfg: ExperimentConfig, split: SplitBundle) -> dict:
    """Train every grid cell in order; the winner has the best selection-set NDCG@20."""
    cells = _grid_cells(cfg)
    results, winner = [], None
    for idx, cell in enumerate(cells):
        spec = cfg.loss_spec(cell["tau"])
        # one cell keeps the configured seed; larger grids give each cell its own stream
        seed = cfg.seed if len(cells) == 1 else int(np.random.SeedSequence([cfg.seed, idx]).generate_state(1)[0])
        tc = cfg.train_config(cell["lr"], cell["weight_decay"], seed)
        entry = {"cell": idx, "hyperparameters": cell, "seed": seed, "loss": spec.label}
        try:
            res = train(split, spec, tc, cfg.model.backbone, cfg.model.lightgcn_layers)
        except TrainingError as exc:
            entry.update(status="failed", error=str(exc))
            results.append(entry)
            log.warning("grid cell %d failed: %s", idx, exc)
            continue
        entry.update(status="ok", best_epoch=res.best_epoch, selection_ndcg20=res.best_ndcg,
                     selection_set=res.select_on)
        results.append(entry)
        if res.best_ndcg is not None and (winner is None or res.best_ndcg > winner[1].best_ndcg):
            winner = (entry, res, spec)
    return {"cells": results, "winner": winner}


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    split = load_split(args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = run_grid(cfg, split)
    spec0 = cfg.loss_spec()
    report = {
        **_provenance(cfg),
        "config": cfg.to_dict(),
        "setting": split.setting_tag,
        "loss": spec0.to_dict() | {"label": spec0.label},
        "equivalent_to_sl": spec0.kind == "PSL" and spec0.is_sl_equivalent,
        "cells": grid["cells"],
        "winner": None,
    }
    if spec0.kind == "PSL" and spec0.is_sl_equivalent:
        report["note"] = "PSL with the exp activation and outside placement is equivalent to SL"
    if grid["winner"] is None:
        write_json(out / "report.json", report)
        raise TrainingError("every grid cell failed")
    entry, res, spec = grid["winner"]
    graph = _graph(split, res.model.backbone, res.model.layers)
    test = evaluate(forward_tables(res.model, graph), split, ks=(20,))
    report["winner"] = {
        "cell": entry["cell"], "hyperparameters": entry["hyperparameters"], "loss": spec.label,
        "best_epoch": res.best_epoch, "selection_set": res.select_on,
        "selection_ndcg20": res.best_ndcg, "test": test.to_dict(),
    }
    if res.select_on == "test":
        report["selection_warning"] = ("model selected on the test set: the OOD setting has no validation split, "
                                       "so test metrics are optimistic")
    save_checkpoint(res.model, out / "checkpoint.json",
                    manifest={"config_hash": cfg.hash(), "seed": entry["seed"], "loss": spec.label,
                              "n_users": split.n_users, "n_items": split.n_items,
                              "id_space": split_fingerprint(split)})
    (out / "history.csv").write_text(res.history_csv(), encoding="utf-8", newline="\n")
    write_json(out / "report.json", report)
    print(json.dumps(report["winner"], sort_keys=True))
    return 0


# --------------------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    split = load_split(args.split)
    if (model.n_users, model.n_items) != (split.n_users, split.n_items):
        raise ConfigError(f"checkpoint has {model.n_users} users x {model.n_items} items, "
                          f"split has {split.n_users} x {split.n_items}")
    if manifest.get("id_space") not in (None, split_fingerprint(split)):
        raise ConfigError("checkpoint was trained on a different user/item id space than this split")
    ks = tuple(int(k) for k in args.ks.split(","))
    rep = evaluate(forward_tables(model, _graph(split, model.backbone, model.layers)), split, ks)
    out = {"metrics": rep.to_dict(), "checkpoint_manifest": manifest,
           "config_hash": manifest.get("config_hash"), "seed": manifest.get("seed"),
           "ks": list(ks), "setting": split.setting_tag}
    if args.out:
        write_json(args.out, out)
    print(json.dumps(out["metrics"], sort_keys=True))
    return 0


# --------------------------------------------------------------------------- sweep-noise


def parse_loss_token(token: str, cfg: ExperimentConfig) -> LossSpec:
    """``SL``, ``BPR``, ``BSL``, ``PSL`` (configured activation) or a bare activation name."""
    t = token.strip()
    if t.upper() in ("SL", "BPR", "BSL"):
        return LossSpec(t.upper(), None, tau=cfg.loss.tau, tau1=cfg.loss.tau1, tau2=cfg.loss.tau2)
    if t.upper() == "PSL":
        return cfg.loss_spec()
    name = t[4:] if t.upper().startswith("PSL-") else t
    try:
        return psl_spec(as_activation(name), cfg.loss.tau, cfg.loss.placement)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def sweep_noise(cfg: ExperimentConfig, split: SplitBundle, p_list: Sequence[float],
                specs: Sequence[LossSpec]) -> list[dict]:
    if split.setting_tag != "noise":
        raise ConfigError(f"sweep-noise needs a noise split, got {split.setting_tag!r}")
    rows = []
    for spec in specs:
        base = None
        for p in p_list:
            tc = cfg.train_config()
            tc.noise_ratio_p = float(p)
            res = train(split, spec, tc, cfg.model.backbone, cfg.model.lightgcn_layers)
            graph = _graph(split, res.model.backbone, res.model.layers)
            m = evaluate(forward_tables(res.model, graph), split, ks=(20,))
            row = {"p": float(p), "loss": spec.label, "recall@20": m.recall(20), "ndcg@20": m.ndcg(20)}
            if base is None:
                base = row
            for k in ("recall@20", "ndcg@20"):
                row[f"rel_degradation_{k}"] = (base[k] - row[k]) / base[k] if base[k] > 0 else 0.0
            rows.append(row)
    return rows


SWEEP_HEADER = ("p", "loss", "recall@20", "ndcg@20", "rel_degradation_recall@20", "rel_degradation_ndcg@20")


def cmd_sweep_noise(args) -> int:
    cfg = load_config(args.config, args.set)
    split = load_split(args.split)
    p_list = [float(x) for x in args.p.split(",")]
    if any(not 0 <= p <= 1 for p in p_list):
        raise ConfigError("every p must lie in [0, 1]")
    tokens = args.losses.split(",") if args.losses else ["PSL"]
    rows = sweep_noise(cfg, split, p_list, [parse_loss_token(t, cfg) for t in tokens])
    write_csv(args.out, SWEEP_HEADER, [[r[h] for h in SWEEP_HEADER] for r in rows])
    print(args.out)
    return 0


# --------------------------------------------------------------------------- verify / weights


def cmd_verify(args) -> int:
    params = {"resolution": args.resolution, "n_random": args.n_random, "seed": args.seed,
              "n_dro": args.n_dro, "dro_resolution": args.dro_resolution}
    report = run_verification(resolution=args.resolution, n_random=args.n_random, seed=args.seed,
                              n_dro=args.n_dro, dro_resolution=args.dro_resolution)
    report["config_hash"] = config_hash(params)
    if args.out:
        write_json(args.out, report)
    print(json.dumps({"pass": report["pass"], "config_hash": report["config_hash"], "seed": args.seed}))
    return 0 if report["pass"] else 4


def weights_table(tau: float, kinds: Sequence[Activation], n_points: int) -> tuple[list, list]:
    d = np.linspace(-1.0, 1.0, n_points)
    cols = [np.array([w for _, w in weight_curve(k, tau, d)]) for k in kinds]
    rows = [[float(d[r])] + [float(c[r]) for c in cols] for r in range(n_points)]
    return ["d"] + [k.value for k in kinds], rows


def cmd_weights(args) -> int:
    kinds = [as_activation(k) for k in args.kinds.split(",")] if args.kinds else [Activation.EXP, *ADVOCATED]
    header, rows = weights_table(args.tau, kinds, args.points)
    write_csv(args.out, header, rows)
    print(args.out)
    return 0


# --------------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pslrec", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="sectioned key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        return p

    p = with_config(sub.add_parser("prepare", help="load, k-core filter and split a TSV"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = with_config(sub.add_parser("train", help="train (grid-search) on a split directory"))
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--ks", default="20")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("sweep-noise", help="train and evaluate across noise ratios"))
    p.add_argument("--split", required=True)
    p.add_argument("--p", default="0.05,0.1,0.2,0.3,0.5")
    p.add_argument("--losses", default="", help="comma list, e.g. SL,relu_shift")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("verify", help="run the numerical theory checks")
    p.add_argument("--resolution", type=int, default=10_000)
    p.add_argument("--n-random", type=int, default=1000)
    p.add_argument("--n-dro", type=int, default=50)
    p.add_argument("--dro-resolution", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("weights", help="tabulate pair-weight curves as CSV")
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--kinds", default="")
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
