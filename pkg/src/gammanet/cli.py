"""Command-line entry point: ``gammanet {synth,train,eval,predict,analyze}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, config, plotting
from .dataio import DataError, load_dataset, make_windows, save_dataset, split, synth_dataset
from .model import forward, load_checkpoint, save_checkpoint
from .train import evaluate, predict_raw, train

log = logging.getLogger("gammanet")

SPLITS = ("train", "val", "test")


class CliError(Exception):
    pass


def _resolve_checkpoint(path: str) -> Path:
    p = Path(path)
    if (p / "config.json").is_file():
        return p
    if (p / "checkpoint" / "config.json").is_file():
        return p / "checkpoint"
    raise CliError(f"{path}: no checkpoint found (expected config.json)")


def _load_run(args):
    ckpt = _resolve_checkpoint(args.checkpoint)
    params, cfg, stats, doc = load_checkpoint(ckpt)
    ds = load_dataset(args.data)
    if ds.num_nodes != params["embed.E_a"].shape[1]:
        raise CliError(f"checkpoint was trained on {params['embed.E_a'].shape[1]} nodes, "
                       f"dataset {args.data} has {ds.num_nodes}")
    ratios = tuple(doc.get("run", {}).get("data", {}).get("split_ratios", (7, 1, 2)))
    return ckpt, params, cfg, stats, doc, ds, ratios


def _split_windows(ds, cfg, stats, ratios, which):
    ranges = dict(zip(SPLITS, split(ds, ratios, cfg.T + cfg.T_prime)))
    return make_windows(ds, ranges[which], cfg.T, cfg.T_prime, stats)


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> None:
    if args.nodes < 2:
        raise CliError("--nodes must be at least 2")
    if args.days < 1:
        raise CliError("--days must be at least 1")
    ds = synth_dataset(args.nodes, args.days, args.seed, interval_minutes=args.interval,
                       dropout=args.dropout)
    try:
        save_dataset(ds, args.out)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out}: {exc}") from exc
    log.info("wrote %d steps x %d nodes to %s", ds.num_steps, ds.num_nodes, args.out)


def cmd_train(args) -> None:
    overrides: dict = {}
    if args.seed is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
    if args.max_epochs is not None:
        overrides.setdefault("train", {})["max_epochs"] = args.max_epochs
    data_dir = args.data
    overrides.setdefault("data", {})["dir"] = data_dir
    doc = config.load(args.config, overrides)
    ds = load_dataset(data_dir)
    mcfg = config.model_config(doc)
    if mcfg.steps_per_day != ds.steps_per_day:
        mcfg.steps_per_day = ds.steps_per_day
        doc["model"]["steps_per_day"] = ds.steps_per_day
    tcfg = config.train_config(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(doc, out / "run_config.json")
    result = train(ds, mcfg, tcfg, tuple(doc["data"]["split_ratios"]))
    save_checkpoint(out / "checkpoint", result.params, mcfg, result.stats,
                    {"run": doc, "best_epoch": result.best_epoch})
    result.history_to_csv(out / "history.csv")
    plotting.plot_history(result.history, out / "history.png")
    log.info("best epoch %d, val MAE %.4f", result.best_epoch,
             min(r.val_mae for r in result.history))


def cmd_eval(args) -> None:
    ckpt, params, cfg, stats, doc, ds, ratios = _load_run(args)
    report = evaluate(params, cfg, stats, ds, args.split, ratios)
    out = Path(args.out) if args.out else ckpt.parent / f"eval_{args.split}.json"
    report.to_json(out)
    for h, (mae, rmse, mape) in report.named().items():
        log.info("horizon %2d  MAE %.3f  RMSE %.3f  MAPE %.2f%%", h, mae, rmse, mape)
    mae, rmse, mape = report.average
    log.info("average     MAE %.3f  RMSE %.3f  MAPE %.2f%%", mae, rmse, mape)


def cmd_predict(args) -> None:
    _, params, cfg, stats, doc, ds, ratios = _load_run(args)
    w = _split_windows(ds, cfg, stats, ratios, args.split)
    if not 0 <= args.window_index < len(w):
        raise CliError(f"--window-index must lie in [0, {len(w)}) for the {args.split} split")
    sample = w.subset(slice(args.window_index, args.window_index + 1))
    pred = predict_raw(params, cfg, stats, ds, sample)[0]
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["node", "horizon", "y_true", "y_pred", "masked"])
        for n in range(pred.shape[0]):
            for h in range(pred.shape[1]):
                wr.writerow([n, h + 1, repr(float(sample.y[0, n, h])), repr(float(pred[n, h])),
                             int(not sample.y_mask[0, n, h])])


def _probe(w, count: int):
    idx = np.unique(np.linspace(0, len(w) - 1, min(count, len(w))).round().astype(int))
    return w.x[idx]


def cmd_analyze(args) -> None:
    ckpt, params, cfg, stats, doc, ds, ratios = _load_run(args)
    a_cfg = dict(config.DEFAULTS["analysis"])
    a_cfg.update(doc.get("run", {}).get("analysis", {}))
    if args.threshold is not None:
        a_cfg["attention_threshold"] = args.threshold
    if args.peak_window is not None:
        a_cfg["peak_window"] = args.peak_window
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    w = _split_windows(ds, cfg, stats, ratios, args.split)

    if args.what == "ssm":
        if not (cfg.use_temporal_mamba or cfg.use_spatial_mamba):
            raise CliError("checkpoint has no scan layers to analyze")
        _, extras = forward(_probe(w, a_cfg["probe_windows"]), ds.topology, params, cfg, capture_scans=True)
        extras.scans.to_csv(out / "scan_trace.csv")
        entries = analysis.analyze_scans(extras.scans)
        analysis.write_svd_report(entries, out)
        plotting.plot_spectra(entries, out / "svd_spectrum.png")
        for e in entries:
            log.info("layer %d %-5s max sigma %.4f %s", e.layer, e.axis, e.sigma[0],
                     "stable" if e.stable else "UNSTABLE")

    elif args.what == "attention":
        if not cfg.use_gat:
            raise CliError("checkpoint has no attention layers (use_gat=false)")
        _, extras = forward(_probe(w, a_cfg["probe_windows"]), ds.topology, params, cfg, capture_attention=True)
        last = cfg.num_layers - 1
        thr = float(a_cfg["attention_threshold"])
        for tag, name in (("temporal", f"block.{last}.gat1"), ("spatial", f"block.{last}.gat2")):
            snap = extras.attention[name]
            snap.to_csv(out / f"attention_{tag}.csv")
            graph = analysis.build_attention_graph(snap, thr, ds.num_nodes)
            report = analysis.louvain(graph, thr)
            analysis.write_community_report(graph, report, out, tag)
            matrix, perm = analysis.reorder_adjacency(graph, report)
            plotting.plot_adjacency(matrix, report.assignment[perm], out / f"adjacency_{tag}.png",
                                    f"{tag} attention graph (threshold {thr:g})")
            log.info("%s graph: %d edges, %d communities, modularity %.4f", tag,
                     len(graph.edges()), report.num_communities, report.modularity)

    elif args.what == "peaks":
        window = int(a_cfg["peak_window"])
        step = cfg.T_prime
        idx = np.arange(0, len(w), step)
        sub = w.subset(idx)
        pred = predict_raw(params, cfg, stats, ds, sub)  # [k, N, T']
        true_series = np.concatenate(list(sub.y.transpose(0, 2, 1)), axis=0)  # [k*T', N]
        pred_series = np.concatenate(list(pred.transpose(0, 2, 1)), axis=0)
        fits = []
        for n in range(ds.num_nodes):
            try:
                fits.append(analysis.peak_regression(true_series[:, n], pred_series[:, n], window, n))
            except analysis.FitUndefinedError as exc:
                log.warning("node %d: %s", n, exc)
        analysis.write_peak_fits(fits, out)
        if fits:
            plotting.plot_peak_fits(fits, out / "peak_fits.png")
        nodes = list(range(0, ds.num_nodes, max(1, ds.num_nodes // 6)))[:6]
        plotting.plot_traces(true_series, pred_series, nodes, out / "prediction_traces.png")
        log.info("peak fits for %d nodes, median R^2 %.3f", len(fits),
                 float(np.median([f.r2 for f in fits])) if fits else float("nan"))


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gammanet", description="Spatio-temporal traffic forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--days", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--interval", type=int, default=5, help="sampling interval in minutes")
    s.add_argument("--dropout", type=float, default=0.01, help="fraction of readings zeroed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="horizon-wise metrics on one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="forecast one window")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--window-index", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("analyze", help="interpretability analyses")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--what", choices=("ssm", "attention", "peaks"), required=True)
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--threshold", type=float)
    s.add_argument("--peak-window", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        args.func(args)
    except (CliError, config.ConfigError, DataError, analysis.FitUndefinedError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
