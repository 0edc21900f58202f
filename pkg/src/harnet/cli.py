"""``harnet`` command line: gen-data, train, eval, detect, gradcheck, ablate.

Exit codes: 0 success, 1 usage / configuration / I/O error, 2 a check failed.
Every command prints a tab-delimited report on stdout; figures go to --out.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import DetectConfig, load_config, save_config
from .data import CLASSES, gen_dataset, load_dataset
from .detector.model import init_params
from .detector.train import train
from .errors import ConfigError, HarnetError, IoError
from .gradsuite import run_suite
from .inference import detect_scenes, evaluate, ground_truth
from .postprocess import precision_recall
from .postprocess.records import write_detections
from .weights import load_weights, save_weights

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

ABLATION_ROWS = (
    ("baseline", dict(aligned=False, channel=False, spatial=False)),
    ("+AA", dict(aligned=True, channel=False, spatial=False)),
    ("+AA+CA", dict(aligned=True, channel=True, spatial=False)),
    ("HA", dict(aligned=True, channel=True, spatial=True)),
)
METRIC_KEYS = ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sizes(text: str) -> list:
    try:
        sizes = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected S1,S2 integers, got {text!r}") from None
    if not sizes or any(s < 8 or s % 8 for s in sizes):
        raise argparse.ArgumentTypeError("test sizes must be positive multiples of 8")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="harnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config (defaults when omitted)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", default=".", help="output directory (default: .)")
        return s

    g = cmd("gen-data", "write the synthetic train/val corpus")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-val", type=int)

    t = cmd("train", "train a network, write weights + loss trace")
    t.add_argument("--data", required=True, help="directory made by gen-data")
    t.add_argument("--iters", type=int)
    t.add_argument("--weights", help="initial weights (default: fresh init)")

    for name, help_ in (("eval", "AP metrics on a split"), ("detect", "write the detection interchange file")):
        e = cmd(name, help_)
        e.add_argument("--data", required=True)
        e.add_argument("--weights", required=True)
        e.add_argument("--split", default="val", choices=("train", "val"))
        e.add_argument("--multiscale", type=_sizes, metavar="S1,S2")

    cmd("gradcheck", "finite-difference suite over every op and block")

    a = cmd("ablate", "baseline -> +AA -> +AA+CA -> HA on one seed")
    a.add_argument("--data", required=True)
    a.add_argument("--iters", type=int)
    a.add_argument("--multiscale", type=_sizes, metavar="S1,S2", help="also report HA with multi-scale testing")
    return p


def _config(args) -> DetectConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        if args.iters < 1:
            raise ConfigError("must be >= 1", "train.iters")
        over["train.iters"] = args.iters
    return cfg.replace(**over) if over else cfg


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from None
    return out


def _report(rows):
    for row in rows:
        print("\t".join(str(v) for v in row))


def _load_model(path, cfg):
    params = load_weights(path)
    expected = init_params(cfg)
    for name in expected.names():
        if name not in params:
            raise ConfigError(f"weight file lacks parameter {name!r}", "model")
        if params[name].dims != expected[name].dims:
            raise ConfigError(f"{name}: weight dims {params[name].dims} vs model {expected[name].dims}", "model")
    return params


def _split(args):
    return load_dataset(Path(args.data) / args.split)


def _metrics_rows(metrics):
    return [(k, f"{v:.6f}") for k, v in metrics.to_dict().items()]


def cmd_gen_data(args, cfg):
    dc, out = cfg.data, _out(args)
    counts = (("train", args.n_train or dc.n_train, 0), ("val", args.n_val or dc.n_val, 1))
    for split, n, stream in counts:
        gen_dataset(out / split, cfg.seed, n, dc.image_size, min_size=dc.min_size, max_size=dc.max_size,
                    shapes=(1, dc.max_shapes), stream=stream)
    save_config(cfg, out / "config.json")
    _report([("split", "images", "dir")] + [(s, n, out / s) for s, n, _ in counts])
    return EXIT_OK


def cmd_train(args, cfg):
    from .plotting import plot_loss_curve

    scenes = load_dataset(Path(args.data) / "train")
    out = _out(args)
    params = _load_model(args.weights, cfg) if args.weights else None
    t0 = time.perf_counter()
    every = max(1, cfg.train.iters // 20)

    def progress(it, row):
        if it % every == 0 or it == cfg.train.iters - 1:
            print(f"# iter {it} focal {row[1]:.4f} regression {row[2]:.4f} lr {row[4]:.2e} "
                  f"{time.perf_counter() - t0:.0f}s", file=sys.stderr, flush=True)

    params, trace = train(scenes, cfg, params, callback=progress)
    save_weights(out / "weights.harn", params)
    trace.write_csv(out / "loss_trace.csv")
    save_config(cfg, out / "config.json")
    plot_loss_curve(trace, out / "loss_curve.png")
    first, last = trace.rows[0], trace.rows[-1]
    _report([("key", "value"), ("iters", len(trace)), ("initial_total", f"{first[3]:.6f}"),
             ("final_total", f"{last[3]:.6f}"), ("seconds", f"{time.perf_counter() - t0:.1f}"),
             ("weights", out / "weights.harn"), ("trace", out / "loss_trace.csv")])
    return EXIT_OK


def cmd_eval(args, cfg):
    from .plotting import plot_pr_curves

    scenes, out = _split(args), _out(args)
    params = _load_model(args.weights, cfg)
    metrics, dets = evaluate(scenes, params, cfg, args.multiscale)
    doc = {**metrics.to_dict(), "images": len(scenes), "multiscale": args.multiscale}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    gt = ground_truth(scenes)
    curves = {name: precision_recall(dets, gt, c) for c, name in enumerate(CLASSES[:cfg.model.num_classes])}
    plot_pr_curves(curves, out / "pr_curve.png")
    _report([("metric", "value")] + _metrics_rows(metrics))
    return EXIT_OK


def cmd_detect(args, cfg):
    scenes, out = _split(args), _out(args)
    params = _load_model(args.weights, cfg)
    dets = detect_scenes(scenes, params, cfg, args.multiscale)
    write_detections(out / "detections.csv", dets)
    _report([("key", "value"), ("images", len(scenes)), ("detections", sum(len(d) for d in dets.values())),
             ("file", out / "detections.csv")])
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = run_suite(cfg.seed)
    _report([("case", "max_rel_error", "tolerance", "status")] +
            [(r.name, f"{r.error:.3e}", f"{r.tolerance:.0e}", "ok" if r.passed else "FAIL") for r in results])
    failed = [r.name for r in results if not r.passed]
    print(f"# {len(results) - len(failed)}/{len(results)} passed, {sum(r.seconds for r in results):.1f}s",
          file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def run_ablation(train_scenes, val_scenes, cfg, multiscale=None, log=None) -> list:
    """Train and evaluate each ablation row with the same seed and data."""
    rows = []
    for name, toggles in ABLATION_ROWS:
        row_cfg = cfg.replace(**{f"attention.{k}": v for k, v in toggles.items()})
        params, _ = train(train_scenes, row_cfg)
        metrics, _ = evaluate(val_scenes, params, row_cfg)
        rows.append({"name": name, **metrics.to_dict()})
        if log:
            log(rows[-1])
        if name == "HA" and multiscale:
            ms, _ = evaluate(val_scenes, params, row_cfg, multiscale)
            rows.append({"name": "HA w ms", **ms.to_dict()})
    return rows


def cmd_ablate(args, cfg):
    from .plotting import plot_ablation

    data, out = Path(args.data), _out(args)
    train_scenes, val_scenes = load_dataset(data / "train"), load_dataset(data / "val")
    rows = run_ablation(train_scenes, val_scenes, cfg, args.multiscale,
                        log=lambda r: print(f"# {r['name']}: ap {r['ap']:.4f} ap50 {r['ap50']:.4f}",
                                            file=sys.stderr, flush=True))
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    table = [("config",) + METRIC_KEYS] + [(r["name"],) + tuple(f"{r[k]:.4f}" for k in METRIC_KEYS) for r in rows]
    (out / "ablation.tsv").write_text("".join("\t".join(map(str, t)) + "\n" for t in table))
    plot_ablation(rows, out / "ablation.png")
    _report(table)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help: return the status instead of exiting
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except HarnetError as exc:
        print(f"harnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
