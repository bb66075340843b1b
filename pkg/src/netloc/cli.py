"""Command-line entry point for reproducible runs.

Exit codes: 0 ok, 2 usage, 3 io/parse, 4 config, 5 numeric failure.
Every command that writes outputs also echoes its effective
configuration (resolved defaults + config file + flag overrides) so a
run can be reproduced from its artifacts alone.
"""

import argparse
import os
import sys
from dataclasses import fields as dataclass_fields

import numpy as np

from .analysis import complexity_bench, spectral_analysis, verify_theorems, write_spectral_csv
from .errors import ConfigError, DataFormatError, NumericError
from .evaluation import (
    ExperimentSpec,
    export_attention_heatmaps,
    export_threshold_histogram,
    rmse_agents,
    run_noise_table,
    run_timing,
    sweep_anchors,
    sweep_threshold,
)
from .graphcore import export_edge_list_csv, hard_threshold
from .models import MODEL_KINDS
from .scenario import (
    NoiseConfig,
    export_positions_csv,
    generate_scenario,
    load_scenario,
    measure_distances,
    save_scenario,
)
from .train import TrainConfig, load_model, save_model, train, write_metrics_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

_TRAIN_KEYS = {f.name: f.type for f in dataclass_fields(TrainConfig)}


def _parse_config_file(path):
    """key = value lines; # comments; unknown keys rejected."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read config file: {exc}", path=path)
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _TRAIN_KEYS:
            raise ConfigError(
                f"{path}:{lineno}: unknown config key {key!r}; "
                f"recognized keys: {', '.join(sorted(_TRAIN_KEYS))}")
        values[key] = val
    return values


def _coerce(key, val):
    if val is None:
        return None
    if key in ("epochs", "seed", "hidden", "heads", "head_dim", "att_dim",
               "score_dim", "blas_threads"):
        return int(val)
    if key == "optimizer":
        return str(val)
    if key == "max_range":
        if str(val).lower() in ("none", "auto"):
            return None
        return float(val)
    return float(val)


def build_train_config(args):
    """Defaults <- config file <- explicit command-line overrides."""
    merged = {}
    if getattr(args, "config", None):
        for key, val in _parse_config_file(args.config).items():
            merged[key] = _coerce(key, val)
    for key in _TRAIN_KEYS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = _coerce(key, cli_val)
    return TrainConfig(**merged)


def _echo_config(out_path, command, pairs):
    """Write the effective `key = value` config next to the outputs."""
    target = (os.path.join(out_path, "effective_config.txt")
              if os.path.isdir(out_path)
              else f"{out_path}.config.txt")
    lines = [f"command = {command}"]
    for key in sorted(pairs):
        lines.append(f"{key} = {pairs[key]}")
    with open(target, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _train_config_pairs(cfg):
    return {k: getattr(cfg, k) for k in _TRAIN_KEYS}


def _add_train_flags(p):
    group = p.add_argument_group("training configuration (override the config file)")
    group.add_argument("--config", help="key = value config file")
    for key in sorted(_TRAIN_KEYS):
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           help=f"TrainConfig.{key}")


def _noise_pair(text):
    try:
        sigma2, pb = text.split(":")
        return float(sigma2), float(pb)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"noise condition must look like sigma2:p_nlos, got {text!r}")


def _results_root(args):
    out = getattr(args, "out", None)
    if out:
        return out
    root = os.environ.get("NETLOC_RESULTS")
    if root:
        return root
    raise ConfigError("no output directory: pass --out or set NETLOC_RESULTS")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="netloc",
        description="GNN-based cooperative network localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scenario file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--anchors", type=int, required=True)
    p.add_argument("--area", type=float, nargs=2, required=True,
                   metavar=("WIDTH", "HEIGHT"))
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--pb", type=float, default=0.1)
    p.add_argument("--nlos-low", type=float, default=0.0)
    p.add_argument("--nlos-high", type=float, default=10.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on a scenario file")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch metrics CSV path")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scenario file")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", help="predictions CSV path")

    p = sub.add_parser("sweep-threshold", help="GCN RMSE vs hard cutoff")
    p.add_argument("--out")
    p.add_argument("--grid", type=float, nargs="+",
                   help="explicit threshold grid")
    p.add_argument("--noise", type=_noise_pair, nargs="+",
                   default=[(0.1, 0.1)], metavar="SIGMA2:PB")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--anchors", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)

    p = sub.add_parser("sweep-anchors", help="GCN/MLP RMSE vs anchor count")
    p.add_argument("--out")
    p.add_argument("--grid", type=int, nargs="+",
                   default=list(range(20, 161, 20)))
    p.add_argument("--noise", type=_noise_pair, nargs="+",
                   default=[(0.1, 0.1), (0.1, 0.3)], metavar="SIGMA2:PB")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)

    p = sub.add_parser("noise-table", help="RMSE table across noise conditions")
    p.add_argument("--out")
    p.add_argument("--models", nargs="+", choices=MODEL_KINDS,
                   default=list(MODEL_KINDS))
    p.add_argument("--noise", type=_noise_pair, nargs="+", default=None,
                   metavar="SIGMA2:PB")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--anchors", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)

    p = sub.add_parser("spectral", help="spectral report of a scenario's graph")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--threshold", type=float, default=1.2)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--signal", choices=["measured", "noise", "truth"],
                   default="measured")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-theorems", help="run the theorem oracles")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe-steps", type=int, default=2000)

    p = sub.add_parser("bench", help="runtime scaling benchmarks")
    p.add_argument("--kind", choices=["alm1", "gcn", "mgal", "timing"],
                   required=True)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--stress-n", type=int, default=None,
                   help="optional large-N timing run (timing kind)")
    p.add_argument("--out")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    _add_train_flags(p)

    p = sub.add_parser("export", help="export artifacts to CSV")
    psub = p.add_subparsers(dest="what", required=True)
    e = psub.add_parser("positions", help="scenario positions CSV")
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--out", required=True)
    e = psub.add_parser("edges", help="hard-threshold adjacency edge list")
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--threshold", type=float, default=1.2)
    e.add_argument("--out", required=True)
    e = psub.add_parser("histogram", help="learned per-node cutoff histogram")
    e.add_argument("--model-file", required=True)
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--bins", type=int, default=30)
    e.add_argument("--out", required=True)
    e = psub.add_parser("heatmap", help="attention membership/cutoff rows")
    e.add_argument("--model-file", required=True)
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--nodes", type=int, nargs="+", required=True)
    e.add_argument("--out", required=True)
    return parser


def _experiment_spec(args, models=None, noise=None):
    return ExperimentSpec(
        models=tuple(models or getattr(args, "models", ("gcn",))),
        noise_grid=tuple(noise or args.noise),
        anchor_grid=tuple(getattr(args, "grid", None) or range(20, 161, 20)),
        threshold_grid=tuple(getattr(args, "grid", None)
                             or (round(0.2 * k, 1) for k in range(1, 21))),
        seeds=tuple(args.seeds),
        n=args.n,
        n_anchors=getattr(args, "anchors", 50),
        train=build_train_config(args),
    )


def _cmd_generate(args):
    scen = generate_scenario(args.n, args.anchors, tuple(args.area), args.seed)
    noise = NoiseConfig(args.sigma2, args.pb, args.nlos_low, args.nlos_high)
    meas = measure_distances(scen, noise, args.seed)
    save_scenario(args.out, scen, meas)
    _echo_config(args.out, "generate", {
        "n": args.n, "anchors": args.anchors,
        "area": f"{args.area[0]} {args.area[1]}", "sigma2": args.sigma2,
        "pb": args.pb, "nlos_low": args.nlos_low, "nlos_high": args.nlos_high,
        "seed": args.seed,
    })
    print(f"wrote scenario: {args.out} (n={args.n}, anchors={args.anchors})")
    return EXIT_OK


def _cmd_train(args):
    scen, meas = load_scenario(args.infile)
    cfg = build_train_config(args)
    trained = train(args.model, scen, meas, cfg)
    print(f"{args.model}: final anchor loss {trained.metrics.anchor_loss[-1]:.6f}, "
          f"agent RMSE {trained.final_rmse:.6f} m, "
          f"{trained.metrics.seconds[-1]:.2f} s")
    if args.metrics:
        write_metrics_csv(args.metrics, trained.metrics)
    if args.out:
        save_model(args.out, trained)
        _echo_config(args.out, "train",
                     {"model": args.model, "in": args.infile,
                      **_train_config_pairs(cfg)})
        print(f"wrote checkpoint: {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    scen, meas = load_scenario(args.infile)
    model, _cfg = load_model(args.model_file, meas)
    from . import numcore as nc

    graph = nc.DiffGraph()
    out = model.forward(graph, training=False)
    rmse = rmse_agents(out.predictions.data, scen)
    print(f"{model.kind}: agent RMSE {rmse:.6f} m over {scen.n_agents} agents")
    if args.out:
        import csv

        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "is_anchor"])
            for i, row in enumerate(out.predictions.data):
                w.writerow([i, repr(float(row[0])), repr(float(row[1])),
                            int(i < scen.n_anchors)])
    return EXIT_OK


def _cmd_sweep_threshold(args):
    out_dir = _results_root(args)
    spec = _experiment_spec(args, models=("gcn",))
    curves = sweep_threshold(spec, out_dir=out_dir, jobs=args.jobs)
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "sweep-threshold", {
        "grid": list(spec.threshold_grid), "noise": list(spec.noise_grid),
        "seeds": list(spec.seeds), "n": spec.n, "anchors": spec.n_anchors,
        **_train_config_pairs(spec.train)})
    for cond, pts in sorted(curves.items()):
        for th, mean, std in pts:
            print(f"{cond} threshold={th:g}: rmse {mean:.4f} +- {std:.4f}")
    return EXIT_OK


def _cmd_sweep_anchors(args):
    out_dir = _results_root(args)
    spec = _experiment_spec(args)
    args_grid = args.grid
    spec = ExperimentSpec(**{**spec.__dict__, "anchor_grid": tuple(args_grid)})
    curves = sweep_anchors(spec, out_dir=out_dir, jobs=args.jobs)
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "sweep-anchors", {
        "grid": list(spec.anchor_grid), "noise": list(spec.noise_grid),
        "seeds": list(spec.seeds), "n": spec.n,
        **_train_config_pairs(spec.train)})
    for (model, cond), pts in sorted(curves.items()):
        for n_l, mean, std in pts:
            print(f"{model} {cond} anchors={n_l}: rmse {mean:.4f} +- {std:.4f}")
    return EXIT_OK


def _cmd_noise_table(args):
    out_dir = _results_root(args)
    spec = _experiment_spec(args, models=args.models,
                            noise=args.noise or None)
    table = run_noise_table(spec, out_dir=out_dir, jobs=args.jobs)
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "noise-table", {
        "models": list(spec.models), "noise": list(spec.noise_grid),
        "seeds": list(spec.seeds), "n": spec.n, "anchors": spec.n_anchors,
        **_train_config_pairs(spec.train)})
    failures = 0
    for (model, cond), (mean, std, secs, n) in sorted(table.aggregate().items()):
        print(f"{model} {cond}: rmse {mean:.4f} +- {std:.4f} "
              f"({n} seeds, {secs:.1f} s/run)")
    for key, cell in sorted(table.cells.items()):
        if cell.error is not None:
            failures += 1
            print(f"FAILED {key}: {cell.error}")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


def _cmd_spectral(args):
    scen, meas = load_scenario(args.infile)
    g = hard_threshold(meas, args.threshold)
    if args.signal == "measured":
        signal = meas.x
    elif args.signal == "truth":
        signal = scen.true_distances()
    else:
        signal = meas.x - scen.true_distances()
    report = spectral_analysis(g.norm_adjacency, signal, args.k)
    write_spectral_csv(args.out, report)
    _echo_config(args.out, "spectral", {
        "in": args.infile, "threshold": args.threshold, "k": args.k,
        "signal": args.signal})
    print(f"wrote spectral report: {args.out} "
          f"(path gap {report.max_path_gap:.2e}, "
          f"high-band energy ratio {report.band_energy_ratio():.4f})")
    return EXIT_OK


def _cmd_verify_theorems(args):
    report = verify_theorems(seed=args.seed, probe_steps=args.probe_steps)
    text = "\n".join(report.lines())
    print(text)
    if args.out:
        report.write(args.out)
    return EXIT_OK if report.all_passed else EXIT_NUMERIC


def _cmd_bench(args):
    if args.kind == "timing":
        spec = ExperimentSpec(models=("mlp", "gcn", "agnn1", "agnn2"),
                              seeds=tuple(args.seeds),
                              train=build_train_config(args))
        rows = run_timing(spec, n_grid=tuple(args.sizes or (500, 1000)),
                          stress_n=args.stress_n)
        for row in rows:
            if row["error"]:
                print(f"{row['model']} n={row['n']}: FAILED {row['error']}")
            else:
                print(f"{row['model']} n={row['n']}: {row['seconds']:.2f} s "
                      f"(rmse {row['rmse']:.4f})")
        if args.out:
            import csv

            with open(args.out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["model", "n", "seconds", "rmse", "error"])
                for row in rows:
                    w.writerow([row["model"], row["n"], row["seconds"],
                                row["rmse"], row["error"] or ""])
        return EXIT_OK
    defaults = {"alm1": [250, 500, 1000, 2000],
                "gcn": [24000, 48000, 96000],
                "mgal": [40000, 80000, 160000, 320000]}
    report = complexity_bench(args.kind, args.sizes or defaults[args.kind],
                              reps=args.reps)
    print(f"{args.kind}: log-log slope {report.slope:.3f}")
    for size, med in zip(report.sizes, report.medians):
        print(f"  size {size}: median {med * 1e3:.2f} ms")
    if args.out:
        import csv

        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "median_seconds"])
            for size, med in zip(report.sizes, report.medians):
                w.writerow([size, repr(med)])
    return EXIT_OK


def _cmd_export(args):
    if args.what == "positions":
        scen, _ = load_scenario(args.infile)
        export_positions_csv(args.out, scen)
    elif args.what == "edges":
        _, meas = load_scenario(args.infile)
        g = hard_threshold(meas, args.threshold)
        export_edge_list_csv(args.out, g.adjacency)
    elif args.what == "histogram":
        scen, meas = load_scenario(args.infile)
        model, cfg = load_model(args.model_file, meas)
        from .train import TrainedModel, MetricsRecord

        shim = TrainedModel(kind=model.kind, params=model.params, config=cfg,
                            metrics=MetricsRecord(), model=model)
        export_threshold_histogram(shim, path=args.out, bins=args.bins)
    else:  # heatmap
        scen, meas = load_scenario(args.infile)
        model, cfg = load_model(args.model_file, meas)
        from .train import TrainedModel, MetricsRecord

        shim = TrainedModel(kind=model.kind, params=model.params, config=cfg,
                            metrics=MetricsRecord(), model=model)
        export_attention_heatmaps(shim, args.nodes, path=args.out)
    print(f"wrote {args.what}: {args.out}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep-threshold": _cmd_sweep_threshold,
    "sweep-anchors": _cmd_sweep_anchors,
    "noise-table": _cmd_noise_table,
    "spectral": _cmd_spectral,
    "verify-theorems": _cmd_verify_theorems,
    "bench": _cmd_bench,
    "export": _cmd_export,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except DataFormatError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, OSError) as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"error:numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
