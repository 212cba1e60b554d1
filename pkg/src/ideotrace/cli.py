"""``ideotrace`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
Every command writes ``manifest.json`` to the output directory before any
other output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .baselines import train_rasch, train_static_mf
from .data import BinningConfig, LabelSet, TimeBinnedObservations, build_graph, ingest_events, load_labels
from .errors import DataFormatError, DivergedError
from .evaluation import (
    derive_user_ground_truth,
    kmeans2,
    polarization_trace,
    predict_unobserved_rasch,
    predict_unobserved_static,
    predict_unobserved_users,
    recovery_metrics,
    website_axis,
)
from .model import Hyperparameters, ModelState
from .optim import AdamConfig, configs_from_mapping, cross_validate, read_config, read_grid, train
from .synth import SynthConfig, generate, write_files

logger = logging.getLogger("ideotrace")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
INSUFFICIENT = "insufficient labels"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(float(x), ".17g")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, seed: int, outputs: list[str]):
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "inputs": {k: {"path": str(p), "sha256": _digest(Path(p))} for k, p in sorted(inputs.items())},
        "seed": seed,
        "version": __version__,
        "outputs": [str(out / name) for name in outputs],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such file")
    return p


def _settings(args, keys) -> dict[str, str]:
    """Config-file values overlaid by explicitly given flags."""
    values = read_config(args.config) if args.config else {}
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return values


_HP_FLAGS = ("K", "beta", "gamma", "lambda", "tau")
_ADAM_FLAGS = tuple(f.name for f in fields(AdamConfig) if f.name != "seed")


def _model_configs(args) -> tuple[dict[str, str], Hyperparameters, AdamConfig]:
    values = _settings(args, _HP_FLAGS + _ADAM_FLAGS)
    values["seed"] = str(args.seed)
    hp, adam = configs_from_mapping(values)
    resolved = {("lambda" if k == "lam" else k): v for k, v in asdict(hp).items()}
    resolved.update(asdict(adam))
    return resolved, hp, adam


def _add_model_flags(p):
    p.add_argument("--K", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--patience", type=int)


# ingest


_BIN_FLAGS = ("start", "end", "bin_width", "min_shares_per_bin", "max_websites")


def cmd_ingest(args) -> int:
    events = _require(args.events, "--events")
    edges = _require(args.edges, "--edges")
    labels_path = _require(args.labels, "--labels") if args.labels else None
    values = _settings(args, _BIN_FLAGS)
    if "start" not in values or "end" not in values:
        raise UsageError("binning needs start and end (flags or --config)")
    binning = BinningConfig(**{k: (None if values[k] == "None" else int(values[k])) for k in _BIN_FLAGS if k in values})
    out = Path(args.out_dir)
    inputs = {"events": events, "edges": edges}
    if labels_path:
        inputs["labels"] = labels_path
    _write_manifest(out, "ingest", asdict(binning), inputs, args.seed, ["obs.txt", "edges.tsv", "labels.tsv"])
    obs = ingest_events(events, binning)
    graph = build_graph(edges, obs.user_index)
    labels = load_labels(labels_path) if labels_path else LabelSet()
    obs.save(out / "obs.txt")
    (out / "edges.tsv").write_text(graph.to_text(obs.user_index), encoding="utf-8")
    (out / "labels.tsv").write_text(labels.to_text(), encoding="utf-8")
    logger.info("ingested %d websites x %d users over %d bins", *obs.shape, obs.n_bins)
    return EXIT_OK


# train


def cmd_train(args) -> int:
    obs_path = _require(args.obs, "--obs")
    graph_path = _require(args.graph, "--graph") if args.graph else None
    grid_path = _require(args.cv, "--cv") if args.cv else None
    resolved, hp, adam = _model_configs(args)
    out = Path(args.out_dir)
    inputs = {"obs": obs_path}
    outputs = ["model.txt", "loss_trace.tsv"]
    if graph_path:
        inputs["graph"] = graph_path
    if grid_path:
        inputs["grid"] = grid_path
        resolved["folds"] = args.folds
        outputs.append("cv.tsv")
    _write_manifest(out, "train", resolved, inputs, args.seed, outputs)

    obs = TimeBinnedObservations.load(obs_path)
    graph = build_graph(graph_path, obs.user_index) if graph_path else None
    if grid_path:
        grid = read_grid(grid_path, hp)
        cv = cross_validate(obs, graph, grid, args.folds, args.seed, adam)
        rows = ["gamma\tlambda\ttau\tbeta\tK\tmean_f1\n"]
        for cell, score, _ in cv.scores:
            rows.append("\t".join(_fmt(v) for v in (cell.gamma, cell.lam, cell.tau, cell.beta)) + f"\t{cell.K}\t{_fmt(score)}\n")
        (out / "cv.tsv").write_text("".join(rows), encoding="utf-8")
        hp = cv.best
    try:
        report = train(obs, graph, hp, adam)
    except DivergedError as exc:
        if exc.state is not None:
            exc.state.save(out / "model.txt.diverged")
        raise
    report.final_state.save(out / "model.txt")
    (out / "loss_trace.tsv").write_text("epoch\tloss\n" + report.trace_text(), encoding="utf-8")
    return EXIT_OK


# evaluate


def _labels_codes(labels_path, obs):
    return None if labels_path is None else load_labels(labels_path).codes_for(obs.website_index)


def cmd_evaluate(args) -> int:
    model_path = _require(args.model, "--model")
    obs_path = _require(args.obs, "--obs")
    labels_path = _require(args.labels, "--labels") if args.labels else None
    predicting = args.predict_obs is not None
    val_path = _require(args.predict_obs, "--predict-obs") if predicting else None
    val_graph_path = _require(args.predict_graph, "--predict-graph") if args.predict_graph else None
    if val_graph_path and not predicting:
        raise UsageError("--predict-graph needs --predict-obs")
    resolved, hp, adam = _model_configs(args)
    resolved["threshold"] = args.threshold
    inputs = {"model": model_path, "obs": obs_path}
    for k, p in (("labels", labels_path), ("predict_obs", val_path), ("predict_graph", val_graph_path)):
        if p:
            inputs[k] = p
    out = Path(args.out_dir)
    _write_manifest(out, "evaluate", resolved, inputs, args.seed, ["metrics.tsv"] + (["f1.tsv"] if predicting else []))

    state = ModelState.load(model_path)
    obs = TimeBinnedObservations.load(obs_path)
    if state.W.shape[0] != obs.shape[0] or state.C.shape[1] != obs.shape[1]:
        raise DataFormatError("checkpoint does not match the observations", str(model_path))
    codes = _labels_codes(labels_path, obs)
    metrics = recovery_metrics(state, obs, codes)
    rows = ["metric\tbin\tvalue\n"]
    if labels_path is not None:
        value = INSUFFICIENT if metrics.website_spearman is None else _fmt(metrics.website_spearman)
        rows.append(f"website_spearman\tall\t{value}\n")
    for t, r in enumerate(metrics.user_pearson_per_bin):
        rows.append(f"user_pearson\t{t}\t{_fmt(r)}\n")
    rows.append(f"user_pearson_mean\tall\t{_fmt(metrics.user_pearson_mean)}\n")
    rows.append(f"user_pearson_pooled\tall\t{_fmt(metrics.user_pearson_pooled)}\n")
    (out / "metrics.tsv").write_text("".join(rows), encoding="utf-8")

    if predicting:
        val = TimeBinnedObservations.load(val_path)
        val_graph = build_graph(val_graph_path, val.user_index) if val_graph_path else None
        kw = dict(threshold=args.threshold, website_index=obs.website_index)
        results = [
            ("IdeoTrace", predict_unobserved_users(state, val, val_graph, hp, adam, **kw)),
            ("Rasch", predict_unobserved_rasch(train_rasch(obs, adam).final_state, val, adam, **kw)),
            ("StaticMF", predict_unobserved_static(train_static_mf(obs, hp, adam).final_state, val, hp, adam, **kw)),
        ]
        lines = ["method\tf1_mean\tf1_std\tf1_pooled\n"]
        lines += [f"{name}\t{_fmt(r.mean)}\t{_fmt(r.std)}\t{_fmt(r.pooled)}\n" for name, r in results]
        (out / "f1.tsv").write_text("".join(lines), encoding="utf-8")
    return EXIT_OK


# trace


def cmd_trace(args) -> int:
    model_path = _require(args.model, "--model")
    obs_path = _require(args.obs, "--obs") if args.obs else None
    labels_path = _require(args.labels, "--labels") if args.labels else None
    if labels_path and not obs_path:
        raise UsageError("--labels needs --obs to align websites")
    inputs = {"model": model_path}
    for k, p in (("obs", obs_path), ("labels", labels_path)):
        if p:
            inputs[k] = p
    out = Path(args.out_dir)
    outputs = ["distance_pct.tsv", "shift_pct.tsv", "ttest.tsv", "assignment.tsv"]
    _write_manifest(out, "trace", {"kmeans_restarts": 20}, inputs, args.seed, outputs)

    state = ModelState.load(model_path)
    ground_truth = reference = None
    users = [str(j) for j in range(state.C.shape[1])]
    if obs_path:
        obs = TimeBinnedObservations.load(obs_path)
        if state.W.shape[0] != obs.shape[0] or state.C.shape[1] != obs.shape[1]:
            raise DataFormatError("checkpoint does not match the observations", str(model_path))
        users = list(obs.user_index)
        scores, reference = website_axis(state.W, _labels_codes(labels_path, obs))
        ground_truth = derive_user_ground_truth(state.W, obs, scores).pooled
    clusters = kmeans2(state.C[0], seed=args.seed)
    pt = polarization_trace(state.C, clusters.assignment, ground_truth, reference)
    (out / "distance_pct.tsv").write_text(pt.distance_text(), encoding="utf-8")
    (out / "shift_pct.tsv").write_text(pt.shift_text(), encoding="utf-8")
    (out / "ttest.tsv").write_text(pt.ttest_text(), encoding="utf-8")
    (out / "assignment.tsv").write_text(
        "user\tcluster\n" + "".join(f"{u}\t{c}\n" for u, c in zip(users, pt.cluster_assignment)),
        encoding="utf-8",
    )
    return EXIT_OK


# synth

_SYNTH_FIELDS = {f.name: f for f in fields(SynthConfig)}


def cmd_synth(args) -> int:
    values = _settings(args, [k for k in _SYNTH_FIELDS if k != "seed"])
    values["seed"] = str(args.seed)
    unknown = sorted(set(values) - set(_SYNTH_FIELDS))
    if unknown:
        raise UsageError(f"unknown synth keys: {', '.join(unknown)}")
    kw = {k: (int(v) if _SYNTH_FIELDS[k].type == "int" else float(v)) for k, v in values.items()}
    cfg = SynthConfig(**kw)
    out = Path(args.out_dir)
    outputs = ["events.tsv", "edges.tsv", "labels.tsv", "truth.txt", "truth_obs.txt", "ingest.cfg", "synth.cfg"]
    inputs = {"config": Path(args.config)} if args.config else {}
    _write_manifest(out, "synth", asdict(cfg), inputs, args.seed, outputs)
    write_files(generate(cfg), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ideotrace", description="Temporal ideology estimation from share logs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, help="defaults to the config file's seed, else 0")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--out-dir", dest="out_dir", default=".")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="bin a share log and build the retweet graph")
    p.add_argument("--events", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--labels")
    p.add_argument("--start", type=int)
    p.add_argument("--end", type=int)
    p.add_argument("--bin-width", dest="bin_width", type=int)
    p.add_argument("--min-shares-per-bin", dest="min_shares_per_bin", type=int)
    p.add_argument("--max-websites", dest="max_websites", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the model")
    p.add_argument("--obs", required=True)
    p.add_argument("--graph")
    p.add_argument("--cv", help="grid file, one key=value cell per line")
    p.add_argument("--folds", type=int, default=3)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="recovery metrics and held-out F1")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--labels")
    p.add_argument("--predict-obs", dest="predict_obs")
    p.add_argument("--predict-graph", dest="predict_graph")
    p.add_argument("--threshold", type=float, default=0.5)
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("trace", help="polarization over time")
    p.add_argument("--model", required=True)
    p.add_argument("--obs")
    p.add_argument("--labels")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("synth", help="write a synthetic fixture")
    for name, f in _SYNTH_FIELDS.items():
        if name != "seed":
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=int if f.type == "int" else float)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is None:
            args.seed = int(read_config(args.config).get("seed", 0)) if args.config else 0
        return args.func(args)
    except UsageError as exc:
        print(f"ideotrace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"ideotrace: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"ideotrace: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
