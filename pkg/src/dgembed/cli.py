"""Command-line entry point.

Subcommands: ingest, generate-sbm, train, eval, inspect, export-embeddings.

Every failure prints one line to stderr of the form::

    error: code=<tag> exit=<n> message=<json string>

Exit status is 2 for configuration, data and shape problems and 3 when
training diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import evaluation, graph, models, training
from .errors import ConfigurationError, ContractError, DataError, DgembedError, TrainingError

log = logging.getLogger("dgembed")

DATA_ROOT_ENV = "DGEMBED_DATA"

# keys accepted in a run config besides the model fields
RUN_KEYS = {"dataset", "out", "preset", "eval_ratio", "use_sigma"}
MODEL_KEYS = {f.name for f in dataclasses.fields(models.ModelConfig)}


class CliError(Exception):
    def __init__(self, error: Exception, status: int):
        self.error = error
        self.status = status


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def resolve_data_path(path) -> Path:
    """Relative dataset paths are looked up under ``$DGEMBED_DATA`` when it is set."""
    path = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not path.is_absolute() and root and not path.exists():
        return Path(root) / path
    return path


# --- run configs ----------------------------------------------------------------------

def load_run_config(path, seed: int | None = None, out: str | None = None) -> tuple:
    """Parse a flat YAML run config into ``(ModelConfig, run_options)``.

    ``preset`` names a benchmark whose published hyperparameters are used
    as defaults; explicit keys override them.
    """
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a flat mapping of keys to values")
    nested = [k for k, v in raw.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigurationError(f"config must be flat; nested values under {sorted(nested)}")
    unknown = set(raw) - RUN_KEYS - MODEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if not raw.get("dataset"):
        raise ConfigurationError("missing required config field 'dataset'")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out

    model_values = {k: v for k, v in raw.items() if k in MODEL_KEYS}
    if raw.get("preset"):
        kind = model_values.pop("model", "dg-mamba")
        # the published node count belongs to the published graph; take n from the dataset
        model_values.setdefault("n", 0)
        cfg = models.published_config(kind, raw["preset"], **model_values)
    else:
        cfg = models.ModelConfig(**model_values)
    run = {
        "dataset": str(raw["dataset"]),
        "out": str(raw.get("out") or "run"),
        "eval_ratio": int(raw.get("eval_ratio", 10)),
        "use_sigma": bool(raw.get("use_sigma", False)),
    }
    return cfg, run


def provenance_header(config_hash: str, seed: int, **extra) -> str:
    items = [f"config_hash={config_hash}", f"seed={seed}"]
    items += [f"{k}={v}" for k, v in sorted(extra.items())]
    return " ".join(items)


def write_matrix_csv(matrix: np.ndarray, path, header: str = "") -> Path:
    """Plain CSV of floats written with ``repr`` so reading back is exact."""
    path = Path(path)
    lines = [f"# {header}"] if header else []
    lines += [",".join(repr(float(x)) for x in row) for row in np.atleast_2d(matrix)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_matrix_csv(path) -> np.ndarray:
    rows = [r for r in Path(path).read_text(encoding="utf-8").splitlines() if r and not r.startswith("#")]
    return np.array([[float(x) for x in r.split(",")] for r in rows])


# --- commands -------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    split = tuple(args.split) if args.split else None
    g = graph.load_edge_list(
        resolve_data_path(args.input), format=args.format, bin_width=args.bin_width,
        directed=args.directed, split=split,
    )
    options = {"format": args.format, "bin_width": args.bin_width, "directed": args.directed, "split": split}
    prov = {"config_hash": _hash(options), "seed": args.seed, "source": Path(args.input).name}
    graph.save_bundle(g, args.out, provenance=prov)
    print(json.dumps({"out": str(args.out), "n": g.n, "T": g.T, "edges": sum(s.num_edges for s in g.snapshots)}))
    return 0


def cmd_generate_sbm(args) -> int:
    options = {
        "n": args.n, "communities": args.communities, "p_in": args.p_in, "p_out": args.p_out,
        "churn": [args.churn_min, args.churn_max], "T": args.T,
    }
    g = graph.generate_sbm(
        args.n, args.communities, args.p_in, args.p_out, (args.churn_min, args.churn_max), args.T,
        np.random.default_rng(args.seed),
    )
    graph.save_bundle(g, args.out, provenance={"config_hash": _hash(options), "seed": args.seed})
    print(json.dumps({"out": str(args.out), "n": g.n, "T": g.T, "edges": sum(s.num_edges for s in g.snapshots)}))
    return 0


def _load_graph(path) -> graph.TemporalGraph:
    path = resolve_data_path(path)
    if path.is_dir():
        return graph.load_bundle(path)
    if not path.exists():
        raise DataError(f"dataset {path} does not exist")
    return graph.load_edge_list(path)


def cmd_train(args) -> int:
    cfg, run = load_run_config(args.config, seed=args.seed, out=args.out)
    g = _load_graph(run["dataset"])
    if cfg.n == 0:
        cfg = dataclasses.replace(cfg, n=g.n)
    cfg.validate()
    if cfg.n != g.n:
        raise ContractError(f"config n={cfg.n} does not match dataset n={g.n}")
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    chash = training.config_hash(cfg)
    header = provenance_header(chash, cfg.seed, model=cfg.model)

    start = time.perf_counter()
    model, history = training.fit(g, cfg)
    elapsed = time.perf_counter() - start

    (out / "history.csv").write_text(history.to_csv(header), encoding="utf-8")
    extra = {"epochs_run": history.epochs_run, "best_epoch": history.best_epoch, "dataset": Path(run["dataset"]).name}
    training.save_checkpoint(model, out / "model.ckpt", extra=extra)
    training.write_embeddings(training.embed_all(model, g), out / "embeddings", header)
    if args.plot:
        from .plotting import plot_history

        plot_history(history.train_loss, history.val_loss, out / "history.png", history.best_epoch, cfg.model)
    summary = {
        "out": str(out), "config_hash": chash, "seed": cfg.seed, "epochs_run": history.epochs_run,
        "best_epoch": history.best_epoch, "train_loss_first": history.train_loss[0],
        "train_loss_last": history.train_loss[-1],
    }
    if args.timing:
        summary["wall_time_s"] = elapsed
    print(json.dumps(summary))
    return 0


def _checkpoint_and_graph(args):
    model, header = training.load_checkpoint(args.checkpoint)
    g = _load_graph(args.dataset)
    if model.cfg.n != g.n:
        raise ContractError(f"checkpoint expects n={model.cfg.n} nodes, dataset has n={g.n}")
    return model, header, g


def cmd_eval(args) -> int:
    model, header, g = _checkpoint_and_graph(args)
    cfg = model.cfg
    seed = cfg.seed if args.seed is None else args.seed
    start = time.perf_counter()
    if args.embeddings:
        embeddings = training.read_embeddings(args.embeddings)
    else:
        embeddings = training.embed_all(model, g)
    metrics = evaluation.evaluate(embeddings, g, seed=seed, ratio=args.ratio, use_sigma=args.use_sigma)
    elapsed = time.perf_counter() - start
    record = json.loads(evaluation.metrics_record(
        metrics, header["extra"].get("dataset", Path(args.dataset).name), cfg.model, cfg.lookback, seed,
        header["extra"].get("epochs_run", 0), elapsed if args.timing else None,
    ))
    record["config_hash"] = header["config_hash"]
    line = json.dumps(record)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "a" if args.append else "w", encoding="utf-8") as fh:
            fh.write(line + "\n")
    print(line)
    return 0


def cmd_inspect(args) -> int:
    model, header, g = _checkpoint_and_graph(args)
    if isinstance(model, models.DGMamba):
        matrix_fn, kind = model.hidden_attention, "hidden_attention"
    elif isinstance(model, models.STTransformerG2G):
        matrix_fn, kind = model.attention_matrix, "attention"
    else:
        raise ConfigurationError(f"model {model.cfg.model!r} has no inspectable matrix")
    if args.kind not in ("auto", kind):
        raise ConfigurationError(f"model {model.cfg.model!r} does not provide {args.kind} matrices")
    if args.timestamps:
        stamps = [int(x) for x in args.timestamps.split(",") if x.strip()]
    else:
        stamps = list(range(model.lookback, g.T))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    head = provenance_header(header["config_hash"], model.cfg.seed, kind=kind)
    written = []
    for t in stamps:
        matrix = matrix_fn(g, t)
        path = write_matrix_csv(matrix, out / f"{kind}_t{t:04d}.csv", f"{head} t={t}")
        written.append(str(path))
        if args.plot:
            from .plotting import plot_matrix

            plot_matrix(matrix, path.with_suffix(".png"), f"{model.cfg.model} t={t}", lower_only=kind == "hidden_attention")
    print(json.dumps({"kind": kind, "files": written}))
    return 0


def cmd_export_embeddings(args) -> int:
    model, header, g = _checkpoint_and_graph(args)
    embeddings = training.embed_all(model, g)
    head = provenance_header(header["config_hash"], model.cfg.seed, model=model.cfg.model)
    out = Path(args.out)
    if args.format == "csv":
        paths = training.write_embeddings(embeddings, out, head)
    else:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "embeddings.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"config_hash": header["config_hash"], "seed": model.cfg.seed, "model": model.cfg.model}) + "\n")
            for t, (mu, sigma) in sorted(embeddings.items()):
                fh.write(json.dumps({"t": t, "mu": mu.tolist(), "sigma": sigma.tolist()}) + "\n")
        paths = [path]
    print(json.dumps({"files": len(paths), "out": str(out)}))
    return 0


# --- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgembed", description="Dynamic graph embedding with SSM and transformer encoders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="edge list -> dataset bundle")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("snapshot", "binned"), default="snapshot")
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--split", type=int, nargs=2, metavar=("TRAIN_END", "VAL_END"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate-sbm", help="synthetic evolving SBM -> dataset bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--communities", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.2)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--churn-min", type=int, default=10)
    p.add_argument("--churn-max", type=int, default=20)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate_sbm)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true", help="also render history.png")
    p.add_argument("--timing", action="store_true", help="report wall time (not reproducible)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "link-prediction metrics for a checkpoint"),
        ("inspect", cmd_inspect, "attention / hidden-attention matrices as CSV"),
        ("export-embeddings", cmd_export_embeddings, "per-timestamp Gaussian embeddings"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=name != "eval", default=None)
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--seed", type=int, default=None, help="sampling seed (default: the checkpoint's)")
            p.add_argument("--ratio", type=int, default=10)
            p.add_argument("--use-sigma", action="store_true")
            p.add_argument("--embeddings", default=None, help="score exported embedding CSVs instead")
            p.add_argument("--append", action="store_true")
            p.add_argument("--timing", action="store_true")
            p.add_argument("--format", choices=("jsonl",), default="jsonl")
        elif name == "inspect":
            p.add_argument("--timestamps", default="", help="comma-separated, default all")
            p.add_argument("--kind", choices=("auto", "hidden_attention", "attention"), default="auto")
            p.add_argument("--plot", action="store_true", help="also render PNG heatmaps")
            p.add_argument("--format", choices=("csv",), default="csv")
        else:
            p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    return parser


def exit_status(exc: Exception) -> int:
    if isinstance(exc, TrainingError):
        return 3
    if isinstance(exc, (DgembedError, KeyError, ValueError, OSError)):
        return 2
    return 1


def format_error(exc: Exception, status: int) -> str:
    code = getattr(exc, "code", type(exc).__name__)
    message = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    return f"error: code={code} exit={status} message={json.dumps(message)}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parsable line, never a traceback
        status = exit_status(exc)
        print(format_error(exc, status), file=sys.stderr)
        if status == 1:
            log.debug("unexpected failure", exc_info=True)
        return status


if __name__ == "__main__":
    sys.exit(main())
