"""``uqbench`` command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 too many
simulation blow-ups, 4 training divergence or an unscorable model.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__, config, container, datasets, metrics, plotting, uq
from .errors import (
    AllStartsFailed,
    BlowUpBudgetExceeded,
    CholeskyFailure,
    ConfigError,
    CorruptFile,
    DegenerateEnsemble,
    DimensionMismatch,
    DivergedLoss,
    FormatVersionMismatch,
    InsufficientRows,
    NoEpistemicUQ,
    ZeroUncertainty,
)

log = logging.getLogger("uqbench")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_TRAINING = 4

_EXIT_CODES = (
    ((BlowUpBudgetExceeded,), EXIT_BLOWUP),
    ((DivergedLoss, ZeroUncertainty, NoEpistemicUQ, AllStartsFailed, CholeskyFailure), EXIT_TRAINING),
    (
        (
            ConfigError,
            DimensionMismatch,
            InsufficientRows,
            FormatVersionMismatch,
            CorruptFile,
            DegenerateEnsemble,
            FileNotFoundError,
            ValueError,
        ),
        EXIT_CONFIG,
    ),
)


def _timestamp(value):
    """ISO creation stamp: explicit flag, else SOURCE_DATE_EPOCH, else the fixed default."""
    if value is None:
        return datasets.default_timestamp()
    try:
        return datetime.fromtimestamp(int(value), tz=timezone.utc).isoformat()
    except ValueError:
        return datetime.fromisoformat(value).isoformat()


def _parser_for(path):
    p = config._parser()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        p.read(path)
    return p


def _ensure_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)


# --- generate -----------------------------------------------------------------------


def cmd_generate(args):
    p = _parser_for(args.config)
    ds = p["dataset"]
    for key, value in (("z_star", args.z_star), ("t_end", args.t_end), ("dt", args.dt)):
        if value is not None:
            ds[key] = repr(value)
    if args.dim is not None:
        if args.dim < 2 or args.dim % 2:
            raise ConfigError(f"--dim must be a positive even number (2m), got {args.dim}")
        ds["m"] = str(args.dim // 2)
    if args.m is not None:
        ds["m"] = str(args.m)
    seed = args.seed if args.seed is not None else int(p["uqbench"]["seed"])
    meta = config.generation_meta(ds, seed, _timestamp(args.timestamp))
    n = args.n if args.n is not None else int(ds["n"])
    _ensure_dir(os.path.dirname(args.out))
    data = datasets.generate(meta, n, threads=args.threads, export_fields=args.export_fields)
    digest = datasets.save(data, args.out)
    print(f"{args.out}: {len(data)} rows, {len(data.quarantine)} quarantined, sha256 {digest}")
    return EXIT_OK


# --- train --------------------------------------------------------------------------


def _override_values(args):
    values = {"kind": args.model}
    for key, attr in (
        ("dropout_rate", "rd"),
        ("n_e", "ne"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("learning_rate", "lr"),
        ("l2_weight", "l2"),
    ):
        v = getattr(args, attr)
        if v is not None:
            values[key] = str(v)
    if args.hidden is not None:
        values["hidden"] = args.hidden
    if args.functional:
        values["functional"] = "true"
    return values


def cmd_train(args):
    p = _parser_for(args.config)
    values = dict(p["training"])
    values.update(_override_values(args))
    seed = args.seed if args.seed is not None else int(p["uqbench"]["seed"])
    cfg = config.surrogate_config(values, "train", seed, args.threads)
    data = datasets.load(args.data)
    n_train = args.n_train if args.n_train is not None else int(p["dataset"]["n_train"])
    split_seed = args.split_seed if args.split_seed is not None else int(p["dataset"]["split_seed"])
    sp = datasets.split(data, n_train, split_seed)
    model = uq.train_surrogate(cfg.kind, data.subset(sp.train_indices), cfg)
    model.info = {
        "data_sha256": container.file_digest(args.data),
        "n_train": n_train,
        "split_seed": split_seed,
    }
    _ensure_dir(os.path.dirname(args.out))
    digest = uq.save_model(model, args.out)
    print(f"{args.out}: {cfg.kind} trained on {n_train} rows, sha256 {digest}")
    return EXIT_OK


# --- evaluate -----------------------------------------------------------------------


def _validation(model, data):
    info = model.info
    if "n_train" not in info:
        raise ConfigError("model snapshot records no training split; cannot rebuild the validation set")
    if model.functional and data.functional_inputs is None:
        raise DimensionMismatch("functional model but the dataset carries no functional inputs")
    width = data.features(model.functional).shape[1]
    if width != model.input_dim:
        raise DimensionMismatch(
            f"model expects {model.input_dim} input features, dataset provides {width}"
        )
    sp = datasets.split(data, info["n_train"], info["split_seed"])
    return data.subset(sp.val_indices)


def write_report(entries, validation, outdir, prefix=""):
    """CSV tables, JSON summary and figures for one comparison; returns written paths."""
    _ensure_dir(outdir)
    paths = []

    def path(name):
        full = os.path.join(outdir, prefix + name)
        paths.append(full)
        return full

    columns = {"y": validation.outputs}
    for e in entries:
        columns[f"{e.name}_mu"] = e.posterior.mu
        columns[f"{e.name}_sigma_eps"] = e.posterior.sigma_eps
        columns[f"{e.name}_sigma_n"] = e.posterior.sigma_n
        if e.nr is not None:
            columns[f"{e.name}_z"] = e.nr.z_values
    metrics.write_columns_csv(path("predictions.csv"), columns)
    for e in entries:
        if e.nr is not None:
            metrics.write_histogram_csv(path(f"nr_hist_{e.name}.csv"), e.nr.histogram, e.nr.reference)
        if e.uncertainty is not None:
            metrics.write_histogram_csv(path(f"sigma_eps_hist_{e.name}.csv"), e.uncertainty.histogram)
    metrics.write_json(path("summary.json"), metrics.summary(entries))
    if any(e.nr is not None for e in entries):
        plotting.nr_figure(entries, path("nr.png"))
    if any(e.uncertainty is not None for e in entries):
        plotting.sigma_eps_figure(entries, path("sigma_eps.png"))
    plotting.parity_figure(entries, validation.outputs, path("parity.png"))
    return paths


def cmd_evaluate(args):
    model = uq.load_model(args.model)
    data = datasets.load(args.data)
    val = _validation(model, data)
    entries = metrics.report({model.kind: model}, val, seed=args.seed)
    nr = entries[0].nr
    if nr is None:
        # raises ZeroUncertainty with the offending rows
        metrics.normalized_residuals(entries[0].posterior, (None, val.outputs))
    write_report(entries, val, args.out)
    print(f"{model.kind}: {len(nr.z_values)} residuals, NR mean {nr.mean:.4f}, variance {nr.variance:.4f}")
    return EXIT_OK


# --- convergence --------------------------------------------------------------------


def write_convergence(curves, outdir, reference, prefix=""):
    _ensure_dir(outdir)
    paths = []
    for key in ("log_pdf_difference", "mean_squared_difference"):
        full = os.path.join(outdir, f"{prefix}convergence_{key}.csv")
        metrics.write_columns_csv(full, {"n_e": curves["n_e"], key: curves[key]})
        paths.append(full)
    fig = os.path.join(outdir, f"{prefix}convergence.png")
    plotting.convergence_figure(curves, fig, reference)
    paths.append(fig)
    return paths


def _grid(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--grid must be comma-separated integers, not {text!r}") from None


def cmd_convergence(args):
    model = uq.load_model(args.model)
    if model.kind not in uq.MEMBER_ENSEMBLES | uq.PASS_ENSEMBLES:
        raise ConfigError(f"convergence needs an ensemble variant, not {model.kind}")
    val = _validation(model, datasets.load(args.data))
    curves = uq.convergence_study(model, val, _grid(args.grid), args.reference, seed=args.seed)
    write_convergence(curves, args.out, args.reference)
    for n, a, b in zip(curves["n_e"], curves["log_pdf_difference"], curves["mean_squared_difference"]):
        print(f"n_e={n:4d}  log-pdf diff {a:.6g}  mean sq diff {b:.6g}")
    return EXIT_OK


# --- run ----------------------------------------------------------------------------


def cmd_run(args):
    cfg = config.load(args.config, created=_timestamp(args.timestamp))
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    out = args.out or cfg.output
    _ensure_dir(out)
    artifacts = []

    ds_cfg = cfg.dataset
    data_path = os.path.join(out, "dataset.uqb")
    data = datasets.generate(ds_cfg.meta, ds_cfg.n, threads=cfg.threads)
    datasets.save(data, data_path)
    artifacts.append(data_path)
    log.info("generated %d rows (%d quarantined)", len(data), len(data.quarantine))
    sp = datasets.split(data, ds_cfg.n_train, ds_cfg.split_seed)
    train, val = data.subset(sp.train_indices), data.subset(sp.val_indices)

    models, failures = {}, {}
    model_dir = os.path.join(out, "models")
    _ensure_dir(model_dir)
    for name, mcfg in cfg.models.items():
        try:
            log.info("training %s (%s)", name, mcfg.kind)
            model = uq.train_surrogate(mcfg.kind, train, replace(mcfg, threads=cfg.threads))
        except (DivergedLoss, AllStartsFailed, CholeskyFailure) as exc:
            if not args.keep_going:
                raise
            failures[name] = f"{type(exc).__name__}: {exc}"
            log.error("model %s failed: %s", name, exc)
            continue
        model.info = {"n_train": ds_cfg.n_train, "split_seed": ds_cfg.split_seed}
        path = os.path.join(model_dir, f"{name}.uqb")
        uq.save_model(model, path)
        artifacts.append(path)
        models[name] = model

    report_dir = os.path.join(out, "report")
    entries = metrics.report(models, val, seed=cfg.seed)
    artifacts += write_report(entries, val, report_dir)

    if cfg.convergence is not None and cfg.convergence.model in models:
        c = cfg.convergence
        curves = uq.convergence_study(models[c.model], val, c.grid, c.reference, seed=cfg.seed, bins=cfg.bins)
        artifacts += write_convergence(curves, report_dir, c.reference, prefix=f"{c.model}_")

    config_copy = os.path.join(out, "config.cfg")
    with open(config_copy, "w") as fh:
        fh.write(cfg.source)
    artifacts.append(config_copy)

    manifest = {
        "generator_version": __version__,
        "seed": cfg.seed,
        "failures": failures,
        "artifacts": [
            {"path": os.path.relpath(a, out), "sha256": container.file_digest(a)} for a in sorted(artifacts)
        ],
    }
    manifest_path = os.path.join(out, "manifest.json")
    metrics.write_json(manifest_path, manifest)
    print(f"{manifest_path}: {len(artifacts)} artifacts, sha256 {container.file_digest(manifest_path)}")
    for name, item in metrics.summary(entries).items():
        shown = ", ".join(f"{k} {v:.4g}" for k, v in item.items() if isinstance(v, float))
        print(f"  {name}: {shown}")
    return EXIT_OK


# --- inspect ------------------------------------------------------------------------


def cmd_inspect(args):
    header = container.read_header(args.file)
    if args.json:
        print(json.dumps(header, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"kind: {header['kind']}  format version: {header['version']}")
    print(json.dumps(header["meta"], indent=2, sort_keys=True))
    for s in header["sections"]:
        print(f"  {s['name']:<24} shape {tuple(s['shape'])}  sha256 {s['sha256'][:16]}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="uqbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"uqbench {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample coefficients, simulate, and write a dataset")
    dims = g.add_mutually_exclusive_group()
    dims.add_argument("--m", type=int, help="KL truncation order (input dimension 2m)")
    dims.add_argument("--dim", type=int, help="input dimension 2m")
    g.add_argument("--n", type=int)
    g.add_argument("--z-star", type=float)
    g.add_argument("--t-end", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--export-fields", action="store_true", help="also store final fields")
    g.add_argument("--timestamp", help="creation stamp (epoch seconds or ISO 8601)")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one surrogate on a dataset's training split")
    t.add_argument("--model", required=True, choices=uq.KINDS)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--n-train", type=int)
    t.add_argument("--split-seed", type=int)
    t.add_argument("--rd", type=float, help="dropout rate")
    t.add_argument("--ne", type=int, help="members or inference passes")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--l2", type=float)
    t.add_argument("--hidden", help="comma-separated widths, e.g. 64,64,64,64")
    t.add_argument("--functional", action="store_true", help="train on the 1024-wide initial-condition trace")
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="normalized residuals and uncertainty histograms")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0, help="prediction seed for stochastic passes")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("convergence", help="epistemic-std convergence against a reference ensemble size")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--grid", default="2,3,5,10,25,50")
    c.add_argument("--reference", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_convergence)

    r = sub.add_parser("run", help="generate, split, train, evaluate and report from a config file")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: config value, then ${config.OUTPUT_ENV})")
    r.add_argument("--threads", type=int)
    r.add_argument("--timestamp")
    r.add_argument("--keep-going", action="store_true", help="continue past a failing model")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inspect", help="print a container file's header")
    i.add_argument("file")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except Exception as exc:
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                print(f"uqbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
