"""Command line interface: ``morf gen-data | train | eval | predict``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

Training logs are tab-separated: ``#`` comment lines echo the effective
configuration, then a header row and one row per iteration with columns
``epoch iteration lr train_loss meta_loss tree_variance w0 .. w{T-1}``
(``w*`` are per-tree mean weights over the batch; ``meta_loss`` is ``nan``
for the baseline).
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .archive import load_model, save_model
from .data import SynthConfig, load_csv, save_csv, synthesize
from .estimators import DORFClassifier, MORFClassifier
from .exceptions import ConfigurationError, DataError, InputShapeError, NumericalError
from .metrics import classification_report

logger = logging.getLogger("morf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag name -> (estimator parameter, built-in default)
TRAIN_OPTIONS = {
    "method": (None, "morf"),
    "trees": ("n_trees", 5),
    "depth": ("depth", 3),
    "epochs": ("epochs", 30),
    "lr": ("learning_rate", 0.001),
    "batch": ("batch_size", 16),
    "weight_decay": ("weight_decay", 0.0001),
    "meta_lr": ("meta_lr", None),
    "feature_dim": ("feature_dim", 256),
    "hidden": ("hidden_dims", [64]),
    "classes": ("n_classes", 3),
    "seed": ("random_state", 0),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v):
    return format(float(v), ".10g")


def build_parser():
    p = _Parser(prog="morf", description="Meta ordinal regression forests.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic ordinal dataset as CSV")
    g.add_argument("--n", type=int, default=2625)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a MORF or DORF model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model archive path")
    t.add_argument("--log", help="training log path (default: <out>.log.tsv)")
    t.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    t.add_argument("--method", choices=["morf", "dorf"])
    t.add_argument("--trees", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--meta-lr", type=float)
    t.add_argument("--feature-dim", type=int)
    t.add_argument("--hidden", type=int, nargs="+")
    t.add_argument("--classes", type=int)
    t.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="classification report of a model on a labeled CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="also write the report here (tab-separated)")

    r = sub.add_parser("predict", help="per-row predictions for a feature CSV")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", help="output path (default: stdout)")
    return p


def resolve_train_options(args):
    """Merge flags > config file > built-in defaults."""
    file_opts = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_opts = json.load(fh)
        unknown = set(file_opts) - set(TRAIN_OPTIONS)
        if unknown:
            raise ConfigurationError(f"unknown keys in {args.config}: {sorted(unknown)}")
    opts = {}
    for name, (_, default) in TRAIN_OPTIONS.items():
        value = getattr(args, name)
        opts[name] = value if value is not None else file_opts.get(name, default)
    return opts


def cmd_gen_data(args):
    ds = synthesize(SynthConfig(args.n, args.dim, args.classes, args.noise, args.seed))
    save_csv(ds, args.out)
    counts = np.bincount(ds.y, minlength=args.classes + 1)[1:]
    print(f"wrote {len(ds)} rows to {args.out}")
    for k, c in enumerate(counts, start=1):
        print(f"class {k}\t{c}\t{c / len(ds):.3f}")
    return EXIT_OK


def _write_log(path, opts, est):
    T = est.forest_.n_trees
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(opts):
            fh.write(f"# {k}={opts[k]}\n")
        fh.write(f"# config_hash={est.train_meta_['config_hash']}\n")
        cols = ["epoch", "iteration", "lr", "train_loss", "meta_loss", "tree_variance"]
        fh.write("\t".join(cols + [f"w{t}" for t in range(T)]) + "\n")
        for rec in est.log_:
            row = [str(rec["epoch"]), str(rec["iteration"]), _fmt(rec["lr"]), _fmt(rec["train_loss"]),
                   _fmt(rec["meta_loss"]), _fmt(rec["tree_variance"])]
            row += [_fmt(w) for w in rec["tree_weights"]]
            fh.write("\t".join(row) + "\n")


def cmd_train(args):
    opts = resolve_train_options(args)
    ds = load_csv(args.data, n_classes=opts["classes"])
    params = {TRAIN_OPTIONS[k][0]: v for k, v in opts.items() if TRAIN_OPTIONS[k][0]}
    params["hidden_dims"] = tuple(params["hidden_dims"])
    if opts["method"] == "dorf":
        params.pop("meta_lr")
        est = DORFClassifier(**params)
    else:
        est = MORFClassifier(**params)
    print("effective config: " + " ".join(f"{k}={opts[k]}" for k in sorted(opts)))
    print(f"weight_decay={opts['weight_decay']} lr={opts['lr']} batch={opts['batch']}")
    est.fit(ds.X, ds.y)
    save_model(est, args.out)
    log_path = args.log or f"{args.out}.log.tsv"
    _write_log(log_path, opts, est)
    final = est.log_[-1]["train_loss"] if est.log_ else float("nan")
    print(f"trained {opts['method']} for {est.train_meta_['epochs_run']} epochs, "
          f"final batch loss {_fmt(final)}; archive {args.out}, log {log_path}")
    return EXIT_OK


def _check_dims(est, ds, path):
    if ds.n_features != est.n_features_in_:
        raise InputShapeError(
            f"{path} has {ds.n_features} feature columns but the model expects {est.n_features_in_}"
        )


def cmd_eval(args):
    est = load_model(args.model)
    ds = load_csv(args.data, n_classes=est.n_classes_)
    _check_dims(est, ds, args.data)
    preds = est.predict(ds.X)
    rep = classification_report(preds, ds.y, est.n_classes_)
    var = float(np.mean(est.tree_variance(ds.X)))
    lines = [f"{k}\t{_fmt(v)}" for k, v in rep.as_rows({"tree_variance": var, "n_samples": len(ds)})]
    for k in np.flatnonzero(rep.no_predictions):
        lines.append(f"warning\tclass {k + 1} was never predicted; its precision is reported as 0")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_predict(args):
    est = load_model(args.model)
    ds = load_csv(args.data, n_classes=est.n_classes_, require_target=False)
    _check_dims(est, ds, args.data)
    classes = est.predict(ds.X)
    ranks = est.expected_rank(ds.X)
    tree_ranks = est.tree_ranks(ds.X)
    T = tree_ranks.shape[1]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("\t".join(["row", "class", "expected_rank"] + [f"tree{t}" for t in range(T)]) + "\n")
        for i in range(len(ds)):
            out.write("\t".join([str(i), str(classes[i]), format(ranks[i], ".17g")]
                                + [format(v, ".17g") for v in tree_ranks[i]]) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InputShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
