"""Command-line driver: ``macer {train,certify,eval,sweep,compare-rs}``.

Settings come from built-in defaults, then an optional INI file
(``--config``, sections ``[train]``, ``[certify]``, ``[eval]`` and
``[sweep]``), then command-line flags. Exit status is 0 on success, 1 for
invalid settings and 2 for unreadable, unwritable or malformed files.
"""

import argparse
import configparser
import csv
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from .data import load_idx, make_blobs
from .errors import ConfigError, DomainError, FormatError
from .evaluate import (DEFAULT_GRID, build_report, certify_dataset, compare_soft_hard, format_table,
                       read_rows_csv, write_curve_csv, write_rows_csv)
from .net import load_checkpoint, save_checkpoint
from .smoothing import BoundKind, CertifyConfig
from .statmath import RngStream
from .training import MacerConfig, train, write_log_csv

log = logging.getLogger("macer")

# certification noise always comes from this stream id under the run seed
CERTIFY_STREAM = 2


def parse_schedule(text):
    """``"0:0.01,200:0.001"`` -> ``((0, 0.01), (200, 0.001))``; a bare number means ``0:number``."""
    text = text.strip()
    if ":" not in text:
        return ((0, float(text)),)
    out = []
    for part in text.split(","):
        epoch, value = part.split(":")
        out.append((int(epoch), float(value)))
    return tuple(out)


def parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def parse_ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_bound(text):
    return BoundKind(text.strip().lower().replace("-", "_"))


# key -> (parser, default, help); default None means "not set"
DATA_KEYS = {
    "data": (str, "blobs", "dataset source: blobs or idx"),
    "images": (str, None, "IDX images file (data=idx)"),
    "labels": (str, None, "IDX labels file (data=idx)"),
    "limit": (int, None, "keep only the first LIMIT records"),
    "num_classes": (int, 10, "number of classes in the IDX labels"),
    "blob_per_class": (int, 100, "points per class (data=blobs)"),
    "blob_classes": (int, 2, "number of blob classes"),
    "blob_dim": (int, 2, "blob feature dimension"),
    "blob_scale": (float, 0.6, "spread of the blob centers in [0, 1]"),
    "blob_noise": (float, 0.15, "per-coordinate blob noise std"),
    "blob_seed": (int, 0, "seed of the blob sampler"),
}

TRAIN_KEYS = {
    **DATA_KEYS,
    "sigma": (float, 0.25, "Gaussian noise level"),
    "k": (int, 16, "noise samples per input"),
    "lambda": (parse_schedule, ((0, 12.0),), "robustness weight schedule, e.g. 0:16,30:12"),
    "gamma": (float, 8.0, "hinge width"),
    "beta": (float, 16.0, "inverse softmax temperature"),
    "lr": (parse_schedule, ((0, 0.01),), "learning-rate schedule, e.g. 0:0.01,30:0.001"),
    "momentum": (float, 0.9, "SGD momentum"),
    "epochs": (int, 50, "training epochs"),
    "batch_size": (int, 64, "minibatch size"),
    "seed": (int, 0, "run seed"),
    "hidden": (parse_ints, (64, 64), "hidden layer widths, e.g. 256 or 64,64"),
    "robust_beta_only": (parse_bool, False, "apply beta only to the robustness term"),
    "checkpoint": (str, None, "output checkpoint path (required)"),
    "log": (str, None, "output epoch log CSV (default: CHECKPOINT.log.csv)"),
}

CERTIFY_KEYS = {
    **DATA_KEYS,
    "checkpoint": (str, None, "trained checkpoint (required)"),
    "sigma": (float, 0.25, "Gaussian noise level"),
    "n0": (int, 100, "selection samples"),
    "n": (int, 10_000, "estimation samples"),
    "alpha": (float, 0.001, "failure probability"),
    "bound": (parse_bound, BoundKind.CLOPPER_PEARSON, "clopper_pearson, hoeffding or bernstein"),
    "beta": (float, 1.0, "inverse temperature of the soft classifier"),
    "seed": (int, 0, "certification seed"),
    "out": (str, None, "output per-example CSV (required for certify; prefix for compare-rs)"),
}

EVAL_KEYS = {
    "rows": (str, None, "per-example CSV from certify (required)"),
    "grid": (parse_floats, DEFAULT_GRID, "comma-separated radii"),
    "curve": (str, None, "optional output curve CSV"),
    "label": (str, "", "row label in the printed table"),
}

SWEEP_KEYS = {
    "param": (str, None, "swept hyperparameter: k, lambda, gamma or beta"),
    "values": (parse_floats, None, "comma-separated values"),
    "out": (str, None, "output sweep CSV (required)"),
    "work_dir": (str, None, "keep per-run checkpoints and CSVs here"),
}

SWEEPABLE = ("k", "lambda", "gamma", "beta")


def _flag(key):
    return "--" + key.replace("_", "-")


def _add_keys(parser, keys):
    for key, (_, default, help_text) in keys.items():
        shown = "" if default is None else f" [default: {_show(default)}]"
        parser.add_argument(_flag(key), dest=key, default=None, metavar="V", help=help_text + shown)


def _show(value):
    if isinstance(value, BoundKind):
        return value.value
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ",".join(f"{e}:{v:g}" for e, v in value)
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" for v in value)
    return str(value)


def _read_ini(path):
    ini = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        with open(path, encoding="utf-8") as fh:
            ini.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"train", "certify", "eval", "sweep"}
    for section in ini.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
    return ini


def resolve(section, keys, ini=None, args=None):
    """Merge defaults, the INI section and explicit flags into a typed dict."""
    out = {key: default for key, (_, default, _) in keys.items()}
    if ini is not None and ini.has_section(section):
        for key, text in ini.items(section):
            if key not in keys:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            out[key] = _parse(keys, key, text, f"[{section}] {key}")
    if args is not None:
        for key in keys:
            text = getattr(args, key, None)
            if text is not None:
                out[key] = _parse(keys, key, text, _flag(key))
    return out


def _parse(keys, key, text, where):
    try:
        return keys[key][0](text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _require(settings, key, where):
    if settings[key] in (None, ""):
        raise ConfigError(f"{where}: {_flag(key)} is required")
    return settings[key]


def load_data(s, where):
    if s["data"] == "blobs":
        return make_blobs(s["blob_per_class"], s["blob_classes"], s["blob_dim"],
                          centers_scale=s["blob_scale"], noise_std=s["blob_noise"], seed=s["blob_seed"])
    if s["data"] == "idx":
        images, labels = _require(s, "images", where), _require(s, "labels", where)
        return load_idx(images, labels, limit=s["limit"], num_classes=s["num_classes"])
    raise ConfigError(f"{where}: --data must be blobs or idx, got {s['data']!r}")


def macer_config(s):
    return MacerConfig(sigma=s["sigma"], k=s["k"], lambda_schedule=s["lambda"], gamma=s["gamma"],
                       beta=s["beta"], lr_schedule=s["lr"], momentum=s["momentum"], epochs=s["epochs"],
                       batch_size=s["batch_size"], seed=s["seed"], hidden=s["hidden"],
                       robust_beta_only=s["robust_beta_only"])


def certify_config(s):
    if s["bound"] is BoundKind.BERNSTEIN and s["n"] < 2:
        raise ConfigError(f"--n: the bernstein bound needs n >= 2, got {s['n']}")
    return CertifyConfig(s["sigma"], s["n0"], s["n"], s["alpha"], s["bound"], s["beta"])


def _run_train(s, where="train"):
    cfg = macer_config(s)
    data = load_data(s, where)

    def progress(e):
        log.info("epoch %d  total %.4f  ce %.4f  hinge %.4f  in_G %.3f  lr %g  lambda %g",
                 e.epoch, e.mean_total, e.mean_ce, e.mean_hinge, e.frac_in_G, e.lr, e.lam)

    return train(data, cfg, progress=progress)


def _run_certify(net, s, where="certify"):
    cfg = certify_config(s)
    data = load_data(s, where)
    if data.dim != net.layer_dims[0]:
        raise ConfigError(f"{where}: data has {data.dim} features, checkpoint expects {net.layer_dims[0]}")
    return certify_dataset(net, data, cfg, RngStream(s["seed"], CERTIFY_STREAM))


def cmd_train(args, ini):
    s = resolve("train", TRAIN_KEYS, ini, args)
    ckpt = _require(s, "checkpoint", "train")
    net, epochs = _run_train(s)
    save_checkpoint(net, ckpt)
    log_path = s["log"] or f"{ckpt}.log.csv"
    write_log_csv(epochs, log_path)
    if epochs:
        e = epochs[-1]
        print(f"epoch {e.epoch}: total={e.mean_total:.6f} ce={e.mean_ce:.6f} hinge={e.mean_hinge:.6f} "
              f"frac_in_G={e.frac_in_G:.4f}")
    print(f"wrote {ckpt} and {log_path}")
    return 0


def cmd_certify(args, ini):
    s = resolve("certify", CERTIFY_KEYS, ini, args)
    ckpt, out = _require(s, "checkpoint", "certify"), _require(s, "out", "certify")
    certify_config(s)  # surface bad settings before any file access
    rows = _run_certify(load_checkpoint(ckpt), s)
    write_rows_csv(rows, out)
    print(f"certified {len(rows)} examples with {s['bound'].value}; wrote {out}")
    return 0


def cmd_eval(args, ini):
    s = resolve("eval", EVAL_KEYS, ini, args)
    rows = read_rows_csv(_require(s, "rows", "eval"))
    report = build_report(rows, s["grid"])
    print(format_table(report, s["label"]))
    if s["curve"]:
        write_curve_csv(zip(report.radii_grid, report.accuracies), s["curve"])
    return 0


def _sweep_value(param, value):
    if param == "k":
        if value != int(value):
            raise ConfigError(f"--values: k must be an integer, got {value:g}")
        return int(value)
    if param == "lambda":
        return ((0, float(value)),)
    return float(value)


def cmd_sweep(args, ini):
    sw = resolve("sweep", SWEEP_KEYS, ini, args)
    param, out = _require(sw, "param", "sweep"), _require(sw, "out", "sweep")
    values = _require(sw, "values", "sweep")
    if param not in SWEEPABLE:
        raise ConfigError(f"--param must be one of {', '.join(SWEEPABLE)}, got {param!r}")
    base_train = resolve("train", TRAIN_KEYS, ini)
    base_cert = resolve("certify", CERTIFY_KEYS, ini)
    grid = resolve("eval", EVAL_KEYS, ini)["grid"]
    certify_config(base_cert)
    for v in values:
        macer_config({**base_train, param: _sweep_value(param, v)})

    with tempfile.TemporaryDirectory() as tmp:
        work = Path(sw["work_dir"] or tmp)
        work.mkdir(parents=True, exist_ok=True)
        results = []
        for v in values:
            s = {**base_train, param: _sweep_value(param, v)}
            net, epochs = _run_train(s, f"sweep {param}={v:g}")
            tag = f"{param}-{v:g}"
            save_checkpoint(net, work / f"{tag}.ckpt")
            write_log_csv(epochs, work / f"{tag}.log.csv")
            rows = _run_certify(net, base_cert, f"sweep {param}={v:g}")
            write_rows_csv(rows, work / f"{tag}.rows.csv")
            report = build_report(rows, grid)
            results.append((v, report))
            print(f"{param}={v:g}  acr={report.acr:.6f}")

    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param_value", "acr"] + [f"acc_{g:.2f}" for g in grid])
        for v, rep in results:
            w.writerow([f"{v:g}", f"{rep.acr:.6f}"] + [f"{a:.6f}" for a in rep.accuracies])
    if param == "lambda" and len(results) > 1:
        _log_tradeoff(results)
    print(f"wrote {out}")
    return 0


def _log_tradeoff(results):
    """Soft check: larger lambda should trade clean accuracy for accuracy at large radii."""
    ordered = sorted(results, key=lambda r: r[0])
    clean = [rep.accuracies[0] for _, rep in ordered]
    far = [rep.accuracies[-1] for _, rep in ordered]
    ok = all(b <= a for a, b in zip(clean, clean[1:])) and all(b >= a for a, b in zip(far, far[1:]))
    log.warning("lambda trade-off %s: clean %s, at largest radius %s",
                "holds" if ok else "does not hold",
                " ".join(f"{a:.3f}" for a in clean), " ".join(f"{a:.3f}" for a in far))


def cmd_compare_rs(args, ini):
    s = resolve("certify", CERTIFY_KEYS, ini, args)
    ckpt, prefix = _require(s, "checkpoint", "compare-rs"), _require(s, "out", "compare-rs")
    for kind in BoundKind:
        certify_config({**s, "bound": kind})
    net = load_checkpoint(ckpt)
    data = load_data(s, "compare-rs")
    cmp = compare_soft_hard(net, data, s["sigma"], s["n0"], s["n"], s["alpha"], s["beta"],
                            RngStream(s["seed"], CERTIFY_STREAM))
    summary = f"{prefix}summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "acr", "median_radius", "mutually_certified"])
        for kind in BoundKind:
            write_rows_csv(cmp.rows[kind], f"{prefix}{kind.value}.csv")
            w.writerow([kind.value, f"{cmp.acr[kind]:.6f}", f"{cmp.median_radius[kind]:.6f}",
                        cmp.mutually_certified])
            print(f"{kind.value:>16}  acr={cmp.acr[kind]:.4f}  median={cmp.median_radius[kind]:.4f}")
    print(f"per-example max ACR {cmp.acr_of_max:.4f} over {len(data)} examples, "
          f"{cmp.mutually_certified} certified by all methods")
    return 0


COMMANDS = {
    "train": (cmd_train, TRAIN_KEYS, "train a classifier with the MACER objective"),
    "certify": (cmd_certify, CERTIFY_KEYS, "certify every example of a dataset"),
    "eval": (cmd_eval, EVAL_KEYS, "certified accuracy table and ACR from a certify CSV"),
    "sweep": (cmd_sweep, SWEEP_KEYS, "train+certify+eval once per value of one hyperparameter"),
    "compare-rs": (cmd_compare_rs, CERTIFY_KEYS, "certify with all three bounds on shared noise"),
}


class _Parser(argparse.ArgumentParser):
    # unknown or malformed flags are settings errors (exit 1), not argparse's usage exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="macer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, keys, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="INI file with [train], [certify], [eval], [sweep] sections")
        _add_keys(p, keys)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"macer: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        ini = _read_ini(args.config) if args.config else None
        with np.errstate(over="ignore", under="ignore"):
            return COMMANDS[args.command][0](args, ini)
    except (ConfigError, DomainError) as exc:
        print(f"macer {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        msg = exc if isinstance(exc, FormatError) else f"{exc.strerror or exc}: {exc.filename or ''}"
        print(f"macer {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
