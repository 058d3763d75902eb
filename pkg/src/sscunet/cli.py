"""Command-line interface.

Every subcommand resolves its parameters as flags > JSON config (``--config``)
> built-in defaults, rejects unknown config keys, and writes
``provenance.json`` next to its outputs. A provenance file can be passed back
as ``--config`` to repeat a run.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numerical failure.
"""
import argparse
import contextlib
import csv
import datetime
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, kernels
from .errors import (ArchitectureError, ConstraintError, DegenerateInputError, DimensionError,
                     DomainError, FormatError, GenerationError, NumericalError, ParameterError)
from .hsi import flatten, load_bundle, save_bundle
from .initializers import VcaConfig, fcls, vca
from .metrics import evaluate
from .model import TrainConfig, save_checkpoint
from .pipeline import StageError, run_unmix
from .results import (read_abundances, read_endmembers, write_abundances, write_endmembers,
                      write_json, write_loss_trace, write_segmentation)
from .superpixel import SlicConfig, slic_segment
from .synth import SynthConfig, make_scene, measured_snr

log = logging.getLogger("sscunet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- parameter tables -----------------------------------------------------------------
# key -> (flag, type, default, help). ``nargs`` lists are marked with a tuple type.

def snr_db(value):
    if isinstance(value, str) and value.lower() in ("none", "inf", "noiseless"):
        return None
    return None if value is None else float(value)


_TRAIN = TrainConfig()
_SLIC = SlicConfig()
_SYNTH = SynthConfig()

COMMON = {
    "seed": ("--seed", int, 0, "random seed"),
    "deterministic": ("--deterministic", bool, False,
                      "single-threaded BLAS for bitwise reproducible output"),
    "out": ("--out", str, None, "output directory"),
}

SYNTH = {
    "height": ("--height", int, _SYNTH.height, "scene height"),
    "width": ("--width", int, _SYNTH.width, "scene width"),
    "p": ("--p", int, _SYNTH.p, "number of endmembers"),
    "bands": ("--bands", int, _SYNTH.bands, "number of spectral bands"),
    "smoothness": ("--smoothness", float, _SYNTH.smoothness, "abundance blur sigma (pixels)"),
    "snr_db": ("--snr-db", snr_db, _SYNTH.snr_db, "noise level in dB ('none' for noiseless)"),
    "purity_cap": ("--purity-cap", float, _SYNTH.purity_cap, "maximum abundance fraction"),
    "block": ("--block", int, _SYNTH.block, "size of constant-draw abundance regions"),
    "concentration": ("--concentration", float, _SYNTH.concentration,
                      "Dirichlet concentration of region draws"),
}

BUNDLE = {
    "bundle": ("bundle", str, None, "input bundle directory"),
    "p": ("--p", int, None, "number of endmembers (default: from ground truth)"),
}

SLIC = {
    "superpixel_size": ("--superpixel-size", float, _SLIC.size, "nominal superpixel size S"),
    "compactness": ("--compactness", float, _SLIC.compactness, "compactness weight m"),
    "slic_iterations": ("--slic-iterations", int, _SLIC.iterations, "SLIC refinement rounds"),
}

TRAIN = {
    "lambda": ("--lambda", float, _TRAIN.lam, "sparsity weight"),
    "mu": ("--mu", float, _TRAIN.mu, "collaboration weight"),
    "lr_encoder": ("--lr-encoder", float, _TRAIN.lr_encoder, "encoder learning rate"),
    "lr_decoder": ("--lr-decoder", float, _TRAIN.lr_decoder, "decoder learning rate"),
    "epochs": ("--epochs", int, _TRAIN.epochs, "training epochs"),
    "batch_size": ("--batch-size", int, _TRAIN.batch_size, "superpixels per batch"),
    "pixel_batch_size": ("--pixel-batch-size", int, _TRAIN.pixel_batch_size,
                         "pixels per spectral-stream step (0: whole batch)"),
    "dropout": ("--dropout", float, _TRAIN.dropout, "dropout rate of the spatial stream"),
    "encoder_init": ("--encoder-init", str, _TRAIN.encoder_init, "'vca' or 'he'"),
    "scae_output": ("--scae-output", str, _TRAIN.scae_output, "'softmax' or 'relu_l1'"),
}

SWEEP = {
    "bundle": ("--bundle", str, None, "sweep an existing bundle instead of synthetic scenes"),
    "p": ("--p", int, None, "number of endmembers (default: ground truth, or "
          f"{_SYNTH.p} for synthetic scenes)"),
    "snr_db": ("--snr-db", (snr_db,), [_SYNTH.snr_db], "SNR values (dB)"),
    "superpixel_size": ("--superpixel-size", (float,), [_SLIC.size], "S values"),
    "compactness": ("--compactness", (float,), [_SLIC.compactness], "m values"),
    "repeats": ("--repeats", int, 1, "seeds per grid point (seed, seed+1, ...)"),
    "jobs": ("--jobs", int, 1, "parallel worker processes"),
}

GRADCHECK = {
    "tol": ("--tol", float, 1e-4, "relative error tolerance"),
    "only": ("--only", (str,), None, "restrict to these checks"),
}


def _table(*parts):
    out = {}
    for part in parts:
        out.update(part)
    return out


COMMANDS = {
    "synth": _table(SYNTH, COMMON),
    "init": _table(BUNDLE, COMMON),
    "segment": _table(BUNDLE, SLIC, COMMON),
    "unmix": _table(BUNDLE, SLIC, TRAIN, COMMON),
    "eval": {
        "result": ("result", str, None, "result directory with endmembers.csv"),
        "bundle": ("bundle", str, None, "ground-truth bundle directory"),
        "seed": COMMON["seed"],
        "deterministic": COMMON["deterministic"],
        "out": ("--out", str, None, "output directory (default: RESULT/eval)"),
    },
    "sweep": _table({k: v for k, v in SYNTH.items() if k not in ("snr_db", "p")}, SWEEP,
                    {k: v for k, v in SLIC.items() if k == "slic_iterations"}, TRAIN, COMMON),
    "gradcheck": _table(GRADCHECK, {"seed": COMMON["seed"],
                                    "deterministic": COMMON["deterministic"],
                                    "out": ("--out", str, None, "optional report directory")}),
}

HELP = {
    "synth": "generate a synthetic scene bundle",
    "init": "VCA endmembers and FCLS abundances",
    "segment": "abundance-driven superpixel segmentation",
    "unmix": "full two-stream unmixing pipeline",
    "eval": "match and score a result against ground truth",
    "sweep": "repeated unmixing over a parameter grid",
    "gradcheck": "finite-difference gradient checks",
}

REQUIRED = {
    "synth": ("out",), "init": ("bundle", "out"), "segment": ("bundle", "out"),
    "unmix": ("bundle", "out"), "eval": ("result", "bundle"), "sweep": ("out",),
    "gradcheck": (),
}


def build_parser():
    parser = _Parser(prog="sscunet", description="Spatial-spectral autoencoder unmixing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, table in COMMANDS.items():
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="JSON config file (or a provenance.json)")
        for key, (flag, typ, _default, text) in table.items():
            kw = {"help": text, "default": argparse.SUPPRESS}
            if not flag.startswith("--"):
                sp.add_argument(key, nargs="?", **kw)
                continue
            flags = [flag, "--snr"] if flag == "--snr-db" else [flag]
            if typ is bool:
                sp.add_argument(*flags, dest=key, action="store_true", **kw)
            elif isinstance(typ, tuple):
                sp.add_argument(*flags, dest=key, type=typ[0], nargs="+", **kw)
            else:
                sp.add_argument(*flags, dest=key, type=typ, **kw)
    return parser


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    # a provenance file carries the resolved config under "config"
    if "provenance_version" in data:
        data = data.get("config", {})
    return data


def _coerce(key, value, typ):
    if value is None:
        return None
    try:
        if typ is bool:
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if isinstance(typ, tuple):
            seq = value if isinstance(value, list) else [value]
            return [typ[0](v) for v in seq]
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError("expected an integer")
        return typ(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None


def resolve_config(command, args):
    """Merge defaults, the JSON config and explicit flags for ``command``."""
    table = COMMANDS[command]
    cfg = {k: (list(v[2]) if isinstance(v[2], list) else v[2]) for k, v in table.items()}
    path = getattr(args, "config", None)
    if path:
        data = _load_config(path)
        unknown = sorted(set(data) - set(table))
        if unknown:
            raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for k, v in data.items():
            cfg[k] = _coerce(k, v, table[k][1])
    for k in table:
        if hasattr(args, k):
            cfg[k] = getattr(args, k)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required parameter(s): {', '.join(missing)}")
    return cfg


# -- helpers --------------------------------------------------------------------------------

def _train_config(cfg):
    return TrainConfig(lam=cfg["lambda"], mu=cfg["mu"], lr_encoder=cfg["lr_encoder"],
                       lr_decoder=cfg["lr_decoder"], epochs=cfg["epochs"],
                       batch_size=cfg["batch_size"], seed=cfg["seed"], dropout=cfg["dropout"],
                       pixel_batch_size=cfg["pixel_batch_size"],
                       encoder_init=cfg["encoder_init"], scae_output=cfg["scae_output"])


def _slic_config(cfg, size=None, compactness=None):
    return SlicConfig(size=cfg["superpixel_size"] if size is None else size,
                      compactness=cfg["compactness"] if compactness is None else compactness,
                      iterations=cfg["slic_iterations"], seed=cfg["seed"])


def _endmember_count(cfg, bundle):
    if cfg.get("p") is not None:
        return cfg["p"]
    if bundle.gt_endmembers is None:
        raise UsageError("--p is required for a bundle without ground-truth endmembers")
    return bundle.gt_endmembers.count


def _provenance(command, cfg, results=None):
    import scipy
    return {
        "provenance_version": 1,
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "deterministic": bool(cfg.get("deterministic")),
        "toolkit_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "argv": sys.argv[1:],
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "results": results or {},
    }


def _finish(command, cfg, out, results=None):
    write_json(os.path.join(out, "provenance.json"), _provenance(command, cfg, results))


@contextlib.contextmanager
def _deterministic(enabled):
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# -- commands -------------------------------------------------------------------------------

def cmd_synth(cfg):
    sc = SynthConfig(**{k: cfg[k] for k in SYNTH}, seed=cfg["seed"])
    bundle = make_scene(sc, name=f"synthetic-{cfg['seed']}")
    out = cfg["out"]
    save_bundle(bundle, out)
    results = {}
    if sc.snr_db is not None:
        clean = bundle.gt_abundances.fractions @ bundle.gt_endmembers.signatures
        results["measured_snr_db"] = float(measured_snr(clean, bundle.cube.reflectance))
    _finish("synth", cfg, out, results)
    print(f"wrote bundle {out} ({sc.height}x{sc.width}x{sc.bands}, p={sc.p})")
    return EXIT_OK


def cmd_init(cfg):
    bundle = load_bundle(cfg["bundle"])
    p = _endmember_count(cfg, bundle)
    cube = bundle.cube
    Y = flatten(cube)
    vres = vca(Y, VcaConfig(p, cfg["seed"]))
    X = fcls(Y, vres.endmembers).T.reshape(cube.height, cube.width, p)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_endmembers(out, vres.endmembers.signatures)
    write_abundances(out, X)
    results = {"vca_pixel_indices": [int(i) for i in vres.indices],
               "estimated_snr_db": float(vres.snr_db) if np.isfinite(vres.snr_db) else None}
    if bundle.gt_endmembers is not None:
        rep = evaluate(vres.endmembers, bundle.gt_endmembers, X,
                       getattr(bundle.gt_abundances, "fractions", None), {"seed": cfg["seed"]})
        write_json(os.path.join(out, "metrics.json"), rep.to_dict())
        print(rep.table())
    _finish("init", cfg, out, results)
    return EXIT_OK


def cmd_segment(cfg):
    bundle = load_bundle(cfg["bundle"])
    p = _endmember_count(cfg, bundle)
    cube = bundle.cube
    Y = flatten(cube)
    vres = vca(Y, VcaConfig(p, cfg["seed"]))
    X = fcls(Y, vres.endmembers).T.reshape(cube.height, cube.width, p)
    seg = slic_segment(X, _slic_config(cfg))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_segmentation(out, seg)
    _finish("segment", cfg, out, {"superpixels": seg.count})
    print(f"{seg.count} superpixels written to {out}")
    return EXIT_OK


def emit_unmix(out, res):
    """Write every artifact of a pipeline run ``res`` into ``out``."""
    os.makedirs(out, exist_ok=True)
    write_endmembers(out, res.result.endmembers)
    write_abundances(out, res.result.abundances)
    write_loss_trace(os.path.join(out, "loss_trace.csv"), res.trace)
    write_segmentation(out, res.segmentation)
    save_checkpoint(res.model, os.path.join(out, "model"))
    if res.metrics is not None:
        write_json(os.path.join(out, "metrics.json"), res.metrics)


def _run_unmix(bundle, cfg, size=None, compactness=None):
    p = _endmember_count(cfg, bundle)
    return run_unmix(bundle, p, _train_config(cfg), _slic_config(cfg, size, compactness))


def cmd_unmix(cfg):
    bundle = load_bundle(cfg["bundle"])
    res = _run_unmix(bundle, cfg)
    out = cfg["out"]
    emit_unmix(out, res)
    results = {"timings_s": res.timings, "warnings": res.result.warnings,
               "superpixels": res.segmentation.count,
               "final_loss": res.trace[-1].total if res.trace else None,
               "skipped_samples": int(sum(e.skipped for e in res.trace))}
    _finish("unmix", cfg, out, results)
    if res.result.report is not None:
        print(res.result.report.table())
    for w in res.result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(cfg):
    bundle = load_bundle(cfg["bundle"])
    if bundle.gt_endmembers is None:
        raise FormatError(f"{cfg['bundle']}: no ground-truth endmembers to evaluate against")
    E = read_endmembers(cfg["result"])
    X = None
    if os.path.isfile(os.path.join(cfg["result"], "abundances.json")):
        X = read_abundances(cfg["result"])
    if E.shape != bundle.gt_endmembers.signatures.shape:
        raise DimensionError(f"estimated endmembers {E.shape} vs ground truth "
                             f"{bundle.gt_endmembers.signatures.shape}")
    gt_X = getattr(bundle.gt_abundances, "fractions", None)
    if X is not None and gt_X is not None and X.shape != gt_X.shape:
        raise DimensionError(f"estimated abundances {X.shape} vs ground truth {gt_X.shape}")
    rep = evaluate(E, bundle.gt_endmembers, X, gt_X, {"result": cfg["result"]})
    out = cfg["out"] or os.path.join(cfg["result"], "eval")
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "metrics.json"), rep.to_dict())
    _finish("eval", cfg, out, {"mean_sad": rep.mean_sad, "mean_rmse": rep.mean_rmse})
    print(rep.table())
    return EXIT_OK


SWEEP_FIELDS = ["snr_db", "superpixel_size", "compactness", "seed", "status", "mean_sad",
                "mean_rmse", "baseline_sad", "baseline_rmse", "wall_time_s", "error"]


def _sweep_point(cfg, snr, size, m, seed, run_dir):
    """One sweep run; failures are recorded in the returned row."""
    row = {"snr_db": "none" if snr is None else snr, "superpixel_size": size, "compactness": m,
           "seed": seed, "status": "ok", "mean_sad": "", "mean_rmse": "", "baseline_sad": "",
           "baseline_rmse": "", "wall_time_s": "", "error": ""}
    t0 = time.perf_counter()
    try:
        run_cfg = dict(cfg, seed=seed)
        if cfg["bundle"]:
            bundle = load_bundle(cfg["bundle"])
        else:
            params = {k: cfg[k] for k in SYNTH if k not in ("snr_db", "p")}
            sc = SynthConfig(**params, p=cfg["p"] or _SYNTH.p, snr_db=snr, seed=seed)
            bundle = make_scene(sc, name=f"synthetic-{seed}")
        res = _run_unmix(bundle, run_cfg, size, m)
        emit_unmix(run_dir, res)
        if res.metrics is not None:
            row.update(mean_sad=res.metrics["sscu"]["mean_sad"],
                       mean_rmse=res.metrics["sscu"]["mean_rmse"],
                       baseline_sad=res.metrics["baseline_vca_fcls"]["mean_sad"],
                       baseline_rmse=res.metrics["baseline_vca_fcls"]["mean_rmse"])
    except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        log.error("sweep point snr=%s S=%s m=%s seed=%s failed: %s", snr, size, m, seed, exc)
    row["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return row


def _summarize(rows, repeats):
    cells = {}
    for r in rows:
        cells.setdefault((r["snr_db"], r["superpixel_size"], r["compactness"]), []).append(r)
    out = []
    for (snr, size, m), group in cells.items():
        ok = [r for r in group if r["status"] == "ok" and r["mean_sad"] != ""]
        entry = {"snr_db": snr, "superpixel_size": size, "compactness": m,
                 "runs": len(group), "succeeded": len(ok)}
        for key in ("mean_sad", "mean_rmse", "baseline_sad", "baseline_rmse"):
            vals = np.array([float(r[key]) for r in ok])
            entry[f"{key}_mean"] = float(vals.mean()) if len(vals) else ""
            entry[f"{key}_std"] = float(vals.std()) if len(vals) else ""
        out.append(entry)
    return out


def _write_rows(path, rows, fields):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_sweep(cfg):
    if cfg["repeats"] < 1:
        raise UsageError("--repeats must be at least 1")
    snrs = cfg["snr_db"]
    if cfg["bundle"] and snrs != [_SYNTH.snr_db]:
        raise UsageError("--snr-db cannot be swept over an existing bundle")
    if cfg["bundle"]:
        snrs = [None]
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    jobs = []
    for snr in snrs:
        for size in cfg["superpixel_size"]:
            for m in cfg["compactness"]:
                for r in range(cfg["repeats"]):
                    seed = cfg["seed"] + r
                    tag = f"snr{snr}_S{size:g}_m{m:g}_seed{seed}"
                    jobs.append((cfg, snr, size, m, seed, os.path.join(out, "runs", tag)))
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            rows = list(pool.map(_sweep_point, *zip(*jobs)))
    else:
        rows = [_sweep_point(*j) for j in jobs]
    _write_rows(os.path.join(out, "sweep.csv"), rows, SWEEP_FIELDS)
    summary = _summarize(rows, cfg["repeats"])
    _write_rows(os.path.join(out, "summary.csv"), summary, list(summary[0]))
    failed = sum(r["status"] != "ok" for r in rows)
    _finish("sweep", cfg, out, {"runs": len(rows), "failed": failed})
    for s in summary:
        print(f"snr={s['snr_db']} S={s['superpixel_size']} m={s['compactness']}: "
              f"SAD {_pm(s, 'mean_sad')}  RMSE {_pm(s, 'mean_rmse')}  ({s['succeeded']}/{s['runs']})")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def _pm(s, key):
    if s[f"{key}_mean"] == "":
        return "n/a"
    return f"{s[key + '_mean']:.4f}+-{s[key + '_std']:.4f}"


def cmd_gradcheck(cfg):
    from .gradcheck import format_report, run_checks
    results = run_checks(cfg["only"], seed=cfg["seed"], tol=cfg["tol"])
    if not results:
        raise UsageError("no gradient checks selected")
    print(format_report(results))
    ok = all(r.passed for r in results)
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        report = {r.name: {"max_rel_error": r.max_error, "errors": r.errors, "passed": r.passed,
                           "seconds": r.seconds} for r in results}
        write_json(os.path.join(cfg["out"], "gradcheck.json"), report)
        _finish("gradcheck", cfg, cfg["out"], {"passed": ok})
    return EXIT_OK if ok else EXIT_NUMERICAL


HANDLERS = {"synth": cmd_synth, "init": cmd_init, "segment": cmd_segment, "unmix": cmd_unmix,
            "eval": cmd_eval, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}

_DATA_ERRORS = (FormatError, ConstraintError, DimensionError, DegenerateInputError, DomainError,
                ArchitectureError, OSError)
_NUMERICAL_ERRORS = (NumericalError, GenerationError, FloatingPointError)


def exit_code_for(exc):
    if isinstance(exc, StageError):
        exc = exc.original
    if isinstance(exc, (UsageError, ParameterError)):
        return EXIT_USAGE
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, _NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    return None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args.command, args)
        with _deterministic(cfg.get("deterministic")):
            return HANDLERS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = exit_code_for(exc)
        if code is None:
            raise
        print(f"sscunet {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
