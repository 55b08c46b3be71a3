"""Command-line interface: ``clusterface <subcommand> [flags]``.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
Every JSON output carries a top-level ``timestamp``; all other bytes are a
pure function of the inputs and the seed. The seed comes from ``--seed``,
else the ``CML_SEED`` environment variable, else the config.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .checks import LOSS_NAMES, gradcheck_loss
from .datagen import SynthSpec, generate, read_csv, read_dataset, write_csv, write_dataset
from .encoder import forward, load_checkpoint, save_checkpoint
from .errors import ClusterFaceError
from .evaluation import (
    clustering_report,
    dbscan,
    kmeans,
    make_pairs,
    verification_report,
    write_histogram_csv,
)
from .numeric import make_rng, spawn_rngs
from .trainer import PROFILES, SETTINGS, VARIANTS, TrainConfig, Trainer, ablation_run, compare_losses

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


def _timestamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, payload):
    payload = {**payload, "timestamp": _timestamp()}
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _sidecar(path):
    root, _ = os.path.splitext(path)
    return root + ".config.json"


def _env_seed():
    v = os.environ.get("CML_SEED")
    if v is None or v == "":
        return None
    try:
        return int(v)
    except ValueError:
        raise UsageError(f"CML_SEED must be an integer, got {v!r}") from None


def _seed(args, fallback=0):
    if args.seed is not None:
        return args.seed
    env = _env_seed()
    return env if env is not None else fallback


def _load_json(path, flag):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag}: {path} is not valid JSON ({exc})") from None


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _read_data(path):
    if path.endswith(".csv"):
        return read_csv(path)
    return read_dataset(path)


# --- config plumbing ---------------------------------------------------------

_TRAIN_FLAGS = [f for f in dataclasses.fields(TrainConfig) if f.name not in ("seed", "profile")]


def _flag(name):
    return "--" + name.replace("_", "-")


def _field_type(f):
    default = getattr(TrainConfig(), f.name)
    if isinstance(default, bool):
        return None
    if isinstance(default, list):
        return "list"
    if default is None:
        return int
    return type(default)


def _add_train_overrides(p):
    p.add_argument("--config", help="TrainConfig JSON file; flags override its values (default: none)")
    p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                   help="defaults profile when --config does not set one (default: desk)")
    desk = TrainConfig.for_profile("desk")
    g = p.add_argument_group("training overrides")
    for f in _TRAIN_FLAGS:
        kind = _field_type(f)
        shown = getattr(desk, f.name)
        if kind == "list":
            g.add_argument(_flag(f.name), dest=f.name, default=None, metavar="A,B,..",
                           help=f"comma list (default: {','.join(map(str, shown))})")
        elif f.name == "setting":
            g.add_argument(_flag(f.name), dest=f.name, default=None, choices=list(SETTINGS),
                           help=f"ablation setting (default: {shown})")
        elif f.name == "contrast":
            g.add_argument(_flag(f.name), dest=f.name, default=None, choices=["clu_con", "center", "triplet"],
                           help=f"contrastive-slot loss (default: {shown})")
        elif f.name == "temperature":
            g.add_argument(_flag(f.name), dest=f.name, default=None, choices=["adaptive", "fixed"],
                           help=f"clu_con temperature mode (default: {shown})")
        else:
            g.add_argument(_flag(f.name), dest=f.name, type=kind, default=None,
                           help=f"(default: {shown})")


def _build_config(args):
    base = _load_json(args.config, "--config") if args.config else {}
    if not isinstance(base, dict):
        raise UsageError("--config must hold a JSON object")
    if args.profile is not None:
        base["profile"] = args.profile
    for f in _TRAIN_FLAGS:
        v = getattr(args, f.name)
        if v is None:
            continue
        if _field_type(f) == "list":
            try:
                v = [int(t) for t in _csv_list(v)]
            except ValueError:
                raise UsageError(f"{_flag(f.name)} expects comma-separated integers") from None
        base[f.name] = v
    seed = _seed(args, fallback=base.get("seed", 0))
    base["seed"] = seed
    return TrainConfig.from_dict(base)


def _add_synth_flags(p):
    p.add_argument("--spec", help="SynthSpec JSON file; flags override its values (default: none)")
    d = SynthSpec()
    p.add_argument("--num-classes", type=int, default=None, help=f"(default: {d.num_classes})")
    p.add_argument("--samples-per-class", type=int, default=None, help=f"(default: {d.samples_per_class})")
    p.add_argument("--input-dim", type=int, default=None, help=f"(default: {d.input_dim})")
    p.add_argument("--sigma-min", type=float, default=None, help=f"(default: {d.sigma_range[0]})")
    p.add_argument("--sigma-max", type=float, default=None, help=f"(default: {d.sigma_range[1]})")


def _build_spec(args, seed):
    base = _load_json(args.spec, "--spec") if args.spec else {}
    if not isinstance(base, dict):
        raise UsageError("--spec must hold a JSON object")
    spec = SynthSpec.from_dict(base)
    lo, hi = spec.sigma_range
    upd = {k: v for k, v in (("num_classes", args.num_classes), ("samples_per_class", args.samples_per_class),
                              ("input_dim", args.input_dim)) if v is not None}
    if args.sigma_min is not None or args.sigma_max is not None:
        upd["sigma_range"] = (args.sigma_min if args.sigma_min is not None else lo,
                              args.sigma_max if args.sigma_max is not None else hi)
    if seed is not None:
        upd["seed"] = seed
    spec = dataclasses.replace(spec, **upd)
    spec.validate()
    return spec


def _spec_dict(spec):
    d = dataclasses.asdict(spec)
    d["sigma_range"] = list(d["sigma_range"])
    return d


# --- subcommands -------------------------------------------------------------

def cmd_gen_data(args):
    spec = _build_spec(args, _seed(args, fallback=None))
    ds = generate(spec)
    if args.format == "csv" or args.out.endswith(".csv"):
        write_csv(ds, args.out)
    else:
        write_dataset(ds, args.out)
    with open(args.out, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    write_json(_sidecar(args.out), {"command": "gen-data", "spec": _spec_dict(spec), "output": os.path.basename(args.out),
                                    "num_samples": len(ds), "sha256": digest})
    return 0


def cmd_train(args):
    config = _build_config(args)
    if args.data:
        data = _read_data(args.data)
        source = {"data": os.path.basename(args.data)}
    else:
        spec = _build_spec(args, config.seed)
        data = generate(spec)
        source = {"spec": _spec_dict(spec)}
    eval_data = _read_data(args.eval_data) if args.eval_data else None
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "config.json"), {"command": "train", "config": config.to_dict(), **source})
    trainer = Trainer(config, data)
    trainer.run(eval_data=eval_data, out_dir=args.out, eval_every_epoch=args.eval_every_epoch)
    save_checkpoint(trainer.model, os.path.join(args.out, "model.ckpt"))
    last = trainer.log.epochs[-1]
    summary = {"command": "train", "seed": config.seed, "epochs": config.epochs,
               "iterations": trainer.iteration, "final_mean_total": last["mean_total"],
               "initial_mean_total": trainer.log.epochs[0]["mean_total"],
               "tau": trainer.tau.tau, "tau0": trainer.tau0.tau}
    if "eval" in last:
        summary["eval"] = last["eval"]
    write_json(os.path.join(args.out, "summary.json"), summary)
    return 0


def _seed_list(args, config):
    return [config.seed + i for i in range(args.seeds)]


def cmd_ablate(args):
    config = _build_config(args)
    spec = _build_spec(args, config.seed)
    settings = _csv_list(args.settings)
    bad = [s for s in settings if s not in SETTINGS]
    if bad or not settings:
        raise UsageError(f"--settings: unknown setting(s) {bad}; choose from {list(SETTINGS)}")
    seeds = _seed_list(args, config)
    effective = {"command": "ablate", "config": config.to_dict(), "spec": _spec_dict(spec),
                 "settings": settings, "seeds": seeds, "train_frac": args.train_frac}
    write_json(_sidecar(args.out), effective)
    table = ablation_run(config, settings, seeds, spec, train_frac=args.train_frac, threads=args.threads)
    write_json(args.out, {"command": "ablate", "seeds": seeds, "table": table})
    return 0


def cmd_compare_losses(args):
    config = _build_config(args)
    spec = _build_spec(args, config.seed)
    variants = _csv_list(args.variants)
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"--variants: unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    seeds = _seed_list(args, config)
    write_json(_sidecar(args.out), {"command": "compare-losses", "config": config.to_dict(),
                                    "spec": _spec_dict(spec), "variants": variants, "seeds": seeds,
                                    "train_frac": args.train_frac})
    table = compare_losses(config, variants, seeds, spec, train_frac=args.train_frac, threads=args.threads)
    write_json(args.out, {"command": "compare-losses", "seeds": seeds, "table": table})
    return 0


def _embed(args):
    model = load_checkpoint(args.model)
    data = _read_data(args.data)
    emb, _ = forward(model, data.inputs)
    return emb, data


def cmd_eval_verify(args):
    seed = _seed(args)
    fars = [float(t) for t in _csv_list(args.fars)]
    emb, data = _embed(args)
    pairs = make_pairs(data.labels, args.num_pos, args.num_neg, make_rng(seed))
    rep = verification_report(emb, pairs, fars=fars, bin_width=args.bin_width)
    params = {"model": os.path.basename(args.model), "data": os.path.basename(args.data), "seed": seed,
              "num_pos": args.num_pos, "num_neg": args.num_neg, "fars": fars, "bin_width": args.bin_width}
    write_json(_sidecar(args.out), {"command": "eval-verify", **params})
    write_json(args.out, {"command": "eval-verify", **params, **rep.to_dict()})
    if args.hist:
        write_histogram_csv(rep, args.hist)
    return 0


def cmd_eval_cluster(args):
    seed = _seed(args)
    emb, data = _embed(args)
    if args.method == "kmeans":
        k = args.k if args.k is not None else data.num_classes
        (rng,) = spawn_rngs(seed, 1)
        pred = kmeans(emb, k, max_iters=args.max_iters, rng=rng)
        params = {"k": k}
    else:
        if args.eps is None:
            raise UsageError("--eps is required for --method dbscan")
        pred = dbscan(emb, args.eps, args.min_pts)
        params = {"eps": args.eps, "min_pts": args.min_pts}
    report = clustering_report(args.method, params, pred, data.labels)
    report["num_clusters"] = pred.num_clusters
    ctx = {"model": os.path.basename(args.model), "data": os.path.basename(args.data), "seed": seed}
    write_json(_sidecar(args.out), {"command": "eval-cluster", "method": args.method, **params, **ctx})
    write_json(args.out, {"command": "eval-cluster", **ctx, **report})
    return 0


def _loss_name(text):
    name = text.replace("-", "_")
    if name != "all" and name not in LOSS_NAMES:
        raise argparse.ArgumentTypeError(f"unknown loss {text!r}; choose from {', '.join(LOSS_NAMES)} or all")
    return name


def cmd_gradcheck(args):
    names = LOSS_NAMES if args.loss == "all" else (args.loss,)
    start = _seed(args)
    results = [gradcheck_loss(n, seeds=args.seeds, h=args.h, start=start) for n in names]
    worst = max(r["max_rel_err"] for r in results)
    ok = worst < GRADCHECK_TOL
    payload = {"command": "gradcheck", "first_seed": start, "tolerance": GRADCHECK_TOL,
               "results": results, "max_rel_err": worst, "passed": ok}
    if args.out:
        write_json(_sidecar(args.out), {"command": "gradcheck", "loss": args.loss, "seeds": args.seeds,
                                        "h": args.h, "first_seed": start})
        write_json(args.out, payload)
    else:
        json.dump({**payload, "timestamp": _timestamp()}, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
    if not ok:
        print(f"gradcheck failed: max_rel_err {worst:.3e} >= {GRADCHECK_TOL}", file=sys.stderr)
        return 1
    return 0


# --- parser ------------------------------------------------------------------

def _common(p, out_required=True, out_help="output JSON path"):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $CML_SEED, else config/0)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for multi-run commands (default: 1)")
    p.add_argument("--out", required=out_required, help=out_help)


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="clusterface", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset", formatter_class=fmt)
    _common(p, out_help="dataset path (.bin or .csv)")
    _add_synth_flags(p)
    p.add_argument("--format", choices=["bin", "csv"], default="bin", help="output format")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model", formatter_class=fmt)
    _common(p, out_help="output directory")
    p.add_argument("--data", help="training dataset; synthesized from --spec flags when omitted")
    p.add_argument("--eval-data", help="held-out dataset evaluated after the last epoch")
    p.add_argument("--eval-every-epoch", action="store_true", help="evaluate after every epoch")
    _add_synth_flags(p)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="loss-toggle ablation over seeds", formatter_class=fmt)
    _common(p, out_help="output table JSON path")
    p.add_argument("--settings", default=",".join(SETTINGS), help="comma list of setting ids")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, counting up from --seed")
    p.add_argument("--train-frac", type=float, default=0.8, help="per-class train fraction")
    _add_synth_flags(p)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare-losses", help="swap the contrastive-slot loss", formatter_class=fmt)
    _common(p, out_help="output table JSON path")
    p.add_argument("--variants", default="clu_con,center,triplet",
                   help=f"comma list from {','.join(VARIANTS)}")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, counting up from --seed")
    p.add_argument("--train-frac", type=float, default=0.8, help="per-class train fraction")
    _add_synth_flags(p)
    _add_train_overrides(p)
    p.set_defaults(func=cmd_compare_losses)

    p = sub.add_parser("eval-verify", help="pair verification report", formatter_class=fmt)
    _common(p, out_help="report JSON path")
    p.add_argument("--model", required=True, help="encoder checkpoint")
    p.add_argument("--data", required=True, help="dataset to embed")
    p.add_argument("--num-pos", type=int, default=1000, help="same-class pairs")
    p.add_argument("--num-neg", type=int, default=1000, help="cross-class pairs")
    p.add_argument("--fars", default="1e-4,1e-3,1e-2", help="comma list of FAR levels")
    p.add_argument("--bin-width", type=float, default=0.02, help="histogram bin width")
    p.add_argument("--hist", help="also write the histogram CSV here")
    p.set_defaults(func=cmd_eval_verify)

    p = sub.add_parser("eval-cluster", help="cluster embeddings and score them", formatter_class=fmt)
    _common(p, out_help="report JSON path")
    p.add_argument("--model", required=True, help="encoder checkpoint")
    p.add_argument("--data", required=True, help="dataset to embed")
    p.add_argument("--method", choices=["kmeans", "dbscan"], default="kmeans", help="clustering method")
    p.add_argument("--k", type=int, default=None, help="k-means cluster count (default: class count)")
    p.add_argument("--max-iters", type=int, default=100, help="k-means iteration cap")
    p.add_argument("--eps", type=float, default=None, help="DBSCAN radius")
    p.add_argument("--min-pts", type=int, default=5, help="DBSCAN core threshold")
    p.set_defaults(func=cmd_eval_cluster)

    p = sub.add_parser("gradcheck", help="finite-difference check of a loss", formatter_class=fmt)
    _common(p, out_required=False, out_help="report JSON path (stdout when omitted)")
    p.add_argument("--loss", type=_loss_name, default="all", help=f"one of {', '.join(LOSS_NAMES)}, or all")
    p.add_argument("--seeds", type=int, default=100, help="number of random instances")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"clusterface {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ClusterFaceError, ValueError, OSError) as exc:
        print(f"clusterface {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
