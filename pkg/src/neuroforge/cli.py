"""Command-line entry point.

Exit codes: 0 on success, 1 for invalid flags or inputs, 2 when a run fails.
``NEUROFORGE_SEED`` overrides every seed found in a config file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .arch.materialize import materialize
from .arch.network import NetworkSpec, canonical_json, parameter_ledger, structure_stats
from .data import Dataset, load_dataset, synth_dataset
from .growth import HistoryLog, SearchConfig, aging_search
from .pruning import (
    PruneConfig, ResNetSpec, build_resnet, build_sp_resnet, history_csv, neural_composition,
    pruning_search, resnet_ledger, resnet_spec,
)
from .train import TrainConfig, scale_settings, spec_evaluator, train_and_eval

log = logging.getLogger("neuroforge")

SEED_ENV = "NEUROFORGE_SEED"


class UsageError(Exception):
    """Invalid flag or input; the message names the offending flag."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers


def _read_json(path: str, flag: str) -> dict:
    try:
        with open(path) as f:
            obj = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"{flag}: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag}: {path} is not valid JSON ({exc})")
    if not isinstance(obj, dict):
        raise UsageError(f"{flag}: {path} must hold a JSON object")
    return obj


def _seed_override() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}")


def _section(config: dict, key: str, cls, flag: str):
    obj = dict(config.get(key, {}))
    seed = _seed_override()
    if seed is not None and "seed" in cls.__dataclass_fields__:
        obj["seed"] = seed
    try:
        return cls.from_json(obj) if hasattr(cls, "from_json") else cls(**obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{flag}: invalid '{key}' section: {exc}")


def _parse_synth(text: str) -> Dataset:
    opts = {"classes": 4, "n": 2000, "dim": 16, "channels": 3, "difficulty": 1.0, "seed": 0}
    body = text[len("synth:"):]
    for item in filter(None, body.split(",")):
        key, _, value = item.partition("=")
        if key not in opts:
            raise UsageError(f"--dataset: unknown synthetic option {key!r}")
        try:
            opts[key] = type(opts[key])(value)
        except ValueError:
            raise UsageError(f"--dataset: bad value {value!r} for {key}")
    seed = _seed_override()
    if seed is not None:
        opts["seed"] = seed
    return synth_dataset(opts["classes"], opts["n"], opts["dim"], opts["channels"],
                         opts["difficulty"], opts["seed"])


def _load_dataset(arg: str) -> Dataset:
    """``synth:key=value,...`` or a path to an NFT1 archive / CIFAR-10 binary file."""
    if arg.startswith("synth:"):
        return _parse_synth(arg)
    if not os.path.exists(arg):
        raise UsageError(f"--dataset: file not found: {arg}")
    try:
        return load_dataset(arg)
    except Exception as exc:
        raise UsageError(f"--dataset: cannot read {arg}: {exc}")


def _load_arch(path: str, flag: str = "--arch"):
    obj = _read_json(path, flag)
    try:
        if obj.get("kind") == "resnet":
            return ResNetSpec.from_json(obj)
        return NetworkSpec.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{flag}: {path} is not a valid architecture: {exc}")


def _write(path: str, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)


def _csv(rows: list[list], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_manifest(out_dir: str, command: str, config: dict, seed, inputs: dict,
                    outputs: list[str]) -> None:
    # no timestamps, so a seeded rerun rewrites every file byte for byte
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    _write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _prepare_out(path: str) -> None:
    if os.path.exists(path) and not os.path.isdir(path):
        raise UsageError(f"--out: {path} exists and is not a directory")
    os.makedirs(path, exist_ok=True)


# --------------------------------------------------------------------------
# commands


def cmd_grow_search(args) -> int:
    dataset = _load_dataset(args.dataset)
    config = _read_json(args.config, "--config") if args.config else {}
    search = _section(config, "search", SearchConfig, "--config")
    train = _section(config, "train", TrainConfig, "--config")
    # the initial networks must match the data
    search_obj = search.to_json()
    search_obj.update(num_classes=dataset.num_classes, input_shape=list(dataset.input_shape))
    search = SearchConfig.from_json(search_obj)
    _prepare_out(args.out)
    result = aging_search(search, spec_evaluator(dataset, train), args.out, resume=args.resume)
    _write(os.path.join(args.out, "best.json"), result.best.spec.dumps() + "\n")
    summary = {
        "best": result.best.to_json(),
        "baseline": {"alpha_init": result.baseline.alpha_init, "eta_init": result.baseline.eta_init,
                     "k": result.baseline.k},
        "records": len(result.history),
        "stop_reason": result.stop_reason,
    }
    _write(os.path.join(args.out, "summary.json"), canonical_json(summary) + "\n")
    _write_manifest(args.out, "grow-search", {"search": search.to_json(), "train": train.to_json()},
                    search.seed, {"dataset": args.dataset, "config": args.config},
                    ["history.jsonl", "specs/", "best.json", "summary.json"])
    print(f"best {result.best.digest} epsilon={result.best.epsilon:.6f} alpha={result.best.alpha:.4f} "
          f"eta={result.best.eta} ({len(result.history)} records, stop: {result.stop_reason})")
    return 0


def _resnet_from_config(config: dict, dataset: Dataset) -> ResNetSpec:
    arch = config.get("resnet", {"n_blocks": 1, "n_filters": 6})
    try:
        if arch.get("kind") == "resnet":
            spec = ResNetSpec.from_json(arch)
            obj = spec.to_json()
        elif arch.get("preset") == "sp-resnet":
            obj = build_sp_resnet().to_json()
        else:
            obj = resnet_spec(int(arch.get("n_blocks", 1)), int(arch.get("n_filters", 6))).to_json()
        obj.update(num_classes=dataset.num_classes, input_shape=list(dataset.input_shape))
        return ResNetSpec.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"--config: invalid 'resnet' section: {exc}")


def cmd_prune_search(args) -> int:
    dataset = _load_dataset(args.dataset)
    config = _read_json(args.config, "--config") if args.config else {}
    train = _section(config, "train", TrainConfig, "--config")
    prune = _section(config, "prune", PruneConfig, "--config")
    spec = _resnet_from_config(config, dataset)
    _prepare_out(args.out)
    network = build_resnet(spec, seed=train.seed)
    base = train_and_eval(network, dataset, train)
    result = pruning_search(network, dataset, prune, alpha0=base.alpha)
    _write(os.path.join(args.out, "pruning.csv"), history_csv(result.state.history))
    composition = neural_composition(network)
    _write(os.path.join(args.out, "composition.json"),
           canonical_json({str(k): v for k, v in composition.items()}) + "\n")
    _write(os.path.join(args.out, "resnet.json"), spec.dumps() + "\n")
    summary = {"alpha0": base.alpha, "eta0": base.eta, "final_alpha": result.final_alpha,
               "final_eta": network.eta, "pruned": len(result.state.history),
               "stop_reason": result.stop_reason}
    _write(os.path.join(args.out, "summary.json"), canonical_json(summary) + "\n")
    _write_manifest(args.out, "prune-search",
                    {"resnet": spec.to_json(), "train": train.to_json(),
                     "prune": {**prune.__dict__, "finetune_lrs": list(prune.finetune_lrs)}},
                    train.seed, {"dataset": args.dataset, "config": args.config},
                    ["pruning.csv", "composition.json", "resnet.json", "summary.json"])
    print(f"alpha0={base.alpha:.4f} final_alpha={result.final_alpha:.4f} pruned={len(result.state.history)} "
          f"eta {base.eta} -> {network.eta} (stop: {result.stop_reason})")
    return 0


def cmd_train(args) -> int:
    arch = _load_arch(args.arch)
    dataset = _load_dataset(args.dataset)
    config = _read_json(args.config, "--config") if args.config else {}
    train = _section(config, "train", TrainConfig, "--config")
    if tuple(arch.input_shape) != dataset.input_shape or arch.num_classes != dataset.num_classes:
        raise UsageError(
            f"--arch: expects input {tuple(arch.input_shape)} with {arch.num_classes} classes, dataset has "
            f"{dataset.input_shape} with {dataset.num_classes}"
        )
    _prepare_out(args.out)
    if isinstance(arch, ResNetSpec):
        network = build_resnet(arch, seed=train.seed)
    else:
        network = materialize(arch, seed=train.seed, tl_scale=train.tl_scale)
    result = train_and_eval(network, dataset, train)
    metrics = {"alpha": result.alpha, "eta": result.eta, "final_loss": result.final_loss}
    _write(os.path.join(args.out, "metrics.json"), canonical_json(metrics) + "\n")
    _write_manifest(args.out, "train", {"arch": arch.to_json(), "train": train.to_json()}, train.seed,
                    {"arch": args.arch, "dataset": args.dataset, "config": args.config},
                    ["metrics.json"])
    print(f"alpha={result.alpha:.4f} eta={result.eta}")
    return 0


def cmd_build(args) -> int:
    for flag, value in (("--nb", args.nb), ("--nf", args.nf), ("--classes", args.classes)):
        if value < 1 or (flag == "--classes" and value < 2):
            raise UsageError(f"{flag}: must be positive (classes at least 2), got {value}")
    base = resnet_spec(args.nb, args.nf, args.classes)
    if args.preset == "sp-resnet":
        if (args.nb, args.nf) != (3, 48):
            raise UsageError("--preset: sp-resnet derives from --nb 3 --nf 48")
        spec = build_sp_resnet(base)
    else:
        spec = base
    _write(args.out, spec.dumps() + "\n")
    print(f"wrote {args.preset} spec to {args.out}")
    return 0


def _top_records(directory: str, top: int):
    _, records, _ = HistoryLog(directory).load()
    ranked = sorted(records, key=lambda r: (-r.epsilon if np.isfinite(r.epsilon) else np.inf, r.age))
    return ranked[:top]


def structure_tables(specs: Sequence[NetworkSpec]) -> tuple[list[list], list[list]]:
    """Per-stack H/W mean and std, and per-stack op-kind fractions, over ``specs``."""
    stats = [structure_stats(s) for s in specs]
    n_stacks = len(stats[0])
    hw_rows, op_rows = [], []
    for s in range(n_stacks):
        h = np.array([st[s].height for st in stats], dtype=float)
        w = np.array([st[s].width for st in stats], dtype=float)
        hw_rows.append([s, float(h.mean()), float(h.std()), float(w.mean()), float(w.std())])
        hist: dict[str, int] = {}
        for st in stats:
            for k, v in st[s].op_histogram.items():
                hist[k] = hist.get(k, 0) + v
        total = sum(hist.values())
        for k in sorted(hist):
            op_rows.append([s, k, hist[k], hist[k] / total if total else 0.0])
    return hw_rows, op_rows


def cmd_analyze(args) -> int:
    if args.top < 1:
        raise UsageError(f"--top: must be positive, got {args.top}")
    if not os.path.isdir(args.history):
        raise UsageError(f"--history: not a directory: {args.history}")
    _prepare_out(args.out)
    report: dict = {}
    outputs = []
    if os.path.exists(os.path.join(args.history, "history.jsonl")):
        records = _top_records(args.history, args.top)
        if not records:
            raise UsageError(f"--history: {args.history} holds no records")
        hw, ops_rows = structure_tables([r.spec for r in records])
        _write(os.path.join(args.out, "structure.csv"),
               _csv([[s, repr(a), repr(b), repr(c), repr(d)] for s, a, b, c, d in hw],
                    ["stack", "H_mean", "H_std", "W_mean", "W_std"]))
        _write(os.path.join(args.out, "op_composition.csv"),
               _csv([[s, k, n, repr(f)] for s, k, n, f in ops_rows], ["stack", "op", "count", "fraction"]))
        report["structure"] = [dict(zip(["stack", "H_mean", "H_std", "W_mean", "W_std"], r)) for r in hw]
        report["op_composition"] = [dict(zip(["stack", "op", "count", "fraction"], r)) for r in ops_rows]
        report["records"] = [r.to_json() for r in records]
        outputs += ["structure.csv", "op_composition.csv"]
    comp_path = os.path.join(args.history, "composition.json")
    if os.path.exists(comp_path):
        comp = _read_json(comp_path, "--history")
        rows = [[int(s), kind, frac] for s, fr in sorted(comp.items(), key=lambda kv: int(kv[0]))
                for kind, frac in fr.items()]
        _write(os.path.join(args.out, "neural_composition.csv"),
               _csv([[s, k, repr(f)] for s, k, f in rows], ["stack", "kind", "fraction"]))
        report["neural_composition"] = comp
        outputs.append("neural_composition.csv")
    if not outputs:
        raise UsageError(f"--history: {args.history} has neither history.jsonl nor composition.json")
    _write(os.path.join(args.out, "report.json"), canonical_json(report) + "\n")
    outputs.append("report.json")
    _write_manifest(args.out, "analyze", {"top": args.top}, None, {"history": args.history}, outputs)
    print(f"wrote {', '.join(outputs)} to {args.out}")
    return 0


def cmd_scale(args) -> int:
    if args.n_ds < 1:
        raise UsageError(f"--n-ds: must be positive, got {args.n_ds}")
    if args.c_ds < 1:
        raise UsageError(f"--c-ds: must be positive, got {args.c_ds}")
    s = scale_settings(args.n_ds, args.c_ds, channel_factor=not args.no_channel_factor)
    print(f"N_F={s.n_filters} N_S={s.n_steps}")
    return 0


def cmd_params(args) -> int:
    arch = _load_arch(args.arch)
    if isinstance(arch, ResNetSpec):
        items = resnet_ledger(arch)
        convs = {s: 2 * arch.blocks[s] for s in range(arch.n_stacks)}
        print("conv layers per stack: " + " ".join(str(convs[s]) for s in sorted(convs)))
    else:
        items = parameter_ledger(arch)
    for item in items:
        print(f"{item.name}\t{item.category}\t{item.count}")
    print(f"total\t{sum(i.count for i in items)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neuroforge", description="Growth and pruning architecture search on a numpy core.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("grow-search", help="aging-evolution growth search")
    g.add_argument("--dataset", required=True, help="NFT1/CIFAR file or synth:key=value,...")
    g.add_argument("--config", help="JSON with optional 'search' and 'train' sections")
    g.add_argument("--out", required=True)
    g.add_argument("--resume", action="store_true", help="continue the history in --out")
    g.set_defaults(fn=cmd_grow_search)

    pr = sub.add_parser("prune-search", help="train a ResNet then prune it")
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--config", help="JSON with optional 'resnet', 'train' and 'prune' sections")
    pr.add_argument("--out", required=True)
    pr.set_defaults(fn=cmd_prune_search)

    t = sub.add_parser("train", help="train one architecture")
    t.add_argument("--arch", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("build", help="write a ResNet or SP-ResNet spec")
    b.add_argument("--preset", choices=["resnet", "sp-resnet"], required=True)
    b.add_argument("--nb", type=int, default=3)
    b.add_argument("--nf", type=int, default=48)
    b.add_argument("--classes", type=int, default=10)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_build)

    a = sub.add_parser("analyze", help="structure and composition tables from a run directory")
    a.add_argument("--history", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--top", type=int, default=10)
    a.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("scale", help="filters and steps for a dataset size")
    s.add_argument("--n-ds", type=int, required=True)
    s.add_argument("--c-ds", type=int, required=True)
    s.add_argument("--no-channel-factor", action="store_true")
    s.set_defaults(fn=cmd_scale)

    pa = sub.add_parser("params", help="itemized parameter ledger")
    pa.add_argument("--arch", required=True)
    pa.set_defaults(fn=cmd_params)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
