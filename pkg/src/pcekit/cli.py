"""``pcekit`` command line: gen, train, grid, eval, ablation, incontext, inspect.

Settings come from an optional JSON file (``--config``) with sections
``generator``, ``train``, ``model``, ``split`` and ``llm``; flags given on
the command line win.  The resolved configuration is echoed into every
artifact, output paths excluded, so repeated runs give identical bytes.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .data import DataFormatError, load_dataset_dir, save_dataset, save_metrics, stratified_split
from .encoding import amplify, format_matrix, transition_matrix

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class UsageError(Exception):
    pass


# flag dest -> (section, key)
_FLAG_MAP = {
    "n_participants": ("generator", "n_participants"),
    "n_stimuli": ("generator", "n_stimuli"),
    "n_samples": ("generator", "n_samples"),
    "signal_strength": ("generator", "signal_strength"),
    "mean_fixations": ("generator", "mean_fixations"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "max_epochs"),
    "weight_decay": ("train", "weight_decay"),
    "override": ("train", "override"),
    "lam": ("model", "lam"),
    "ff_dim": ("model", "ff_dim"),
    "emb_dim": ("model", "emb_dim"),
    "n_heads": ("model", "n_heads"),
    "n_layers": ("model", "n_layers"),
    "model_dim": ("model", "model_dim"),
    "bias_layers": ("model", "bias_layers"),
    "counted": ("model", "counted"),
    "positional": ("model", "positional"),
    "no_participant": ("model", "use_participant"),
}


def resolve_config(args) -> dict:
    """Merge the config file with flags (flags win) into plain JSON sections."""
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"{path}: top level must be an object")
    out = {k: dict(cfg.get(k, {})) for k in ("generator", "train", "model", "split", "llm")}
    seed = cfg.get("seed", 0)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
        for sec in ("generator", "train", "split"):
            out[sec]["seed"] = seed
    for sec in ("generator", "train", "split"):
        out[sec].setdefault("seed", seed)
    out["seed"] = seed
    for dest, (sec, key) in _FLAG_MAP.items():
        val = getattr(args, dest, None)
        if val is None or val is False:
            continue
        out[sec][key] = (not val) if dest == "no_participant" else val
    if getattr(args, "model", None):
        out["train"]["kind"] = args.model
    out["split"].setdefault("fractions", [0.8, 0.1, 0.1])
    return out


def _generator_config(rc):
    from .synth import GeneratorConfig

    return GeneratorConfig(**rc["generator"])


def _train_config(rc):
    from .models import ModelConfig
    from .training import TrainConfig

    tr = dict(rc["train"])
    tr.pop("model", None)
    return TrainConfig(**tr, model=ModelConfig(**rc["model"]))


def _load_data(args):
    d = Path(args.data)
    if not d.is_dir():
        raise UsageError(f"data directory not found: {d}")
    ds = load_dataset_dir(d)
    provider = None
    if (d / "features.json").is_file():
        from .synth import FeatureStore, StoreFeatureProvider

        provider = StoreFeatureProvider(FeatureStore.load(d))
    return ds, provider


def _split(ds, rc):
    fr = rc["split"]["fractions"]
    return stratified_split(ds, fr, seed=rc["split"]["seed"])


def _pick_split(splits, name):
    names = {"train": 0, "val": 1, "test": 2}
    return splits[names[name]]


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- subcommands --------------------------------------------------------------

def cmd_gen(args, rc, gcfg):
    from .synth import generate_features, synthesize

    out = _out(args)
    corpus = synthesize(gcfg)
    save_dataset(corpus.dataset, out)
    generate_features(gcfg, corpus.dataset).save(out)
    _write_json(out / "run_config.json", rc)
    print(f"wrote {len(corpus.dataset)} samples over {len(corpus.dataset.stimuli)} stimuli to {out}")


def cmd_train(args, rc, tcfg):
    from .training import train

    ds, provider = _load_data(args)
    splits = _split(ds, rc)
    out = _out(args)
    report = train(tcfg.kind, splits, tcfg, provider, out_dir=out, log_path=out / "train_log.jsonl")
    obj = report.to_json()
    obj["checkpoint"] = Path(report.checkpoint).name if report.checkpoint else None
    for comp in obj["components"].values():
        comp["checkpoint"] = None
    obj["run_config"] = rc
    _write_json(out / "train_report.json", obj)
    print(f"{report.kind}: best epoch {report.best_epoch}, validation macro-F1 {report.best_val_macro_f1:.4f}")


def cmd_grid(args, rc, tcfg):
    from .training import grid_search

    ds, provider = _load_data(args)
    out = _out(args)
    ranked = grid_search(tcfg.kind, _split(ds, rc), base=tcfg, provider=provider, out_csv=out / "grid.csv",
                         workers=args.workers)
    _write_json(out / "grid_config.json", rc)
    best = ranked[0]
    failed = sum(c.status != "ok" for c in ranked)
    print(f"{len(ranked)} cells, {failed} failed; best lr={best.lr} ff={best.ff_dim} emb={best.emb_dim} "
          f"batch={best.batch_size}: macro-F1 {best.val_macro_f1:.4f}")


def cmd_eval(args, rc, _):
    from .evaluation import evaluate
    from .models import load_model

    ds, provider = _load_data(args)
    stem = Path(args.checkpoint)
    if not stem.with_suffix(".json").is_file():
        raise UsageError(f"checkpoint not found: {stem.with_suffix('.json')}")
    part = _pick_split(_split(ds, rc), args.split)
    model = load_model(stem, ds, provider)
    report = evaluate(model.predict(part.samples), part.labels(), args.protocol, twoclass_remap=args.twoclass_remap)
    echo = {"run_config": rc, "split": args.split, "model_kind": model.kind, "twoclass_remap": args.twoclass_remap}
    save_metrics(report, _out(args) / "metrics.json", echo)
    print(f"{args.protocol}: n={report.n_evaluated}/{report.n_total} accuracy {report.accuracy:.4f} "
          f"macro-F1 {report.macro_f1:.4f}")


def cmd_ablation(args, rc, tcfg):
    from .evaluation import ablation_table
    from .training import train_ablation

    ds, provider = _load_data(args)
    if provider is None:
        raise UsageError(f"{args.data}: features.json missing; the transformer rows need features")
    splits = _split(ds, rc)
    preds = train_ablation(splits, tcfg, provider)
    table = ablation_table(preds, splits[2].labels(), splits[0].labels())
    out = _out(args)
    (out / "ablation.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "ablation.txt").write_text(table.to_text(), encoding="utf-8")
    _write_json(out / "ablation_config.json", rc)
    print(table.to_text(), end="")


def cmd_incontext(args, rc, _):
    from .llm import HttpChatClient, MockClient, run_incontext_eval

    ds, _ = _load_data(args)
    splits = _split(ds, rc)
    part = _pick_split(splits, args.split)
    llm = rc["llm"]
    endpoint = args.endpoint or llm.get("endpoint")
    if args.mock:
        client = MockClient(args.mock)
    elif endpoint:
        client = HttpChatClient(endpoint, args.llm_model or llm.get("model", "default"),
                                timeout=llm.get("timeout", 60.0), retries=llm.get("retries", 2))
    else:
        raise UsageError("incontext needs --endpoint (or llm.endpoint in the config) or --mock")
    out = _out(args)
    res = run_incontext_eval(part, args.setup, client, args.protocol, transcript=out / "transcript.jsonl",
                             demo_pool=splits[0].samples, workers=args.workers)
    if res.report is None:
        raise RuntimeError(f"all {len(res.failed)} requests failed")
    echo = {"run_config": rc, "split": args.split, "setup": args.setup, "failed": len(res.failed)}
    save_metrics(res.report, out / "metrics.json", echo)
    print(f"{args.setup}: n={res.report.n_evaluated} accuracy {res.report.accuracy:.4f} "
          f"macro-F1 {res.report.macro_f1:.4f}; failed {len(res.failed)}")


def cmd_inspect(args, rc, _):
    ds, _ = _load_data(args)
    if args.participant and args.stimulus:
        try:
            sample = ds.find(args.participant, args.stimulus)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    else:
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} out of range for {len(ds)} samples")
        sample = ds.samples[args.index]
    lam = args.lam if args.lam is not None else 5.0
    t = transition_matrix(sample.sequence, counted=args.counted)
    print(f"participant {sample.participant_id}  stimulus {sample.stimulus_id}  label {sample.label.text}")
    print(f"caption: {ds.stimuli[sample.stimulus_id].caption}")
    print("fixations:")
    for f in sample.sequence.fixations:
        print(f"  {f.index:>3}  {f.aoi:<20} ({f.x:g}, {f.y:g})  {f.duration_ms:.2f} ms")
    print("transition matrix:")
    print(format_matrix(t.m, t.order))
    print(f"amplified (lambda={lam:g}):")
    print(format_matrix(amplify(t, lam), t.order))


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcekit", description="Perception-guided crossmodal entailment toolkit")
    p.add_argument("--version", action="version", version=f"pcekit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def model_flags(sp):
        sp.add_argument("--model", choices=("lstm", "transformer", "pgmt", "ensemble"))
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--weight-decay", type=float)
        sp.add_argument("--ff-dim", type=int)
        sp.add_argument("--emb-dim", type=int)
        sp.add_argument("--n-heads", type=int)
        sp.add_argument("--n-layers", type=int)
        sp.add_argument("--model-dim", type=int)
        sp.add_argument("--bias-layers", choices=("all", "first"))
        sp.add_argument("--counted", action="store_true", help="transition counts instead of 0/1")
        sp.add_argument("--positional", action="store_true", help="add sinusoidal position encodings")
        sp.add_argument("--no-participant", action="store_true", help="disable the participant embedding")
        sp.add_argument("--override", action="store_true", help="allow values outside the hyperparameter grids")

    sp = sub.add_parser("gen", help="generate a synthetic dataset and its features")
    common(sp, data=False)
    sp.add_argument("--n-participants", type=int)
    sp.add_argument("--n-stimuli", type=int)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--signal-strength", type=float)
    sp.add_argument("--mean-fixations", type=float)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train one model and checkpoint its best epoch")
    common(sp)
    model_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("grid", help="exhaustive hyperparameter grid search")
    common(sp)
    model_flags(sp)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("eval", help="score a checkpoint on a split")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="checkpoint path (with or without .json)")
    sp.add_argument("--protocol", choices=("3class", "2class"), default="3class")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--twoclass-remap", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablation", help="train the signal-ablation variants and tabulate them")
    common(sp)
    model_flags(sp)
    sp.set_defaults(func=cmd_ablation)

    sp = sub.add_parser("incontext", help="evaluate a chat model with in-context prompts")
    common(sp)
    sp.add_argument("--setup", choices=("zero", "fix", "one"), default="zero")
    sp.add_argument("--protocol", choices=("3class", "2class"), default="3class")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--endpoint", help="chat-completion URL; token read from $PCEKIT_API_TOKEN")
    sp.add_argument("--llm-model", help="model name sent to the endpoint")
    sp.add_argument("--mock", help="offline client: a fixed reply such as 'yes'")
    sp.add_argument("--workers", type=int, default=4)
    sp.set_defaults(func=cmd_incontext)

    sp = sub.add_parser("inspect", help="print a sample's fixations, transition matrix and amplified bias")
    common(sp, out=False)
    sp.add_argument("--participant")
    sp.add_argument("--stimulus")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--counted", action="store_true")
    sp.set_defaults(func=cmd_inspect)
    return p


def _build_configs(command, rc):
    """Validate the resolved configuration before any work starts."""
    if command == "gen":
        return _generator_config(rc)
    if command in ("train", "grid", "ablation"):
        return _train_config(rc)
    fr = rc["split"]["fractions"]
    if len(fr) != 3:
        raise ValueError(f"split.fractions needs three values, got {fr}")
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = resolve_config(args)
        built = _build_configs(args.command, rc)
    except UsageError as exc:
        print(f"pcekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TypeError, ValueError) as exc:
        print(f"pcekit {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, rc, built) or 0
    except (UsageError, DataFormatError, FileNotFoundError) as exc:
        print(f"pcekit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"pcekit {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
