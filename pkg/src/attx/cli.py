"""Command line entry point: ``attx <subcommand> ...``"""
import argparse
import json
import logging
import os
import sys

import yaml

log = logging.getLogger("attx")


def _load_yaml(path):
    with open(path) as fh:
        return yaml.safe_load(fh) or {}


def cmd_synth(args):
    from .data import SyntheticSpec, export_records, generate_synthetic
    from .rng import default_seed

    d = _load_yaml(args.spec) if args.spec else {}
    d.setdefault("seed", default_seed())
    spec = SyntheticSpec.from_dict(d)
    records = generate_synthetic(spec)
    path = export_records(records, args.out, dataset_name=f"synthetic-{spec.cross_modal_mode}")
    print(f"wrote {len(records) // 2} subjects to {path}")
    return 0


def cmd_preprocess(args):
    from .config import load_config
    from .data import IngestManifest, ingest
    from .preprocess import build_dataset
    from .storage import write_dataset

    cfg = load_config(args.config)
    if args.zero_phase:
        cfg.pipeline.zero_phase = True
    windows = build_dataset(ingest(IngestManifest.load(args.manifest)), cfg.pipeline)
    write_dataset(args.out, windows)
    n_stress = sum(int(w.label) for w in windows)
    print(f"wrote {len(windows)} windows ({n_stress} stress) from "
          f"{len({w.subject_id for w in windows})} subjects to {args.out}")
    return 0


def _print_metrics(m):
    print(json.dumps({"accuracy": m.accuracy, "macro_f1": m.macro_f1, "weighted_f1": m.weighted_f1,
                      "confusion": m.confusion}, sort_keys=True))


def cmd_train(args):
    from .config import load_config
    from .model import assemble_model
    from .storage import read_dataset, save_checkpoint
    from .train import compute_metrics, predict, train

    cfg = load_config(args.config)
    windows = read_dataset(args.dataset)
    model = assemble_model(cfg.model, cfg.train.seed)
    _, history = train(model, windows, cfg.train,
                       progress=lambda e, l: log.info("epoch %d loss %.6f", e + 1, l))
    preds, _ = predict(model, windows)
    m = compute_metrics(preds, [int(w.label) for w in windows])
    save_checkpoint(args.out, model, extra={"loss_history": history, "train": cfg.train.to_dict()})
    _print_metrics(m)
    return 0


def cmd_evaluate(args):
    from .storage import load_checkpoint, read_dataset
    from .train import compute_metrics, predict

    model, _ = load_checkpoint(args.checkpoint)
    windows = read_dataset(args.dataset)
    preds, _ = predict(model, windows)
    _print_metrics(compute_metrics(preds, [int(w.label) for w in windows]))
    return 0


def cmd_ablate(args):
    from .config import load_config
    from .storage import read_dataset
    from .train import ablation_run, load_grid

    cfg = load_config(args.config)
    windows = read_dataset(args.dataset)
    table = ablation_run(windows, load_grid(args.grid), cfg.model, cfg.train, out_dir=args.out,
                         workers=args.threads)
    print(table.to_text(), end="")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import OPS, run_all

    if args.op is not None and args.op not in OPS + ("model",):
        print(f"unknown op {args.op!r}; choose from {', '.join(OPS + ('model',))}", file=sys.stderr)
        return 2
    if args.op == "model":
        results = run_all(ops=[], include_model=True)
    elif args.op is not None:
        results = run_all(ops=[args.op], include_model=False)
    else:
        results = run_all()
    ok = True
    for name, err in results.items():
        passed = err < args.tol
        ok &= passed
        print(f"{name:34s} max rel err {err:.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="attx", description="AttX multimodal ECG/EDA experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset in the ingestion layout")
    s.add_argument("--spec", help="YAML file with SyntheticSpec fields")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("preprocess", help="manifest + CSVs -> windowed dataset file")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--zero-phase", action="store_true", help="forward-backward filtering instead of causal")
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("train", help="train one model on a dataset file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on a dataset file")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("ablate", help="LOSO over a grid of model variants")
    s.add_argument("--dataset", required=True)
    s.add_argument("--grid", required=True, help='"table1", "table3" or a YAML grid file')
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--threads", type=int, default=1, help="folds run in parallel")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--op")
    s.add_argument("--tol", type=float, default=1e-3)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for attr in ("spec", "manifest", "dataset", "config"):
        path = getattr(args, attr, None)
        if path is not None and not os.path.exists(path):
            parser.error(f"--{attr}: no such file {path}")
    if getattr(args, "checkpoint", None) is not None and not os.path.isdir(args.checkpoint):
        parser.error(f"--checkpoint: no such checkpoint directory {args.checkpoint}")
    if getattr(args, "grid", None) not in (None, "table1", "table3") and not os.path.exists(args.grid):
        parser.error(f"--grid: no such file {args.grid}")
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"attx {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
