"""Command-line entry point: ``claire <subcommand> ...``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ClaireError, ConfigError, NumericalError

log = logging.getLogger("claire")

GRAD_TOL = {"losses": 1e-4, "cmaf": 1e-3, "network": 1e-3}


def load_dataset(path, split: str = "test"):
    """A ``SampleSet`` from an ``.npz`` file, a ``synth`` output directory
    (``<split>.npz``) or a ``preprocess`` output directory (``index.json``)."""
    from .harness.synthetic import SampleSet
    from .preprocess import Sample

    path = Path(path)
    if path.is_file():
        return SampleSet.load(path)
    if (path / f"{split}.npz").is_file():
        return SampleSet.load(path / f"{split}.npz")
    if (path / "index.json").is_file():
        index = json.loads((path / "index.json").read_text())["samples"]
        if not index:
            raise ConfigError(f"{path} holds no samples")
        samples = [Sample.load(path / e["file"]) for e in index]
        return SampleSet.from_samples(samples, int(index[0]["num_classes"]))
    raise ConfigError(f"cannot find a dataset at {path}")


def cmd_preprocess(args):
    from .preprocess import preprocess_manifest

    print(preprocess_manifest(args.manifest, args.out, args.patch_size))


def cmd_synth(args):
    from .harness.config import load_config
    from .harness.synthetic import generate_synthetic, save_splits

    _, spec = load_config(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    for p in save_splits(generate_synthetic(spec), args.out):
        print(p)


def cmd_train(args):
    from .harness.config import OUT_DIR_ENV, load_config
    from .harness.synthetic import generate_synthetic, save_splits
    from .harness.training import train

    cfg, spec = load_config(args.config)
    if args.out is not None:
        cfg.checkpoint_dir = args.out
    if cfg.checkpoint_dir is None:
        raise ConfigError(f"no output directory: pass --out or set {OUT_DIR_ENV}")
    if args.epochs is not None:
        cfg.epochs = args.epochs
    overrides = {k: getattr(args, k) for k in ("alpha", "beta", "gamma") if getattr(args, k) is not None}
    if args.loss is not None or overrides:
        from .losses import LossConfig

        base = cfg.loss.to_dict()
        base.update(overrides)
        if args.loss is not None:
            base["family"] = args.loss
        cfg.loss = LossConfig(**base)
    out = Path(cfg.checkpoint_dir)
    if args.data:
        train_set, val_set = load_dataset(args.data, "train"), load_dataset(args.data, "val")
    else:
        splits = generate_synthetic(spec)
        save_splits(splits, out / "data")
        train_set, val_set = splits[0], splits[1]

    def progress(e):
        log.info("epoch %d  train_loss %.4f  val_loss %.4f  val_dice %.4f  lr %.2e", e["epoch"],
                 e["train_loss"], e["val_loss"], e["val_dice"], e["lr"])

    _, tlog, ckpt = train(cfg, train_set, val_set, progress=progress)
    (out / "training_log.json").write_text(json.dumps(tlog.to_dict(), indent=2))
    print(f"best epoch {tlog.best_epoch}  val Dice {tlog.best_val_dice:.4f}  checkpoint {ckpt}")


def cmd_eval(args):
    from .harness.checkpoint import load_checkpoint
    from .harness.evaluation import evaluate

    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, "test")
    res = evaluate(model, data, batch_size=args.batch_size, dump_gates=args.dump_gates,
                   modality_ablation=not args.no_ablation, per_sample=bool(args.per_sample))
    res.report.to_json(args.report)
    if args.csv:
        res.report.write_csv(args.csv)
    if args.per_sample:
        with open(args.per_sample, "w") as fh:
            for r in res.sample_reports:
                fh.write(json.dumps(r.to_dict()) + "\n")
    r = res.report
    print(f"OA {r.oa:.4f}  mIoU {r.miou:.4f}  kappa {r.kappa:.4f}  -> {args.report}")


def cmd_gradcheck(args):
    from .harness.gradcheck import COMPONENTS, grad_check

    comps = COMPONENTS if args.component == "all" else (args.component,)
    failed = False
    for c in comps:
        err = grad_check(c, args.seed)
        ok = err < GRAD_TOL[c]
        failed |= not ok
        print(f"{c:8s} max rel. error {err:.3e}  (tol {GRAD_TOL[c]:.0e})  {'ok' if ok else 'FAIL'}")
    if failed:
        raise NumericalError("gradient check failed")


def _read_reports(path):
    from .metrics import MetricsReport

    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is neither JSON nor JSONL: {exc}") from exc
    if isinstance(data, dict):
        data = [data]
    try:
        return [MetricsReport.from_dict(d) for d in data]
    except TypeError as exc:
        raise ConfigError(f"{path} is not a metrics report: {exc}") from exc


def cmd_explain(args):
    from .reasoning import EXTERNAL, EndpointConfig, explain_reports, write_jsonl

    reports = _read_reports(args.report)
    endpoint = None
    if args.mode == EXTERNAL:
        if not args.endpoint:
            raise ConfigError("--mode external needs --endpoint")
        endpoint = EndpointConfig(url=args.endpoint, model=args.model, timeout=args.timeout)
    exps = explain_reports(reports, args.mode, endpoint, max_in_flight=args.max_in_flight)
    if args.out:
        write_jsonl(exps, args.out)
    for e in exps:
        print(json.dumps(e.to_dict()))


def cmd_plot(args):
    from .metrics import MetricsReport
    from . import plotting

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (args.report or args.log or args.gates):
        raise ConfigError("nothing to plot: pass --report, --log and/or --gates")
    if args.report:
        print(plotting.plot_iou(MetricsReport.from_json(args.report), out / "iou.png"))
    if args.log:
        print(plotting.plot_training(json.loads(Path(args.log).read_text()), out / "training.png"))
    if args.gates:
        print(plotting.plot_gates(args.gates, out / "gates.png"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="claire", description="Optical/SAR fusion segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="tile a manifest of raw scenes into samples")
    s.add_argument("--manifest", required=True)
    s.add_argument("--patch-size", type=int, default=256)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="generate a synthetic train/val/test set")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a TOML config")
    s.add_argument("--config")
    s.add_argument("--data", help="dataset directory; synthetic data is generated when omitted")
    s.add_argument("--out", help="output directory (overrides config and environment)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--loss", help="loss family, e.g. rift, ce, tversky")
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--gamma", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--csv")
    s.add_argument("--per-sample", help="JSONL file for per-sample reports")
    s.add_argument("--dump-gates", help="directory for gate PNGs")
    s.add_argument("--no-ablation", action="store_true", help="skip single-modality runs")
    s.add_argument("--batch-size", type=int, default=8)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--component", choices=("all", "losses", "cmaf", "network"), default="all")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("explain", help="explain metrics reports")
    s.add_argument("--report", required=True, help="report JSON, list of reports or JSONL")
    s.add_argument("--mode", choices=("template", "external"), default="template")
    s.add_argument("--endpoint")
    s.add_argument("--model", default="phi-3-mini")
    s.add_argument("--timeout", type=float, default=30.0)
    s.add_argument("--max-in-flight", type=int, default=2)
    s.add_argument("--out", help="JSONL output path")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("plot", help="IoU bars, training curves, gate heatmaps")
    s.add_argument("--report")
    s.add_argument("--log")
    s.add_argument("--gates")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ClaireError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
