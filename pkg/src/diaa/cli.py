"""Command-line front end: ``diaa {train,attack,sweep,transfer,explain}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .attacks import AttackConfig
from .data import load_dataset
from .dtd import dtd_relevance
from .errors import (
    ClassIndexError,
    ConfigError,
    DataFormatError,
    DomainError,
    LabelError,
    ModelFormatError,
    ShapeError,
    StructureError,
    ValidationError,
)
from .network import kdd_convnet, load_model, mlp, mnist_convnet, save_model
from .tensor import forward
from .training import TrainConfig, evaluate_accuracy, train

EXIT_CONFIG = 2
EXIT_DATA = 3


def parse_grid(text, cast=float):
    """``"1..21"`` (inclusive, step 1), ``"1..21:4"`` (step 4) or ``"0.1,0.5,1"``."""
    try:
        if ".." in text:
            span, _, step = text.partition(":")
            lo, hi = span.split("..")
            return list(range(int(lo), int(hi) + 1, int(step or 1)))
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


def _data(args, network=None):
    fmt = args.format or ("csv" if str(args.data).endswith(".csv") else "idx")
    classes = network.classes if network is not None else getattr(args, "classes", None)
    dataset = load_dataset(args.data, fmt, classes=classes)
    if network is not None and tuple(dataset.shape) != network.input_shape:
        dataset = dataset.reshaped(network.input_shape)
    return dataset


def _attack_config(args):
    return AttackConfig(
        eps=args.eps,
        iterations=args.iters,
        c=args.c,
        max_features=args.max_features,
        targeted=getattr(args, "targeted", False),
        target=getattr(args, "target", None),
        epsilon_ball=args.eps_ball,
        baseline_step=args.baseline_step,
        baseline_steps=args.baseline_steps,
        seed=args.seed,
        optimizer=args.optimizer,
    )


def cmd_train(args):
    dataset = _data(args)
    if args.arch == "dense":
        net = mlp(dataset.shape, dataset.classes, hidden=(args.hidden,), seed=args.seed)
    elif tuple(dataset.shape) == (1, 28, 28):
        net = mnist_convnet(dataset.classes, seed=args.seed)
    elif len(dataset.shape) == 1:
        net = kdd_convnet(dataset.n_features, dataset.classes, seed=args.seed)
        dataset = dataset.reshaped(net.input_shape)
    else:
        raise ConfigError(f"no convnet architecture for inputs shaped {dataset.shape}")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        adversarial=args.adv,
        eps_ball=args.eps_ball,
        adv_steps=args.steps,
    )
    net = train(net, dataset, cfg)
    save_model(net, args.out)
    print(f"saved {args.out}; train accuracy {evaluate_accuracy(net, dataset):.4f}")


def _write_suite(reports, header, out):
    out = Path(out)
    if out.suffix == ".json":
        harness.write_report_json(reports, out, header)
    else:
        harness.write_report_csv(reports, out, header)


def cmd_attack(args):
    network = load_model(args.model)
    dataset = _data(args, network)
    cfg = _attack_config(args)
    attacks = [a.strip() for a in args.attack.split(",")]
    reports = harness.run_attack_suite(network, dataset, attacks, cfg, limit=args.limit, workers=args.workers)
    used = dataset.head(args.limit) if args.limit else dataset
    _write_suite(reports, harness.report_header(network, used, cfg), args.out)
    for r in reports:
        print(f"{r.attack}: n={r.n} sr={r.sr:.4f} l0_mean={r.stats['l0']['mean']:.2f} l2_mean={r.stats['l2']['mean']:.4f}")


def cmd_sweep(args):
    network = load_model(args.model)
    dataset = _data(args, network)
    base = _attack_config(args)
    points = harness.hyperparameter_sweep(
        network,
        dataset,
        t_grid=parse_grid(args.t_grid, int),
        eps_grid=parse_grid(args.eps_grid),
        c_grid=parse_grid(args.c_grid),
        base_cfg=base,
        fraction=args.slice,
        workers=args.workers,
    )
    header = harness.report_header(network, dataset.fraction(args.slice), base)
    harness.write_sweep_csv(points, args.out, header)
    for p in points:
        print(f"T={p.iterations} eps={p.eps} c={p.c}: sr={p.report.sr:.4f}")


def cmd_transfer(args):
    source = load_model(args.source)
    target = load_model(args.target_model)
    dataset = _data(args, source)
    cfg = _attack_config(args)
    report = harness.transfer_evaluate(source, target, dataset, args.attack, cfg, limit=args.limit, workers=args.workers)
    header = {"source_model": args.source, "target_model": args.target_model, "config": cfg.to_dict()}
    harness.write_transfer_csv([report], args.out, header)
    print(f"{args.attack}: n={report.n} target accuracy {report.target_clean_acc:.4f} -> "
          f"{report.target_adv_acc:.4f} ({report.acc_change_pct:+.2f} points)")


def cmd_explain(args):
    network = load_model(args.model)
    dataset = _data(args, network)
    if not 0 <= args.index < len(dataset):
        raise ConfigError(f"index {args.index} outside dataset of {len(dataset)}")
    x = dataset.examples[args.index]
    cls = args.cls if args.cls is not None else forward(network, x).predicted
    rmap = dtd_relevance(network, x, cls)
    csv_path, pgm_path = harness.export_saliency(rmap, args.out_prefix, width=args.width)
    print(json.dumps({
        "csv": str(csv_path), "pgm": str(pgm_path), "class": cls, "label": int(dataset.labels[args.index]),
        "start_relevance": rmap.start_relevance, "total": rmap.total, "conservative": rmap.conservative,
    }))


def _attack_options(p, target_label=True):
    p.add_argument("--attack", default="diaa", help="diaa, fgsm, bim or pgd (comma list for 'attack')")
    p.add_argument("--eps", type=float, default=0.0032, help="DI-AA step size")
    p.add_argument("--iters", type=int, default=21, help="DI-AA inner iterations T")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--max-features", type=int)
    if target_label:
        p.add_argument("--targeted", action="store_true")
        p.add_argument("--target", type=int, help="target label for --targeted")
    p.add_argument("--eps-ball", type=float, default=0.1, help="L-inf radius for fgsm/bim/pgd")
    p.add_argument("--baseline-step", type=float)
    p.add_argument("--baseline-steps", type=int, default=40)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--limit", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="diaa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_options(p):
        p.add_argument("--data", required=True, help="CSV file, IDX images file, or 'images,labels'")
        p.add_argument("--format", choices=("idx", "csv"))

    p = sub.add_parser("train", help="train a model and write it as JSON")
    data_options(p)
    p.add_argument("--arch", choices=("dense", "convnet"), default="dense")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--out", required=True)
    p.add_argument("--adv", action="store_true", help="PGD adversarial training")
    p.add_argument("--eps-ball", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run attacks over a dataset and write a report")
    p.add_argument("--model", required=True)
    data_options(p)
    _attack_options(p)
    p.add_argument("--out", required=True, help="report.csv or report.json")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="DI-AA hyperparameter sweep")
    p.add_argument("--model", required=True)
    data_options(p)
    _attack_options(p)
    p.add_argument("--t-grid", default="1..21")
    p.add_argument("--eps-grid", default="0.0032")
    p.add_argument("--c-grid", default="1.0")
    p.add_argument("--slice", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("transfer", help="craft on one model, evaluate on another")
    p.add_argument("--source", required=True)
    p.add_argument("--target", dest="target_model", required=True)
    data_options(p)
    _attack_options(p, target_label=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("explain", help="export the relevance map of one example")
    p.add_argument("--model", required=True)
    data_options(p)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--class", dest="cls", type=int, help="class to explain (default: predicted)")
    p.add_argument("--width", type=int, help="row width for flat inputs")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, ClassIndexError, StructureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, DomainError, LabelError, ShapeError, ModelFormatError, ValidationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
