"""Attack suites, hyperparameter sweeps, transfer evaluation and saliency export."""

import csv
import io
import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, get_attack
from .errors import ConfigError, DomainError
from .metrics import lp_norms, summary
from .tensor import predict
from .training import evaluate_accuracy

__all__ = [
    "SuiteReport",
    "TransferReport",
    "export_saliency",
    "hyperparameter_sweep",
    "lp_norms",
    "run_attack_suite",
    "transfer_evaluate",
    "write_report_csv",
    "write_report_json",
    "write_sweep_csv",
    "write_transfer_csv",
]

NORMS = ("l0", "l1", "l2")
STATS = ("mean", "std", "min", "max")
REPORT_COLUMNS = ["attack", "n", "sr"] + [f"{p}_{s}" for p in NORMS for s in STATS] + ["wall_ms"]
SR_BASIS = "all examples (misclassified clean inputs count as successes with zero perturbation)"


@dataclass
class SuiteReport:
    attack: str
    n: int
    sr: float
    stats: dict  # norm -> {"mean", "std", "min", "max"}, over successful examples only
    config: dict
    wall_ms: float
    outcomes: list = field(default_factory=list)  # per-example dicts, ordered by example index

    def row(self):
        row = {"attack": self.attack, "n": self.n, "sr": self.sr}
        for p in NORMS:
            for s in STATS:
                row[f"{p}_{s}"] = self.stats[p][s]
        row["wall_ms"] = self.wall_ms
        return row


def _aggregate(attack, outcomes, config, wall_ms):
    hits = [o for o in outcomes if o["success"]]
    stats = {p: summary([o[p] for o in hits]) for p in NORMS}
    sr = len(hits) / len(outcomes)
    return SuiteReport(attack, len(outcomes), sr, stats, config, wall_ms, outcomes)


def _run_one(fn, network, dataset, cfg, index):
    # per-example stream: identical results under any scheduling
    rng = np.random.default_rng([int(cfg.seed), int(index)])
    out = fn(dataset.examples[index], int(dataset.labels[index]), network, cfg, rng)
    return {
        "index": int(index),
        "label": int(dataset.labels[index]),
        "predicted": out.predicted,
        "success": out.success,
        "l0": out.l0,
        "l1": out.l1,
        "l2": out.l2,
        "outer_iterations": out.outer_iterations,
        "inner_iterations": out.inner_iterations,
    }, out.x_adv


def _prepare(network, dataset):
    if len(dataset) == 0:
        raise DomainError("dataset is empty")
    if dataset.classes != network.classes:
        raise ConfigError(f"dataset has {dataset.classes} classes, model has {network.classes}")
    if tuple(dataset.shape) != network.input_shape:
        dataset = dataset.reshaped(network.input_shape)
    return dataset


def _attack_dataset(network, dataset, attack, cfg, workers=1):
    fn = get_attack(attack)
    indices = range(len(dataset))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: _run_one(fn, network, dataset, cfg, i), indices))
    else:
        results = [_run_one(fn, network, dataset, cfg, i) for i in indices]
    results.sort(key=lambda r: r[0]["index"])
    return [r[0] for r in results], np.stack([r[1] for r in results])


def run_attack_suite(network, dataset, attacks, cfg, limit=None, workers=1, csv_path=None, json_path=None):
    """Run each named attack over ``dataset`` (first ``limit`` rows) and aggregate."""
    for name in attacks:
        get_attack(name)
    dataset = _prepare(network, dataset)
    if limit is not None:
        dataset = dataset.head(limit)
    reports = []
    for name in attacks:
        start = time.perf_counter()
        outcomes, _ = _attack_dataset(network, dataset, name, cfg, workers)
        wall_ms = (time.perf_counter() - start) * 1000.0
        reports.append(_aggregate(name, outcomes, cfg.to_dict(), wall_ms))
    header = report_header(network, dataset, cfg)
    if csv_path is not None:
        write_report_csv(reports, csv_path, header)
    if json_path is not None:
        write_report_json(reports, json_path, header)
    return reports


def report_header(network, dataset, cfg):
    return {
        "model_sha256": network.digest(),
        "dataset": dataset.name,
        "examples": len(dataset),
        "seed": cfg.seed,
        "sr_basis": SR_BASIS,
        "norm_stats_basis": "successful examples only; std is the population std",
        "config": cfg.to_dict(),
    }


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path, columns, rows, header):
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def write_report_csv(reports, path, header=None):
    _write_rows(path, REPORT_COLUMNS, [r.row() for r in reports], header)


def write_report_json(reports, path, header=None):
    doc = {
        "header": header or {},
        "reports": [
            {**r.row(), "stats": r.stats, "config": r.config, "outcomes": r.outcomes} for r in reports
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_report_csv(path):
    """Rows of a report CSV as dicts of strings (header comment lines skipped)."""
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


@dataclass
class SweepPoint:
    iterations: int
    eps: float
    c: float
    report: SuiteReport


def hyperparameter_sweep(
    network, dataset, t_grid=range(1, 22), eps_grid=(0.0032,), c_grid=(1.0,), base_cfg=None, fraction=0.1, workers=1
):
    """DI-AA over every ``(T, eps, c)`` grid point on the first ``fraction`` of ``dataset``."""
    grid = list(itertools.product(t_grid, eps_grid, c_grid))
    if not grid:
        raise ConfigError("empty sweep grid")
    base_cfg = base_cfg or AttackConfig()
    data = _prepare(network, dataset).fraction(fraction)
    points = []
    for t, eps, c in grid:
        cfg = replace(base_cfg, iterations=int(t), eps=float(eps), c=float(c))
        (report,) = run_attack_suite(network, data, ["diaa"], cfg, workers=workers)
        points.append(SweepPoint(int(t), float(eps), float(c), report))
    return points


SWEEP_COLUMNS = ["T", "eps", "c"] + REPORT_COLUMNS[1:]


def write_sweep_csv(points, path, header=None):
    rows = [{"T": p.iterations, "eps": p.eps, "c": p.c, **p.report.row()} for p in points]
    _write_rows(path, SWEEP_COLUMNS, rows, header)


@dataclass
class TransferReport:
    attack: str
    source_sha256: str
    target_sha256: str
    n: int  # examples the source model classifies correctly
    source_adv_acc: float
    target_clean_acc: float
    target_adv_acc: float

    @property
    def drop(self):
        """Target accuracy lost, as a fraction."""
        return self.target_clean_acc - self.target_adv_acc

    @property
    def acc_change_pct(self):
        """Signed percentage-point change (negative = decrease)."""
        return -100.0 * self.drop

    def row(self):
        return {
            "target": self.target_sha256[:12],
            "robust_acc_pct": 100.0 * self.target_clean_acc,
            "attack": self.attack,
            "acc_change_pct": self.acc_change_pct,
            "n": self.n,
            "source": self.source_sha256[:12],
            "source_adv_acc": self.source_adv_acc,
            "target_clean_acc": self.target_clean_acc,
            "target_adv_acc": self.target_adv_acc,
        }


TRANSFER_COLUMNS = list(TransferReport("", "", "", 0, 0.0, 0.0, 0.0).row())


def transfer_evaluate(source, target, dataset, attack, cfg, limit=None, workers=1):
    """Craft AEs on ``source``; measure ``target`` accuracy on clean vs adversarial inputs.

    Only examples the source model classifies correctly are attacked, so
    self-transfer reports a drop of exactly ``1 - attacked accuracy``.
    """
    if source.input_shape != target.input_shape or source.classes != target.classes:
        raise ConfigError("source and target models differ in input shape or class count")
    dataset = _prepare(source, dataset)
    if limit is not None:
        dataset = dataset.head(limit)
    keep = [i for i, (x, y) in enumerate(zip(dataset.examples, dataset.labels)) if predict(source, x) == y]
    if not keep:
        raise DomainError("source model misclassifies every example; nothing to transfer")
    clean = dataset.subset(keep)
    _, x_adv = _attack_dataset(source, clean, attack, cfg, workers)
    adv = type(clean)(x_adv, clean.labels, clean.classes, f"{clean.name}-adv-{attack}")
    return TransferReport(
        attack=attack,
        source_sha256=source.digest(),
        target_sha256=target.digest(),
        n=len(clean),
        source_adv_acc=evaluate_accuracy(source, adv),
        target_clean_acc=evaluate_accuracy(target, clean),
        target_adv_acc=evaluate_accuracy(target, adv),
    )


def write_transfer_csv(reports, path, header=None):
    _write_rows(path, TRANSFER_COLUMNS, [r.row() for r in reports], header)


def export_saliency(relevance, prefix, width=None):
    """Write ``<prefix>.csv`` (raw scores) and ``<prefix>.pgm`` (P2, min-max scaled to 0-255).

    The PGM carries the normalization constants in a comment line.  A map with
    zero range is written as all zeros.
    """
    scores = getattr(relevance, "scores", relevance)
    scores = np.asarray(scores, dtype=np.float64)
    grid = np.squeeze(scores)
    if grid.ndim == 1:
        if width is None:
            raise DomainError("flat saliency map needs a width")
        grid = grid.reshape(-1, width)
    if grid.ndim != 2:
        raise DomainError(f"saliency map must be 2-D, got shape {scores.shape}")
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        pixels = np.rint((grid - lo) / (hi - lo) * 255.0).astype(int)
    else:
        pixels = np.zeros(grid.shape, dtype=int)

    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    pgm_path = prefix.with_name(prefix.name + ".pgm")
    with open(csv_path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in grid])
    h, w = grid.shape
    lines = ["P2", f"# min={lo!r} max={hi!r}", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pixels]
    pgm_path.write_text("\n".join(lines) + "\n")
    return csv_path, pgm_path


def read_pgm(path):
    """Pixels and the ``min``/``max`` constants of a P2 file written by :func:`export_saliency`."""
    tokens, meta = [], {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for part in line[1:].split():
                key, _, value = part.partition("=")
                meta[key] = float(value)
        else:
            tokens += line.split()
    if tokens[0] != "P2":
        raise DomainError(f"{path}: not a P2 PGM")
    w, h, _ = (int(t) for t in tokens[1:4])
    return np.array(tokens[4:], dtype=int).reshape(h, w), meta
