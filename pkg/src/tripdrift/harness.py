"""Leave-one-family-out evaluation and drift-detection scoring."""

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .clusterer import build_family_model
from .dataio import (
    LabeledDataset,
    apply_mask,
    build_drift_scenario,
    concat_datasets,
    fit_variance_mask,
    load_dataset,
    temporal_split,
)
from .detector import classify_batch, fit_mad_model
from .metric import DEFAULT_HIDDEN_DIMS, TrainConfig, embed, train_triplet
from .serialization import model_digest, save_family_model, save_network

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriftMetrics:
    """Confusion counts with drifting (unknown-family) samples as the positive class."""

    true_positive: int = 0
    false_positive: int = 0
    true_negative: int = 0
    false_negative: int = 0

    @property
    def total(self):
        return self.true_positive + self.false_positive + self.true_negative + self.false_negative

    @property
    def precision(self):
        flagged = self.true_positive + self.false_positive
        return self.true_positive / flagged if flagged else 0.0

    @property
    def recall(self):
        actual = self.true_positive + self.false_negative
        return self.true_positive / actual if actual else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other):
        return DriftMetrics(
            self.true_positive + other.true_positive,
            self.false_positive + other.false_positive,
            self.true_negative + other.true_negative,
            self.false_negative + other.false_negative,
        )


def score_drift(verdicts, is_unknown):
    """Count DRIFT/KNOWN verdicts against ground truth unknown-family flags."""
    truth = [bool(t) for t in is_unknown]
    if len(verdicts) != len(truth):
        raise ValueError(f"{len(verdicts)} verdicts for {len(truth)} truth labels")
    tp = fp = tn = fn = 0
    for v, unknown in zip(verdicts, truth):
        drift = v.is_drift if hasattr(v, "is_drift") else bool(v)
        if drift and unknown:
            tp += 1
        elif drift:
            fp += 1
        elif unknown:
            fn += 1
        else:
            tn += 1
    return DriftMetrics(tp, fp, tn, fn)


@dataclass(frozen=True)
class ScenarioResult:
    holdout_family: str
    n_known: int
    n_unknown: int
    dbscan: DriftMetrics
    mad: DriftMetrics
    n_clusters: int = 0


@dataclass(frozen=True)
class EvalConfig:
    min_variance: float = 0.0
    train_fraction: float = 0.8
    layer_dims: tuple = None  # None: masked width + DEFAULT_HIDDEN_DIMS
    margin: float = 1.0
    triplet_weight: float = 1.0
    epochs: int = 100
    batch_size: int = 64
    triplets_per_epoch: int = None
    learning_rate: float = 1e-3
    seed: int = 42
    mad_coefficient: float = 3.5

    def train_config(self, n_features):
        dims = self.layer_dims or (n_features,) + DEFAULT_HIDDEN_DIMS
        return TrainConfig(
            layer_dims=tuple(dims),
            margin=self.margin,
            triplet_weight=self.triplet_weight,
            epochs=self.epochs,
            batch_size=self.batch_size,
            triplets_per_epoch=self.triplets_per_epoch,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    def to_dict(self):
        d = asdict(self)
        if d["layer_dims"] is not None:
            d["layer_dims"] = list(d["layer_dims"])
        return d


@dataclass(frozen=True)
class EvalReport:
    scenarios: tuple = ()
    config: dict = field(default_factory=dict)

    @property
    def overall_dbscan(self):
        return sum((s.dbscan for s in self.scenarios), DriftMetrics())

    @property
    def overall_mad(self):
        return sum((s.mad for s in self.scenarios), DriftMetrics())

    @property
    def n_known(self):
        return sum(s.n_known for s in self.scenarios)

    @property
    def n_unknown(self):
        return sum(s.n_unknown for s in self.scenarios)


def evaluate_scenario(scenario, cfg, mask, model_dir=None):
    """Train, cluster and score one held-out-family scenario."""
    train = scenario.train
    tcfg = cfg.train_config(train.n_features)
    model = train_triplet(train, tcfg, mask=mask)
    digest = model_digest(model)
    fm = build_family_model(
        embed(model, train),
        train.labels,
        model.latent_dim,
        network_hash=digest,
        config={"mad_coefficient": cfg.mad_coefficient, "holdout_family": scenario.holdout_family},
    )
    mad = fit_mad_model(fm, cfg.mad_coefficient)

    test = concat_datasets(scenario.test_known, scenario.test_unknown)
    truth = np.r_[np.zeros(len(scenario.test_known), bool), np.ones(len(scenario.test_unknown), bool)]
    Z = embed(model, test)
    result = ScenarioResult(
        holdout_family=scenario.holdout_family,
        n_known=len(scenario.test_known),
        n_unknown=len(scenario.test_unknown),
        dbscan=score_drift(classify_batch(fm, Z), truth),
        mad=score_drift(classify_batch(fm, Z, mad), truth),
        n_clusters=len(fm.clusters),
    )
    if model_dir is not None:
        os.makedirs(model_dir, exist_ok=True)
        save_network(model, os.path.join(model_dir, f"{scenario.holdout_family}.model"))
        save_family_model(fm, os.path.join(model_dir, f"{scenario.holdout_family}.family"))
    return result


def scenario_order(ds_train, ds_test):
    """Families by descending pooled sample count, then name."""
    counts = {}
    for part in (ds_train, ds_test):
        for fam, c in part.family_counts().items():
            counts[fam] = counts.get(fam, 0) + c
    return sorted(counts, key=lambda f: (-counts[f], f))


def run_leave_one_out(source, config=None, model_dir=None, families=None):
    """Hold out each family in turn and score drift detection.

    ``source`` is a CSV path or a :class:`LabeledDataset`. ``families``
    restricts which families are held out (default: all).
    """
    cfg = config or EvalConfig()
    ds = source if isinstance(source, LabeledDataset) else load_dataset(source)
    if len(ds.families) < 2:
        raise ValueError("leave-one-out evaluation needs at least 2 families")
    mask = fit_variance_mask(ds, cfg.min_variance)
    masked = apply_mask(ds, mask)
    train, test = temporal_split(masked, cfg.train_fraction)

    results = []
    for fam in scenario_order(train, test):
        if families is not None and fam not in families:
            continue
        log.info("scenario: holding out %s", fam)
        try:
            scenario = build_drift_scenario(train, test, fam)
            results.append(evaluate_scenario(scenario, cfg, mask, model_dir))
        except Exception as exc:
            try:
                wrapped = type(exc)(f"scenario {fam!r}: {exc}")
            except Exception:
                raise exc from None
            raise wrapped from exc
    echo = cfg.to_dict()
    echo["n_features_after_mask"] = mask.width
    echo["n_train"] = len(train)
    echo["n_test"] = len(test)
    return EvalReport(tuple(results), echo)


CSV_COLUMNS = ["family", "n_known", "n_unknown"] + [
    f"{mode}_{k}"
    for mode in ("dbscan", "mad")
    for k in ("tp", "fp", "tn", "fn", "precision", "recall", "f1")
]


def _metric_cells(m):
    return [m.true_positive, m.false_positive, m.true_negative, m.false_negative,
            m.precision, m.recall, m.f1]


def _rows(report):
    rows = []
    for s in report.scenarios:
        rows.append([s.holdout_family, s.n_known, s.n_unknown,
                     *_metric_cells(s.dbscan), *_metric_cells(s.mad)])
    rows.append(["Overall", report.n_known, report.n_unknown,
                 *_metric_cells(report.overall_dbscan), *_metric_cells(report.overall_mad)])
    return rows


def report_render(report, fmt="table"):
    """Render as an aligned text table or as CSV (with a leading config comment)."""
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(report.config, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in _rows(report):
            writer.writerow([repr(c) if isinstance(c, float) else c for c in row])
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    header = ["Family", "Known", "Unknown", "F1 MAD", "F1 DBSCAN", "P DBSCAN", "R DBSCAN"]
    body = []
    for row in _rows(report):
        d = dict(zip(CSV_COLUMNS, row))
        body.append([str(d["family"]), str(d["n_known"]), str(d["n_unknown"]),
                     f"{d['mad_f1']:.2f}", f"{d['dbscan_f1']:.2f}",
                     f"{d['dbscan_precision']:.2f}", f"{d['dbscan_recall']:.2f}"])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt_row = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    lines = [fmt_row(header), "-" * (sum(widths) + 2 * (len(widths) - 1))]
    lines += [fmt_row(r) for r in body[:-1]]
    lines += ["-" * len(lines[1]), fmt_row(body[-1])]
    return "\n".join(lines) + "\n"


def parse_report_csv(text):
    """Inverse of ``report_render(..., "csv")``. Returns ``(scenarios, overall_row)``
    as lists of dicts with integer counts and float scores."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        out = {}
        for k, v in rec.items():
            if k == "family":
                out[k] = v
            elif k.endswith(("precision", "recall", "f1")):
                out[k] = float(v)
            else:
                out[k] = int(v)
        rows.append(out)
    return rows[:-1], rows[-1]


def render_to_file(report, path, fmt="csv"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_render(report, fmt))


def with_overrides(cfg, **changes):
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
