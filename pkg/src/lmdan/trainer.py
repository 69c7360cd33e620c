"""End-to-end training loops: weighted adversarial adaptation plus the
unweighted adversarial and source-only baselines, all sharing one core
loop so the forced-weight reductions hold step for step.

Per balanced mini-batch the weighted method: runs the current encoder and
classifier on both domains for probability rows, builds the pairwise
distance cost, solves the transport plan, turns plan*cost row masses into
class weights, normalizes them to batch mean one, and then applies one
simultaneous adversarial update with those per-sample weights. Baselines
use unit weights (and a zero adversarial trade-off for source-only); they
consume the identical random streams, so forcing unit weights reproduces
them bit for bit.

Target labels are used only by evaluation; the training path sees target
features exclusively (batches strip them by construction).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import (
    BlobConfig,
    DriftSpec,
    LabeledDataset,
    apply_drift,
    balanced_batches,
    gen_blob_pair,
    label_kl,
)
from .nn import (
    MlpModel,
    NonFiniteLossError,
    ScheduleState,
    SgdState,
    adversarial_step,
    forward,
    init_mlp,
)
from .numerics import (
    STREAM_BATCHES,
    STREAM_INIT_CLASSIFIER,
    STREAM_INIT_DISCRIMINATOR,
    STREAM_INIT_ENCODER,
    child_rng,
    softmax,
)
from .ot import Marginals, build_cost_matrix, solve_exact, solve_sinkhorn
from .weighting import class_weights, guide_matrix, normalize_weights, per_sample_weights

log = logging.getLogger(__name__)

METHODS = ("lmdan", "dann", "source_only")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    lam: float = 1.0  # adversarial trade-off
    alpha: float = 2.0  # class-size exponent in the weights
    ot_mode: str = "exact"  # "exact" | "sinkhorn"
    sinkhorn_eps: float = 0.01
    normalize_weights: bool = True
    momentum: float = 0.0
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (64, 32)
    disc_hidden: tuple[int, ...] = (16,)
    eps_floor: float = 1e-8
    count_scope: str = "batch"  # "batch" | "dataset"
    force_unit_weights: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be >= 0")
        if self.ot_mode not in ("exact", "sinkhorn"):
            raise ValueError(f"unknown ot_mode {self.ot_mode!r}")
        if self.count_scope not in ("batch", "dataset"):
            raise ValueError(f"unknown count_scope {self.count_scope!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)


@dataclass
class RunReport:
    method: str
    config: dict
    epoch_l1: list[float]
    epoch_l2: list[float]
    accuracy: float
    per_class_accuracy: list
    accuracy_per_epoch: list[float]
    class_weight_snapshot: dict
    weighted_label_mass: list  # per epoch, length-C source mass after weighting
    label_kl_trajectory: list[float]  # KL(weighted source mass || target labels)
    aborted: bool = False
    abort_reason: str = ""
    step_snapshots: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("step_snapshots")
        return d


def evaluate(encoder: MlpModel, classifier: MlpModel, ds: LabeledDataset):
    """Argmax prediction accuracy on a labeled dataset.

    Ties break toward the smallest class index. Returns overall accuracy
    and per-class recall (``None`` for classes absent from ``ds``).
    """
    feats, _ = forward(encoder, ds.features)
    logits, _ = forward(classifier, feats)
    pred = np.argmax(logits, axis=1)
    correct = pred == ds.labels
    overall = float(correct.mean())
    per_class = []
    for k in range(ds.class_count):
        mask = ds.labels == k
        per_class.append(float(correct[mask].mean()) if mask.any() else None)
    return overall, per_class


def _distribution_kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _batch_weights(gs, gt, ys, cfg: TrainConfig, dataset_counts):
    cost = build_cost_matrix(gs, gt)
    marg = Marginals.uniform(cost.shape[0], cost.shape[1])
    if cfg.ot_mode == "exact":
        plan = solve_exact(cost, marg)
    else:
        plan = solve_sinkhorn(cost, marg, eps=cfg.sinkhorn_eps)
        if not plan.converged:
            raise RuntimeError(
                "sinkhorn failed to converge while computing batch weights; "
                "raise max_iter/eps or use ot_mode='exact'"
            )
    guide = guide_matrix(plan, cost)
    counts = dataset_counts if cfg.count_scope == "dataset" else None
    w = class_weights(guide, ys, cfg.alpha, cfg.eps_floor, counts=counts)
    if cfg.normalize_weights:
        w = normalize_weights(w, ys)
    return w


def _run(
    src: LabeledDataset,
    tgt: LabeledDataset,
    cfg: TrainConfig,
    method: str,
    record_steps: int = 0,
) -> RunReport:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if src.dim != tgt.dim:
        raise ValueError("source and target feature dimensions differ")
    if src.class_count != tgt.class_count:
        raise ValueError("source and target class counts differ")
    C = src.class_count

    enc = init_mlp(
        [src.dim, *cfg.encoder_hidden],
        child_rng(cfg.seed, STREAM_INIT_ENCODER),
        output_activation="relu",
    )
    clf = init_mlp(
        [cfg.encoder_hidden[-1], C], child_rng(cfg.seed, STREAM_INIT_CLASSIFIER)
    )
    disc = init_mlp(
        [cfg.encoder_hidden[-1], *cfg.disc_hidden, 1],
        child_rng(cfg.seed, STREAM_INIT_DISCRIMINATOR),
    )
    opt = SgdState(momentum=cfg.momentum)

    lam = 0.0 if method == "source_only" else cfg.lam
    weighted = method == "lmdan"
    dataset_counts = {k: int(c) for k, c in enumerate(src.class_counts())}
    tgt_counts = tgt.class_counts().astype(np.float64)
    if np.any(tgt_counts == 0.0):
        tgt_counts += 0.5  # add-half smoothing keeps the KL report finite
    tgt_dist = tgt_counts / tgt_counts.sum()

    batches_per_epoch = min(src.n, tgt.n) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    step = 0

    report = RunReport(
        method=method,
        config=asdict(cfg),
        epoch_l1=[],
        epoch_l2=[],
        accuracy=0.0,
        per_class_accuracy=[None] * C,
        accuracy_per_epoch=[],
        class_weight_snapshot={},
        weighted_label_mass=[],
        label_kl_trajectory=[],
    )
    last_weights: dict[int, float] = {}

    for epoch in range(cfg.epochs):
        rng_b = child_rng(cfg.seed, STREAM_BATCHES, epoch)
        sum_l1 = 0.0
        sum_l2 = 0.0
        mass = np.zeros(C)
        for batch in balanced_batches(src, tgt, cfg.batch_size, rng_b):
            p = step / total_steps
            sched = ScheduleState(p=p, lr=cfg.lr, lam=lam)
            if weighted:
                feats, _ = forward(enc, np.vstack([batch.src_x, batch.tgt_x]))
                logits, _ = forward(clf, feats)
                probs = softmax(logits)
                n_s = batch.src_x.shape[0]
                w = _batch_weights(probs[:n_s], probs[n_s:], batch.src_y, cfg, dataset_counts)
                last_weights = w
                v = per_sample_weights(w, batch.src_y)
            else:
                v = np.ones(batch.src_x.shape[0])
            if cfg.force_unit_weights:
                v = np.ones(batch.src_x.shape[0])
            try:
                l1, l2 = adversarial_step(enc, clf, disc, batch, v, sched, opt)
            except NonFiniteLossError as err:
                report.aborted = True
                report.abort_reason = f"step {step}: {err}"
                log.error("aborting %s run: %s", method, report.abort_reason)
                return report
            sum_l1 += l1
            sum_l2 += l2
            for k in np.unique(batch.src_y):
                mass[int(k)] += v[batch.src_y == k].sum()
            step += 1
            if record_steps and step <= record_steps:
                report.step_snapshots.append(
                    [enc.copy_params(), clf.copy_params(), disc.copy_params()]
                )

        report.epoch_l1.append(sum_l1 / batches_per_epoch)
        report.epoch_l2.append(sum_l2 / batches_per_epoch)
        mass_dist = mass / mass.sum()
        report.weighted_label_mass.append([float(x) for x in mass_dist])
        report.label_kl_trajectory.append(_distribution_kl(mass_dist, tgt_dist))
        acc, per_class = evaluate(enc, clf, tgt)
        report.accuracy_per_epoch.append(acc)
        report.accuracy = acc
        report.per_class_accuracy = per_class

    if weighted:
        report.class_weight_snapshot = {str(k): float(v) for k, v in sorted(last_weights.items())}
    else:
        present = np.unique(src.labels)
        report.class_weight_snapshot = {str(int(k)): 1.0 for k in present}
    return report


def train_lmdan(
    src: LabeledDataset, tgt: LabeledDataset, cfg: TrainConfig, record_steps: int = 0
) -> RunReport:
    """Transport-weighted adversarial training (the full method)."""
    return _run(src, tgt, cfg, "lmdan", record_steps)


def train_dann(
    src: LabeledDataset, tgt: LabeledDataset, cfg: TrainConfig, record_steps: int = 0
) -> RunReport:
    """Unweighted adversarial baseline: the same loop with all weights 1."""
    return _run(src, tgt, cfg, "dann", record_steps)


def train_source_only(
    src: LabeledDataset, tgt: LabeledDataset, cfg: TrainConfig, record_steps: int = 0
) -> RunReport:
    """No-adaptation baseline: unit weights and zero adversarial trade-off.

    ``cfg.lam`` and ``cfg.alpha`` are ignored; the discriminator still
    trains on its own schedule but never feeds the encoder.
    """
    return _run(src, tgt, cfg, "source_only", record_steps)


TRAINERS = {
    "lmdan": train_lmdan,
    "dann": train_dann,
    "source_only": train_source_only,
}


def run_benchmark_cell(
    blob_cfg: BlobConfig,
    train_cfg: TrainConfig,
    rate: float,
    seed: int,
    method: str,
) -> tuple[float, RunReport]:
    """Generate the drifted pair for (rate, seed), train one method.

    Returns (measured label KL of the drifted pair, run report). The seed
    drives data generation, drift subsampling, and training identically
    across methods so arms are paired.
    """
    src, tgt = gen_blob_pair(blob_cfg, seed=seed)
    if rate > 0:
        spec = DriftSpec(source_drop_rate=rate, target_drop_rate=rate)
        src = apply_drift(src, spec, seed=seed)
        tgt = apply_drift(tgt, spec, seed=seed)
    kl = label_kl(src, tgt)
    cfg = replace(train_cfg, seed=seed)
    report = TRAINERS[method](src, tgt, cfg)
    return kl, report


def drift_sweep(
    blob_cfg: BlobConfig,
    train_cfg: TrainConfig,
    rates: list[float],
    seeds: list[int],
    methods: tuple[str, ...] = ("lmdan", "dann"),
    alphas: list[float] | None = None,
) -> list[dict]:
    """Grid of (rate, seed, method[, alpha]) cells as tidy rows.

    Row keys: method, rate, alpha, seed, kl, accuracy, per_class_0..C-1.
    Cells run sequentially in deterministic key order.
    """
    if not rates:
        raise ValueError("rates must be nonempty")
    if not seeds:
        raise ValueError("seeds must be nonempty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    alpha_grid = list(alphas) if alphas else [train_cfg.alpha]
    rows = []
    for rate in rates:
        for seed in seeds:
            for method in methods:
                for alpha in alpha_grid:
                    cfg = replace(train_cfg, alpha=float(alpha))
                    kl, rep = run_benchmark_cell(blob_cfg, cfg, rate, seed, method)
                    if rep.aborted:
                        raise RuntimeError(
                            f"cell (method={method}, rate={rate}, seed={seed}, "
                            f"alpha={alpha}) aborted: {rep.abort_reason}"
                        )
                    row = {
                        "method": method,
                        "rate": float(rate),
                        "alpha": float(alpha),
                        "seed": int(seed),
                        "kl": kl,
                        "accuracy": rep.accuracy,
                    }
                    for k, acc in enumerate(rep.per_class_accuracy):
                        row[f"per_class_{k}"] = acc
                    rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    """Tidy CSV; floats at full precision, absent classes as empty cells."""
    if not rows:
        raise ValueError("no sweep rows to write")
    cols = list(rows[0].keys())

    def fmt(x):
        if x is None:
            return ""
        if isinstance(x, float):
            return repr(x)
        return str(x)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row[c]) for c in cols) + "\n")


def summarize(rows: list[dict], keys=("method", "rate", "alpha")) -> list[dict]:
    """Mean and sample standard deviation of accuracy over seeds per cell."""
    groups: dict[tuple, list[float]] = {}
    kl_by_group: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(row[k] for k in keys)
        groups.setdefault(key, []).append(row["accuracy"])
        kl_by_group.setdefault(key, []).append(row["kl"])
    out = []
    for key in groups:
        accs = groups[key]
        mean = sum(accs) / len(accs)
        if len(accs) > 1:
            var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
            std = math.sqrt(var)
        else:
            std = 0.0
        entry = dict(zip(keys, key))
        entry["n"] = len(accs)
        entry["accuracy_mean"] = mean
        entry["accuracy_std"] = std
        entry["kl_mean"] = sum(kl_by_group[key]) / len(kl_by_group[key])
        out.append(entry)
    return out
