"""Training loop, metrics, leave-one-subject-out evaluation and ablation grids."""
import csv
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .fusion import DIRECTIONS, AttXSpec
from .model import ModelSpec, assemble_model
from .optim import AdamState, adam_step
from .rng import substream
from .storage import atomic_write

log = logging.getLogger(__name__)


class LeakageError(AssertionError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))

    def to_dict(self):
        return asdict(self)


def as_arrays(windows):
    ecg = np.stack([w.ecg for w in windows]) if windows else np.zeros((0, 0))
    eda = np.stack([w.eda for w in windows]) if windows else np.zeros((0, 0))
    y = np.array([int(w.label) for w in windows], dtype=np.int64)
    return ecg, eda, y


def train(model, windows, cfg, progress=None):
    """Minibatch Adam on cross-entropy. Returns (model, per-epoch mean losses)."""
    if not windows:
        raise ValueError("cannot train on an empty dataset")
    ecg, eda, y = as_arrays(windows)
    if len(np.unique(y)) < 2:
        raise ValueError("training set contains a single class")
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    rng = substream(cfg.seed, "shuffle")
    n = len(y)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            model.zero_grad()
            loss = T.cross_entropy(model(ecg[idx], eda[idx], training=True), y[idx])
            T.backward(loss)
            adam_step(params, [p.grad for p in params], state)
            total += loss.item() * len(idx)
        history.append(total / n)
        if progress is not None:
            progress(epoch, history[-1])
    return model, history


def predict(model, windows, batch_size=64):
    ecg, eda, _ = as_arrays(windows)
    probs = []
    for s in range(0, len(ecg), batch_size):
        probs.append(model.predict_proba(ecg[s:s + batch_size], eda[s:s + batch_size]))
    probs = np.concatenate(probs) if probs else np.zeros((0, 2))
    return probs.argmax(axis=1), probs


# ---------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    confusion: list  # rows = true class, cols = predicted
    per_class_f1: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def metrics_from_confusion(cm):
    cm = np.asarray(cm, dtype=float)
    k = cm.shape[0]
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    f1 = np.zeros(k)
    for c in range(k):
        denom = 2 * tp[c] + (predicted[c] - tp[c]) + (support[c] - tp[c])
        if denom == 0:
            log.warning("class %d absent from predictions and labels; its F1 counts as 0", c)
            continue
        f1[c] = 2 * tp[c] / denom
    total = cm.sum()
    return Metrics(
        accuracy=float(tp.sum() / total),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / total),
        confusion=cm.astype(int).tolist(),
        per_class_f1=f1.tolist(),
    )


def compute_metrics(preds, labels, n_classes=2):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("no predictions to score")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return metrics_from_confusion(cm)


def mean_metrics(ms):
    return {
        "accuracy": float(np.mean([m.accuracy for m in ms])),
        "macro_f1": float(np.mean([m.macro_f1 for m in ms])),
        "weighted_f1": float(np.mean([m.weighted_f1 for m in ms])),
    }


# ---------------------------------------------------------------------------
# LOSO

@dataclass
class FoldReport:
    held_out_subject: str
    metrics: Metrics
    loss_history: list
    n_train: int
    n_test: int
    seconds: float = 0.0

    def to_dict(self):
        return {"held_out_subject": self.held_out_subject, "metrics": self.metrics.to_dict(),
                "loss_history": self.loss_history, "n_train": self.n_train, "n_test": self.n_test}


@dataclass
class LosoResult:
    folds: list
    mean: dict
    pooled: Metrics


def _fingerprint(w):
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(w.ecg, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(w.eda, dtype=np.float64).tobytes())
    return h.digest()


def assert_no_leakage(train_windows, test_windows):
    """Test windows must come from one subject absent from training, and no
    test window may appear (bit-identically) in the training set."""
    test_ids = {w.subject_id for w in test_windows}
    if len(test_ids) != 1:
        raise LeakageError(f"a test fold must hold exactly one subject, got {sorted(test_ids)}")
    if test_ids & {w.subject_id for w in train_windows}:
        raise LeakageError(f"subject {test_ids} appears in both train and test")
    seen = {_fingerprint(w) for w in train_windows}
    dup = sum(_fingerprint(w) in seen for w in test_windows)
    if dup:
        raise LeakageError(f"{dup} test window(s) also present in the training set")


def loso_splits(windows):
    subjects = sorted({w.subject_id for w in windows})
    for s in subjects:
        test = [w for w in windows if w.subject_id == s]
        train_ = [w for w in windows if w.subject_id != s]
        yield s, train_, test


def _run_fold(args):
    fold_index, subject, train_w, test_w, spec, cfg = args
    t0 = time.perf_counter()
    seed = cfg.seed + fold_index
    model = assemble_model(spec, seed)
    _, history = train(model, train_w, replace(cfg, seed=seed))
    preds, _ = predict(model, test_w)
    labels = np.array([int(w.label) for w in test_w])
    return FoldReport(subject, compute_metrics(preds, labels), history, len(train_w), len(test_w),
                      time.perf_counter() - t0), preds, labels


def loso_evaluate(windows, spec, cfg, workers=1, splits=None):
    """Train one fresh model per held-out subject; mean and pooled metrics."""
    subjects = sorted({w.subject_id for w in windows})
    if len(subjects) < 2:
        raise ValueError("LOSO needs at least two subjects")
    jobs = []
    for i, (s, train_w, test_w) in enumerate(splits if splits is not None else loso_splits(windows)):
        if not test_w:
            log.warning("subject %s has no windows; fold skipped", s)
            continue
        assert_no_leakage(train_w, test_w)
        jobs.append((i, s, train_w, test_w, spec, cfg))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    folds = [r[0] for r in results]
    for f in folds:
        log.info("fold %s: acc %.4f macro-F1 %.4f (%.1fs)", f.held_out_subject,
                 f.metrics.accuracy, f.metrics.macro_f1, f.seconds)
    pooled = compute_metrics(np.concatenate([r[1] for r in results]), np.concatenate([r[2] for r in results]))
    return LosoResult(folds, mean_metrics([f.metrics for f in folds]), pooled)


# ---------------------------------------------------------------------------
# ablation grids

@dataclass
class ExperimentRow:
    name: str
    conn_type: str = None  # I | II | III | None
    stages: tuple = ()
    modalities: str = "both"
    attention: bool = True

    def model_spec(self, base):
        attx = None
        if self.conn_type is not None:
            attx = AttXSpec(self.conn_type, self.stages, self.attention,
                            base.attx.reduce if base.attx is not None else "scale")
        return replace(base, attx=attx, modalities=self.modalities)

    @property
    def type_label(self):
        return self.conn_type or "none"

    @property
    def stages_label(self):
        return ",".join(str(s) for s in self.stages) if self.stages else "-"

    @property
    def direction(self):
        if self.conn_type is None:
            return {"both": "-", "ecg": "ECG only", "eda": "EDA only"}[self.modalities]
        return DIRECTIONS[self.conn_type]

    @classmethod
    def from_dict(cls, d):
        t = d.get("type")
        return cls(name=d["name"], conn_type=None if t in (None, "none") else str(t),
                   stages=tuple(d.get("stages", ())), modalities=d.get("modalities", "both"),
                   attention=bool(d.get("attention", True)))


STAGE_SUBSETS = [(1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3)]


def table1_grid():
    rows = [ExperimentRow("Feature-Level Fusion")]
    for t in ("I", "II", "III"):
        for st in STAGE_SUBSETS:
            rows.append(ExperimentRow(f"Type {t} ({DIRECTIONS[t]}) stages {','.join(map(str, st))}", t, st))
    return rows


def table3_grid(best=("III", (1, 2))):
    t, st = best
    return [
        ExperimentRow("Unimodal EDA", modalities="eda"),
        ExperimentRow("Unimodal ECG", modalities="ecg"),
        ExperimentRow("Feat. Fus."),
        ExperimentRow("Ours w/o att.", t, st, attention=False),
        ExperimentRow("Ours (AttX)", t, st),
    ]


def load_grid(arg):
    if arg == "table1":
        return table1_grid()
    if arg == "table3":
        return table3_grid()
    import yaml

    with open(arg) as fh:
        d = yaml.safe_load(fh)
    rows = d["rows"] if isinstance(d, dict) else d
    return [ExperimentRow.from_dict(r) for r in rows]


@dataclass
class AblationTable:
    rows: list
    results: list  # LosoResult per row

    CSV_COLUMNS = ("type", "stages", "accuracy", "macro_f1", "weighted_f1", "n_folds",
                   "name", "direction", "pooled_accuracy", "pooled_macro_f1", "pooled_weighted_f1")

    def records(self):
        for row, res in zip(self.rows, self.results):
            yield {
                "type": row.type_label, "stages": row.stages_label,
                "accuracy": res.mean["accuracy"], "macro_f1": res.mean["macro_f1"],
                "weighted_f1": res.mean["weighted_f1"], "n_folds": len(res.folds),
                "name": row.name, "direction": row.direction,
                "pooled_accuracy": res.pooled.accuracy, "pooled_macro_f1": res.pooled.macro_f1,
                "pooled_weighted_f1": res.pooled.weighted_f1,
            }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records():
            w.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in self.CSV_COLUMNS])
        return buf.getvalue()

    def to_text(self):
        head = ("Method", "Type", "Direction", "Stages", "Acc.", "Mac. F1", "W. F1")
        body = [(r["name"], r["type"], r["direction"], r["stages"], f"{100 * r['accuracy']:.2f}",
                 f"{100 * r['macro_f1']:.2f}", f"{100 * r['weighted_f1']:.2f}") for r in self.records()]
        widths = [max(len(str(x[i])) for x in [head] + body) for i in range(len(head))]
        fmt = lambda row: "  ".join(str(v).ljust(w) for v, w in zip(row, widths))  # noqa: E731
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        atomic_write(os.path.join(out_dir, "ablation.csv"), self.to_csv().encode("utf-8"))
        atomic_write(os.path.join(out_dir, "ablation.txt"), self.to_text().encode("utf-8"))
        for i, (row, res) in enumerate(zip(self.rows, self.results)):
            row_dir = os.path.join(out_dir, f"row{i:02d}")
            os.makedirs(row_dir, exist_ok=True)
            for f in res.folds:
                payload = dict(f.to_dict(), row=row.name, type=row.type_label, stages=row.stages_label)
                atomic_write(os.path.join(row_dir, f"fold_{f.held_out_subject}.json"),
                             json.dumps(payload, indent=2, sort_keys=True).encode("utf-8"))


def ablation_run(windows, rows, base_spec, cfg, out_dir=None, workers=1):
    results = []
    for row in rows:
        log.info("ablation row: %s", row.name)
        results.append(loso_evaluate(windows, row.model_spec(base_spec), cfg, workers=workers))
    table = AblationTable(list(rows), results)
    if out_dir is not None:
        table.write(out_dir)
    return table
