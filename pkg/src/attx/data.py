"""Ingestion of the CSV + manifest layout, and the synthetic stand-in dataset.

Manifest (JSON)::

    {"dataset_name": "...",
     "subjects": [{"subject_id": "S2", "ecg_file": "S2_ecg.csv",
                   "eda_file": "S2_eda.csv", "labels_file": "S2_labels.csv",
                   "fs_hz": 700}, ...]}

Paths are relative to the manifest. Signal files hold one real per line;
the labels file one integer condition code per line (0 other, 1 neutral,
2 stress, 3 amusement). A WESAD converter only has to emit this layout.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from .preprocess import Condition, SignalRecord
from .rng import substream
from .storage import atomic_write

log = logging.getLogger(__name__)

MODES = ("redundant", "complementary", "ecg_only", "eda_only")


class IngestError(ValueError):
    pass


@dataclass
class SubjectEntry:
    subject_id: str
    ecg_file: str
    eda_file: str
    labels_file: str
    fs_hz: float = 700.0


@dataclass
class IngestManifest:
    subjects: list
    dataset_name: str = "dataset"
    root: str = "."

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        subjects = [SubjectEntry(**s) for s in d["subjects"]]
        return cls(subjects, d.get("dataset_name", "dataset"), os.path.dirname(os.path.abspath(path)))

    def to_dict(self):
        return {"dataset_name": self.dataset_name, "subjects": [asdict(s) for s in self.subjects]}

    def save(self, path):
        atomic_write(path, json.dumps(self.to_dict(), indent=2).encode("utf-8"))


def _read_column(path, dtype):
    if not os.path.exists(path):
        raise IngestError(f"missing file {path}")
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    return np.array([dtype(v) for v in lines])


def _write_column(path, values, fmt):
    atomic_write(path, ("\n".join(fmt % v for v in values) + "\n").encode("ascii"), "wb")


def _clean_codes(codes, sid):
    known = np.isin(codes, [c.value for c in Condition])
    if not known.all():
        bad = sorted(set(codes[~known].tolist()))
        log.warning("subject %s: unknown condition codes %s treated as OTHER", sid, bad)
        codes = np.where(known, codes, Condition.OTHER)
    return codes.astype(np.int8)


def ingest(manifest):
    """Load every subject listed in ``manifest`` into ECG and EDA records."""
    records = []
    for s in manifest.subjects:
        join = lambda p: p if os.path.isabs(p) else os.path.join(manifest.root, p)  # noqa: E731
        ecg = _read_column(join(s.ecg_file), float)
        eda = _read_column(join(s.eda_file), float)
        codes = _read_column(join(s.labels_file), lambda v: int(float(v)))
        if not len(ecg) == len(eda) == len(codes):
            raise IngestError(f"subject {s.subject_id}: length mismatch "
                              f"(ecg {len(ecg)}, eda {len(eda)}, labels {len(codes)})")
        codes = _clean_codes(codes, s.subject_id)
        records.append(SignalRecord(s.subject_id, "ECG", s.fs_hz, ecg, codes))
        records.append(SignalRecord(s.subject_id, "EDA", s.fs_hz, eda, codes))
    return records


def export_records(records, out_dir, dataset_name="synthetic"):
    """Write records in the ingestion layout; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    by_subject = {}
    for r in records:
        by_subject.setdefault(r.subject_id, {})[r.modality] = r
    entries = []
    for sid, mods in by_subject.items():
        ecg, eda = mods["ECG"], mods["EDA"]
        names = {k: f"{sid}_{k}.csv" for k in ("ecg", "eda", "labels")}
        _write_column(os.path.join(out_dir, names["ecg"]), ecg.samples, "%.17g")
        _write_column(os.path.join(out_dir, names["eda"]), eda.samples, "%.17g")
        _write_column(os.path.join(out_dir, names["labels"]), ecg.condition_labels, "%d")
        entries.append(SubjectEntry(sid, names["ecg"], names["eda"], names["labels"], ecg.fs_hz))
    manifest = IngestManifest(entries, dataset_name)
    path = os.path.join(out_dir, "manifest.json")
    manifest.save(path)
    return path


# ---------------------------------------------------------------------------
# synthetic data

@dataclass
class SyntheticSpec:
    n_subjects: int = 6
    duration_s: float = 300.0
    fs_hz: float = 700.0
    class_balance: float = 0.5  # fraction of study time in the stress condition
    snr_db: float = 20.0
    cross_modal_mode: str = "complementary"
    seed: int = 0
    block_s: float = 35.0
    lead_s: float = 2.5
    high_level: float = 1.0
    low_level: float = 0.25

    def __post_init__(self):
        if self.cross_modal_mode not in MODES:
            raise ValueError(f"cross_modal_mode must be one of {MODES}")
        if not 0.0 <= self.class_balance <= 1.0:
            raise ValueError("class_balance must lie in [0, 1]")
        if self.n_subjects < 1 or self.duration_s <= 0 or self.fs_hz <= 0 or self.block_s <= 0:
            raise ValueError("n_subjects, duration_s, fs_hz and block_s must be positive")

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))

    def to_dict(self):
        return asdict(self)


def block_schedule(spec):
    """Per-subject list of (condition, ecg_bit, eda_bit) for each study block.

    Stress counts are spread over subjects by error diffusion so the pooled
    stress fraction tracks ``class_balance``. Bits cycle within each class, so
    in ``complementary`` mode each modality's bit alone is independent of the
    class while (ecg_bit XOR eda_bit) equals it.
    """
    n_blocks = max(int((spec.duration_s - spec.lead_s) // spec.block_s), 1)
    schedule, owed = [], 0.0
    for subj in range(spec.n_subjects):
        rng = substream(spec.seed, "synth", "schedule", subj)
        owed += spec.class_balance * n_blocks
        n_stress = int(np.clip(np.floor(owed + 0.5), 0, n_blocks))
        owed -= n_stress
        classes = [1] * n_stress + [0] * (n_blocks - n_stress)
        phase = int(rng.integers(2))
        counters = {0: phase, 1: phase}
        blocks = []
        for c in classes:
            k = counters[c]
            counters[c] += 1
            alt = k % 2
            if spec.cross_modal_mode == "complementary":
                bits = (alt, 1 - alt) if c else (alt, alt)
            elif spec.cross_modal_mode == "redundant":
                bits = (c, c)
            elif spec.cross_modal_mode == "ecg_only":
                bits = (c, alt)
            else:
                bits = (alt, c)
            if c:
                cond = Condition.STRESS
            else:
                cond = Condition.NEUTRAL if alt == 0 else Condition.AMUSEMENT
            blocks.append((cond, bits[0], bits[1]))
        order = rng.permutation(len(blocks))
        schedule.append([blocks[i] for i in order])
    return schedule


def _add_noise(x, snr_db, rng):
    p_sig = np.mean((x - x.mean()) ** 2)
    sd = np.sqrt(p_sig / 10 ** (snr_db / 10.0))
    return x + rng.normal(0.0, sd, size=x.shape)


def _synth_subject(spec, idx, blocks):
    fs = spec.fs_hz
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    levels = np.array([spec.low_level, spec.high_level])

    codes = np.full(n, Condition.OTHER, dtype=np.int8)
    ecg_level = np.empty(n)
    eda_level = np.empty(n)
    lead = int(round(spec.lead_s * fs))
    blen = int(round(spec.block_s * fs))
    # lead-in and tail carry the neighbouring block's levels but stay OTHER
    ecg_level[:] = levels[blocks[0][1]]
    eda_level[:] = levels[blocks[0][2]]
    for b, (cond, ebit, dbit) in enumerate(blocks):
        lo, hi = min(lead + b * blen, n), min(lead + (b + 1) * blen, n)
        codes[lo:hi] = cond
        ecg_level[lo:] = levels[ebit]
        eda_level[lo:] = levels[dbit]

    rng = substream(spec.seed, "synth", "signal", idx)
    # ECG: beat train at a subject-specific rate, R wave amplitude set by the ECG bit
    hr = rng.uniform(60.0, 90.0) / 60.0
    intervals = rng.normal(1.0 / hr, 0.04 / hr, size=int(spec.duration_s * hr * 1.2) + 4)
    beats = np.cumsum(np.clip(intervals, 0.3, 2.0)) - rng.uniform(0, 1.0 / hr)
    beats = beats[(beats >= 0) & (beats < spec.duration_s)]
    idx_b = np.round(beats * fs).astype(np.int64)
    idx_b = idx_b[idx_b < n]
    impulses = np.zeros(n)
    impulses[idx_b] = ecg_level[idx_b]
    tk = np.arange(-0.1, 0.5, 1.0 / fs)
    template = (np.exp(-0.5 * (tk / 0.012) ** 2)
                - 0.15 * np.exp(-0.5 * ((tk + 0.03) / 0.01) ** 2)
                - 0.15 * np.exp(-0.5 * ((tk - 0.03) / 0.01) ** 2)
                + 0.25 * np.exp(-0.5 * ((tk - 0.28) / 0.04) ** 2))
    ecg = np.convolve(impulses, template)[int(round(0.1 * fs)):][:n]
    ecg += 0.1 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    ecg *= rng.uniform(0.5, 2.0)
    ecg = _add_noise(ecg, spec.snr_db, rng)

    # EDA: tonic level with slow drift plus skin-conductance responses whose
    # amplitude is set by the EDA bit
    period = rng.uniform(2.0, 3.0)
    onsets = np.arange(rng.uniform(0, period), spec.duration_s, period)
    onsets = onsets + rng.uniform(-0.4, 0.4, size=onsets.size)
    idx_o = np.round(np.clip(onsets, 0, spec.duration_s - 1.0 / fs) * fs).astype(np.int64)
    impulses = np.zeros(n)
    np.add.at(impulses, idx_o, eda_level[idx_o] * rng.uniform(0.8, 1.2, size=idx_o.size))
    ts = np.arange(0, 8.0, 1.0 / fs)
    scr = (1 - np.exp(-ts / 0.4)) * np.exp(-ts / 1.5)
    eda = np.convolve(impulses, scr / scr.max())[:n]
    eda += 2.0 + 0.3 * np.sin(2 * np.pi * t / rng.uniform(150, 250) + rng.uniform(0, 2 * np.pi))
    eda *= rng.uniform(0.5, 2.0)
    eda = _add_noise(eda, spec.snr_db, rng)

    sid = f"S{idx + 1:02d}"
    return [SignalRecord(sid, "ECG", fs, ecg, codes), SignalRecord(sid, "EDA", fs, eda, codes.copy())]


def generate_synthetic(spec):
    """Deterministic two-modality recordings with a known class structure."""
    records = []
    for idx, blocks in enumerate(block_schedule(spec)):
        records.extend(_synth_subject(spec, idx, blocks))
    return records
