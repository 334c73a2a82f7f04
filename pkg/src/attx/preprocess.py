"""ECG/EDA preprocessing: filter -> z-score -> resample -> window -> label.

Filters are designed here (analog Butterworth prototype, bilinear transform
with pre-warping, factored into second-order sections). Running a cascade
over a signal goes through ``scipy.signal.sosfilt``.
"""
import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import signal as sps

log = logging.getLogger(__name__)

TARGET_HZ = 256
WINDOW_S = 10
WINDOW_LEN = TARGET_HZ * WINDOW_S


class Condition(IntEnum):
    """Per-sample protocol codes (WESAD numbering)."""
    OTHER = 0
    NEUTRAL = 1
    STRESS = 2
    AMUSEMENT = 3


class Label(IntEnum):
    NON_STRESS = 0
    STRESS = 1


# tie-break order for the window majority vote
_TIE_PRIORITY = (Condition.STRESS, Condition.NEUTRAL, Condition.AMUSEMENT, Condition.OTHER)


class FilterDesignError(ValueError):
    pass


@dataclass
class SignalRecord:
    subject_id: str
    modality: str  # "ECG" | "EDA"
    fs_hz: float
    samples: np.ndarray
    condition_labels: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.condition_labels = np.asarray(self.condition_labels, dtype=np.int8)
        if self.modality not in ("ECG", "EDA"):
            raise ValueError(f"modality must be ECG or EDA, got {self.modality!r}")
        if not self.fs_hz > 0:
            raise ValueError("fs_hz must be positive")
        if len(self.samples) != len(self.condition_labels):
            raise ValueError(f"subject {self.subject_id} {self.modality}: {len(self.samples)} samples "
                             f"but {len(self.condition_labels)} labels")


@dataclass
class WindowPair:
    subject_id: str
    ecg: np.ndarray
    eda: np.ndarray
    label: Label
    start: int = 0  # window start, in samples at TARGET_HZ

    def __post_init__(self):
        self.label = Label(int(self.label))


@dataclass
class PipelineConfig:
    ecg_band_hz: tuple = (5.0, 15.0)
    eda_cutoff_hz: float = 3.0
    filter_order: int = 4
    zero_phase: bool = False
    target_hz: int = TARGET_HZ
    window_s: float = WINDOW_S
    overlap: float = 0.5
    antialias_fraction: float = 0.45
    antialias_order: int = 4

    def to_dict(self):
        d = dict(self.__dict__)
        d["ecg_band_hz"] = list(self.ecg_band_hz)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "ecg_band_hz" in d:
            d["ecg_band_hz"] = tuple(d["ecg_band_hz"])
        return cls(**d)


# ---------------------------------------------------------------------------
# filter design

@dataclass
class BiquadCascade:
    """Second-order sections ``(b0, b1, b2, a1, a2)`` with a0 = 1, plus a gain."""
    sections: np.ndarray
    gain: float = 1.0

    def sos(self):
        """scipy layout [b0 b1 b2 1 a1 a2] with the gain folded into section 0."""
        sos = np.zeros((len(self.sections), 6))
        sos[:, :3] = self.sections[:, :3]
        sos[:, 3] = 1.0
        sos[:, 4:] = self.sections[:, 3:]
        sos[0, :3] *= self.gain
        return sos

    def poles(self):
        out = []
        for _, _, _, a1, a2 in self.sections:
            out.extend(np.roots([1.0, a1, a2]) if a2 != 0 else np.roots([1.0, a1]))
        return np.array(out)

    def is_stable(self):
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, f_hz, fs_hz):
        """Complex frequency response at ``f_hz``."""
        z = np.exp(1j * 2 * np.pi * np.asarray(f_hz, dtype=float) / fs_hz)
        return self.gain * _cascade_eval(self.sections, z)


def _cascade_eval(sections, z):
    h = np.ones_like(z, dtype=complex)
    zi = 1.0 / z
    for b0, b1, b2, a1, a2 in sections:
        h *= (b0 + b1 * zi + b2 * zi * zi) / (1.0 + a1 * zi + a2 * zi * zi)
    return h


def _pair_poles(poles):
    """Group digital poles into conjugate pairs (reals paired with reals)."""
    cplx = sorted((p for p in poles if p.imag > 1e-12), key=lambda p: abs(p))
    reals = sorted((p.real for p in poles if abs(p.imag) <= 1e-12), key=abs)
    groups = [(p, np.conj(p)) for p in cplx]
    groups += [tuple(reals[i:i + 2]) for i in range(0, len(reals), 2)]
    return groups


def design_butterworth(kind, order, cutoffs_hz, fs_hz):
    """Digital Butterworth filter as a cascade of stable biquads.

    ``kind="bandpass"`` takes (low, high) and, as is conventional, ``order``
    is the prototype order, so the result has 2*order poles.
    """
    if order < 1:
        raise FilterDesignError("order must be >= 1")
    nyq = fs_hz / 2.0
    cut = np.atleast_1d(np.asarray(cutoffs_hz, dtype=float))
    if kind not in ("lowpass", "bandpass"):
        raise FilterDesignError(f"unknown filter kind {kind!r}")
    if cut.size != (1 if kind == "lowpass" else 2):
        raise FilterDesignError(f"{kind} needs {1 if kind == 'lowpass' else 2} cutoff(s), got {cut.size}")
    if np.any(cut <= 0) or np.any(cut >= nyq):
        raise FilterDesignError(f"cutoffs {cut.tolist()} Hz must lie strictly inside (0, {nyq}) Hz")
    if kind == "bandpass" and not cut[0] < cut[1]:
        raise FilterDesignError("bandpass needs low < high")

    k2 = 2.0 * fs_hz
    warp = k2 * np.tan(np.pi * cut / fs_hz)
    proto = np.exp(1j * np.pi * (2 * np.arange(1, order + 1) + order - 1) / (2 * order))

    if kind == "lowpass":
        s_poles = warp[0] * proto
        zeros_per_section = (-1.0, -1.0)
        z_ref = 1.0
    else:
        w0 = np.sqrt(warp[0] * warp[1])
        bw = warp[1] - warp[0]
        disc = np.sqrt((proto * bw) ** 2 - 4 * w0 ** 2 + 0j)
        s_poles = np.concatenate([(proto * bw + disc) / 2, (proto * bw - disc) / 2])
        zeros_per_section = (1.0, -1.0)
        z_ref = np.exp(2j * np.arctan(w0 / k2))  # digital image of the centre frequency

    z_poles = (k2 + s_poles) / (k2 - s_poles)
    sections = []
    for group in _pair_poles(z_poles):
        if len(group) == 2:
            p1, p2 = group
            a = [-(p1 + p2).real, (p1 * p2).real]
            z1, z2 = zeros_per_section
            b = [1.0, -(z1 + z2), z1 * z2]
        else:
            a = [-group[0], 0.0]
            b = [1.0, -zeros_per_section[0], 0.0]
        sections.append(b + a)
    sections = np.array(sections, dtype=float)
    gain = 1.0 / abs(_cascade_eval(sections, np.array([z_ref], dtype=complex))[0])
    cascade = BiquadCascade(sections, float(gain))
    if not cascade.is_stable():
        raise FilterDesignError("designed filter is unstable")
    return cascade


def filter_signal(x, cascade, zero_phase=False):
    """Causal filtering from a zero state; ``zero_phase`` runs forward-backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    if zero_phase:
        sos = cascade.sos()
        edge = 3 * (2 * len(sos) + 1)
        # very short inputs cannot take scipy's default edge padding
        return sps.sosfiltfilt(sos, x, padlen=min(edge, x.size - 1) if x.size <= edge else None)
    return sps.sosfilt(cascade.sos(), x)


# ---------------------------------------------------------------------------
# normalisation, resampling, windowing

def zscore_subject(x, eps=1e-8):
    """(x - mean) / max(std, eps) over a whole recording (population std)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("z-score needs at least 2 samples")
    if np.ptp(x) == 0:
        # the mean of a constant array can be off by an ulp; dividing that residue by eps is not zero
        log.warning("constant signal; z-score returns zeros")
        return np.zeros_like(x)
    return (x - x.mean()) / max(x.std(), eps)


def resampled_length(n, from_hz, to_hz):
    # exact for integer rates; floats go through a rational approximation
    from fractions import Fraction
    ratio = Fraction(to_hz).limit_denominator(10 ** 6) / Fraction(from_hz).limit_denominator(10 ** 6)
    return int(n * ratio.numerator // ratio.denominator)


def resample(x, from_hz=700, to_hz=TARGET_HZ, antialias_fraction=0.45, antialias_order=4):
    """Anti-alias (zero-phase Butterworth at fraction*to_hz), then linear interpolation."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    n_out = resampled_length(x.size, from_hz, to_hz)
    if to_hz < from_hz:
        aa = design_butterworth("lowpass", antialias_order, antialias_fraction * to_hz, from_hz)
        x = filter_signal(x, aa, zero_phase=True)
    positions = np.arange(n_out) * (from_hz / to_hz)
    return np.interp(positions, np.arange(x.size), x)


def resample_labels(labels, from_hz, to_hz):
    """Nearest-preceding-sample pick for per-sample condition codes."""
    labels = np.asarray(labels)
    n_out = resampled_length(labels.size, from_hz, to_hz)
    idx = np.floor(np.arange(n_out) * (from_hz / to_hz) + 1e-9).astype(np.int64)
    return labels[np.minimum(idx, labels.size - 1)]


def majority_condition(codes):
    counts = np.bincount(np.asarray(codes, dtype=np.int64), minlength=len(Condition))[:len(Condition)]
    best = counts.max()
    for c in _TIE_PRIORITY:
        if counts[c] == best:
            return c
    raise AssertionError("unreachable")


@dataclass
class Window:
    start: int
    samples: np.ndarray
    condition: Condition


def window_count(n, w, h):
    return (n - w) // h + 1 if n >= w else 0


def segment(x, labels, fs_hz=TARGET_HZ, window_s=WINDOW_S, overlap=0.5):
    """Overlapping windows labelled by majority condition; OTHER windows dropped."""
    x = np.asarray(x)
    labels = np.asarray(labels)
    if labels.shape != x.shape:
        raise ValueError("labels must be aligned with the signal")
    w = int(round(fs_hz * window_s))
    h = int(round(w * (1.0 - overlap)))
    out = []
    for i in range(window_count(x.size, w, h)):
        s = i * h
        cond = majority_condition(labels[s:s + w])
        if cond == Condition.OTHER:
            continue
        out.append(Window(s, x[s:s + w].copy(), cond))
    return out


def binarize(condition):
    condition = Condition(int(condition))
    if condition == Condition.OTHER:
        raise ValueError("OTHER segments have no binary label; they should be discarded before windowing")
    return Label.STRESS if condition == Condition.STRESS else Label.NON_STRESS


# ---------------------------------------------------------------------------
# per-subject composition

def preprocess_signal(record, cfg=None):
    """Filter -> z-score -> resample for one record; returns (signal, labels) at target rate."""
    cfg = cfg or PipelineConfig()
    if record.modality == "ECG":
        f = design_butterworth("bandpass", cfg.filter_order, cfg.ecg_band_hz, record.fs_hz)
    else:
        f = design_butterworth("lowpass", cfg.filter_order, cfg.eda_cutoff_hz, record.fs_hz)
    x = filter_signal(record.samples, f, zero_phase=cfg.zero_phase)
    x = zscore_subject(x)
    x = resample(x, record.fs_hz, cfg.target_hz, cfg.antialias_fraction, cfg.antialias_order)
    labels = resample_labels(record.condition_labels, record.fs_hz, cfg.target_hz)
    return x, labels


def build_dataset(records, cfg=None):
    """Pair ECG/EDA windows per subject into binary-labelled WindowPairs."""
    cfg = cfg or PipelineConfig()
    by_subject = {}
    for r in records:
        by_subject.setdefault(r.subject_id, {})[r.modality] = r
    pairs = []
    for sid, mods in by_subject.items():
        if "ECG" not in mods or "EDA" not in mods:
            log.warning("subject %s is missing a modality; skipped", sid)
            continue
        ecg, eda = mods["ECG"], mods["EDA"]
        if ecg.fs_hz != eda.fs_hz:
            raise ValueError(f"subject {sid}: ECG at {ecg.fs_hz} Hz but EDA at {eda.fs_hz} Hz")
        n = min(len(ecg.samples), len(eda.samples))
        if n < 2:
            continue
        if len(ecg.samples) != len(eda.samples):
            log.info("subject %s: truncating both modalities to %d samples", sid, n)
        ecg = SignalRecord(sid, "ECG", ecg.fs_hz, ecg.samples[:n], ecg.condition_labels[:n])
        eda = SignalRecord(sid, "EDA", eda.fs_hz, eda.samples[:n], eda.condition_labels[:n])
        x_ecg, l_ecg = preprocess_signal(ecg, cfg)
        x_eda, l_eda = preprocess_signal(eda, cfg)
        w_ecg = segment(x_ecg, l_ecg, cfg.target_hz, cfg.window_s, cfg.overlap)
        w_eda = {w.start: w for w in segment(x_eda, l_eda, cfg.target_hz, cfg.window_s, cfg.overlap)}
        for w in w_ecg:
            other = w_eda.get(w.start)
            if other is None:
                continue
            if other.condition != w.condition:
                log.warning("subject %s window %d: modality labels disagree; using ECG", sid, w.start)
            pairs.append(WindowPair(sid, w.samples, other.samples, binarize(w.condition), w.start))
    return pairs
