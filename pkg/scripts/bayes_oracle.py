#!/usr/bin/env python3
"""Brute-force reference accuracies for the synthetic benchmark dataset.

Uses only per-window summary statistics (ECG standard deviation, EDA
detrended standard deviation) and exhaustive threshold search, no learned
model. Reports, pooled over all windows:

  single_ecg / single_eda  best accuracy of any one-threshold rule on one
                           modality's statistic (either polarity)
  joint                    best accuracy of any rule built from one threshold
                           per modality (all 16 truth tables over the two bits)

These in-sample optima upper-bound what a classifier restricted to the same
statistic can reach on held-out subjects.

    python scripts/bayes_oracle.py [--mode complementary] [--subjects 6] [--duration 300] [--seed 0]
"""
import argparse
import itertools
import json

import numpy as np

from attx.data import SyntheticSpec, generate_synthetic
from attx.preprocess import build_dataset


def window_stats(windows):
    ecg = np.array([np.std(w.ecg) for w in windows])
    eda = np.array([np.std(w.eda - np.polyval(np.polyfit(np.arange(w.eda.size), w.eda, 1), np.arange(w.eda.size)))
                    for w in windows])
    y = np.array([int(w.label) for w in windows])
    return ecg, eda, y


def candidate_thresholds(v):
    s = np.unique(v)
    return np.concatenate([[s[0] - 1.0], (s[:-1] + s[1:]) / 2, [s[-1] + 1.0]])


def best_single(v, y):
    best = 0.0
    for t in candidate_thresholds(v):
        acc = np.mean((v > t).astype(int) == y)
        best = max(best, acc, 1.0 - acc)
    return float(best)


def best_joint(a, b, y):
    """Exhaustive over both threshold sets and all 16 two-bit truth tables."""
    tb = candidate_thresholds(b)
    bits_b = (b[None, :] > tb[:, None]).astype(int)  # [n_tb, n]
    tables = np.array(list(itertools.product((0, 1), repeat=4)))
    best = 0.0
    for t1 in candidate_thresholds(a):
        cell = 2 * (a > t1).astype(int)[None, :] + bits_b
        for table in tables:
            acc = (table[cell] == y[None, :]).mean(axis=1).max()
            best = max(best, float(acc))
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mode", default="complementary")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    spec = SyntheticSpec(n_subjects=args.subjects, duration_s=args.duration,
                         cross_modal_mode=args.mode, seed=args.seed)
    windows = build_dataset(generate_synthetic(spec))
    ecg, eda, y = window_stats(windows)
    result = {
        "mode": args.mode, "subjects": args.subjects, "duration_s": args.duration, "seed": args.seed,
        "n_windows": len(windows),
        "single_ecg": best_single(ecg, y),
        "single_eda": best_single(eda, y),
        "joint": best_joint(ecg, eda, y),
    }
    print(json.dumps(result, indent=2))
    return result


if __name__ == "__main__":
    main()
