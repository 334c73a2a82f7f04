"""Attentive cross-modal connections between the ECG and EDA streams.

Shapes follow the channel-last layout used everywhere else: a stage output is
[batch, n, m] (n = time positions, m = channels) and the stacked pair is
[batch, n, m, 2] with index 0 = ECG and 1 = EDA on the last axis. Attention
is computed independently for every (batch, position, channel) cell, so the
batch axis never mixes.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm1d, Module

ECG, EDA = 0, 1
CONN_TYPES = ("I", "II", "III")
DIRECTIONS = {"I": "ECG->EDA", "II": "EDA->ECG", "III": "ECG<->EDA"}


@dataclass
class AttXSpec:
    conn_type: str = "III"
    stages: tuple = (1, 2)
    attention: bool = True
    reduce: str = "scale"

    def __post_init__(self):
        self.stages = tuple(sorted(int(s) for s in self.stages))
        if self.conn_type not in CONN_TYPES:
            raise ValueError(f"connection type must be one of {CONN_TYPES}, got {self.conn_type!r}")
        if not self.stages:
            raise ValueError("an enabled AttX spec needs at least one stage")
        if len(set(self.stages)) != len(self.stages) or not set(self.stages) <= {1, 2, 3}:
            raise ValueError(f"stages must be a subset of {{1, 2, 3}}, got {self.stages}")
        if self.reduce not in ("scale", "contract"):
            raise ValueError(f"unknown attx.reduce {self.reduce!r}")

    @property
    def direction(self):
        return DIRECTIONS[self.conn_type]

    def receivers(self):
        """(ecg_receives, eda_receives)"""
        return self.conn_type in ("II", "III"), self.conn_type in ("I", "III")

    def to_dict(self):
        return {"type": self.conn_type, "stages": list(self.stages),
                "attention": self.attention, "reduce": self.reduce}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return None
        return cls(conn_type=str(d.get("type", "III")), stages=tuple(d.get("stages", (1, 2))),
                   attention=bool(d.get("attention", True)), reduce=d.get("reduce", "scale"))


def stack_modalities(z_ecg, z_eda):
    """S[..., i, c, 0] = Z_ecg[..., i, c]; S[..., i, c, 1] = Z_eda[..., i, c]."""
    if z_ecg.shape != z_eda.shape:
        raise T.ShapeError(f"AttX needs stage-aligned streams, got {z_ecg.shape} and {z_eda.shape}")
    return T.stack([z_ecg, z_eda], axis=-1)


def unstack_modalities(S):
    return T.take(S, ECG, axis=-1), T.take(S, EDA, axis=-1)


def attention_weights(S, W, w_u, reduce="scale"):
    """theta[..., n, d, m] from the stacked representation S[..., n, m, d].

    U = ReLU(S W) mixes the modality axis; after swapping the last two axes
    each channel column is scaled by w_u and a softmax is taken over the
    modality axis, so theta[..., i, 0, c] + theta[..., i, 1, c] = 1.

    ``reduce="contract"`` instead sums the channel axis against w_u, giving
    one weight per (position, modality) that is shared by all channels.
    """
    m = S.shape[-2]
    if W.shape != (2, 2):
        raise T.ShapeError(f"W must be 2x2, got {W.shape}")
    if w_u.shape != (m,):
        raise T.ShapeError(f"w_u must have length {m}, got {w_u.shape}")
    U = T.relu(T.dense(S, W))
    Ut = T.transpose(U, tuple(range(U.ndim - 2)) + (U.ndim - 1, U.ndim - 2))
    if reduce == "scale":
        logits = T.mul(Ut, w_u)
    elif reduce == "contract":
        logits = T.mul(T.dense(Ut, T.reshape(w_u, (m, 1))), np.ones(m))
    else:
        raise ValueError(f"unknown reduce mode {reduce!r}")
    return T.softmax(logits, axis=-2)


def apply_attention(theta, z_ecg, z_eda):
    """Weight each modality by its slice of theta (element-wise)."""
    return T.mul(T.take(theta, ECG, axis=-2), z_ecg), T.mul(T.take(theta, EDA, axis=-2), z_eda)


class AttXConnection(Module):
    """One AttX block at one stage boundary.

    Owns its own W and w_u plus a batch-norm for each receiving stream. With
    ``fixed_theta`` set, theta is that constant instead of the learned
    weights (``fixed_theta=1`` is the plain cross-connection ablation).
    """

    def __init__(self, conn_type, channels, reduce="scale", fixed_theta=None):
        super().__init__()
        if conn_type not in CONN_TYPES:
            raise ValueError(f"connection type must be one of {CONN_TYPES}")
        self.conn_type = conn_type
        self.reduce = reduce
        self.fixed_theta = fixed_theta
        self.W = self.param("W", (2, 2), "he", fan_in=2)
        self.w_u = self.param("w_u", (channels,), "he", fan_in=channels)
        self.ecg_receives = conn_type in ("II", "III")
        self.eda_receives = conn_type in ("I", "III")
        if self.ecg_receives:
            self.bn_ecg = self.child("bn_ecg", BatchNorm1d(2 * channels))
        if self.eda_receives:
            self.bn_eda = self.child("bn_eda", BatchNorm1d(2 * channels))

    def theta(self, z_ecg, z_eda):
        S = stack_modalities(z_ecg, z_eda)
        if self.fixed_theta is not None:
            shape = S.shape[:-2] + (2, S.shape[-2])
            return T.Tensor(np.full(shape, float(self.fixed_theta)))
        return attention_weights(S, self.W, self.w_u, self.reduce)

    def __call__(self, z_ecg, z_eda, training=True):
        theta = self.theta(z_ecg, z_eda)
        zh_ecg, zh_eda = apply_attention(theta, z_ecg, z_eda)
        x_ecg, x_eda = z_ecg, z_eda
        if self.ecg_receives:
            x_ecg = self.bn_ecg(T.concat([z_ecg, zh_eda], axis=-1), training)
        if self.eda_receives:
            x_eda = self.bn_eda(T.concat([z_eda, zh_ecg], axis=-1), training)
        return x_ecg, x_eda


class ConcatConnection(Module):
    """Cross-connection without attention: plain concatenation + batch-norm."""

    def __init__(self, conn_type, channels):
        super().__init__()
        self.ecg_receives = conn_type in ("II", "III")
        self.eda_receives = conn_type in ("I", "III")
        if self.ecg_receives:
            self.bn_ecg = self.child("bn_ecg", BatchNorm1d(2 * channels))
        if self.eda_receives:
            self.bn_eda = self.child("bn_eda", BatchNorm1d(2 * channels))

    def __call__(self, z_ecg, z_eda, training=True):
        if z_ecg.shape != z_eda.shape:
            raise T.ShapeError(f"cross-connection needs aligned streams, got {z_ecg.shape} and {z_eda.shape}")
        x_ecg, x_eda = z_ecg, z_eda
        if self.ecg_receives:
            x_ecg = self.bn_ecg(T.concat([z_ecg, z_eda], axis=-1), training)
        if self.eda_receives:
            x_eda = self.bn_eda(T.concat([z_eda, z_ecg], axis=-1), training)
        return x_ecg, x_eda


def cross_connect(conn_type, z_ecg, z_eda, connection, training=True):
    """Functional entry point; ``connection`` supplies W, w_u and the norms."""
    if connection.conn_type != conn_type:
        raise ValueError(f"connection was built for type {connection.conn_type}, not {conn_type}")
    return connection(z_ecg, z_eda, training)
