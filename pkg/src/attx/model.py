"""ECG SE-ResNet stream, EDA CNN stream, fusion head and AttX wiring."""
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .fusion import AttXConnection, AttXSpec
from .nn import BatchNorm1d, Conv1d, Dense, Module

EMBEDDING_DIM = 64
HEAD_DIM = 128
N_CLASSES = 2


class ConfigError(ValueError):
    pass


@dataclass
class StreamConfig:
    widths: tuple = (16, 32, 64)
    kernel_size: int = 7
    strides: tuple = (2, 2, 2)
    se_reduction: int = 4
    stage1_blocks: int = 1
    # EDA only: the untapped fourth stage
    stage4_width: int = 64
    stage4_stride: int = 2

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.widths) != 3 or len(self.strides) != 3:
            raise ConfigError("a stream needs exactly 3 stage widths and 3 stage strides")
        if min(self.widths) < 1 or min(self.strides) < 1:
            raise ConfigError("widths and strides must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be a positive odd int, got {self.kernel_size}")
        if self.se_reduction < 1 or self.stage1_blocks < 1:
            raise ConfigError("se_reduction and stage1_blocks must be >= 1")


@dataclass
class ModelSpec:
    ecg: StreamConfig = field(default_factory=StreamConfig)
    eda: StreamConfig = field(default_factory=StreamConfig)
    attx: AttXSpec = None
    modalities: str = "both"  # both | ecg | eda
    merge: str = "concat"  # concat | add
    embedding_dim: int = EMBEDDING_DIM
    head_dim: int = HEAD_DIM
    n_classes: int = N_CLASSES

    def validate(self):
        if self.modalities not in ("both", "ecg", "eda"):
            raise ConfigError(f"modalities must be both/ecg/eda, got {self.modalities!r}")
        if self.merge not in ("concat", "add"):
            raise ConfigError(f"merge must be concat/add, got {self.merge!r}")
        if self.attx is not None:
            if self.modalities != "both":
                raise ConfigError("AttX connections need both modality streams")
            if self.ecg.widths != self.eda.widths:
                raise ConfigError(f"stage widths differ between streams: {self.ecg.widths} vs {self.eda.widths}")
            if self.ecg.strides != self.eda.strides:
                raise ConfigError(f"stage strides differ between streams: {self.ecg.strides} vs {self.eda.strides}")

    def to_dict(self):
        return {
            "ecg": _stream_dict(self.ecg),
            "eda": _stream_dict(self.eda),
            "attx": None if self.attx is None else self.attx.to_dict(),
            "modalities": self.modalities,
            "merge": self.merge,
            "embedding_dim": self.embedding_dim,
            "head_dim": self.head_dim,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        return cls(
            ecg=StreamConfig(**d.get("ecg", {})),
            eda=StreamConfig(**d.get("eda", {})),
            attx=AttXSpec.from_dict(d.get("attx")),
            modalities=d.get("modalities", "both"),
            merge=d.get("merge", "concat"),
            embedding_dim=int(d.get("embedding_dim", EMBEDDING_DIM)),
            head_dim=int(d.get("head_dim", HEAD_DIM)),
            n_classes=int(d.get("n_classes", N_CLASSES)),
        )


def _stream_dict(cfg):
    d = asdict(cfg)
    d["widths"] = list(cfg.widths)
    d["strides"] = list(cfg.strides)
    return d


# ---------------------------------------------------------------------------
# blocks

class ConvBlock(Module):
    """Conv -> BatchNorm -> ReLU"""

    def __init__(self, ch_in, ch_out, k, stride=1):
        super().__init__()
        self.conv = self.child("conv", Conv1d(ch_in, ch_out, k, stride))
        self.bn = self.child("bn", BatchNorm1d(ch_out))

    def __call__(self, x, training):
        return T.relu(self.bn(self.conv(x), training))


class SEBlock(Module):
    """Squeeze (time average) and excite (bottleneck MLP + sigmoid gate)."""

    def __init__(self, ch, reduction):
        super().__init__()
        hidden = max(ch // reduction, 1)
        self.fc1 = self.child("fc1", Dense(ch, hidden))
        self.fc2 = self.child("fc2", Dense(hidden, ch))

    def gate(self, x):
        s = T.global_avg_pool(x)
        return T.sigmoid(self.fc2(T.relu(self.fc1(s))))

    def __call__(self, x, training=True):
        g = self.gate(x)
        return T.mul(x, T.reshape(g, (g.shape[0], 1, g.shape[1])))


class SEResBlock(Module):
    """Residual block with SE gating on the residual branch.

    ``projection=True`` is the SE Conv block (1x1 conv + BN shortcut, may
    change width and stride); otherwise the SE ID block with an identity
    shortcut.
    """

    def __init__(self, ch_in, ch_out, k, stride=1, reduction=4, projection=True):
        super().__init__()
        if not projection and (ch_in != ch_out or stride != 1):
            raise ConfigError(f"identity block needs ch_in == ch_out and stride 1, got {ch_in}->{ch_out}, stride {stride}")
        self.projection = projection
        self.conv1 = self.child("conv1", Conv1d(ch_in, ch_out, k, stride))
        self.bn1 = self.child("bn1", BatchNorm1d(ch_out))
        self.conv2 = self.child("conv2", Conv1d(ch_out, ch_out, k, 1))
        self.bn2 = self.child("bn2", BatchNorm1d(ch_out))
        self.se = self.child("se", SEBlock(ch_out, reduction))
        if projection:
            self.short_conv = self.child("short_conv", Conv1d(ch_in, ch_out, 1, stride))
            self.short_bn = self.child("short_bn", BatchNorm1d(ch_out))

    def branch(self, x, training):
        h = T.relu(self.bn1(self.conv1(x), training))
        return self.se(self.bn2(self.conv2(h), training))

    def shortcut(self, x, training):
        if self.projection:
            return self.short_bn(self.short_conv(x), training)
        return x

    def __call__(self, x, training):
        return T.relu(T.add(self.branch(x, training), self.shortcut(x, training)))


def se_conv_block(ch_in, ch_out, k, stride=1, reduction=4):
    return SEResBlock(ch_in, ch_out, k, stride, reduction, projection=True)


def se_id_block(ch, k, reduction=4):
    return SEResBlock(ch, ch, k, 1, reduction, projection=False)


class Sequence(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = [self.child(str(i), b) for i, b in enumerate(blocks)]

    def __call__(self, x, training):
        for b in self.blocks:
            x = b(x, training)
        return x


class Embedding(Module):
    """GAP -> FC -> ReLU -> FC -> ReLU"""

    def __init__(self, ch_in, dim):
        super().__init__()
        self.fc1 = self.child("fc1", Dense(ch_in, dim))
        self.fc2 = self.child("fc2", Dense(dim, dim))

    def __call__(self, x):
        return T.relu(self.fc2(T.relu(self.fc1(T.global_avg_pool(x)))))


# ---------------------------------------------------------------------------
# streams

class Stream(Module):
    def stage(self, j, x, training):
        return self.stages[j - 1](x, training)

    def embed(self, x, training):
        return self.embedding(x)


class ECGStream(Stream):
    """Conv block(s), then SE Conv + 2 SE ID, then SE Conv + SE ID."""

    def __init__(self, cfg, in_channels=(1, None, None), embed_in=None, dim=EMBEDDING_DIM):
        super().__init__()
        w1, w2, w3 = cfg.widths
        s1, s2, s3 = cfg.strides
        k, r = cfg.kernel_size, cfg.se_reduction
        c1, c2, c3 = in_channels[0], in_channels[1] or w1, in_channels[2] or w2
        stage1 = [ConvBlock(c1, w1, k, s1)] + [ConvBlock(w1, w1, k, 1) for _ in range(cfg.stage1_blocks - 1)]
        self.stages = [
            self.child("stage1", Sequence(stage1)),
            self.child("stage2", Sequence([se_conv_block(c2, w2, k, s2, r), se_id_block(w2, k, r), se_id_block(w2, k, r)])),
            self.child("stage3", Sequence([se_conv_block(c3, w3, k, s3, r), se_id_block(w3, k, r)])),
        ]
        self.embedding = self.child("embed", Embedding(embed_in or w3, dim))


class EDAStream(Stream):
    """Conv block, 2 conv blocks, 2 conv blocks, then 2 conv blocks + SE."""

    def __init__(self, cfg, in_channels=(1, None, None, None), dim=EMBEDDING_DIM):
        super().__init__()
        w1, w2, w3 = cfg.widths
        s1, s2, s3 = cfg.strides
        w4, s4, k = cfg.stage4_width, cfg.stage4_stride, cfg.kernel_size
        c1, c2, c3 = in_channels[0], in_channels[1] or w1, in_channels[2] or w2
        c4 = in_channels[3] or w3
        self.stages = [
            self.child("stage1", Sequence([ConvBlock(c1, w1, k, s1)])),
            self.child("stage2", Sequence([ConvBlock(c2, w2, k, s2), ConvBlock(w2, w2, k)])),
            self.child("stage3", Sequence([ConvBlock(c3, w3, k, s3), ConvBlock(w3, w3, k)])),
        ]
        self.stage4 = self.child("stage4", Sequence([ConvBlock(c4, w4, k, s4), ConvBlock(w4, w4, k)]))
        self.se = self.child("se", SEBlock(w4, cfg.se_reduction))
        self.embedding = self.child("embed", Embedding(w4, dim))

    def embed(self, x, training):
        return self.embedding(self.se(self.stage4(x, training)))


def build_ecg_stream(cfg, receives=(False, False, False), dim=EMBEDDING_DIM):
    """``receives[j-1]`` marks a connection doubling the stream after stage j."""
    w = cfg.widths
    ins = (1,) + tuple(2 * w[j] if receives[j] else w[j] for j in range(2))
    return ECGStream(cfg, ins, 2 * w[2] if receives[2] else w[2], dim)


def build_eda_stream(cfg, receives=(False, False, False), dim=EMBEDDING_DIM):
    w = cfg.widths
    ins = (1,) + tuple(2 * w[j] if receives[j] else w[j] for j in range(3))
    return EDAStream(cfg, ins, dim)


# ---------------------------------------------------------------------------
# full model

class Head(Module):
    def __init__(self, n_in, dim, n_classes):
        super().__init__()
        self.fc1 = self.child("fc1", Dense(n_in, dim))
        self.fc2 = self.child("fc2", Dense(dim, dim))
        self.out = self.child("out", Dense(dim, n_classes))

    def __call__(self, y):
        return self.out(T.relu(self.fc2(T.relu(self.fc1(y)))))


class AttXNet(Module):
    def __init__(self, spec, connection_factory=None):
        super().__init__()
        spec.validate()
        self.spec = spec
        attx = spec.attx
        ecg_rx = [False] * 3
        eda_rx = [False] * 3
        self.connections = {}
        if attx is not None:
            e, d = attx.receivers()
            for j in attx.stages:
                ecg_rx[j - 1], eda_rx[j - 1] = e, d
                m = spec.ecg.widths[j - 1]
                if connection_factory is not None:
                    conn = connection_factory(attx.conn_type, m)
                else:
                    conn = AttXConnection(attx.conn_type, m, attx.reduce,
                                          fixed_theta=None if attx.attention else 1.0)
                self.connections[j] = self.child(f"attx{j}", conn)
        self.ecg = self.eda = None
        if spec.modalities in ("both", "ecg"):
            self.ecg = self.child("ecg", build_ecg_stream(spec.ecg, ecg_rx, spec.embedding_dim))
        if spec.modalities in ("both", "eda"):
            self.eda = self.child("eda", build_eda_stream(spec.eda, eda_rx, spec.embedding_dim))
        n_in = spec.embedding_dim
        if spec.modalities == "both" and spec.merge == "concat":
            n_in = 2 * spec.embedding_dim
        self.head = self.child("head", Head(n_in, spec.head_dim, spec.n_classes))

    def forward(self, ecg, eda, training=False, return_stages=False):
        """ecg, eda: [batch, time] arrays. Returns logits [batch, n_classes]."""
        x_ecg = None if self.ecg is None else T.Tensor(np.asarray(ecg, dtype=np.float64)[:, :, None])
        x_eda = None if self.eda is None else T.Tensor(np.asarray(eda, dtype=np.float64)[:, :, None])
        stages = {}
        for j in (1, 2, 3):
            z_ecg = None if x_ecg is None else self.ecg.stage(j, x_ecg, training)
            z_eda = None if x_eda is None else self.eda.stage(j, x_eda, training)
            stages[j] = (z_ecg, z_eda)
            if j in self.connections:
                x_ecg, x_eda = self.connections[j](z_ecg, z_eda, training)
            else:
                x_ecg, x_eda = z_ecg, z_eda
        ys = []
        if self.ecg is not None:
            ys.append(self.ecg.embed(x_ecg, training))
        if self.eda is not None:
            ys.append(self.eda.embed(x_eda, training))
        if len(ys) == 1:
            y = ys[0]
        elif self.spec.merge == "concat":
            y = T.concat(ys, axis=-1)
        else:
            y = T.add(ys[0], ys[1])
        logits = self.head(y)
        if return_stages:
            return logits, stages
        return logits

    __call__ = forward

    def predict_proba(self, ecg, eda):
        with T.no_grad():
            return T.softmax(self.forward(ecg, eda, training=False), axis=-1).data


def assemble_model(spec, seed=0, connection_factory=None):
    return AttXNet(spec, connection_factory).initialize(seed)
