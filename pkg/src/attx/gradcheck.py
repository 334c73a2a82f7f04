"""Central finite-difference checks of every differentiable op and of the
end-to-end model loss with respect to each parameter tensor."""
import numpy as np

from . import tensor as T
from .fusion import AttXSpec, attention_weights, stack_modalities
from .model import ModelSpec, StreamConfig, assemble_model
from .rng import substream

STEP = 1e-6
SCALE_FLOOR = 1e-6


def rel_error(analytic, numeric, floor=SCALE_FLOOR):
    """max |a - n| over the tensor, relative to the larger of the two gradient scales."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_grad(f, x, step=STEP, indices=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * step)
    return out


def check_function(fn, inputs, seed=0):
    """Compare reverse-mode and numeric gradients of sum(R * fn(*inputs)).

    ``inputs`` are arrays; each becomes a leaf. A fixed random projection R
    keeps symmetric cancellations from hiding errors. Returns the worst
    relative error across inputs.
    """
    rng = substream(seed, "gradcheck", "projection")
    leaves = [T.Tensor(np.array(a, dtype=float), requires_grad=True) for a in inputs]
    out = fn(*leaves)
    R = rng.normal(size=out.shape)
    T.backward(T.sum(T.mul(out, R)))
    worst = 0.0
    for leaf in leaves:
        def f():
            with T.no_grad():
                return float(np.sum(fn(*leaves).data * R))
        num = numeric_grad(f, leaf.data)
        ana = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        worst = max(worst, rel_error(ana, num))
    return worst


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _op_cases(seed=0):
    rng = substream(seed, "gradcheck", "inputs")
    bn_state = lambda c: T.BatchNormState.fresh(c)  # noqa: E731
    return {
        "conv1d": (lambda x, k, b: T.conv1d(x, k, b, stride=2, padding="same"),
                   [rng.normal(size=(2, 16, 3)), rng.normal(size=(5, 3, 4)), rng.normal(size=4)]),
        "conv1d_valid": (lambda x, k, b: T.conv1d(x, k, b, stride=1, padding="valid"),
                         [rng.normal(size=(2, 9, 2)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)]),
        "batchnorm1d": (lambda x, g, b: T.batchnorm1d(x, g, b, bn_state(2), training=True),
                        [rng.normal(size=(4, 8, 2)), rng.normal(size=2), rng.normal(size=2)]),
        "relu": (T.relu, [_away_from_zero(rng, (3, 4))]),
        "sigmoid": (T.sigmoid, [rng.normal(size=(3, 4))]),
        "softmax": (lambda x: T.softmax(x, axis=1), [rng.normal(size=(3, 4, 2))]),
        "dense": (T.dense, [rng.normal(size=(3, 5)), rng.normal(size=(5, 7)), rng.normal(size=7)]),
        "global_avg_pool": (T.global_avg_pool, [rng.normal(size=(2, 10, 4))]),
        "concat": (lambda a, b: T.concat([a, b], axis=-1), [rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 4))]),
        "add": (T.add, [rng.normal(size=(2, 3, 4)), rng.normal(size=(1, 3, 4))]),
        "mul": (T.mul, [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 1, 4))]),
        "cross_entropy": (lambda z: T.cross_entropy(z, np.array([0, 1, 1])), [rng.normal(size=(3, 2))]),
        "attention": (lambda S, W, wu: attention_weights(S, W, wu),
                      [rng.normal(size=(2, 3, 2)) + 0.5, rng.normal(size=(2, 2)) + 0.5, rng.normal(size=3)]),
    }


OPS = tuple(_op_cases().keys())


def check_op(name, seed=0):
    fn, inputs = _op_cases(seed)[name]
    return check_function(fn, inputs, seed)


def tiny_model_spec(conn_type="III", stages=(1, 2, 3)):
    sc = StreamConfig(widths=(4, 4, 4), kernel_size=3, strides=(2, 2, 2), se_reduction=2,
                      stage4_width=4, stage4_stride=1)
    return ModelSpec(ecg=sc, eda=StreamConfig(**sc.__dict__), attx=AttXSpec(conn_type, stages))


def check_model(spec=None, seed=0, batch=4, time_len=32, per_param=3):
    """Worst relative error per parameter tensor of the training-mode loss.

    Up to ``per_param`` randomly chosen entries of each parameter are
    perturbed. Returns {parameter name: rel. error}.
    """
    spec = spec or tiny_model_spec()
    model = assemble_model(spec, seed)
    rng = substream(seed, "gradcheck", "model")
    # randomise the zero-initialised biases/gains so every path carries signal
    for name, p in model.named_parameters():
        if name.endswith((".b", ".bias", ".beta")):
            p.data[...] = rng.normal(scale=0.1, size=p.shape)
        elif name.endswith(".gamma"):
            p.data[...] = 1.0 + rng.normal(scale=0.1, size=p.shape)
    ecg = rng.normal(size=(batch, time_len))
    eda = rng.normal(size=(batch, time_len))
    y = np.arange(batch) % 2

    def loss_value():
        with T.no_grad():
            return T.cross_entropy(model(ecg, eda, training=True), y).item()

    model.zero_grad()
    T.backward(T.cross_entropy(model(ecg, eda, training=True), y))
    errors = {}
    for name, p in model.named_parameters():
        k = min(per_param, p.size)
        idx = sorted(rng.choice(p.size, size=k, replace=False).tolist())
        num = numeric_grad(loss_value, p.data, indices=idx)
        ana = p.grad.reshape(-1)[idx]
        # scale against the whole tensor's gradient so near-zero entries are judged fairly
        errors[name] = float(np.abs(ana - num).max() / max(np.abs(p.grad).max(), np.abs(num).max(), SCALE_FLOOR))
    return errors


def run_all(ops=None, include_model=True, seed=0):
    """{check name: max relative error}"""
    out = {}
    for name in OPS if ops is None else ops:
        out[name] = check_op(name, seed)
    if include_model:
        for t in ("I", "II", "III"):
            errs = check_model(tiny_model_spec(t), seed)
            out[f"model[type {t}]"] = max(errs.values())
            attx = {k: v for k, v in errs.items() if k.startswith("attx")}
            out[f"model[type {t}] attx params"] = max(attx.values())
    return out
