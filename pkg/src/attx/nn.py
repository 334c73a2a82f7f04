"""Parameter containers and the basic layers used by both streams.

Initialisation is keyed by each parameter's dotted name, so two models that
share a parameter name get identical starting values for it regardless of
what else they contain or the order they were built in.
"""
import numpy as np

from . import tensor as T
from .rng import substream


class Module:
    def __init__(self):
        self._params = {}
        self._init = {}
        self._children = {}

    def param(self, name, shape, init="he", fan_in=None):
        t = T.Tensor(np.zeros(shape), requires_grad=True, name=name)
        self._params[name] = t
        self._init[name] = (init, fan_in)
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, c in self._children.items():
            yield from c.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for cname, c in self._children.items():
            yield from c.named_buffers(f"{prefix}{cname}.")

    def _init_specs(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t, self._init[name]
        for cname, c in self._children.items():
            yield from c._init_specs(f"{prefix}{cname}.")

    def initialize(self, seed):
        """He-uniform weights, zero biases, unit gains; each keyed by name."""
        for name, t, (kind, fan_in) in self._init_specs():
            t.name = name
            t.grad = None
            if kind == "zeros":
                t.data[...] = 0.0
            elif kind == "ones":
                t.data[...] = 1.0
            elif kind == "he":
                if fan_in is None:
                    fan_in = int(np.prod(t.shape[:-1])) if t.ndim > 1 else t.shape[0]
                bound = np.sqrt(6.0 / fan_in)
                rng = substream(seed, "init", name)
                t.data[...] = rng.uniform(-bound, bound, size=t.shape)
            else:
                raise ValueError(f"unknown init {kind!r} for {name}")
        for _, state in self.named_buffers():
            state.running_mean[...] = 0.0
            state.running_var[...] = 1.0
        return self

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def n_parameters(self):
        return sum(t.size for t in self.parameters())


class Dense(Module):
    def __init__(self, n_in, n_out):
        super().__init__()
        self.W = self.param("W", (n_in, n_out), "he")
        self.b = self.param("b", (n_out,), "zeros")

    def __call__(self, x):
        return T.dense(x, self.W, self.b)


class Conv1d(Module):
    def __init__(self, ch_in, ch_out, k, stride=1):
        super().__init__()
        self.stride = stride
        self.kernel = self.param("kernel", (k, ch_in, ch_out), "he")
        self.bias = self.param("bias", (ch_out,), "zeros")

    def __call__(self, x):
        return T.conv1d(x, self.kernel, self.bias, stride=self.stride, padding="same")


class BatchNorm1d(Module):
    def __init__(self, ch, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.param("gamma", (ch,), "ones")
        self.beta = self.param("beta", (ch,), "zeros")
        self.state = T.BatchNormState.fresh(ch)

    def named_buffers(self, prefix=""):
        yield prefix + "state", self.state

    def __call__(self, x, training):
        return T.batchnorm1d(x, self.gamma, self.beta, self.state, training,
                             self.momentum, self.eps)
