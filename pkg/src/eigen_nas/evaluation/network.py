"""A trainable network instantiated from a genome.

Every convolution is followed by batch normalization and ReLU. Gradients are
computed by walking the graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from ..genome import Classifier, Concat, Conv, Genome, GlobalPool, Pool, infer_shapes, topological_order
from . import layers as L

BN_MOMENTUM = 0.9


class Network:
    def __init__(self, genome: Genome, rng: np.random.Generator, dtype=np.float32):
        self.genome = genome
        self.dtype = np.dtype(dtype)
        self.order = topological_order(genome)
        self.shapes = infer_shapes(genome, self.order)
        self.preds = genome.preds
        self.kinds = genome.kinds
        self.root = genome.input_node
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._caches: dict[int, tuple] | None = None
        self._init_params(rng)

    def _in_depth(self, i: int) -> int:
        p = self.preds[i]
        return self.shapes[p[0]].depth if p else self.genome.input_shape.depth

    def _init_params(self, rng: np.random.Generator):
        # fan-in scaled normal initialization
        for i in self.order:
            kind = self.kinds[i]
            if isinstance(kind, Conv):
                c_in, k, f = self._in_depth(i), kind.kernel, kind.channels
                std = np.sqrt(2.0 / (k * k * c_in))
                self.params[f"{i}.w"] = (rng.standard_normal((k, k, c_in, f)) * std).astype(self.dtype)
                self.params[f"{i}.b"] = np.zeros(f, self.dtype)
                self.params[f"{i}.gamma"] = np.ones(f, self.dtype)
                self.params[f"{i}.beta"] = np.zeros(f, self.dtype)
                self.buffers[f"{i}.mean"] = np.zeros(f, self.dtype)
                self.buffers[f"{i}.var"] = np.ones(f, self.dtype)
            elif isinstance(kind, Classifier):
                c_in = self._in_depth(i)
                std = np.sqrt(1.0 / c_in)
                self.params[f"{i}.w"] = (rng.standard_normal((c_in, kind.num_classes)) * std).astype(self.dtype)
                self.params[f"{i}.b"] = np.zeros(kind.num_classes, self.dtype)

    @property
    def decayed(self) -> list[str]:
        """Parameter names subject to weight decay (conv and linear weights)."""
        return [k for k in self.params if k.endswith(".w")]

    def forward(self, x: np.ndarray, train: bool = True):
        """Logits for a batch ``x`` of shape (N, H, W, C). Caches for backward when training."""
        x = x.astype(self.dtype, copy=False)
        acts: dict[int, np.ndarray] = {}
        caches: dict[int, tuple] = {}
        P = self.params
        for i in self.order:
            kind = self.kinds[i]
            ps = self.preds[i]
            inp = acts[ps[0]] if ps else x
            if isinstance(kind, Conv):
                z, c_conv = L.conv_forward(inp, P[f"{i}.w"], P[f"{i}.b"], kind.stride)
                if train:
                    z, c_bn, mean, var = L.batchnorm_forward(z, P[f"{i}.gamma"], P[f"{i}.beta"])
                    rm, rv = self.buffers[f"{i}.mean"], self.buffers[f"{i}.var"]
                    rm *= BN_MOMENTUM
                    rm += (1 - BN_MOMENTUM) * mean
                    rv *= BN_MOMENTUM
                    rv += (1 - BN_MOMENTUM) * var
                else:
                    z = L.batchnorm_inference(z, P[f"{i}.gamma"], P[f"{i}.beta"],
                                              self.buffers[f"{i}.mean"], self.buffers[f"{i}.var"])
                    c_bn = None
                out, mask = L.relu_forward(z)
                caches[i] = (c_conv, c_bn, mask)
            elif isinstance(kind, Pool):
                out, caches[i] = L.maxpool_forward(inp)
            elif isinstance(kind, Concat):
                out, caches[i] = L.concat_forward(acts[ps[0]], acts[ps[1]])
            elif isinstance(kind, GlobalPool):
                out, caches[i] = L.global_pool_forward(inp)
            elif isinstance(kind, Classifier):
                out, caches[i] = L.linear_forward(inp, P[f"{i}.w"], P[f"{i}.b"])
            else:
                raise TypeError(f"unsupported layer {kind!r}")
            acts[i] = out
            # free activations nobody downstream still needs when not training
            if not train:
                for p in ps:
                    if all(s in acts for s in self.genome.succs[p]):
                        acts.pop(p, None)
        logits = acts[self.order[-1]]
        self._caches = caches if train else None
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        if self._caches is None:
            raise RuntimeError("backward() needs a preceding training-mode forward()")
        caches = self._caches
        P = self.params
        grads: dict[str, np.ndarray] = {}
        upstream: dict[int, np.ndarray] = {self.order[-1]: dlogits}

        def push(node, g):
            if node in upstream:
                upstream[node] = upstream[node] + g
            else:
                upstream[node] = g

        for i in reversed(self.order):
            g = upstream.pop(i, None)
            if g is None:
                continue
            kind = self.kinds[i]
            ps = self.preds[i]
            if isinstance(kind, Conv):
                c_conv, c_bn, mask = caches[i]
                g = L.relu_backward(g, mask)
                g, grads[f"{i}.gamma"], grads[f"{i}.beta"] = L.batchnorm_backward(g, c_bn)
                dx, grads[f"{i}.w"], grads[f"{i}.b"] = L.conv_backward(g, c_conv)
            elif isinstance(kind, Pool):
                dx = L.maxpool_backward(g, caches[i])
            elif isinstance(kind, Concat):
                da, db = L.concat_backward(g, caches[i])
                push(ps[0], da)
                push(ps[1], db)
                continue
            elif isinstance(kind, GlobalPool):
                dx = L.global_pool_backward(g, caches[i])
            elif isinstance(kind, Classifier):
                dx, grads[f"{i}.w"], grads[f"{i}.b"] = L.linear_backward(g, caches[i], P[f"{i}.w"])
            else:
                raise TypeError(f"unsupported layer {kind!r}")
            if ps:
                push(ps[0], dx)
        self._caches = None
        return grads

    def state(self) -> dict[str, np.ndarray]:
        return {**{f"p:{k}": v for k, v in self.params.items()}, **{f"b:{k}": v for k, v in self.buffers.items()}}
