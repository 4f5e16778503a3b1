"""Minimal deterministic neural-network engine on float64 numpy.

Layers expose a functional interface: ``forward(x) -> (y, cache)`` and
``backward(dy, cache) -> (dx, grads)`` where ``grads`` aligns with the
layer's ``params`` list. No layer mutates shared state during a pass,
so a parameter snapshot can serve inference from many threads.

Conv2d follows NCHW layout with "valid" output sizing
(floor((dim - k)/stride) + 1); a spatial dim smaller than the kernel is
zero-padded (bottom/right) up to kernel size so the stack stays
applicable to 2x2 inputs.
"""

import numpy as np

__all__ = [
    "LeakyReLU",
    "Dense",
    "Conv2d",
    "Flatten",
    "Stack",
    "dense_stack",
    "conv_stack",
    "uniform_init",
]


def uniform_init(rng, shape, fan_in):
    """Uniform fan-in scaled init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LeakyReLU:
    def __init__(self, slope=0.01):
        self.slope = slope
        self.params = []

    def forward(self, x):
        pos = x > 0.0
        return np.where(pos, x, self.slope * x), pos

    def backward(self, dy, cache):
        pos = cache
        return np.where(pos, dy, self.slope * dy), []


class Dense:
    """Affine map y = x @ W + b for x of shape (B, in_dim)."""

    def __init__(self, w, b):
        self.w = w
        self.b = b

    @classmethod
    def create(cls, rng, in_dim, out_dim):
        return cls(uniform_init(rng, (in_dim, out_dim), in_dim), np.zeros(out_dim))

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        return x @ self.w + self.b, x

    def backward(self, dy, cache):
        x = cache
        dw = x.T @ dy
        db = dy.sum(axis=0)
        return dy @ self.w.T, [dw, db]


class Conv2d:
    """2D convolution, kernels (out_ch, in_ch, kh, kw), x (B, C, H, W)."""

    def __init__(self, k, b, stride=(2, 2)):
        self.k = k
        self.b = b
        self.stride = stride

    @classmethod
    def create(cls, rng, in_ch, out_ch, kernel=(2, 2), stride=(2, 2)):
        fan_in = in_ch * kernel[0] * kernel[1]
        k = uniform_init(rng, (out_ch, in_ch) + tuple(kernel), fan_in)
        return cls(k, np.zeros(out_ch), stride=tuple(stride))

    @property
    def params(self):
        return [self.k, self.b]

    def _pad(self, x):
        kh, kw = self.k.shape[2], self.k.shape[3]
        ph = max(0, kh - x.shape[2])
        pw = max(0, kw - x.shape[3])
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
        return x

    @staticmethod
    def output_shape(in_shape, out_ch, kernel, stride):
        c, h, w = in_shape
        h = max(h, kernel[0])
        w = max(w, kernel[1])
        return (out_ch, (h - kernel[0]) // stride[0] + 1, (w - kernel[1]) // stride[1] + 1)

    def forward(self, x):
        xp = self._pad(x)
        kh, kw = self.k.shape[2], self.k.shape[3]
        sh, sw = self.stride
        ho = (xp.shape[2] - kh) // sh + 1
        wo = (xp.shape[3] - kw) // sw + 1
        out = np.empty((x.shape[0], self.k.shape[0], ho, wo))
        for i in range(ho):
            for j in range(wo):
                window = xp[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                out[:, :, i, j] = np.einsum("bcpq,ocpq->bo", window, self.k)
        out += self.b[None, :, None, None]
        return out, (xp, x.shape)

    def backward(self, dy, cache):
        xp, x_shape = cache
        kh, kw = self.k.shape[2], self.k.shape[3]
        sh, sw = self.stride
        dk = np.zeros_like(self.k)
        dxp = np.zeros_like(xp)
        for i in range(dy.shape[2]):
            for j in range(dy.shape[3]):
                window = xp[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                g = dy[:, :, i, j]
                dk += np.einsum("bo,bcpq->ocpq", g, window)
                dxp[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw] += np.einsum(
                    "bo,ocpq->bcpq", g, self.k
                )
        db = dy.sum(axis=(0, 2, 3))
        dx = dxp[:, :, : x_shape[2], : x_shape[3]]
        return dx, [dk, db]


class Flatten:
    def __init__(self):
        self.params = []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), []


class Stack:
    """Ordered sequence of layers with a shared flat parameter list."""

    def __init__(self, layers):
        self.layers = layers

    @property
    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def set_params(self, arrays):
        i = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                layer.w, layer.b = arrays[i], arrays[i + 1]
                i += 2
            elif isinstance(layer, Conv2d):
                layer.k, layer.b = arrays[i], arrays[i + 1]
                i += 2
        if i != len(arrays):
            raise ValueError("parameter count mismatch")

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches):
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(dy, cache)
            grads[:0] = g
        return dy, grads


def dense_stack(rng, in_dim, widths, out_dim, slope=0.01) -> Stack:
    """Hidden Dense+LeakyReLU layers followed by an affine head."""
    layers = []
    d = in_dim
    for w in widths:
        layers.append(Dense.create(rng, d, w))
        layers.append(LeakyReLU(slope))
        d = w
    layers.append(Dense.create(rng, d, out_dim))
    return Stack(layers)


def conv_stack(rng, in_shape, channels, out_dim, kernel=(2, 2), stride=(2, 2), slope=0.01) -> Stack:
    """Conv+LeakyReLU layers, then flatten and one affine map to out_dim."""
    layers = []
    shape = tuple(in_shape)
    for out_ch in channels:
        layers.append(Conv2d.create(rng, shape[0], out_ch, kernel, stride))
        layers.append(LeakyReLU(slope))
        shape = Conv2d.output_shape(shape, out_ch, kernel, stride)
    layers.append(Flatten())
    flat = int(np.prod(shape))
    layers.append(Dense.create(rng, flat, out_dim))
    return Stack(layers)
