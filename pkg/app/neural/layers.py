"""Layers - NHWC numpy layers with explicit forward and backward passes.

Every layer follows the same contract:

* ``forward(x, training)`` computes the output. Only a training-mode forward
  caches what ``backward`` needs; an inference-mode forward reads parameters
  and running statistics but writes nothing, so a model can be shared across
  threads for prediction.
* ``backward(grad)`` takes dLoss/dOutput, stores parameter gradients and
  returns dLoss/dInput.
* ``parameters()`` / ``gradients()`` map the same names to same-shaped arrays;
  ``buffers()`` holds non-trainable state (batch-norm running statistics).
"""

from typing import Any, Optional

import numpy as np

from app.utils.error_handler import InputTooSmallError, InvalidBatchError, InvalidParameterError, ShapeError

Shape = tuple[int, ...]


class Layer:
    """Base layer: parameter-free, identity shape."""

    def __init__(self, name: str):
        self.name = name
        self._grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        return self._grads

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def param_count(self) -> int:
        """Trainable parameters plus buffers."""
        return self.trainable_count() + sum(b.size for b in self.buffers().values())

    def trainable_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def output_shape(self, shape: Shape) -> Shape:
        """Per-sample output shape for a per-sample input shape."""
        return shape

    def _require_cache(self, cache: Any) -> Any:
        if cache is None:
            raise RuntimeError(f"{self.name}: backward called without a training-mode forward")
        return cache

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


class Conv2D(Layer):
    """
    Stride-1 2D cross-correlation with k x k x U x Z kernels.

    'same' zero-pads so the spatial size is kept; 'valid' shrinks it by k - 1.
    The kernel is applied as k*k shifted matrix products, which keeps memory
    at one input-sized slab instead of a full im2col matrix.
    """

    def __init__(
        self,
        name: str,
        in_channels: int,
        filters: int,
        kernel_size: int = 3,
        padding: str = "same",
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
        init_scale: float = 1.0,
    ):
        super().__init__(name)
        if padding not in ("same", "valid"):
            raise InvalidParameterError(f"padding must be 'same' or 'valid', got {padding!r}")
        if kernel_size < 1 or in_channels < 1 or filters < 1:
            raise InvalidParameterError("kernel_size, in_channels and filters must be positive")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = kernel_size * kernel_size * in_channels
        std = np.sqrt(2.0 / fan_in) * init_scale
        self.weight = (rng.standard_normal((kernel_size, kernel_size, in_channels, filters)) * std).astype(dtype)
        self.bias = np.zeros(filters, dtype=dtype)
        self._cache: Optional[np.ndarray] = None

    def _pads(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        total = self.kernel_size - 1
        return total // 2, total - total // 2

    def output_shape(self, shape: Shape) -> Shape:
        h, w, _ = shape
        if self.padding == "same":
            return h, w, self.filters
        return h - self.kernel_size + 1, w - self.kernel_size + 1, self.filters

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected (N, H, W, {self.in_channels}), got {x.shape}")
        k = self.kernel_size
        if self.padding == "valid" and (x.shape[1] < k or x.shape[2] < k):
            raise ShapeError(f"{self.name}: {k}x{k} kernel larger than input {x.shape[1:3]}")

        before, after = self._pads()
        padded = np.pad(x, ((0, 0), (before, after), (before, after), (0, 0)))
        n, hp, wp, _ = padded.shape
        ho, wo = hp - k + 1, wp - k + 1

        out = np.zeros((n, ho, wo, self.filters), dtype=np.result_type(x, self.weight))
        for i in range(k):
            for j in range(k):
                out += padded[:, i : i + ho, j : j + wo, :] @ self.weight[i, j]
        out += self.bias

        if training:
            self._cache = padded
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        padded = self._require_cache(self._cache)
        k = self.kernel_size
        n, ho, wo, _ = grad.shape
        flat_grad = grad.reshape(-1, self.filters)

        d_weight = np.zeros_like(self.weight)
        d_padded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                patch = padded[:, i : i + ho, j : j + wo, :]
                d_weight[i, j] = patch.reshape(-1, self.in_channels).T @ flat_grad
                d_padded[:, i : i + ho, j : j + wo, :] += grad @ self.weight[i, j].T

        self._grads = {"weight": d_weight, "bias": flat_grad.sum(axis=0).astype(self.bias.dtype)}
        before, after = self._pads()
        h_end = d_padded.shape[1] - after
        w_end = d_padded.shape[2] - after
        return d_padded[:, before:h_end, before:w_end, :]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


class ReLU(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._require_cache(self._mask)


class BatchNorm(Layer):
    """
    Per-channel batch normalization over every axis but the last.

    Training standardizes with the biased batch variance and updates running
    statistics as running = momentum * running + (1 - momentum) * batch;
    inference uses the running statistics.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype: Any = np.float64):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache: Optional[tuple[np.ndarray, np.ndarray]] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))

        if not training:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            return (x - self.running_mean) * (inv_std * self.gamma) + self.beta

        if x.shape[0] < 2:
            raise InvalidBatchError(f"{self.name}: training-mode batch norm needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std

        self.running_mean[...] = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
        self.running_var[...] = self.momentum * self.running_var + (1.0 - self.momentum) * var
        self._cache = (x_hat, inv_std)
        return x_hat * self.gamma + self.beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._require_cache(self._cache)
        axes = tuple(range(grad.ndim - 1))
        m = grad.size // self.channels

        self._grads = {"gamma": (grad * x_hat).sum(axis=axes), "beta": grad.sum(axis=axes)}
        d_hat = grad * self.gamma
        return (inv_std / m) * (
            m * d_hat - d_hat.sum(axis=axes) - x_hat * (d_hat * x_hat).sum(axis=axes)
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class MaxPool2x2(Layer):
    """
    2x2 max-pooling with stride 2.

    Odd spatial sizes are padded right/bottom with -inf, so (H, W) maps to
    (ceil(H/2), ceil(W/2)). Backward routes each upstream gradient to the first
    argmax of its region in row-major order.
    """

    def __init__(self, name: str):
        super().__init__(name)
        self._cache: Optional[tuple[Shape, np.ndarray]] = None

    def output_shape(self, shape: Shape) -> Shape:
        h, w, c = shape
        return -(-h // 2), -(-w // 2), c

    @staticmethod
    def _regions(x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        pad_h, pad_w = h % 2, w % 2
        if pad_h or pad_w:
            x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), constant_values=-np.inf)
        h2, w2 = x.shape[1] // 2, x.shape[2] // 2
        return x.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        regions = self._regions(x)
        if not training:
            return regions.max(axis=-1)
        argmax = regions.argmax(axis=-1)
        self._cache = (x.shape, argmax)
        return np.take_along_axis(regions, argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        shape, argmax = self._require_cache(self._cache)
        n, h, w, c = shape
        h2, w2 = argmax.shape[1:3]
        routed = np.zeros(argmax.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(routed, argmax[..., None], grad[..., None], axis=-1)
        full = routed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        return full[:, :h, :w, :]


class SpatialPyramidPooling(Layer):
    """
    Max-pool each feature map over L x L bin grids for every pyramid level.

    Bin (i, j) of level L covers rows [floor(i*H/L), ceil((i+1)*H/L)) and the
    same for columns, so all cells are covered for any H, W >= L. Output is
    ordered level-major, then bin-row-major, then channel, and its length
    C * sum(L^2) does not depend on H or W.
    """

    def __init__(self, name: str, channels: int, levels: tuple[int, ...] = (1, 2, 4)):
        super().__init__(name)
        if not levels or min(levels) < 1:
            raise InvalidParameterError(f"SPP levels must be positive, got {levels}")
        self.channels = channels
        self.levels = tuple(levels)
        self._cache: Optional[tuple[Shape, list[tuple[slice, slice, np.ndarray]]]] = None

    @property
    def min_size(self) -> int:
        return max(self.levels)

    def output_shape(self, shape: Shape) -> Shape:
        return (self.channels * sum(level * level for level in self.levels),)

    def _bins(self, h: int, w: int) -> list[tuple[slice, slice]]:
        bins = []
        for level in self.levels:
            rows = [(i * h // level, -(-(i + 1) * h // level)) for i in range(level)]
            cols = [(j * w // level, -(-(j + 1) * w // level)) for j in range(level)]
            for r0, r1 in rows:
                for c0, c1 in cols:
                    bins.append((slice(r0, r1), slice(c0, c1)))
        return bins

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        n, h, w, c = x.shape
        if c != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {c}")
        if h < self.min_size or w < self.min_size:
            raise InputTooSmallError(f"{self.name}: feature map {h}x{w} smaller than the {self.min_size}x{self.min_size} pyramid level")

        pooled = []
        cache = []
        for rows, cols in self._bins(h, w):
            region = x[:, rows, cols, :].reshape(n, -1, c)
            if training:
                argmax = region.argmax(axis=1)
                cache.append((rows, cols, argmax))
                pooled.append(np.take_along_axis(region, argmax[:, None, :], axis=1)[:, 0, :])
            else:
                pooled.append(region.max(axis=1))

        if training:
            self._cache = (x.shape, cache)
        return np.concatenate(pooled, axis=1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        shape, cache = self._require_cache(self._cache)
        n, _, _, c = shape
        d_x = np.zeros(shape, dtype=grad.dtype)
        for index, (rows, cols, argmax) in enumerate(cache):
            region = d_x[:, rows, cols, :]
            routed = np.zeros((n, region.shape[1] * region.shape[2], c), dtype=grad.dtype)
            np.put_along_axis(routed, argmax[:, None, :], grad[:, None, index * c : (index + 1) * c], axis=1)
            d_x[:, rows, cols, :] += routed.reshape(region.shape)
        return d_x


class Flatten(Layer):
    def __init__(self, name: str):
        super().__init__(name)
        self._shape: Optional[Shape] = None

    def output_shape(self, shape: Shape) -> Shape:
        return (int(np.prod(shape)),)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self._require_cache(self._shape))


class Dense(Layer):
    """Fully-connected layer: y = x @ W.T + b with W shaped (out, in)."""

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
        init_scale: float = 1.0,
    ):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / in_features) * init_scale
        self.weight = (rng.standard_normal((out_features, in_features)) * std).astype(dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self._cache: Optional[np.ndarray] = None

    def output_shape(self, shape: Shape) -> Shape:
        return (self.out_features,)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (N, {self.in_features}), got {x.shape}")
        if training:
            self._cache = x
        return x @ self.weight.T + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._require_cache(self._cache)
        self._grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


class Dropout(Layer):
    """Inverted dropout: training zeroes units with probability `rate` and rescales survivors."""

    def __init__(self, name: str, rate: float = 0.25, rng: Optional[np.random.Generator] = None):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise InvalidParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            if training:
                self._mask = np.ones_like(x)
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._require_cache(self._mask)
