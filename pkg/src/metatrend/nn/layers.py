"""Differentiable ops over (batch, channels, time) arrays.

Each op implements a vectorized forward and an exact reverse-mode backward.
Reductions (normalization statistics, pooling means, loss sums) accumulate in
float64 and are cast back to the storage dtype, so float32 models stay
deterministic and float64 models are accurate enough for finite-difference
gradient checks.
"""

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Op:
    """One graph node. Ops owning parameters expose them via param keys."""

    def param_specs(self) -> list[tuple[str, tuple, str]]:
        """(key, shape, init) triples; init in {uniform, zeros, ones}."""
        return []

    def init(self, values: dict, rng: np.random.Generator, dtype) -> None:
        for key, shape, kind in self.param_specs():
            if kind == "uniform":
                values[key] = _uniform_fan_in(rng, shape, self.fan_in, dtype)
            elif kind == "zeros":
                values[key] = np.zeros(shape, dtype=dtype)
            else:
                values[key] = np.ones(shape, dtype=dtype)

    def forward(self, values, inputs, ctx, train: bool, update_stats: bool):
        raise NotImplementedError

    def backward(self, values, grads, ctx, dout):
        raise NotImplementedError


class Conv1D(Op):
    """1-D convolution over the time axis.

    padding "same" keeps length T centered; "causal" pads only on the left by
    (kernel-1)*dilation so output t never sees inputs after t.
    """

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int,
                 dilation: int = 1, padding: str = "same"):
        if c_in < 1 or c_out < 1 or kernel < 1 or dilation < 1:
            raise ValueError(f"{name}: bad conv geometry")
        if padding not in ("same", "causal"):
            raise ValueError(f"{name}: padding must be same|causal")
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.dilation = dilation
        self.padding = padding
        self.fan_in = c_in * kernel
        span = (kernel - 1) * dilation
        if padding == "causal":
            self.pad_left, self.pad_right = span, 0
        else:
            self.pad_left = span // 2
            self.pad_right = span - self.pad_left

    def param_specs(self):
        return [
            (f"{self.name}/w", (self.c_out, self.c_in, self.kernel), "uniform"),
            (f"{self.name}/b", (self.c_out,), "zeros"),
        ]

    def _im2col(self, xp: np.ndarray, t_out: int) -> np.ndarray:
        parts = [
            xp[:, :, k * self.dilation : k * self.dilation + t_out]
            for k in range(self.kernel)
        ]
        cols = np.stack(parts, axis=2)              # (B, C_in, K, T)
        return cols.reshape(xp.shape[0], self.c_in * self.kernel, t_out)

    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        b, _, t = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad_left, self.pad_right)))
        cols = self._im2col(xp, t)
        w = values[f"{self.name}/w"].reshape(self.c_out, -1)
        y = np.matmul(w, cols) + values[f"{self.name}/b"][:, None]
        if ctx is not None:
            ctx["cols"] = cols
            ctx["t"] = t
        return y

    def backward(self, values, grads, ctx, dout):
        cols = ctx["cols"]
        t = ctx["t"]
        w = values[f"{self.name}/w"]
        dtype = w.dtype
        grads[f"{self.name}/b"] = dout.sum(axis=(0, 2), dtype=np.float64).astype(dtype)
        dw = np.matmul(dout, cols.transpose(0, 2, 1)).sum(axis=0, dtype=np.float64)
        grads[f"{self.name}/w"] = dw.reshape(w.shape).astype(dtype)
        dcols = np.matmul(w.reshape(self.c_out, -1).T, dout)
        dcols = dcols.reshape(dout.shape[0], self.c_in, self.kernel, t)
        dxp = np.zeros(
            (dout.shape[0], self.c_in, t + self.pad_left + self.pad_right), dtype=dtype
        )
        for k in range(self.kernel):
            dxp[:, :, k * self.dilation : k * self.dilation + t] += dcols[:, :, k, :]
        dx = dxp[:, :, self.pad_left : self.pad_left + t]
        return (dx,)


class BatchNorm(Op):
    """Per-channel normalization over (batch, time).

    Training uses batch statistics (population variance) and refreshes the
    exponential running statistics; eval applies the stored running values.
    """

    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels

    def param_specs(self):
        return [
            (f"{self.name}/gamma", (self.channels,), "ones"),
            (f"{self.name}/beta", (self.channels,), "zeros"),
            (f"{self.name}/running_mean", (self.channels,), "zeros"),
            (f"{self.name}/running_var", (self.channels,), "ones"),
        ]

    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        dtype = x.dtype
        gamma = values[f"{self.name}/gamma"][:, None]
        beta = values[f"{self.name}/beta"][:, None]
        if train:
            mean = x.mean(axis=(0, 2), dtype=np.float64).astype(dtype)
            var = np.square(x - mean[:, None]).mean(axis=(0, 2), dtype=np.float64).astype(dtype)
            if update_stats:
                rm = values[f"{self.name}/running_mean"]
                rv = values[f"{self.name}/running_var"]
                values[f"{self.name}/running_mean"] = (
                    BN_MOMENTUM * rm + (1.0 - BN_MOMENTUM) * mean
                ).astype(dtype)
                values[f"{self.name}/running_var"] = (
                    BN_MOMENTUM * rv + (1.0 - BN_MOMENTUM) * var
                ).astype(dtype)
        else:
            mean = values[f"{self.name}/running_mean"]
            var = values[f"{self.name}/running_var"]
        inv_std = 1.0 / np.sqrt(var.astype(np.float64) + BN_EPS)
        inv_std = inv_std.astype(dtype)
        xhat = (x - mean[:, None]) * inv_std[:, None]
        y = gamma * xhat + beta
        if ctx is not None:
            ctx["xhat"] = xhat
            ctx["inv_std"] = inv_std
            ctx["train"] = train
        return y

    def backward(self, values, grads, ctx, dout):
        xhat = ctx["xhat"]
        inv_std = ctx["inv_std"]
        gamma = values[f"{self.name}/gamma"]
        dtype = gamma.dtype
        grads[f"{self.name}/gamma"] = (
            (dout * xhat).sum(axis=(0, 2), dtype=np.float64).astype(dtype)
        )
        grads[f"{self.name}/beta"] = dout.sum(axis=(0, 2), dtype=np.float64).astype(dtype)
        dxhat = dout * gamma[:, None]
        if ctx["train"]:
            m1 = dxhat.mean(axis=(0, 2), dtype=np.float64).astype(dtype)
            m2 = (dxhat * xhat).mean(axis=(0, 2), dtype=np.float64).astype(dtype)
            dx = inv_std[:, None] * (dxhat - m1[:, None] - xhat * m2[:, None])
        else:
            dx = dxhat * inv_std[:, None]
        return (dx,)


class ReLU(Op):
    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        y = np.maximum(x, 0)
        if ctx is not None:
            ctx["mask"] = x > 0
        return y

    def backward(self, values, grads, ctx, dout):
        return (dout * ctx["mask"],)


class Add(Op):
    def forward(self, values, inputs, ctx, train, update_stats):
        a, b = inputs
        return a + b

    def backward(self, values, grads, ctx, dout):
        return (dout, dout)


class GlobalAvgPool(Op):
    """(B, C, T) -> (B, C) by averaging over time."""

    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        if ctx is not None:
            ctx["t"] = x.shape[2]
        return x.mean(axis=2, dtype=np.float64).astype(x.dtype)

    def backward(self, values, grads, ctx, dout):
        t = ctx["t"]
        return (np.repeat(dout[:, :, None] / t, t, axis=2).astype(dout.dtype),)


class LastStep(Op):
    """(B, C, T) -> (B, C): the features at the final time step."""

    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        if ctx is not None:
            ctx["shape"] = x.shape
        return x[:, :, -1].copy()

    def backward(self, values, grads, ctx, dout):
        dx = np.zeros(ctx["shape"], dtype=dout.dtype)
        dx[:, :, -1] = dout
        return (dx,)


class Dense(Op):
    def __init__(self, name: str, d_in: int, d_out: int):
        self.name = name
        self.d_in = d_in
        self.d_out = d_out
        self.fan_in = d_in

    def param_specs(self):
        return [
            (f"{self.name}/w", (self.d_out, self.d_in), "uniform"),
            (f"{self.name}/b", (self.d_out,), "zeros"),
        ]

    def forward(self, values, inputs, ctx, train, update_stats):
        (x,) = inputs
        if ctx is not None:
            ctx["x"] = x
        return x @ values[f"{self.name}/w"].T + values[f"{self.name}/b"]

    def backward(self, values, grads, ctx, dout):
        x = ctx["x"]
        dtype = x.dtype
        grads[f"{self.name}/w"] = np.matmul(dout.T, x).astype(dtype)
        grads[f"{self.name}/b"] = dout.sum(axis=0, dtype=np.float64).astype(dtype)
        return ((dout @ values[f"{self.name}/w"]).astype(dtype),)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax computed in float64 (rows sum to 1 within 1e-12)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    p = softmax(logits)
    b = logits.shape[0]
    eps = np.finfo(np.float64).tiny
    loss = float(-np.log(p[np.arange(b), targets] + eps).mean())
    dlogits = p.copy()
    dlogits[np.arange(b), targets] -= 1.0
    dlogits /= b
    return loss, dlogits.astype(logits.dtype)
