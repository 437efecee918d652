"""Network building blocks assembled from the autodiff primitives.

All layers follow the column convention used throughout the package: a
sequence of ``T`` slices of depth ``D`` is a ``D x T`` array, and a single
slice is a length-``D`` vector.
"""

from __future__ import annotations

import re
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    activation as get_activation,
    as_tensor,
    concat,
    load_tensors,
    save_tensors,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "Module",
    "DenseLayer",
    "Conv1dLayer",
    "LSTMCell",
    "GRUCell",
    "SelfAttention",
    "MeanPooling",
    "AttentivePooling",
    "StatsPooling",
    "Residual",
    "OutputHead",
    "Sequential",
    "receptive_field",
    "effective_width",
    "recurrent_unroll",
    "parse_descriptor",
]


def _init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(max(fan_in, 1)), size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Minimal parameter container.

    Subclasses register trainable tensors in ``self._params`` (name -> Tensor)
    and sub-modules in ``self._children``.
    """

    kind = "module"

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + k, v) for k, v in self._params.items()]
        for name, child in self._children.items():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_tensors(path))

    def describe(self) -> str:
        return self.kind

    def __call__(self, x):
        return self.forward(x)


# ---------------------------------------------------------------------------
# dense


class DenseLayer(Module):
    """Fully connected layer ``y = act(W x + b)``.

    ``W`` is ``out x in``. ``x`` may be one slice (length ``in``) or a
    sequence (``in x T``), in which case every column is mapped.
    """

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity", rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.in_dim, self.out_dim, self.activation = int(in_dim), int(out_dim), activation
        self._act = get_activation(activation)
        self._params = {"W": _init(rng, (out_dim, in_dim), in_dim), "b": _zeros((out_dim,))}

    @property
    def W(self) -> Tensor:
        return self._params["W"]

    @property
    def b(self) -> Tensor:
        return self._params["b"]

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"dense layer expects leading dimension {self.in_dim}, got shape {x.shape}")
        z = self.W @ x
        z = z + (self.b if x.ndim == 1 else self.b.reshape(-1, 1))
        return self._act(z)

    def describe(self) -> str:
        return f"dense in={self.in_dim} out={self.out_dim} activation={self.activation}"


# ---------------------------------------------------------------------------
# 1-D convolution


def effective_width(width: int, dilation: int = 1) -> int:
    """Span in samples of a dilated kernel: ``(width - 1) * dilation + 1``."""
    return (int(width) - 1) * int(dilation) + 1


def receptive_field(lengths: Iterable[int]) -> int:
    """Length of the impulse response of a cascade of FIR filters.

    ``sum(L_i) - N + 1`` for ``N`` stages of lengths ``L_i``.
    """
    lengths = [int(v) for v in lengths]
    if not lengths:
        raise ValueError("empty cascade")
    if any(v < 1 for v in lengths):
        raise ValueError(f"filter lengths must be >= 1, got {lengths}")
    return sum(lengths) - len(lengths) + 1


_POOLING = ("none", "decimate", "average", "max")


class Conv1dLayer(Module):
    """Valid-mode dilated 1-D convolution followed by activation and pooling.

    Parameters
    ----------
    in_channels, out_channels : int
    width : int
        Number of kernel taps.
    stride, dilation : int
    pooling : {"none", "decimate", "average", "max"}
        Down-sampling by ``pool_size`` after the activation. Decimation keeps
        the first element of each group; trailing samples that do not fill a
        group are dropped.
    """

    kind = "conv1d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        width: int,
        stride: int = 1,
        dilation: int = 1,
        pooling: str = "none",
        pool_size: int = 1,
        activation: str = "identity",
        rng=None,
    ):
        super().__init__()
        if width < 1 or stride < 1 or dilation < 1 or pool_size < 1:
            raise ValueError("width, stride, dilation and pool_size must be positive")
        if pooling not in _POOLING:
            raise ValueError(f"pooling must be one of {_POOLING}")
        rng = np.random.default_rng(rng)
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.width, self.stride, self.dilation = int(width), int(stride), int(dilation)
        self.pooling, self.pool_size, self.activation = pooling, int(pool_size), activation
        self._act = get_activation(activation)
        fan_in = in_channels * width
        self._params = {
            "kernels": _init(rng, (out_channels, in_channels, width), fan_in),
            "b": _zeros((out_channels,)),
        }

    @property
    def kernels(self) -> Tensor:
        return self._params["kernels"]

    @property
    def span(self) -> int:
        return effective_width(self.width, self.dilation)

    def output_length(self, T: int) -> int:
        n = (T - self.span) // self.stride + 1
        return n // self.pool_size if self.pooling != "none" else n

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[0] != self.in_channels:
            raise ShapeError(f"conv1d expects ({self.in_channels}, T) input, got {x.shape}")
        T = x.shape[1]
        if T < self.span:
            raise ShapeError(f"input length {T} shorter than kernel span {self.span}")
        n = (T - self.span) // self.stride + 1
        idx = np.arange(n)[:, None] * self.stride + np.arange(self.width)[None, :] * self.dilation
        cols = x[:, idx]  # C_in x n x L
        cols = cols.transpose(1, 0, 2).reshape(n, self.in_channels * self.width)
        k = self.kernels.reshape(self.out_channels, self.in_channels * self.width)
        y = self._act(k @ cols.T + self._params["b"].reshape(-1, 1))
        return self._pool(y)

    def _pool(self, y: Tensor) -> Tensor:
        N = self.pool_size
        if self.pooling == "none" or N == 1:
            return y
        groups = y.shape[1] // N
        if groups == 0:
            raise ShapeError(f"{y.shape[1]} frames cannot fill one pooling group of {N}")
        if self.pooling == "decimate":
            return y[:, np.arange(groups) * N]
        blocks = y[:, : groups * N].reshape(self.out_channels, groups, N)
        return blocks.mean(axis=2) if self.pooling == "average" else blocks.max(axis=2)

    def describe(self) -> str:
        return (
            f"conv1d in={self.in_channels} out={self.out_channels} width={self.width} "
            f"stride={self.stride} dilation={self.dilation} pooling={self.pooling} "
            f"pool_size={self.pool_size} activation={self.activation}"
        )


# ---------------------------------------------------------------------------
# recurrent cells


def _check_state(arrays) -> None:
    for a in arrays:
        if a is not None and not np.all(np.isfinite(getattr(a, "data", a))):
            raise NonFiniteError("non-finite recurrent state")


class _RecurrentCell(Module):
    gates: tuple[str, ...] = ()

    def __init__(self, input_size: int, hidden_size: int, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.input_size, self.hidden_size = int(input_size), int(hidden_size)
        M, K = self.input_size, self.hidden_size
        for g in self.gates:
            self._params[f"W_{g}"] = _init(rng, (K, M), M)
            self._params[f"U_{g}"] = _init(rng, (K, K), K)
            self._params[f"b_{g}"] = _zeros((K,))

    def _affine(self, g: str, x: Tensor, y: Tensor) -> Tensor:
        p = self._params
        b = p[f"b_{g}"] if x.ndim == 1 else p[f"b_{g}"].reshape(-1, 1)
        return p[f"W_{g}"] @ x + p[f"U_{g}"] @ y + b

    def zero_state(self, batch: int | None = None):
        shape = (self.hidden_size,) if batch is None else (self.hidden_size, batch)
        return Tensor(np.zeros(shape))

    def _prep(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[0] != self.input_size:
            raise ShapeError(f"cell expects input size {self.input_size}, got shape {x.shape}")
        return x

    def forward(self, x) -> Tensor:
        return recurrent_unroll(self, x)[0]

    def describe(self) -> str:
        return f"{self.kind} in={self.input_size} hidden={self.hidden_size}"


class LSTMCell(_RecurrentCell):
    """Long short-term memory cell.

    ``f, i, o = sigmoid(W x + U y_prev + b)``,
    ``c = f * c_prev + i * tanh(W_c x + U_c y_prev + b_c)``, and the output is
    ``y = tanh(o * c)``. State is the pair ``(y, c)``.
    """

    kind = "lstm"
    gates = ("f", "i", "o", "c")

    def step(self, x, state=None):
        x = self._prep(x)
        batch = None if x.ndim == 1 else x.shape[1]
        if state is None:
            state = (self.zero_state(batch), self.zero_state(batch))
        y_prev, c_prev = (as_tensor(s) for s in state)
        _check_state((y_prev, c_prev))
        f = sigmoid(self._affine("f", x, y_prev))
        i = sigmoid(self._affine("i", x, y_prev))
        o = sigmoid(self._affine("o", x, y_prev))
        c = f * c_prev + i * tanh(self._affine("c", x, y_prev))
        y = tanh(o * c)
        return y, (y, c)


class GRUCell(_RecurrentCell):
    """Gated recurrent unit.

    ``z = sigmoid(W_z x + U_z y_prev + b_z)`` (update), ``r`` likewise (reset),
    ``c = tanh(W_c x + U_c (r * y_prev) + b_c)``, ``y = z * y_prev + (1 - z) * c``.
    """

    kind = "gru"
    gates = ("z", "r", "c")

    def step(self, x, state=None):
        x = self._prep(x)
        batch = None if x.ndim == 1 else x.shape[1]
        y_prev = self.zero_state(batch) if state is None else as_tensor(state)
        _check_state((y_prev,))
        z = sigmoid(self._affine("z", x, y_prev))
        r = sigmoid(self._affine("r", x, y_prev))
        c = tanh(self._affine("c", x, r * y_prev))
        y = z * y_prev + (1.0 - z) * c
        return y, y


def recurrent_unroll(cell: _RecurrentCell, sequence, state=None):
    """Run ``cell.step`` left to right over the columns of an ``M x T`` sequence.

    Returns the ``K x T`` outputs and the final state.
    """
    seq = as_tensor(sequence)
    if seq.ndim != 2:
        raise ShapeError(f"sequence must be M x T, got {seq.shape}")
    outs = []
    for t in range(seq.shape[1]):
        y, state = cell.step(seq[:, t], state)
        outs.append(y.reshape(-1, 1))
    return concat(outs, axis=1), state


# ---------------------------------------------------------------------------
# attention and pooling


class SelfAttention(Module):
    """Multi-head self-attention without score scaling.

    Head ``m`` computes ``y_m(t) = sum_i softmax_i(k(i)^T q(t)) v(i)`` with
    ``q = T_q x``, ``k = T_k x``, ``v = T_v x``; head outputs are stacked
    along depth.
    """

    kind = "attention"

    def __init__(self, depth: int, key_dim: int, value_dim: int, heads: int = 1, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.depth, self.key_dim, self.value_dim, self.heads = int(depth), int(key_dim), int(value_dim), int(heads)
        for m in range(self.heads):
            self._params[f"T_q{m}"] = _init(rng, (key_dim, depth), depth)
            self._params[f"T_k{m}"] = _init(rng, (key_dim, depth), depth)
            self._params[f"T_v{m}"] = _init(rng, (value_dim, depth), depth)

    def weights(self, x) -> list[Tensor]:
        """Per-head ``T x T`` weight matrices; column ``t`` holds the weights over ``i``."""
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[0] != self.depth:
            raise ShapeError(f"attention expects ({self.depth}, T) input, got {x.shape}")
        p = self._params
        out = []
        for m in range(self.heads):
            q = p[f"T_q{m}"] @ x
            k = p[f"T_k{m}"] @ x
            out.append(softmax(k.T @ q, axis=0))
        return out

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        heads = [(self._params[f"T_v{m}"] @ x) @ a for m, a in enumerate(self.weights(x))]
        return heads[0] if self.heads == 1 else concat(heads, axis=0)

    def describe(self) -> str:
        return f"attention depth={self.depth} key_dim={self.key_dim} value_dim={self.value_dim} heads={self.heads}"


class MeanPooling(Module):
    """``(1/T) sum_i x(i)``."""

    kind = "mean_pool"

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ShapeError(f"pooling expects D x T with T >= 1, got {x.shape}")
        return x.mean(axis=1)


class AttentivePooling(Module):
    """Softmax-weighted fusion of slices with ``M`` scoring functions.

    Head ``m`` scores each slice with ``h_m(x) = w_m^T tanh(A x + a)`` (or a
    user-supplied callable), then returns ``V_m sum_i alpha_i x(i)``. Head
    outputs are concatenated. ``V_m`` is the identity when ``proj_dim`` is None.
    """

    kind = "attentive_pool"

    def __init__(self, depth: int, hidden: int = 8, heads: int = 1, proj_dim: int | None = None, scorer=None, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.depth, self.hidden, self.heads, self.proj_dim = int(depth), int(hidden), int(heads), proj_dim
        self.scorer = scorer
        if scorer is None:
            self._params["A"] = _init(rng, (hidden, depth), depth)
            self._params["a"] = _zeros((hidden, 1))
            self._params["w"] = _init(rng, (heads, hidden), hidden)
        if proj_dim is not None:
            for m in range(self.heads):
                self._params[f"V{m}"] = _init(rng, (proj_dim, depth), depth)

    def scores(self, x) -> Tensor:
        """``heads x T`` slice scores."""
        x = as_tensor(x)
        if self.scorer is not None:
            s = as_tensor(self.scorer(x))
            return s.reshape(1, -1) if s.ndim == 1 else s
        p = self._params
        return p["w"] @ tanh(p["A"] @ x + p["a"])

    def weights(self, x) -> Tensor:
        return softmax(self.scores(x), axis=1)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ShapeError(f"pooling expects D x T with T >= 1, got {x.shape}")
        alpha = self.weights(x)
        outs = []
        for m in range(alpha.shape[0]):
            fused = x @ alpha[m]
            if self.proj_dim is not None:
                fused = self._params[f"V{m}"] @ fused
            outs.append(fused)
        return outs[0] if len(outs) == 1 else concat(outs, axis=0)

    def describe(self) -> str:
        return f"attentive_pool depth={self.depth} hidden={self.hidden} heads={self.heads}"


def _safe_sqrt(x: Tensor) -> Tensor:
    # zero variance has zero std; its subgradient is taken as 0
    v = x.data
    r = np.sqrt(v)
    inv = np.where(r > 0, 0.5 / np.where(r > 0, r, 1.0), 0.0)
    return Tensor(r, _parents=(x,), _vjp=lambda g: (g * inv,), op="safe_sqrt")


class StatsPooling(Module):
    """Concatenate the per-channel mean and population standard deviation."""

    kind = "stats_pool"

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ShapeError(f"pooling expects D x T with T >= 1, got {x.shape}")
        mu = x.mean(axis=1)
        d = x - mu.reshape(-1, 1)
        sigma = _safe_sqrt((d * d).mean(axis=1))
        return concat([mu, sigma], axis=0)


class Residual(Module):
    """``x + inner(x)``."""

    kind = "residual"

    def __init__(self, inner: Module | Callable):
        super().__init__()
        self.inner = inner
        if isinstance(inner, Module):
            self._children = {"inner": inner}

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        y = self.inner(x)
        if y.shape != x.shape:
            raise ShapeError(f"residual branch changed shape {x.shape} -> {y.shape}")
        return x + y

    def describe(self) -> str:
        inner = self.inner.describe() if isinstance(self.inner, Module) else "callable"
        return f"residual[{inner}]"


_HEADS = ("sigmoid", "multi_sigmoid", "softmax", "sign")


class OutputHead(Module):
    """Detection output heads applied to an embedding ``z``.

    ``sigmoid`` gives ``sigmoid(w^T z + b)``; ``multi_sigmoid`` applies
    independent sigmoids to ``W z + b``; ``softmax`` normalizes ``W z + b``
    over classes; ``sign`` returns ``sign(w^T z + b)`` in {-1, 1} (0 maps to 1).
    """

    kind = "head"

    def __init__(self, kind: str, in_dim: int, n_out: int = 1, rng=None):
        super().__init__()
        if kind not in _HEADS:
            raise ValueError(f"head kind must be one of {_HEADS}")
        rng = np.random.default_rng(rng)
        self.head, self.in_dim = kind, int(in_dim)
        self.n_out = 1 if kind in ("sigmoid", "sign") else int(n_out)
        self._params = {"W": _init(rng, (self.n_out, in_dim), in_dim), "b": _zeros((self.n_out,))}

    def logits(self, z) -> Tensor:
        z = as_tensor(z)
        if z.shape[0] != self.in_dim:
            raise ShapeError(f"head expects leading dimension {self.in_dim}, got {z.shape}")
        b = self._params["b"] if z.ndim == 1 else self._params["b"].reshape(-1, 1)
        return self._params["W"] @ z + b

    def forward(self, z) -> Tensor:
        u = self.logits(z)
        if self.head in ("sigmoid", "multi_sigmoid"):
            return sigmoid(u)
        if self.head == "softmax":
            return softmax(u, axis=0)
        return Tensor(np.where(u.data >= 0, 1.0, -1.0))

    def describe(self) -> str:
        return f"head kind={self.head} in={self.in_dim} out={self.n_out}"


# ---------------------------------------------------------------------------
# sequential models and the text descriptor


class Sequential(Module):
    """Chain of layers; ``forward`` applies them in order."""

    kind = "sequential"

    def __init__(self, layers: Sequence[Module | Callable]):
        super().__init__()
        self.layers = list(layers)
        self._children = {str(i): m for i, m in enumerate(self.layers) if isinstance(m, Module)}

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def outputs(self, x) -> list[Tensor]:
        """Output of every layer, in order."""
        out = []
        for layer in self.layers:
            x = layer(x)
            out.append(x)
        return out

    def describe(self) -> str:
        return "\n".join(m.describe() if isinstance(m, Module) else "callable" for m in self.layers)

    @classmethod
    def from_descriptor(cls, text: str, rng=None) -> "Sequential":
        rng = np.random.default_rng(rng)
        return cls([_build(kind, kw, rng) for kind, kw in parse_descriptor(text)])


_TOKEN = re.compile(r"^([A-Za-z_]+)=(\S+)$")


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def parse_descriptor(text: str) -> list[tuple[str, dict]]:
    """Parse ``kind key=value ...`` lines; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        kw = {}
        for tok in rest:
            m = _TOKEN.match(tok)
            if not m:
                raise ValueError(f"line {lineno}: malformed token {tok!r}")
            kw[m.group(1)] = _coerce(m.group(2))
        out.append((kind, kw))
    return out


def _build(kind: str, kw: dict, rng) -> Module:
    kw = dict(kw)
    try:
        if kind == "dense":
            return DenseLayer(kw.pop("in"), kw.pop("out"), rng=rng, **kw)
        if kind == "conv1d":
            return Conv1dLayer(kw.pop("in"), kw.pop("out"), rng=rng, **kw)
        if kind in ("lstm", "gru"):
            cell = LSTMCell if kind == "lstm" else GRUCell
            return cell(kw.pop("in"), kw.pop("hidden"), rng=rng)
        if kind == "attention":
            return SelfAttention(rng=rng, **kw)
        if kind == "attentive_pool":
            return AttentivePooling(rng=rng, **kw)
        if kind == "mean_pool":
            return MeanPooling()
        if kind == "stats_pool":
            return StatsPooling()
        if kind == "head":
            return OutputHead(kw.pop("kind"), kw.pop("in"), kw.pop("out", 1), rng=rng)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad hyperparameters for {kind!r}: {exc}") from exc
    raise ValueError(f"unknown layer kind {kind!r}")
