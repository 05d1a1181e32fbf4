"""Small feed-forward network substrate with exact gradients.

Parameters of a network live in one flat float64 vector.  Layer ``k`` stores
its weight matrix ``W_k`` (shape ``n_in x n_out``, row-major) followed by its
bias ``b_k``.  Forward, reverse-mode (``mlp_backward``) and forward-mode
(``mlp_jvp``) passes all operate on that flat layout.

Also contains the two inner-loop optimizers used everywhere else: Adam and a
two-loop-recursion L-BFGS with a Wolfe line search.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import line_search

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("linear", "sigmoid", "softmax")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views (no copies)."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({spec.n_params},)")
    layers = []
    offset = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = params[offset:offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((W, b))
    return layers


def mlp_init(spec: MlpSpec, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for W, b in unflatten(spec, params):
        bound = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _hidden(kind, z):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _hidden_grad(kind, z, a):
    # derivative expressed through the activation value where possible
    return 1.0 - a * a if kind == "tanh" else (z > 0.0).astype(z.dtype)


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _output(kind, z):
    if kind == "linear":
        return z
    if kind == "sigmoid":
        return sigmoid(z)
    return softmax(z)


def _output_vjp(kind, y, upstream):
    """Pull ``dL/dy`` back to ``dL/dz`` for the output activation."""
    if kind == "linear":
        return upstream
    if kind == "sigmoid":
        return upstream * y * (1.0 - y)
    return y * (upstream - np.sum(upstream * y, axis=1, keepdims=True))


def _output_jvp(kind, y, dz):
    if kind == "linear":
        return dz
    if kind == "sigmoid":
        return dz * y * (1.0 - y)
    return y * (dz - np.sum(dz * y, axis=1, keepdims=True))


def _check_inputs(spec, inputs):
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ValueError(f"inputs have shape {x.shape}, expected (batch, {spec.in_dim})")
    return x


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list          # pre-activations per layer
    post: list         # activations per layer (last entry is the network output)
    dact: dict = field(default_factory=dict)   # hidden-activation derivatives, filled lazily

    def hidden_grad(self, kind, k):
        if k not in self.dact:
            self.dact[k] = _hidden_grad(kind, self.pre[k], self.post[k])
        return self.dact[k]


def mlp_forward_cached(spec: MlpSpec, params, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = _check_inputs(spec, inputs)
    layers = unflatten(spec, params)
    pre, post = [], []
    a = x
    for k, (W, b) in enumerate(layers):
        z = a @ W + b
        last = k == len(layers) - 1
        a = _output(spec.output_activation, z) if last else _hidden(spec.hidden_activation, z)
        pre.append(z)
        post.append(a)
    return a, ForwardCache(x, pre, post)


def mlp_forward(spec: MlpSpec, params, inputs) -> np.ndarray:
    return mlp_forward_cached(spec, params, inputs)[0]


def mlp_backward(spec: MlpSpec, params, inputs, upstream, cache: ForwardCache | None = None,
                 return_input_grad: bool = False):
    """Gradient of ``L`` w.r.t. the flat parameters, given ``upstream = dL/d(output)``.

    The output activation is included in the backward pass.  ``cache`` may be
    passed to skip recomputing the forward pass.
    """
    if cache is None:
        _, cache = mlp_forward_cached(spec, params, inputs)
    upstream = np.asarray(upstream, dtype=float)
    y = cache.post[-1]
    if upstream.shape != y.shape:
        raise ValueError(f"upstream has shape {upstream.shape}, expected {y.shape}")
    layers = unflatten(spec, params)
    grad = np.zeros(spec.n_params)
    glayers = unflatten(spec, grad)
    dz = _output_vjp(spec.output_activation, y, upstream)
    for k in range(len(layers) - 1, -1, -1):
        a_prev = cache.post[k - 1] if k > 0 else cache.inputs
        gW, gb = glayers[k]
        gW[...] = a_prev.T @ dz
        gb[...] = dz.sum(axis=0)
        if k == 0 and not return_input_grad:
            break
        da = dz @ layers[k][0].T
        if k > 0:
            dz = da * cache.hidden_grad(spec.hidden_activation, k - 1)
    if return_input_grad:
        return grad, da
    return grad


def mlp_jvp(spec: MlpSpec, params, inputs, direction, cache: ForwardCache | None = None):
    """Forward-mode derivative of the outputs along a parameter ``direction``."""
    if cache is None:
        _, cache = mlp_forward_cached(spec, params, inputs)
    layers = unflatten(spec, params)
    dlayers = unflatten(spec, np.asarray(direction, dtype=float))
    da = np.zeros_like(cache.inputs)
    for k, ((W, _), (dW, db)) in enumerate(zip(layers, dlayers)):
        a_prev = cache.post[k - 1] if k > 0 else cache.inputs
        dz = da @ W + a_prev @ dW + db
        if k == len(layers) - 1:
            return _output_jvp(spec.output_activation, cache.post[k], dz)
        da = dz * cache.hidden_grad(spec.hidden_activation, k)


def numerical_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(a, b, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# ---------------------------------------------------------------- optimizers

@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(state: AdamState, params, grads) -> tuple[AdamState, np.ndarray]:
    """One Adam update (minimization).  Inputs are not modified."""
    grads = np.asarray(grads, dtype=float)
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise FloatingPointError(
            f"non-finite gradient component at index {bad[0]}: {grads[bad[0]]}")
    if grads.shape != state.first_moment.shape:
        raise ValueError("gradient and moment vectors differ in length")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_params = np.asarray(params, dtype=float) - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new_params


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    iterations: int
    history: list = field(default_factory=list)   # objective after each accepted step


def lbfgs_minimize(objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
                   init: Sequence[float], max_iters: int = 20, memory: int = 10,
                   gtol: float = 1e-10, c1: float = 1e-4, c2: float = 0.9) -> LbfgsResult:
    """Limited-memory BFGS with a strong-Wolfe line search.

    ``objective`` returns ``(value, gradient)``.  Stops early when the gradient
    max-norm falls below ``gtol`` or no acceptable step can be found.  The
    returned value never exceeds the initial one.
    """
    x = np.array(init, dtype=float)
    f, g = objective(x)
    f = float(f)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the initial point")
    cache = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = objective(z)
        return float(cache[key][0])

    def jac(z):
        fun(z)
        return np.asarray(cache[z.tobytes()][1], dtype=float)

    s_hist, y_hist = [], []
    result = LbfgsResult(x, f, 0, [f])
    for it in range(max_iters):
        if np.max(np.abs(g)) <= gtol:
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            q /= max(np.linalg.norm(g), 1.0)
        for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += s * (a - b)
        d = -q
        if g @ d >= 0:
            d = -g
            s_hist.clear()
            y_hist.clear()
        step, *_ = line_search(fun, jac, x, d, gfk=g, old_fval=f, c1=c1, c2=c2, maxiter=20)
        if step is None:
            step = _backtrack(fun, x, f, g, d, c1)
            if step is None:
                break
        x_new = x + step * d
        f_new = fun(x_new)
        if not f_new < f:
            break
        g_new = jac(x_new)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        result.history.append(f)
        result.iterations = it + 1
    result.x, result.fun = x, f
    return result


def _backtrack(fun, x, f, g, d, c1, shrink=0.5, tries=30):
    step = 1.0
    slope = g @ d
    for _ in range(tries):
        if fun(x + step * d) <= f + c1 * step * slope:
            return step
        step *= shrink
    return None
