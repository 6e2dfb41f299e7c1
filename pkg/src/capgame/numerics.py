"""Dense numeric kernel: tanh MLPs with manual backprop, Adam, grad checking.

All reference-mode math is float64. A "matrix" throughout is a 2-D C-order
float64 ndarray (row-major); parameter gradients mirror parameter shapes.
Everything is deterministic: no hidden RNG, no global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class NonFiniteGradientError(ValueError):
    """An optimizer step received non-finite gradients; the update was rejected."""


def orthogonal(rng, rows: int, cols: int, gain: float = 1.0) -> Array:
    """Orthogonal weight init (QR of a Gaussian draw, sign-fixed)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols], dtype=np.float64)


@dataclass
class MlpParams:
    """Parameters of a dense MLP: tanh hidden layers, identity output.

    weights[k] has shape [in_k, out_k]; biases[k] has shape [out_k].
    Consecutive layers must chain (out_k == in_{k+1}) and all entries must
    be finite.
    """

    weights: list[Array]
    biases: list[Array]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same layer count")
        if not self.weights:
            raise ValueError("MLP needs at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(
                    f"layer {k}: weight {w.shape} incompatible with bias {b.shape}"
                )
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(
                    f"layer {k}: input width {w.shape[0]} does not chain with "
                    f"previous output width {self.weights[k - 1].shape[1]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")

    @classmethod
    def create(cls, sizes: list[int], rng, out_gain: float = 1.0) -> "MlpParams":
        """New MLP with orthogonal weights. sizes = [in, h1, ..., out]."""
        weights, biases = [], []
        for k in range(len(sizes) - 1):
            gain = out_gain if k == len(sizes) - 2 else np.sqrt(2.0)
            weights.append(orthogonal(rng, sizes[k], sizes[k + 1], gain))
            biases.append(np.zeros(sizes[k + 1]))
        return cls(weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[Array]:
        """Live views of all parameter arrays, order [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )


@dataclass
class ForwardCache:
    """Activation record from mlp_forward, consumed by mlp_backward."""

    params: MlpParams
    x: Array                  # [B, in]
    hidden: list[Array]       # post-tanh activations per hidden layer, [B, h]
    squeeze: bool             # input was 1-D


def mlp_forward(params: MlpParams, x: Array) -> tuple[Array, ForwardCache]:
    """Forward pass. Accepts a single vector [in] or a batch [B, in]."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise ValueError(
            f"input width {x2.shape[-1] if x2.ndim else '?'} does not match "
            f"first layer input width {params.in_dim}"
        )
    h = x2
    hidden = []
    for k in range(params.n_layers - 1):
        h = np.tanh(h @ params.weights[k] + params.biases[k])
        hidden.append(h)
    y = h @ params.weights[-1] + params.biases[-1]
    cache = ForwardCache(params, x2, hidden, squeeze)
    return (y[0] if squeeze else y), cache


def mlp_backward(params: MlpParams, cache: ForwardCache, out_grad: Array) -> tuple[MlpParams, Array]:
    """Backprop out_grad (dLoss/doutput) to parameter gradients and dLoss/dx.

    The cache must come from a forward call on this exact params object.
    Gradients are summed over the batch.
    """
    if cache.params is not params:
        raise ValueError("cache does not match params (stale or mismatched cache)")
    g = np.asarray(out_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.x.shape[0], params.out_dim):
        raise ValueError(
            f"out_grad shape {out_grad.shape} does not match output "
            f"[{cache.x.shape[0]}, {params.out_dim}]"
        )
    grads = params.zeros_like()
    acts = [cache.x] + cache.hidden  # inputs to each layer
    dh = g
    for k in range(params.n_layers - 1, -1, -1):
        grads.weights[k][:] = acts[k].T @ dh
        grads.biases[k][:] = dh.sum(axis=0)
        dh = dh @ params.weights[k].T
        if k > 0:
            dh = dh * (1.0 - cache.hidden[k - 1] ** 2)  # tanh'
    dx = dh[0] if cache.squeeze else dh
    return grads, dx


@dataclass
class AdamState:
    """Bias-corrected Adam state over a list of parameter arrays."""

    m: list[Array]
    v: list[Array]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays: list[Array], lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(arrays: list[Array], grads: list[Array], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on `arrays`.

    Raises NonFiniteGradientError (and changes nothing) if any gradient is
    non-finite.
    """
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter / gradient / state lengths differ")
    for a, g, m in zip(arrays, grads, state.m):
        if a.shape != g.shape or a.shape != m.shape:
            raise ValueError(f"shape mismatch: param {a.shape}, grad {g.shape}, state {m.shape}")
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteGradientError("non-finite gradient; update rejected")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        a -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_grads_(grads: list[Array], max_norm: float) -> float:
    """Scale grads in place to a global L2 norm cap. Returns the raw norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def grad_check(loss_fn, arrays: list[Array], analytic: list[Array],
               step: float = 1e-4) -> float:
    """Max relative error between analytic grads and central differences.

    loss_fn maps the array list to a scalar; it is re-evaluated at
    elementwise +-step perturbations. Relative error per element is
    |analytic - fd| / (|analytic| + |fd| + 1e-12).
    """
    worst = 0.0
    for a, ga in zip(arrays, analytic):
        flat = a.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(arrays)
            flat[i] = orig - step
            dn = loss_fn(arrays)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise ValueError("non-finite loss during finite differencing")
            fd = (up - dn) / (2.0 * step)
            err = abs(gflat[i] - fd) / (abs(gflat[i]) + abs(fd) + 1e-12)
            worst = max(worst, err)
    return worst
