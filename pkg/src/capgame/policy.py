"""Actor/critic heads: Gaussian motion actor, gated adversary, critics.

The motion actor emits tanh-squashed Gaussian position targets with the
squash-corrected log-density. The adversary's backbone ends in the
continuous-channel means plus one extra gate logit (a Bernoulli head); its
joint log-density is the pre-squash Gaussian part plus the Bernoulli part.
Squashing keeps every emitted channel inside its declared bound, so bound
respect is differentiable rather than clipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AttackDims
from .numerics import Array, MlpParams, mlp_forward

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_LOG_2PI = float(np.log(2.0 * np.pi))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


@dataclass
class GaussianActor:
    """Squashed-Gaussian policy head: net maps observation to pre-squash mean."""

    net: MlpParams
    log_std: Array
    bound: Array

    def __post_init__(self):
        if self.log_std.shape != (self.net.out_dim,) or self.bound.shape != self.log_std.shape:
            raise ValueError("log_std/bound must match the network output width")
        if np.any(self.bound <= 0):
            raise ValueError("action bounds must be positive")

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden: tuple, bound: Array, rng,
               init_log_std: float = -0.5) -> "GaussianActor":
        net = MlpParams.create([obs_dim] + list(hidden) + [act_dim], rng, out_gain=0.01)
        return cls(net, np.full(act_dim, init_log_std), np.asarray(bound, dtype=np.float64))

    def std_and_mask(self):
        """Clamped std and the pass-through gradient mask for log_std."""
        clipped = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        mask = ((self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX)).astype(np.float64)
        return np.exp(clipped), mask

    def arrays(self) -> list[Array]:
        return self.net.arrays() + [self.log_std]

    def copy(self) -> "GaussianActor":
        return GaussianActor(self.net.copy(), self.log_std.copy(), self.bound.copy())


def gaussian_logp(z: Array, mean: Array, std: Array) -> Array:
    """Row-wise diagonal Gaussian log-density, z/mean shaped [B, n]."""
    q = (z - mean) / std
    return -0.5 * (q * q).sum(axis=-1) - np.log(std).sum() - 0.5 * z.shape[-1] * _LOG_2PI


def squash_correction(z: Array, bound: Array) -> Array:
    """log|det da/dz| for a = bound*tanh(z), summed per row."""
    return np.log(bound * (1.0 - np.tanh(z) ** 2) + 1e-12).sum(axis=-1)


def act_motion(actor: GaussianActor, obs: Array, rng=None, deterministic: bool = False):
    """Sample (or take the squashed mean of) the motion policy.

    Returns (action, log_prob, pre_squash); all batched when obs is [B, n].
    """
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    mean, _ = mlp_forward(actor.net, x)
    std, _ = actor.std_and_mask()
    if deterministic:
        z = mean
    else:
        if rng is None:
            raise ValueError("stochastic action needs an rng")
        z = mean + std * rng.standard_normal(mean.shape)
    action = actor.bound * np.tanh(z)
    logp = gaussian_logp(z, mean, std) - squash_correction(z, actor.bound)
    if single:
        return action[0], float(logp[0]), z[0]
    return action, logp, z


def motion_logp(actor: GaussianActor, obs: Array, z: Array):
    """Log-density of stored pre-squash draws under the current parameters.

    Returns (logp [B], mean [B, n], cache) so updates can backpropagate.
    """
    mean, cache = mlp_forward(actor.net, obs)
    std, _ = actor.std_and_mask()
    logp = gaussian_logp(z, mean, std) - squash_correction(z, actor.bound)
    return logp, mean, cache


@dataclass
class AdversaryActor:
    """Gated attack policy: backbone output = channel means + gate logit."""

    net: MlpParams
    log_std: Array      # continuous channels only
    bounds_vec: Array   # effective per-channel bounds (eps * level)
    dims: AttackDims

    def __post_init__(self):
        n = self.dims.n_continuous
        if self.net.out_dim != n + 1:
            raise ValueError(f"adversary net must output {n}+1 values, got {self.net.out_dim}")
        if self.log_std.shape != (n,) or self.bounds_vec.shape != (n,):
            raise ValueError("log_std/bounds_vec must match the continuous channel count")

    @classmethod
    def create(cls, in_dim: int, dims: AttackDims, bounds_vec: Array, hidden: tuple,
               rng, init_log_std: float = -0.5,
               init_gate_bias: float = 2.0) -> "AdversaryActor":
        """init_gate_bias > 0 opens the gate early (near-persistent attacks),
        so the budget penalty prunes toward critical states instead of
        closing an untrained gate."""
        net = MlpParams.create([in_dim] + list(hidden) + [dims.n_continuous + 1],
                               rng, out_gain=0.01)
        net.biases[-1][-1] = init_gate_bias
        return cls(net, np.full(dims.n_continuous, init_log_std),
                   np.asarray(bounds_vec, dtype=np.float64), dims)

    def std_and_mask(self):
        clipped = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        mask = ((self.log_std > LOG_STD_MIN) & (self.log_std < LOG_STD_MAX)).astype(np.float64)
        return np.exp(clipped), mask

    def arrays(self) -> list[Array]:
        return self.net.arrays() + [self.log_std]

    def copy(self) -> "AdversaryActor":
        return AdversaryActor(self.net.copy(), self.log_std.copy(),
                              self.bounds_vec.copy(), self.dims)


def act_adversary(actor: AdversaryActor, x: Array, rng=None, deterministic: bool = False):
    """Sample the hybrid attack action on (observation + privileged) input.

    Returns (delta [B, n_cont], gate [B] ints, joint log_prob [B],
    pre_squash [B, n_cont]). Deterministic mode squashes the mean and
    thresholds the gate at P >= 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    out, _ = mlp_forward(actor.net, xb)
    mean, logit = out[:, :-1], out[:, -1]
    std, _ = actor.std_and_mask()
    if deterministic:
        z = mean
        gate = (logit >= 0.0).astype(np.int64)
    else:
        if rng is None:
            raise ValueError("stochastic attack needs an rng")
        z = mean + std * rng.standard_normal(mean.shape)
        gate = (rng.uniform(size=logit.shape) < _sigmoid(logit)).astype(np.int64)
    delta = actor.bounds_vec * np.tanh(z)
    logp = gaussian_logp(z, mean, std) + bernoulli_logp(gate, logit)
    if single:
        return delta[0], int(gate[0]), float(logp[0]), z[0]
    return delta, gate, logp, z


def adversary_logp(actor: AdversaryActor, x: Array, z: Array, gate: Array):
    """Joint log-density of stored draws under current parameters.

    Returns (logp [B], mean, logit, cache).
    """
    out, cache = mlp_forward(actor.net, x)
    mean, logit = out[:, :-1], out[:, -1]
    std, _ = actor.std_and_mask()
    logp = gaussian_logp(z, mean, std) + bernoulli_logp(gate, logit)
    return logp, mean, logit, cache


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bernoulli_logp(gate, logit):
    gate = np.asarray(gate, dtype=np.float64)
    return gate * log_sigmoid(logit) + (1.0 - gate) * log_sigmoid(-logit)


def gaussian_entropy(std: Array) -> float:
    return float(np.log(std).sum() + 0.5 * std.shape[0] * (1.0 + _LOG_2PI))


def bernoulli_entropy(logit: Array) -> Array:
    p = _sigmoid(logit)
    return -(p * log_sigmoid(logit) + (1.0 - p) * log_sigmoid(-logit))


@dataclass
class Critic:
    """Scalar value head over (observation + privileged extras)."""

    net: MlpParams

    @classmethod
    def create(cls, in_dim: int, hidden: tuple, rng) -> "Critic":
        return cls(MlpParams.create([in_dim] + list(hidden) + [1], rng, out_gain=1.0))

    def value(self, x: Array):
        """Returns (values [B], cache); accepts a single vector too."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        v, cache = mlp_forward(self.net, x[None, :] if single else x)
        return (float(v[0, 0]) if single else v[:, 0]), cache

    def copy(self) -> "Critic":
        return Critic(self.net.copy())


# -- auxiliary losses ----------------------------------------------------------


def symmetry_loss(actor: GaussianActor, obs: Array, maps, with_grads: bool = False):
    """MSE between the deterministic action and its mirrored counterpart.

    loss = mean (act(s) - M_a act(M_s s))^2, differentiable through both
    forward branches. Returns the scalar, or (scalar, grads) matching
    actor.arrays() when with_grads is set.
    """
    from .numerics import mlp_backward  # local import to keep module load light

    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if maps.obs.perm.shape[0] != obs.shape[1] or maps.act.perm.shape[0] != actor.net.out_dim:
        raise ValueError("mirror maps do not match observation/action layouts")
    m_act = maps.act.matrix()
    mirrored = maps.obs.apply(obs)
    mean1, cache1 = mlp_forward(actor.net, obs)
    mean2, cache2 = mlp_forward(actor.net, mirrored)
    a1 = actor.bound * np.tanh(mean1)
    a2 = actor.bound * np.tanh(mean2)
    a2m = a2 @ m_act.T
    r = a1 - a2m
    denom = r.size
    loss = float((r * r).sum() / denom)
    if not with_grads:
        return loss
    d_a1 = 2.0 * r / denom
    d_a2 = -(2.0 * r / denom) @ m_act
    d_mean1 = d_a1 * actor.bound * (1.0 - np.tanh(mean1) ** 2)
    d_mean2 = d_a2 * actor.bound * (1.0 - np.tanh(mean2) ** 2)
    g1, _ = mlp_backward(actor.net, cache1, d_mean1)
    g2, _ = mlp_backward(actor.net, cache2, d_mean2)
    grads = [x + y for x, y in zip(g1.arrays(), g2.arrays())]
    grads.append(np.zeros_like(actor.log_std))
    return loss, grads


def lipschitz_penalty(params: MlpParams) -> float:
    """Product over layers of the weight-matrix infinity norm (biases excluded)."""
    out = 1.0
    for w in params.weights:
        out *= float(np.abs(w).sum(axis=1).max())
    return out


def lipschitz_grads(params: MlpParams):
    """Penalty value plus its subgradient (flows to the argmax rows only).

    Gradients are returned in params.arrays() order with zero bias grads.
    """
    norms = [np.abs(w).sum(axis=1) for w in params.weights]
    layer_norm = [float(n.max()) for n in norms]
    rows = [int(n.argmax()) for n in norms]
    value = float(np.prod(layer_norm))
    grads = []
    for k, w in enumerate(params.weights):
        others = 1.0
        for j, n in enumerate(layer_norm):
            if j != k:
                others *= n
        gw = np.zeros_like(w)
        gw[rows[k], :] = others * np.sign(w[rows[k], :])
        grads.extend([gw, np.zeros_like(params.biases[k])])
    return value, grads
