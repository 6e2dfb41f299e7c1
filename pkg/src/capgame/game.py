"""Training engine: joint rollouts, GAE, PPO, the dual-advantage adversary
update, and the alternating loop.

The motion policy trains with standard clipped PPO (plus the symmetry
auxiliary loss). The adversary ascends the dual-advantage clipped objective
per-sample obj = min(rho*Aatk, clip(rho)*Aatk) - min(rho*Atask, clip(rho)*Atask)
over the hybrid (Gaussian + gate) log-prob ratio, with the Lipschitz
penalty, and regresses two separate critics on its two return streams
(stability stream at discount 1, task stream at the motion discount).
Alternation freezes one agent while the other updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attack as atk_mod
from .attack import (AdvRewardCoeffs, AttackDims, AttackVector,
                     PerturbationBounds, adversarial_reward,
                     apply_action_attack, apply_state_attack, pap_wrap,
                     sample_dr)
from .envs.core import EpisodeAbort, pd_torque
from .numerics import (AdamState, NonFiniteGradientError, adam_step,
                       clip_grads_, mlp_backward, mlp_forward)
from .policy import (AdversaryActor, Critic, GaussianActor, act_motion,
                     adversary_logp, bernoulli_entropy, bernoulli_logp,
                     gaussian_entropy, gaussian_logp, lipschitz_grads,
                     motion_logp, squash_correction, symmetry_loss, _sigmoid)
from .rngs import (RngStream, STREAM_ADV_ACTOR, STREAM_DR, STREAM_MINIBATCH,
                   STREAM_MOTION_ACTOR, STREAM_PARAM_INIT)

ATTACK_MODES = ("none", "dr", "pap", "cap")


@dataclass
class GaeConfig:
    gamma: float = 0.99        # motion discount
    gamma_adv: float = 1.0     # adversary stability-stream discount
    lam: float = 0.95
    normalize: bool = True

    def __post_init__(self):
        for name in ("gamma", "gamma_adv", "lam"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class PpoConfig:
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    max_grad_norm: float = 0.5
    sym_weight: float = 0.1
    lips_weight: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.epochs <= 0 or self.minibatch <= 0:
            raise ValueError("epochs and minibatch must be positive")


@dataclass
class AlternationSchedule:
    n_iter: int = 10
    n_adv: int = 4
    n_motion: int = 4

    def __post_init__(self):
        if min(self.n_iter, 1) < 1 or self.n_adv < 0 or self.n_motion < 0:
            raise ValueError("schedule counts must be non-negative, n_iter positive")


# -- agents ---------------------------------------------------------------------


@dataclass
class MotionAgent:
    actor: GaussianActor
    critic: Critic
    opt_actor: AdamState
    opt_critic: AdamState

    @classmethod
    def create(cls, env, hidden: tuple, ppo: PpoConfig, rng) -> "MotionAgent":
        obs_dim = env.layout.size
        actor = GaussianActor.create(obs_dim, env.action_dim, hidden, env.action_bound, rng)
        critic = Critic.create(obs_dim + env.priv_dim, hidden, rng)
        return cls(actor, critic,
                   AdamState.for_arrays(actor.arrays(), ppo.actor_lr),
                   AdamState.for_arrays(critic.net.arrays(), ppo.critic_lr))


@dataclass
class AdversaryAgent:
    actor: AdversaryActor
    critic_atk: Critic     # stability-failure stream
    critic_task: Critic    # adversary-owned critic of the task stream
    opt_actor: AdamState
    opt_catk: AdamState
    opt_ctask: AdamState

    @classmethod
    def create(cls, env, bounds: PerturbationBounds, hidden: tuple, ppo: PpoConfig,
               rng) -> "AdversaryAgent":
        dims = AttackDims.for_env(env)
        in_dim = env.layout.size + env.priv_dim
        actor = AdversaryActor.create(in_dim, dims, bounds.vector(dims), hidden, rng)
        catk = Critic.create(in_dim, hidden, rng)
        ctask = Critic.create(in_dim, hidden, rng)
        return cls(actor, catk, ctask,
                   AdamState.for_arrays(actor.arrays(), ppo.actor_lr),
                   AdamState.for_arrays(catk.net.arrays(), ppo.critic_lr),
                   AdamState.for_arrays(ctask.net.arrays(), ppo.critic_lr))


# -- environment pool -----------------------------------------------------------


class EpisodeSeeder:
    """Deterministic stream of per-episode env seeds."""

    def __init__(self, seed: int, count: int = 0):
        self.seed = int(seed)
        self.count = int(count)

    def next(self) -> int:
        self.count += 1
        return (self.seed * 1_000_003 + self.count) % (2 ** 31)


class EnvPool:
    """Lock-step batch of environment instances with episode bookkeeping."""

    def __init__(self, envs: list, seeder: EpisodeSeeder):
        self.envs = envs
        self.seeder = seeder
        self.obs = [None] * len(envs)
        self.priv = [None] * len(envs)
        self._ret = np.zeros(len(envs))
        self._len = np.zeros(len(envs), dtype=np.int64)
        self.completed: list[dict] = []
        for i, env in enumerate(envs):
            self.obs[i], self.priv[i] = env.reset(self.seeder.next())

    @property
    def n(self) -> int:
        return len(self.envs)

    def obs_matrix(self) -> np.ndarray:
        return np.stack(self.obs)

    def priv_matrix(self) -> np.ndarray:
        return np.stack([p.extras for p in self.priv])

    def record_step(self, i: int, res) -> None:
        self._ret[i] += res.reward
        self._len[i] += 1
        if res.done:
            self.completed.append({"return": float(self._ret[i]),
                                   "length": int(self._len[i]),
                                   "success": bool(res.success)})
            self._ret[i] = 0.0
            self._len[i] = 0
            self.obs[i], self.priv[i] = self.envs[i].reset(self.seeder.next())
        else:
            self.obs[i], self.priv[i] = res.obs, res.priv

    def drain_episodes(self) -> list[dict]:
        out, self.completed = self.completed, []
        return out


# -- rollouts -------------------------------------------------------------------


@dataclass
class RolloutBatch:
    """Time-major [T, E, ...] trajectories with both agents' streams."""

    obs_clean: np.ndarray
    obs_pert: np.ndarray
    priv: np.ndarray
    m_action: np.ndarray
    m_z: np.ndarray
    m_logp: np.ndarray
    atk_flat: np.ndarray
    atk_z: np.ndarray
    gate: np.ndarray
    adv_logp: np.ndarray
    r_m: np.ndarray
    r_adv_raw: np.ndarray
    r_adv_pen: np.ndarray
    v_m: np.ndarray        # [T+1, E], bootstrap row last
    v_atk: np.ndarray
    v_task: np.ndarray
    done: np.ndarray
    features: np.ndarray
    n_envs: int
    steps: int
    seed: int

    @property
    def attack_ratio(self) -> float:
        return float(self.gate.mean())


@dataclass
class RolloutRngs:
    motion: RngStream
    adversary: RngStream
    dr: RngStream
    minibatch: RngStream

    @classmethod
    def create(cls, seed: int) -> "RolloutRngs":
        return cls(RngStream(seed, STREAM_MOTION_ACTOR),
                   RngStream(seed, STREAM_ADV_ACTOR),
                   RngStream(seed, STREAM_DR),
                   RngStream(seed, STREAM_MINIBATCH))

    def snapshot(self) -> dict:
        return {k: getattr(self, k).snapshot() for k in ("motion", "adversary", "dr", "minibatch")}

    def restore(self, state: dict) -> None:
        for k, v in state.items():
            getattr(self, k).restore(v)


def _adversary_sample(actor: AdversaryActor, x: np.ndarray, rng, force_gate=None,
                      deterministic: bool = False):
    """Hybrid draw returning everything the rollout needs."""
    out, _ = mlp_forward(actor.net, x)
    mean, logit = out[:, :-1], out[:, -1]
    std, _ = actor.std_and_mask()
    if deterministic:
        z = mean.copy()
        gate = (logit >= 0.0).astype(np.int64)
    else:
        z = mean + std * rng.standard_normal(mean.shape)
        gate = (rng.uniform(size=logit.shape) < _sigmoid(logit)).astype(np.int64)
    if force_gate is not None:
        gate = np.full_like(gate, force_gate)
    delta = actor.bounds_vec * np.tanh(z)
    logp = gaussian_logp(z, mean, std) + bernoulli_logp(gate, logit)
    return delta, gate, logp, z


def collect_rollout(pool: EnvPool, motion: MotionAgent, mode: str, steps: int,
                    rngs: RolloutRngs, adversary: AdversaryAgent | None = None,
                    bounds: PerturbationBounds | None = None,
                    coeffs: AdvRewardCoeffs | None = None,
                    zero_sum: bool = False,
                    deterministic: bool = False) -> RolloutBatch:
    """Roll the joint system forward `steps` ticks across the pool.

    Per tick: the adversary (or baseline sampler) acts on clean observation
    plus privileged extras, the state attack lands on what the motion actor
    sees, the motion action passes through the action attack into the PD
    controller, and the environment steps. Env aborts propagate with the
    step index attached.
    """
    if mode not in ATTACK_MODES:
        raise ValueError(f"unknown attack mode {mode!r}; choose from {ATTACK_MODES}")
    if mode in ("pap", "cap") and adversary is None:
        raise ValueError(f"mode {mode!r} needs an adversary")
    if mode != "none" and (bounds is None or coeffs is None):
        raise ValueError("perturbed rollouts need bounds and reward coefficients")
    coeffs = coeffs or AdvRewardCoeffs()

    env0 = pool.envs[0]
    dims = AttackDims.for_env(env0)
    n_env, n_obs = pool.n, env0.layout.size
    n_act, n_cont = env0.action_dim, dims.n_continuous
    shp = lambda *tail: np.zeros((steps, n_env) + tuple(tail))

    b = RolloutBatch(
        obs_clean=shp(n_obs), obs_pert=shp(n_obs), priv=shp(env0.priv_dim),
        m_action=shp(n_act), m_z=shp(n_act), m_logp=shp(),
        atk_flat=shp(n_cont), atk_z=shp(n_cont), gate=shp(), adv_logp=shp(),
        r_m=shp(), r_adv_raw=shp(), r_adv_pen=shp(),
        v_m=np.zeros((steps + 1, n_env)), v_atk=np.zeros((steps + 1, n_env)),
        v_task=np.zeros((steps + 1, n_env)),
        done=shp(), features=shp(6),
        n_envs=n_env, steps=steps, seed=pool.seeder.seed,
    )

    for t in range(steps):
        obs = pool.obs_matrix()
        priv = pool.priv_matrix()
        x_priv = np.concatenate([obs, priv], axis=1)

        attacks: list[AttackVector] = []
        if mode == "none":
            for _ in range(n_env):
                attacks.append(AttackVector.identity(dims, gate=0))
        elif mode == "dr":
            for e in range(n_env):
                attacks.append(sample_dr(bounds, dims, rngs.dr))
            b.gate[t, :] = 1.0
        else:
            force = 1 if mode == "pap" else None
            delta, gate, logp, z = _adversary_sample(
                adversary.actor, x_priv, rngs.adversary, force_gate=force,
                deterministic=deterministic)
            b.atk_flat[t], b.atk_z[t] = delta, z
            b.gate[t], b.adv_logp[t] = gate, logp
            for e in range(n_env):
                attacks.append(AttackVector.from_flat(delta[e], int(gate[e]), dims))

        if mode == "none":
            pert = obs
        else:
            pert = np.stack([
                apply_state_attack(obs[e], attacks[e], env0.layout, bounds, dims)
                for e in range(n_env)])

        action, m_logp, m_z = act_motion(motion.actor, pert, rngs.motion,
                                         deterministic=deterministic)
        b.v_m[t], _ = motion.critic.value(x_priv)
        if adversary is not None and mode in ("pap", "cap"):
            b.v_atk[t], _ = adversary.critic_atk.value(x_priv)
            b.v_task[t], _ = adversary.critic_task.value(x_priv)

        b.obs_clean[t], b.obs_pert[t], b.priv[t] = obs, pert, priv
        b.m_action[t], b.m_z[t], b.m_logp[t] = action, m_z, m_logp

        for e in range(n_env):
            env = pool.envs[e]
            if mode == "none":
                target, gsp, gsd, ts = action[e], 1.0, 1.0, 1.0
            else:
                target, gsp, gsd, ts = apply_action_attack(action[e], attacks[e],
                                                           bounds, dims)
            nj = env.n_joints
            tau = pd_torque(env.gains, target[:nj], env.q, env.qd, gsp, gsd, ts)
            try:
                res = env.step(tau, action=action[e], executed=target)
            except EpisodeAbort as exc:
                raise EpisodeAbort(f"rollout step {t}, env {e}: {exc}") from exc
            raw, pen = adversarial_reward(res.features, coeffs, attacks[e].gate)
            if zero_sum:
                raw = -res.reward
                pen = raw - coeffs.lam * attacks[e].gate
            b.r_m[t, e] = res.reward
            b.r_adv_raw[t, e], b.r_adv_pen[t, e] = raw, pen
            b.done[t, e] = float(res.done)
            b.features[t, e] = res.features.as_array()
            pool.record_step(e, res)

    obs = pool.obs_matrix()
    x_priv = np.concatenate([obs, pool.priv_matrix()], axis=1)
    b.v_m[steps], _ = motion.critic.value(x_priv)
    if adversary is not None and mode in ("pap", "cap"):
        b.v_atk[steps], _ = adversary.critic_atk.value(x_priv)
        b.v_task[steps], _ = adversary.critic_task.value(x_priv)
    return b


# -- advantage estimation ---------------------------------------------------------


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                gamma: float, lam: float):
    """Standard GAE recursion, bootstrap blocked at done flags.

    rewards/dones are [T, E]; values is [T+1, E] (final row is the bootstrap
    value of the state after the last step). Returns (advantages, returns),
    both [T, E].
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1 or dones.shape != rewards.shape:
        raise ValueError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}")
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(t_len - 1, -1, -1):
        keep = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * keep - values[t]
        running = delta + gamma * lam * keep * running
        adv[t] = running
    return adv, adv + values[:-1]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# -- clipped objectives -------------------------------------------------------------


def clipped_surrogate(rho, adv, clip_eps):
    """Per-sample PPO surrogate min(rho*A, clip(rho)*A)."""
    rho = np.asarray(rho, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(rho * adv, np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def surrogate_active_mask(rho, adv, clip_eps):
    """1 where the unclipped branch carries the gradient."""
    rho = np.asarray(rho, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)
    return (rho * adv <= clipped * adv).astype(np.float64)


def dual_clip_objective(rho, adv_atk, adv_task, clip_eps):
    """Adversary per-sample objective: attack surrogate minus task surrogate."""
    return clipped_surrogate(rho, adv_atk, clip_eps) - clipped_surrogate(rho, adv_task, clip_eps)


# -- motion update --------------------------------------------------------------------


def motion_loss_and_grads(motion: MotionAgent, mb: dict, ppo: PpoConfig, maps=None):
    """Minibatch loss (minimized) and analytic grads for actor and critic.

    mb needs keys: obs (actor input), z, logp_old, adv, x_critic, ret.
    """
    obs, z = mb["obs"], mb["z"]
    n = obs.shape[0]
    logp, mean, cache = motion_logp(motion.actor, obs, z)
    std, std_mask = motion.actor.std_and_mask()
    rho = np.exp(logp - mb["logp_old"])
    adv = mb["adv"]
    surr = clipped_surrogate(rho, adv, ppo.clip)
    active = surrogate_active_mask(rho, adv, ppo.clip)
    entropy = gaussian_entropy(std)

    d_logp = -(active * rho * adv) / n            # d(-mean surr)/d logp
    d_mean = d_logp[:, None] * (z - mean) / std ** 2
    actor_grads_net, _ = mlp_backward(motion.actor.net, cache, d_mean)
    d_logstd = (d_logp[:, None] * ((z - mean) ** 2 / std ** 2 - 1.0)).sum(axis=0)
    d_logstd -= ppo.entropy_coef * 1.0            # entropy bonus d/dlog_std
    actor_grads = actor_grads_net.arrays() + [d_logstd * std_mask]

    sym_val = 0.0
    if maps is not None and ppo.sym_weight > 0.0:
        sym_val, sym_grads = symmetry_loss(motion.actor, obs, maps, with_grads=True)
        for g, sg in zip(actor_grads, sym_grads):
            g += ppo.sym_weight * sg

    x_c, ret = mb["x_critic"], mb["ret"]
    v, cache_v = motion.critic.value(x_c)
    verr = v - ret
    value_loss = float((verr ** 2).mean())
    d_v = (ppo.value_coef * 2.0 * verr / n)[:, None]
    critic_grads = mlp_backward(motion.critic.net, cache_v, d_v)[0].arrays()

    loss = (-float(surr.mean()) - ppo.entropy_coef * entropy
            + ppo.sym_weight * sym_val + ppo.value_coef * value_loss)
    stats = {
        "loss": loss, "surrogate": float(surr.mean()), "value_loss": value_loss,
        "entropy": entropy, "sym_loss": float(sym_val),
        "kl": float(np.mean(mb["logp_old"] - logp)),
        "clip_frac": float(np.mean(np.abs(rho - 1.0) > ppo.clip)),
    }
    return stats, actor_grads, critic_grads


def motion_total_loss(motion: MotionAgent, mb: dict, ppo: PpoConfig, maps=None) -> float:
    """Scalar mirror of motion_loss_and_grads for finite-difference checks."""
    logp, _, _ = motion_logp(motion.actor, mb["obs"], mb["z"])
    std, _ = motion.actor.std_and_mask()
    rho = np.exp(logp - mb["logp_old"])
    surr = clipped_surrogate(rho, mb["adv"], ppo.clip)
    loss = -float(surr.mean()) - ppo.entropy_coef * gaussian_entropy(std)
    if maps is not None and ppo.sym_weight > 0.0:
        loss += ppo.sym_weight * symmetry_loss(motion.actor, mb["obs"], maps)
    v, _ = motion.critic.value(mb["x_critic"])
    loss += ppo.value_coef * float(((v - mb["ret"]) ** 2).mean())
    return loss


def _minibatches(n: int, size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def ppo_update_motion(motion: MotionAgent, batch: RolloutBatch, ppo: PpoConfig,
                      gae: GaeConfig, rng, maps=None) -> dict:
    """Epochs x minibatches of clipped PPO on the motion streams.

    Non-finite losses abort the update and roll parameters back.
    """
    adv, ret = compute_gae(batch.r_m, batch.v_m, batch.done, gae.gamma, gae.lam)
    if gae.normalize:
        adv = normalize_advantages(adv)
    flat = lambda a: a.reshape((-1,) + a.shape[2:])
    data = {
        "obs": flat(batch.obs_pert), "z": flat(batch.m_z),
        "logp_old": flat(batch.m_logp), "adv": flat(adv),
        "x_critic": np.concatenate([flat(batch.obs_clean), flat(batch.priv)], axis=1),
        "ret": flat(ret),
    }
    n = data["obs"].shape[0]
    backup = (motion.actor.copy(), motion.critic.copy())
    agg: dict = {}
    count = 0
    try:
        for _ in range(ppo.epochs):
            for idx in _minibatches(n, ppo.minibatch, rng):
                mb = {k: v[idx] for k, v in data.items()}
                stats, ag, cg = motion_loss_and_grads(motion, mb, ppo, maps)
                if not np.isfinite(stats["loss"]):
                    raise NonFiniteGradientError("non-finite motion loss")
                clip_grads_(ag, ppo.max_grad_norm)
                clip_grads_(cg, ppo.max_grad_norm)
                adam_step(motion.actor.arrays(), ag, motion.opt_actor)
                adam_step(motion.critic.net.arrays(), cg, motion.opt_critic)
                for k, v in stats.items():
                    agg[k] = agg.get(k, 0.0) + v
                count += 1
    except NonFiniteGradientError:
        actor, critic = backup
        motion.actor.net = actor.net
        motion.actor.log_std = actor.log_std
        motion.critic.net = critic.net
        return {"aborted": True, "minibatches": count}
    out = {k: v / max(count, 1) for k, v in agg.items()}
    out.update({"aborted": False, "minibatches": count})
    return out


# -- adversary update ----------------------------------------------------------------


def adversary_loss_and_grads(adv_agent: AdversaryAgent, mb: dict, ppo: PpoConfig):
    """Minibatch dual-advantage loss (minimized) plus critic regressions.

    mb needs: x (adversary input), z, gate, logp_old, adv_atk, adv_task,
    ret_atk, ret_task.
    """
    x, z, gate = mb["x"], mb["z"], mb["gate"]
    n = x.shape[0]
    logp, mean, logit, cache = adversary_logp(adv_agent.actor, x, z, gate)
    std, std_mask = adv_agent.actor.std_and_mask()
    rho = np.exp(logp - mb["logp_old"])
    obj = dual_clip_objective(rho, mb["adv_atk"], mb["adv_task"], ppo.clip)
    act_atk = surrogate_active_mask(rho, mb["adv_atk"], ppo.clip)
    act_task = surrogate_active_mask(rho, mb["adv_task"], ppo.clip)
    p = _sigmoid(logit)
    ent_b = bernoulli_entropy(logit)
    entropy = gaussian_entropy(std) + float(ent_b.mean())

    d_logp = -(rho * (act_atk * mb["adv_atk"] - act_task * mb["adv_task"])) / n
    d_mean = d_logp[:, None] * (z - mean) / std ** 2
    d_logit = d_logp * (gate - p)
    d_logit -= ppo.entropy_coef * (-logit * p * (1.0 - p)) / n   # entropy bonus
    d_out = np.concatenate([d_mean, d_logit[:, None]], axis=1)
    net_grads, _ = mlp_backward(adv_agent.actor.net, cache, d_out)
    d_logstd = (d_logp[:, None] * ((z - mean) ** 2 / std ** 2 - 1.0)).sum(axis=0)
    d_logstd -= ppo.entropy_coef * 1.0
    actor_grads = net_grads.arrays() + [d_logstd * std_mask]

    lips_val = 0.0
    if ppo.lips_weight > 0.0:
        lips_val, lips_g = lipschitz_grads(adv_agent.actor.net)
        for g, lg in zip(actor_grads, lips_g):
            g += ppo.lips_weight * lg

    critic_grads = []
    value_losses = []
    for critic, ret_key in ((adv_agent.critic_atk, "ret_atk"),
                            (adv_agent.critic_task, "ret_task")):
        v, cache_v = critic.value(x)
        verr = v - mb[ret_key]
        value_losses.append(float((verr ** 2).mean()))
        d_v = (ppo.value_coef * 2.0 * verr / n)[:, None]
        critic_grads.append(mlp_backward(critic.net, cache_v, d_v)[0].arrays())

    loss = (-float(obj.mean()) - ppo.entropy_coef * entropy + ppo.lips_weight * lips_val
            + ppo.value_coef * (value_losses[0] + value_losses[1]))
    stats = {
        "loss": loss, "objective": float(obj.mean()), "lips": lips_val,
        "entropy": entropy, "value_loss_atk": value_losses[0],
        "value_loss_task": value_losses[1],
        "kl": float(np.mean(mb["logp_old"] - logp)),
        "gate_prob": float(p.mean()),
    }
    return stats, actor_grads, critic_grads


def adversary_total_loss(adv_agent: AdversaryAgent, mb: dict, ppo: PpoConfig) -> float:
    """Scalar mirror of adversary_loss_and_grads for finite differences."""
    logp, _, logit, _ = adversary_logp(adv_agent.actor, mb["x"], mb["z"], mb["gate"])
    std, _ = adv_agent.actor.std_and_mask()
    rho = np.exp(logp - mb["logp_old"])
    obj = dual_clip_objective(rho, mb["adv_atk"], mb["adv_task"], ppo.clip)
    entropy = gaussian_entropy(std) + float(bernoulli_entropy(logit).mean())
    from .policy import lipschitz_penalty
    loss = (-float(obj.mean()) - ppo.entropy_coef * entropy
            + ppo.lips_weight * lipschitz_penalty(adv_agent.actor.net))
    for critic, ret_key in ((adv_agent.critic_atk, "ret_atk"),
                            (adv_agent.critic_task, "ret_task")):
        v, _ = critic.value(mb["x"])
        loss += ppo.value_coef * float(((v - mb[ret_key]) ** 2).mean())
    return loss


def adversary_update(adv_agent: AdversaryAgent, batch: RolloutBatch, ppo: PpoConfig,
                     gae: GaeConfig, rng) -> dict:
    """Dual-advantage clipped update of the adversary plus its two critics."""
    adv_atk, ret_atk = compute_gae(batch.r_adv_pen, batch.v_atk, batch.done,
                                   gae.gamma_adv, gae.lam)
    adv_task, ret_task = compute_gae(batch.r_m, batch.v_task, batch.done,
                                     gae.gamma, gae.lam)
    if gae.normalize:
        adv_atk = normalize_advantages(adv_atk)
        adv_task = normalize_advantages(adv_task)
    flat = lambda a: a.reshape((-1,) + a.shape[2:])
    data = {
        "x": np.concatenate([flat(batch.obs_clean), flat(batch.priv)], axis=1),
        "z": flat(batch.atk_z), "gate": flat(batch.gate),
        "logp_old": flat(batch.adv_logp),
        "adv_atk": flat(adv_atk), "adv_task": flat(adv_task),
        "ret_atk": flat(ret_atk), "ret_task": flat(ret_task),
    }
    n = data["x"].shape[0]
    backup = (adv_agent.actor.copy(), adv_agent.critic_atk.copy(),
              adv_agent.critic_task.copy())
    agg: dict = {}
    count = 0
    try:
        for _ in range(ppo.epochs):
            for idx in _minibatches(n, ppo.minibatch, rng):
                mb = {k: v[idx] for k, v in data.items()}
                stats, ag, cgs = adversary_loss_and_grads(adv_agent, mb, ppo)
                if not np.isfinite(stats["loss"]):
                    raise NonFiniteGradientError("non-finite adversary loss")
                clip_grads_(ag, ppo.max_grad_norm)
                adam_step(adv_agent.actor.arrays(), ag, adv_agent.opt_actor)
                for cg, critic, opt in zip(cgs,
                                           (adv_agent.critic_atk, adv_agent.critic_task),
                                           (adv_agent.opt_catk, adv_agent.opt_ctask)):
                    clip_grads_(cg, ppo.max_grad_norm)
                    adam_step(critic.net.arrays(), cg, opt)
                for k, v in stats.items():
                    agg[k] = agg.get(k, 0.0) + v
                count += 1
    except NonFiniteGradientError:
        actor, catk, ctask = backup
        adv_agent.actor.net = actor.net
        adv_agent.actor.log_std = actor.log_std
        adv_agent.critic_atk.net = catk.net
        adv_agent.critic_task.net = ctask.net
        return {"aborted": True, "minibatches": count}
    out = {k: v / max(count, 1) for k, v in agg.items()}
    out.update({"aborted": False, "minibatches": count})
    return out


# -- training loops --------------------------------------------------------------------


def _episode_stats(episodes: list[dict]) -> dict:
    if not episodes:
        return {"episodes": 0, "mean_return": float("nan"),
                "mean_length": float("nan"), "success_rate": float("nan")}
    return {
        "episodes": len(episodes),
        "mean_return": float(np.mean([e["return"] for e in episodes])),
        "mean_length": float(np.mean([e["length"] for e in episodes])),
        "success_rate": float(np.mean([e["success"] for e in episodes])),
    }


def pretrain_motion(pool: EnvPool, motion: MotionAgent, ppo: PpoConfig, gae: GaeConfig,
                    iterations: int, rngs: RolloutRngs, steps: int = 256, maps=None,
                    plateau_window: int = 50, plateau_tol: float = 0.0,
                    anneal_after: int = 0, anneal_log_std: float = -1.5,
                    sink=None) -> list[dict]:
    """Standard PPO in clean environments until the cap or a reward plateau.

    If anneal_after > 0, the policy's log-std is dropped to anneal_log_std at
    that iteration so the late-training distribution matches the
    deterministic deployment mode (important where discrete footholds make
    the mean gait diverge from the sampled one).
    """
    history: list[dict] = []
    best = -np.inf
    since_best = 0
    for it in range(iterations):
        if anneal_after and it == anneal_after:
            motion.actor.log_std[:] = np.minimum(motion.actor.log_std, anneal_log_std)
        batch = collect_rollout(pool, motion, "none", steps, rngs)
        stats = ppo_update_motion(motion, batch, ppo, gae, rngs.minibatch, maps)
        rec = {"iteration": it, **_episode_stats(pool.drain_episodes()), **stats}
        history.append(rec)
        if sink is not None:
            sink(rec)
        if plateau_tol > 0.0 and rec["episodes"] > 0:
            if rec["mean_return"] > best + plateau_tol:
                best = rec["mean_return"]
                since_best = 0
            else:
                since_best += 1
                if since_best >= plateau_window:
                    break
    return history


def train_motion_under_dr(pool: EnvPool, motion: MotionAgent, bounds: PerturbationBounds,
                          coeffs: AdvRewardCoeffs, ppo: PpoConfig, gae: GaeConfig,
                          iterations: int, rngs: RolloutRngs, steps: int = 256,
                          maps=None, sink=None) -> list[dict]:
    """Motion PPO with uniform domain-randomized perturbations every step."""
    history = []
    for it in range(iterations):
        batch = collect_rollout(pool, motion, "dr", steps, rngs, bounds=bounds,
                                coeffs=coeffs)
        stats = ppo_update_motion(motion, batch, ppo, gae, rngs.minibatch, maps)
        rec = {"iteration": it, **_episode_stats(pool.drain_episodes()), **stats}
        history.append(rec)
        if sink is not None:
            sink(rec)
    return history


class TrainingHalted(RuntimeError):
    """A phase failed; the last good checkpoint was retained by the caller."""


def alternating_train(schedule: AlternationSchedule, pool: EnvPool, motion: MotionAgent,
                      adversary: AdversaryAgent, ppo_m: PpoConfig, ppo_adv: PpoConfig,
                      gae: GaeConfig, mode: str, bounds: PerturbationBounds,
                      coeffs: AdvRewardCoeffs, rngs: RolloutRngs, steps: int = 256,
                      maps=None, zero_sum: bool = False, sink=None,
                      start_iter: int = 0, adv_updates_done: int = 0,
                      lam_warmup: int = 50, pap_warmup: int = 0,
                      adv_anneal_after: int = 0,
                      adv_anneal_log_std: float = -2.0) -> list[dict]:
    """Alternate adversary phases (motion frozen) and motion phases (adversary
    frozen) for n_iter outer iterations.

    Two cold-start aids for the gated adversary (both recorded per phase):
    for the first pap_warmup adversary updates the gate is forced open, so
    the attack channels learn from dense perturbation experience; after the
    switch the per-attack penalty ramps linearly to its configured value
    over lam_warmup further updates, letting the budget prune attacks to
    critical states instead of collapsing an untrained gate. When
    adv_anneal_after > 0 the adversary's exploration noise is dropped at
    that update so its deterministic (mean + thresholded gate) behavior
    matches what it learned stochastically.

    sink(record) is called once per update phase and once per completed
    iteration (record["phase"] == "iteration"); any exception halts training
    after the caller's last checkpoint.
    """
    from dataclasses import replace as _replace

    if mode not in ("pap", "cap"):
        raise ValueError(f"alternating training needs mode pap or cap, got {mode!r}")
    records: list[dict] = []
    adv_updates = adv_updates_done

    def emit(rec):
        records.append(rec)
        if sink is not None:
            sink(rec)

    for it in range(start_iter, schedule.n_iter):
        for j in range(schedule.n_adv):
            if adv_anneal_after and adv_updates == adv_anneal_after:
                adversary.actor.log_std[:] = np.minimum(adversary.actor.log_std,
                                                        adv_anneal_log_std)
            persist = mode == "pap" or adv_updates < pap_warmup
            if persist:
                # full penalty: with the gate forced open it is a flat
                # per-step cost, which also rewards ending episodes early
                warm = 1.0
            else:
                gated_updates = adv_updates - pap_warmup
                warm = 1.0 if lam_warmup <= 0 else min(1.0, gated_updates / lam_warmup)
            eff = _replace(coeffs, lam=coeffs.lam * warm)
            batch = collect_rollout(pool, motion, "pap" if persist else "cap",
                                    steps, rngs, adversary=adversary, bounds=bounds,
                                    coeffs=eff, zero_sum=zero_sum)
            stats = adversary_update(adversary, batch, ppo_adv, gae, rngs.minibatch)
            adv_updates += 1
            emit({"iteration": it, "phase": "adv", "phase_idx": j,
                  "attack_ratio": batch.attack_ratio, "effective_lam": eff.lam,
                  "persistent": persist,
                  "mean_r_adv": float(batch.r_adv_pen.mean()),
                  **_episode_stats(pool.drain_episodes()), **stats})
        for j in range(schedule.n_motion):
            batch = collect_rollout(pool, motion, mode, steps, rngs,
                                    adversary=adversary, bounds=bounds,
                                    coeffs=coeffs, zero_sum=zero_sum)
            stats = ppo_update_motion(motion, batch, ppo_m, gae, rngs.minibatch, maps)
            emit({"iteration": it, "phase": "motion", "phase_idx": j,
                  "attack_ratio": batch.attack_ratio,
                  **_episode_stats(pool.drain_episodes()), **stats})
        emit({"iteration": it, "phase": "iteration", "adv_updates": adv_updates})
    return records
