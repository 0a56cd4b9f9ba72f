"""Noise schedule, guided-denoising steps, and the three-branch loop.

Conventions
-----------
``alpha_bar`` is the cumulative product of (1 - beta); index 0 is 1 by
definition and index T is the noisiest level.  The loop runs the step index
``t`` down from the start index to 1, one ``alpha_bar[t] -> alpha_bar[t-1]``
update per iteration.

Noise sharing: one normal draw (the "shared noise", derived from the run
seed) plays three roles so the whole loop is analytically checkable: it
noisies the initial latent, it re-noisies the source branch at every level,
and it is the random term of every sampling step.  The consistency term
recovers exactly this draw, which ties the target trajectory back to the
original latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import attention as attn
from .errors import (
    AlphaOutOfRange,
    BadScheduleParams,
    EtaOutOfRange,
    ShapeMismatch,
    UnknownConfigKey,
)
from .grid import FeatureGrid, Mask
from .rng import CounterRng, derive_seed


@dataclass(frozen=True)
class NoiseSchedule:
    total_steps: int
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] == 1, strictly decreasing


@dataclass(frozen=True)
class EtaSchedule:
    lo: float = 0.5
    hi: float = 0.9
    ramp_start: float = 0.3
    ramp_end: float = 0.7


@dataclass(frozen=True)
class CfgScales:
    src: float = 1.0
    ref: float = 2.0
    tgt: float = 2.0


@dataclass(frozen=True)
class SamplerConfig:
    total_steps: int = 15
    strength: float = 0.7
    beta_start: float = 1e-4
    beta_end: float = 0.02
    eta: EtaSchedule = field(default_factory=EtaSchedule)
    t_c: int = 3
    t_s: int = 5
    fuse_steps: int = 4
    cfg: CfgScales = field(default_factory=CfgScales)
    seed: int = 0

    @property
    def effective_steps(self) -> int:
        return int(np.floor(self.total_steps * self.strength))

    @classmethod
    def from_json(cls, obj: dict) -> "SamplerConfig":
        known = {"T", "strength", "beta_start", "beta_end", "eta", "t_c", "t_s",
                 "fuse_steps", "cfg", "seed"}
        unknown = set(obj) - known
        if unknown:
            raise UnknownConfigKey(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "T" in obj:
            kwargs["total_steps"] = int(obj["T"])
        for key in ("strength", "beta_start", "beta_end"):
            if key in obj:
                kwargs[key] = float(obj[key])
        for key in ("t_c", "t_s", "fuse_steps", "seed"):
            if key in obj:
                kwargs[key] = int(obj[key])
        if "eta" in obj:
            eta_keys = {"lo", "hi", "ramp_start", "ramp_end"}
            bad = set(obj["eta"]) - eta_keys
            if bad:
                raise UnknownConfigKey(f"unknown eta keys: {sorted(bad)}")
            kwargs["eta"] = EtaSchedule(**{k: float(v) for k, v in obj["eta"].items()})
        if "cfg" in obj:
            cfg_keys = {"src", "ref", "tgt"}
            bad = set(obj["cfg"]) - cfg_keys
            if bad:
                raise UnknownConfigKey(f"unknown cfg keys: {sorted(bad)}")
            kwargs["cfg"] = CfgScales(**{k: float(v) for k, v in obj["cfg"].items()})
        return cls(**kwargs)


@dataclass(frozen=True)
class BranchNoises:
    eps_src: np.ndarray
    eps_ref: np.ndarray
    eps_tgt: np.ndarray
    eps_cons: np.ndarray


@dataclass
class StepTrace:
    """Per-iteration observables handed to ``run_three_branch`` observers."""

    iteration: int
    t: int
    routed_src: attn.RoutedQkv
    routed_ref: attn.RoutedQkv
    routed_tgt: attn.RoutedQkv
    map_src: np.ndarray
    map_ref: np.ndarray
    map_tgt: np.ndarray
    noises: BranchNoises
    eta_tgt: float


def build_schedule(total_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if total_steps < 1:
        raise BadScheduleParams(f"need at least one step, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise BadScheduleParams(f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, total_steps)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(total_steps=total_steps, alpha_bar=alpha_bar)


def shared_noise_seed(seed: int) -> int:
    return derive_seed(seed, "shared-noise")


def forward_noise(
    z0: FeatureGrid,
    schedule: NoiseSchedule,
    strength: float,
    rng_seed: int,
    noise: np.ndarray | None = None,
) -> tuple[FeatureGrid, int]:
    """Noise the latent up to the start level implied by ``strength``.

    Returns the noised grid and the start step index
    (floor(total_steps * strength)).  ``noise`` overrides the seeded draw for
    tests.
    """
    if not 0.0 < strength <= 1.0:
        raise BadScheduleParams(f"strength must be in (0, 1], got {strength}")
    start = int(np.floor(schedule.total_steps * strength))
    a_bar = schedule.alpha_bar[start]
    eps = CounterRng(rng_seed).normals(z0.data.shape) if noise is None else noise
    z = np.sqrt(a_bar) * z0.data + np.sqrt(1.0 - a_bar) * eps
    return FeatureGrid(z), start


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeMismatch("guidance tensors have different shapes")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def consistency_noise(z_src_t: np.ndarray, z0: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    """Noise implied by the source latent relative to the clean latent."""
    if not 0.0 < alpha_bar_t < 1.0:
        raise AlphaOutOfRange(f"alpha_bar must be in (0, 1), got {alpha_bar_t}")
    return (z_src_t - np.sqrt(alpha_bar_t) * z0) / np.sqrt(1.0 - alpha_bar_t)


def eta_at(progress: float, sched: EtaSchedule | None = None) -> float:
    """Noise-scale factor along the loop: flat, linear ramp, flat."""
    sched = sched or EtaSchedule()
    if progress < sched.ramp_start:
        return sched.lo
    if progress > sched.ramp_end:
        return sched.hi
    frac = (progress - sched.ramp_start) / (sched.ramp_end - sched.ramp_start)
    return sched.lo + (sched.hi - sched.lo) * frac


def ddcm_step(
    z_t: np.ndarray,
    eps: np.ndarray,
    alpha_bar_t: float,
    alpha_bar_prev: float,
    eta: float,
    rng_seed: int,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One denoising update.

    Decomposes into the predicted clean latent, a direction term scaled by
    sqrt((1 - eta^2)(1 - alpha_prev)), and a random term scaled by
    eta * sqrt(1 - alpha_prev).  eta = 0 is the deterministic limit; eta = 1
    drops the direction term entirely.  ``noise`` overrides the seeded draw.
    """
    if not (0.0 < alpha_bar_t <= 1.0) or not (0.0 < alpha_bar_prev <= 1.0):
        raise AlphaOutOfRange(f"alpha_bar values must be in (0, 1], got ({alpha_bar_t}, {alpha_bar_prev})")
    if not 0.0 <= eta <= 1.0:
        raise EtaOutOfRange(f"eta must be in [0, 1], got {eta}")
    pred_z0 = (z_t - np.sqrt(1.0 - alpha_bar_t) * eps) / np.sqrt(alpha_bar_t)
    dir_coef = np.sqrt((1.0 - eta * eta) * (1.0 - alpha_bar_prev))
    sigma = eta * np.sqrt(1.0 - alpha_bar_prev)
    if sigma == 0.0:
        return np.sqrt(alpha_bar_prev) * pred_z0 + dir_coef * eps
    eps_t = CounterRng(rng_seed).normals(z_t.shape) if noise is None else noise
    return np.sqrt(alpha_bar_prev) * pred_z0 + dir_coef * eps + sigma * eps_t


class LinearToyPredictor:
    """Noise estimator for tests: eps(z, t, l) = z A^T + mean(l) B^T.

    Linear in the latent so loop behavior has closed forms; the prompt enters
    only through the mean embedding, and the unconditional variant drops that
    bias entirely.
    """

    def __init__(self, channels: int, embed_dim: int = attn.EMBED_DIM, seed: int = 0x70E):
        rng = CounterRng(derive_seed(seed, "toy-predictor", channels, embed_dim))
        self.a = rng.normals((channels, channels)) * (0.5 / np.sqrt(channels))
        self.b = rng.normals((channels, embed_dim)) * (0.5 / np.sqrt(embed_dim))

    def __call__(self, latent_cells: np.ndarray, t: int, embeddings: np.ndarray | None) -> np.ndarray:
        eps = latent_cells @ self.a.T
        if embeddings is not None:
            eps = eps + embeddings.mean(axis=0) @ self.b.T
        return eps


class ZeroPredictor:
    """Predicts no noise; isolates the sampler's own algebra."""

    def __call__(self, latent_cells: np.ndarray, t: int, embeddings: np.ndarray | None) -> np.ndarray:
        return np.zeros_like(latent_cells)


def run_three_branch(
    z0_src: FeatureGrid,
    z_tgt_start: FeatureGrid,
    prompts: tuple[str, str],
    config: SamplerConfig,
    predictor: Callable[[np.ndarray, int, np.ndarray | None], np.ndarray],
    mask: Mask | None = None,
    max_steps: int | None = None,
    observer: Callable[[StepTrace], None] | None = None,
) -> FeatureGrid:
    """Drive the source/reference/target branches to the final target latent.

    The source branch is re-noised analytically from the clean latent at each
    level.  The reference branch starts from the re-noised clean latent and
    follows the same consistent update as the target with eta pinned to 1;
    the target uses the dynamic eta ramp.  Attention maps and Q/K/V routing
    couple the branches through the noise predictor's input.
    """
    if z0_src.data.shape != z_tgt_start.data.shape:
        raise ShapeMismatch("start latent shape differs from the clean latent")
    schedule = build_schedule(config.total_steps, config.beta_start, config.beta_end)
    start = config.effective_steps
    n_steps = start if max_steps is None else min(start, max_steps)
    if n_steps <= 0:
        return z_tgt_start

    src_prompt = attn.tokenize_prompt(prompts[0], dim=attn.EMBED_DIM)
    tgt_prompt = attn.tokenize_prompt(prompts[1], dim=attn.EMBED_DIM)
    align = attn.align_tokens(src_prompt, tgt_prompt)

    a_bar = schedule.alpha_bar
    z0 = z0_src.data
    shared = CounterRng(shared_noise_seed(config.seed)).normals(z0.shape)

    def renoise(level: int) -> np.ndarray:
        return np.sqrt(a_bar[level]) * z0 + np.sqrt(1.0 - a_bar[level]) * shared

    z_tgt = z_tgt_start.data.copy()
    z_ref = renoise(start)

    # Countdown thresholds: gate open during the first t_c (resp. t_s)
    # iterations, expressed as t >= threshold with t running start..1.
    t_c_eff = start - config.t_c + 1
    t_s_eff = start - config.t_s + 1

    scales = config.cfg
    for i in range(1, n_steps + 1):
        t = start - i + 1
        z_src = renoise(t)

        src_state = attn.make_branch_state(z_src.reshape(-1, z0.shape[2]), src_prompt)
        ref_state = attn.make_branch_state(z_ref.reshape(-1, z0.shape[2]), tgt_prompt)
        tgt_state = attn.make_branch_state(z_tgt.reshape(-1, z0.shape[2]), tgt_prompt)

        routed_src, routed_ref, routed_tgt = attn.route_qkv(src_state, ref_state, tgt_state, t, t_s_eff)
        map_src = attn.attention_map(routed_src.q, routed_src.k)
        map_ref = attn.replace_attention(map_src, attn.attention_map(routed_ref.q, routed_ref.k), align, t, t_c_eff)
        map_tgt = attn.attention_map(routed_tgt.q, routed_tgt.k)

        attended_src = src_state.latent + attn.attend(map_src, routed_src.v)
        attended_ref = ref_state.latent + attn.attend(map_ref, routed_ref.v)
        attended_tgt = tgt_state.latent + attn.attend(map_tgt, routed_tgt.v)

        def guided(cells: np.ndarray, emb: np.ndarray, scale: float) -> np.ndarray:
            return cfg_combine(predictor(cells, t, emb), predictor(cells, t, None), scale)

        eps_src = guided(attended_src, src_prompt.embeddings, scales.src).reshape(z0.shape)
        eps_ref = guided(attended_ref, tgt_prompt.embeddings, scales.ref).reshape(z0.shape)
        eps_tgt = guided(attended_tgt, tgt_prompt.embeddings, scales.tgt).reshape(z0.shape)
        eps_cons = consistency_noise(z_src, z0, a_bar[t])
        noises = BranchNoises(eps_src=eps_src, eps_ref=eps_ref, eps_tgt=eps_tgt, eps_cons=eps_cons)

        eta_tgt = eta_at(i / n_steps, config.eta)
        noise_seed = shared_noise_seed(config.seed)
        z_tgt = ddcm_step(z_tgt, eps_tgt - eps_src + eps_cons, a_bar[t], a_bar[t - 1], eta_tgt, noise_seed)
        z_ref = ddcm_step(z_ref, eps_ref - eps_src + eps_cons, a_bar[t], a_bar[t - 1], 1.0, noise_seed)

        if mask is not None:
            z_tgt = attn.masked_fuse(
                FeatureGrid(z_tgt), FeatureGrid(z_ref), mask, i, config.fuse_steps
            ).data

        if observer is not None:
            observer(StepTrace(
                iteration=i, t=t,
                routed_src=routed_src, routed_ref=routed_ref, routed_tgt=routed_tgt,
                map_src=map_src, map_ref=map_ref, map_tgt=map_tgt,
                noises=noises, eta_tgt=eta_tgt,
            ))

    return FeatureGrid(z_tgt)
