"""Buffer-based lightweight fine-tuning on a single target netlist.

The loop alternates between sampling placements with the current model,
folding them into an energy-sorted buffer, and running denoising-loss updates
over buffer entries where each term is scaled by a quality weight
omega(e_rel) = e_rel^kappa. A diversity regularizer penalizes entropy
collapse below the pre-fine-tuning level through a differentiable one-step
proxy. The incoming parameters are never mutated (copy-on-write).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, zero_grads
from .diffusion import make_schedule, training_target
from .errors import NumericError, ValidationError
from .guidance import GuidanceConfig, sample_placement
from .metrics import EnergySpec, composite_energy, relative_energy, update_bounds
from .netlist import Netlist, Placement
from .scorenet import (
    ScoreNetParams,
    build_graph,
    encode_netlist,
    ema_update,
    grad_global_norm,
    score_forward,
)


@dataclass
class FinetuneConfig:
    """Fine-tuning budget and regularizer knobs."""

    steps: int = 2000
    samples_per_round: int = 16
    inner_steps: int = 64
    buffer_capacity: int = 256
    lr: float = 3e-5
    batch_size: int = 8
    grad_clip: float = 1.0
    ema_decay: float = 0.999
    omega_kappa: float = 4.0
    lambda_div: float = 0.1
    anchor_l2: float = 1e-3
    trainable: tuple[str, ...] = ("energy.", "head.")
    entropy_samples: int = 4
    eval_samples: int = 12
    resolution: int = 32
    data_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.samples_per_round < 0 or self.buffer_capacity < 1:
            raise ValidationError("invalid fine-tune budget")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ValidationError("data_fraction must lie in (0, 1]")


@dataclass
class PlacementBuffer:
    """Energy-sorted placement pool for one target netlist."""

    capacity: int
    entries: list[tuple[float, Placement, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def energies(self) -> list[float]:
        return [e for e, _, _ in self.entries]


def buffer_add(
    buffer: PlacementBuffer,
    placement: Placement,
    energy_spec: EnergySpec,
    netlist: Netlist,
    resolution: int = 32,
) -> PlacementBuffer:
    """Insert a placement, keeping entries sorted by energy ascending.

    Computes the composite energy, folds it into the spec's running bounds,
    derives the relative energy, and evicts the worst entry past capacity.
    Stored relative energies are refreshed against the updated bounds so the
    quality weighting always discriminates over the currently observed range.
    """
    energy = composite_energy(netlist, placement, energy_spec, resolution)
    update_bounds(energy_spec, netlist.name, energy)
    bounds = energy_spec.bounds[netlist.name]
    e_rel = relative_energy(energy, bounds)
    bisect.insort(buffer.entries, (energy, placement, e_rel), key=lambda item: item[0])
    if len(buffer.entries) > buffer.capacity:
        buffer.entries.pop()
    buffer.entries = [
        (e, p, relative_energy(e, bounds)) for e, p, _ in buffer.entries
    ]
    return buffer


def weight_fn(e_rel: float, kappa: float = 4.0) -> float:
    """Quality weight omega = e_rel^kappa, monotone increasing on (0, 1]."""
    if not (0.0 < e_rel <= 1.0):
        raise ValidationError(f"e_rel must lie in (0, 1], got {e_rel}")
    return e_rel**kappa


def _pairwise_spread(coord_sets: list[np.ndarray]) -> float:
    total, pairs = 0.0, 0
    for a in range(len(coord_sets)):
        for b in range(a + 1, len(coord_sets)):
            total += math.sqrt(float(np.mean((coord_sets[a] - coord_sets[b]) ** 2)))
            pairs += 1
    return total / pairs if pairs else 0.0


def entropy_estimate(
    params: ScoreNetParams,
    netlist: Netlist,
    n_samples: int,
    seed: int,
    config: GuidanceConfig | None = None,
) -> float:
    """Diversity proxy: mean pairwise RMS distance of sampled placements.

    Stands in for the intractable model entropy; identical samples give 0 and
    the value is always non-negative.
    """
    if n_samples < 2:
        raise ValidationError("entropy estimate needs at least 2 samples")
    cfg = config or GuidanceConfig(steps=10)
    sets = [
        sample_placement(params, netlist, cfg, seed=seed + 31 * k)[0].coords
        for k in range(n_samples)
    ]
    return _pairwise_spread(sets)


def _entropy_proxy_tensor(
    params: ScoreNetParams,
    enc: Tensor,
    n_modules: int,
    schedule,
    rng: np.random.Generator,
    n_samples: int,
    e_rel: float | None,
) -> Tensor:
    """Differentiable one-step entropy proxy.

    Denoises ``n_samples`` fresh noise draws once at mid-schedule under the
    conditioning level actually used at sampling time, and measures the mean
    pairwise RMS distance of the implied clean placements; gradients flow
    into the network through the single denoising pass.
    """
    t_mid = max(1, schedule.T // 2)
    ab = schedule.alpha_bar[t_mid]
    preds = []
    for _ in range(n_samples):
        z = rng.standard_normal((n_modules, 2))
        eps_hat = score_forward(params, z, t_mid, enc, e_rel, schedule.T)
        x0 = (Tensor(z) - math.sqrt(1.0 - ab) * eps_hat) * (1.0 / math.sqrt(ab))
        preds.append(x0)
    total = None
    pairs = 0
    for a in range(len(preds)):
        for b in range(a + 1, len(preds)):
            d = ((preds[a] - preds[b]).pow(2.0).mean() + 1e-12).sqrt()
            total = d if total is None else total + d
            pairs += 1
    return total * (1.0 / pairs)


def finetune(
    params: ScoreNetParams,
    target_netlist: Netlist,
    config: FinetuneConfig,
    guidance_config: GuidanceConfig | None = None,
) -> tuple[ScoreNetParams, dict]:
    """Adapt pre-trained weights to one unseen netlist.

    Rounds of {sample -> buffer -> weighted denoising updates} with an
    entropy-floor penalty lambda * max(0, beta - H); beta is the
    pre-fine-tuning proxy value so diversity may not collapse below the
    starting level. Adaptation is lightweight in the literal sense: only the
    parameter groups in ``config.trainable`` (energy-conditioning pathway and
    output head by default) receive updates, anchored to their pre-trained
    values, so the learned placement manifold survives while the conditional
    re-aims at the buffer's elite placements. Raises NumericError (report
    attached) if the loss diverges past 10x its warmup baseline.
    """
    params = params.copy()
    anchor = {k: t.value.copy() for k, t in params.tensors.items()}
    gcfg = guidance_config or GuidanceConfig(steps=20)
    spec = EnergySpec.for_netlist(target_netlist, config.resolution)
    buffer = PlacementBuffer(capacity=config.buffer_capacity)
    schedule = make_schedule(params.train_schedule, params.train_T)
    rng = np.random.default_rng(config.seed)
    graph = build_graph(target_netlist)

    sample_budget = (
        max(1, round(config.samples_per_round * config.data_fraction))
        if config.samples_per_round
        else 0
    )
    seeds_used: list[int] = []

    def draw_samples(round_idx: int, count: int) -> list[float]:
        energies = []
        for k in range(count):
            s = config.seed + 100_000 * (round_idx + 1) + k
            seeds_used.append(s)
            placement, _ = sample_placement(params, target_netlist, gcfg, seed=s, energy_spec=spec)
            buffer_add(buffer, placement, spec, target_netlist, config.resolution)
            energies.append(composite_energy(target_netlist, placement, spec, config.resolution))
        return energies

    energy_before = draw_samples(0, config.samples_per_round)
    beta = float(
        _entropy_proxy_tensor(
            params, Tensor(encode_netlist(params, graph).value), target_netlist.n_modules,
            schedule, np.random.default_rng(config.seed + 1), max(config.entropy_samples, 2),
            gcfg.e_rel_target,
        ).value
    )
    entropy_curve = [beta]

    adam_m = {k: np.zeros_like(t.value) for k, t in params.tensors.items()}
    adam_v = {k: np.zeros_like(t.value) for k, t in params.tensors.items()}
    warmup_losses: list[float] = []
    steps_done = 0
    n_rounds = max(1, math.ceil(config.steps / max(config.inner_steps, 1)))
    for round_idx in range(n_rounds):
        if round_idx > 0:
            draw_samples(round_idx, sample_budget)
        inner_budget = min(config.inner_steps, config.steps - steps_done)
        for _ in range(inner_budget):
            if not len(buffer):
                break
            zero_grads(params.tensors.values())
            idx = rng.integers(0, len(buffer), size=min(config.batch_size, len(buffer)))
            loss_val = 0.0
            for i in idx:
                energy, placement, e_rel = buffer.entries[i]
                omega = weight_fn(e_rel, config.omega_kappa)
                x_t, eps, t_step = training_target(placement.coords, None, schedule, rng)
                enc_train = encode_netlist(params, graph)
                eps_hat = score_forward(params, x_t, t_step, enc_train, e_rel, schedule.T)
                loss = (eps_hat - Tensor(eps)).pow(2.0).mean() * omega
                loss.backward()
                loss_val += float(loss.value)
            n_terms = len(idx)
            if config.lambda_div > 0.0:
                enc_div = encode_netlist(params, graph)
                h_proxy = _entropy_proxy_tensor(
                    params, enc_div, target_netlist.n_modules, schedule, rng,
                    max(config.entropy_samples, 2), gcfg.e_rel_target,
                )
                gap = (Tensor(beta) - h_proxy).relu() * config.lambda_div
                if gap.requires_grad:
                    gap.backward()
                loss_val += float(gap.value)
                entropy_curve.append(float(h_proxy.value))
            loss_val /= max(n_terms, 1)
            # Divergence guard: the omega weighting makes single batches
            # noisy, so the baseline averages a short warmup window.
            if len(warmup_losses) < 5:
                warmup_losses.append(loss_val)
            baseline = max(float(np.mean(warmup_losses)), 1e-3)
            diverged = len(warmup_losses) >= 5 and loss_val > 10.0 * baseline
            if not math.isfinite(loss_val) or diverged:
                raise NumericError(
                    f"fine-tuning diverged at step {steps_done}: loss {loss_val:.4g}",
                    report={
                        "steps_done": steps_done,
                        "baseline_loss": baseline,
                        "loss": loss_val,
                        "seeds": seeds_used,
                    },
                )
            norm = grad_global_norm(params) / max(n_terms, 1)
            clip_scale = 1.0 if norm <= config.grad_clip else config.grad_clip / norm
            for k, t in params.tensors.items():
                if config.trainable and not any(k.startswith(p) for p in config.trainable):
                    continue
                g = (t.grad / max(n_terms, 1) if t.grad is not None else np.zeros_like(t.value))
                g = g * clip_scale
                g = g + config.anchor_l2 * (t.value - anchor[k])
                adam_m[k] = 0.9 * adam_m[k] + 0.1 * g
                adam_v[k] = 0.999 * adam_v[k] + 0.001 * g**2
                m_hat = adam_m[k] / (1.0 - 0.9 ** (steps_done + 1))
                v_hat = adam_v[k] / (1.0 - 0.999 ** (steps_done + 1))
                t.value = t.value - config.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
            ema_update(params, config.ema_decay)
            steps_done += 1
        if steps_done >= config.steps:
            break

    energy_after = []
    for k in range(config.eval_samples):
        s = config.seed + 900_000 + k
        seeds_used.append(s)
        placement, _ = sample_placement(params, target_netlist, gcfg, seed=s, energy_spec=spec)
        energy_after.append(composite_energy(target_netlist, placement, spec, config.resolution))

    report = {
        "steps_done": steps_done,
        "buffer": {
            "size": len(buffer),
            "best_energy": buffer.energies[0] if len(buffer) else None,
            "worst_energy": buffer.energies[-1] if len(buffer) else None,
        },
        "energy_before": energy_before,
        "energy_after": energy_after,
        "entropy_beta": beta,
        "entropy_curve": entropy_curve,
        "seeds": seeds_used,
        "data_fraction": config.data_fraction,
        "aborted": False,
    }
    return params, report
