"""Classifier-free guidance, constraint potentials, and the sampling loop.

Sampling starts from Gaussian noise and runs the reverse diffusion while
steering it three ways: conditioning on a high relative-energy target,
classifier-free extrapolation between the energy-conditioned and
energy-unconditional noise predictions, and analytic constraint-potential
gradients evaluated at the predicted clean placement. Constraint pressure is
scheduled hierarchically: overlap separation dominates the early (high-noise)
steps, congestion relief ramps in toward the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, ddim_step, ddim_timesteps, ddpm_step, make_schedule, predict_x0
from .errors import NumericError, ValidationError
from .metrics import (
    EnergySpec,
    _cell_span,
    composite_energy,
    max_congestion,
    net_bboxes,
    overlap_ratio,
    pin_positions,
    reference_placement,
    rudy_map,
)
from .netlist import Netlist, Placement
from .scorenet import ScoreNetParams, Tensor, build_graph, encode_netlist, score_forward

SPATIAL_HASH_MIN_N = 256
BASE_W_LEG = 50.0  # weight at which the legality relaxation factor is leg_relax


@dataclass
class GuidanceConfig:
    """Knobs for guided sampling.

    ``c_th`` of None resolves to 0.9x the reference placement's peak RUDY
    value. ``max_shift`` caps the per-module displacement a single guidance
    step may apply to the predicted clean placement, which keeps the very
    noisy early steps stable. ``w_hpwl`` optionally injects a raw wirelength
    gradient; it is off by default since wirelength quality flows through the
    energy conditioning.
    """

    s: float = 2.0
    e_rel_target: float = 0.95
    w_leg0: float = 50.0
    w_cong0: float = 1.0
    c_th: float | None = None
    tau: float = 0.05
    sampler: str = "ddim"
    steps: int = 50
    resolution: int = 32
    max_shift: float = 0.25
    x0_clip: float = 1.5
    leg_iters: int = 64
    leg_floor: float = 1.0
    leg_relax: float = 0.8
    guide_scale_floor: float = 0.002
    w_hpwl: float = 0.0
    use_ema: bool = False
    snapshot_interval: int = 0

    def __post_init__(self):
        if self.s < 0 or self.w_leg0 < 0 or self.w_cong0 < 0 or self.w_hpwl < 0:
            raise ValidationError("guidance weights must be non-negative")
        if not (0.0 < self.e_rel_target <= 1.0):
            raise ValidationError("e_rel_target must lie in (0, 1]")
        if self.sampler not in ("ddim", "ddpm"):
            raise ValidationError(f"unknown sampler {self.sampler!r}")
        if self.leg_iters < 1:
            raise ValidationError("leg_iters must be >= 1")


def hierarchical_weights(config: GuidanceConfig, t: int, T: int) -> tuple[float, float]:
    """(w_leg, w_cong) at timestep t.

    Legality pressure is largest early (high t) and decays with t/T down to a
    floor; with no floor the final steps, where the predicted placement is
    sharpest, get zero separation force and a few-percent residual overlap
    survives. Congestion pressure ramps up toward the end instead.
    """
    frac = t / T
    return (
        config.w_leg0 * max(frac, config.leg_floor),
        config.w_cong0 * (1.0 - frac),
    )


def cfg_combine(eps_cond_high: np.ndarray, eps_cond_plain: np.ndarray, s: float) -> np.ndarray:
    """Classifier-free extrapolation: plain + s * (high - plain)."""
    eps_cond_high = np.asarray(eps_cond_high)
    eps_cond_plain = np.asarray(eps_cond_plain)
    if eps_cond_high.shape != eps_cond_plain.shape:
        raise ValidationError("guidance operands have mismatched shapes")
    return eps_cond_plain + s * (eps_cond_high - eps_cond_plain)


# ---------------------------------------------------------------------------
# Legality potential
# ---------------------------------------------------------------------------


def _pair_candidates(xy: np.ndarray, ext: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Candidate overlap pairs (i, j), i < j, via a uniform spatial hash.

    The hash cell is the largest module extent, so any overlapping pair lands
    in the same or adjacent cells; below SPATIAL_HASH_MIN_N modules the exact
    all-pairs set is cheaper.
    """
    n = xy.shape[0]
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n < SPATIAL_HASH_MIN_N:
        iu, ju = np.triu_indices(n, k=1)
        return iu.astype(np.int64), ju.astype(np.int64)
    cell = max(float(np.max(ext)), 1e-6)
    keys = np.floor(xy / cell).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, (kx, ky) in enumerate(keys):
        buckets.setdefault((int(kx), int(ky)), []).append(i)
    pi: list[int] = []
    pj: list[int] = []
    for (kx, ky), members in buckets.items():
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                other = buckets.get((kx + dx, ky + dy))
                if other is None:
                    continue
                for i in members:
                    for j in other:
                        if i < j:
                            pi.append(i)
                            pj.append(j)
    return np.asarray(pi, dtype=np.int64), np.asarray(pj, dtype=np.int64)


def legality_relax_sweeps(
    netlist: Netlist,
    coords: np.ndarray,
    sweeps: int,
    relax: float,
    cap: float,
) -> np.ndarray:
    """Iterative penetration relaxation along the legality-potential geometry.

    Each sweep pushes every overlapping pair apart along its separation axis
    (the same d_ij as phi_legality) by ``relax`` times the penetration depth,
    averaged over a module's contacts and capped at ``cap`` per module. The
    direction field equals the legality-potential descent direction; the
    unit-preconditioned step size converges in a few sweeps where plain
    quadratic-potential gradient steps stall on overlap chains.
    """
    z = np.asarray(coords, dtype=np.float64).reshape(-1, 2).copy()
    idx = np.flatnonzero(netlist.area_mask)
    if idx.size < 2:
        return z
    wh = netlist.module_sizes[idx]
    ext = np.max(wh, axis=1)
    for _ in range(sweeps):
        xy = z[idx]
        pi, pj = _pair_candidates(xy, ext)
        if pi.size == 0:
            break
        dx = xy[pi, 0] - xy[pj, 0]
        dy = xy[pi, 1] - xy[pj, 1]
        sep_x = np.abs(dx) - (wh[pi, 0] + wh[pj, 0]) / 2.0
        sep_y = np.abs(dy) - (wh[pi, 1] + wh[pj, 1]) / 2.0
        d = np.maximum(sep_x, sep_y)
        hit = d < 0.0
        if not np.any(hit):
            break
        ih, jh = pi[hit], pj[hit]
        use_x = sep_x[hit] >= sep_y[hit]
        depth = -d[hit]
        sx = np.where(dx[hit] == 0.0, 1.0, np.sign(dx[hit]))
        sy = np.where(dy[hit] == 0.0, 1.0, np.sign(dy[hit]))
        mx = depth * sx * use_x
        my = depth * sy * (~use_x)
        push = np.zeros_like(xy)
        contacts = np.zeros(idx.size)
        np.add.at(push, ih, 0.5 * np.column_stack([mx, my]))
        np.add.at(push, jh, -0.5 * np.column_stack([mx, my]))
        np.add.at(contacts, ih, 1.0)
        np.add.at(contacts, jh, 1.0)
        step = relax * push / np.maximum(contacts, 1.0)[:, None]
        norms = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, cap / np.maximum(norms, 1e-12))
        z[idx] = np.clip(xy + step, -1.0, 1.0)
    return z


def phi_legality(netlist: Netlist, coords: np.ndarray) -> tuple[float, np.ndarray]:
    """Pairwise separation potential and its analytic gradient.

    For each pair of area modules, d_ij is the larger per-axis signed gap
    between the rectangles (negative iff they overlap with positive area);
    the potential sums max(0, -d_ij)^2. The gradient acts along the axis that
    attains the max; exact axis ties contribute a zero subgradient.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    grad = np.zeros_like(coords)
    mask = netlist.area_mask
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        return 0.0, grad
    xy = coords[idx]
    wh = netlist.module_sizes[idx]
    pi, pj = _pair_candidates(xy, np.max(wh, axis=1))
    if pi.size == 0:
        return 0.0, grad
    dx = xy[pi, 0] - xy[pj, 0]
    dy = xy[pi, 1] - xy[pj, 1]
    sep_x = np.abs(dx) - (wh[pi, 0] + wh[pj, 0]) / 2.0
    sep_y = np.abs(dy) - (wh[pi, 1] + wh[pj, 1]) / 2.0
    d = np.maximum(sep_x, sep_y)
    hit = d < 0.0
    if not np.any(hit):
        return 0.0, grad
    d_h = d[hit]
    value = float(np.sum(d_h**2))
    ih, jh = pi[hit], pj[hit]
    use_x = sep_x[hit] > sep_y[hit]
    use_y = sep_y[hit] > sep_x[hit]
    coef = 2.0 * d_h
    gx = coef * np.sign(dx[hit]) * use_x
    gy = coef * np.sign(dy[hit]) * use_y
    np.add.at(grad, (idx[ih], np.zeros_like(ih)), gx)
    np.add.at(grad, (idx[jh], np.zeros_like(jh)), -gx)
    np.add.at(grad, (idx[ih], np.ones_like(ih)), gy)
    np.add.at(grad, (idx[jh], np.ones_like(jh)), -gy)
    return value, grad


# ---------------------------------------------------------------------------
# Congestion potential
# ---------------------------------------------------------------------------


def _lse_peak(
    netlist: Netlist, coords: np.ndarray, resolution: int, tau: float
) -> tuple[float, np.ndarray]:
    """Smoothed peak RUDY value (log-sum-exp over cells) and its gradient.

    The gradient flows through each net's bounding-box dimensions; cell
    coverage is treated as locally constant. Boxes already floored at one
    cell pitch contribute nothing.
    """
    placement = Placement(coords)
    grid = rudy_map(netlist, placement, resolution)
    rows, cols = grid.resolution
    cells = grid.cells
    c_max = float(np.max(cells))
    weights = np.exp((cells - c_max) / tau)
    total = float(np.sum(weights))
    peak = c_max + tau * math.log(total)
    weights /= total
    grad = np.zeros_like(np.asarray(coords, dtype=np.float64).reshape(-1, 2))
    if netlist.n_nets == 0:
        return peak, grad
    pitch_x, pitch_y = 2.0 / cols, 2.0 / rows
    bb = net_bboxes(netlist, placement)
    pos = pin_positions(netlist, placement)
    starts = netlist.net_start
    wsum = np.cumsum(np.pad(weights, ((1, 0), (1, 0))), axis=0).cumsum(axis=1)
    for j in range(netlist.n_nets):
        x0, x1, y0, y1 = bb[j]
        w = x1 - x0
        h = y1 - y0
        if w <= pitch_x and h <= pitch_y:
            continue
        c0, c1 = _cell_span(x0, x1, pitch_x, cols)
        r0, r1 = _cell_span(y0, y1, pitch_y, rows)
        omega = float(
            wsum[r1 + 1, c1 + 1] - wsum[r0, c1 + 1] - wsum[r1 + 1, c0] + wsum[r0, c0]
        )
        if omega == 0.0:
            continue
        seg = slice(starts[j], starts[j + 1])
        px, py = pos[seg, 0], pos[seg, 1]
        mods = netlist.pin_module[seg]
        if w > pitch_x:
            m_hi = mods[int(np.argmax(px))]
            m_lo = mods[int(np.argmin(px))]
            grad[m_hi, 0] += omega * (-1.0 / w**2)
            grad[m_lo, 0] += omega * (1.0 / w**2)
        if h > pitch_y:
            m_hi = mods[int(np.argmax(py))]
            m_lo = mods[int(np.argmin(py))]
            grad[m_hi, 1] += omega * (-1.0 / h**2)
            grad[m_lo, 1] += omega * (1.0 / h**2)
    return peak, grad


def congestion_surrogate(
    netlist: Netlist, coords: np.ndarray, resolution: int, c_th: float, tau: float = 0.05
) -> tuple[float, np.ndarray]:
    """Differentiable congestion hinge: max(0, lse_peak - c_th) and gradient."""
    peak, grad = _lse_peak(netlist, coords, resolution, tau)
    if peak <= c_th:
        return 0.0, np.zeros_like(grad)
    return peak - c_th, grad


def phi_congestion(
    netlist: Netlist,
    coords: np.ndarray,
    resolution: int = 32,
    c_th: float = 1.0,
    tau: float = 0.05,
) -> tuple[float, np.ndarray]:
    """Hinge on the peak RUDY congestion above threshold ``c_th``.

    The reported value uses the hard max; the gradient comes from the
    log-sum-exp surrogate, since the hard max is piecewise constant in cell
    assignment.
    """
    if c_th <= 0:
        raise ValidationError(f"c_th must be positive, got {c_th}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    hard_peak = max_congestion(rudy_map(netlist, Placement(coords), resolution))
    value = max(0.0, hard_peak - c_th)
    _, grad = congestion_surrogate(netlist, coords, resolution, c_th, tau)
    return value, grad


def hpwl_gradient(netlist: Netlist, coords: np.ndarray) -> np.ndarray:
    """Subgradient of total HPWL w.r.t. module centers (optional guide term)."""
    placement = Placement(np.asarray(coords, dtype=np.float64).reshape(-1, 2))
    grad = np.zeros_like(placement.coords)
    if netlist.n_nets == 0:
        return grad
    pos = pin_positions(netlist, placement)
    starts = netlist.net_start
    for j in range(netlist.n_nets):
        seg = slice(starts[j], starts[j + 1])
        if starts[j + 1] - starts[j] < 2:
            continue
        mods = netlist.pin_module[seg]
        for axis in (0, 1):
            vals = pos[seg, axis]
            grad[mods[int(np.argmax(vals))], axis] += 1.0
            grad[mods[int(np.argmin(vals))], axis] -= 1.0
    return grad


# ---------------------------------------------------------------------------
# Guided noise prediction
# ---------------------------------------------------------------------------


def guided_epsilon(
    eps_tilde: np.ndarray,
    x_t: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    netlist: Netlist,
    config: GuidanceConfig,
    c_th: float | None = None,
) -> np.ndarray:
    """Fold constraint-potential gradients into the noise prediction.

    The potentials are evaluated at the predicted clean placement x0_hat and
    their weighted gradient, chained through d x0_hat / d x_t =
    1 / sqrt(alpha_bar_t) and scaled by sigma_t = sqrt(1 - alpha_bar_t),
    shifts the noise prediction so the implied clean placement moves downhill
    on the potentials. Practical strengthening over a single gradient step:
    up to ``leg_iters`` descent iterations run per call (overlap chains need
    several passes to relax), each with its per-module displacement capped at
    ``max_shift``, and the natural step scale sigma^2/alpha_bar is floored by
    ``guide_scale_floor`` so late low-noise steps keep a working step size.
    """
    w_leg, w_cong = hierarchical_weights(config, t, schedule.T)
    if w_leg == 0.0 and w_cong == 0.0 and config.w_hpwl == 0.0:
        return eps_tilde
    ab = schedule.alpha_bar[t]
    sigma = math.sqrt(1.0 - ab)
    if sigma == 0.0:
        return eps_tilde
    x0_hat = predict_x0(x_t, t, eps_tilde, schedule)
    z = x0_hat
    if w_leg > 0.0:
        relax = min(1.0, config.leg_relax * w_leg / BASE_W_LEG)
        z = legality_relax_sweeps(netlist, z, config.leg_iters, relax, config.max_shift)
    g = np.zeros_like(z)
    if w_cong > 0.0 and c_th is not None:
        _, g_cong = phi_congestion(netlist, z, config.resolution, c_th, config.tau)
        g += w_cong * g_cong
    if config.w_hpwl > 0.0:
        g += config.w_hpwl * hpwl_gradient(netlist, z)
    if np.any(g):
        delta = max(sigma**2 / ab, config.guide_scale_floor) * g
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        delta *= np.minimum(1.0, config.max_shift / np.maximum(norms, 1e-12))
        z = z - delta
    if np.array_equal(z, x0_hat):
        return eps_tilde
    return (x_t - math.sqrt(ab) * z) / sigma


def auto_congestion_threshold(netlist: Netlist, resolution: int) -> float:
    """Default hinge threshold: 0.9x the reference placement's peak RUDY."""
    ref = reference_placement(netlist)
    peak = max_congestion(rudy_map(netlist, ref, resolution))
    return max(0.9 * peak, 1e-9)


# ---------------------------------------------------------------------------
# Full sampling loop
# ---------------------------------------------------------------------------


def sample_placement(
    params: ScoreNetParams,
    netlist: Netlist,
    config: GuidanceConfig,
    seed: int,
    energy_spec: EnergySpec | None = None,
) -> tuple[Placement, dict]:
    """Generate one placement by guided reverse diffusion.

    Returns the final clamped placement and a trace dict with one entry per
    visited state (steps + 1 total), clamp-event count, optional predicted
    clean-placement snapshots, and any warnings raised along the way.
    """
    rng = np.random.default_rng(seed)
    net_params = params.with_ema_weights() if config.use_ema else params
    warnings_list: list[str] = []
    if net_params.all_zero():
        warnings_list.append("untrained parameters: all weights are zero")
    T = params.train_T
    schedule = make_schedule(params.train_schedule, T)
    if config.sampler == "ddim":
        ladder = ddim_timesteps(T, config.steps)
    else:
        ladder = list(range(T, -1, -1))
    n = netlist.n_modules
    x = rng.standard_normal((n, 2))
    graph = build_graph(netlist)
    enc = Tensor(encode_netlist(net_params, graph).value)
    c_th = config.c_th if config.c_th is not None else auto_congestion_threshold(
        netlist, config.resolution
    )
    spec = energy_spec or EnergySpec.for_netlist(netlist, config.resolution)

    def state_metrics(arr: np.ndarray, t: int) -> dict:
        snap, _ = Placement(arr).clamp()
        return {
            "t": int(t),
            "energy": composite_energy(netlist, snap, spec, config.resolution),
            "overlap": overlap_ratio(netlist, snap),
            "max_congestion": max_congestion(rudy_map(netlist, snap, config.resolution)),
        }

    def stabilize(eps: np.ndarray, t: int) -> np.ndarray:
        """Re-encode the noise prediction so the implied clean placement stays
        within ``x0_clip`` of the canvas. Near t = T the inversion amplifies
        prediction error by 1/sqrt(alpha_bar); without this cap a single noisy
        step throws the trajectory off the data manifold for good. x_t itself
        is never clamped."""
        ab = schedule.alpha_bar[t]
        if ab >= 1.0 or config.x0_clip <= 0:
            return eps
        x0_hat = predict_x0(x, t, eps, schedule)
        clipped = np.clip(x0_hat, -config.x0_clip, config.x0_clip)
        if np.array_equal(clipped, x0_hat):
            return eps
        return (x - math.sqrt(ab) * clipped) / math.sqrt(1.0 - ab)

    trace_steps = [state_metrics(x, ladder[0])]
    snapshots: list[np.ndarray] = []
    for k in range(len(ladder) - 1):
        t, t_prev = ladder[k], ladder[k + 1]
        eps_hi = score_forward(net_params, x, t, enc, config.e_rel_target, T).value
        eps_pl = score_forward(net_params, x, t, enc, None, T).value
        eps_tilde = stabilize(cfg_combine(eps_hi, eps_pl, config.s), t)
        eps_hat = guided_epsilon(eps_tilde, x, t, schedule, netlist, config, c_th)
        if config.snapshot_interval and k % config.snapshot_interval == 0:
            snapshots.append(predict_x0(x, t, eps_hat, schedule).copy())
        if config.sampler == "ddim":
            x = ddim_step(x, t, t_prev, eps_hat, schedule)
        else:
            noise = rng.standard_normal((n, 2)) if t > 1 else None
            x = ddpm_step(x, t, eps_hat, schedule, noise)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at t={t} during sampling")
        trace_steps.append(state_metrics(x, t_prev))
    placement, clamp_events = Placement(x).clamp()
    trace = {
        "seed": seed,
        "sampler": config.sampler,
        "steps": trace_steps,
        "clamp_events": clamp_events,
        "snapshots": snapshots,
        "warnings": warnings_list,
        "c_th": c_th,
    }
    return placement, trace
