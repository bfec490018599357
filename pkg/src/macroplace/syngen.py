"""Process-aware synthetic netlist generation and its validation scores.

Generation runs in three phases: hierarchical module creation (macros sized
log-normally and seeded force-directed, Voronoi functional blocks, standard
cells filled onto rows), probabilistic edge creation driven by a
distance/manufacturability/topology product model, and a refinement pass
(connectivity repair, Rent-exponent check, H-tree clock nets, power/ground
mesh, routing-feasibility estimate). Every instance is deterministic per
seed and ships with a legal (zero-overlap) placement.

Physical units are micrometers, ohms, femtofarads, volts, seconds. The
default 45nm-flavored numbers are representative textbook values, not
foundry data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSpecError, ValidationError
from .metrics import per_net_hpwl
from .netlist import (
    Module,
    ModuleKind,
    Net,
    Netlist,
    Placement,
    PinOffset,
    degree_histogram,
    filter_nets,
    normalize_canvas,
    normalize_positions,
    validate_netlist,
)

INFRA_TAGS = ("clock", "power", "ground")


@dataclass(frozen=True)
class ProcessSpec:
    """Geometric, electrical, and metal-stack parameters of the process model."""

    # geometry (um)
    h_sc: float = 1.4
    w_min: float = 0.07
    s_min: float = 0.07
    p_grid: float = 0.14
    # electrical
    r_sq: float = 0.08  # ohm/square
    c_unit: float = 0.2  # fF/um
    f_max: float = 3.0e9  # Hz
    v_dd: float = 1.1  # V
    # metal stack: (height, pitch, width) per layer, um
    layers: tuple[tuple[float, float, float], ...] = (
        (0.13, 0.14, 0.07),
        (0.13, 0.14, 0.07),
        (0.25, 0.28, 0.14),
        (0.25, 0.28, 0.14),
        (0.50, 0.56, 0.28),
        (0.50, 0.56, 0.28),
    )

    def __post_init__(self):
        values = (self.h_sc, self.w_min, self.s_min, self.p_grid, self.r_sq,
                  self.c_unit, self.f_max, self.v_dd)
        if min(values) <= 0 or len(self.layers) < 1:
            raise ValidationError("process parameters must be positive")

    @property
    def n_metal(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class GenSpec:
    """Generation target: module count, chip area, clock frequency, seed.

    ``a_target`` of None auto-sizes the die for roughly 55% utilization.
    The aspect range shapes macros; ``clock_fraction`` picks the share of
    standard cells treated as clock sinks.
    """

    n_total: int = 120
    a_target: float | None = None
    f_target: float = 1.0e9
    seed: int = 0
    aspect_min: float = 0.5
    aspect_max: float = 2.0
    clock_fraction: float = 0.3
    utilization: float = 0.55

    def __post_init__(self):
        if self.n_total < 8:
            raise ValidationError("n_total must be at least 8")
        if self.f_target <= 0:
            raise ValidationError("f_target must be positive")
        if self.a_target is not None and self.a_target <= 0:
            raise ValidationError("a_target must be positive")
        if not (0.05 < self.utilization <= 0.8):
            raise ValidationError("utilization must lie in (0.05, 0.8]")

    @property
    def t_clk(self) -> float:
        return 1.0 / self.f_target


@dataclass(frozen=True)
class EdgeModelParams:
    """Constants of the edge-probability model.

    ``gamma`` of None is calibrated per netlist by bisection so the expected
    edge count hits ``mean_degree``; ``lambda_rent``, ``l_max1`` and
    ``tau_wire`` of None resolve against the chip area and placement grid.
    The stub fields control per-module connection budgets (heavy-tailed so
    module degrees follow the power law seen in real circuits).
    """

    gamma: float | None = None
    alpha: float = 0.5
    lambda_rent: float | None = None
    kappa_fringe: float = 0.3
    omega_local: float = 2.0
    omega_global: float = 0.5
    omega_io: float = 0.8
    l_max1: float | None = None
    tau_wire: float | None = None
    i_avg: float = 1.0e-4  # A
    mean_degree: float = 4.5
    stub_exponent: float = 2.2
    stub_max: int = 50
    global_fraction: float = 0.30
    near_pool: int = 18

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("alpha must lie in (0, 1)")
        if min(self.omega_local, self.omega_global, self.omega_io) <= 0:
            raise ValidationError("omega weights must be positive")

    def resolve(self, chip_area: float, p_grid: float) -> "EdgeModelParams":
        updates = {}
        if self.lambda_rent is None:
            updates["lambda_rent"] = math.sqrt(chip_area) / 10.0
        if self.l_max1 is None:
            updates["l_max1"] = 50.0 * p_grid
        if self.tau_wire is None:
            updates["tau_wire"] = 25.0 * p_grid
        if not updates:
            return self
        from dataclasses import replace

        return replace(self, **updates)


# ---------------------------------------------------------------------------
# Edge-probability model
# ---------------------------------------------------------------------------


def p_base(d: float, params: EdgeModelParams) -> float:
    """Distance kernel gamma * d^(-alpha) * exp(-d / lambda_rent)."""
    if d <= 0:
        raise ValidationError(f"distance must be positive, got {d}")
    gamma = 1.0 if params.gamma is None else params.gamma
    lam = params.lambda_rent
    decay = math.exp(-d / lam) if lam is not None and math.isfinite(lam) else 1.0
    return gamma * d ** (-params.alpha) * decay


def _band_blend(d: float, boundaries: tuple[float, float], values: tuple[float, float, float]) -> float:
    """Piecewise-constant band value with linear crossfades (+-10% of each
    boundary) so the composite stays continuous in distance."""
    b1, b2 = boundaries
    w1, w2 = 0.1 * b1, 0.1 * b2
    v0, v1, v2 = values
    if d <= b1 - w1:
        return v0
    if d < b1 + w1:
        f = (d - (b1 - w1)) / (2.0 * w1)
        return v0 + f * (v1 - v0)
    if d <= b2 - w2:
        return v1
    if d < b2 + w2:
        f = (d - (b2 - w2)) / (2.0 * w2)
        return v1 + f * (v2 - v1)
    return v2


def _wire_bands(spec: ProcessSpec) -> tuple[float, float]:
    return 40.0 * spec.p_grid, 160.0 * spec.p_grid


def w_eff(d: float, spec: ProcessSpec) -> float:
    """Effective wire width under distance-banded layer assignment: short
    nets route on M1-2, medium on M3-4, long on M5-6."""
    widths = (spec.layers[0][2], spec.layers[min(2, spec.n_metal - 1)][2],
              spec.layers[min(4, spec.n_metal - 1)][2])
    return _band_blend(d, _wire_bands(spec), widths)


def rho_via(d: float, spec: ProcessSpec) -> float:
    """Via-stack resistance factor 1 + 0.1 * band, crossfaded between bands."""
    return _band_blend(d, _wire_bands(spec), (1.0, 1.1, 1.2))


def wire_rc(d: float, spec: ProcessSpec, params: EdgeModelParams) -> tuple[float, float]:
    """Wire resistance (ohm) and capacitance (fF) of a length-d connection.

    R = r_sq * d / w_eff(d) * rho_via(d); C = c_unit * d * (1 + kappa_fringe).
    """
    if d <= 0:
        raise ValidationError(f"distance must be positive, got {d}")
    r = spec.r_sq * d / w_eff(d, spec) * rho_via(d, spec)
    c = spec.c_unit * d * (1.0 + params.kappa_fringe)
    return r, c


def m_phys(d: float, spec: ProcessSpec, params: EdgeModelParams, t_clk: float) -> float:
    """Manufacturability factor: wire-length hinge x delay margin x IR margin."""
    if d <= 0:
        raise ValidationError(f"distance must be positive, got {d}")
    l_max = params.l_max1 if params.l_max1 is not None else 50.0 * spec.p_grid
    tau = params.tau_wire if params.tau_wire is not None else 25.0 * spec.p_grid
    m_wire = 1.0 if d <= l_max else math.exp(-(d - l_max) / tau)
    r, c = wire_rc(d, spec, params)
    rc_seconds = r * c * 1e-15  # ohm * fF
    m_delay = math.exp(-max(0.0, rc_seconds / (t_clk / 20.0) - 1.0))
    m_power = math.exp(-max(0.0, params.i_avg * r / (0.05 * spec.v_dd) - 1.0))
    return m_wire * m_delay * m_power


def m_design(i: int, j: int, block_assignment: np.ndarray, params: EdgeModelParams | None = None) -> float:
    """Topology preference: I/O attachment beats the block test, then local
    vs global. Blocks are integers with -1 marking I/O pads."""
    p = params or EdgeModelParams()
    bi, bj = block_assignment[i], block_assignment[j]
    if bi < 0 or bj < 0:
        return p.omega_io
    return p.omega_local if bi == bj else p.omega_global


def edge_probability(
    i: int,
    j: int,
    d_ij: float,
    spec: ProcessSpec,
    params: EdgeModelParams,
    blocks: np.ndarray,
    t_clk: float | None = None,
) -> float:
    """Full connection probability, the three-factor product clipped to [0, 1]."""
    t_clk = t_clk if t_clk is not None else 1.0 / spec.f_max
    raw = p_base(d_ij, params) * m_phys(d_ij, spec, params, t_clk) * m_design(i, j, blocks, params)
    return float(min(1.0, max(0.0, raw)))


# ---------------------------------------------------------------------------
# Phase 1 helpers
# ---------------------------------------------------------------------------


def _draw_power_law_ints(
    rng: np.random.Generator, n: int, exponent: float, top: int
) -> np.ndarray:
    ks = np.arange(1, top + 1, dtype=np.float64)
    pmf = ks ** (-exponent)
    pmf /= pmf.sum()
    return rng.choice(np.arange(1, top + 1), size=n, p=pmf)


def _force_directed_macros(
    rng: np.random.Generator, dims: np.ndarray, canvas: tuple[float, float], s_min: float
) -> np.ndarray:
    """Damped spring relaxation of macro centers with wall repulsion."""
    w, h = canvas
    n = dims.shape[0]
    pos = np.column_stack(
        [rng.uniform(0.2 * w, 0.8 * w, n), rng.uniform(0.2 * h, 0.8 * h, n)]
    )
    vel = np.zeros_like(pos)
    for _ in range(150):
        force = np.zeros_like(pos)
        for i in range(n):
            for j in range(i + 1, n):
                delta = pos[i] - pos[j]
                need = (dims[i] + dims[j]) / 2.0 + s_min
                pen = need - np.abs(delta)
                if pen[0] > 0 and pen[1] > 0:
                    axis = int(pen[0] > pen[1])  # push along the easier axis
                    direction = math.copysign(1.0, delta[axis]) if delta[axis] else 1.0
                    force[i, axis] += 0.5 * pen[axis] * direction
                    force[j, axis] -= 0.5 * pen[axis] * direction
        lo = dims / 2.0 + s_min
        hi = np.array([w, h]) - dims / 2.0 - s_min
        force += 0.4 * np.maximum(0.0, lo - pos)
        force -= 0.4 * np.maximum(0.0, pos - hi)
        vel = 0.6 * vel + force
        pos = pos + 0.5 * vel
    return np.clip(pos, dims / 2.0, np.array([w, h]) - dims / 2.0)


def _fill_rows(
    n_cells: int,
    cell_w: np.ndarray,
    macro_pos: np.ndarray,
    macro_dims: np.ndarray,
    canvas: tuple[float, float],
    spec: ProcessSpec,
) -> np.ndarray:
    """Standard-cell fill on h_sc rows, skipping macro footprints.

    Rows are strided evenly across the die and cells get uniform extra
    spacing, so the legal placement covers the whole canvas instead of
    packing into the bottom corner.
    """
    side = canvas[0]
    blocked = [
        (macro_pos[i, 0] - macro_dims[i, 0] / 2.0 - spec.s_min,
         macro_pos[i, 0] + macro_dims[i, 0] / 2.0 + spec.s_min,
         macro_pos[i, 1] - macro_dims[i, 1] / 2.0 - spec.s_min,
         macro_pos[i, 1] + macro_dims[i, 1] / 2.0 + spec.s_min)
        for i in range(macro_pos.shape[0])
    ]
    n_rows = max(int(canvas[1] / spec.h_sc), 1)
    demand = float(np.sum(cell_w + spec.s_min))
    rows_needed = max(1, min(n_rows, math.ceil(demand / (0.7 * side))))
    cell_pos = np.zeros((n_cells, 2))
    # Successively tighter spacing if macros eat more room than estimated.
    for attempt in range(4):
        stride = max(1, n_rows // rows_needed)
        rows = list(range(0, n_rows, stride))
        slack = len(rows) * (side - 2 * spec.p_grid) - demand
        gap = max(0.0, 0.8 * slack / max(n_cells, 1)) * (0.5**attempt)
        placed = 0
        for r in rows:
            if placed >= n_cells:
                break
            y = (r + 0.5) * spec.h_sc
            x = spec.p_grid
            while placed < n_cells:
                w = cell_w[placed]
                if x + w > side - spec.p_grid:
                    break
                span = (x, x + w, y - spec.h_sc / 2.0, y + spec.h_sc / 2.0)
                clash = next(
                    (b for b in blocked if span[0] < b[1] and span[1] > b[0]
                     and span[2] < b[3] and span[3] > b[2]),
                    None,
                )
                if clash is not None:
                    x = math.ceil((clash[1] + spec.s_min) / spec.p_grid) * spec.p_grid
                    continue
                cell_pos[placed] = (x + w / 2.0, y)
                placed += 1
                x = x + w + spec.s_min + gap
                x = math.ceil(x / spec.p_grid) * spec.p_grid
        if placed >= n_cells:
            return cell_pos
        rows_needed = min(n_rows, rows_needed * 2)
    raise InfeasibleSpecError(f"row capacity exhausted after {placed}/{n_cells} cells")


def _snap_macros(
    pos: np.ndarray, dims: np.ndarray, canvas: tuple[float, float], grid: float, s_min: float
) -> np.ndarray:
    """Greedy collision-free snap of macros onto the placement grid.

    Spirals outward from each relaxed position until a free site appears;
    raises InfeasibleSpecError only if the search space is exhausted.
    """
    w, h = canvas
    order = np.argsort(-(dims[:, 0] * dims[:, 1]))
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    out = np.zeros_like(pos)

    def collides(center: np.ndarray, dim: np.ndarray) -> bool:
        if np.any(center - dim / 2.0 < -1e-9) or np.any(center + dim / 2.0 > np.array([w, h]) + 1e-9):
            return True
        for pc, pd in placed:
            gap = np.abs(center - pc) - (dim + pd) / 2.0 - s_min
            if gap[0] < 0 and gap[1] < 0:
                return True
        return False

    max_ring = int(max(w, h) / grid) + 2
    for i in order:
        base = np.round(pos[i] / grid) * grid
        found = False
        for ring in range(max_ring):
            offsets = range(-ring, ring + 1)
            for ox in offsets:
                for oy in offsets:
                    if max(abs(ox), abs(oy)) != ring:
                        continue
                    cand = base + np.array([ox * grid, oy * grid])
                    if not collides(cand, dims[i]):
                        out[i] = cand
                        placed.append((cand, dims[i]))
                        found = True
                        break
                if found:
                    break
            if found:
                break
        if not found:
            raise InfeasibleSpecError("cannot place macros without overlap")
    return out


# ---------------------------------------------------------------------------
# Netlist generation (Phases 1-3)
# ---------------------------------------------------------------------------


def generate_netlist(
    gen_spec: GenSpec,
    process_spec: ProcessSpec | None = None,
    params: EdgeModelParams | None = None,
) -> tuple[Netlist, Placement, dict]:
    """Generate one synthetic netlist plus its legal placement and stats."""
    spec = process_spec or ProcessSpec()
    base_params = params or EdgeModelParams()
    rng = np.random.default_rng(gen_spec.seed)
    n_total = gen_spec.n_total

    # --- Phase 1: hierarchical module generation ---
    n_macro = int(min(max(1, rng.poisson(1.5 * math.log(n_total))), n_total // 4))
    n_cells = n_total - n_macro

    cell_units = rng.integers(2, 7, size=n_cells)
    cell_w = cell_units * spec.p_grid
    est_cell_area = float(np.sum(cell_w) * spec.h_sc)

    # Macro areas are log-normal around 1% of the die each; drawn as die
    # fractions so auto-sizing can account for the actual realization. The
    # total macro share is capped at 35% of the die.
    macro_frac = rng.lognormal(mean=math.log(0.01), sigma=0.5, size=n_macro)
    total_frac = float(np.sum(macro_frac))
    if total_frac > 0.35:
        macro_frac *= 0.35 / total_frac
        total_frac = 0.35
    aspect = rng.uniform(gen_spec.aspect_min, gen_spec.aspect_max, size=n_macro)

    if gen_spec.a_target is None:
        a_target = est_cell_area / max(gen_spec.utilization - total_frac, 0.15)
        grow_attempts = 5
    else:
        a_target = gen_spec.a_target
        if est_cell_area + total_frac * a_target > 0.85 * a_target:
            raise InfeasibleSpecError(
                f"module area needs {est_cell_area + total_frac * a_target:.1f}um^2, "
                f"over 85% of target {a_target:.1f}um^2"
            )
        grow_attempts = 1

    macro_pos = macro_dims = cell_pos = None
    block_seeds = None
    for attempt in range(grow_attempts):
        side = math.sqrt(a_target)
        canvas = (side, side)
        layout_rng = np.random.default_rng([gen_spec.seed, attempt])
        macro_area = macro_frac * a_target
        macro_dims = np.column_stack(
            [np.sqrt(macro_area * aspect), np.sqrt(macro_area / aspect)]
        )
        macro_dims = np.maximum(
            np.round(macro_dims / spec.p_grid) * spec.p_grid, 2 * spec.p_grid
        )
        macro_dims = np.minimum(macro_dims, 0.5 * side)
        try:
            relaxed = _force_directed_macros(layout_rng, macro_dims, canvas, spec.s_min)
            macro_pos = _snap_macros(relaxed, macro_dims, canvas, spec.p_grid, spec.s_min)
            cell_pos = _fill_rows(
                n_cells, cell_w, macro_pos, macro_dims, canvas, spec
            )
        except InfeasibleSpecError:
            if attempt == grow_attempts - 1:
                raise
            a_target *= 1.3
            continue
        n_blocks = max(4, n_macro + 2)
        extra = layout_rng.uniform(0.1 * side, 0.9 * side, size=(n_blocks - n_macro, 2))
        block_seeds = np.vstack([macro_pos, extra])
        break

    def block_of(points: np.ndarray) -> np.ndarray:
        d = np.abs(points[:, None, :] - block_seeds[None, :, :]).sum(axis=2)
        return np.argmin(d, axis=1)

    n_io = max(4, int(round(2.0 * math.sqrt(n_total))))
    io_pos = np.zeros((n_io, 2))
    for k in range(n_io):
        frac = (k + 0.5) / n_io * 4.0
        edge = int(frac)
        along = (frac - edge) * side
        io_pos[k] = [
            (along, 0.0), (side, along), (side - along, side), (0.0, side - along)
        ][edge]

    n_modules = n_macro + n_cells + n_io
    positions = np.vstack([macro_pos, cell_pos, io_pos])
    dims_all = np.vstack(
        [macro_dims, np.column_stack([cell_w, np.full(n_cells, spec.h_sc)]), np.zeros((n_io, 2))]
    )
    kinds = (
        [ModuleKind.MACRO] * n_macro
        + [ModuleKind.STANDARD_CELL] * n_cells
        + [ModuleKind.IO_PAD] * n_io
    )
    blocks = np.concatenate([block_of(positions[: n_macro + n_cells]), -np.ones(n_io, dtype=np.int64)])

    edge_params = base_params.resolve(a_target, spec.p_grid)
    t_clk = gen_spec.t_clk

    # --- Phase 2: physics-constrained edge generation ---
    dist = np.abs(positions[:, None, :] - positions[None, :, :]).sum(axis=2)
    np.fill_diagonal(dist, np.inf)
    near = np.argsort(dist, axis=1)[:, : edge_params.near_pool]

    stubs = _draw_power_law_ints(rng, n_modules, edge_params.stub_exponent, edge_params.stub_max)
    stubs[:n_macro] = np.minimum(stubs[:n_macro] * 3, edge_params.stub_max)
    stubs[n_macro + n_cells :] = np.minimum(stubs[n_macro + n_cells :], 4)

    candidates: set[tuple[int, int]] = set()
    for v in range(n_modules):
        for _ in range(int(stubs[v])):
            if rng.random() < edge_params.global_fraction:
                u = int(rng.integers(0, n_modules))
            else:
                u = int(near[v, rng.integers(0, edge_params.near_pool)])
            if u == v:
                continue
            candidates.add((min(u, v), max(u, v)))
    cand = np.array(sorted(candidates), dtype=np.int64)
    cand_d = dist[cand[:, 0], cand[:, 1]]

    base_vals = np.array(
        [
            p_base(d, EdgeModelParams(gamma=1.0, alpha=edge_params.alpha,
                                      lambda_rent=edge_params.lambda_rent))
            * m_phys(d, spec, edge_params, t_clk)
            * m_design(i, j, blocks, edge_params)
            for (i, j), d in zip(cand, cand_d)
        ]
    )

    if edge_params.gamma is None:
        # Bisection on gamma so the expected accepted edge count matches the
        # mean-degree target.
        target = edge_params.mean_degree * n_modules / 2.0
        target = min(target, 0.95 * float(np.sum(base_vals > 0)))
        lo, hi = 1e-6, 1e6
        for _ in range(80):
            mid = math.sqrt(lo * hi)
            expected = float(np.sum(np.minimum(mid * base_vals, 1.0)))
            if expected < target:
                lo = mid
            else:
                hi = mid
        gamma = math.sqrt(lo * hi)
    else:
        gamma = edge_params.gamma
    probs = np.minimum(gamma * base_vals, 1.0)
    accept = rng.random(len(cand)) < probs
    edges = [(int(i), int(j)) for i, j in cand[accept]]

    # --- Phase 3: validation and refinement ---
    degree = np.zeros(n_modules, dtype=np.int64)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    for v in np.flatnonzero(degree == 0):
        v = int(v)
        u = int(np.argmin(dist[v]))
        edges.append((min(u, v), max(u, v)))
        degree[v] += 1
        degree[u] += 1

    pins_of: list[list[PinOffset]] = [[] for _ in range(n_modules)]

    def add_pin(v: int) -> int:
        w, h = dims_all[v]
        off = PinOffset(
            float(rng.uniform(-0.4, 0.4) * w), float(rng.uniform(-0.4, 0.4) * h)
        )
        pins_of[v].append(off)
        return len(pins_of[v]) - 1

    nets: list[Net] = []
    for i, j in edges:
        nets.append(
            Net(
                id=len(nets),
                endpoints=((i, add_pin(i)), (j, add_pin(j))),
                tag="signal",
                name=f"e{len(nets)}",
            )
        )

    # Clock H-tree: recursive quadrant split of the sink set, one subnet per
    # leaf region plus a trunk joining leaf representatives.
    sink_ids = [
        n_macro + c for c in range(n_cells) if rng.random() < gen_spec.clock_fraction
    ]
    if len(sink_ids) >= 2:
        depth = max(
            1, min(math.ceil(math.log(n_total, 4)), int(math.log(len(sink_ids), 4)))
        )
        leaves: list[list[int]] = []

        def split(ids: list[int], level: int, axis: int) -> None:
            if level >= 2 * depth or len(ids) <= 3:
                leaves.append(ids)
                return
            vals = positions[ids, axis]
            order = np.argsort(vals, kind="stable")
            half = len(ids) // 2
            split([ids[k] for k in order[:half]], level + 1, 1 - axis)
            split([ids[k] for k in order[half:]], level + 1, 1 - axis)

        split(sink_ids, 0, 0)
        reps = []
        for leaf in leaves:
            if not leaf:
                continue
            reps.append(leaf[0])
            if len(leaf) >= 2:
                nets.append(
                    Net(
                        id=len(nets),
                        endpoints=tuple((v, add_pin(v)) for v in leaf),
                        tag="clock",
                        name=f"clk_leaf{len(nets)}",
                    )
                )
        if len(reps) >= 2:
            nets.append(
                Net(
                    id=len(nets),
                    endpoints=tuple((v, add_pin(v)) for v in reps),
                    tag="clock",
                    name="clk_trunk",
                )
            )

    # Power/ground mesh: one net per coarse grid row/column, alternating tags.
    mesh = 8
    pitch = side / mesh
    core = np.arange(n_macro + n_cells)
    for axis, prefix in ((1, "rail_h"), (0, "rail_v")):
        for k in range(mesh):
            center = (k + 0.5) * pitch
            members = core[np.abs(positions[core, axis] - center) < pitch / 2.0]
            if members.size >= 2:
                nets.append(
                    Net(
                        id=len(nets),
                        endpoints=tuple((int(v), add_pin(int(v))) for v in members),
                        tag="power" if k % 2 == 0 else "ground",
                        name=f"{prefix}{k}",
                    )
                )

    modules = tuple(
        Module(
            id=v,
            width=float(dims_all[v, 0]),
            height=float(dims_all[v, 1]),
            kind=kinds[v],
            pins=tuple(pins_of[v]),
            name=f"{'m' if kinds[v] is ModuleKind.MACRO else 'c' if kinds[v] is ModuleKind.STANDARD_CELL else 'p'}{v}",
        )
        for v in range(n_modules)
    )
    raw = Netlist(
        modules=modules,
        nets=tuple(nets),
        canvas=canvas,
        normalized=False,
        name=f"syn_{gen_spec.seed}_{n_total}",
    )
    netlist = normalize_canvas(raw)
    validate_netlist(netlist)
    placement = Placement(normalize_positions(positions, canvas))

    stats = instance_stats(netlist, placement, spec)
    stats.update(
        {
            "seed": gen_spec.seed,
            "n_total": n_total,
            "n_macro": n_macro,
            "n_cells": n_cells,
            "n_io": n_io,
            "gamma": gamma,
            "chip_area_um2": a_target,
        }
    )
    return netlist, placement, stats


def instance_stats(netlist: Netlist, placement: Placement, spec: ProcessSpec | None = None) -> dict:
    """Validation bundle: Rent fit, wirelength score, congestion feasibility,
    degree statistics.

    Rent and degree-law fits run on the signal subgraph: clock trees and
    power rails span the whole die by construction, which would flatten the
    terminals-vs-size slope and distort the degree tail.
    """
    signal = filter_nets(netlist, INFRA_TAGS)
    hist = degree_histogram(signal)
    p_fit = (
        measure_rent_exponent(signal, placement) if netlist.n_modules >= 8 else None
    )
    return {
        "n_modules": netlist.n_modules,
        "n_nets": netlist.n_nets,
        "n_signal_nets": signal.n_nets,
        "mean_degree": float(
            sum(k * c for k, c in hist.items()) / max(netlist.n_modules, 1)
        ),
        "degree_histogram": {int(k): int(v) for k, v in sorted(hist.items())},
        "power_law_alpha": fit_power_law(hist),
        "rent_exponent": p_fit,
        "rent_score": rent_score(signal, placement) if p_fit is not None else None,
        "rent_in_band": (0.5 <= p_fit <= 0.7) if p_fit is not None else None,
        "wirelength_score": wirelength_score(netlist, placement),
        "congestion_feasibility": congestion_feasibility(netlist, placement, 16, spec),
    }


# ---------------------------------------------------------------------------
# Validation scores
# ---------------------------------------------------------------------------


def measure_rent_exponent(netlist: Netlist, placement: Placement | None = None) -> float:
    """Fit p in T = k * N^p by recursive bisection.

    Blocks come from alternating median splits of the placement (id-order
    splits when no placement is given); T counts nets crossing each block's
    boundary. The whole-chip levels (terminal-starved region) and tiny blocks
    are excluded from the log-log regression.
    """
    n = netlist.n_modules
    if n < 8:
        raise ValidationError("netlist too small for Rent analysis (need >= 8 modules)")
    order_key = (
        placement.coords if placement is not None else
        np.column_stack([np.arange(n, dtype=np.float64), np.zeros(n)])
    )
    modules_of_net = [
        np.array(sorted({m for m, _ in net.endpoints}), dtype=np.int64)
        for net in netlist.nets
    ]
    nets_of_mod: list[list[int]] = [[] for _ in range(n)]
    for j, mods in enumerate(modules_of_net):
        for m in mods:
            nets_of_mod[m].append(j)

    samples: list[tuple[int, int]] = []

    def terminals(block: np.ndarray) -> int:
        inside = np.zeros(n, dtype=bool)
        inside[block] = True
        seen: set[int] = set()
        count = 0
        for m in block:
            for j in nets_of_mod[m]:
                if j in seen:
                    continue
                seen.add(j)
                mods = modules_of_net[j]
                if not np.all(inside[mods]):
                    count += 1
        return count

    def recurse(block: np.ndarray, axis: int) -> None:
        if 4 <= block.size <= n // 3:
            t = terminals(block)
            if t >= 1:
                samples.append((block.size, t))
        if block.size < 8:
            return
        vals = order_key[block, axis]
        order = np.argsort(vals, kind="stable")
        half = block.size // 2
        recurse(block[order[:half]], 1 - axis)
        recurse(block[order[half:]], 1 - axis)

    recurse(np.arange(n, dtype=np.int64), 0)
    if len(samples) < 3:
        raise ValidationError("not enough partition samples for a Rent fit")
    xs = np.log([s for s, _ in samples])
    ys = np.log([t for _, t in samples])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope


def rent_score_from_exponent(p_measured: float, p_expected: float = 0.6) -> float:
    """exp(-|p_measured - p_expected| / 0.1)."""
    return math.exp(-abs(p_measured - p_expected) / 0.1)


def rent_score(netlist: Netlist, placement: Placement | None = None,
               p_expected: float = 0.6) -> float:
    """Rent-compliance score of a netlist against the p_expected = 0.6 midpoint."""
    return rent_score_from_exponent(measure_rent_exponent(netlist, placement), p_expected)


def fit_power_law(histogram: dict[int, int], k_min: int = 2) -> float | None:
    """Discrete maximum-likelihood power-law exponent over degrees >= k_min."""
    ks = []
    for k, count in histogram.items():
        if k >= k_min:
            ks.extend([k] * count)
    if len(ks) < 10:
        return None
    ks = np.asarray(ks, dtype=np.float64)
    return float(1.0 + ks.size / np.sum(np.log(ks / (k_min - 0.5))))


WIRELENGTH_BINS = np.geomspace(1e-3, 4.0, 21)


def reference_wirelength_histogram(
    mu: float = math.log(0.12), sigma: float = 1.0
) -> np.ndarray:
    """Log-normal per-net HPWL reference, binned over WIRELENGTH_BINS."""
    from scipy.stats import lognorm

    cdf = lognorm.cdf(WIRELENGTH_BINS, s=sigma, scale=math.exp(mu))
    pmf = np.diff(cdf)
    return pmf / pmf.sum()


def wirelength_score(
    netlist: Netlist,
    placement: Placement,
    reference_histogram: np.ndarray | None = None,
) -> float:
    """exp(-KL(observed || reference)) over the per-net HPWL histogram."""
    spans = per_net_hpwl(netlist, placement)
    if spans.size == 0:
        raise ValidationError("wirelength score needs at least one net")
    ref = reference_histogram if reference_histogram is not None else reference_wirelength_histogram()
    hist, _ = np.histogram(np.clip(spans, WIRELENGTH_BINS[0], WIRELENGTH_BINS[-1]), bins=WIRELENGTH_BINS)
    eps = 1e-9
    p = (hist + eps) / np.sum(hist + eps)
    q = (ref + eps) / np.sum(ref + eps)
    kl = float(np.sum(p * np.log(p / q)))
    return math.exp(-max(kl, 0.0))


def congestion_feasibility(
    netlist: Netlist,
    placement: Placement,
    resolution: int = 16,
    process_spec: ProcessSpec | None = None,
) -> float:
    """Fraction of grid cells whose estimated routing utilization stays
    below 0.9.

    Demand spreads each net's physical HPWL uniformly over its bounding box
    (the box-coverage fraction stands in for the routing probability);
    capacity per cell sums track-length over the metal stack, alternating
    horizontal and vertical layers.
    """
    spec = process_spec or ProcessSpec()
    rows = cols = int(resolution)
    if netlist.n_nets == 0:
        return 1.0
    cw, ch = netlist.canvas
    sx, sy = cw / cols, ch / rows
    capacity = 0.0
    for li, (_, pitch, _) in enumerate(spec.layers):
        if li % 2 == 0:
            capacity += (sy / pitch) * sx
        else:
            capacity += (sx / pitch) * sy

    from .metrics import net_bboxes

    bb = net_bboxes(netlist, placement)
    # physical coordinates of box edges
    px0 = (bb[:, 0] + 1.0) * cw / 2.0
    px1 = (bb[:, 1] + 1.0) * cw / 2.0
    py0 = (bb[:, 2] + 1.0) * ch / 2.0
    py1 = (bb[:, 3] + 1.0) * ch / 2.0
    length = (px1 - px0) + (py1 - py0)
    demand = np.zeros((rows, cols))
    col_edges = np.linspace(0.0, cw, cols + 1)
    row_edges = np.linspace(0.0, ch, rows + 1)
    for j in range(netlist.n_nets):
        w = max(px1[j] - px0[j], 1e-12)
        h = max(py1[j] - py0[j], 1e-12)
        ox = np.maximum(
            0.0, np.minimum(px1[j], col_edges[1:]) - np.maximum(px0[j], col_edges[:-1])
        )
        oy = np.maximum(
            0.0, np.minimum(py1[j], row_edges[1:]) - np.maximum(py0[j], row_edges[:-1])
        )
        if px1[j] == px0[j]:
            ox = (col_edges[:-1] <= px0[j]) & (px0[j] < col_edges[1:])
            ox = ox.astype(np.float64) * w
        if py1[j] == py0[j]:
            oy = (row_edges[:-1] <= py0[j]) & (py0[j] < row_edges[1:])
            oy = oy.astype(np.float64) * h
        coverage = np.outer(oy / h, ox / w)
        demand += length[j] * coverage
    util = demand / capacity
    return float(np.mean(util < 0.9))


# ---------------------------------------------------------------------------
# Quadratic reference placement and dataset assembly
# ---------------------------------------------------------------------------


def quadratic_placement(netlist: Netlist, fixed: Placement | None = None) -> Placement:
    """One-shot least-squares solve of the star-model quadratic wirelength.

    I/O pads stay fixed (at ``fixed`` positions when given, else at their
    reference-grid slots); a small ridge keeps the system well-posed when no
    pads exist. The result is a quality reference, not a legal placement.
    """
    n = netlist.n_modules
    is_fixed = np.array([m.kind is ModuleKind.IO_PAD for m in netlist.modules])
    if fixed is not None:
        anchor = fixed.coords
    else:
        from .metrics import reference_placement

        anchor = reference_placement(netlist).coords
    lap = np.zeros((n, n))
    rhs_shift = np.zeros((n, 2))
    for net in netlist.nets:
        mods = [m for m, _ in net.endpoints]
        offs = np.array(
            [
                (netlist.modules[m].pins[p].dx, netlist.modules[m].pins[p].dy)
                for m, p in net.endpoints
            ]
        )
        k = len(mods)
        if k < 2:
            continue
        w = 1.0 / k
        for a in range(k):
            for b in range(a + 1, k):
                i, j = mods[a], mods[b]
                if i == j:
                    continue
                lap[i, i] += w
                lap[j, j] += w
                lap[i, j] -= w
                lap[j, i] -= w
                rhs_shift[i] -= w * (offs[a] - offs[b])
                rhs_shift[j] += w * (offs[a] - offs[b])
    free = np.flatnonzero(~is_fixed)
    fixed_idx = np.flatnonzero(is_fixed)
    out = anchor.copy()
    if free.size == 0:
        return Placement(out)
    a_ff = lap[np.ix_(free, free)] + 1e-6 * np.eye(free.size)
    coords = np.empty((free.size, 2))
    for axis in range(2):
        b = rhs_shift[free, axis]
        if fixed_idx.size:
            b = b - lap[np.ix_(free, fixed_idx)] @ anchor[fixed_idx, axis]
        coords[:, axis] = np.linalg.solve(a_ff, b)
    out[free] = coords
    return Placement(np.clip(out, -1.0, 1.0))


def dataset_relative_energy(e_actual: float, e_analytical: float) -> float:
    """exp(-(E_actual - E_analytical) / E_analytical), clamped into [0.01, 1].

    Matching energies map to 1; twice the reference maps to 1/e. The floor
    keeps log-features finite for very bad placements.
    """
    return float(
        np.clip(math.exp(-max(0.0, e_actual - e_analytical) / e_analytical), 0.01, 1.0)
    )


def build_dataset(
    count: int,
    process_spec: ProcessSpec | None = None,
    edge_params: EdgeModelParams | None = None,
    *,
    n_range: tuple[int, int] = (40, 120),
    aspect_range: tuple[float, float] = (0.5, 2.0),
    f_target: float = 1.0e9,
    utilization: float = 0.55,
    variants: int = 8,
    seed: int = 0,
    resolution: int = 32,
    exclude_infra: bool = True,
) -> tuple[list[tuple[Netlist, Placement, float]], list[dict]]:
    """Pre-training corpus: per netlist, a spread of placements with their
    relative energies.

    Each instance contributes the quadratic-solve placement (relative energy
    1 by construction), the generator's legal placement, jittered versions of
    both, and a uniform-random one. Relative energy follows
    exp(-(E - E_analytical) / E_analytical) against the quadratic solve's
    composite energy, clamped into [0.01, 1]. Infrastructure nets (clock and
    power mesh) are dropped from the training copies by default.

    Returns (entries, instances): entries are the (netlist, placement, e_rel)
    training tuples; instances carry the full generated netlist, its legal
    placement, and stats for bundle export.
    """
    if count < 1:
        raise ValidationError("dataset needs at least one instance")
    from .metrics import EnergySpec, composite_energy

    rng = np.random.default_rng(seed)
    entries: list[tuple[Netlist, Placement, float]] = []
    instances: list[dict] = []
    for i in range(count):
        n_total = int(rng.integers(n_range[0], n_range[1] + 1))
        gen = GenSpec(
            n_total=n_total,
            f_target=f_target,
            seed=seed + 7919 * i,
            aspect_min=aspect_range[0],
            aspect_max=aspect_range[1],
            utilization=utilization,
        )
        netlist, legal, stats = generate_netlist(gen, process_spec, edge_params)
        train_net = filter_nets(netlist, INFRA_TAGS) if exclude_infra else netlist
        spec = EnergySpec.for_netlist(train_net, resolution)
        quad = quadratic_placement(train_net, None)

        # Variant ladder: the legal placement, progressively stronger jitters
        # of it (overlap grows fast, so small sigmas already spread the
        # energy), a uniform-random placement, and the quadratic pile-up as
        # the worst-case exemplar.
        pool: list[Placement] = [legal]
        sigmas = (0.01, 0.02, 0.04, 0.08, 0.2)
        k = 0
        while len(pool) < max(variants - 2, 1):
            sigma = sigmas[k % len(sigmas)]
            jitter = np.clip(
                legal.coords + sigma * rng.standard_normal(legal.coords.shape), -1.0, 1.0
            )
            pool.append(Placement(jitter))
            k += 1
        pool.append(Placement(rng.uniform(-1.0, 1.0, size=(train_net.n_modules, 2))))
        pool.append(quad)
        pool = pool[:variants]
        energies = [composite_energy(train_net, p, spec, resolution) for p in pool]
        # The unconstrained quadratic solve is NOT an energy lower bound once
        # the overlap penalty applies, so the normalizer is the pool minimum
        # (the lowest energy observed for this netlist), which the quadratic
        # solve participates in.
        e_ana = max(min(energies), 1e-9)
        for placement, energy in zip(pool, energies):
            entries.append((train_net, placement, dataset_relative_energy(energy, e_ana)))
        stats["instance"] = i
        instances.append({"netlist": netlist, "placement": legal, "stats": stats})
    return entries, instances
