"""Exact placement metric evaluation: HPWL, RUDY congestion, overlap, energy.

All functions are pure over immutable inputs and operate in canvas-normalized
coordinates. The composite energy combines the three raw metrics with
configurable weights; the relative energy maps a raw energy into (0, 1] using
per-netlist running bounds so that quality is comparable across netlists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .netlist import Netlist, Placement

DEFAULT_GRID = 32


@dataclass(frozen=True)
class CongestionGrid:
    """Row-major grid of non-negative routing-demand estimates."""

    cells: np.ndarray  # (rows, cols)

    def __post_init__(self):
        arr = np.asarray(self.cells, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"congestion grid must be 2-D, got shape {arr.shape}")
        if np.any(arr < 0):
            raise ValidationError("congestion grid holds negative cells")
        object.__setattr__(self, "cells", arr)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.cells.shape


@dataclass
class EnergySpec:
    """Objective weights, normalizers, and per-netlist energy bounds.

    Weights default to (1.0, 0.5, 10.0): the overlap term is a constraint
    stand-in and has to dominate. HPWL and congestion normalizers come from a
    deterministic reference placement (uniform grid in id order) so that the
    three terms are commensurate; the overlap ratio is already dimensionless
    and enters unnormalized.
    """

    lambda_hpwl: float = 1.0
    lambda_cong: float = 0.5
    lambda_over: float = 10.0
    e_hpwl_ref: float | None = None
    e_cong_ref: float | None = None
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if min(self.lambda_hpwl, self.lambda_cong, self.lambda_over) < 0:
            raise ValidationError("energy weights must be non-negative")
        for ref in (self.e_hpwl_ref, self.e_cong_ref):
            if ref is not None and ref <= 0:
                raise ValidationError("energy normalizers must be positive")

    @classmethod
    def for_netlist(
        cls, netlist: Netlist, resolution: int = DEFAULT_GRID, **weights
    ) -> "EnergySpec":
        """Build a spec with normalizers taken from the reference placement."""
        ref = reference_placement(netlist)
        spec = cls(**weights)
        spec.e_hpwl_ref = max(hpwl(netlist, ref), 1e-9)
        spec.e_cong_ref = max(max_congestion(rudy_map(netlist, ref, resolution)), 1e-9)
        return spec


# ---------------------------------------------------------------------------
# Pin geometry helpers
# ---------------------------------------------------------------------------


def _check_lengths(netlist: Netlist, placement: Placement) -> None:
    if len(placement) != netlist.n_modules:
        raise ValidationError(
            f"placement has {len(placement)} coords for {netlist.n_modules} modules"
        )


def pin_positions(netlist: Netlist, placement: Placement) -> np.ndarray:
    """Absolute positions of every net endpoint, flat CSR order. Shape (P, 2)."""
    _check_lengths(netlist, placement)
    if netlist.pin_module.size == 0:
        return np.zeros((0, 2))
    return placement.coords[netlist.pin_module] + netlist.pin_offset


def net_bboxes(netlist: Netlist, placement: Placement) -> np.ndarray:
    """Per-net pin bounding boxes as columns (xmin, xmax, ymin, ymax), shape (M, 4)."""
    pos = pin_positions(netlist, placement)
    if netlist.n_nets == 0:
        return np.zeros((0, 4))
    starts = netlist.net_start[:-1]
    return np.stack(
        [
            np.minimum.reduceat(pos[:, 0], starts),
            np.maximum.reduceat(pos[:, 0], starts),
            np.minimum.reduceat(pos[:, 1], starts),
            np.maximum.reduceat(pos[:, 1], starts),
        ],
        axis=1,
    )


# ---------------------------------------------------------------------------
# HPWL
# ---------------------------------------------------------------------------


def per_net_hpwl(netlist: Netlist, placement: Placement) -> np.ndarray:
    """Half-perimeter wirelength of each net's pin bounding box. Shape (M,)."""
    bb = net_bboxes(netlist, placement)
    if bb.shape[0] == 0:
        return np.zeros(0)
    return (bb[:, 1] - bb[:, 0]) + (bb[:, 3] - bb[:, 2])


def hpwl(
    netlist: Netlist, placement: Placement, skip_tags: tuple[str, ...] = ()
) -> float:
    """Total HPWL: sum over nets of x-span plus y-span of their pins.

    Degenerate (single-pin) nets contribute zero. ``skip_tags`` drops nets by
    annotation, e.g. clock or power infrastructure.
    """
    spans = per_net_hpwl(netlist, placement)
    if skip_tags and spans.size:
        mask = np.array([t not in skip_tags for t in netlist.net_tags])
        spans = spans[mask]
    return float(np.sum(spans))


# ---------------------------------------------------------------------------
# RUDY congestion
# ---------------------------------------------------------------------------


def _resolution_pair(resolution) -> tuple[int, int]:
    if isinstance(resolution, int):
        rows = cols = resolution
    else:
        rows, cols = resolution
    if rows < 1 or cols < 1:
        raise ValidationError(f"congestion resolution must be >= 1, got {resolution}")
    return int(rows), int(cols)


def _cell_span(lo: float, hi: float, pitch: float, n: int) -> tuple[int, int]:
    """Index range [i0, i1] of grid cells intersecting [lo, hi] on one axis.

    An interval whose upper end sits exactly on a cell boundary does not
    claim the next cell (the intersection there has zero measure).
    """
    i0 = int(np.clip(math.floor((lo + 1.0) / pitch), 0, n - 1))
    hi_raw = (hi + 1.0) / pitch
    i1 = math.floor(hi_raw)
    if i1 == hi_raw and i1 > math.floor((lo + 1.0) / pitch):
        i1 -= 1
    i1 = int(np.clip(i1, 0, n - 1))
    return i0, max(i0, i1)


def rudy_map(netlist: Netlist, placement: Placement, resolution=DEFAULT_GRID) -> CongestionGrid:
    """RUDY congestion estimate over a uniform grid.

    Every cell intersected by a net's pin bounding box accumulates the net's
    uniform demand 1/w + 1/h, with the box dimensions floored at one cell
    pitch so degenerate boxes stay finite.
    """
    rows, cols = _resolution_pair(resolution)
    grid = np.zeros((rows, cols))
    if netlist.n_nets == 0:
        return CongestionGrid(grid)
    pitch_x, pitch_y = 2.0 / cols, 2.0 / rows
    bb = net_bboxes(netlist, placement)
    w = np.maximum(bb[:, 1] - bb[:, 0], pitch_x)
    h = np.maximum(bb[:, 3] - bb[:, 2], pitch_y)
    demand = 1.0 / w + 1.0 / h
    for j in range(bb.shape[0]):
        c0, c1 = _cell_span(bb[j, 0], bb[j, 1], pitch_x, cols)
        r0, r1 = _cell_span(bb[j, 2], bb[j, 3], pitch_y, rows)
        grid[r0 : r1 + 1, c0 : c1 + 1] += demand[j]
    return CongestionGrid(grid)


def max_congestion(grid: CongestionGrid) -> float:
    """Peak cell value of a congestion grid (0 for an all-zero grid)."""
    if grid.cells.size == 0:
        return 0.0
    return float(np.max(grid.cells))


# ---------------------------------------------------------------------------
# Overlap
# ---------------------------------------------------------------------------


def overlap_ratio(netlist: Netlist, placement: Placement) -> float:
    """Sum of pairwise rectangle intersection areas over total module area.

    I/O pads are excluded. A region covered by k modules is counted once per
    pair, i.e. C(k, 2) times, matching the pairwise penalty structure used by
    the legality potential.
    """
    _check_lengths(netlist, placement)
    mask = netlist.area_mask
    if not np.any(mask):
        return 0.0
    xy = placement.coords[mask]
    wh = netlist.module_sizes[mask]
    total_area = float(np.sum(wh[:, 0] * wh[:, 1]))
    n = xy.shape[0]
    overlap = 0.0
    # Row-chunked pair scan keeps memory bounded for large N.
    chunk = max(1, int(2e6) // max(n, 1))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        dx = np.abs(xy[s:e, None, 0] - xy[None, :, 0])
        dy = np.abs(xy[s:e, None, 1] - xy[None, :, 1])
        # Intersection length per axis: penetration depth capped by both
        # extents (containment must not overcount).
        ox = np.maximum(
            0.0,
            np.minimum(
                np.minimum(wh[s:e, None, 0], wh[None, :, 0]),
                (wh[s:e, None, 0] + wh[None, :, 0]) / 2.0 - dx,
            ),
        )
        oy = np.maximum(
            0.0,
            np.minimum(
                np.minimum(wh[s:e, None, 1], wh[None, :, 1]),
                (wh[s:e, None, 1] + wh[None, :, 1]) / 2.0 - dy,
            ),
        )
        area = ox * oy
        # Zero the diagonal and count each unordered pair once.
        idx = np.arange(s, e)
        area[np.arange(e - s), idx] = 0.0
        cols = np.arange(n)
        area[cols[None, :] < idx[:, None]] = 0.0
        overlap += float(np.sum(area))
    return overlap / total_area


# ---------------------------------------------------------------------------
# Composite and relative energy
# ---------------------------------------------------------------------------


def composite_energy(
    netlist: Netlist,
    placement: Placement,
    spec: EnergySpec,
    resolution: int = DEFAULT_GRID,
    hpwl_skip_tags: tuple[str, ...] = (),
) -> float:
    """Weighted sum of normalized HPWL, peak RUDY congestion, and overlap."""
    if spec.e_hpwl_ref is None or spec.e_cong_ref is None:
        raise ValidationError("energy normalizers unset; use EnergySpec.for_netlist")
    e_hpwl = hpwl(netlist, placement, skip_tags=hpwl_skip_tags)
    e_cong = max_congestion(rudy_map(netlist, placement, resolution))
    e_over = overlap_ratio(netlist, placement)
    return (
        spec.lambda_hpwl * e_hpwl / spec.e_hpwl_ref
        + spec.lambda_cong * e_cong / spec.e_cong_ref
        + spec.lambda_over * e_over
    )


def relative_energy(energy: float, bounds: tuple[float, float]) -> float:
    """Map a raw energy into (0, 1] against per-netlist (min, max) bounds.

    exp(-(E - E_min) / (E_max - E_min)); the minimum maps to 1, the maximum to
    1/e. Degenerate bounds return 1. Values below the recorded minimum clamp
    to 1 so the range contract holds while bounds are still warming up.
    """
    e_min, e_max = bounds
    if e_max <= e_min:
        return 1.0
    return min(1.0, math.exp(-(energy - e_min) / (e_max - e_min)))


def update_bounds(spec: EnergySpec, netlist_id: str, energy: float) -> EnergySpec:
    """Fold one observed energy into the running (min, max) for a netlist."""
    lo, hi = spec.bounds.get(netlist_id, (energy, energy))
    spec.bounds[netlist_id] = (min(lo, energy), max(hi, energy))
    return spec


# ---------------------------------------------------------------------------
# Reference placement and reports
# ---------------------------------------------------------------------------


def reference_placement(netlist: Netlist) -> Placement:
    """Deterministic uniform-grid layout in id order, used for normalizers."""
    n = netlist.n_modules
    if n == 0:
        return Placement(np.zeros((0, 2)))
    k = math.ceil(math.sqrt(n))
    idx = np.arange(n)
    step = 2.0 / k
    x = -1.0 + (idx % k + 0.5) * step
    y = -1.0 + (idx // k + 0.5) * step
    return Placement(np.stack([x, y], axis=1))


def metrics_report(
    netlist: Netlist,
    placement: Placement,
    spec: EnergySpec | None = None,
    resolution: int = DEFAULT_GRID,
) -> dict:
    """The standard metrics bundle: hpwl, max_congestion, overlap_ratio, energy, e_rel."""
    if spec is None:
        spec = EnergySpec.for_netlist(netlist, resolution)
    energy = composite_energy(netlist, placement, spec, resolution)
    bounds = spec.bounds.get(netlist.name)
    return {
        "hpwl": hpwl(netlist, placement),
        "max_congestion": max_congestion(rudy_map(netlist, placement, resolution)),
        "overlap_ratio": overlap_ratio(netlist, placement),
        "energy": energy,
        "e_rel": relative_energy(energy, bounds) if bounds else None,
    }
