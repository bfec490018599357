"""Metric evaluators against independent brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from macroplace.errors import ValidationError
from macroplace.metrics import (
    CongestionGrid,
    EnergySpec,
    composite_energy,
    hpwl,
    max_congestion,
    metrics_report,
    overlap_ratio,
    reference_placement,
    relative_energy,
    rudy_map,
    update_bounds,
)
from macroplace.netlist import ModuleKind, Net, Netlist, Placement

from conftest import make_module, random_netlist


# --- independent oracles (deliberately naive re-implementations) -----------


def hpwl_oracle(netlist, placement):
    total = 0.0
    for net in netlist.nets:
        xs, ys = [], []
        for m, p in net.endpoints:
            pin = netlist.modules[m].pins[p]
            xs.append(placement.coords[m, 0] + pin.dx)
            ys.append(placement.coords[m, 1] + pin.dy)
        total += (max(xs) - min(xs)) + (max(ys) - min(ys))
    return total


def rudy_oracle(netlist, placement, rows, cols):
    grid = np.zeros((rows, cols))
    px, py = 2.0 / cols, 2.0 / rows
    for net in netlist.nets:
        xs, ys = [], []
        for m, p in net.endpoints:
            pin = netlist.modules[m].pins[p]
            xs.append(placement.coords[m, 0] + pin.dx)
            ys.append(placement.coords[m, 1] + pin.dy)
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        demand = 1.0 / max(x1 - x0, px) + 1.0 / max(y1 - y0, py)
        for r in range(rows):
            for c in range(cols):
                cx0, cx1 = -1.0 + c * px, -1.0 + (c + 1) * px
                cy0, cy1 = -1.0 + r * py, -1.0 + (r + 1) * py
                ix = min(x1, cx1) - max(x0, cx0)
                iy = min(y1, cy1) - max(y0, cy0)
                covers_x = ix > 0 or (ix == 0 and x1 == x0 and cx0 <= x0 < cx1)
                covers_y = iy > 0 or (iy == 0 and y1 == y0 and cy0 <= y0 < cy1)
                # clip to the canvas edge cells like the implementation
                if x0 >= 1.0 and c == cols - 1:
                    covers_x = True
                if x1 <= -1.0 and c == 0:
                    covers_x = True
                if y0 >= 1.0 and r == rows - 1:
                    covers_y = True
                if y1 <= -1.0 and r == 0:
                    covers_y = True
                if covers_x and covers_y:
                    grid[r, c] += demand
    return grid


def overlap_oracle(netlist, placement):
    mods = [m for m in netlist.modules if m.kind is not ModuleKind.IO_PAD and m.area > 0]
    total_area = sum(m.area for m in mods)
    if total_area == 0:
        return 0.0
    overlap = 0.0
    for a in range(len(mods)):
        for b in range(a + 1, len(mods)):
            i, j = mods[a], mods[b]
            xi, yi = placement.coords[i.id]
            xj, yj = placement.coords[j.id]
            ox = min(xi + i.width / 2, xj + j.width / 2) - max(xi - i.width / 2, xj - j.width / 2)
            oy = min(yi + i.height / 2, yj + j.height / 2) - max(yi - i.height / 2, yj - j.height / 2)
            if ox > 0 and oy > 0:
                overlap += ox * oy
    return overlap / total_area


def _two_pin_netlist(p0, p1, rows_cols=(8, 4)):
    mods = (
        make_module(0, 0.01, 0.01, pins=[(0.0, 0.0)]),
        make_module(1, 0.01, 0.01, pins=[(0.0, 0.0)]),
    )
    nets = (Net(id=0, endpoints=((0, 0), (1, 0))),)
    netlist = Netlist(modules=mods, nets=nets, canvas=(2.0, 2.0))
    return netlist, Placement(np.array([p0, p1]))


class TestHpwl:
    def test_single_net_span(self):
        netlist, placement = _two_pin_netlist([0.0, 0.0], [1.0, 1.0])
        assert hpwl(netlist, placement) == pytest.approx(2.0)

    def test_single_pin_net_contributes_zero(self):
        mods = (make_module(0, 0.1, 0.1, pins=[(0.0, 0.0)]),)
        netlist = Netlist(
            modules=mods, nets=(Net(id=0, endpoints=((0, 0),)),), canvas=(2.0, 2.0)
        )
        assert hpwl(netlist, Placement(np.array([[0.3, -0.2]]))) == 0.0

    def test_matches_bruteforce(self, rng):
        for _ in range(20):
            netlist, placement = random_netlist(rng, 5, 5)
            assert hpwl(netlist, placement) == pytest.approx(
                hpwl_oracle(netlist, placement), rel=1e-12
            )

    def test_translation_invariance(self, rng):
        netlist, placement = random_netlist(rng, 6, 8)
        shifted = Placement(placement.coords * 0.5 + 0.05)
        base = Placement(placement.coords * 0.5)
        assert hpwl(netlist, shifted) == pytest.approx(hpwl(netlist, base), rel=1e-9)

    def test_positive_homogeneity_with_centered_pins(self, rng):
        netlist, placement = random_netlist(rng, 6, 8, centered_pins=True)
        for s in (0.25, 0.5, 2.0):
            scaled = Placement(placement.coords * s)
            assert hpwl(netlist, scaled) == pytest.approx(s * hpwl(netlist, placement), rel=1e-9)

    def test_skip_tags(self, rng):
        netlist, placement = random_netlist(rng, 6, 4)
        tagged = Netlist(
            modules=netlist.modules,
            nets=tuple(
                Net(id=n.id, endpoints=n.endpoints, tag="power" if n.id == 0 else "signal")
                for n in netlist.nets
            ),
            canvas=netlist.canvas,
        )
        full = hpwl(tagged, placement)
        partial = hpwl(tagged, placement, skip_tags=("power",))
        assert partial < full


class TestRudy:
    def test_single_net_direct_substitution(self):
        # bbox exactly 0.5 x 0.25 inside one cell of an (8 rows, 4 cols) grid
        netlist, placement = _two_pin_netlist([-1.0, -1.0], [-0.5, -0.75])
        grid = rudy_map(netlist, placement, (8, 4))
        assert grid.cells[0, 0] == pytest.approx(1 / 0.5 + 1 / 0.25)
        assert np.count_nonzero(grid.cells) == 1

    def test_empty_netlist(self):
        netlist = Netlist(modules=(), nets=(), canvas=(2.0, 2.0))
        grid = rudy_map(netlist, Placement(np.zeros((0, 2))), 4)
        assert np.all(grid.cells == 0)

    def test_matches_bruteforce(self, rng):
        for _ in range(10):
            netlist, placement = random_netlist(rng, 6, 7)
            got = rudy_map(netlist, placement, (5, 6)).cells
            want = rudy_oracle(netlist, placement, 5, 6)
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_total_mass_invariant(self, rng):
        netlist, placement = random_netlist(rng, 6, 9)
        grid = rudy_map(netlist, placement, (5, 6)).cells
        want = rudy_oracle(netlist, placement, 5, 6)
        assert np.sum(grid) == pytest.approx(np.sum(want), rel=1e-12)

    def test_max_congestion(self):
        assert max_congestion(CongestionGrid(np.zeros((3, 3)))) == 0.0
        cells = np.zeros((3, 3))
        cells[1, 2] = 6.0
        assert max_congestion(CongestionGrid(cells)) == 6.0

    def test_max_matches_fold(self, rng):
        netlist, placement = random_netlist(rng, 5, 6)
        grid = rudy_map(netlist, placement, 8)
        fold = 0.0
        for row in grid.cells:
            for v in row:
                fold = max(fold, v)
        assert max_congestion(grid) == fold

    def test_resolution_validation(self, rng):
        netlist, placement = random_netlist(rng, 3, 2)
        with pytest.raises(ValidationError):
            rudy_map(netlist, placement, 0)


class TestOverlap:
    def test_disjoint_squares(self):
        mods = (make_module(0, 0.5, 0.5), make_module(1, 0.5, 0.5))
        netlist = Netlist(modules=mods, nets=(), canvas=(2.0, 2.0))
        placement = Placement(np.array([[-0.5, -0.5], [0.5, 0.5]]))
        assert overlap_ratio(netlist, placement) == 0.0

    def test_coincident_unit_squares(self):
        mods = (make_module(0, 1.0, 1.0), make_module(1, 1.0, 1.0))
        netlist = Netlist(modules=mods, nets=(), canvas=(2.0, 2.0))
        placement = Placement(np.zeros((2, 2)))
        assert overlap_ratio(netlist, placement) == pytest.approx(0.5)

    def test_io_pads_excluded(self):
        mods = (
            make_module(0, 1.0, 1.0),
            make_module(1, 0.0, 0.0, kind=ModuleKind.IO_PAD),
        )
        netlist = Netlist(modules=mods, nets=(), canvas=(2.0, 2.0))
        assert overlap_ratio(netlist, Placement(np.zeros((2, 2)))) == 0.0

    def test_matches_bruteforce(self, rng):
        for _ in range(20):
            netlist, placement = random_netlist(rng, int(rng.integers(2, 12)), 1)
            got = overlap_ratio(netlist, placement)
            want = overlap_oracle(netlist, placement)
            assert got == pytest.approx(want, rel=1e-12, abs=1e-15)

    def test_zero_iff_no_positive_intersection(self, rng):
        for _ in range(20):
            netlist, placement = random_netlist(rng, 6, 1)
            ratio = overlap_ratio(netlist, placement)
            assert (ratio == 0.0) == (overlap_oracle(netlist, placement) == 0.0)


class TestEnergy:
    def _simple(self):
        netlist, placement = _two_pin_netlist([-0.5, 0.0], [0.5, 0.0])
        return netlist, placement

    def test_reference_normalized_sum(self):
        netlist, placement = self._simple()
        spec = EnergySpec(lambda_hpwl=1.0, lambda_cong=1.0, lambda_over=1.0)
        spec.e_hpwl_ref = hpwl(netlist, placement)
        spec.e_cong_ref = max_congestion(rudy_map(netlist, placement, 32))
        assert composite_energy(netlist, placement, spec, 32) == pytest.approx(2.0)

    def test_overlap_only(self):
        mods = (make_module(0, 1.0, 1.0), make_module(1, 1.0, 1.0))
        netlist = Netlist(modules=mods, nets=(), canvas=(2.0, 2.0))
        spec = EnergySpec(lambda_hpwl=0.0, lambda_cong=0.0, lambda_over=1.0)
        spec.e_hpwl_ref = spec.e_cong_ref = 1.0
        assert composite_energy(netlist, Placement(np.zeros((2, 2))), spec, 8) == pytest.approx(0.5)

    def test_hand_computed_three_module_instance(self):
        mods = (
            make_module(0, 0.2, 0.2, pins=[(0.0, 0.0)]),
            make_module(1, 0.2, 0.2, pins=[(0.0, 0.0)]),
            make_module(2, 0.4, 0.4),
        )
        nets = (Net(id=0, endpoints=((0, 0), (1, 0))),)
        netlist = Netlist(modules=mods, nets=nets, canvas=(2.0, 2.0))
        placement = Placement(np.array([[-0.5, 0.0], [0.5, 0.5], [0.5, 0.4]]))
        spec = EnergySpec(lambda_hpwl=1.0, lambda_cong=0.5, lambda_over=10.0)
        spec.e_hpwl_ref = 2.0
        spec.e_cong_ref = 4.0
        # hand computation: hpwl = 1.0 + 0.5; overlap pair (1,2): 0.2 x 0.2 -> 0.04
        # over ratio = 0.04 / (0.04 + 0.04 + 0.16) = 1/6
        grid = rudy_map(netlist, placement, 32)
        want = 1.0 * 1.5 / 2.0 + 0.5 * max_congestion(grid) / 4.0 + 10.0 * (0.04 / 0.24)
        assert composite_energy(netlist, placement, spec, 32) == pytest.approx(want)

    def test_unset_refs_error(self):
        netlist, placement = self._simple()
        with pytest.raises(ValidationError, match="normalizers"):
            composite_energy(netlist, placement, EnergySpec(), 8)


class TestRelativeEnergy:
    def test_closed_forms(self):
        assert relative_energy(1.0, (1.0, 4.0)) == pytest.approx(1.0)
        assert relative_energy(4.0, (1.0, 4.0)) == pytest.approx(0.36788, abs=1e-5)
        assert relative_energy(2.5, (1.0, 4.0)) == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_degenerate_bounds(self):
        assert relative_energy(3.0, (3.0, 3.0)) == 1.0

    def test_strictly_decreasing_in_bounds(self):
        values = [relative_energy(e, (0.0, 10.0)) for e in np.linspace(0.0, 10.0, 25)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert all(0.0 < v <= 1.0 for v in values)

    def test_update_bounds_running_extremes(self):
        spec = EnergySpec()
        update_bounds(spec, "g", 5.0)
        assert spec.bounds["g"] == (5.0, 5.0)
        update_bounds(spec, "g", 3.0)
        assert spec.bounds["g"] == (3.0, 5.0)
        update_bounds(spec, "g", 4.0)
        assert spec.bounds["g"] == (3.0, 5.0)


class TestReferencePlacement:
    def test_deterministic_grid(self, rng):
        netlist, _ = random_netlist(rng, 7, 3)
        a = reference_placement(netlist)
        b = reference_placement(netlist)
        assert a.same_as(b)
        assert np.all(np.abs(a.coords) <= 1.0)

    def test_spec_for_netlist_sets_refs(self, rng):
        netlist, _ = random_netlist(rng, 5, 4)
        spec = EnergySpec.for_netlist(netlist, 16)
        assert spec.e_hpwl_ref > 0 and spec.e_cong_ref > 0

    def test_metrics_report_keys(self, rng):
        netlist, placement = random_netlist(rng, 5, 4)
        report = metrics_report(netlist, placement)
        assert set(report) == {"hpwl", "max_congestion", "overlap_ratio", "energy", "e_rel"}
