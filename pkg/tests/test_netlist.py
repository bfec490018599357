"""Netlist model, Bookshelf parsing, normalization, and structure queries."""

from __future__ import annotations

import numpy as np
import pytest

from macroplace.errors import ParseError, ValidationError
from macroplace.netlist import (
    Module,
    ModuleKind,
    Net,
    Netlist,
    Placement,
    PinOffset,
    degree_histogram,
    filter_nets,
    netlist_from_json,
    netlist_to_json,
    normalize_canvas,
    parse_bookshelf,
    parse_placement,
    pin_absolute_position,
    serialize_bookshelf,
    validate_netlist,
)

from conftest import make_module, random_netlist

MINIMAL = {
    "nodes": "a 10 10\nb 10 10\n",
    "nets": "NetDegree : 2 n0\n  a B : 0 0\n  b B : 0 0\n",
}


class TestParseBookshelf:
    def test_minimal_bundle(self):
        netlist, placement = parse_bookshelf(MINIMAL, canvas=(100.0, 100.0))
        assert netlist.n_modules == 2
        assert netlist.n_nets == 1
        assert netlist.modules[0].width == pytest.approx(0.2)
        assert netlist.modules[1].height == pytest.approx(0.2)
        assert placement is None

    def test_dangling_endpoint(self):
        bad = dict(MINIMAL, nets="NetDegree : 2 n0\n  a B : 0 0\n  c B : 0 0\n")
        with pytest.raises(ParseError, match="dangling"):
            parse_bookshelf(bad, canvas=(100.0, 100.0))

    def test_duplicate_module_name(self):
        bad = dict(MINIMAL, nodes="a 10 10\na 5 5\n")
        with pytest.raises(ParseError, match="duplicate module"):
            parse_bookshelf(bad, canvas=(100.0, 100.0))

    def test_non_positive_dimension(self):
        bad = dict(MINIMAL, nodes="a 10 10\nb 0 10\n")
        with pytest.raises(ParseError, match="non-positive"):
            parse_bookshelf(bad, canvas=(100.0, 100.0))

    def test_duplicate_endpoint_rejected(self):
        bad = dict(MINIMAL, nets="NetDegree : 2 n0\n  a B : 0 0\n  a B : 0 0\n")
        with pytest.raises(ParseError, match="duplicate endpoint"):
            parse_bookshelf(bad, canvas=(100.0, 100.0))

    def test_error_carries_line_number(self):
        bad = dict(MINIMAL, nodes="a 10 10\nb ten 10\n")
        with pytest.raises(ParseError, match="nodes:2"):
            parse_bookshelf(bad, canvas=(100.0, 100.0))

    def test_terminal_flag_is_io_pad(self):
        sections = dict(MINIMAL, nodes="a 10 10\nb 10 10\npad 0 0 terminal\n")
        netlist, _ = parse_bookshelf(sections, canvas=(100.0, 100.0))
        assert netlist.modules[2].kind is ModuleKind.IO_PAD

    def test_ignored_sections_warn(self):
        sections = dict(MINIMAL, wts="whatever\n")
        with pytest.warns(UserWarning, match=r"\.wts"):
            parse_bookshelf(sections, canvas=(100.0, 100.0))

    def test_pl_parsed_into_unit_square(self):
        # .pl coordinates are physical module centers, die-center anchored
        sections = dict(MINIMAL, pl="a -25 -25 : N\nb 25 25 : N\n")
        _, placement = parse_bookshelf(sections, canvas=(100.0, 100.0))
        assert placement.coords[0] == pytest.approx([-0.5, -0.5])
        assert placement.coords[1] == pytest.approx([0.5, 0.5])

    def test_canvas_required_without_pl(self):
        with pytest.raises(ParseError, match="canvas"):
            parse_bookshelf(MINIMAL)

    def test_canvas_derived_from_pl(self):
        sections = dict(MINIMAL, pl="a -25 -25\nb 25 45\n")
        netlist, _ = parse_bookshelf(sections)
        assert netlist.canvas == (60.0, 100.0)


class TestNormalizeCanvas:
    def test_square_canvas(self):
        raw = Netlist(
            modules=(make_module(0, 10.0, 10.0),),
            nets=(),
            canvas=(100.0, 100.0),
            normalized=False,
        )
        norm = normalize_canvas(raw)
        assert norm.modules[0].width == pytest.approx(0.2)
        assert norm.modules[0].height == pytest.approx(0.2)

    def test_per_axis_scaling(self):
        raw = Netlist(
            modules=(make_module(0, 10.0, 10.0),),
            nets=(),
            canvas=(200.0, 100.0),
            normalized=False,
        )
        norm = normalize_canvas(raw)
        assert norm.modules[0].width == pytest.approx(0.1)
        assert norm.modules[0].height == pytest.approx(0.2)

    def test_idempotent(self):
        raw = Netlist(
            modules=(make_module(0, 10.0, 10.0),),
            nets=(),
            canvas=(100.0, 100.0),
            normalized=False,
        )
        once = normalize_canvas(raw)
        assert normalize_canvas(once) is once

    def test_zero_area_canvas(self):
        raw = Netlist(modules=(), nets=(), canvas=(0.0, 100.0), normalized=False)
        with pytest.raises(ValidationError, match="canvas"):
            normalize_canvas(raw)


class TestPinAbsolutePosition:
    def test_examples(self):
        mod = make_module(0, 0.4, 0.4, pins=[(0.1, -0.1), (0.0, 0.0)])
        netlist = Netlist(modules=(mod,), nets=(), canvas=(1.0, 1.0))
        at_origin = Placement(np.array([[0.0, 0.0]]))
        assert pin_absolute_position(netlist, at_origin, 0, 0) == pytest.approx((0.1, -0.1))
        shifted = Placement(np.array([[0.5, 0.5]]))
        assert pin_absolute_position(netlist, shifted, 0, 1) == pytest.approx((0.5, 0.5))

    def test_out_of_range(self):
        mod = make_module(0, 0.4, 0.4, pins=[(0.0, 0.0)])
        netlist = Netlist(modules=(mod,), nets=(), canvas=(1.0, 1.0))
        placement = Placement(np.zeros((1, 2)))
        with pytest.raises(ValidationError):
            pin_absolute_position(netlist, placement, 1, 0)
        with pytest.raises(ValidationError):
            pin_absolute_position(netlist, placement, 0, 5)

    def test_matches_bruteforce(self, rng):
        netlist, placement = random_netlist(rng, 8, 12)
        for net in netlist.nets:
            for m, p in net.endpoints:
                got = pin_absolute_position(netlist, placement, m, p)
                pin = netlist.modules[m].pins[p]
                want = (placement.coords[m, 0] + pin.dx, placement.coords[m, 1] + pin.dy)
                assert got == pytest.approx(want, abs=1e-12)


class TestDegreeHistogram:
    def test_two_modules_one_net(self):
        netlist, _ = parse_bookshelf(MINIMAL, canvas=(100.0, 100.0))
        assert degree_histogram(netlist) == {1: 2}

    def test_star(self):
        pins = [[] for _ in range(5)]
        nets = []
        for leaf in range(1, 5):
            pins[0].append((0.0, 0.0))
            pins[leaf].append((0.0, 0.0))
            nets.append(
                Net(id=leaf - 1, endpoints=((0, len(pins[0]) - 1), (leaf, 0)))
            )
        modules = tuple(make_module(i, 0.1, 0.1, pins=pins[i]) for i in range(5))
        netlist = Netlist(modules=modules, nets=tuple(nets), canvas=(1.0, 1.0))
        assert degree_histogram(netlist) == {4: 1, 1: 4}

    def test_sums_to_module_count(self, rng):
        for _ in range(10):
            netlist, _ = random_netlist(rng, int(rng.integers(3, 15)), int(rng.integers(1, 20)))
            hist = degree_histogram(netlist)
            assert sum(hist.values()) == netlist.n_modules


class TestRoundTrip:
    def test_parse_serialize_parse_identity_over_random_instances(self):
        # Kinds are inferred from the text (modal height rule), so the
        # identity starts from parsed text: parse(serialize(parse(s))) must
        # equal parse(s) structurally.
        rng = np.random.default_rng(7)
        for trial in range(50):
            source, src_placement = random_netlist(
                rng, int(rng.integers(2, 12)), int(rng.integers(1, 15))
            )
            text0 = serialize_bookshelf(source, src_placement)
            n1, p1 = parse_bookshelf(text0, canvas=source.canvas)
            n2, p2 = parse_bookshelf(
                serialize_bookshelf(n1, p1), canvas=source.canvas
            )
            assert n2 == n1, f"trial {trial}"
            assert p2.same_as(p1), f"trial {trial}"
            # arbitrary constructed geometry lands within an ulp of itself
            for ma, mb in zip(n1.modules, source.modules):
                assert ma.width == pytest.approx(mb.width, rel=1e-15, abs=0)
                assert ma.height == pytest.approx(mb.height, rel=1e-15, abs=0)
                for pa, pb in zip(ma.pins, mb.pins):
                    assert pa.dx == pytest.approx(pb.dx, rel=1e-14, abs=1e-18)
                    assert pa.dy == pytest.approx(pb.dy, rel=1e-14, abs=1e-18)
            assert np.allclose(p1.coords, src_placement.coords, rtol=1e-14, atol=0)

    def test_double_round_trip_stable(self):
        rng = np.random.default_rng(8)
        netlist, placement = random_netlist(rng, 6, 9)
        s1 = serialize_bookshelf(netlist, placement)
        n1, p1 = parse_bookshelf(s1, canvas=netlist.canvas)
        s2 = serialize_bookshelf(n1, p1)
        assert s1 == s2

    def test_json_round_trip(self, rng):
        netlist, _ = random_netlist(rng, 5, 7)
        again = netlist_from_json(netlist_to_json(netlist))
        assert again == netlist

    def test_pl_round_trip_via_parse_placement(self, rng):
        netlist, placement = random_netlist(rng, 5, 6)
        sections = serialize_bookshelf(netlist, placement)
        again = parse_placement(netlist, sections["pl"])
        assert again.same_as(placement)


class TestValidation:
    def test_isolated_modules_flagged(self):
        mods = (make_module(0, 0.1, 0.1, pins=[(0, 0)]), make_module(1, 0.1, 0.1))
        netlist = Netlist(
            modules=mods,
            nets=(Net(id=0, endpoints=((0, 0),)),),
            canvas=(1.0, 1.0),
        )
        assert validate_netlist(netlist) == [1]

    def test_pin_outside_rectangle_rejected(self):
        mod = make_module(0, 0.1, 0.1, pins=[(0.2, 0.0)])
        netlist = Netlist(modules=(mod,), nets=(), canvas=(1.0, 1.0))
        with pytest.raises(ValidationError, match="outside"):
            validate_netlist(netlist)

    def test_placement_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            Placement(np.array([[0.0, np.nan]]))

    def test_clamp_counts_events(self):
        placement = Placement(np.array([[0.0, 0.0], [1.5, -2.0], [0.9, 0.2]]))
        clamped, events = placement.clamp()
        assert events == 1
        assert clamped.coords[1] == pytest.approx([1.0, -1.0])

    def test_filter_nets_renumbers(self, rng):
        netlist, _ = random_netlist(rng, 6, 8)
        tagged = Netlist(
            modules=netlist.modules,
            nets=tuple(
                Net(id=n.id, endpoints=n.endpoints, tag="clock" if n.id % 2 else "signal")
                for n in netlist.nets
            ),
            canvas=netlist.canvas,
        )
        kept = filter_nets(tagged, ("clock",))
        assert kept.n_nets == 4
        assert [n.id for n in kept.nets] == list(range(4))
