"""Hypergraph netlist model with Bookshelf-subset parsing and canvas normalization.

A netlist is a hypergraph: modules (macros, standard cells, I/O pads) are the
nodes, nets are hyperedges joining pins, and every pin carries an offset
relative to its parent module's center. All geometry inside the package lives
in canvas-normalized units: the die maps to the [-1, 1] x [-1, 1] square, so
module dimensions land in [0, 2]. Normalization is per-axis, which means a
non-square die still fills the whole square.

File formats:
  * Bookshelf subset: ``.nodes`` (name, width, height, optional ``terminal``
    flag), ``.nets`` (``NetDegree`` blocks with optional pin offsets), ``.pl``
    (module *center* coordinates, optional). ``.wts``/``.scl`` sections are
    ignored with a warning.
  * Canonical JSON dump of the full netlist, exact under round-trip.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import ParseError, ValidationError


class ModuleKind(str, Enum):
    MACRO = "macro"
    STANDARD_CELL = "standard_cell"
    IO_PAD = "io_pad"


@dataclass(frozen=True)
class PinOffset:
    """Pin location relative to the parent module center."""

    dx: float
    dy: float


@dataclass(frozen=True)
class Module:
    id: int
    width: float
    height: float
    kind: ModuleKind
    pins: tuple[PinOffset, ...] = ()
    name: str = ""

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Net:
    """Hyperedge over (module_id, pin_index) endpoints.

    ``tag`` is an optional annotation ("signal", "clock", "power", "ground");
    it defaults to "signal" and is ignored by the metric evaluators unless a
    caller filters on it explicitly.
    """

    id: int
    endpoints: tuple[tuple[int, int], ...]
    tag: str = "signal"
    name: str = ""

    @property
    def degree(self) -> int:
        return len(self.endpoints)


@dataclass(frozen=True)
class Netlist:
    """Immutable hypergraph netlist.

    ``canvas`` keeps the physical die dimensions from before normalization so
    serialization can map back to physical units. ``normalized`` records
    whether module geometry has been mapped onto [-1, 1]^2 yet.
    """

    modules: tuple[Module, ...]
    nets: tuple[Net, ...]
    canvas: tuple[float, float]
    normalized: bool = True
    name: str = "netlist"

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    @property
    def n_nets(self) -> int:
        return len(self.nets)

    # Flat CSR-style pin arrays for vectorized metric evaluation. One row per
    # net endpoint, ordered net by net; net j owns rows
    # net_start[j]:net_start[j+1].
    @cached_property
    def pin_module(self) -> np.ndarray:
        return np.array(
            [m for net in self.nets for (m, _) in net.endpoints], dtype=np.int64
        ).reshape(-1)

    @cached_property
    def pin_offset(self) -> np.ndarray:
        offs = [
            (self.modules[m].pins[p].dx, self.modules[m].pins[p].dy)
            for net in self.nets
            for (m, p) in net.endpoints
        ]
        return np.array(offs, dtype=np.float64).reshape(-1, 2)

    @cached_property
    def net_start(self) -> np.ndarray:
        counts = [net.degree for net in self.nets]
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @cached_property
    def module_sizes(self) -> np.ndarray:
        return np.array(
            [(m.width, m.height) for m in self.modules], dtype=np.float64
        ).reshape(-1, 2)

    @cached_property
    def area_mask(self) -> np.ndarray:
        """True for modules that occupy area (macros and standard cells)."""
        return np.array(
            [
                m.kind is not ModuleKind.IO_PAD and m.width > 0 and m.height > 0
                for m in self.modules
            ],
            dtype=bool,
        )

    @cached_property
    def net_tags(self) -> tuple[str, ...]:
        return tuple(net.tag for net in self.nets)


@dataclass(frozen=True, eq=False)
class Placement:
    """Per-module center coordinates on the normalized canvas.

    Coordinates are expected in [-1, 1]; out-of-range values are legal to
    carry (intermediate sampler states live here too) but clamping is always
    an explicit call, never silent.
    """

    coords: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("placement contains non-finite coordinates")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "coords", arr)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def clamp(self) -> tuple["Placement", int]:
        """Clamp to [-1, 1], returning the clamped placement and event count."""
        clipped = np.clip(self.coords, -1.0, 1.0)
        n_events = int(np.sum(np.any(clipped != self.coords, axis=1)))
        return Placement(clipped), n_events

    def same_as(self, other: "Placement") -> bool:
        return self.coords.shape == other.coords.shape and bool(
            np.array_equal(self.coords, other.coords)
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_netlist(netlist: Netlist) -> list[int]:
    """Check structural invariants; return ids of isolated (degree-0) modules.

    Raises ValidationError on hard violations: non-dense ids, non-positive
    dimensions on area modules, pins outside their module rectangle, dangling
    or empty nets.
    """
    for i, mod in enumerate(netlist.modules):
        if mod.id != i:
            raise ValidationError(f"module ids not dense: slot {i} holds id {mod.id}")
        if mod.kind is not ModuleKind.IO_PAD and (mod.width <= 0 or mod.height <= 0):
            raise ValidationError(f"module {mod.name or i}: non-positive dimension")
        for k, pin in enumerate(mod.pins):
            if not (math.isfinite(pin.dx) and math.isfinite(pin.dy)):
                raise ValidationError(f"module {mod.name or i}: non-finite pin offset")
            if abs(pin.dx) > mod.width / 2 + 1e-12 or abs(pin.dy) > mod.height / 2 + 1e-12:
                raise ValidationError(
                    f"module {mod.name or i}: pin {k} outside module rectangle"
                )
    touched: set[int] = set()
    for net in netlist.nets:
        if not net.endpoints:
            raise ValidationError(f"net {net.name or net.id}: empty endpoint list")
        for m, p in net.endpoints:
            if not (0 <= m < netlist.n_modules):
                raise ValidationError(f"net {net.name or net.id}: dangling module id {m}")
            if not (0 <= p < len(netlist.modules[m].pins)):
                raise ValidationError(f"net {net.name or net.id}: dangling pin index {p}")
            touched.add(m)
    return [i for i in range(netlist.n_modules) if i not in touched]


# ---------------------------------------------------------------------------
# Canvas normalization
# ---------------------------------------------------------------------------


def normalize_canvas(netlist: Netlist) -> Netlist:
    """Rescale geometry so the physical canvas maps onto [-1, 1]^2.

    Each axis scales independently (anisotropic). Idempotent: an already
    normalized netlist is returned unchanged.
    """
    if netlist.normalized:
        return netlist
    cw, ch = netlist.canvas
    if cw <= 0 or ch <= 0:
        raise ValidationError(f"zero-area canvas {netlist.canvas}")
    # The exact operation 2*v/span is mirrored by the serializer's ulp fixup;
    # keep them in lockstep so round-trips are bit-exact.
    modules = tuple(
        replace(
            mod,
            width=2.0 * mod.width / cw,
            height=2.0 * mod.height / ch,
            pins=tuple(PinOffset(2.0 * p.dx / cw, 2.0 * p.dy / ch) for p in mod.pins),
        )
        for mod in netlist.modules
    )
    return replace(netlist, modules=modules, normalized=True)


def normalize_positions(
    xy: np.ndarray, canvas: tuple[float, float], origin: str = "corner"
) -> np.ndarray:
    """Map physical module-center coordinates onto [-1, 1]^2.

    ``origin`` names where the physical frame is anchored: "corner" for
    coordinates measured from the die's lower-left corner, "center" for
    die-center-anchored coordinates (the .pl dialect, which round-trips
    bit-exactly).
    """
    cw, ch = canvas
    out = np.empty_like(xy, dtype=np.float64)
    if origin == "corner":
        out[:, 0] = 2.0 * xy[:, 0] / cw - 1.0
        out[:, 1] = 2.0 * xy[:, 1] / ch - 1.0
    elif origin == "center":
        out[:, 0] = 2.0 * xy[:, 0] / cw
        out[:, 1] = 2.0 * xy[:, 1] / ch
    else:
        raise ValidationError(f"unknown origin {origin!r}")
    return out


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def pin_absolute_position(
    netlist: Netlist, placement: Placement, module_id: int, pin_index: int
) -> tuple[float, float]:
    """Absolute pin position: module center plus the pin's offset."""
    if not (0 <= module_id < netlist.n_modules):
        raise ValidationError(f"module id {module_id} out of range")
    mod = netlist.modules[module_id]
    if not (0 <= pin_index < len(mod.pins)):
        raise ValidationError(f"pin index {pin_index} out of range for module {module_id}")
    if len(placement) != netlist.n_modules:
        raise ValidationError("placement length does not match netlist")
    x, y = placement.coords[module_id]
    pin = mod.pins[pin_index]
    return (float(x + pin.dx), float(y + pin.dy))


def degree_histogram(netlist: Netlist) -> dict[int, int]:
    """Histogram of module degrees (number of distinct nets touching each)."""
    nets_of: list[set[int]] = [set() for _ in range(netlist.n_modules)]
    for net in netlist.nets:
        for m, _ in net.endpoints:
            nets_of[m].add(net.id)
    return dict(Counter(len(s) for s in nets_of))


def filter_nets(netlist: Netlist, drop_tags: tuple[str, ...]) -> Netlist:
    """Copy of the netlist without nets carrying any of ``drop_tags``.

    Kept nets are re-numbered densely; modules are untouched.
    """
    kept = [net for net in netlist.nets if net.tag not in drop_tags]
    nets = tuple(replace(net, id=j) for j, net in enumerate(kept))
    return replace(netlist, nets=nets)


# ---------------------------------------------------------------------------
# Bookshelf-subset parsing
# ---------------------------------------------------------------------------

_IGNORED_SECTIONS = ("wts", "scl")


def _clean_lines(text: str) -> list[tuple[int, str]]:
    """Strip comments/headers, keeping 1-based line numbers."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("UCLA"):
            continue
        out.append((lineno, line))
    return out


def _parse_float(tok: str, section: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", lineno, section) from None


def parse_bookshelf(
    sections: dict[str, str], canvas: tuple[float, float] | None = None
) -> tuple[Netlist, Placement | None]:
    """Parse a Bookshelf-subset bundle into a normalized netlist.

    ``sections`` maps section names ("nodes", "nets", "pl", with or without a
    leading dot) to file text. The physical canvas must either be passed
    explicitly or be derivable from a ``.pl`` section (smallest axis-aligned
    box anchored at the origin that contains every placed module).
    """
    secs = {key.lstrip("."): text for key, text in sections.items()}
    for key in secs:
        if key in _IGNORED_SECTIONS:
            warnings.warn(f"ignoring unsupported bookshelf section .{key}", stacklevel=2)
    if "nodes" not in secs:
        raise ParseError("missing .nodes section", None, "nodes")
    if "nets" not in secs:
        raise ParseError("missing .nets section", None, "nets")

    # --- .nodes ---
    names: list[str] = []
    dims: list[tuple[float, float]] = []
    terminal: list[bool] = []
    index: dict[str, int] = {}
    declared_nodes = None
    for lineno, line in _clean_lines(secs["nodes"]):
        toks = line.split()
        if toks[0] in ("NumNodes", "NumTerminals"):
            value = toks[-1]
            if toks[0] == "NumNodes":
                declared_nodes = int(_parse_float(value, "nodes", lineno))
            continue
        if len(toks) < 3:
            raise ParseError(f"malformed node line {line!r}", lineno, "nodes")
        name = toks[0]
        if name in index:
            raise ParseError(f"duplicate module name {name!r}", lineno, "nodes")
        w = _parse_float(toks[1], "nodes", lineno)
        h = _parse_float(toks[2], "nodes", lineno)
        is_term = len(toks) > 3 and toks[3].lower() == "terminal"
        if not is_term and (w <= 0 or h <= 0):
            raise ParseError(f"non-positive dimension for {name!r}", lineno, "nodes")
        index[name] = len(names)
        names.append(name)
        dims.append((w, h))
        terminal.append(is_term)
    if declared_nodes is not None and declared_nodes != len(names):
        raise ParseError(
            f"NumNodes says {declared_nodes}, found {len(names)}", None, "nodes"
        )

    # Kinds: terminals are I/O pads; among the rest, the modal height marks
    # the standard-cell row height, anything else is a macro.
    heights = [h for (w, h), t in zip(dims, terminal) if not t]
    modal_height = Counter(heights).most_common(1)[0][0] if heights else 0.0
    kinds = [
        ModuleKind.IO_PAD
        if t
        else (ModuleKind.STANDARD_CELL if h == modal_height else ModuleKind.MACRO)
        for (w, h), t in zip(dims, terminal)
    ]

    # --- .nets ---
    pins_of: list[list[PinOffset]] = [[] for _ in names]
    nets: list[Net] = []
    lines = _clean_lines(secs["nets"])
    i = 0
    while i < len(lines):
        lineno, line = lines[i]
        toks = line.split()
        if toks[0] in ("NumNets", "NumPins"):
            i += 1
            continue
        if toks[0] != "NetDegree":
            raise ParseError(f"expected NetDegree block, got {line!r}", lineno, "nets")
        body = [t for t in toks[1:] if t != ":"]
        if not body:
            raise ParseError("NetDegree without a count", lineno, "nets")
        degree = int(_parse_float(body[0], "nets", lineno))
        net_name = body[1] if len(body) > 1 else f"n{len(nets)}"
        if degree < 1:
            raise ParseError(f"net {net_name!r} has no endpoints", lineno, "nets")
        endpoints: list[tuple[int, int]] = []
        seen: set[tuple[int, float, float]] = set()
        for k in range(degree):
            if i + 1 + k >= len(lines):
                raise ParseError(
                    f"net {net_name!r}: expected {degree} endpoints", lineno, "nets"
                )
            elineno, eline = lines[i + 1 + k]
            etoks = eline.split()
            if etoks[0] == "NetDegree":
                raise ParseError(
                    f"net {net_name!r}: expected {degree} endpoints", elineno, "nets"
                )
            mod_name = etoks[0]
            if mod_name not in index:
                raise ParseError(
                    f"dangling net endpoint {mod_name!r}", elineno, "nets"
                )
            rest = [t for t in etoks[1:] if t != ":"]
            if rest and rest[0] in ("I", "O", "B"):
                rest = rest[1:]
            if len(rest) >= 2:
                dx = _parse_float(rest[0], "nets", elineno)
                dy = _parse_float(rest[1], "nets", elineno)
            else:
                dx, dy = 0.0, 0.0
            mid = index[mod_name]
            key = (mid, dx, dy)
            if key in seen:
                raise ParseError(
                    f"duplicate endpoint {mod_name!r} in net {net_name!r}",
                    elineno,
                    "nets",
                )
            seen.add(key)
            # Reuse an existing pin at the same offset, else mint a new one.
            pin_idx = next(
                (j for j, p in enumerate(pins_of[mid]) if p.dx == dx and p.dy == dy),
                None,
            )
            if pin_idx is None:
                pins_of[mid].append(PinOffset(dx, dy))
                pin_idx = len(pins_of[mid]) - 1
            endpoints.append((mid, pin_idx))
        nets.append(Net(id=len(nets), endpoints=tuple(endpoints), name=net_name))
        i += 1 + degree

    # --- .pl (optional) ---
    positions = None
    if secs.get("pl"):
        pos_map: dict[int, tuple[float, float]] = {}
        for lineno, line in _clean_lines(secs["pl"]):
            toks = line.split()
            if len(toks) < 3:
                raise ParseError(f"malformed placement line {line!r}", lineno, "pl")
            if toks[0] not in index:
                raise ParseError(f"unknown module {toks[0]!r}", lineno, "pl")
            x = _parse_float(toks[1], "pl", lineno)
            y = _parse_float(toks[2], "pl", lineno)
            pos_map[index[toks[0]]] = (x, y)
        missing = [names[i] for i in range(len(names)) if i not in pos_map]
        if missing:
            raise ParseError(f"placement missing modules {missing[:3]}", None, "pl")
        positions = np.array([pos_map[i] for i in range(len(names))], dtype=np.float64)

    if canvas is None:
        if positions is None:
            raise ParseError(
                "canvas dimensions required when no .pl section is present", None, "nodes"
            )
        half = np.array(dims, dtype=np.float64) / 2.0
        canvas = (
            float(2.0 * np.max(np.abs(positions[:, 0]) + half[:, 0])),
            float(2.0 * np.max(np.abs(positions[:, 1]) + half[:, 1])),
        )
    if canvas[0] <= 0 or canvas[1] <= 0:
        raise ValidationError(f"zero-area canvas {canvas}")

    modules = tuple(
        Module(id=i, width=w, height=h, kind=kinds[i], pins=tuple(pins_of[i]), name=names[i])
        for i, (w, h) in enumerate(dims)
    )
    raw = Netlist(
        modules=modules, nets=tuple(nets), canvas=canvas, normalized=False
    )
    netlist = normalize_canvas(raw)
    validate_netlist(netlist)
    placement = (
        Placement(normalize_positions(positions, canvas, origin="center"))
        if positions is not None
        else None
    )
    return netlist, placement


def parse_placement(netlist: Netlist, pl_text: str) -> Placement:
    """Parse a standalone .pl section against an existing netlist.

    Coordinates are physical module centers anchored at the die center; they
    map into [-1, 1]^2 via the netlist's recorded canvas.
    """
    by_name = {m.name or f"o{m.id}": m.id for m in netlist.modules}
    pos = np.zeros((netlist.n_modules, 2))
    seen: set[int] = set()
    for lineno, line in _clean_lines(pl_text):
        toks = line.split()
        if len(toks) < 3:
            raise ParseError(f"malformed placement line {line!r}", lineno, "pl")
        if toks[0] not in by_name:
            raise ParseError(f"unknown module {toks[0]!r}", lineno, "pl")
        mid = by_name[toks[0]]
        pos[mid, 0] = _parse_float(toks[1], "pl", lineno)
        pos[mid, 1] = _parse_float(toks[2], "pl", lineno)
        seen.add(mid)
    if len(seen) != netlist.n_modules:
        raise ParseError(
            f"placement covers {len(seen)} of {netlist.n_modules} modules", None, "pl"
        )
    return Placement(normalize_positions(pos, netlist.canvas, origin="center"))


# ---------------------------------------------------------------------------
# Bookshelf-subset serialization
# ---------------------------------------------------------------------------


def _to_physical(value_norm: float, span: float, shift: float) -> float:
    """Inverse of ``2 p / span + shift`` with a one-ulp search so that parsing
    the emitted physical value reproduces ``value_norm`` bit-exactly."""
    value_norm = float(value_norm)
    span = float(span)
    p = (value_norm - shift) * span / 2.0
    if 2.0 * p / span + shift == value_norm:
        return p
    lo, hi = p, p
    for _ in range(8):
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
        for cand in (hi, lo):
            if 2.0 * cand / span + shift == value_norm:
                return float(cand)
    return p


def serialize_bookshelf(
    netlist: Netlist, placement: Placement | None = None
) -> dict[str, str]:
    """Emit canonical Bookshelf-subset text (physical units).

    The emitted values are chosen so that ``parse_bookshelf`` on the result
    reconstructs the normalized netlist exactly.
    """
    cw, ch = netlist.canvas
    node_lines = [f"NumNodes : {netlist.n_modules}"]
    n_term = sum(1 for m in netlist.modules if m.kind is ModuleKind.IO_PAD)
    node_lines.append(f"NumTerminals : {n_term}")
    for m in netlist.modules:
        name = m.name or f"o{m.id}"
        w = _to_physical(m.width, cw, 0.0)
        h = _to_physical(m.height, ch, 0.0)
        suffix = " terminal" if m.kind is ModuleKind.IO_PAD else ""
        node_lines.append(f"{name} {w!r} {h!r}{suffix}")

    total_pins = sum(net.degree for net in netlist.nets)
    net_lines = [f"NumNets : {netlist.n_nets}", f"NumPins : {total_pins}"]
    for net in netlist.nets:
        net_lines.append(f"NetDegree : {net.degree} {net.name or f'n{net.id}'}")
        for mid, pidx in net.endpoints:
            mod = netlist.modules[mid]
            pin = mod.pins[pidx]
            dx = _to_physical(pin.dx, cw, 0.0)
            dy = _to_physical(pin.dy, ch, 0.0)
            net_lines.append(f"  {mod.name or f'o{mid}'} B : {dx!r} {dy!r}")

    out = {"nodes": "\n".join(node_lines) + "\n", "nets": "\n".join(net_lines) + "\n"}
    if placement is not None:
        # .pl coordinates are die-center anchored so values near the canvas
        # middle keep full precision (a corner anchor cancels bits there).
        pl_lines = []
        for m in netlist.modules:
            x = _to_physical(float(placement.coords[m.id, 0]), cw, 0.0)
            y = _to_physical(float(placement.coords[m.id, 1]), ch, 0.0)
            pl_lines.append(f"{m.name or f'o{m.id}'} {x!r} {y!r} : N")
        out["pl"] = "\n".join(pl_lines) + "\n"
    return out


# ---------------------------------------------------------------------------
# Canonical JSON dump
# ---------------------------------------------------------------------------


def netlist_to_json(netlist: Netlist) -> str:
    doc = {
        "name": netlist.name,
        "canvas": list(netlist.canvas),
        "normalized": netlist.normalized,
        "modules": [
            {
                "id": m.id,
                "name": m.name,
                "width": m.width,
                "height": m.height,
                "kind": m.kind.value,
                "pins": [[p.dx, p.dy] for p in m.pins],
            }
            for m in netlist.modules
        ],
        "nets": [
            {
                "id": n.id,
                "name": n.name,
                "tag": n.tag,
                "endpoints": [[m, p] for m, p in n.endpoints],
            }
            for n in netlist.nets
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def netlist_from_json(text: str) -> Netlist:
    doc = json.loads(text)
    modules = tuple(
        Module(
            id=m["id"],
            width=m["width"],
            height=m["height"],
            kind=ModuleKind(m["kind"]),
            pins=tuple(PinOffset(dx, dy) for dx, dy in m["pins"]),
            name=m.get("name", ""),
        )
        for m in doc["modules"]
    )
    nets = tuple(
        Net(
            id=n["id"],
            endpoints=tuple((m, p) for m, p in n["endpoints"]),
            tag=n.get("tag", "signal"),
            name=n.get("name", ""),
        )
        for n in doc["nets"]
    )
    return Netlist(
        modules=modules,
        nets=nets,
        canvas=(doc["canvas"][0], doc["canvas"][1]),
        normalized=doc.get("normalized", True),
        name=doc.get("name", "netlist"),
    )
