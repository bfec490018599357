"""Deterministic SVG rendering of placements.

Output is byte-stable across runs: fixed float formatting, fixed element
order, no timestamps. Modules are colored by kind; net flylines (bounding-box
center stars) are optional.
"""

from __future__ import annotations

import numpy as np

from .netlist import ModuleKind, Netlist, Placement

_FILL = {
    ModuleKind.MACRO: "#4878a8",
    ModuleKind.STANDARD_CELL: "#9ecae1",
    ModuleKind.IO_PAD: "#d95f02",
}

_VIEW = 640.0
_PAD_RADIUS = 3.0


def _px(v: float) -> str:
    return f"{v:.3f}"


def placement_svg(
    netlist: Netlist,
    placement: Placement,
    flylines: bool = False,
    header_comment: str = "",
) -> str:
    """Render a placement to an SVG string."""
    scale = _VIEW / 2.0

    def sx(x: float) -> float:
        return (x + 1.0) * scale

    def sy(y: float) -> float:
        # SVG y grows downward; flip so +y is up like the canvas.
        return _VIEW - (y + 1.0) * scale

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_VIEW)}" '
        f'height="{int(_VIEW)}" viewBox="0 0 {int(_VIEW)} {int(_VIEW)}">',
    ]
    if header_comment:
        parts.append(f"<!-- {header_comment} -->")
    parts.append(
        f'<rect x="0" y="0" width="{int(_VIEW)}" height="{int(_VIEW)}" '
        'fill="#fbfbf8" stroke="#333333" stroke-width="1"/>'
    )
    for mod in netlist.modules:
        x, y = placement.coords[mod.id]
        if mod.kind is ModuleKind.IO_PAD or mod.width <= 0 or mod.height <= 0:
            parts.append(
                f'<circle cx="{_px(sx(x))}" cy="{_px(sy(y))}" r="{_PAD_RADIUS}" '
                f'fill="{_FILL[ModuleKind.IO_PAD]}"/>'
            )
            continue
        w, h = mod.width * scale, mod.height * scale
        parts.append(
            f'<rect x="{_px(sx(x) - w / 2)}" y="{_px(sy(y) - h / 2)}" '
            f'width="{_px(w)}" height="{_px(h)}" fill="{_FILL[mod.kind]}" '
            'fill-opacity="0.75" stroke="#1a1a1a" stroke-width="0.5"/>'
        )
    if flylines:
        for net in netlist.nets:
            pts = np.array(
                [
                    placement.coords[m]
                    + (netlist.modules[m].pins[p].dx, netlist.modules[m].pins[p].dy)
                    for m, p in net.endpoints
                ]
            )
            cx, cy = np.mean(pts, axis=0)
            for px, py in pts:
                parts.append(
                    f'<line x1="{_px(sx(cx))}" y1="{_px(sy(cy))}" '
                    f'x2="{_px(sx(px))}" y2="{_px(sy(py))}" '
                    'stroke="#777777" stroke-width="0.3" stroke-opacity="0.5"/>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
