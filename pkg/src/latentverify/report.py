"""Report emission: an SVG of the verified latent partition and a CSV table.

Colors follow the case-study convention: goal cells dark green, verified
cells light green, uncertain cells yellow, refuted cells red, obstacle
over-approximations black.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = {
    "yes": "#90ee90",
    "no": "#d94343",
    "unknown": "#f2e25c",
    "goal": "#006400",
    "obstacle": "#000000",
    "boundary_edge": "#555555",
}


def _classify(payload, n_cells):
    cls = ["unknown"] * n_cells
    for q in payload["q_yes"]:
        if q < n_cells:
            cls[q] = "yes"
    for q in payload["q_no"]:
        if q < n_cells:
            cls[q] = "no"
    return cls


def render_partition_svg(part, labels, payload, geo, Z, width=640) -> str:
    lo, hi = Z.bbox()
    span = np.maximum(hi - lo, 1e-9)
    pad = 0.05 * float(span.max())
    lo = lo - pad
    hi = hi + pad
    span = hi - lo
    scale = width / span[0]
    height = int(np.ceil(span[1] * scale))

    def sx(x):
        return (x - lo[0]) * scale

    def sy(y):
        return height - (y - lo[1]) * scale  # y axis up

    cls = _classify(payload, part.n_cells)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">']
    # one rect per cell
    for i in range(part.n_cells):
        fill = COLORS[cls[i]]
        if "goal" in labels.cell_labels[i] or any(
                lab.startswith("goal") and not lab.startswith("n_")
                for lab in labels.cell_labels[i]):
            fill = COLORS["goal"]
        x = sx(part.los[i][0])
        y = sy(part.his[i][1])
        w = (part.his[i][0] - part.los[i][0]) * scale
        h = (part.his[i][1] - part.los[i][1]) * scale
        stroke = COLORS["boundary_edge"]
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
                     f'fill="{fill}" stroke="{stroke}" stroke-width="0.5"/>')
    # obstacle over-approximations in black
    for name, overs in geo.part_overs.items():
        for poly in overs:
            pts = " ".join(f"{sx(v[0]):.2f},{sy(v[1]):.2f}" for v in poly.vertices)
            parts.append(f'<polygon points="{pts}" fill="{COLORS["obstacle"]}" '
                         f'fill-opacity="0.85" stroke="none"/>')
    # goal under-approximations outlined dark green
    for name, under in geo.unders.items():
        pts = " ".join(f"{sx(v[0]):.2f},{sy(v[1]):.2f}" for v in under.vertices)
        parts.append(f'<polygon points="{pts}" fill="none" '
                     f'stroke="{COLORS["goal"]}" stroke-width="1.5"/>')
    # latent domain hull outline
    pts = " ".join(f"{sx(v[0]):.2f},{sy(v[1]):.2f}" for v in Z.vertices)
    parts.append(f'<polygon points="{pts}" fill="none" stroke="#000000" '
                 f'stroke-width="1.2"/>')
    parts.append(f'<title>{escape("latent partition verification result")}</title>')
    parts.append("</svg>")
    return "\n".join(parts)


def summary_csv(history) -> str:
    rows = ["round,n_cells,n_yes,n_no,n_unknown,area_yes,area_no,area_unknown,"
            "yes_fraction_interior_area"]
    for h in history:
        c, a = h["counts"], h["areas"]
        rows.append(f'{h["round"]},{h["n_cells"]},{c["yes"]},{c["no"]},'
                    f'{c["unknown"]},{a["yes"]:.6g},{a["no"]:.6g},'
                    f'{a["unknown"]:.6g},{h["yes_fraction_interior_area"]:.6g}')
    return "\n".join(rows) + "\n"


def write_report(svg_path, csv_path, part, labels, payload, geo, Z, history):
    with open(svg_path, "w") as fh:
        fh.write(render_partition_svg(part, labels, payload, geo, Z))
    with open(csv_path, "w") as fh:
        fh.write(summary_csv(history))
