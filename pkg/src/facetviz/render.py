"""PNG, montage and scatter-plot output."""

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .dataset import to_uint8

SEPARATOR = 2
LABEL_HEIGHT = 12
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def to_display(img, mean=None):
    """Mean-subtracted image back to [0, 1] display units."""
    img = np.asarray(img, dtype=np.float64)
    offset = 0.5 if mean is None else np.asarray(mean, dtype=np.float64)
    return np.clip(img + offset, 0.0, 1.0)


def save_png(img01, path, scale=1):
    im = Image.fromarray(to_uint8(img01))
    if scale > 1:
        im = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
    im.save(path)
    return Path(path)


def montage_size(n, columns, tile_h, tile_w):
    """``(height, width)`` of a montage grid with separators and label strips."""
    cols = min(columns, n) if n else 0
    rows = -(-n // columns) if n else 0
    width = cols * tile_w + (cols + 1) * SEPARATOR
    height = rows * (tile_h + LABEL_HEIGHT) + (rows + 1) * SEPARATOR
    return height, width


def emit_montage(images, labels, columns, out_path, scale=1):
    """Row-major grid of display-unit images, each with a label strip below it."""
    if not images:
        raise ValueError("montage needs at least one image")
    if labels is not None and len(labels) != len(images):
        raise ValueError("labels and images differ in length")
    shapes = {np.shape(im) for im in images}
    if len(shapes) != 1:
        raise ValueError(f"montage images differ in shape: {sorted(shapes)}")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    tiles = [to_uint8(im) for im in images]
    if scale > 1:
        tiles = [np.repeat(np.repeat(t, scale, axis=0), scale, axis=1) for t in tiles]
    th, tw = tiles[0].shape[:2]
    H, W = montage_size(len(tiles), columns, th, tw)
    canvas = Image.new("RGB", (W, H), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for i, tile in enumerate(tiles):
        r, c = divmod(i, columns)
        x = SEPARATOR + c * (tw + SEPARATOR)
        y = SEPARATOR + r * (th + LABEL_HEIGHT + SEPARATOR)
        canvas.paste(Image.fromarray(tile), (x, y))
        if labels is not None:
            draw.text((x + 1, y + th), str(labels[i]), fill=(0, 0, 0), font=font)
    canvas.save(out_path)
    return Path(out_path)


def emit_scatter_svg(embedding, clustering, out_path, size=400, margin=20):
    """One circle per embedded point, colored by cluster, with centroid labels."""
    pts = np.asarray(embedding.points, dtype=np.float64).reshape(-1, 2)
    assign = np.asarray(clustering.assignments) if clustering is not None else np.zeros(len(pts), int)
    if len(assign) != len(pts):
        raise ValueError("embedding and clustering differ in length")
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if len(pts):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)

        def xy(p):
            q = margin + (np.asarray(p) - lo) / span * (size - 2 * margin)
            return q[0], size - q[1]

        for p, a, sid in zip(pts, assign, embedding.source_ids):
            x, y = xy(p)
            lines.append(f'<circle class="point" cx="{x:.2f}" cy="{y:.2f}" r="3" '
                         f'fill="{PALETTE[int(a) % len(PALETTE)]}"><title>{escape(str(sid))}</title></circle>')
        if clustering is not None:
            for k, cen in enumerate(clustering.centroids):
                if not np.any(assign == k):
                    continue
                x, y = xy(cen)
                lines.append(f'<text class="centroid" x="{x:.2f}" y="{y:.2f}" font-size="14" '
                             f'font-family="sans-serif" text-anchor="middle">{k}</text>')
    lines.append("</svg>")
    Path(out_path).write_text("\n".join(lines) + "\n")
    return Path(out_path)
