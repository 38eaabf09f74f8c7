"""Dependency-free SVG charts and a deterministic PCA projection."""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN = 60

PALETTE = {
    "task": "#1f77b4",
    "pur": "#ff7f0e",
    "decorr": "#2ca02c",
    "orth": "#d62728",
    "cal": "#9467bd",
}


def pca_scores(X: np.ndarray, k: int = 2) -> np.ndarray:
    """Principal-component scores of the rows of X, [n, k].

    Deterministic sign convention: each component is flipped so its
    largest-magnitude loading is positive. Identical rows give all-zero
    scores.
    """
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0, keepdims=True)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    k = min(k, S.size)
    scores = U[:, :k] * S[:k]
    for j in range(k):
        lead = np.argmax(np.abs(Vt[j]))
        if Vt[j, lead] < 0:
            scores[:, j] = -scores[:, j]
    if k < 2:
        scores = np.pad(scores, ((0, 0), (0, 2 - k)))
    return scores


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _svg_header():
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
    )


def _axes(x_label: str, y_label: str, x_range, y_range):
    parts = [
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>\n',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
        f'stroke="black"/>\n',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 15}" text-anchor="middle" '
        f'font-size="14">{x_label}</text>\n',
        f'<text x="18" y="{HEIGHT // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {HEIGHT // 2})">{y_label}</text>\n',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="11">'
        f'{x_range[0]:.4g}</text>\n',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 20}" text-anchor="end" '
        f'font-size="11">{x_range[1]:.4g}</text>\n',
        f'<text x="{MARGIN - 5}" y="{HEIGHT - MARGIN}" text-anchor="end" '
        f'font-size="11">{y_range[0]:.4g}</text>\n',
        f'<text x="{MARGIN - 5}" y="{MARGIN + 5}" text-anchor="end" '
        f'font-size="11">{y_range[1]:.4g}</text>\n',
    ]
    return "".join(parts)


def render_curves(epochs, series: dict[str, list[float]], path: str) -> None:
    """Loss-component curves vs epoch as one polyline per series."""
    all_vals = [v for vals in series.values() for v in vals]
    y_lo, y_hi = min(all_vals), max(all_vals)
    x_lo, x_hi = min(epochs), max(epochs)
    parts = [_svg_header(), _axes("epoch", "loss component", (x_lo, x_hi), (y_lo, y_hi))]
    for i, (name, vals) in enumerate(series.items()):
        xs = _scale(epochs, x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        ys = _scale(vals, y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        color = PALETTE.get(name, "#000000")
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>\n')
        parts.append(
            f'<text x="{WIDTH - MARGIN + 5}" y="{MARGIN + 18 * i}" font-size="12" '
            f'fill="{color}">{name}</text>\n'
        )
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(parts))


def _label_color(label: float) -> str:
    # blue (-3) to red (+3)
    t = (np.clip(label, -3.0, 3.0) + 3.0) / 6.0
    r = int(round(255 * t))
    b = int(round(255 * (1.0 - t)))
    return f"#{r:02x}40{b:02x}"


def render_scatter(scores: np.ndarray, labels, path: str) -> None:
    """2-D embedding scatter colored by label."""
    xs_raw = scores[:, 0]
    ys_raw = scores[:, 1]
    x_lo, x_hi = float(xs_raw.min()), float(xs_raw.max())
    y_lo, y_hi = float(ys_raw.min()), float(ys_raw.max())
    xs = _scale(xs_raw, x_lo, x_hi, MARGIN, WIDTH - MARGIN)
    ys = _scale(ys_raw, y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
    parts = [_svg_header(), _axes("pc1", "pc2", (x_lo, x_hi), (y_lo, y_hi))]
    for x, y, lab in zip(xs, ys, labels):
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{_label_color(lab)}" '
            f'fill-opacity="0.8"/>\n'
        )
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(parts))
