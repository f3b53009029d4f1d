"""Class activation maps over a window's 27-step final feature map.

With a GAP head, logit_c = mean_x(CAM_c(x)) + bias_c where
CAM_c(x) = sum_k head_weight[c, k] * feature_map[x, k]; the map shows
which time steps push each class logit. Maps are computed on the
eval-mode inference path (the identity only holds there).
"""

import csv
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from . import network
from .preprocess import SensorWindow
from .states import STATE_NAMES

CAM_STEPS = network.FEATURE_EXTENT  # 27
WINDOW_LEN = 3600


@dataclass
class ClassActivationMap:
    """Per-class attention profile over the window's time axis.

    values: (3, 27) raw map; logits/bias kept so the GAP identity
    mean(values[c]) + bias[c] == logits[c] can be asserted.
    """

    values: np.ndarray
    logits: np.ndarray
    head_bias: np.ndarray
    class_labels: tuple = STATE_NAMES

    def upsampled(self, target_len: int = WINDOW_LEN) -> np.ndarray:
        return upsample_cam(self.values, target_len)


def compute_cam(params, window) -> ClassActivationMap:
    """CAM_c(x) = sum_k head_weight[c,k] * feature_map[x,0,k], eval-mode BN."""
    values = window.values if isinstance(window, SensorWindow) else np.asarray(window)
    logits, fmap = network.forward(params, values, mode="eval")
    cam = np.einsum("ck,xwk->cx", params.head_weight, fmap)
    return ClassActivationMap(values=cam, logits=logits, head_bias=params.head_bias.copy())


def upsample_cam(values, target_len: int = WINDOW_LEN) -> np.ndarray:
    """Linear interpolation of each class's anchors onto target_len
    positions, endpoints pinned to the first and last anchor."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n_anchors = values.shape[1]
    anchors = np.linspace(0, target_len - 1, n_anchors)
    grid = np.arange(target_len)
    return np.stack([np.interp(grid, anchors, row) for row in values])


def _normalize_for_display(profile: np.ndarray) -> np.ndarray:
    lo, hi = profile.min(), profile.max()
    if hi - lo < 1e-300:
        return np.full_like(profile, 0.5)
    return (profile - lo) / (hi - lo)


def export_overlay(window, cam: ClassActivationMap, class_index: int, path) -> None:
    """SVG of the three signal traces (X red, Y green, Z blue) over a
    background whose luminance encodes the min-max-normalized CAM of the
    chosen class, plus a CSV sidecar `<path>.csv` with the raw upsampled
    maps for all classes (rows t=0..3599).

    The background is drawn as one gradient band per CAM segment, so the
    luminance is exactly the piecewise-linear upsampled profile.
    """
    values = window.values if isinstance(window, SensorWindow) else np.asarray(window)
    anchors = _normalize_for_display(cam.values[class_index])

    width, height = 1200.0, 400.0
    n_seg = anchors.size - 1
    defs, rects = [], []
    for s in range(n_seg):
        # luminance 250 (neglected) down to 120 (attended)
        g0 = int(round(250 - 130 * anchors[s]))
        g1 = int(round(250 - 130 * anchors[s + 1]))
        defs.append(
            f'<linearGradient id="seg{s}" x1="0" y1="0" x2="1" y2="0">'
            f'<stop offset="0" stop-color="rgb({g0},{g0},{g0})"/>'
            f'<stop offset="1" stop-color="rgb({g1},{g1},{g1})"/>'
            f"</linearGradient>"
        )
        x0 = width * s / n_seg
        x1 = width * (s + 1) / n_seg
        rects.append(
            f'<rect x="{x0:.2f}" y="0" width="{x1 - x0 + 0.5:.2f}" height="{height:.0f}" '
            f'fill="url(#seg{s})"/>'
        )

    span = max(np.abs(values).max(), 1e-9)
    ys = height / 2 - values * (height * 0.45 / span)
    xs = np.arange(values.shape[0]) * (width / (values.shape[0] - 1))
    polylines = []
    for ax, color in enumerate(("red", "green", "blue")):
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys[:, ax]))
        polylines.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="0.6" points="{pts}"/>'
        )

    title = escape(f"class activation map: {cam.class_labels[class_index]}")
    svg = (
        f'<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">\n'
        f"<title>{title}</title>\n<defs>\n" + "\n".join(defs) + "\n</defs>\n"
        + "\n".join(rects)
        + "\n"
        + "\n".join(polylines)
        + "\n</svg>\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)

    upsampled = cam.upsampled()
    with open(f"{path}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cam_off", "cam_on", "cam_dys"])
        for t in range(upsampled.shape[1]):
            writer.writerow([t] + [repr(float(v)) for v in upsampled[:, t]])
