"""Accuracy evaluation against ground truth, and map export (JSON, SVG).

Distance-only data pins a map down only up to rotation, translation,
reflection and scale-with-gain, so accuracy is always reported after
fitting the best similarity transform between estimate and truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MapSolution, SCHEMA_VERSION, VERSION_KEY, dump_json_bytes
from .synth import Scenario


class DegenerateConfiguration(ValueError):
    """Point sets too degenerate (few/collinear) to fit a similarity transform."""


class IdMismatch(ValueError):
    """Solution and scenario disagree on device or anchor identities."""


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # (3, 3) orthogonal, det +-1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthogonal")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @property
    def is_reflection(self) -> bool:
        return bool(np.linalg.det(self.rotation) < 0)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class EvalReport:
    aligned_device_rmse: float
    aligned_anchor_rmse: float
    per_device_errors: dict[str, float]
    used_reflection: bool
    scene_diameter: float

    def to_json(self) -> dict:
        return {
            VERSION_KEY: SCHEMA_VERSION,
            "aligned_device_rmse": float(self.aligned_device_rmse),
            "aligned_anchor_rmse": float(self.aligned_anchor_rmse),
            "per_device_errors": {k: float(v) for k, v in sorted(self.per_device_errors.items())},
            "used_reflection": self.used_reflection,
            "scene_diameter": float(self.scene_diameter),
        }


def procrustes_align(estimated, true, allow_reflection: bool = True) -> tuple[SimilarityTransform, float]:
    """Best-fit similarity transform mapping ``estimated`` onto ``true``.

    Closed-form SVD solution minimizing the summed squared distances after
    scaling, rotating and translating the estimated set. With
    ``allow_reflection`` the orthogonal factor may have determinant -1
    whenever that lowers the objective. Returns (transform, rmse).
    """
    x = np.asarray(estimated, dtype=float).reshape(-1, 3)
    y = np.asarray(true, dtype=float).reshape(-1, 3)
    if x.shape != y.shape:
        raise ValueError(f"point sets differ in shape: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 point pairs, got {n}")

    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mu_x, y - mu_y
    for label, centered in (("estimated", xc), ("true", yc)):
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1.0):
            raise DegenerateConfiguration(f"{label} points are (near-)collinear")

    var_x = float(np.mean(np.sum(xc**2, axis=1)))
    cov = yc.T @ xc / n
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if not allow_reflection and np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rotation = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d) / var_x)
    if scale <= 0:
        raise DegenerateConfiguration("point sets admit no positive-scale fit")
    translation = mu_y - scale * rotation @ mu_x

    transform = SimilarityTransform(scale, rotation, translation)
    rmse = float(np.sqrt(np.mean(np.sum((transform.apply(x) - y) ** 2, axis=1))))
    return transform, rmse


def evaluate(solution: MapSolution, scenario: Scenario) -> EvalReport:
    """Score a solved map against ground truth after joint alignment.

    One similarity transform is fit on devices and anchors together
    (anchors dominate the point count and stabilize the fit); device and
    anchor errors are then reported under that common transform.
    """
    sol_devices = {d.device_id: d for d in solution.devices}
    sol_anchors = {a.anchor_id: a for a in solution.anchors}
    if set(sol_devices) != set(scenario.device_ids):
        raise IdMismatch(f"device ids differ: {sorted(sol_devices)} vs {sorted(scenario.device_ids)}")
    if set(sol_anchors) != set(scenario.anchor_ids):
        raise IdMismatch("anchor ids differ between solution and scenario")

    est_dev = np.array([sol_devices[mac].position for mac in scenario.device_ids])
    est_anc = np.array([sol_anchors[a].position for a in scenario.anchor_ids])
    est = np.vstack([est_dev, est_anc])
    true = np.vstack([scenario.device_positions, scenario.anchor_path])

    transform, _ = procrustes_align(est, true, allow_reflection=True)
    aligned = transform.apply(est)
    errors = np.linalg.norm(aligned - true, axis=1)
    m = scenario.n_devices
    return EvalReport(
        aligned_device_rmse=float(np.sqrt(np.mean(errors[:m] ** 2))),
        aligned_anchor_rmse=float(np.sqrt(np.mean(errors[m:] ** 2))),
        per_device_errors={mac: float(e) for mac, e in zip(scenario.device_ids, errors[:m])},
        used_reflection=transform.is_reflection,
        scene_diameter=scenario.diameter,
    )


def export_map(solution: MapSolution, format: str = "json") -> bytes:
    """Serialize a solution as versioned JSON or as a 2-D SVG map.

    Output bytes are deterministic for a given solution. The SVG drops the
    height coordinate: anchors appear as small dots along the walk, shaded
    from blue (walk start) to green (walk end), devices as bold labeled dots.
    """
    if format == "json":
        return dump_json_bytes(solution.to_json())
    if format == "svg":
        return _render_svg(solution)
    raise ValueError(f"unknown export format {format!r}")


_SVG_W, _SVG_H, _SVG_MARGIN = 640, 480, 48


def _render_svg(solution: MapSolution) -> bytes:
    anchors_xy = np.array([a.position[:2] for a in solution.anchors]).reshape(-1, 2)
    devices_xy = np.array([d.position[:2] for d in solution.devices]).reshape(-1, 2)
    points = np.vstack([anchors_xy, devices_xy]) if (len(anchors_xy) or len(devices_xy)) \
        else np.zeros((0, 2))

    if len(points):
        lo, hi = points.min(axis=0), points.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.maximum(hi - lo, 1e-9)
    usable = np.array([_SVG_W - 2 * _SVG_MARGIN, _SVG_H - 2 * _SVG_MARGIN])
    s = float(np.min(usable / span))
    offset = (usable - s * span) / 2.0

    def to_px(p):
        x = _SVG_MARGIN + offset[0] + s * (p[0] - lo[0])
        y = _SVG_H - _SVG_MARGIN - offset[1] - s * (p[1] - lo[1])  # flip: y grows upward
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect x="0" y="0" width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<rect x="{_SVG_MARGIN}" y="{_SVG_MARGIN}" width="{_SVG_W - 2 * _SVG_MARGIN}" '
        f'height="{_SVG_H - 2 * _SVG_MARGIN}" fill="none" stroke="#404040"/>',
        f'<text x="{_SVG_W // 2}" y="{_SVG_H - 12}" font-size="12" text-anchor="middle" '
        f'fill="#404040">x: {lo[0]:.2f} .. {hi[0]:.2f}</text>',
        f'<text x="14" y="{_SVG_H // 2}" font-size="12" text-anchor="middle" fill="#404040" '
        f'transform="rotate(-90 14 {_SVG_H // 2})">y: {lo[1]:.2f} .. {hi[1]:.2f}</text>',
    ]

    if len(anchors_xy) >= 2:
        path_points = " ".join("{:.2f},{:.2f}".format(*to_px(p)) for p in anchors_xy)
        parts.append(f'<polyline points="{path_points}" fill="none" stroke="#9090a0" '
                     f'stroke-dasharray="4 3"/>')
    n_anchor = len(anchors_xy)
    for i, p in enumerate(anchors_xy):
        t = i / (n_anchor - 1) if n_anchor > 1 else 0.0
        color = f"rgb(0,{round(255 * t)},{round(255 * (1 - t))})"  # blue start, green end
        x, y = to_px(p)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
    for d, p in zip(solution.devices, devices_xy):
        x, y = to_px(p)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="6" fill="#103080"/>')
        parts.append(f'<text x="{x + 9:.2f}" y="{y + 4:.2f}" font-size="11" '
                     f'fill="#103080">{d.device_id}</text>')
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")
