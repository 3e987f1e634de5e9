"""Grid-regressed Lyapunov visual servoing with a ground-truth stand-in for the network.

Each grid cell over the storage workspace that sees a part carries that
part's Lyapunov value and control candidate. Picking the cell with the
smallest value suppresses every other candidate; the arm follows that control
until the minimum drops below the termination threshold, then descends and
closes the gripper.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .core import Box, ConfigError, ContractViolation, NormalBuffer, Part, Scene

# Mechanical grasp reliability that, combined with the default alignment
# tolerance and servo noise, gives a 0.96 end-to-end grasp rate.
# Re-derive with calibration.calibrate_p_mech().
DEFAULT_P_MECH = 0.96


@dataclass(frozen=True)
class ServoConfig:
    grid_rows: int = 16
    grid_cols: int = 16
    gain: float = 2.0  # 1/s
    max_speed: float = 0.25  # m/s
    terminate_threshold: float = 1e-4  # m^2, i.e. 1 cm
    descend_depth: float = 0.03
    hover_height: float = 0.03
    sigma_value: float = 2e-5
    sigma_control: float = 0.01
    align_tolerance: float = 0.015
    tick_rate: float = 30.0
    p_mech: float = DEFAULT_P_MECH
    part_radius: float = 0.025
    descend_speed: float = 0.05
    grasp_close_time: float = 0.5
    knock_sigma: float = 0.01

    def __post_init__(self):
        checks = {
            "terminate_threshold": self.terminate_threshold > 0,
            "descend_depth": self.descend_depth > 0,
            "tick_rate": self.tick_rate > 0,
            "gain": self.gain > 0,
            "max_speed": self.max_speed > 0,
            "grid_rows": self.grid_rows >= 1,
            "grid_cols": self.grid_cols >= 1,
            "sigma_value": self.sigma_value >= 0,
            "sigma_control": self.sigma_control >= 0,
            "align_tolerance": self.align_tolerance >= 0,
            "p_mech": 0.0 <= self.p_mech <= 1.0,
            "part_radius": self.part_radius > 0,
            "descend_speed": self.descend_speed > 0,
            "grasp_close_time": self.grasp_close_time >= 0,
            "knock_sigma": self.knock_sigma >= 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid servo.{name}={getattr(self, name)!r}", f"servo.{name}")
        if self.gain / self.tick_rate >= 2.0:
            raise ConfigError("gain / tick_rate must be < 2 for a contracting loop", "servo.gain")

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate

    def noise_free(self) -> ServoConfig:
        return replace(self, sigma_value=0.0, sigma_control=0.0)


@dataclass(frozen=True)
class LyapunovGrid:
    """Per-cell regressed field. Invalid cells hold NaN value/control and instance -1."""

    rows: int
    cols: int
    valid: np.ndarray  # (rows*cols,) bool
    value: np.ndarray  # (rows*cols,) float, m^2
    control: np.ndarray  # (rows*cols, 3) float, m/s
    instance_id: np.ndarray  # (rows*cols,) int

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Selection:
    cell_index: int
    control: np.ndarray
    v_min: float
    instance_id: int


@dataclass(frozen=True)
class ServoOutput:
    control: tuple[float, float, float]
    terminate: bool
    v_min: float | None
    instance_id: int | None
    cell_index: int | None
    assembly_done: bool


@dataclass(frozen=True)
class GraspResult:
    success: bool
    scene: Scene
    part_id: int
    alignment_error: float


def ground_truth_lyapunov(ee_pose, pregrasp) -> float:
    """Squared distance from the end effector to the pre-grasp pose (m^2)."""
    d0 = ee_pose[0] - pregrasp[0]
    d1 = ee_pose[1] - pregrasp[1]
    d2 = ee_pose[2] - pregrasp[2]
    return float(d0 * d0 + d1 * d1 + d2 * d2)


def pregrasp_pose(part: Part, cfg: ServoConfig) -> tuple[float, float, float]:
    x, y, z = part.position
    return (x, y, z + cfg.hover_height)


def clamp_speed(u: np.ndarray, max_speed: float) -> np.ndarray:
    """Scale rows of ``u`` down to at most ``max_speed`` in norm."""
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.minimum(1.0, max_speed / np.maximum(norms, 1e-300))
    return u * scale


def lyapunov_control(ee_pose, pregrasp, cfg: ServoConfig) -> np.ndarray:
    e = np.asarray(ee_pose, dtype=float) - np.asarray(pregrasp, dtype=float)
    return clamp_speed(-cfg.gain * e, cfg.max_speed)


@lru_cache(maxsize=64)
def _cell_geometry(bounds: Box, rows: int, cols: int):
    x0, y0 = bounds.lo[0], bounds.lo[1]
    x1, y1 = bounds.hi[0], bounds.hi[1]
    xs = np.linspace(x0, x1, cols + 1)
    ys = np.linspace(y0, y1, rows + 1)
    r, c = np.divmod(np.arange(rows * cols), cols)
    lo = np.stack([xs[c], ys[r]], axis=1)
    hi = np.stack([xs[c + 1], ys[r + 1]], axis=1)
    centre = 0.5 * (lo + hi)
    return lo, hi, centre


def instance_mask(scene: Scene, cfg: ServoConfig) -> tuple[np.ndarray, list[Part]]:
    """Cell -> index into the returned part list (or -1) by disc/rectangle overlap.

    A cell overlapping several discs goes to the part whose centre is nearest
    the cell centre.
    """
    lo, hi, centre = _cell_geometry(scene.workspace_bounds, cfg.grid_rows, cfg.grid_cols)
    parts = list(scene.unattached())
    n = cfg.grid_rows * cfg.grid_cols
    owner = np.full(n, -1, dtype=np.int64)
    if not parts:
        return owner, parts
    pxy = np.array([[p.position[0], p.position[1]] for p in parts])  # (P, 2)
    closest = np.clip(pxy[:, None, :], lo[None], hi[None])  # (P, N, 2)
    overlap = np.sum((closest - pxy[:, None, :]) ** 2, axis=2) <= cfg.part_radius**2
    dc = np.sum((centre[None] - pxy[:, None, :]) ** 2, axis=2)
    dc = np.where(overlap, dc, np.inf)
    best = np.argmin(dc, axis=0)
    any_overlap = overlap.any(axis=0)
    owner[any_overlap] = best[any_overlap]
    return owner, parts


def render_lyapunov_grid(scene: Scene, cfg: ServoConfig, rng: np.random.Generator | None) -> LyapunovGrid:
    owner, parts = instance_mask(scene, cfg)
    n = cfg.grid_rows * cfg.grid_cols
    valid = owner >= 0
    value = np.full(n, np.nan)
    control = np.full((n, 3), np.nan)
    instance_id = np.full(n, -1, dtype=np.int64)
    if parts and valid.any():
        ee = np.asarray(scene.ee_pose, dtype=float)
        pre = np.array([pregrasp_pose(p, cfg) for p in parts])
        err = ee[None, :] - pre
        v_inst = np.sum(err * err, axis=1)
        u_inst = clamp_speed(-cfg.gain * err, cfg.max_speed)
        idx = owner[valid]
        v = v_inst[idx]
        u = u_inst[idx]
        m = idx.size
        if cfg.sigma_value > 0:
            v = np.maximum(v + rng.normal(0.0, cfg.sigma_value, m), 0.0)
        if cfg.sigma_control > 0:
            u = u + rng.normal(0.0, cfg.sigma_control, (m, 3))
        value[valid] = v
        control[valid] = u
        instance_id[valid] = np.array([p.id for p in parts])[idx]
    return LyapunovGrid(cfg.grid_rows, cfg.grid_cols, valid, value, control, instance_id)


def select_control(grid: LyapunovGrid) -> Selection | None:
    """Keep only the candidate with the smallest value; ties go to the lowest cell index."""
    if not grid.valid.any():
        return None
    masked = np.where(grid.valid, grid.value, np.inf)
    i = int(np.argmin(masked))
    return Selection(i, grid.control[i].copy(), float(grid.value[i]), int(grid.instance_id[i]))


class ServoField:
    """Instance mask cached for as long as the parts stay put.

    ``tick`` is equivalent in distribution to rendering the full grid and
    selecting the minimum: every valid cell gets value noise, but control
    noise is only drawn for the cell that wins (the others are discarded
    unread anyway).
    """

    def __init__(self, scene: Scene, cfg: ServoConfig):
        owner, parts = instance_mask(scene, cfg)
        self.cfg = cfg
        valid = owner >= 0
        self.cells = np.flatnonzero(valid).tolist()
        self.owner = owner[valid].tolist()
        self.part_ids = [p.id for p in parts]
        self.pregrasp = [pregrasp_pose(p, cfg) for p in parts]
        self.no_parts = not parts

    def tick(self, ee_pose, noise: np.random.Generator | NormalBuffer | None) -> ServoOutput:
        """``noise`` is a Generator or a NormalBuffer; it is unused when the config is noise-free."""
        cfg = self.cfg
        m = len(self.cells)
        if m == 0:
            return ServoOutput((0.0, 0.0, 0.0), False, None, None, None, self.no_parts)
        ex, ey, ez = ee_pose
        errs = [(ex - px, ey - py, ez - pz) for px, py, pz in self.pregrasp]
        v_inst = [dx * dx + dy * dy + dz * dz for dx, dy, dz in errs]
        sv = cfg.sigma_value
        best = math.inf
        j = 0
        if sv > 0:
            draws = _normals(noise, m)
            for i, o in enumerate(self.owner):
                v = v_inst[o] + sv * draws[i]
                if v < 0.0:
                    v = 0.0
                if v < best:
                    best, j = v, i
        else:
            for i, o in enumerate(self.owner):
                if v_inst[o] < best:
                    best, j = v_inst[o], i
        k = self.owner[j]
        terminate = best < cfg.terminate_threshold
        if terminate:
            control = (0.0, 0.0, 0.0)
        else:
            dx, dy, dz = errs[k]
            norm = cfg.gain * math.sqrt(v_inst[k])
            scale = -cfg.gain * (1.0 if norm <= cfg.max_speed else cfg.max_speed / norm)
            control = (scale * dx, scale * dy, scale * dz)
            sc = cfg.sigma_control
            if sc > 0:
                n0, n1, n2 = _normals(noise, 3)
                control = (control[0] + sc * n0, control[1] + sc * n1, control[2] + sc * n2)
        return ServoOutput(control, terminate, best, self.part_ids[k], self.cells[j], False)


def _normals(noise, n: int) -> list[float]:
    if isinstance(noise, NormalBuffer):
        return noise.take(n)
    return noise.standard_normal(n).tolist()


def servo_tick(scene: Scene, cfg: ServoConfig, rng: np.random.Generator | None) -> ServoOutput:
    """One servo step: regress the grid, keep the minimum-value candidate, test termination."""
    return ServoField(scene, cfg).tick(scene.ee_pose, rng)


def step_ee(ee_pose, control, dt: float) -> tuple[float, float, float]:
    return (
        float(ee_pose[0] + control[0] * dt),
        float(ee_pose[1] + control[1] * dt),
        float(ee_pose[2] + control[2] * dt),
    )


def nearest_part(scene: Scene) -> Part | None:
    parts = scene.unattached()
    if not parts:
        return None
    ex, ey = scene.ee_pose[0], scene.ee_pose[1]
    return min(parts, key=lambda p: ((p.position[0] - ex) ** 2 + (p.position[1] - ey) ** 2, p.id))


def grasp_duration(cfg: ServoConfig) -> float:
    return cfg.descend_depth / cfg.descend_speed + cfg.grasp_close_time


def execute_grasp(
    scene: Scene, cfg: ServoConfig, rng: np.random.Generator, part_id: int | None = None
) -> GraspResult:
    """Descend by ``descend_depth`` and close the gripper on the target part.

    Success needs the planar offset to the part centre within
    ``align_tolerance`` and a mechanical Bernoulli(p_mech) draw. A miss knocks
    the part by a small random planar offset.
    """
    if scene.holding is not None:
        raise ContractViolation(f"gripper already holding part {scene.holding}")
    part = scene.part(part_id) if part_id is not None else nearest_part(scene)
    if part is None or part.attached:
        raise ContractViolation("no unattached part to grasp")
    ee = scene.ee_pose
    lowered = (ee[0], ee[1], ee[2] - cfg.descend_depth)
    err = math.hypot(ee[0] - part.position[0], ee[1] - part.position[1])
    u_mech = rng.random()
    knock = rng.normal(0.0, cfg.knock_sigma, 2) if cfg.knock_sigma > 0 else np.zeros(2)
    success = err <= cfg.align_tolerance and u_mech < cfg.p_mech
    if success:
        new = scene.with_part(replace(part, attached=True))
        new = replace(new, holding=part.id).with_ee(lowered)
    else:
        b = scene.workspace_bounds
        r = cfg.part_radius
        x = float(np.clip(part.position[0] + knock[0], b.lo[0] + r, b.hi[0] - r))
        y = float(np.clip(part.position[1] + knock[1], b.lo[1] + r, b.hi[1] - r))
        new = scene.with_part(replace(part, position=(x, y, part.position[2]))).with_ee(lowered)
    return GraspResult(success, new, part.id, err)


def _colour(v: float, vmax: float) -> str:
    # blue (low) -> red (high) ramp for plotting dumps
    t = 0.0 if vmax <= 0 else min(1.0, v / vmax)
    return "#{:02x}00{:02x}".format(int(255 * t), int(255 * (1 - t)))


def grid_to_json(grid: LyapunovGrid, time_s: float | None = None) -> str:
    vmax = float(np.nanmax(grid.value)) if grid.valid.any() else 0.0
    cells = []
    for i in range(grid.n_cells):
        if grid.valid[i]:
            cells.append({
                "cell": i,
                "value": float(grid.value[i]),
                "control": [float(c) for c in grid.control[i]],
                "instance": int(grid.instance_id[i]),
                "colour": _colour(float(grid.value[i]), vmax),
            })
    return json.dumps({"t": time_s, "rows": grid.rows, "cols": grid.cols, "cells": cells})
