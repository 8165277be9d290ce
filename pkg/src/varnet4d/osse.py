"""Synthetic observing-system simulation: truth fields, satellite-like
sampling, and the optimal-interpolation baseline.

The ground truth is a sum of advected (optionally curving) Gaussian
vortices over a slowly drifting large-scale background, periodic in
space and deterministic per seed. Pseudo-observations mimic thin
along-track sampling (daily noisy tracks at random angles) and a wide
two-band swath with a central gap on revisit days. Optimal interpolation
is the exact Gaussian-process posterior mean under a separable
squared-exponential space-time covariance with a noise nugget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .state import FieldSeq, ObsSet
from .autodiff import ShapeError

CM2_TO_M2 = 1e-4  # noise variances are configured in cm^2, fields are meters


@dataclass
class RegimeConfig:
    """Parameters of the synthetic truth generator."""

    n_vortices: int = 12
    amplitude_range: tuple[float, float] = (0.05, 0.25)  # m
    radius_range: tuple[float, float] = (3.0, 7.0)  # grid cells
    advection_range: tuple[float, float] = (0.2, 1.0)  # cells/day
    rotation_range: tuple[float, float] = (0.0, 0.15)  # rad/day heading drift
    background_amplitude: float = 0.15  # m
    background_wavelength: float = 48.0  # cells
    background_drift_days: float = 30.0
    seed: int = 0

    def __post_init__(self):
        for name in ("amplitude_range", "radius_range", "advection_range", "rotation_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.radius_range[0] < 1.0:
            raise ValueError("vortex radii must be >= 1 grid cell")


@dataclass
class NadirConfig:
    tracks_per_day: int = 4
    angle_range: tuple[float, float] = (0.0, 2 * np.pi)
    track_width: float = 1.0  # cells
    noise_var_range: tuple[float, float] = (4.0, 9.0)  # cm^2 per track

    def __post_init__(self):
        if self.track_width < 1:
            raise ValueError("track width must be >= 1 cell")


@dataclass
class SwathConfig:
    width: float = 22.0  # cells, full across-track extent including the gap
    gap: float = 4.0  # cells, unobserved band under the track center
    revisit_days: int = 3
    noise_var: float = 0.0  # cm^2; 0 = error-free

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("swath width must be >= 1 cell")
        if self.revisit_days < 1:
            raise ValueError("revisit period must be >= 1 day")


@dataclass
class SamplingConfig:
    nadir: NadirConfig = field(default_factory=NadirConfig)
    swath: SwathConfig = field(default_factory=SwathConfig)
    use_swath: bool = True
    seed: int = 0


@dataclass
class OIConfig:
    length_x: float = 8.0  # cells
    length_y: float = 8.0  # cells
    length_t: float = 3.0  # days
    noise_var: float = 4.0  # cm^2 nugget
    max_obs: int = 6000  # direct dense solve cap per window
    block_days: int = 6  # temporal windowing beyond the cap

    def __post_init__(self):
        if min(self.length_x, self.length_y, self.length_t) <= 0:
            raise ValueError("OI length scales must be > 0")


# ---------------------------------------------------------------------------
# ground truth

def _wrapped_delta(idx: np.ndarray, center: float, n: int) -> np.ndarray:
    """Signed displacement to center on a ring of length n (minimal image)."""
    return (idx - center + n / 2.0) % n - n / 2.0


def simulate_truth(T: int, H: int, W: int, regime: RegimeConfig) -> FieldSeq:
    """Advected rotating Gaussian vortices over a drifting large-scale
    background; periodic in space, deterministic per seed."""
    if min(T, H, W) < 1:
        raise ShapeError(f"truth extent must be positive, got {(T, H, W)}")
    rng = np.random.default_rng(regime.seed)
    rows = np.arange(H, dtype=np.float64)[:, None]
    cols = np.arange(W, dtype=np.float64)[None, :]
    out = np.zeros((T, H, W))

    n = regime.n_vortices
    amp = rng.uniform(*regime.amplitude_range, size=n) * rng.choice([-1.0, 1.0], size=n)
    rad = rng.uniform(*regime.radius_range, size=n)
    r0 = rng.uniform(0, H, size=n)
    c0 = rng.uniform(0, W, size=n)
    speed = rng.uniform(*regime.advection_range, size=n)
    heading = rng.uniform(0, 2 * np.pi, size=n)
    omega = rng.uniform(*regime.rotation_range, size=n) * rng.choice([-1.0, 1.0], size=n)

    for t in range(T):
        for v in range(n):
            # curving trajectory: heading drifts at the rotation rate
            if abs(omega[v]) > 1e-12:
                dr = (speed[v] / omega[v]) * (
                    -np.cos(heading[v] + omega[v] * t) + np.cos(heading[v])
                )
                dc = (speed[v] / omega[v]) * (
                    np.sin(heading[v] + omega[v] * t) - np.sin(heading[v])
                )
            else:
                dr = speed[v] * t * np.sin(heading[v])
                dc = speed[v] * t * np.cos(heading[v])
            cy = (r0[v] + dr) % H
            cx = (c0[v] + dc) % W
            d2 = _wrapped_delta(rows, cy, H) ** 2 + _wrapped_delta(cols, cx, W) ** 2
            out[t] += amp[v] * np.exp(-d2 / (2.0 * rad[v] ** 2))

    if regime.background_amplitude > 0:
        kx = max(1, round(W / regime.background_wavelength))
        ky = max(1, round(H / regime.background_wavelength))
        ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
        tt = np.arange(T)[:, None, None]
        drift = 2 * np.pi * tt / regime.background_drift_days
        out += regime.background_amplitude * (
            np.sin(2 * np.pi * kx * cols[None] / W + ph1 + drift)
            + np.sin(2 * np.pi * ky * rows[None] / H + ph2 - 0.7 * drift)
        ) / 2.0
    return FieldSeq(out)


# ---------------------------------------------------------------------------
# sampling

def _mark_line(mask2d: np.ndarray, r0: float, c0: float, angle: float, width: float) -> None:
    """Mark cells under one straight grid crossing through (r0, c0).

    The march covers a single traversal (length scaled to the crossing
    extent for the angle) and wraps around the periodic grid.
    """
    H, W = mask2d.shape
    dr, dc = np.sin(angle), np.cos(angle)
    length = min(H, W) / max(abs(dr), abs(dc), 1e-12)
    length = min(length, float(np.hypot(H, W)))
    steps = int(np.ceil(length / 0.25))
    s = np.linspace(-length / 2.0, length / 2.0, steps)
    half = max(width / 2.0, 0.5)
    # perpendicular fill for widths beyond one cell
    n_perp = max(1, int(np.ceil(width)) * 2 + 1)
    perp = np.linspace(-half + 0.5, half - 0.5, n_perp) if width > 1 else np.array([0.0])
    for off in perp:
        rr = np.round(r0 + s * dr - off * dc).astype(int) % H
        cc = np.round(c0 + s * dc + off * dr).astype(int) % W
        mask2d[rr, cc] = True


def sample_nadir(truth: FieldSeq, cfg: SamplingConfig) -> ObsSet:
    """Daily thin tracks at random angles with per-track white noise."""
    rng = np.random.default_rng(cfg.seed)
    nad = cfg.nadir
    T, H, W = truth.shape
    mask = np.zeros((T, H, W), dtype=bool)
    values = np.zeros((T, H, W))
    for t in range(T):
        day = np.zeros((H, W), dtype=bool)
        for _ in range(nad.tracks_per_day):
            track = np.zeros((H, W), dtype=bool)
            angle = rng.uniform(*nad.angle_range)
            r0, c0 = rng.uniform(0, H), rng.uniform(0, W)
            _mark_line(track, r0, c0, angle, nad.track_width)
            sig2 = rng.uniform(*nad.noise_var_range) * CM2_TO_M2
            noise = rng.normal(0.0, np.sqrt(sig2), size=(H, W)) if sig2 > 0 else 0.0
            values[t] = np.where(track, truth.values[t] + noise, values[t])
            day |= track
        mask[t] = day
    values[~mask] = 0.0
    return ObsSet(FieldSeq(values, truth.cell_deg, truth.dt_days), mask)


def sample_swath(truth: FieldSeq, cfg: SamplingConfig) -> ObsSet:
    """Wide two-band swath with a central nadir gap on revisit days."""
    rng = np.random.default_rng(cfg.seed + 1)
    sw = cfg.swath
    T, H, W = truth.shape
    mask = np.zeros((T, H, W), dtype=bool)
    values = np.zeros((T, H, W))
    # fixed inclination per dataset; the crossing position shifts per pass
    angle = rng.uniform(np.pi / 3, 2 * np.pi / 3)
    phase = int(rng.integers(sw.revisit_days))
    n_vec = np.array([-np.cos(angle), np.sin(angle)])  # unit normal to track
    rows = np.arange(H, dtype=np.float64)[:, None]
    cols = np.arange(W, dtype=np.float64)[None, :]
    for t in range(T):
        if t % sw.revisit_days != phase:
            continue
        r0, c0 = rng.uniform(0, H), rng.uniform(0, W)
        dr = _wrapped_delta(rows, r0, H)
        dc = _wrapped_delta(cols, c0, W)
        dist = np.abs(dr * n_vec[0] + dc * n_vec[1])
        band = (dist <= sw.width / 2.0) & (dist >= sw.gap / 2.0)
        sig2 = sw.noise_var * CM2_TO_M2
        noise = rng.normal(0.0, np.sqrt(sig2), size=(H, W)) if sig2 > 0 else 0.0
        values[t] = np.where(band, truth.values[t] + noise, values[t])
        mask[t] = band
    values[~mask] = 0.0
    return ObsSet(FieldSeq(values, truth.cell_deg, truth.dt_days), mask)


def merge_obs(a: ObsSet, b: ObsSet) -> ObsSet:
    """Union of two observation sets; where both observe, b wins."""
    if a.shape != b.shape:
        raise ShapeError(f"merge_obs: shapes differ, {a.shape} vs {b.shape}")
    mask = a.mask | b.mask
    values = np.where(b.mask, b.values.values, a.values.values)
    values = np.where(mask, values, 0.0)
    return ObsSet(FieldSeq(values, a.values.cell_deg, a.values.dt_days), mask)


# ---------------------------------------------------------------------------
# optimal interpolation

def _thin_indices(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, cap)).astype(int))


def optimal_interp(obs: ObsSet, cfg: OIConfig) -> FieldSeq:
    """Gaussian-process posterior mean on the full grid.

    Zero prior mean, separable squared-exponential covariance in (row,
    col, day), nugget = observation noise variance. Small problems are
    solved in one dense system; longer sequences fall back to overlapping
    temporal blocks, each predicted from observations within a pad of
    2 * length_t days.
    """
    T, H, W = obs.shape
    t_obs, r_obs, c_obs = np.nonzero(obs.mask)
    vals = obs.values.values[obs.mask]
    out = np.zeros((T, H, W))
    if vals.size == 0:
        return FieldSeq(out, obs.values.cell_deg, obs.values.dt_days)

    nugget = cfg.noise_var * CM2_TO_M2
    pad = int(np.ceil(2.0 * cfg.length_t))
    one_shot = vals.size <= cfg.max_obs and T <= cfg.block_days + 2 * pad

    block_starts = [0] if one_shot else list(range(0, T, cfg.block_days))
    for b0 in block_starts:
        b1 = T if one_shot else min(b0 + cfg.block_days, T)
        if one_shot:
            sel = np.arange(vals.size)
        else:
            in_pad = (t_obs >= b0 - pad) & (t_obs < b1 + pad)
            sel = np.nonzero(in_pad)[0]
        sel = sel[_thin_indices(sel.size, cfg.max_obs)]
        if sel.size == 0:
            continue
        to, ro, co = t_obs[sel], r_obs[sel], c_obs[sel]
        vo = vals[sel]

        # integer grid offsets: assemble the kernel from 1-D lookup tables
        tab_r = np.exp(-np.arange(H, dtype=np.float64) ** 2 / (2 * cfg.length_y ** 2))
        tab_c = np.exp(-np.arange(W, dtype=np.float64) ** 2 / (2 * cfg.length_x ** 2))
        tab_t = np.exp(-np.arange(T, dtype=np.float64) ** 2 / (2 * cfg.length_t ** 2))
        K = tab_r[np.abs(ro[:, None] - ro[None, :])]
        K *= tab_c[np.abs(co[:, None] - co[None, :])]
        K *= tab_t[np.abs(to[:, None] - to[None, :])]
        K[np.diag_indices_from(K)] += nugget
        try:
            chol = cho_factor(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "singular OI system (duplicate observations or zero nugget); "
                "set noise_var > 0"
            ) from exc
        alpha = cho_solve(chol, vo, check_finite=False)

        rows = np.arange(H, dtype=np.float64)
        cols = np.arange(W, dtype=np.float64)
        kr = np.exp(-((rows[:, None] - ro[None, :]) ** 2) / (2 * cfg.length_y ** 2))
        kc = np.exp(-((cols[:, None] - co[None, :]) ** 2) / (2 * cfg.length_x ** 2))
        for t in range(b0, b1):
            kt = np.exp(-((t - to) ** 2) / (2 * cfg.length_t ** 2))
            wa = alpha * kt  # (n,)
            out[t] = np.einsum("rn,cn->rc", kr, kc * wa[None, :], optimize=True)
    return FieldSeq(out, obs.values.cell_deg, obs.values.dt_days)


# ---------------------------------------------------------------------------
# regime presets used across experiments and tests

def energetic_regime(seed: int = 0) -> RegimeConfig:
    return RegimeConfig(
        n_vortices=14,
        amplitude_range=(0.08, 0.30),
        radius_range=(3.0, 6.0),
        advection_range=(0.5, 1.4),
        rotation_range=(0.0, 0.2),
        background_amplitude=0.15,
        background_wavelength=48.0,
        seed=seed,
    )


def quiet_regime(seed: int = 0) -> RegimeConfig:
    return RegimeConfig(
        n_vortices=5,
        amplitude_range=(0.03, 0.10),
        radius_range=(6.0, 10.0),
        advection_range=(0.1, 0.4),
        rotation_range=(0.0, 0.05),
        background_amplitude=0.10,
        background_wavelength=64.0,
        seed=seed,
    )
