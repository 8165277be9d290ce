"""Multiscale state decomposition and augmented observations.

The reconstruction target is split into a large-scale component (carried
by the optimal-interpolation field) and two anomaly components: one
anchored to the observed anomalies, one free. Stacked along channels,
a window of N days becomes a (3N, H, W) tensor in component-major order
[coarse 0..N-1 | obs-anomaly 0..N-1 | free-anomaly 0..N-1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError


@dataclass
class FieldSeq:
    """A T x H x W gridded scalar sequence (meters) on a regular lattice."""

    values: np.ndarray
    cell_deg: float = 0.05
    dt_days: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ShapeError(f"FieldSeq values must be T x H x W, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("FieldSeq values must be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class ObsSet:
    """Observed values with their boolean coverage mask; gaps hold 0."""

    values: FieldSeq
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ShapeError(
                f"ObsSet mask shape {self.mask.shape} != values shape {self.values.shape}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class AugmentedState:
    """(coarse, obs-anomaly, free-anomaly) triple sharing one T x H x W shape."""

    xbar: FieldSeq
    dx1: FieldSeq
    dx2: FieldSeq

    def __post_init__(self):
        if not (self.xbar.shape == self.dx1.shape == self.dx2.shape):
            raise ShapeError(
                "AugmentedState components must share shape, got "
                f"{self.xbar.shape}, {self.dx1.shape}, {self.dx2.shape}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.xbar.shape


@dataclass
class SeqData:
    """One OSSE dataset: truth, merged observations, and the OI baseline."""

    truth: FieldSeq
    obs: ObsSet
    oi: FieldSeq

    def __post_init__(self):
        if not (self.truth.shape == self.obs.shape == self.oi.shape):
            raise ShapeError("SeqData members must share shape")

    def window(self, t0: int, t1: int) -> "SeqData":
        sl = slice(t0, t1)
        g = dict(cell_deg=self.truth.cell_deg, dt_days=self.truth.dt_days)
        return SeqData(
            truth=FieldSeq(self.truth.values[sl], **g),
            obs=ObsSet(FieldSeq(self.obs.values.values[sl], **g), self.obs.mask[sl]),
            oi=FieldSeq(self.oi.values[sl], **g),
        )


def build_augmented_obs(y: ObsSet, oi_field: FieldSeq) -> tuple[AugmentedState, np.ndarray]:
    """Assemble the augmented observations and their per-component masks.

    Component 1 is the gap-free OI field (mask all true), component 2 the
    observed anomaly y - OI on the coverage mask (0 elsewhere), component 3
    is unobserved (zeros, mask all false).  The returned mask is a boolean
    (3, T, H, W) array.
    """
    if y.shape != oi_field.shape:
        raise ShapeError(f"obs shape {y.shape} != OI shape {oi_field.shape}")
    g = dict(cell_deg=oi_field.cell_deg, dt_days=oi_field.dt_days)
    anom = np.where(y.mask, y.values.values - oi_field.values, 0.0)
    aug = AugmentedState(
        xbar=FieldSeq(oi_field.values.copy(), **g),
        dx1=FieldSeq(anom, **g),
        dx2=FieldSeq(np.zeros_like(oi_field.values), **g),
    )
    mask = np.stack(
        [np.ones(y.shape, dtype=bool), y.mask.copy(), np.zeros(y.shape, dtype=bool)]
    )
    return aug, mask


def init_state(aug_obs: AugmentedState, aug_mask: np.ndarray) -> AugmentedState:
    """Initial solver state: the observed components, with gaps set to 0."""
    g = dict(cell_deg=aug_obs.xbar.cell_deg, dt_days=aug_obs.xbar.dt_days)
    return AugmentedState(
        xbar=FieldSeq(aug_obs.xbar.values.copy(), **g),
        dx1=FieldSeq(np.where(aug_mask[1], aug_obs.dx1.values, 0.0), **g),
        dx2=FieldSeq(np.zeros_like(aug_obs.xbar.values), **g),
    )


def reconstruct(aug: AugmentedState) -> FieldSeq:
    """The reconstructed field: coarse component plus the free anomaly."""
    return FieldSeq(
        aug.xbar.values + aug.dx2.values,
        cell_deg=aug.xbar.cell_deg,
        dt_days=aug.xbar.dt_days,
    )


# --- channel packing -------------------------------------------------------

def aug_to_array(aug: AugmentedState) -> np.ndarray:
    """(3N, H, W) channel stack in component-major order."""
    return np.concatenate([aug.xbar.values, aug.dx1.values, aug.dx2.values], axis=0)


def array_to_aug(arr: np.ndarray, cell_deg: float = 0.05, dt_days: float = 1.0) -> AugmentedState:
    if arr.ndim != 3 or arr.shape[0] % 3:
        raise ShapeError(f"augmented array must be (3N, H, W), got {arr.shape}")
    n = arr.shape[0] // 3
    g = dict(cell_deg=cell_deg, dt_days=dt_days)
    return AugmentedState(
        xbar=FieldSeq(arr[:n].copy(), **g),
        dx1=FieldSeq(arr[n : 2 * n].copy(), **g),
        dx2=FieldSeq(arr[2 * n :].copy(), **g),
    )


def mask_to_array(aug_mask: np.ndarray) -> np.ndarray:
    """(3, T, H, W) per-component mask -> (3T, H, W) channel stack."""
    return np.concatenate([aug_mask[0], aug_mask[1], aug_mask[2]], axis=0)


def recon_channels(n_frames: int) -> tuple[slice, slice]:
    """Channel ranges of the coarse and free-anomaly groups in the stack."""
    return slice(0, n_frames), slice(2 * n_frames, 3 * n_frames)
