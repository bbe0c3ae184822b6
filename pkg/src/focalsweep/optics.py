"""Closed-form thin-lens optics for a focal-sweeping lens in front of the eye.

All distances are in meters, measured along the lens optical axis from the
lens plane. All optical powers are in diopters (1/m). Optical infinity is
represented by ``math.inf``, whose reciprocal is exactly zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

OPTICAL_INFINITY = math.inf

#: guideline upper bound on the spacing between sampled powers
GUIDELINE_INTERVAL = 0.6

#: optical power range of the tunable lens used by the reference prototype
DEFAULT_POWER_BOUND = 10.0
SNAP_FRACTION = 1e-9


class DomainError(ValueError):
    """An argument lies outside the domain of a thin-lens relation."""


class RealImageError(DomainError):
    """The lens forms a real image; no virtual image exists on the viewer side."""


def _reciprocal(d: float) -> float:
    return 0.0 if math.isinf(d) else 1.0 / d


def check_power(v: float, bound: float = DEFAULT_POWER_BOUND) -> float:
    """Validate an optical power against the hardware bound and return it."""
    if not math.isfinite(v):
        raise DomainError(f"optical power must be finite, got {v}")
    if abs(v) > bound:
        raise DomainError(f"optical power {v:+.3f} D exceeds the +/-{bound} D bound")
    return v


def required_power(d_p: float, d_v: float) -> float:
    """Lens power that places the virtual image of a surface point at ``d_v``.

    Parameters
    ----------
    d_p : float
        distance of the projection surface from the lens
    d_v : float
        desired distance of the virtual image; ``math.inf`` is allowed

    Returns
    -------
    float
        optical power in diopters, ``1/d_p - 1/d_v``

    """
    if not d_p > 0 or math.isinf(d_p):
        raise DomainError(f"surface distance must be positive and finite, got {d_p}")
    if not d_v > 0:
        raise DomainError(f"virtual image distance must be positive, got {d_v}")
    return 1.0 / d_p - _reciprocal(d_v)


def virtual_distance(d_p: float, v: float) -> float:
    """Distance of the virtual image of a surface at ``d_p`` seen at power ``v``.

    Returns ``math.inf`` when the surface sits exactly in the focal plane.
    Raises :class:`RealImageError` when ``1/d_p - v`` is negative.
    """
    if not d_p > 0 or math.isinf(d_p):
        raise DomainError(f"surface distance must be positive and finite, got {d_p}")
    w = 1.0 / d_p - v
    if w < 0:
        raise RealImageError(
            f"power {v:+.4f} D on a surface at {d_p:.4f} m forms a real image")
    if w == 0:
        return OPTICAL_INFINITY
    return 1.0 / w


@dataclass(frozen=True)
class SweepRange:
    v_low: float
    v_high: float

    def __post_init__(self):
        if not self.v_low <= self.v_high:
            raise DomainError(f"sweep range is inverted: {self.v_low} > {self.v_high}")

    @property
    def span(self) -> float:
        return self.v_high - self.v_low

    @property
    def center(self) -> float:
        return 0.5 * (self.v_low + self.v_high)

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.v_low - tol <= v <= self.v_high + tol


def sweep_range(d_p: float, d_vn: float, d_vf: float) -> SweepRange:
    """Sweep range needed to move virtual images from ``d_p - d_vn`` to ``d_p + d_vf``.

    ``d_vn`` is how far in front of the surface the near end of the virtual
    image range lies, ``d_vf`` how far behind it the far end lies (may be
    ``math.inf``). A zero-extent request yields the degenerate range (0, 0).
    """
    if not d_p > 0 or math.isinf(d_p):
        raise DomainError(f"surface distance must be positive and finite, got {d_p}")
    if d_vn < 0 or d_vf < 0:
        raise DomainError("near/far extents must be non-negative")
    if d_vn >= d_p:
        raise DomainError(
            f"near extent {d_vn} m reaches the lens for a surface at {d_p} m")
    v_low = 1.0 / d_p - 1.0 / (d_p - d_vn)
    v_high = 1.0 / d_p - _reciprocal(d_p + d_vf)
    return SweepRange(v_low, v_high)


@dataclass(frozen=True)
class PowerSamples:
    """Sampled optical powers at which the projector displays slices."""

    powers: tuple[float, ...]
    guideline_interval: float = GUIDELINE_INTERVAL

    def __post_init__(self):
        p = tuple(float(x) for x in self.powers)
        object.__setattr__(self, "powers", p)
        if len(p) == 0:
            raise ValueError("at least one sampled power is required")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError(f"sampled powers must be strictly increasing: {p}")

    def __len__(self) -> int:
        return len(self.powers)

    def __iter__(self):
        return iter(self.powers)

    def __getitem__(self, i):
        return self.powers[i]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.powers, dtype=float)

    @property
    def max_interval(self) -> float:
        if len(self.powers) < 2:
            return 0.0
        return float(np.max(np.diff(self.array)))

    @property
    def meets_guideline(self) -> bool:
        return self.max_interval <= self.guideline_interval + 1e-12


def sample_powers(rng: SweepRange, n_prime: int,
                  guideline_interval: float = GUIDELINE_INTERVAL) -> PowerSamples:
    """Uniformly sample ``n_prime`` powers over a sweep range, endpoints included.

    A single sample sits at the range center. A warning is logged when the
    spacing exceeds ``guideline_interval``.
    """
    if int(n_prime) != n_prime or n_prime < 1:
        raise ValueError(f"n_prime must be a positive integer, got {n_prime}")
    n_prime = int(n_prime)
    if n_prime == 1:
        powers = (rng.center,)
    else:
        if rng.span == 0:
            raise ValueError("cannot place several samples in a zero-width range")
        step = rng.span / (n_prime - 1)
        # endpoints are assigned, not accumulated, so they match the range exactly
        powers = tuple(rng.v_low + i * step for i in range(n_prime - 1)) + (rng.v_high,)
    samples = PowerSamples(powers, guideline_interval)
    if not samples.meets_guideline:
        logger.warning("power sampling interval %.3f D exceeds the %.2f D guideline",
                       samples.max_interval, guideline_interval)
    return samples


def assign_slice(v: float, samples: PowerSamples | Sequence[float]) -> int:
    """Index of the sampled power closest to ``v``; ties go to the lower index."""
    p = samples.powers if isinstance(samples, PowerSamples) else tuple(samples)
    if not p:
        raise ValueError("no sampled powers")
    best, best_err = 0, abs(p[0] - v)
    for i in range(1, len(p)):
        err = abs(p[i] - v)
        if err < best_err:
            best, best_err = i, err
    return best


def assign_slices(v: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Vectorized :func:`assign_slice` over an array of powers."""
    v = np.asarray(v, dtype=float)
    powers = np.asarray(powers, dtype=float)
    # argmin returns the first minimum, which is the lower-index tie rule
    return np.argmin(np.abs(powers[:, None] - v.reshape(1, -1)), axis=0).reshape(v.shape)


@dataclass(frozen=True)
class SliceWeights:
    lower_index: int
    weight_lower: float
    weight_upper: float

    @property
    def upper_index(self) -> int:
        return self.lower_index + 1


def _split_exact(r: np.ndarray, lower: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Snap ``lower`` to the ulp grid of ``r`` so ``lower + (r - lower) == r`` exactly."""
    ulp = np.spacing(np.where(r > 0, r, 1.0))
    lower = np.where(r > 0, np.round(lower / ulp) * ulp, 0.0)
    lower = np.clip(lower, 0.0, r)
    return lower, r - lower


def depth_filter_arrays(r: np.ndarray, v: np.ndarray, powers: np.ndarray):
    """Distribute radiance ``r`` at powers ``v`` onto the two bracketing samples.

    Parameters
    ----------
    r : ndarray
        non-negative radiance per element
    v : ndarray
        required optical power per element, same shape as ``r``
    powers : ndarray
        strictly increasing sampled powers

    Returns
    -------
    lower_index, r_lower, r_upper : ndarray
        index of the lower bracket sample and the radiance sent to it and to
        the next sample. ``r_lower + r_upper == r`` holds bit-exactly. Powers
        outside the sampled range clamp to the nearest endpoint with full
        weight; with a single sample everything goes to index 0.

    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if np.any(r < 0):
        raise ValueError("radiance must be non-negative")
    n = len(powers)
    if n == 1:
        return np.zeros(r.shape, dtype=np.intp), r.copy(), np.zeros_like(r)
    idx = np.searchsorted(powers, v, side="right") - 1
    idx = np.clip(idx, 0, n - 2)
    lo = powers[idx]
    hi = powers[idx + 1]
    frac = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    # powers within rounding noise of a sample go entirely to that sample
    frac = np.where(frac < SNAP_FRACTION, 0.0, np.where(frac > 1.0 - SNAP_FRACTION, 1.0, frac))
    r_lower, r_upper = _split_exact(r, r * (1.0 - frac))
    return idx, r_lower, r_upper


def depth_filter(r: float, v: float, samples: PowerSamples | Sequence[float]) -> SliceWeights:
    """Linear dioptric split of radiance ``r`` between the two nearest samples.

    The returned weights are radiances, i.e. fractions already scaled by ``r``.
    """
    if r < 0:
        raise ValueError(f"radiance must be non-negative, got {r}")
    p = samples.powers if isinstance(samples, PowerSamples) else tuple(samples)
    idx, lo, up = depth_filter_arrays(np.array([r]), np.array([v]), np.asarray(p, float))
    return SliceWeights(int(idx[0]), float(lo[0]), float(up[0]))


def breathing_scale(d_p: float, d_v: float, d_e: float) -> float:
    """Resize factor that keeps the retinal size of a slice seen through the lens.

    Content drawn on a surface at ``d_p`` and viewed as a virtual image at
    ``d_v`` by an eye ``d_e`` behind the lens must be scaled about the optical
    axis by ``d_p (d_v + d_e) / (d_v (d_p + d_e))``.
    """
    if not d_p > 0 or math.isinf(d_p):
        raise DomainError(f"surface distance must be positive and finite, got {d_p}")
    if d_v == 0:
        raise DomainError("virtual image distance must be non-zero")
    if not d_v > 0:
        raise DomainError(f"virtual image distance must be positive, got {d_v}")
    if d_e < 0:
        raise DomainError(f"eye offset must be non-negative, got {d_e}")
    if math.isinf(d_v):
        return d_p / (d_p + d_e)
    return d_p * (d_v + d_e) / (d_v * (d_p + d_e))


def fov_scale(half_extent: float, scale: float, d_e: float, d_p: float) -> float:
    """Multiplier on a projector field of view that realizes a resize by ``scale``.

    ``half_extent`` is the half height covered at the surface. The result is
    ``atan(scale*h/(d_e+d_p)) / atan(h/(d_e+d_p))``.
    """
    if not half_extent > 0:
        raise DomainError(f"half extent must be positive, got {half_extent}")
    dist = d_e + d_p
    return math.atan(scale * half_extent / dist) / math.atan(half_extent / dist)
