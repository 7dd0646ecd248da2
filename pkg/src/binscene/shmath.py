"""Real spherical harmonics, direction geometry and per-degree taper gains.

Conventions used throughout the package:

* Channels follow ACN ordering: channel index ``n*(n+1) + m`` for degree
  ``n`` and index ``m`` in ``-n..n``.
* Normalization is SN3D without the Condon-Shortley phase (ambiX), so the
  zeroth channel is identically 1 and first-order channels are the
  direction cosines ``(sin az cos el, sin el, cos az cos el)`` on
  ACN 1..3.
* Azimuth is measured counterclockwise from +x in the horizontal plane,
  elevation positive upward, both in radians.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import lpmv

__all__ = [
    "SphericalDirection",
    "ShVector",
    "TaperWeights",
    "eval_real_sh",
    "sh_matrix",
    "rotate_to_head_frame",
    "rotation_matrix",
    "taper_weights",
    "sn3d_to_n3d_factors",
    "n_channels",
    "channel_degrees",
    "acn_index",
]


def n_channels(order):
    """Channel count of an order-`order` expansion."""
    return (order + 1) ** 2


def acn_index(n, m):
    """ACN channel index of degree `n`, index `m`."""
    if abs(m) > n:
        raise ValueError(f"|m| = {abs(m)} exceeds degree {n}")
    return n * (n + 1) + m


def channel_degrees(order):
    """Degree of each ACN channel, shape ((order+1)**2,)."""
    return np.repeat(np.arange(order + 1), 2 * np.arange(order + 1) + 1)


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = np.remainder(-a + np.pi, 2.0 * np.pi)
    out = -(wrapped - np.pi)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SphericalDirection:
    """A direction (and optional range) in spherical coordinates.

    azimuth and elevation are radians; radius is meters, 0 meaning far
    field. Azimuth is wrapped to (-pi, pi] on construction.
    """

    azimuth: float
    elevation: float
    radius: float = 0.0

    def __post_init__(self):
        if not -np.pi / 2 - 1e-12 <= self.elevation <= np.pi / 2 + 1e-12:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        object.__setattr__(self, "azimuth", wrap_angle(self.azimuth))

    @classmethod
    def from_degrees(cls, azimuth_deg, elevation_deg, radius=0.0):
        return cls(np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg), radius)

    @classmethod
    def from_unit_vector(cls, v, radius=0.0):
        v = np.asarray(v, dtype=float)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("zero vector has no direction")
        v = v / norm
        el = np.arcsin(np.clip(v[2], -1.0, 1.0))
        az = np.arctan2(v[1], v[0])
        return cls(az, el, radius)

    def unit_vector(self):
        """Cartesian unit vector (x forward, y left, z up)."""
        ce = np.cos(self.elevation)
        return np.array([np.cos(self.azimuth) * ce,
                         np.sin(self.azimuth) * ce,
                         np.sin(self.elevation)])


@dataclass(frozen=True)
class ShVector:
    """SH coefficients of one direction sample, ACN/SN3D."""

    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if coeffs.shape != (n_channels(self.order),):
            raise ValueError(
                f"expected {n_channels(self.order)} coefficients for order "
                f"{self.order}, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self):
        return len(self.coeffs)


@dataclass(frozen=True)
class TaperWeights:
    """Per-degree gains in [0, 1], non-increasing, gain[0] = 1."""

    order: int
    per_order_gain: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.per_order_gain, dtype=float)
        if g.shape != (self.order + 1,):
            raise ValueError("need one gain per degree 0..order")
        if abs(g[0] - 1.0) > 1e-12:
            raise ValueError("gain at degree 0 must be 1")
        if np.any(np.diff(g) > 1e-12) or np.any(g < 0) or np.any(g > 1 + 1e-12):
            raise ValueError("gains must be non-increasing and within [0, 1]")
        object.__setattr__(self, "per_order_gain", g)

    def channel_gains(self):
        """Gains expanded to ACN channels."""
        return self.per_order_gain[channel_degrees(self.order)]


def _legendre_no_cs(n, m, x):
    # scipy's lpmv includes the Condon-Shortley phase; strip it.
    return (-1.0) ** m * lpmv(m, n, x)


def sh_matrix(order, azimuths, elevations):
    """Real SH basis (SN3D/ACN) evaluated at many directions.

    Parameters
    ----------
    order : int
    azimuths, elevations : array_like, shape (Q,)
        Radians.

    Returns
    -------
    (Q, (order+1)**2) ndarray
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    az = np.atleast_1d(np.asarray(azimuths, dtype=float))
    el = np.atleast_1d(np.asarray(elevations, dtype=float))
    if az.shape != el.shape:
        raise ValueError("azimuth/elevation shape mismatch")
    x = np.sin(el)
    out = np.empty((len(az), n_channels(order)))
    for n in range(order + 1):
        for m in range(-n, n + 1):
            am = abs(m)
            # SN3D: sqrt((2 - delta_m0) (n-|m|)! / (n+|m|)!)
            norm = np.sqrt((2.0 if m != 0 else 1.0)
                           * _factorial_ratio(n - am, n + am))
            leg = _legendre_no_cs(n, am, x)
            if m >= 0:
                trig = np.cos(m * az)
            else:
                trig = np.sin(am * az)
            out[:, acn_index(n, m)] = norm * leg * trig
    return out


def _factorial_ratio(num, den):
    # (num)! / (den)! for den >= num, evaluated as a product of the
    # intermediate integers to avoid large factorials.
    val = 1.0
    for k in range(num + 1, den + 1):
        val /= k
    return val


def eval_real_sh(order, direction):
    """Evaluate all SN3D real SH of degree <= order at one direction."""
    row = sh_matrix(order, direction.azimuth, direction.elevation)[0]
    return ShVector(order, row)


def sn3d_to_n3d_factors(order):
    """Per-channel factors converting SN3D to N3D coefficients.

    N3D = SN3D * sqrt(2n + 1); the inverse conversion divides by the
    same factors. Both are exact, involutive round trips in float.
    """
    return np.sqrt(2.0 * channel_degrees(order) + 1.0)


def rotation_matrix(yaw, pitch):
    """World-from-head rotation: yaw about z, then pitch about the new y.

    Positive pitch tilts the head-frame +x axis upward.
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    # Rz(yaw) @ Ry(pitch), composed analytically.
    return np.array([[cy * cp, -sy, -cy * sp],
                     [sy * cp, cy, -sy * sp],
                     [sp, 0.0, cp]])


def rotate_to_head_frame(direction, yaw, pitch):
    """Re-express a world-frame direction in the rotated head frame.

    Applies the inverse of the head rotation (yaw about z, then pitch
    about the rotated y axis). Radius is preserved.
    """
    v = direction.unit_vector()
    v_head = rotation_matrix(yaw, pitch).T @ v
    return SphericalDirection.from_unit_vector(v_head, radius=direction.radius)


def taper_weights(order, profile="none", k_orders=None):
    """Per-degree taper gains.

    ``profile="none"`` returns all ones. ``profile="half_cosine"``
    applies a squared-cosine ramp over the top `k_orders` degrees:

        gain[n] = cos^2( (pi/2) * (n - (order - k)) / (k + 0.5) )

    for n > order - k, leaving lower degrees at 1. The half-sample
    offset in the denominator keeps the top degree at a small nonzero
    floor instead of hard-zeroing it.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if profile == "none":
        return TaperWeights(order, np.ones(order + 1))
    if profile != "half_cosine":
        raise ValueError(f"unknown taper profile {profile!r}")
    if k_orders is None:
        raise ValueError("half_cosine taper needs k_orders")
    if not 0 < k_orders <= order:
        raise ValueError(f"k_orders must be in 1..{order}")
    g = np.ones(order + 1)
    start = order - k_orders
    for n in range(start + 1, order + 1):
        g[n] = np.cos(0.5 * np.pi * (n - start) / (k_orders + 0.5)) ** 2
    return TaperWeights(order, g)
