"""Smooth cutoff profiles and the model parameter pack.

Two profile instances are used throughout: a scalar bump (plateau 1/2,
support 1) for the resonance cutoff and for radius cutoffs in function
space, and a radial profile (plateau 0.87 ~ sqrt(3)/2, support 1) for the
smooth frequency truncation, so that the unit cube sits inside the
plateau of the dilated profile.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ParameterError


def _g(t):
    """exp(-1/t) for t > 0, zero otherwise; the C-infinity transition kernel."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """Radial bump profile: 1 on [0, plateau], 0 on [support, inf), smooth between.

    profile(r) = g(r1 - r) / (g(r1 - r) + g(r - r0)), g(t) = exp(-1/t) (t > 0).
    """

    plateau: float
    support: float

    def __post_init__(self):
        if not (0 < self.plateau < self.support):
            raise ParameterError(f"need 0 < plateau < support, got {self.plateau}, {self.support}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.empty_like(r)
        lo = r <= self.plateau
        hi = r >= self.support
        mid = ~(lo | hi)
        out[lo] = 1.0
        out[hi] = 0.0
        if mid.any():
            a = _g(self.support - r[mid])
            b = _g(r[mid] - self.plateau)
            out[mid] = a / (a + b)
        return float(out[0]) if scalar else out

    def as_dict(self):
        return asdict(self)


# Scalar bump for resonance / radius cutoffs; applied to |x|.
SCALAR_PROFILE = CutoffProfile(plateau=0.5, support=1.0)

# Radial profile for the smooth frequency truncation S_N.
RADIAL_PROFILE = CutoffProfile(plateau=0.87, support=1.0)


def smooth_cutoff(r, profile: CutoffProfile = SCALAR_PROFILE):
    """Evaluate a cutoff profile at radius r >= 0."""
    return profile(r)


@dataclass(frozen=True)
class ModelParams:
    """Parameter pack (d, s, sigma, N, delta0, theta, R) with admissibility checks.

    Constraints enforced: 0 < delta0 < 2/3, 0 < theta < delta0/2,
    sigma < s - d/2, N >= 1, R > 0.
    """

    d: int = 1
    s: float = 10.0
    sigma: float = 8.4
    N: int = 4
    delta0: float = 0.6
    theta: float = 0.3
    R: float = 10.0
    radial_profile: CutoffProfile = RADIAL_PROFILE
    scalar_profile: CutoffProfile = SCALAR_PROFILE

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ParameterError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.s >= 1:
            raise ParameterError(f"need s >= 1, got {self.s}")
        if not (0 < self.delta0 < 2.0 / 3.0):
            raise ParameterError(f"need 0 < delta0 < 2/3, got {self.delta0}")
        # boundary admitted: the default pack sits exactly at theta = delta0/2
        if not (0 < self.theta <= self.delta0 / 2):
            raise ParameterError(f"need 0 < theta <= delta0/2, got theta={self.theta}, delta0={self.delta0}")
        if not self.sigma < self.s - self.d / 2:
            raise ParameterError(f"need sigma < s - d/2, got sigma={self.sigma}, s={self.s}, d={self.d}")
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ParameterError(f"truncation level N must be a positive integer, got {self.N!r}")
        if not self.R > 0:
            raise ParameterError(f"need R > 0, got {self.R}")

    def chi_n(self, knorm):
        """Smooth truncation symbol chi_N at |k| = knorm (vectorized)."""
        return self.radial_profile(np.asarray(knorm, dtype=float) / self.N)

    def resonance_chi(self, x):
        """Scalar resonance bump chi(x) evaluated at |x|."""
        return self.scalar_profile(np.abs(x))

    def replace(self, **kw) -> "ModelParams":
        d = self.as_dict()
        d.update(kw)
        return ModelParams(
            d=d["d"], s=d["s"], sigma=d["sigma"], N=d["N"],
            delta0=d["delta0"], theta=d["theta"], R=d["R"],
            radial_profile=self.radial_profile, scalar_profile=self.scalar_profile,
        )

    def as_dict(self):
        return {
            "d": self.d, "s": self.s, "sigma": self.sigma, "N": self.N,
            "delta0": self.delta0, "theta": self.theta, "R": self.R,
            "radial_profile": self.radial_profile.as_dict(),
            "scalar_profile": self.scalar_profile.as_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        kw = dict(d)
        rp = kw.pop("radial_profile", None)
        sp = kw.pop("scalar_profile", None)
        if rp is not None:
            kw["radial_profile"] = CutoffProfile(**rp)
        if sp is not None:
            kw["scalar_profile"] = CutoffProfile(**sp)
        kw["N"] = int(kw["N"])
        kw["d"] = int(kw["d"])
        return cls(**kw)
