"""Lattice geometry, spectral states, cutoffs, norms and grid transforms.

A spectral field stores complex Fourier amplitudes on the integer lattice
ball {k : |k| <= cutoff} of Z^d, in lexicographic mode order, for the
convention u(x) = sum_k u_k exp(i k.x) on the 2*pi-periodic torus.
All integrals carry the (2*pi)^d volume factor explicitly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import next_fast_len

from .errors import ParameterError
from .params import CutoffProfile, RADIAL_PROFILE, ModelParams

MAGIC = b"SPF1"


@lru_cache(maxsize=None)
def get_modeset(dim: int, cutoff: int) -> "ModeSet":
    return ModeSet(dim, cutoff)


class ModeSet:
    """Precomputed lattice ball: modes, |k|^2, and index lookup.

    Modes are ordered lexicographically over the cube [-cutoff, cutoff]^d
    (row-major), keeping |k| <= cutoff. The order is the canonical storage
    order for SpectralField coefficients.
    """

    def __init__(self, dim: int, cutoff: int):
        if dim not in (1, 2, 3):
            raise ParameterError(f"dimension must be 1, 2 or 3, got {dim}")
        if cutoff < 0:
            raise ParameterError(f"cutoff must be >= 0, got {cutoff}")
        self.dim = dim
        self.cutoff = int(cutoff)
        r = np.arange(-self.cutoff, self.cutoff + 1, dtype=np.int64)
        grids = np.meshgrid(*([r] * dim), indexing="ij")
        cube = np.stack([g.ravel() for g in grids], axis=1)  # lexicographic
        ksq = np.sum(cube * cube, axis=1)
        keep = ksq <= self.cutoff**2
        self.modes = np.ascontiguousarray(cube[keep])          # (n, d)
        self.ksq = np.ascontiguousarray(ksq[keep])             # (n,)
        self.knorm = np.sqrt(self.ksq.astype(float))
        self.n = self.modes.shape[0]
        # dense lookup over the cube; -1 marks modes outside the ball
        side = 2 * self.cutoff + 1
        lut = np.full((side,) * dim, -1, dtype=np.int64)
        lut[tuple((self.modes + self.cutoff).T)] = np.arange(self.n)
        self._lut = lut
        self._side = side

    def index_of(self, mode) -> int:
        """Index of a mode tuple; raises KeyError outside the ball."""
        mode = np.asarray(mode, dtype=np.int64).reshape(self.dim)
        if np.any(np.abs(mode) > self.cutoff):
            raise KeyError(tuple(mode))
        idx = int(self._lut[tuple(mode + self.cutoff)])
        if idx < 0:
            raise KeyError(tuple(mode))
        return idx

    def lookup(self, modes: np.ndarray) -> np.ndarray:
        """Vectorized index lookup, -1 for modes outside the ball. modes: (..., d)."""
        modes = np.asarray(modes, dtype=np.int64)
        shifted = modes + self.cutoff
        inside = np.all((shifted >= 0) & (shifted < self._side), axis=-1)
        out = np.full(modes.shape[:-1], -1, dtype=np.int64)
        if inside.any():
            sel = shifted[inside]
            out[inside] = self._lut[tuple(sel.reshape(-1, self.dim).T)].reshape(sel.shape[:-1])
        return out

    def grid_scatter_index(self, M: int):
        """Fancy index placing ball coefficients into an M^d FFT cube (wraparound)."""
        if M < 2 * self.cutoff + 1:
            raise ParameterError(f"grid size {M} too small for cutoff {self.cutoff} (aliasing)")
        return tuple((self.modes % M).T)


def modes_within(N: float, d: int) -> np.ndarray:
    """All lattice points with |k| <= N in lexicographic order, shape (n, d)."""
    if d not in (1, 2, 3):
        raise ParameterError(f"dimension must be 1, 2 or 3, got {d}")
    if N < 0:
        raise ParameterError(f"N must be >= 0, got {N}")
    ms = get_modeset(d, int(np.ceil(N)))
    keep = ms.ksq <= N * N
    return ms.modes[keep].copy()


@dataclass
class SpectralField:
    """Complex Fourier coefficients on {|k| <= cutoff}, ModeSet storage order."""

    dim: int
    cutoff: int
    coeffs: np.ndarray

    def __post_init__(self):
        ms = self.modeset
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != (ms.n,):
            raise ParameterError(f"expected {ms.n} coefficients for dim={self.dim}, cutoff={self.cutoff}, "
                                 f"got shape {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs.view(float))):
            raise ParameterError("non-finite coefficient in spectral field")

    @property
    def modeset(self) -> ModeSet:
        return get_modeset(self.dim, self.cutoff)

    @classmethod
    def zeros(cls, dim: int, cutoff: int) -> "SpectralField":
        return cls(dim, cutoff, np.zeros(get_modeset(dim, cutoff).n, dtype=np.complex128))

    @classmethod
    def single_mode(cls, dim: int, cutoff: int, mode, amplitude) -> "SpectralField":
        u = cls.zeros(dim, cutoff)
        u.coeffs[u.modeset.index_of(mode)] = amplitude
        return u

    def copy(self) -> "SpectralField":
        return SpectralField(self.dim, self.cutoff, self.coeffs.copy())

    def get(self, mode) -> complex:
        """Amplitude at a mode; zero outside the stored ball."""
        try:
            return complex(self.coeffs[self.modeset.index_of(mode)])
        except KeyError:
            return 0.0 + 0.0j

    def restricted(self, cutoff: int) -> "SpectralField":
        """Copy stored on the (possibly different) ball of the given cutoff."""
        tgt = get_modeset(self.dim, int(cutoff))
        out = np.zeros(tgt.n, dtype=np.complex128)
        idx = self.modeset.lookup(tgt.modes)
        inside = idx >= 0
        out[inside] = self.coeffs[idx[inside]]
        return SpectralField(self.dim, int(cutoff), out)


# ---------------------------------------------------------------------------
# cutoff operators

def apply_smooth_truncation(u: SpectralField, N: int,
                            profile: CutoffProfile = RADIAL_PROFILE) -> SpectralField:
    """S_N u: multiply each amplitude by the radial symbol chi(|k|/N)."""
    sym = profile(u.modeset.knorm / N)
    return SpectralField(u.dim, u.cutoff, u.coeffs * sym)


def apply_sharp_truncation(u: SpectralField, N: float) -> SpectralField:
    """Pi_N u: zero all amplitudes with |k| > N."""
    mask = u.modeset.ksq <= N * N
    return SpectralField(u.dim, u.cutoff, np.where(mask, u.coeffs, 0.0))


# ---------------------------------------------------------------------------
# norms and conserved quantities

def sobolev_norm_sq(u: SpectralField, sigma: float) -> float:
    """Sum of (1+|k|^2)^sigma |u_k|^2 over stored modes."""
    w = (1.0 + u.modeset.ksq.astype(float)) ** sigma
    return float(np.dot(w, np.abs(u.coeffs) ** 2))


def triple_norm_sq(u: SpectralField, s: float) -> float:
    """Sum of (1+|k|^{2s}) |u_k|^2 over stored modes."""
    w = 1.0 + u.modeset.ksq.astype(float) ** s
    return float(np.dot(w, np.abs(u.coeffs) ** 2))


def mass(u: SpectralField) -> float:
    """integral |u|^2 = (2 pi)^d sum |u_k|^2."""
    return (2 * np.pi) ** u.dim * float(np.sum(np.abs(u.coeffs) ** 2))


def _sextic_integral(u: SpectralField, M: int | None = None) -> float:
    """integral |u|^6 by exact dealiased quadrature (M >= 6*cutoff + 1)."""
    if M is None:
        M = dealias_size(u.cutoff)
    g = to_grid(u, M)
    return (2 * np.pi / M) ** u.dim * float(np.sum(np.abs(g) ** 6))


def hamiltonian(u: SpectralField) -> float:
    """H[u] = 1/2 int |grad u|^2 + 1/6 int |u|^6."""
    grad = (2 * np.pi) ** u.dim * float(np.dot(u.modeset.ksq.astype(float), np.abs(u.coeffs) ** 2))
    return 0.5 * grad + _sextic_integral(u) / 6.0


def truncated_hamiltonian(u: SpectralField, N: int,
                          profile: CutoffProfile = RADIAL_PROFILE) -> float:
    """H_N[u] = 1/2 int |grad u|^2 + 1/6 int |S_N u|^6; conserved by the truncated flow."""
    grad = (2 * np.pi) ** u.dim * float(np.dot(u.modeset.ksq.astype(float), np.abs(u.coeffs) ** 2))
    return 0.5 * grad + _sextic_integral(apply_smooth_truncation(u, N, profile)) / 6.0


# ---------------------------------------------------------------------------
# grid transforms

def dealias_size(N: int) -> int:
    """Smallest convenient FFT size >= 6N+1 (exact for quintic products of band N)."""
    return next_fast_len(6 * int(N) + 1)


def to_grid(u: SpectralField, M: int) -> np.ndarray:
    """Collocation values on the M^d grid x_j = 2 pi j / M. Requires M >= 2*cutoff+1."""
    if M < 2 * u.cutoff + 1:
        raise ParameterError(f"grid size {M} too small for cutoff {u.cutoff} (aliasing)")
    cube = np.zeros((M,) * u.dim, dtype=np.complex128)
    cube[u.modeset.grid_scatter_index(M)] = u.coeffs
    return np.fft.ifftn(cube) * M**u.dim


def from_grid(grid: np.ndarray) -> SpectralField:
    """Inverse of to_grid; returns the field on the largest ball the grid resolves."""
    d = grid.ndim
    M = grid.shape[0]
    if any(sz != M for sz in grid.shape):
        raise ParameterError(f"grid must be square, got shape {grid.shape}")
    cutoff = (M - 1) // 2
    cube = np.fft.fftn(grid) / M**d
    ms = get_modeset(d, cutoff)
    return SpectralField(d, cutoff, np.ascontiguousarray(cube[ms.grid_scatter_index(M)]))


def quintic_nonlinearity(u: SpectralField, N: int,
                         profile: CutoffProfile = RADIAL_PROFILE) -> SpectralField:
    """Exact Fourier coefficients of S_N(|S_N u|^4 S_N u) on {|k| <= N}.

    Computed pseudospectrally on an alias-free grid (>= 6N+1 points per
    axis); agrees with the direct 5-fold convolution sum.
    """
    w = apply_smooth_truncation(u.restricted(int(N)), N, profile)
    M = dealias_size(N)
    g = to_grid(w, M)
    out = from_grid(np.abs(g) ** 4 * g).restricted(int(N))
    return apply_smooth_truncation(out, N, profile)


def weighted_field(u: SpectralField, params: ModelParams) -> SpectralField:
    """w with w_k = chi_N(k) u_k, stored on {|k| <= N}; the normal-form variable."""
    w = u.restricted(params.N)
    sym = params.chi_n(w.modeset.knorm)
    return SpectralField(w.dim, w.cutoff, w.coeffs * sym)


# ---------------------------------------------------------------------------
# serialization

def field_to_json(u: SpectralField) -> str:
    payload = {
        "dim": u.dim,
        "cutoff": u.cutoff,
        "modes": [[[*map(int, m)], float(c.real), float(c.imag)]
                  for m, c in zip(u.modeset.modes, u.coeffs)],
    }
    return json.dumps(payload)


def field_from_json(text: str) -> SpectralField:
    payload = json.loads(text)
    u = SpectralField.zeros(int(payload["dim"]), int(payload["cutoff"]))
    ms = u.modeset
    for mode, re, im in payload["modes"]:
        u.coeffs[ms.index_of(mode)] = complex(re, im)
    return u


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("k", "<i4", (dim,)), ("re", "<f8"), ("im", "<f8")])


def field_to_bytes(u: SpectralField) -> bytes:
    """Compact binary form: magic 'SPF1', little-endian u32 dim, u32 cutoff,
    u64 count, then per mode i32 x d and f64 x 2."""
    ms = u.modeset
    head = MAGIC + struct.pack("<IIQ", u.dim, u.cutoff, ms.n)
    rec = np.empty(ms.n, dtype=_record_dtype(u.dim))
    rec["k"] = ms.modes
    rec["re"] = u.coeffs.real
    rec["im"] = u.coeffs.imag
    return head + rec.tobytes()


def field_from_bytes(data: bytes) -> SpectralField:
    if data[:4] != MAGIC:
        raise ParameterError("bad magic in spectral field blob")
    dim, cutoff, count = struct.unpack_from("<IIQ", data, 4)
    u = SpectralField.zeros(dim, cutoff)
    if count != u.modeset.n:
        raise ParameterError(f"mode count mismatch: {count} != {u.modeset.n}")
    rec = np.frombuffer(data, dtype=_record_dtype(dim), count=count, offset=20)
    idx = u.modeset.lookup(rec["k"].astype(np.int64))
    if np.any(idx < 0):
        raise ParameterError("mode outside stored ball in spectral field blob")
    u.coeffs[idx] = rec["re"] + 1j * rec["im"]
    return u


def save_field(u: SpectralField, path):
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(u))


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())
