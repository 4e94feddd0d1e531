"""Lens systems, the pixelated SLM and polarization-interference probabilities.

Conventions
-----------
* Each SLM half is ``shape_px = (rows, cols)``; rows run along the vertical
  axis ``x`` and columns along the horizontal axis ``y``.
* Normalized SLM coordinates are ``x_hat = x_slm / (half_width_px * pitch)``
  on both axes, so rows span ``[-1, 1]`` exactly.
* A photon whose polarization is measured in the +/- basis after the SLM
  imprints phase ``a`` on H only has ``P(+) = (1 + cos a) / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProbabilityOutOfRange

TWO_PI = 2 * math.pi

# outcome order used by every count table: (++, +-, -+, --)
OUTCOMES = ("++", "+-", "-+", "--")
SIGNS = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])


def _snap_cos(c):
    c = np.asarray(c, dtype=float)
    return np.where(np.abs(c) < 1e-15, 0.0, c)


@dataclass(frozen=True)
class LensSystem:
    """Relay between the crystal plane and the SLM.

    ``imaging``: ``x_slm = magnification * x_crystal``.
    ``fourier``: ``p_crystal = momentum_factor * x_slm`` (1/mm per mm).
    """

    kind: str = "imaging"
    magnification: float = 1.0
    momentum_factor: float | None = None
    wavelength_nm: float = 650.0

    def __post_init__(self):
        if self.kind not in ("imaging", "fourier"):
            raise ValueError(f"unknown lens kind {self.kind!r}")
        if self.kind == "imaging" and self.magnification == 0:
            raise ValueError("magnification must be non-zero")
        if self.kind == "fourier" and not (self.momentum_factor and self.momentum_factor > 0):
            raise ValueError("fourier lens needs a positive momentum_factor")

    @classmethod
    def imaging(cls, magnification, wavelength_nm=650.0):
        return cls("imaging", float(magnification), None, wavelength_nm)

    @classmethod
    def imaging_chain(cls, focal_lengths, wavelength_nm=650.0):
        """Confocal telescopes (f1, f2), (f3, f4), ...: magnification prod f_even / f_odd."""
        f = [float(v) for v in focal_lengths]
        if len(f) % 2:
            raise ValueError("imaging chain needs pairs of focal lengths")
        m = 1.0
        for a, b in zip(f[::2], f[1::2]):
            m *= b / a
        return cls.imaging(m, wavelength_nm)

    @classmethod
    def fourier(cls, focal_length_mm=500.0, wavelength_nm=650.0):
        k = TWO_PI / (wavelength_nm * 1e-6)
        return cls("fourier", 1.0, k / float(focal_length_mm), wavelength_nm)

    @classmethod
    def fourier_chain(cls, focal_lengths, wavelength_nm=650.0):
        """Five-lens transform: p = k f2 f4 / (f1 f3 f5) x_slm (focal lengths in mm)."""
        f1, f2, f3, f4, f5 = (float(v) for v in focal_lengths)
        k = TWO_PI / (wavelength_nm * 1e-6)
        return cls("fourier", 1.0, k * f2 * f4 / (f1 * f3 * f5), wavelength_nm)

    @property
    def plane(self):
        return "near" if self.kind == "imaging" else "far"

    @property
    def crystal_per_slm(self):
        """Crystal-plane units per SLM millimetre."""
        if self.kind == "imaging":
            return 1.0 / self.magnification
        return self.momentum_factor

    def to_slm(self, value):
        return np.asarray(value) / self.crystal_per_slm

    def to_crystal(self, value):
        return np.asarray(value) * self.crystal_per_slm

    def to_dict(self):
        return asdict(self)


def map_coordinate(lens, value):
    """Crystal-plane coordinate (mm or 1/mm) to SLM-plane position in mm."""
    return lens.to_slm(value)


def unmap_coordinate(lens, value):
    return lens.to_crystal(value)


@dataclass(frozen=True)
class SlmPanel:
    pixel_pitch: float = 0.008
    half_width_px: int = 540
    phase_levels: int = 256
    shape_px: tuple = (1080, 960)
    halves: int = 2

    def __post_init__(self):
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if self.half_width_px < 1:
            raise ValueError("half_width_px must be >= 1")
        if self.phase_levels < 2:
            raise ValueError("phase_levels must be >= 2")
        object.__setattr__(self, "shape_px", tuple(int(s) for s in self.shape_px))

    @property
    def half_width_mm(self):
        return self.half_width_px * self.pixel_pitch

    @property
    def extent(self):
        """Normalized half-extent of the panel along (x, y)."""
        rows, cols = self.shape_px
        return rows / (2 * self.half_width_px), cols / (2 * self.half_width_px)

    def edges(self, axis):
        n = self.shape_px[axis]
        return (np.arange(n + 1) - n / 2) / self.half_width_px

    def centers(self, axis):
        n = self.shape_px[axis]
        return (np.arange(n) + 0.5 - n / 2) / self.half_width_px

    def to_dict(self):
        d = asdict(self)
        d["shape_px"] = list(self.shape_px)
        return d


@dataclass(frozen=True, eq=False)
class PhaseMask:
    """Phase pattern on one SLM half plus the recipe that produced it."""

    panel: SlmPanel
    phase: np.ndarray
    exponents: tuple | None = None
    constant: float | None = None
    quantized: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def descriptor(self):
        if self.exponents is not None:
            return {"exponents": list(self.exponents)}
        return {"constant": self.constant}

    @property
    def key(self):
        if self.exponents is not None:
            return ("m", *self.exponents, self.quantized)
        return ("c", round(self.constant, 15), self.quantized)

    @property
    def axes_used(self):
        if self.exponents is None:
            return (False, False)
        n, m = self.exponents
        return (n > 0, m > 0)

    @property
    def levels(self):
        if "levels" not in self._cache:
            lv = np.rint(self.phase / TWO_PI * self.panel.phase_levels).astype(np.int64)
            self._cache["levels"] = (lv % self.panel.phase_levels).astype(np.uint16)
        return self._cache["levels"]

    def cos_map(self):
        if "cos" not in self._cache:
            if self.quantized:
                table = _snap_cos(np.cos(TWO_PI * np.arange(self.panel.phase_levels) / self.panel.phase_levels))
                self._cache["cos"] = np.ascontiguousarray(table[self.levels])
            else:
                self._cache["cos"] = np.ascontiguousarray(_snap_cos(np.cos(self.phase)))
        return self._cache["cos"]

    def profile(self, axis):
        """cos(phase) along one axis, for masks constant along the other axis."""
        c = self.cos_map()
        return c[:, 0].copy() if axis == 0 else c[0, :].copy()

    def response(self, xhat, yhat):
        """Continuous cos(phase) as a function of normalized coordinates (unquantized recipe)."""
        if self.exponents is None:
            return np.broadcast_to(_snap_cos(math.cos(self.constant)), np.broadcast(xhat, yhat).shape)
        n, m = self.exponents
        return np.clip(np.power(xhat, n) * np.power(yhat, m), -1.0, 1.0)

    def write(self, path):
        """Export as binary PGM (one byte per pixel = phase level) plus JSON sidecar."""
        path = Path(path)
        if self.panel.phase_levels > 256:
            raise ValueError("PGM export supports at most 256 phase levels")
        rows, cols = self.phase.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            fh.write(self.levels.astype(np.uint8).tobytes())
        sidecar = {
            "descriptor": self.descriptor,
            "quantized": self.quantized,
            "panel": self.panel.to_dict(),
            "level_to_phase": f"2*pi*level/{self.panel.phase_levels}",
            "rows_axis": "x (vertical)",
            "cols_axis": "y (horizontal)",
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
        return path


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    cols, rows = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8, count=rows * cols)
    return pixels.reshape(rows, cols)


def _quantize(phase, levels):
    lv = np.rint(phase / TWO_PI * levels).astype(np.int64) % levels
    return TWO_PI * lv / levels


def synthesize_mask(panel, n, m=0, quantize=True):
    """Phase arccos(x_hat^n y_hat^m) at pixel centres, argument clamped to [-1, 1]."""
    if n < 0 or m < 0:
        raise ValueError("exponents must be non-negative")
    xh = panel.centers(0)[:, None]
    yh = panel.centers(1)[None, :]
    arg = np.clip(np.power(xh, n) * np.power(yh, m), -1.0, 1.0)
    phase = np.arccos(arg)
    if quantize:
        phase = _quantize(phase, panel.phase_levels)
    phase = np.where(phase >= TWO_PI, 0.0, phase)
    return PhaseMask(panel, np.ascontiguousarray(phase), (int(n), int(m)), None, bool(quantize))


def synthesize_constant(panel, c, quantize=True):
    if not 0.0 <= c < TWO_PI:
        raise ValueError("constant phase must lie in [0, 2pi)")
    value = _quantize(np.float64(c), panel.phase_levels) if quantize else float(c)
    phase = np.full(panel.shape_px, float(value))
    return PhaseMask(panel, phase, None, float(c), bool(quantize))


@dataclass(frozen=True)
class NoiseModel:
    """Affine response per photon: <s> = alpha + beta cos(a), plus uniform accidentals."""

    alpha: tuple = (0.0, 0.0)
    beta: tuple = (1.0, 1.0)
    accidental_rate: float = 0.0
    poisson: bool = False

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.broadcast_to(self.alpha, 2))
        beta = tuple(float(b) for b in np.broadcast_to(self.beta, 2))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        for a, b in zip(alpha, beta):
            if not 0.0 <= b <= 1.0 or abs(a) + b > 1.0 + 1e-12:
                raise ProbabilityOutOfRange(f"need beta in [0,1] and |alpha|+beta <= 1, got alpha={a}, beta={b}")
        if not 0.0 <= self.accidental_rate <= 1.0:
            raise ProbabilityOutOfRange("accidental_rate must lie in [0, 1]")

    @classmethod
    def ideal(cls):
        return cls()

    @property
    def is_ideal(self):
        return self.alpha == (0.0, 0.0) and self.beta == (1.0, 1.0) and self.accidental_rate == 0.0

    def to_dict(self):
        return {
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "accidental_rate": self.accidental_rate,
            "poisson": self.poisson,
        }


def probabilities_from_cos(cos_a, cos_b, noise):
    """Joint outcome probabilities, last axis ordered (++, +-, -+, --)."""
    u1 = noise.alpha[0] + noise.beta[0] * np.asarray(cos_a, dtype=float)
    u2 = noise.alpha[1] + noise.beta[1] * np.asarray(cos_b, dtype=float)
    u1, u2 = np.broadcast_arrays(u1, u2)
    r = noise.accidental_rate
    out = np.empty(u1.shape + (4,))
    for k, (s1, s2) in enumerate(SIGNS):
        out[..., k] = (1.0 - r) * (1.0 + s1 * u1) * (1.0 + s2 * u2) / 4.0 + r / 4.0
    return out


def outcome_probabilities(phase_a, phase_b, noise=None):
    """(P++, P+-, P-+, P--) for SLM phases a (photon 1) and b (photon 2)."""
    noise = NoiseModel.ideal() if noise is None else noise
    for ph in (phase_a, phase_b):
        ph = np.asarray(ph)
        if np.any(ph < 0) or np.any(ph > TWO_PI):
            raise ValueError("phases must lie in [0, 2pi)")
    return probabilities_from_cos(_snap_cos(np.cos(phase_a)), _snap_cos(np.cos(phase_b)), noise)


def single_outcome_probabilities(phase, alpha=0.0, beta=1.0, accidental_rate=0.0):
    """(P+, P-) for one photon."""
    u = alpha + beta * _snap_cos(np.cos(phase))
    p_plus = (1.0 - accidental_rate) * (1.0 + u) / 2.0 + accidental_rate / 2.0
    return np.stack([p_plus, 1.0 - p_plus], axis=-1)
