"""Photon-counting simulation: direct SLM runs, slit scans and exact probabilities."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from . import _rng, kernels
from .errors import DimensionMismatch, GridTooNarrow, OrderTooHigh, QuadratureNotConverged
from .gstate import INDEX, MAX_ORDER, covariance_factor, gaussian_moment_nd, plane_angle
from .optics import OUTCOMES, SIGNS, NoiseModel

log = logging.getLogger(__name__)

CLIP_WARN = 1e-6
ORACLE_CLIP = 1e-12
_TAIL = 12.0


def settings_hash(settings):
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def outcome_labels(d):
    if d == 2:
        return list(OUTCOMES)
    return [format(r, f"0{d}b") for r in range(2**d)]


@dataclass
class CountTable:
    """Counts per outcome R (photon/qubit 1 is the most significant bit, '+' = 0).

    ``probabilities`` is set instead of ``counts`` for analytic
    (infinite-statistics) tables.
    """

    counts: np.ndarray | None
    d: int = 2
    seed: int | None = None
    settings: dict = field(default_factory=dict)
    clipped_fraction: float = 0.0
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        n = 2**self.d
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n,) or np.any(self.counts < 0):
                raise DimensionMismatch(f"expected {n} non-negative counts")
        elif self.probabilities is not None:
            self.probabilities = np.asarray(self.probabilities, dtype=float)
            if self.probabilities.shape != (n,):
                raise DimensionMismatch(f"expected {n} probabilities")
        else:
            raise ValueError("need counts or probabilities")

    @classmethod
    def analytic(cls, probabilities, d=None, settings=None, clipped_fraction=0.0):
        p = np.asarray(probabilities, dtype=float)
        d = int(round(math.log2(p.size))) if d is None else d
        return cls(None, d, None, dict(settings or {}), clipped_fraction, p)

    @property
    def is_analytic(self):
        return self.counts is None

    @property
    def total(self):
        return math.inf if self.counts is None else int(self.counts.sum())

    @property
    def q(self):
        if self.counts is None:
            return self.probabilities
        t = self.total
        return self.counts / t if t else np.zeros_like(self.counts, dtype=float)

    @property
    def settings_hash(self):
        return settings_hash(self.settings)

    def marginal(self, photon):
        """Single-photon table (D+, D-) obtained by summing over the other photon."""
        if self.d != 2:
            raise DimensionMismatch("marginal() needs a two-photon table")
        src = self.probabilities if self.counts is None else self.counts
        src = src.reshape(2, 2)
        out = src.sum(axis=1 - photon)
        if self.counts is None:
            return CountTable.analytic(out, 1, self.settings, self.clipped_fraction)
        return CountTable(out, 1, self.seed, self.settings, self.clipped_fraction)

    def to_dict(self):
        return {
            "d": self.d,
            "outcomes": outcome_labels(self.d),
            "counts": None if self.counts is None else self.counts.tolist(),
            "probabilities": None if self.probabilities is None else self.probabilities.tolist(),
            "total": None if self.counts is None else self.total,
            "clipped_fraction": self.clipped_fraction,
            "seed": self.seed,
            "settings": self.settings,
            "settings_hash": self.settings_hash,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        return cls(
            data.get("counts"),
            int(data["d"]),
            data.get("seed"),
            data.get("settings") or {},
            float(data.get("clipped_fraction", 0.0)),
            data.get("probabilities"),
        )

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outcome", "counts", "total", "seed", "settings_hash"])
        values = self.counts if self.counts is not None else self.probabilities
        total = "inf" if self.counts is None else self.total
        for label, c in zip(outcome_labels(self.d), values):
            w.writerow([label, c if self.counts is not None else repr(float(c)), total, self.seed, self.settings_hash])
        return buf.getvalue()


def merge_tables(tables):
    """Sum count tables taken with identical settings (order independent)."""
    tables = list(tables)
    first = tables[0]
    for t in tables[1:]:
        if t.d != first.d or t.settings_hash != first.settings_hash:
            raise DimensionMismatch("can only merge tables with identical settings")
    counts = sum(t.counts for t in tables)
    total = int(counts.sum())
    clipped = sum(t.clipped_fraction * t.total for t in tables) / total if total else 0.0
    return CountTable(counts, first.d, first.seed, first.settings, clipped)


@dataclass
class ScanHistogram:
    mode: str
    variable: str
    positions: np.ndarray
    counts: np.ndarray
    slit_width: float
    T_budget: float
    seed: int | None = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.slit_width > 0:
            raise ValueError("slit_width must be positive")
        step = np.diff(self.positions)
        if step.size and not np.allclose(step, step[0], rtol=1e-9, atol=0):
            raise ValueError("scan grid must be uniform")

    @property
    def T_total(self):
        return int(self.counts.sum())

    @property
    def settings_hash(self):
        return settings_hash(self.settings)

    def to_dict(self):
        return {
            "mode": self.mode,
            "variable": self.variable,
            "positions": self.positions.tolist(),
            "counts": self.counts.tolist(),
            "slit_width": self.slit_width,
            "T_budget": self.T_budget,
            "T_total": self.T_total,
            "seed": self.seed,
            "settings": self.settings,
            "settings_hash": self.settings_hash,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        return cls(data["mode"], data["variable"], data["positions"], data["counts"], data["slit_width"],
                   data["T_budget"], data.get("seed"), data.get("settings") or {})

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "counts", "total", "seed", "settings_hash"])
        for x, c in zip(self.positions, self.counts):
            w.writerow([repr(float(x)), int(c), self.T_total, self.seed, self.settings_hash])
        return buf.getvalue()


# ---------------------------------------------------------------- geometry


def slm_gaussian(state, lenses, panel):
    """Mean and covariance of (x1, y1, x2, y2) in normalized SLM coordinates."""
    mean, cov = state.plane_marginal((lenses[0].plane, lenses[1].plane))
    scale = np.array([1.0 / (lens.crystal_per_slm * panel.half_width_mm) for lens in (lenses[0], lenses[0], lenses[1], lenses[1])])
    return mean * scale, cov * np.outer(scale, scale)


def _tail_mass(mu, s, lo, hi):
    if s == 0:
        return float(mu < lo or mu > hi)
    return float(ndtr((lo - mu) / s) + ndtr((mu - hi) / s))


def clipped_mass(mean, cov, masks, bounds):
    """Upper bound on the probability that a used coordinate leaves ``bounds``."""
    total = 0.0
    for photon, mask in enumerate(masks):
        for axis, used in enumerate(mask.axes_used):
            if used:
                i = 2 * photon + axis
                b = bounds[axis]
                total += _tail_mass(mean[i], math.sqrt(max(cov[i, i], 0.0)), -b, b)
    return min(total, 1.0)


# ------------------------------------------------------ exact expectations


class _Func1D:
    """cos(phase) of one photon as a function of a single normalized coordinate."""

    def __init__(self, kind, coord=None, value=None, edges=None, values=None, power=None):
        self.kind = kind
        self.coord = coord
        self.value = value
        self.edges = edges
        self.values = values
        self.power = power

    def __call__(self, u):
        if self.kind == "const":
            return np.full(np.shape(u), self.value)
        if self.kind == "step":
            return self.values[np.searchsorted(self.edges, u, side="right")]
        return np.clip(np.power(u, self.power), -1.0, 1.0)

    def breakpoints(self):
        if self.kind == "step":
            return self.edges[np.diff(self.values) != 0]
        if self.kind == "smooth":
            return np.array([-1.0, 1.0])
        return np.array([])


def _photon_function(mask, photon):
    n, m = mask.exponents if mask.exponents is not None else (0, 0)
    if mask.exponents is None or (n == 0 and m == 0):
        return _Func1D("const", value=float(mask.cos_map()[0, 0]))
    if n and m:
        return None
    axis = 0 if n else 1
    coord = 2 * photon + axis
    if mask.quantized:
        edges = mask.panel.edges(axis)[1:-1]
        return _Func1D("step", coord, edges=edges, values=mask.profile(axis))
    return _Func1D("smooth", coord, power=n or m)


def _gl_integrate(fun, breaks, lo, hi, order):
    pts = np.unique(np.concatenate([[lo, hi], breaks[(breaks > lo) & (breaks < hi)]]))
    x, w = leggauss(order)
    a, b = pts[:-1, None], pts[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return float(np.dot(weights, fun(nodes)))


def _adaptive(compute, tol, what):
    prev = None
    for order in (4, 8, 16, 32, 64):
        val = compute(order)
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
    raise QuadratureNotConverged(f"{what}: no convergence to {tol:g}")


def _expect_1d(f, mu, s, tol):
    if f.kind == "const":
        return f.value
    if s == 0:
        return float(f(np.array([mu]))[0])
    if f.kind == "step":
        cdf = ndtr((f.edges - mu) / s)
        probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
        return float(np.dot(probs, f.values))
    return float(_clamped_power(f.power, np.array([mu]), s)[0])


def _conditional(g, m, tau, tol):
    """E[g(Y)] for Y ~ N(m, tau^2), vectorized over m."""
    if tau <= 0:
        return g(m)
    if g.kind == "step":
        jumps = np.diff(g.values)
        keep = jumps != 0
        e, dv = g.edges[keep], jumps[keep]
        out = np.full(m.shape, g.values[0], dtype=float)
        for start in range(0, e.size, 256):
            sl = slice(start, start + 256)
            out += ndtr((m[:, None] - e[None, sl]) / tau) @ dv[sl]
        return out
    return _clamped_power(g.power, m, tau)


def _clamped_power(n, m, tau):
    """E[clip(Y^n, -1, 1)] for Y ~ N(m, tau^2), vectorized over m.

    Uses truncated standard-normal moments on [-1, 1] plus the two tails.
    """
    m = np.asarray(m, dtype=float)
    a, b = (-1.0 - m) / tau, (1.0 - m) / tau
    pdf_a = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    pdf_b = np.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    trunc = [ndtr(b) - ndtr(a), pdf_a - pdf_b]
    for k in range(2, n + 1):
        trunc.append((k - 1) * trunc[k - 2] + a ** (k - 1) * pdf_a - b ** (k - 1) * pdf_b)
    inside = sum(math.comb(n, k) * m ** (n - k) * tau**k * trunc[k] for k in range(n + 1))
    return inside + ndtr(-b) + (-1) ** n * ndtr(a)


def _expect_2d(f, g, mean, cov, tol):
    i, j = f.coord, g.coord
    mu_x, mu_y = mean[i], mean[j]
    sx2, sy2, c = cov[i, i], cov[j, j], cov[i, j]
    sx, sy = math.sqrt(max(sx2, 0.0)), math.sqrt(max(sy2, 0.0))
    if sx == 0:
        return float(f(np.array([mu_x]))[0]) * _expect_1d(g, mu_y, sy, tol)
    slope = c / sx2
    tau = math.sqrt(max(sy2 - c * slope, 0.0))
    breaks = f.breakpoints()
    gb = g.breakpoints()
    if slope != 0 and gb.size:
        breaks = np.concatenate([breaks, mu_x + (gb - mu_y) / slope])
    lo, hi = mu_x - _TAIL * sx, mu_x + _TAIL * sx
    # panels no wider than 2 sigma so the Gaussian weight is resolved
    breaks = np.concatenate([breaks, mu_x + sx * np.arange(-_TAIL, _TAIL + 1, 2.0)])

    def integrand(u):
        dens = np.exp(-0.5 * ((u - mu_x) / sx) ** 2) / (sx * math.sqrt(2 * math.pi))
        return dens * f(u) * _conditional(g, mu_y + slope * (u - mu_x), tau, tol)

    return _adaptive(lambda k: _gl_integrate(integrand, breaks, lo, hi, k), tol, "2-D expectation")


def _pixel_lookup(mask, xh, yh):
    rows, cols = mask.panel.shape_px
    h = mask.panel.half_width_px
    r = np.clip(np.floor(xh * h + rows / 2.0), 0, rows - 1).astype(np.int64)
    k = np.clip(np.floor(yh * h + cols / 2.0), 0, cols - 1).astype(np.int64)
    return mask.cos_map()[r, k]


def _expect_tensor(mean, cov, masks, tol):
    """Tensor Gauss-Hermite over the active coordinates (2-axis masks)."""
    active = sorted({2 * p + a for p, mk in enumerate(masks) for a, u in enumerate(mk.axes_used) if u})
    sub = cov[np.ix_(active, active)]
    factor = covariance_factor(sub)
    d = len(active)

    def evaluate(order):
        x, w = hermegauss(order)
        w = w / math.sqrt(2 * math.pi)
        grids = np.meshgrid(*([x] * d), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        wt = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij")), axis=0).ravel()
        pts = np.tile(mean, (z.shape[0], 1))
        pts[:, active] = mean[active] + z @ factor.T
        vals = []
        for photon, mk in enumerate(masks):
            xh, yh = pts[:, 2 * photon], pts[:, 2 * photon + 1]
            vals.append(_pixel_lookup(mk, xh, yh) if mk.quantized else mk.response(xh, yh))
        return np.array([wt @ vals[0], wt @ vals[1], wt @ (vals[0] * vals[1])])

    orders = [o for o in (16, 24, 32, 48, 64, 96, 128) if o**d <= 4_000_000]
    prev = None
    for order in orders:
        val = evaluate(order)
        if prev is not None and np.max(np.abs(val - prev)) <= tol:
            return tuple(val)
        prev = val
    raise QuadratureNotConverged(
        "tensor Gauss-Hermite quadrature did not converge; pixelated masks that depend on both "
        "axes have no exact expectation here (use quantize=False or Monte Carlo)"
    )


def mask_expectations(mean, cov, masks, tol=1e-10):
    """(E[c1], E[c2], E[c1 c2]) with c = cos(phase) seen by each photon.

    Returns the three values and the method used.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    ma, mb = masks
    exact = not ma.quantized and not mb.quantized
    if exact and clipped_mass(mean, cov, masks, ma.panel.extent) < ORACLE_CLIP:
        # constant masks contribute a fixed cos value and no exponents
        ca, na = (1.0, ma.exponents) if ma.exponents is not None else (float(ma.cos_map()[0, 0]), (0, 0))
        cb, nb = (1.0, mb.exponents) if mb.exponents is not None else (float(mb.cos_map()[0, 0]), (0, 0))
        va = ca * gaussian_moment_nd(mean, cov, (*na, 0, 0))
        vb = cb * gaussian_moment_nd(mean, cov, (0, 0, *nb))
        vab = ca * cb * gaussian_moment_nd(mean, cov, (*na, *nb))
        return (va, vb, vab), "oracle"
    fa, fb = _photon_function(ma, 0), _photon_function(mb, 1)
    if fa is not None and fb is not None:
        ea = fa.value if fa.kind == "const" else _expect_1d(fa, mean[fa.coord], math.sqrt(cov[fa.coord, fa.coord]), tol)
        eb = fb.value if fb.kind == "const" else _expect_1d(fb, mean[fb.coord], math.sqrt(cov[fb.coord, fb.coord]), tol)
        if fa.kind == "const" or fb.kind == "const":
            eab = ea * eb
        else:
            eab = _expect_2d(fa, fb, mean, cov, tol)
        return (ea, eb, eab), "quadrature-1d"
    return _expect_tensor(mean, cov, masks, tol), "quadrature-tensor"


def probabilities_from_expectations(ea, eb, eab, noise):
    """Average of the product-form outcome probabilities given E[c1], E[c2], E[c1 c2]."""
    a1, a2 = noise.alpha
    b1, b2 = noise.beta
    m1 = a1 + b1 * ea
    m2 = a2 + b2 * eb
    m12 = a1 * a2 + a1 * b2 * eb + b1 * a2 * ea + b1 * b2 * eab
    r = noise.accidental_rate
    q = np.array([(1 - r) * (1 + s1 * m1 + s2 * m2 + s1 * s2 * m12) / 4 + r / 4 for s1, s2 in SIGNS])
    return q


def setting_descriptor(masks, lenses, noise, panel):
    return {
        "mask_a": {**masks[0].descriptor, "quantized": masks[0].quantized},
        "mask_b": {**masks[1].descriptor, "quantized": masks[1].quantized},
        "lens_a": lenses[0].to_dict(),
        "lens_b": lenses[1].to_dict(),
        "noise": noise.to_dict(),
        "panel": panel.to_dict(),
    }


def expected_probabilities(state, masks, lenses, noise=None, tol=1e-10):
    """Exact (infinite-statistics) outcome probabilities as an analytic CountTable."""
    noise = NoiseModel.ideal() if noise is None else noise
    panel = masks[0].panel
    mean, cov = slm_gaussian(state, lenses, panel)
    (ea, eb, eab), method = mask_expectations(mean, cov, masks, tol)
    q = probabilities_from_expectations(ea, eb, eab, noise)
    settings = setting_descriptor(masks, lenses, noise, panel)
    settings["method"] = method
    clip = clipped_mass(mean, cov, masks, panel.extent)
    return CountTable.analytic(q, 2, settings, clip)


# --------------------------------------------------------------- Monte Carlo


def run_direct(state, masks, lenses, noise=None, T=100_000, seed=0, setting_index=0,
               backend=None, workers=1):
    """Simulate T coincidences pair by pair and return the count table.

    Each pair's positions are drawn from the state, mapped to the SLM pixel
    it hits, and its joint polarization outcome is drawn from the product-form
    probabilities at that pixel's phase.  Random numbers come from
    ``(seed, setting_index, chunk)``-keyed sub-streams, so the result does not
    depend on ``workers``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    noise = NoiseModel.ideal() if noise is None else noise
    panel = masks[0].panel
    mean, cov = slm_gaussian(state, lenses, panel)
    factor = np.zeros((4, 4))
    factor[:, :] = covariance_factor(cov)
    factor = np.ascontiguousarray(factor)
    mean = np.ascontiguousarray(mean)
    cos_a, cos_b = masks[0].cos_map(), masks[1].cos_map()
    use = [int(u) for mk in masks for u in mk.axes_used]
    total = int(T)
    if noise.poisson:
        total = int(_rng.generator(seed, _rng.TOTAL, setting_index).poisson(T))
    sizes = _rng.chunk_sizes(total)
    args = (panel.half_width_px, noise.alpha[0], noise.beta[0], noise.alpha[1], noise.beta[1],
            noise.accidental_rate, use)

    def work(chunk):
        rng = _rng.generator(seed, _rng.DIRECT, setting_index, chunk)
        n = sizes[chunk]
        z = rng.standard_normal((n, 4))
        v = rng.random(n)
        return kernels.direct_counts(z, v, mean, factor, cos_a, cos_b, *args, backend=backend)

    if workers and workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(len(sizes))))
    else:
        results = [work(c) for c in range(len(sizes))]
    counts = np.zeros(4, dtype=np.int64)
    clipped = 0
    for c, k in results:
        counts += np.asarray(c, dtype=np.int64)
        clipped += k
    settings = setting_descriptor(masks, lenses, noise, panel)
    settings["T"] = int(T)
    settings["setting_index"] = int(setting_index)
    frac = clipped / total if total else 0.0
    if frac > CLIP_WARN:
        log.warning("%.3g of pairs fell outside the mask domain", frac)
    return CountTable(counts, 2, int(seed), settings, frac)


def sample_counts(probabilities, T, seed=0, setting_index=0, settings=None):
    """Multinomial count table for given outcome probabilities."""
    p = np.clip(np.asarray(probabilities, dtype=float), 0.0, None)
    p = p / p.sum()
    rng = _rng.generator(seed, _rng.DIRECT, setting_index, 0)
    counts = rng.multinomial(int(T), p)
    d = int(round(math.log2(p.size)))
    return CountTable(counts, d, int(seed), dict(settings or {}))


# -------------------------------------------------------------------- scans

SCAN_MODES = ("single1", "single2", "sum", "diff")


def _rect_prob(mu, cov, a1, b1, a2, b2, nodes=16):
    """P(X1 in [a1, b1], X2 in [a2, b2]) for a bivariate normal, vectorized over a1..b2."""
    s1 = math.sqrt(cov[0, 0])
    slope = cov[0, 1] / cov[0, 0]
    tau = math.sqrt(max(cov[1, 1] - cov[0, 1] * slope, 0.0))
    x, w = leggauss(nodes)
    u = 0.5 * (b1 - a1)[:, None] * x + 0.5 * (b1 + a1)[:, None]
    dens = np.exp(-0.5 * ((u - mu[0]) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
    m = mu[1] + slope * (u - mu[0])
    if tau > 0:
        inner = ndtr((b2[:, None] - m) / tau) - ndtr((a2[:, None] - m) / tau)
    else:
        inner = ((m >= a2[:, None]) & (m <= b2[:, None])).astype(float)
    return 0.5 * (b1 - a1) * ((dens * inner) @ w)


def scan_profile(state, mode, variable="x"):
    """Mean and standard deviation of the scanned coordinate s for one mode."""
    names = (f"{variable}1", f"{variable}2")
    mu, cov = state.marginal(names)
    if mode in ("single1", "single2"):
        i = 0 if mode == "single1" else 1
        return float(mu[i]), math.sqrt(cov[i, i])
    u = np.array([1.0, 1.0]) if mode == "sum" else np.array([1.0, -1.0])
    prec = np.linalg.inv(cov)
    a = float(u @ prec @ u)
    return float(u @ prec @ mu) / a, 1.0 / math.sqrt(a)


def run_scan(state, mode, grid, slit_width, T_budget, seed=0, variable="x", mode_index=None):
    """Scanning-slit coincidence histogram.

    ``single1``/``single2`` scan one slit with the other detector open;
    ``sum`` scans both slits along x1 = x2 = s and ``diff`` along
    x1 = -x2 = s.  The pair budget is split equally over grid points and
    counts are Poisson distributed.
    """
    if mode not in SCAN_MODES:
        raise ValueError(f"mode must be one of {SCAN_MODES}")
    if variable not in ("x", "y", "p", "q"):
        raise ValueError("variable must be one of x, y, p, q")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise GridTooNarrow("scan grid needs at least two points")
    centre, sigma = scan_profile(state, mode, variable)
    if grid[0] > centre - 4 * sigma or grid[-1] < centre + 4 * sigma:
        raise GridTooNarrow(
            f"grid [{grid[0]:.4g}, {grid[-1]:.4g}] does not cover +/-4 sigma "
            f"[{centre - 4 * sigma:.4g}, {centre + 4 * sigma:.4g}]"
        )
    half = 0.5 * slit_width
    names = (f"{variable}1", f"{variable}2")
    mu, cov = state.marginal(names)
    if mode in ("single1", "single2"):
        i = 0 if mode == "single1" else 1
        s = math.sqrt(cov[i, i])
        rate = ndtr((grid + half - mu[i]) / s) - ndtr((grid - half - mu[i]) / s)
    else:
        other = grid if mode == "sum" else -grid
        rate = _rect_prob(mu, cov, grid - half, grid + half, other - half, other + half)
    pairs_per_point = float(T_budget) / grid.size
    idx = SCAN_MODES.index(mode) if mode_index is None else mode_index
    rng = _rng.generator(seed, _rng.SCAN, idx, "xypq".index(variable))
    counts = rng.poisson(pairs_per_point * np.clip(rate, 0.0, None))
    settings = {"mode": mode, "variable": variable, "slit_width": slit_width, "T_budget": T_budget,
                "grid": [float(grid[0]), float(grid[-1]), int(grid.size)]}
    return ScanHistogram(mode, variable, grid, counts, slit_width, T_budget, int(seed), settings)


# ------------------------------------------------------------ ideal circuit


def walsh_signs(d):
    r = np.arange(2**d)
    return np.array([[(-1) ** bin(a & b).count("1") for b in r] for a in r], dtype=float)


def _subset_exponents(exponents, subset, d):
    # bit (d - 1 - i) of the subset index selects mode i
    return [e if (subset >> (d - 1 - i)) & 1 else 0 for i, e in enumerate(exponents)]


def ideal_circuit_probabilities(gaussian, exponents, modes=None, angles=None, scales=None):
    """Outcome probabilities of the d-ancilla circuit with U_i = exp(i arccos x_i^n_i).

    ``gaussian`` is either a :class:`TwoPhotonGaussianState` (then ``modes``
    names the measured degrees of freedom among x1, y1, x2, y2 and
    ``angles`` their quadrature angles) or a ``(mean, cov)`` pair over the d
    modes directly.  ``scales`` divides each mode before the arccos, which
    assumes the scaled variables stay inside [-1, 1].
    """
    exponents = [int(e) for e in exponents]
    d = len(exponents)
    if not 1 <= d <= 8:
        raise DimensionMismatch("the ideal circuit supports 1 <= d <= 8 modes")
    if sum(exponents) > MAX_ORDER:
        raise OrderTooHigh(f"total order {sum(exponents)} exceeds {MAX_ORDER}")
    if isinstance(gaussian, tuple):
        mean, cov = (np.asarray(a, dtype=float) for a in gaussian)
    else:
        modes = list(modes or ["x1", "y1", "x2", "y2"][:d])
        angles = list(angles or [0.0] * d)
        if len(modes) != d or len(angles) != d:
            raise DimensionMismatch("need one mode name and angle per exponent")
        rows = []
        for name, phi in zip(modes, angles):
            phi = plane_angle(phi)
            r = np.zeros(8)
            r[INDEX[name]] = math.cos(phi)
            r[INDEX[name] + 4] = math.sin(phi)
            rows.append(r)
        a = np.array(rows)
        mean, cov = a @ gaussian.mean, a @ gaussian.cov @ a.T
    if mean.shape != (d,) or cov.shape != (d, d):
        raise DimensionMismatch("mean/cov do not match the number of exponents")
    s = np.ones(d) if scales is None else np.asarray(scales, dtype=float)
    mean, cov = mean / s, cov / np.outer(s, s)
    moments = np.array([gaussian_moment_nd(mean, cov, _subset_exponents(exponents, k, d)) for k in range(2**d)])
    return walsh_signs(d) @ moments / 2**d
