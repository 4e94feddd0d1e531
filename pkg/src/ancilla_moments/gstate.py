"""Gaussian model of the two-photon transverse state.

Coordinates are ordered ``(x1, y1, x2, y2, p1, q1, p2, q2)``: positions in mm
and transverse wave-vector components in 1/mm, both referred to the crystal
plane.  Commutators are ``[x, p] = i``, so a pure vacuum-like mode has
``<x^2><p^2> = 1/4`` and every symplectic eigenvalue of a physical covariance
matrix is at least 1/2.

Moments are computed exactly with the Gaussian (Isserlis/Wick) recursion
``E[X_j X^b] = mu_j E[X^b] + sum_i S_ji b_i E[X^(b - e_i)]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _rng
from .errors import InconsistentInput, NonPhysicalState, OrderTooHigh

VARIABLES = ("x1", "y1", "x2", "y2", "p1", "q1", "p2", "q2")
INDEX = {name: i for i, name in enumerate(VARIABLES)}
CONJUGATE = {"x": "p", "y": "q", "p": "x", "q": "y"}
UNITS = {name: ("mm" if name[0] in "xy" else "1/mm") for name in VARIABLES}

MAX_ORDER = 12
SYMPLECTIC_MIN = 0.5
SYMPLECTIC_TOL = 1e-9

PLANE_ANGLE = {"near": 0.0, "far": math.pi / 2}

_OMEGA = np.block([[np.zeros((4, 4)), np.eye(4)], [-np.eye(4), np.zeros((4, 4))]])


def symplectic_eigenvalues(cov):
    """Symplectic spectrum of an 8x8 covariance in (x..., p...) ordering."""
    ev = np.linalg.eigvals(1j * _OMEGA @ np.asarray(cov, dtype=float))
    return np.sort(np.abs(ev))[::2]


@dataclass(frozen=True, eq=False)
class TwoPhotonGaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __init__(self, mean=None, cov=None, *, check_physical=True):
        mean = np.zeros(8) if mean is None else np.array(mean, dtype=float)
        cov = np.array(cov, dtype=float)
        if mean.shape != (8,) or cov.shape != (8, 8):
            raise InconsistentInput("state needs an 8-vector mean and an 8x8 covariance")
        scale = max(np.max(np.abs(cov)), 1e-300)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise InconsistentInput("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if check_physical:
            self.check_physical()

    def check_physical(self):
        w = np.linalg.eigvalsh(self.cov)
        if w[0] < -1e-12 * max(w[-1], 1e-300):
            raise NonPhysicalState(f"covariance not positive semi-definite (min eigenvalue {w[0]:.3g})")
        nu = symplectic_eigenvalues(self.cov)
        if nu[0] < SYMPLECTIC_MIN - SYMPLECTIC_TOL:
            raise NonPhysicalState(
                f"symplectic eigenvalue {nu[0]:.6g} below {SYMPLECTIC_MIN} (uncertainty principle)"
            )
        return nu

    @property
    def symplectic_eigenvalues(self):
        return symplectic_eigenvalues(self.cov)

    def var(self, name):
        i = INDEX[name]
        return float(self.cov[i, i])

    def covariance(self, a, b):
        return float(self.cov[INDEX[a], INDEX[b]])

    def correlation(self, a, b):
        return self.covariance(a, b) / math.sqrt(self.var(a) * self.var(b))

    def marginal(self, names):
        idx = [INDEX[n] for n in names]
        return self.mean[idx].copy(), self.cov[np.ix_(idx, idx)].copy()

    def plane_marginal(self, planes=("near", "near")):
        """4-D Gaussian of (x1, y1, x2, y2) after rotating each photon to its plane."""
        rotated = frft(self, plane_angle(planes[0]), plane_angle(planes[1]), check=False)
        return rotated.marginal(VARIABLES[:4])

    def to_dict(self):
        return {
            "variables": list(VARIABLES),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "units": dict(UNITS),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data, check_physical=True):
        if "variables" in data and list(data["variables"]) != list(VARIABLES):
            raise InconsistentInput(f"variable ordering must be {list(VARIABLES)}")
        return cls(data.get("mean"), data["cov"], check_physical=check_physical)

    @classmethod
    def from_json(cls, text, check_physical=True):
        return cls.from_dict(json.loads(text), check_physical=check_physical)


def plane_angle(plane):
    if isinstance(plane, str):
        try:
            return PLANE_ANGLE[plane]
        except KeyError:
            raise ValueError(f"unknown plane {plane!r}") from None
    phi = float(plane)
    if not 0.0 <= phi < 2 * math.pi:
        raise ValueError("fractional angle must lie in [0, 2pi)")
    return phi


@dataclass(frozen=True)
class MomentSpec:
    """Which moment ``<x1^n1 y1^m1 x2^n2 y2^m2>`` to measure, and in which planes.

    ``planes`` holds one entry per photon: ``"near"``, ``"far"`` or a rotation
    angle in radians.  In the far field the letters x, y read as p, q.
    """

    exponents: tuple = (0, 0, 0, 0)
    planes: tuple = ("near", "near")

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if len(exps) != 4 or any(e < 0 for e in exps):
            raise ValueError("exponents must be four non-negative integers")
        if sum(exps) < 1:
            raise ValueError("moment order must be at least 1")
        planes = tuple(self.planes)
        if len(planes) != 2:
            raise ValueError("one plane per photon")
        for p in planes:
            plane_angle(p)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "planes", planes)

    @property
    def order(self):
        return sum(self.exponents)

    @property
    def angles(self):
        return plane_angle(self.planes[0]), plane_angle(self.planes[1])

    def photon_exponents(self, photon):
        n, m = self.exponents[2 * photon : 2 * photon + 2]
        return n, m

    def variable_names(self, photon):
        plane = self.planes[photon]
        k = photon + 1
        if plane == "far":
            return f"p{k}", f"q{k}"
        if plane == "near":
            return f"x{k}", f"y{k}"
        return f"x{k}[{float(plane):.6g}]", f"y{k}[{float(plane):.6g}]"

    @property
    def label(self):
        parts = []
        for photon in (0, 1):
            names = self.variable_names(photon)
            for name, e in zip(names, self.photon_exponents(photon)):
                if e == 1:
                    parts.append(name)
                elif e > 1:
                    parts.append(f"{name}^{e}")
        return " ".join(parts)

    def __str__(self):
        return f"<{self.label}>"

    @classmethod
    def parse(cls, text):
        """Parse labels such as ``"x1^2"``, ``"x1 x2"`` or ``"p1 q2^3"``."""
        exps = [0, 0, 0, 0]
        planes = [None, None]
        for token in text.replace("<", " ").replace(">", " ").replace("*", " ").split():
            name, _, power = token.partition("^")
            if len(name) != 2 or name[0] not in "xypq" or name[1] not in "12":
                raise ValueError(f"cannot parse moment factor {token!r}")
            photon = int(name[1]) - 1
            plane = "near" if name[0] in "xy" else "far"
            if planes[photon] not in (None, plane):
                raise ValueError(f"photon {photon + 1} cannot be measured in both planes")
            planes[photon] = plane
            axis = 0 if name[0] in "xp" else 1
            exps[2 * photon + axis] += int(power) if power else 1
        planes = [p or "near" for p in planes]
        return cls(tuple(exps), tuple(planes))


def gaussian_moment_nd(mean, cov, exponents):
    """Exact raw moment ``E[prod X_i^k_i]`` of an N-dimensional Gaussian."""
    exps = tuple(int(k) for k in exponents)
    if sum(exps) > MAX_ORDER:
        raise OrderTooHigh(f"total order {sum(exps)} exceeds {MAX_ORDER}")
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    # only variables that appear matter
    active = [i for i, k in enumerate(exps) if k > 0]
    if not active:
        return 1.0
    mu = tuple(float(mean[i]) for i in active)
    sig = tuple(tuple(float(cov[i, j]) for j in active) for i in active)
    return _moment(mu, sig, tuple(exps[i] for i in active))


def _moment(mu, sig, exps):
    d = len(mu)

    @lru_cache(maxsize=None)
    def rec(alpha):
        j = next((i for i, a in enumerate(alpha) if a), None)
        if j is None:
            return 1.0
        beta = list(alpha)
        beta[j] -= 1
        total = mu[j] * rec(tuple(beta))
        for i in range(d):
            if beta[i] and sig[j][i] != 0.0:
                b = beta[i]
                beta[i] -= 1
                total += sig[j][i] * b * rec(tuple(beta))
                beta[i] += 1
        return total

    return rec(exps)


def gaussian_moment(state, spec):
    """Exact moment for a :class:`MomentSpec` on a two-photon state."""
    if spec.order > MAX_ORDER:
        raise OrderTooHigh(f"total order {spec.order} exceeds {MAX_ORDER}")
    mean, cov = state.plane_marginal(spec.planes)
    return gaussian_moment_nd(mean, cov, spec.exponents)


def rotation_matrix(phi1, phi2):
    """Phase-space rotation acting on (x_k, p_k) pairs; photon 1 owns x1,y1."""
    r = np.eye(8)
    for k, phi in ((0, phi1), (1, phi1), (2, phi2), (3, phi2)):
        c, s = math.cos(phi), math.sin(phi)
        i, j = k, k + 4
        r[i, i], r[i, j], r[j, i], r[j, j] = c, s, -s, c
    return r


def frft(state, phi1, phi2=0.0, *, check=True):
    """Fractional Fourier transform of each photon by angle phi (x_phi = x cos + p sin)."""
    r = rotation_matrix(phi1, phi2)
    cov = r @ state.cov @ r.T
    return TwoPhotonGaussianState(r @ state.mean, 0.5 * (cov + cov.T), check_physical=check)


def covariance_factor(cov):
    """Matrix F with F F^T = cov; tolerates rank deficiency."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        w = np.where(w > 1e-15 * max(w[-1], 1e-300), w, 0.0)
        return v * np.sqrt(w)


def sample_gaussian(mean, factor, count, seed, stream=_rng.SAMPLE, index=0):
    mean = np.asarray(mean, dtype=float)
    out = np.empty((int(count), mean.size))
    start = 0
    for chunk, n in enumerate(_rng.chunk_sizes(count)):
        z = _rng.generator(seed, stream, index, chunk).standard_normal((n, mean.size))
        out[start : start + n] = mean + z @ factor.T
        start += n
    return out


def sample_positions(state, planes=("near", "near"), count=1, seed=0):
    """Draw (x1, y1, x2, y2) in the selected planes; deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mean, cov = state.plane_marginal(planes)
    return sample_gaussian(mean, covariance_factor(cov), count, seed)


def marginal_pdf(state, variables, grid):
    """Gaussian marginal density of one or two named variables.

    For two variables ``grid`` is a pair of 1-D axes and the result has shape
    ``(len(grid[0]), len(grid[1]))``.
    """
    if isinstance(variables, str):
        variables = (variables,)
        grid = (grid,)
    axes = [np.asarray(g, dtype=float) for g in grid]
    for g in axes:
        if g.ndim != 1 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
    mean, cov = state.marginal(variables)
    if len(variables) == 1:
        s2 = cov[0, 0]
        return np.exp(-0.5 * (axes[0] - mean[0]) ** 2 / s2) / math.sqrt(2 * math.pi * s2)
    if len(variables) != 2:
        raise ValueError("marginal_pdf supports one or two variables")
    u, v = np.meshgrid(axes[0] - mean[0], axes[1] - mean[1], indexing="ij")
    inv = np.linalg.inv(cov)
    q = inv[0, 0] * u * u + 2 * inv[0, 1] * u * v + inv[1, 1] * v * v
    return np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def _pair_block(values, names):
    v1, v2, s, d = (float(v) for v in values)
    if min(v1, v2, s, d) <= 0:
        raise InconsistentInput(f"{names}: all variances must be positive")
    c = (s - d) / 4.0
    if abs(c) > math.sqrt(v1 * v2):
        raise InconsistentInput(
            f"{names}: implied covariance {c:.6g} exceeds sqrt(var1*var2) = {math.sqrt(v1 * v2):.6g}"
        )
    return v1, v2, c


def from_table_variances(x, p, y=None, q=None, *, mean=None, cross=None):
    """Build a state from measured variance quadruples.

    Each of ``x``, ``p`` (and optionally ``y``, ``q``, which default to ``x``
    and ``p``) is ``(var1, var2, var_sum, var_diff)``.  The single-photon
    variances are used as given and the inter-photon covariance is
    ``(var_sum - var_diff) / 4``.  ``cross`` sets extra covariances, e.g.
    ``{("x1", "y2"): 1e-4}``.
    """
    y = x if y is None else y
    q = p if q is None else q
    cov = np.zeros((8, 8))
    for values, a, b in ((x, "x1", "x2"), (y, "y1", "y2"), (p, "p1", "p2"), (q, "q1", "q2")):
        v1, v2, c = _pair_block(values, a[0])
        i, j = INDEX[a], INDEX[b]
        cov[i, i], cov[j, j] = v1, v2
        cov[i, j] = cov[j, i] = c
    for (a, b), c in (cross or {}).items():
        i, j = INDEX[a], INDEX[b]
        cov[i, j] = cov[j, i] = float(c)
    return TwoPhotonGaussianState(mean, cov)


def product_state(photon1, photon2):
    """Separable state from two single-photon 4x4 covariances over (x, y, p, q)."""
    cov = np.zeros((8, 8))
    for photon, block in ((0, photon1), (1, photon2)):
        block = np.asarray(block, dtype=float)
        idx = [2 * photon, 2 * photon + 1, 4 + 2 * photon, 5 + 2 * photon]
        cov[np.ix_(idx, idx)] = block
    return TwoPhotonGaussianState(None, cov)


def variance_table(state, axis="x"):
    """Var(r1), Var(r2), Var(r1 + r2), Var(r1 - r2) of one axis, computed from the state."""
    a1, a2 = f"{axis}1", f"{axis}2"
    v1, v2, c = state.var(a1), state.var(a2), state.covariance(a1, a2)
    return {"var1": v1, "var2": v2, "var_sum": v1 + v2 + 2 * c, "var_diff": v1 + v2 - 2 * c}


def random_symplectic(rng, modes=4, strength=0.6):
    """Random symplectic matrix exp(Omega H) for symmetric H (for tests and scenarios)."""
    from scipy.linalg import expm

    n = 2 * modes
    h = rng.normal(scale=strength, size=(n, n))
    h = 0.5 * (h + h.T)
    omega = np.block([[np.zeros((modes, modes)), np.eye(modes)], [-np.eye(modes), np.zeros((modes, modes))]])
    return expm(omega @ h)


def random_physical_state(rng, thermal=(0.5, 2.0), strength=0.6, mean_scale=0.0):
    sym = random_symplectic(rng, strength=strength)
    d = rng.uniform(*thermal, size=4)
    cov = sym @ np.diag(np.concatenate([d, d])) @ sym.T
    mean = rng.normal(scale=mean_scale, size=8) if mean_scale else None
    return TwoPhotonGaussianState(mean, 0.5 * (cov + cov.T))



def random_separable_state(rng, sigma_x=(0.08, 0.2), thermal=(0.5, 1.5), strength=0.3, mean_scale=0.02):
    """Product of two random single-photon Gaussians in laboratory units.

    Each photon gets a random two-mode (x, y) symplectic transform of a
    thermal state, rescaled so position widths fall roughly in ``sigma_x``
    (mm) with conjugate momenta in 1/mm.
    """
    from scipy.linalg import expm

    omega = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    blocks = []
    for _ in range(2):
        h = rng.normal(scale=strength, size=(4, 4))
        sym = expm(omega @ (0.5 * (h + h.T)))
        d = rng.uniform(*thermal, size=2)
        cov = sym @ np.diag(np.concatenate([d, d])) @ sym.T
        lam = rng.uniform(*sigma_x) / math.sqrt(max(cov[0, 0], cov[1, 1]))
        scale = np.array([lam, lam, 1 / lam, 1 / lam])
        blocks.append(cov * np.outer(scale, scale))
    state = product_state(*blocks)
    mean = np.zeros(8)
    if mean_scale:
        mean[:4] = rng.normal(scale=mean_scale, size=4)
        mean[4:] = rng.normal(scale=mean_scale * 100, size=4)
    return TwoPhotonGaussianState(mean, state.cov)
