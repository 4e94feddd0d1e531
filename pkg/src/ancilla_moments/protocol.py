"""Measurement protocol: which SLM settings a set of moments needs, and how
their count tables turn into calibrated moments with correlated errors.

A setting is ``(plane1, mask1, plane2, mask2)`` where a mask label is
``"h"`` (constant pi/2 phase), ``"0"`` (constant zero phase) or an exponent
pair ``(n, m)`` for ``arccos(x^n y^m)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .acquisition import CountTable, expected_probabilities, run_direct, settings_hash
from .errors import DimensionMismatch
from .estimator import CAL_ROLES, MomentEstimate, calibration_ratio, single_ratio, t_covariance, t_statistic, uncertainty
from .gstate import MomentSpec, UNITS
from .optics import LensSystem, NoiseModel, SlmPanel, synthesize_constant, synthesize_mask

HALF_PI = math.pi / 2


@dataclass
class Apparatus:
    panel: SlmPanel = field(default_factory=SlmPanel)
    lenses: dict = field(default_factory=lambda: {"near": LensSystem.imaging_chain((30, 50, 20, 50)),
                                                  "far": LensSystem.fourier_chain((300, 300, 200, 200, 500))})
    noise: NoiseModel = field(default_factory=NoiseModel.ideal)
    quantize: bool = True
    _masks: dict = field(default_factory=dict, repr=False)

    def mask(self, label):
        key = label if isinstance(label, str) else tuple(label)
        if key not in self._masks:
            if key == "h":
                self._masks[key] = synthesize_constant(self.panel, HALF_PI, self.quantize)
            elif key == "0":
                self._masks[key] = synthesize_constant(self.panel, 0.0, self.quantize)
            else:
                self._masks[key] = synthesize_mask(self.panel, key[0], key[1], self.quantize)
        return self._masks[key]

    def lens(self, plane):
        if plane not in self.lenses:
            raise DimensionMismatch(f"no lens system configured for plane {plane!r}")
        return self.lenses[plane]

    def setting_objects(self, setting):
        p1, m1, p2, m2 = setting
        return (self.mask(m1), self.mask(m2)), (self.lens(p1), self.lens(p2))


def _label(photon_exps):
    n, m = photon_exps
    return "h" if n == 0 and m == 0 else (int(n), int(m))


def statistic_plan(spec, calibrate=True):
    """Map role -> (setting, photon) statistic keys needed for one moment.

    ``photon`` is None for the joint statistic, 0 or 1 for a marginal.
    """
    a, b = spec.photon_exponents(0), spec.photon_exponents(1)
    p1, p2 = spec.planes
    if p1 not in ("near", "far") or p2 not in ("near", "far"):
        raise DimensionMismatch("direct measurement supports the near and far planes only")
    ma, mb = _label(a), _label(b)
    if ma != "h" and mb != "h":
        sett = {"mn": (ma, mb), "hn": ("h", mb), "mh": (ma, "h"), "hh": ("h", "h"),
                "00": ("0", "0"), "h0": ("h", "0"), "0h": ("0", "h")}
        roles = CAL_ROLES if calibrate else ("mn",)
        return {r: ((p1, sett[r][0], p2, sett[r][1]), None) for r in roles}
    # single-photon moment: the other photon sees the constant pi/2 mask in the same plane
    photon = 0 if mb == "h" else 1
    plane = spec.planes[photon]
    mask = ma if photon == 0 else mb

    def key(lbl):
        return ((plane, lbl, plane, "h") if photon == 0 else (plane, "h", plane, lbl)), photon

    roles = {"n": mask, "h": "h", "0": "0"} if calibrate else {"n": mask}
    return {r: key(lbl) for r, lbl in roles.items()}


def _moment_from_stats(plan, values, calibrate):
    if not calibrate:
        return values[next(iter(plan.values()))]
    if "mn" in plan:
        return calibration_ratio({r: values[k] for r, k in plan.items()})
    return single_ratio(values[plan["n"]], values[plan["h"]], values[plan["0"]])


def conversion_factor(spec, apparatus):
    f = 1.0
    for photon in (0, 1):
        lens = apparatus.lens(spec.planes[photon])
        f *= (apparatus.panel.half_width_mm * lens.crystal_per_slm) ** sum(spec.photon_exponents(photon))
    return f


def moment_units(spec):
    parts = []
    for photon in (0, 1):
        for name, e in zip(spec.variable_names(photon), spec.photon_exponents(photon)):
            if e:
                parts.append((UNITS.get(name, "mm"), e))
    length = sum(e for u, e in parts if u == "mm")
    inverse = sum(e for u, e in parts if u != "mm")
    out = []
    if length:
        out.append("mm" if length == 1 else f"mm^{length}")
    if inverse:
        out.append("mm^-1" if inverse == 1 else f"mm^-{inverse}")
    return " ".join(out) or "1"


def settings_for(specs, calibrate=True):
    """Sorted list of distinct settings needed for ``specs``."""
    out = set()
    for spec in specs:
        for setting, _ in statistic_plan(spec, calibrate).values():
            out.add(setting)
    return sorted(out, key=repr)


def acquire(state, settings, apparatus, T, seed=0, analytic=False, backend=None, workers=1, index_offset=0):
    """Count table for every setting (run_direct, or exact probabilities if ``analytic``).

    Setting ``i`` draws from random sub-stream ``index_offset + i``.
    """

    def one(indexed):
        index, setting = indexed
        masks, lenses = apparatus.setting_objects(setting)
        if analytic:
            table = expected_probabilities(state, masks, lenses, apparatus.noise)
        else:
            table = run_direct(state, masks, lenses, apparatus.noise, T, seed, index_offset + index, backend)
        table.settings["setting"] = repr(setting)
        return setting, table

    items = list(enumerate(settings))
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    return dict(results)


def _finite_jacobian(fun, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (np.asarray(fun(up)) - np.asarray(fun(dn))) / (2 * h)
    return f0, jac


class MomentSet:
    """Calibrated moments (crystal-plane units) with their joint covariance.

    Errors come from the exact multinomial covariance of every sign
    statistic read from the count tables, pushed through the calibration
    ratios to first order.  Statistics read from the same table are
    correlated; different tables are independent.  For analytic tables
    ``nominal_T`` gives the errors expected at that many pairs per setting.
    """

    def __init__(self, specs, tables, apparatus, calibrate=True, nominal_T=None):
        self.specs = list(specs)
        self.tables = tables
        self.apparatus = apparatus
        self.calibrate = calibrate
        self.plans = [statistic_plan(s, calibrate) for s in self.specs]
        keys = sorted({k for plan in self.plans for k in plan.values()}, key=repr)
        self.keys = keys
        self.stat_values = np.array([t_statistic(tables[s], p) for s, p in keys])
        n = len(keys)
        cov = np.zeros((n, n))
        for i, (si, pi) in enumerate(keys):
            for j, (sj, pj) in enumerate(keys):
                if si == sj and j >= i:
                    cov[i, j] = cov[j, i] = t_covariance(tables[si], pi, pj, nominal_T)
        self.stat_cov = cov
        self.factors = np.array([conversion_factor(s, apparatus) for s in self.specs])
        self.raw, jac = _finite_jacobian(self._raw_from, self.stat_values)
        self.values = self.raw * self.factors
        j = jac * self.factors[:, None]
        self.jacobian = j
        self.cov = j @ cov @ j.T

    def _raw_from(self, stats):
        lookup = dict(zip(self.keys, stats))
        return np.array([_moment_from_stats(plan, lookup, self.calibrate) for plan in self.plans])

    @property
    def labels(self):
        return [s.label for s in self.specs]

    @property
    def std_errors(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def __getitem__(self, label):
        return float(self.values[self.index(label)])

    def index(self, label):
        if isinstance(label, MomentSpec):
            label = label.label
        return self.labels.index(MomentSpec.parse(label).label if isinstance(label, str) else label)

    def tables_for(self, i):
        return sorted({s for s, _ in self.plans[i].values()}, key=repr)

    def estimates(self):
        out = []
        for i, spec in enumerate(self.specs):
            used = self.tables_for(i)
            total = sum(self.tables[s].total for s in used)
            out.append(MomentEstimate(spec, float(self.values[i]), float(self.std_errors[i]), total, "direct",
                                      moment_units(spec), settings_hash([repr(s) for s in used])))
        return out

    def subset(self, labels):
        idx = [self.index(lbl) for lbl in labels]
        return self.values[idx], self.cov[np.ix_(idx, idx)]

    def bootstrap(self, n=200, seed=0):
        """Moment replicates from multinomial resampling of every count table."""
        out = np.empty((n, len(self.specs)))
        settings = sorted(self.tables, key=repr)
        pos = {s: i for i, s in enumerate(settings)}
        for b in range(n):
            resampled = {}
            for s in settings:
                t = self.tables[s]
                if t.is_analytic:
                    resampled[s] = t
                    continue
                rng = _rng.generator(seed, _rng.BOOTSTRAP, b, pos[s])
                resampled[s] = CountTable(rng.multinomial(t.total, t.q), t.d, t.seed, t.settings)
            stats = np.array([t_statistic(resampled[s], p) for s, p in self.keys])
            out[b] = self._raw_from(stats) * self.factors
        return out

    def budget(self):
        settings = sorted(self.tables, key=repr)
        finite = [self.tables[s] for s in settings if not self.tables[s].is_analytic]
        return {
            "settings": len(settings),
            "pairs_total": sum(t.total for t in finite) if finite else None,
            "max_clipped_fraction": max(self.tables[s].clipped_fraction for s in settings),
            "max_counting_variance": max((uncertainty(t) for t in finite), default=0.0),
        }


def measure(state, specs, apparatus=None, T=100_000, seed=0, analytic=False, calibrate=True,
            backend=None, workers=1, index_offset=0):
    """Acquire every needed setting and return the MomentSet."""
    apparatus = Apparatus() if apparatus is None else apparatus
    specs = [MomentSpec.parse(s) if isinstance(s, str) else s for s in specs]
    settings = settings_for(specs, calibrate)
    tables = acquire(state, settings, apparatus, T, seed, analytic, backend, workers, index_offset)
    return MomentSet(specs, tables, apparatus, calibrate, T if analytic else None)


def axis_specs(variable):
    """The five moments that fix the four variances of one axis, e.g. ``"x"``."""
    r1, r2 = f"{variable}1", f"{variable}2"
    return [MomentSpec.parse(t) for t in (r1, r2, f"{r1}^2", f"{r2}^2", f"{r1} {r2}")]


class MomentUnion:
    """Several MomentSets viewed as one; each lookup is served by the first
    set holding all requested labels (sets are statistically independent)."""

    def __init__(self, sets):
        self.sets = list(sets)

    def subset(self, labels):
        for ms in self.sets:
            if all(lbl in ms.labels for lbl in labels):
                return ms.subset(labels)
        raise KeyError(f"no moment set holds all of {labels}")
