"""Separability tests from moments: variance combinations, the Mancini
product, correlation coefficients and the correlation-sum witness."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .errors import AncillaError, ConjugacyMismatch, NegativeVariance, ZeroVariance
from .gstate import CONJUGATE

log = logging.getLogger(__name__)

SIGNIFICANCE = 3.0
ROWS = ("x1", "y1", "p1", "q1")
COLS = ("x2", "y2", "p2", "q2")


def variance_combo(m1, m2, m11, m22, m12, sign, tolerance=0.0):
    """Var(r1 + sign * r2) from first and second moments."""
    sign = 1.0 if sign in ("+", 1, 1.0) else -1.0 if sign in ("-", -1, -1.0) else None
    if sign is None:
        raise ValueError("sign must be '+' or '-'")
    for mm, m in ((m11, m1), (m22, m2)):
        if mm - m * m < -tolerance:
            raise NegativeVariance(f"<r^2> - <r>^2 = {mm - m * m:.4g} < 0")
    value = (m11 - m1 * m1) + (m22 - m2 * m2) + 2.0 * sign * (m12 - m1 * m2)
    if value < -tolerance:
        raise NegativeVariance(f"variance combination {value:.4g} < 0")
    return value


def mancini(var_position, var_momentum, error=0.0, significance=SIGNIFICANCE, tolerance=0.0):
    """Product Var(x1 -/+ x2) Var(p1 +/- p2); flagged entangled when below 1 beyond ``significance`` errors."""
    for v in (var_position, var_momentum):
        if v < -tolerance:
            raise NegativeVariance(f"variance {v:.4g} < 0")
    product = var_position * var_momentum
    return product, bool(1.0 - product > significance * error)


def correlation(m1, m2, m11, m22, m12):
    """Pearson coefficient (<r1 r2> - <r1><r2>) / sqrt(Var r1 Var r2)."""
    v1, v2 = m11 - m1 * m1, m22 - m2 * m2
    if v1 <= 0 or v2 <= 0:
        raise ZeroVariance(f"variances must be positive (got {v1:.4g}, {v2:.4g})")
    return (m12 - m1 * m2) / math.sqrt(v1 * v2)


def correlation_witness(c_r, c_s, r="x", s="p", error=0.0, significance=SIGNIFICANCE):
    """|C_r| + |C_s| for conjugate variables r, s; entangled if it exceeds 1 beyond ``significance`` errors."""
    ra, sa = r[0], s[0]
    if CONJUGATE.get(ra) != sa:
        raise ConjugacyMismatch(f"{r} and {s} are not Fourier-conjugate variables")
    total = abs(c_r) + abs(c_s)
    return total, bool(total - 1.0 > significance * error)


def _gradient(f, values, scales):
    x = np.asarray(values, dtype=float)
    g = np.zeros(x.size)
    for i in range(x.size):
        if scales[i] <= 0:
            continue
        # steps on the scale of each input's own error
        h = 1e-4 * scales[i]
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def _as_cov(errors, n):
    e = np.asarray(errors, dtype=float)
    return np.diag(e * e) if e.ndim == 1 else e.reshape(n, n)


def propagate_errors(f, values, errors):
    """First-order standard error of ``f(values)``.

    ``errors`` is a vector of independent standard errors or a full
    covariance matrix.
    """
    x = np.asarray(values, dtype=float)
    cov = _as_cov(errors, x.size)
    if not np.any(cov):
        return 0.0
    g = _gradient(f, x, np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    return float(math.sqrt(max(g @ cov @ g, 0.0)))


def _safe(f, s):
    try:
        return f(s)
    except (AncillaError, ArithmeticError):
        return math.nan


def resample_errors(f, values, errors, draws=2000, seed=0):
    """Monte Carlo standard error of ``f`` under Gaussian input fluctuations.

    Draws outside the domain of ``f`` (e.g. a negative variance) are dropped.
    """
    x = np.asarray(values, dtype=float)
    cov = _as_cov(errors, x.size)
    rng = _rng.generator(seed, _rng.BOOTSTRAP, 1, 0)
    samples = rng.multivariate_normal(x, cov, size=draws, method="eigh")
    out = np.array([_safe(f, s) for s in samples])
    bad = int(np.isnan(out).sum())
    if bad:
        log.warning("dropped %d of %d resampled draws outside the domain", bad, draws)
    return float(np.nanstd(out, ddof=1))


# ------------------------------------------------------------------ report


def pair_labels(r, s):
    """Moment labels <r>, <s>, <r^2>, <s^2>, <r s> for variables like 'x1', 'y2'."""
    return [r, s, f"{r}^2", f"{s}^2", f"{r} {s}"]


def _single(photon):
    return lambda m: m[2 + photon] - m[photon] ** 2


def axis_variances(moments, letter):
    """Var(r1), Var(r2), Var(r1 + r2), Var(r1 - r2) with propagated errors."""
    r1, r2 = f"{letter}1", f"{letter}2"
    vals, cov = moments.subset(pair_labels(r1, r2))
    funcs = {f"var({r1})": _single(0), f"var({r2})": _single(1),
             f"var({r1}+{r2})": _combo("+"), f"var({r1}-{r2})": _combo("-")}
    return {k: _entry(f(vals), propagate_errors(f, vals, cov)) for k, f in funcs.items()}


def _combo(sign):
    return lambda m: variance_combo(*m, sign=sign, tolerance=math.inf)


def _corr(m):
    return correlation(*m)


@dataclass
class WitnessReport:
    correlations: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    mancini: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    significance: float = SIGNIFICANCE
    meta: dict = field(default_factory=dict)

    @property
    def violations(self):
        out = [k for k, v in self.witness.items() if v["entangled"]]
        out += [k for k, v in self.mancini.items() if v["entangled"]]
        return out

    def to_dict(self):
        return {
            "significance": self.significance,
            "correlations": self.correlations,
            "variances": self.variances,
            "mancini": self.mancini,
            "witness": self.witness,
            "violations": self.violations,
            **self.meta,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def correlation_matrix(self):
        value = np.full((4, 4), np.nan)
        error = np.full((4, 4), np.nan)
        for i, r in enumerate(ROWS):
            for j, s in enumerate(COLS):
                entry = self.correlations.get(f"{r},{s}")
                if entry is not None and entry["value"] is not None:
                    value[i, j], error[i, j] = entry["value"], entry["error"]
        return value, error

    def correlation_csv(self):
        """4x4 grid, rows photon-1 variables, columns photon-2 variables.

        Cross-plane cells are left empty; each filled cell is followed by its error.
        """
        value, error = self.correlation_matrix()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["variable"]
        for s in COLS:
            header += [s, f"{s}_err"]
        w.writerow(header)
        for i, r in enumerate(ROWS):
            row = [r]
            for j in range(4):
                if np.isnan(value[i, j]):
                    row += ["", ""]
                else:
                    row += [repr(float(value[i, j])), repr(float(error[i, j]))]
            w.writerow(row)
        return buf.getvalue()


def _entry(value, error):
    return {"value": float(value), "error": float(error)}


def _undefined(exc):
    # a noisy estimate gave a non-positive variance: nothing to report or flag
    log.warning("entry undefined: %s", exc)
    return {"value": None, "error": None, "undefined": str(exc)}


def build_report(moments, axes=("x", "y"), significance=SIGNIFICANCE, cross_axis=True, meta=None):
    """WitnessReport from a moment collection.

    ``moments`` must provide ``subset(labels) -> (values, cov)`` (as
    ``protocol.MomentSet`` does) with the labels of :func:`pair_labels`.
    """
    report = WitnessReport(significance=significance, meta=dict(meta or {}))
    for r, s in correlation_pairs(axes, cross_axis):
        vals, cov = moments.subset(pair_labels(r, s))
        try:
            report.correlations[f"{r},{s}"] = _entry(_corr(vals), propagate_errors(_corr, vals, cov))
        except ZeroVariance as exc:
            report.correlations[f"{r},{s}"] = _undefined(exc)
    for a in axes:
        conj = CONJUGATE[a]
        for letter in (a, conj):
            report.variances.update(axis_variances(moments, letter))
        # Var(a1 -/+ a2) Var(conj1 +/- conj2) from the joint moment covariance
        labels = pair_labels(f"{a}1", f"{a}2") + pair_labels(f"{conj}1", f"{conj}2")
        vals, cov = moments.subset(labels)
        for sx, sp in (("-", "+"), ("+", "-")):
            fx, fp = _combo(sx), _combo(sp)
            prod = lambda m, fx=fx, fp=fp: fx(m[:5]) * fp(m[5:])
            err = propagate_errors(prod, vals, cov)
            value, flag = mancini(fx(vals[:5]), fp(vals[5:]), err, significance, tolerance=math.inf)
            key = f"{a}1{sx}{a}2 * {conj}1{sp}{conj}2"
            report.mancini[key] = {**_entry(value, err), "entangled": flag,
                                   "sigma": float((1.0 - value) / err) if err > 0 else None}
        w = lambda m: abs(_corr(m[:5])) + abs(_corr(m[5:]))
        try:
            err = propagate_errors(w, vals, cov)
            total, flag = correlation_witness(_corr(vals[:5]), _corr(vals[5:]), a, conj, err, significance)
        except ZeroVariance as exc:
            report.witness[f"{a}/{conj}"] = {**_undefined(exc), "entangled": False, "sigma": None}
            continue
        report.witness[f"{a}/{conj}"] = {**_entry(total, err), "entangled": flag,
                                         "sigma": float((total - 1.0) / err) if err > 0 else None}
    return report


def correlation_pairs(axes=("x", "y"), cross_axis=True):
    """Equal-plane variable pairs (r1, s2) of the correlation grid."""
    near = ["x", "y"] if cross_axis else list(axes)
    far = [CONJUGATE[a] for a in near]
    return [(f"{a}1", f"{b}2") for group in (near, far) for a in group for b in group
            if cross_axis or a == b]


def witness_labels(axes=("x", "y"), cross_axis=True):
    """Every moment label :func:`build_report` reads."""
    out = []
    for r, s in correlation_pairs(axes, cross_axis):
        for lbl in pair_labels(r, s):
            if lbl not in out:
                out.append(lbl)
    return out


class ExactMoments:
    """Oracle moments of a state in the layout :func:`build_report` expects (zero errors)."""

    def __init__(self, state):
        from .gstate import MomentSpec, gaussian_moment

        self._state = state
        self._spec = MomentSpec
        self._moment = gaussian_moment

    def subset(self, labels):
        vals = np.array([self._moment(self._state, self._spec.parse(lbl)) for lbl in labels])
        return vals, np.zeros((len(labels), len(labels)))
