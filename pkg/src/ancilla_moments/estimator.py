"""Moment recovery from count tables: T-statistics, calibration, errors, units."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .errors import DegenerateCalibration, DimensionMismatch, EmptyTable, InsufficientData
from .gstate import MomentSpec

CAL_ROLES = ("mn", "hn", "mh", "hh", "00", "h0", "0h")
DEGENERATE = 1e-6


@dataclass
class MomentEstimate:
    spec: MomentSpec | str
    value: float
    std_error: float
    T_total: float
    method: str = "direct"
    units: str = ""
    settings_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be non-negative")

    @property
    def label(self):
        return str(self.spec)

    def to_dict(self):
        return {
            "spec": self.label,
            "value": self.value,
            "std_error": self.std_error,
            "T": self.T_total,
            "method": self.method,
            "units": self.units,
            "settings_hash": self.settings_hash,
            **self.extra,
        }


ESTIMATE_COLUMNS = ("spec", "value", "std_error", "T", "method", "settings_hash")


def estimates_to_csv(estimates):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_COLUMNS)
    for e in estimates:
        t = e.T_total
        w.writerow([e.label, repr(float(e.value)), repr(float(e.std_error)),
                    "inf" if t == math.inf else int(t), e.method, e.settings_hash])
    return buf.getvalue()


# ----------------------------------------------------------------- signs


def popcount_signs(d):
    """s_R = (-1)^popcount(R) for R = 0 .. 2^d - 1."""
    r = np.arange(2**d)
    return np.array([(-1) ** bin(k).count("1") for k in r], dtype=float)


def photon_signs(photon, d=2):
    """Sign vector that reads out a single qubit (bit d-1-photon of R)."""
    r = np.arange(2**d)
    return np.where((r >> (d - 1 - photon)) & 1, -1.0, 1.0)


def _signs(table, photon):
    return popcount_signs(table.d) if photon is None else photon_signs(photon, table.d)


def _check(table):
    if not table.is_analytic and table.total < 1:
        raise EmptyTable("count table is empty")


def t_statistic(table, photon=None):
    """Normalized count asymmetry.

    With ``photon=None`` this is the joint statistic
    ``(D++ + D-- - D+- - D-+) / T``; ``photon=0`` or ``1`` gives the
    single-photon statistic ``(D+ - D-) / T`` of that photon's marginal.
    """
    _check(table)
    return float(np.dot(_signs(table, photon), table.q))


def t_covariance(table, a=None, b=None, nominal_T=None):
    """Multinomial covariance of two sign statistics read from one table.

    Analytic tables give 0 unless ``nominal_T`` is set, in which case the
    covariance expected at that many coincidences is returned.
    """
    _check(table)
    total = table.total if not table.is_analytic else nominal_T
    if not total:
        return 0.0
    sa, sb = _signs(table, a), _signs(table, b)
    q = table.q
    return float((np.dot(sa * sb, q) - np.dot(sa, q) * np.dot(sb, q)) / total)


def moment_from_counts(table, d=None, sign_rule=None):
    """Sign-weighted sum over outcome frequencies, sum_R s_R Q_R.

    ``sign_rule`` is an array of 2^d signs or a callable ``R -> +/-1``;
    the default is ``(-1)^popcount(R)``.
    """
    d = table.d if d is None else d
    if table.d != d:
        raise DimensionMismatch(f"table has {2**table.d} outcomes, expected {2**d}")
    _check(table)
    if sign_rule is None:
        s = popcount_signs(d)
    elif callable(sign_rule):
        s = np.array([sign_rule(r) for r in range(2**d)], dtype=float)
    else:
        s = np.asarray(sign_rule, dtype=float)
        if s.shape != (2**d,):
            raise DimensionMismatch("sign rule length must be 2^d")
    return float(np.dot(s, table.q))


def uncertainty(table):
    """Counting-noise variance D^2 = sum_R (Q_R - Q_R^2) / T (at most 1/T).

    Summed over all 2^d outcomes.  Analytic tables give 0.
    """
    _check(table)
    if table.is_analytic:
        return 0.0
    q = table.q
    return float(np.sum(q - q * q) / table.total)


# ------------------------------------------------------------ calibration


@dataclass
class CalibrationSet:
    """The seven count tables of the calibrated two-photon measurement.

    Roles name (photon-1 mask, photon-2 mask): ``m``/``n`` are the moment
    masks, ``h`` the constant pi/2 mask and ``0`` the constant zero-phase mask.
    """

    tables: dict

    def __post_init__(self):
        missing = [r for r in CAL_ROLES if r not in self.tables]
        if missing:
            raise DimensionMismatch(f"calibration set is missing roles {missing}")

    def statistics(self):
        return {r: t_statistic(self.tables[r]) for r in CAL_ROLES}

    @property
    def T_total(self):
        return sum(self.tables[r].total for r in CAL_ROLES)


def calibration_ratio(t):
    """(T_mn - T_hn - T_mh + T_hh) / (T_00 - T_h0 - T_0h + T_hh) from a role -> value map."""
    num = t["mn"] - t["hn"] - t["mh"] + t["hh"]
    den = t["00"] - t["h0"] - t["0h"] + t["hh"]
    if abs(den) <= DEGENERATE:
        raise DegenerateCalibration(f"calibration denominator {den:.3g} (zero visibility?)")
    return num / den


def calibrated_moment(cal):
    """Joint moment in normalized SLM units, free of the affine detector response."""
    return calibration_ratio(cal.statistics())


def single_ratio(t_n, t_h, t_0):
    den = t_0 - t_h
    if abs(den) <= DEGENERATE:
        raise DegenerateCalibration(f"calibration denominator {den:.3g} (zero visibility?)")
    return (t_n - t_h) / den


def calibrated_single_moment(table_n, table_h, table_0, photon=None):
    """Single-photon moment (T_n - T_pi/2) / (T_0 - T_pi/2).

    Tables may be single-photon (d = 1) or two-photon, in which case
    ``photon`` selects the marginal.
    """
    args = [t_statistic(t, None if t.d == 1 else photon) for t in (table_n, table_h, table_0)]
    return single_ratio(*args)


# ------------------------------------------------------------------ units


def _axis_factor(panel, lens):
    return panel.half_width_mm * lens.crystal_per_slm


def unit_convert(raw, panel, lens, exponents):
    """Convert a normalized-SLM moment to crystal-plane units.

    ``lens`` and ``exponents`` are either a single lens with a total order,
    or one lens per photon with per-photon orders (or the 4-tuple of
    MomentSpec exponents).  Position moments are divided by the
    magnification per order, momentum moments multiplied by the
    momentum factor.
    """
    if isinstance(lens, (tuple, list)):
        exps = tuple(exponents)
        if len(exps) == 4:
            exps = (exps[0] + exps[1], exps[2] + exps[3])
        if len(exps) != len(lens):
            raise DimensionMismatch("need one order per lens")
        factor = 1.0
        for ln, k in zip(lens, exps):
            factor *= _axis_factor(panel, ln) ** int(k)
        return raw * factor
    return raw * _axis_factor(panel, lens) ** int(exponents)


# --------------------------------------------------------------- scanning


def _scan_variance(positions, counts, mode, slit_width):
    w = counts.sum()
    mean = np.dot(positions, counts) / w
    var = np.dot((positions - mean) ** 2, counts) / w
    if mode in ("sum", "diff"):
        # x1 = +/-x2 = s: Var(x1 +/- x2) = 4 Var(s); each slit adds w^2/12 to x1 and x2
        # and their average (x1 +/- x2)/2 sees half of it
        return 4.0 * var - slit_width**2 / 6.0
    return var - slit_width**2 / 12.0


def scanning_variance(hist, n_boot=200, seed=None):
    """Slit-deconvolved variance of a scan with a multinomial bootstrap error."""
    counts = np.asarray(hist.counts, dtype=float)
    if np.count_nonzero(counts) < 5:
        raise InsufficientData("scanning_variance needs at least 5 non-empty bins")
    value = _scan_variance(hist.positions, counts, hist.mode, hist.slit_width)
    seed = hist.seed if seed is None else seed
    rng = _rng.generator(0 if seed is None else seed, _rng.BOOTSTRAP, 0, 0)
    total = int(counts.sum())
    p = counts / total
    boots = [_scan_variance(hist.positions, rng.multinomial(total, p).astype(float), hist.mode, hist.slit_width)
             for _ in range(n_boot)]
    sign = {"single1": "", "single2": "", "sum": "+", "diff": "-"}[hist.mode]
    v = hist.variable
    label = {"single1": f"var({v}1)", "single2": f"var({v}2)"}.get(hist.mode, f"var({v}1{sign}{v}2)")
    return MomentEstimate(label, float(value), float(np.std(boots, ddof=1)), hist.T_total, "scanning",
                          settings_hash=hist.settings_hash)


def measurement_budget(num_photons):
    """Distinct SLM settings for one joint moment with full calibration: 4N - 1."""
    n = int(num_photons)
    if n < 1:
        raise ValueError("need at least one photon")
    return 4 * n - 1
