"""Scenario files: TOML documents checked against a bundled JSON schema."""

from __future__ import annotations

import copy
import json
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import AncillaError, ConfigError
from .gstate import MomentSpec, TwoPhotonGaussianState, from_table_variances, random_separable_state
from .optics import LensSystem, NoiseModel, SlmPanel

SCHEMA_FILE = "scenario.schema.json"
DEFAULT_NEAR = {"kind": "imaging", "focal_lengths_mm": [30.0, 50.0, 20.0, 50.0]}
DEFAULT_FAR = {"kind": "fourier", "focal_lengths_mm": [300.0, 300.0, 200.0, 200.0, 500.0]}


def schema():
    text = resources.files("ancilla_moments").joinpath("schema", SCHEMA_FILE).read_text()
    return json.loads(text)


def bundled_scenarios():
    folder = resources.files("ancilla_moments").joinpath("scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def _locate(text, path):
    """Best-effort line number of a dotted key path inside TOML source."""
    if not text or not path:
        return None
    lines = text.splitlines()
    start = 0
    keys = [k for k in path if isinstance(k, str)]
    if not keys:
        return None
    for depth in range(len(keys) - 1, 0, -1):
        header = re.compile(r"^\s*\[\s*" + r"\s*\.\s*".join(map(re.escape, keys[:depth])) + r"\s*\]\s*$")
        hit = next((i for i, ln in enumerate(lines) if header.match(ln)), None)
        if hit is not None:
            start = hit + 1
            keys = keys[depth:]
            break
    key = re.compile(r"^\s*" + re.escape(keys[-1]) + r"\s*=")
    for i in range(start, len(lines)):
        if key.match(lines[i]):
            return i + 1
        if i > start and lines[i].lstrip().startswith("["):
            break
    return start if start else None


def _field(path):
    return ".".join(str(p) for p in path) or "<root>"


@dataclass
class ScenarioConfig:
    data: dict
    source: str = ""
    text: str = field(default="", repr=False)

    # -------------------------------------------------------------- io

    @classmethod
    def from_toml(cls, text, source="<string>"):
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: not valid TOML", [str(exc)]) from exc
        cfg = cls(data, source, text)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path_or_name):
        p = Path(path_or_name)
        if p.suffix != ".toml" and not p.exists():
            name = str(path_or_name)
            if name not in bundled_scenarios():
                raise ConfigError(f"no such scenario {name!r}", [f"bundled: {', '.join(bundled_scenarios())}"])
            text = resources.files("ancilla_moments").joinpath("scenarios", name + ".toml").read_text()
            return cls.from_toml(text, f"bundled:{name}")
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {p}", [str(exc)]) from exc
        return cls.from_toml(text, str(p))

    def to_toml(self):
        return tomli_w.dumps(self.data)

    def copy(self, **overrides):
        data = copy.deepcopy(self.data)
        for dotted, value in overrides.items():
            *head, last = dotted.split(".")
            node = data
            for k in head:
                node = node.setdefault(k, {})
            node[last] = value
        cfg = ScenarioConfig(data, self.source)
        cfg.validate()
        return cfg

    # -------------------------------------------------------- validation

    def validate(self):
        validator = jsonschema.Draft202012Validator(schema())
        problems = []
        for err in sorted(validator.iter_errors(self.data), key=lambda e: list(map(str, e.absolute_path))):
            line = _locate(self.text, list(err.absolute_path))
            where = f"line {line}: " if line else ""
            problems.append(f"{where}{_field(err.absolute_path)}: {err.message}")
        if not problems:
            problems += self._semantic_problems()
        if problems:
            raise ConfigError(f"{self.source}: invalid scenario", problems)
        return self

    def _semantic_problems(self):
        out = []
        for i, text in enumerate(self.section("direct").get("moments", [])):
            try:
                spec = MomentSpec.parse(text)
                if spec.order > 12:
                    raise ValueError("total order above 12")
            except ValueError as exc:
                line = _locate(self.text, ["direct", "moments"])
                out.append(f"{'line %d: ' % line if line else ''}direct.moments.{i}: {exc}")
        try:
            self.build_state()
        except AncillaError as exc:
            out.append(f"state: {exc}")
        try:
            self.build_noise()
        except AncillaError as exc:
            out.append(f"noise: {exc}")
        try:
            self.build_lenses()
            self.build_panel()
        except (AncillaError, ValueError) as exc:
            out.append(f"optics/panel: {exc}")
        grid = self.section("scan").get("grid")
        if grid is not None and (grid[2] < 2 or grid[2] != int(grid[2]) or grid[1] <= grid[0]):
            out.append("scan.grid: need start < stop and an integer number of points >= 2")
        return out

    # ----------------------------------------------------------- access

    @property
    def name(self):
        return self.data["name"]

    def section(self, key):
        return self.data.get(key, {})

    def run(self, key, default=None):
        return self.section("run").get(key, default)

    def build_state(self, index=0):
        st = self.data["state"]
        mean = st.get("mean")
        if st["kind"] == "table":
            return from_table_variances(st["x"], st["p"], st.get("y"), st.get("q"), mean=mean)
        if st["kind"] == "covariance":
            return TwoPhotonGaussianState(mean, np.array(st["cov"], dtype=float))
        rng = np.random.default_rng([int(st.get("seed", 0)), int(index)])
        return random_separable_state(rng, tuple(st.get("sigma_x_mm", (0.08, 0.2))))

    def build_panel(self):
        pn = self.section("panel")
        return SlmPanel(
            pixel_pitch=float(pn.get("pixel_pitch_mm", 0.008)),
            half_width_px=int(pn.get("half_width_px", 540)),
            phase_levels=int(pn.get("phase_levels", 256)),
            shape_px=tuple(pn.get("shape_px", (1080, 960))),
        )

    def _lens(self, spec, wavelength):
        kind = spec["kind"]
        if kind == "imaging":
            if "magnification" in spec:
                return LensSystem.imaging(spec["magnification"], wavelength)
            return LensSystem.imaging_chain(spec.get("focal_lengths_mm", DEFAULT_NEAR["focal_lengths_mm"]), wavelength)
        if "momentum_factor" in spec:
            return LensSystem("fourier", 1.0, float(spec["momentum_factor"]), wavelength)
        f = spec.get("focal_lengths_mm", DEFAULT_FAR["focal_lengths_mm"])
        return LensSystem.fourier(f[0], wavelength) if len(f) == 1 else LensSystem.fourier_chain(f, wavelength)

    def build_lenses(self):
        op = self.section("optics")
        wl = float(op.get("wavelength_nm", 650.0))
        return {"near": self._lens(op.get("near", DEFAULT_NEAR), wl), "far": self._lens(op.get("far", DEFAULT_FAR), wl)}

    def build_noise(self):
        nz = self.section("noise")
        return NoiseModel(tuple(nz.get("alpha", (0.0, 0.0))), tuple(nz.get("beta", (1.0, 1.0))),
                          float(nz.get("accidental_rate", 0.0)), bool(nz.get("poisson", False)))

    def build_apparatus(self):
        from .protocol import Apparatus

        return Apparatus(self.build_panel(), self.build_lenses(), self.build_noise(), bool(self.run("quantize", True)))
