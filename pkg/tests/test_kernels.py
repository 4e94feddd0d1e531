import os
import subprocess
import sys

import numpy as np
import pytest

from ancilla_moments import kernels
from ancilla_moments.acquisition import run_direct
from ancilla_moments.optics import LensSystem, NoiseModel, SlmPanel, synthesize_constant, synthesize_mask

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")

PANEL = SlmPanel()
NEAR = LensSystem.imaging_chain([30, 50, 20, 50])


def _inputs(n, seed, spread=0.3):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 4))
    v = rng.random(n)
    a = rng.normal(size=(4, 4)) * spread
    mean = rng.normal(scale=0.05, size=4)
    return z, v, mean, np.ascontiguousarray(a)


@compiled
@pytest.mark.parametrize("masks", [((1, 0), (1, 0)), ((2, 1), (0, 3)), ("h", (1, 0))])
@pytest.mark.parametrize("noise", [(0.0, 1.0, 0.0), (0.05, 0.9, 0.1)])
def test_backends_identical(masks, noise):
    z, v, mean, factor = _inputs(50_000, 3, spread=0.6)  # wide enough to clip
    mk = [synthesize_constant(PANEL, np.pi / 2) if m == "h" else synthesize_mask(PANEL, *m) for m in masks]
    use = [int(u) for m in mk for u in m.axes_used]
    alpha, beta, acc = noise
    args = (z, v, mean, factor, mk[0].cos_map(), mk[1].cos_map(), PANEL.half_width_px,
            alpha, beta, -alpha, beta, acc, use)
    a = kernels.direct_counts(*args, backend="compiled")
    b = kernels.direct_counts(*args, backend="python")
    assert a == b
    assert sum(a[0]) == len(v)


@compiled
def test_run_direct_backend_independent(table_state):
    m = (synthesize_mask(PANEL, 1, 0), synthesize_mask(PANEL, 2, 0))
    a = run_direct(table_state, m, (NEAR, NEAR), NoiseModel(accidental_rate=0.05), T=150_000, seed=2, backend="compiled")
    b = run_direct(table_state, m, (NEAR, NEAR), NoiseModel(accidental_rate=0.05), T=150_000, seed=2, backend="python")
    assert np.array_equal(a.counts, b.counts)
    assert a.clipped_fraction == b.clipped_fraction


def test_environment_selects_fallback():
    code = "from ancilla_moments import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ANCILLA_MOMENTS_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_rejected():
    code = "import ancilla_moments.kernels"
    env = dict(os.environ, ANCILLA_MOMENTS_BACKEND="gpu")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.returncode != 0
