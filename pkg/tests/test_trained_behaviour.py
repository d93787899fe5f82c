"""Qualitative behaviour of the trained default model (uses the cached checkpoint)."""
import numpy as np
import pytest
import torch

from fimce.bench import experiments as ex
from fimce.bench.config import ExperimentConfig
from fimce.neural import export_spectral_weights
from support import ensure_model

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def model():
    return ensure_model("full", 16)[0]


@pytest.mark.xfail(strict=False, reason="not reproduced: the trained filter peaks near mode 14, not at nz")
def test_first_block_spectral_peak_at_nz(model):
    mags = export_spectral_weights(model)["encoder0"]
    k = 8
    assert mags[k] > mags[k - 1] and mags[k] > mags[k + 1], np.round(mags, 4).tolist()


@pytest.mark.xfail(strict=False, reason="not reproduced: OMP gain error is flat in L on this realization")
def test_omp_gain_tracking_degrades_with_scattering(model):
    rows = ex.gain_curve_rows(ExperimentConfig(), model)
    err = {}
    for L in (5, 20):
        truth = np.array([r[4] for r in rows if r[0] == L and r[1] == "truth"])
        omp = np.array([r[4] for r in rows if r[0] == L and r[1] == "omp"])
        err[L] = np.mean(np.abs(omp - truth))
    assert err[20] > err[5], err
