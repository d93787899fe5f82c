import json

import numpy as np
import pytest
import torch

from fimce.bench import experiments as ex
from fimce.bench.cli import main
from fimce.bench.config import ConfigError, ExperimentConfig
from fimce.bench.dataset import generate_dataset, pilot_shapes_for, read_dataset, sample_arrays
from fimce.channel import ChannelRealization, synthesize_channel
from fimce.neural import HFNO, FnoConfig, save_checkpoint
from fimce.sparse import angular_grid

torch.set_num_threads(1)

TINY_FNO = {"d_v": 4}


def small_cfg(**kw):
    base = {"trials": 4, "snr_db": [0, 5, 10, 15, 20], "fno": TINY_FNO,
            "train": {"n_samples": 40, "n_val": 8, "epochs": 1}}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def tiny_model(cfg, M=None):
    torch.manual_seed(0)
    return HFNO(cfg.fno_config(M))


def test_config_roundtrip_and_errors(tmp_path):
    cfg = small_cfg(seed=3)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    again = ExperimentConfig.load(p)
    assert again.to_dict() == cfg.to_dict()
    assert again.fno_config().input_channels == 49
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"geometry": {"nx": 8, "bogus": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trials": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    assert cfg.replace(geometry__nx=10).geometry.nx == 10
    assert ExperimentConfig().knn_config(4).k_bar == 4


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.geometry.nx, cfg.geometry.nz, cfg.pilots.M, cfg.channel.K) == (8, 8, 16, 4)
    assert (cfg.channel.L, cfg.channel.G, cfg.estimators.k_bar, cfg.trials) == (5, 6, 5, 500)
    assert (cfg.fno.d_v, cfg.fno.l_enc, cfg.train.n_samples, cfg.train.n_val, cfg.train.epochs) == (64, 2, 20000, 1000, 50)
    assert cfg.bound == pytest.approx(0.5 * 299_792_458.0 / 28e9)


def test_dataset_roundtrip(tmp_path):
    cfg = small_cfg()
    a = generate_dataset(cfg, "train", 100, 7, tmp_path / "a.fimd")
    b = generate_dataset(cfg, "train", 100, 7, tmp_path / "b.fimd")
    assert a.read_bytes() == b.read_bytes()
    f = read_dataset(a)
    assert len(f) == 100 and f.manifest["count"] == 100
    ds = f.to_dataset()
    assert ds.features().shape == (100, 49, 64)
    ref = sample_arrays(cfg, "train", 100, 7)
    np.testing.assert_array_equal(ds.targets, ref.targets)
    np.testing.assert_allclose(ds.truth, ref.truth, rtol=1e-6, atol=1e-6)
    assert set(np.unique(ds.snr_db)) <= set(range(21))
    assert read_dataset(a, mmap=False).records.tobytes() == f.records.tobytes()


def test_dataset_split_rules(tmp_path):
    cfg = small_cfg()
    with pytest.raises(ValueError):
        sample_arrays(cfg, "test", 3, 0)
    t = sample_arrays(cfg, "test", 3, 0, snr_db=10)
    assert np.all(t.snr_db == 10)
    bad = tmp_path / "x.fimd"
    bad.write_bytes(b"nope\n")
    with pytest.raises(ValueError):
        read_dataset(bad)


def test_bench_row_count_and_schema():
    cfg = small_cfg()
    rows = ex.run_benchmark(cfg, {16: tiny_model(cfg)})
    assert len(rows) == 25
    for r in rows:
        assert r.nmse_mean >= 0
        assert r.nmse_db == pytest.approx(10 * np.log10(r.nmse_mean))
    assert ex.BENCH_HEADER == ("estimator", "snr_db", "M", "N", "L", "trials", "nmse_mean", "nmse_db", "stderr")


def test_bench_missing_model():
    with pytest.raises(ex.MissingModelError):
        ex.run_benchmark(small_cfg(), {})


def test_nn_exact_at_pilot_shape_noiseless():
    cfg = small_cfg()
    Z = pilot_shapes_for(cfg)
    draws = ex.draw_trials(cfg, Z, 5, 0, target_fn=lambda rng: Z[rng.integers(len(Z))])
    res = ex.evaluate_cell(cfg, Z, draws, np.inf, ["nn"])
    assert np.all(res["nn"] == 0)


def test_omp_noiseless_on_grid_single_path():
    cfg = small_cfg()
    Z = pilot_shapes_for(cfg)
    geom = cfg.array_geometry()
    grid = angular_grid(16, 16)
    rng = np.random.default_rng(0)
    draws = []
    for _ in range(10):
        d = int(rng.integers(grid.D))
        real = ChannelRealization.from_paths([grid.theta[d]], [grid.phi[d]], [rng.standard_normal() + 1j])
        target = rng.uniform(-cfg.bound, cfg.bound, 64)
        H = synthesize_channel(real, np.vstack([Z, target]), geom)
        draws.append(ex.TrialDraw(H[:-1], target, H[-1], np.zeros_like(H[:-1])))
    res = ex.evaluate_cell(cfg, Z, draws, np.inf, ["omp"])
    assert ex.summarize(res["omp"])[0] < 1e-12


def test_trials_independent_of_execution_order():
    cfg = small_cfg(snr_db=[10])
    Z = pilot_shapes_for(cfg)
    draws = ex.draw_trials(cfg, Z, 6, 0)
    forward = ex.evaluate_cell(cfg, Z, draws, 10, ["knn", "omp"])
    backward = ex.evaluate_cell(cfg, Z, draws[::-1], 10, ["knn", "omp"])
    threaded = ex.evaluate_cell(cfg, Z, draws, 10, ["knn", "omp"], threads=3)
    for k in forward:
        np.testing.assert_array_equal(forward[k], backward[k][::-1])
        np.testing.assert_array_equal(forward[k], threaded[k])
    # a trial's stream depends only on (seed, index)
    tail = ex.draw_trials(cfg, Z, 3, 0)
    np.testing.assert_array_equal(tail[2].truth, draws[2].truth)


def test_generalization_rows():
    cfg = small_cfg(trials=2)
    rows = ex.run_generalization(cfg, tiny_model(cfg), finetune_samples=16, finetune_epochs=1)
    sizes = [(r[1], r[2], r[4]) for r in rows if r[0] == "size"]
    assert sizes == [(n, n, m) for n in (10, 12, 14) for m in ("zero_shot", "fine_tuned")]
    bounds = [(r[3], r[4]) for r in rows if r[0] == "deformation"]
    assert bounds == [(b, m) for b in (0.25, 0.5, 1.0) for m in ("zero_shot", "knn")]
    assert all(len(r) == len(ex.GENERALIZATION_HEADER) for r in rows)


def test_generalization_rejects_bad_size():
    cfg = small_cfg(trials=1)
    with pytest.raises(ValueError):
        ex.run_generalization(cfg, tiny_model(cfg), sizes=((9, 9),), bounds=(), finetune=False)


def test_interpretability_bundle():
    cfg = small_cfg()
    bundle = ex.run_interpretability(cfg, tiny_model(cfg))
    assert set(bundle) == {"spectral_weights", "features", "gain_curves"}
    _, curves = bundle["gain_curves"]
    n_delta = 21
    for L in (5, 20):
        for method in ("truth", "hfno", "omp"):
            assert sum(1 for r in curves if r[0] == L and r[1] == method) == 64 * n_delta
    _, feats = bundle["features"]
    assert {r[0] for r in feats} == {"encoder0", "bottleneck"}
    assert sum(1 for r in feats if r[0] == "encoder0") == 3 * 64
    assert sum(1 for r in feats if r[0] == "bottleneck") == 3 * 16


def test_truth_curve_at_zero_displacement():
    cfg = small_cfg()
    rows = ex.gain_curve_rows(cfg, tiny_model(cfg), L_values=(5,), n_delta=5)
    # delta grid point 0 is the middle of an odd grid; the undeformed channel of trial 0
    from fimce.channel import observe_pilots, sample_channel_realization

    rng = np.random.default_rng([cfg.seed, 0])
    real = sample_channel_realization(cfg.channel_params(), rng)
    flat = np.abs(synthesize_channel(real, np.zeros(64), cfg.array_geometry()))
    got = {(r[2]): r[4] for r in rows if r[1] == "truth" and r[3] == 0.0}
    assert len(got) == 64
    np.testing.assert_allclose([got[n] for n in range(64)], flat, rtol=1e-12)


def test_coherence_rows():
    rows = ex.run_coherence(small_cfg(), random_draws=5)
    assert [r[0] for r in rows] == ["fourier", "random", "greedy"]
    assert all(0 <= r[4] <= 1 for r in rows)


def _run_cli(tmp_path, *args):
    return main(["--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "out"), *args])


def test_cli_bench_reproducible(tmp_path):
    cfg = small_cfg(trials=3, snr_db=[0, 20])
    (tmp_path / "cfg.json").write_text(cfg.to_json())
    model_path = save_checkpoint(tiny_model(cfg), tmp_path / "m.ckpt")
    assert _run_cli(tmp_path, "bench", "--model", str(model_path)) == 0
    first = (tmp_path / "out" / "bench.csv").read_bytes()
    assert _run_cli(tmp_path, "--threads", "2", "bench", "--model", str(model_path)) == 0
    assert (tmp_path / "out" / "bench.csv").read_bytes() == first
    lines = first.decode().splitlines()
    assert lines[0] == ",".join(ex.BENCH_HEADER) and len(lines) == 11
    echoed = json.loads((tmp_path / "out" / "bench.config.json").read_text())
    assert echoed["trials"] == 3


def test_cli_errors(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"nonsense": 1}))
    assert _run_cli(tmp_path, "coherence") == 2
    (tmp_path / "cfg.json").write_text(small_cfg().to_json())
    assert _run_cli(tmp_path, "bench") == 2
    assert "not found" in capsys.readouterr().err
    assert _run_cli(tmp_path, "bench", "--estimators", "nn,magic") == 2


def test_cli_train_gen_and_coherence(tmp_path):
    (tmp_path / "cfg.json").write_text(small_cfg().to_json())
    assert _run_cli(tmp_path, "gen-data", "--count", "5") == 0
    assert len(read_dataset(tmp_path / "out" / "train.fimd")) == 5
    assert _run_cli(tmp_path, "train") == 0
    assert (tmp_path / "out" / "hfno_M16.ckpt").exists()
    assert _run_cli(tmp_path, "bench", "--estimators", "nn,hfno") == 0
    assert _run_cli(tmp_path, "coherence", "--draws", "3") == 0
    assert len((tmp_path / "out" / "coherence.csv").read_text().splitlines()) == 4
