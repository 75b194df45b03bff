"""Run configuration defaults and strict parsing."""

import json

import pytest

from eegguard.config import RunConfig, load_config
from eegguard.recording import ConfigurationError


def test_default_hyperparameters():
    cfg = RunConfig()
    assert (cfg.sampling.low_rate_min_hz, cfg.sampling.low_rate_max_hz) == (256.0, 512.0)
    assert cfg.sampling.high_rate_min_hz == 1000.0
    assert (cfg.gating.min_window_s, cfg.gating.max_window_s, cfg.gating.margin_s) == (2.0, 10.0, 2.0)
    assert (cfg.guardrails.segments, cfg.guardrails.overlap) == (8, 0.5)
    assert (cfg.backbone.coarse_patch, cfg.backbone.fine_patch) == (64, 256)
    assert (cfg.backbone.model_dim, cfg.backbone.heads, cfg.backbone.layers) == (512, 8, 4)
    assert (len(cfg.backbone.quantile_levels), cfg.backbone.horizon) == (9, 64)
    assert (cfg.calibration.n_cal, cfg.calibration.alpha) == (256, 0.9)
    assert cfg.preprocess.notch_hz in (50.0, 60.0) and cfg.preprocess.band == (0.5, 80.0)
    assert (cfg.tolerances.eps_f_hz, cfg.tolerances.eps_d_s, cfg.tolerances.eps_a_uv) == (0.1, 0.5, 5.0)


def test_round_trip():
    cfg = RunConfig.from_dict({"gating": {"consensus_k": 3}, "seed": 7})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.gating.consensus_k == 3 and again.seed == 7


@pytest.mark.parametrize("doc", [{"colour": 1}, {"gating": {"windw_s": 3}}, {"seed": -1},
                                 {"seed": 1.5}, {"gating": 3}, {"preprocess": {"notch_hz": 55}},
                                 {"calibration": {"alpha": float("nan")}}])
def test_rejects_bad_documents(doc):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(doc)


def test_load_from_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"guardrails": {"segments": 4}}))
    assert load_config(tmp_path / "c.json").guardrails.segments == 4
