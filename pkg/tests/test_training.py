import math
from dataclasses import replace

import numpy as np
import pytest

from lpnsr.data import CorpusConfig, make_split
from lpnsr.errors import ConfigError, MissingArtifactError, TrainingDivergedError
from lpnsr.models import init_params
from lpnsr.schedule import build_schedule
from lpnsr.training import (
    TrainConfig,
    TrainReport,
    denoiser_val_l1,
    predictor_gradients,
    pretrain_denoiser,
    pretrain_upsampler,
    train_predictor,
)

SCHED = build_schedule()
CORPUS = make_split(CorpusConfig(n_train=16, n_val=4, n_test=4), "train")
VAL = make_split(CorpusConfig(n_train=16, n_val=4, n_test=4), "val")


def cfg(phase, iterations, **kw):
    return TrainConfig(phase, iterations, batch=4, width=4, eval_every=10, **kw)


@pytest.fixture(scope="module")
def denoiser():
    params, _ = pretrain_denoiser(CORPUS, SCHED, cfg("denoiser", 20), VAL)
    return params


def test_denoiser_report_and_determinism():
    p1, rep = pretrain_denoiser(CORPUS, SCHED, cfg("denoiser", 25), VAL)
    p2, _ = pretrain_denoiser(CORPUS, SCHED, cfg("denoiser", 25), VAL)
    assert p1.checksum() == p2.checksum()
    assert [r[0] for r in rep.rows] == [0, 10, 20, 25]
    assert math.isnan(rep.rows[0][1]) and all(math.isfinite(r[1]) for r in rep.rows[1:])
    text = rep.to_text().splitlines()
    assert text[0] == "iter\tloss\tval_l1" and text[1].startswith("0\tnan\t")
    assert not any(t.requires_grad for t in p1.values())


def test_denoiser_learns_and_beats_identity():
    p, rep = pretrain_denoiser(CORPUS, SCHED, cfg("denoiser", 120, lr=3e-3), VAL)
    assert rep.final[2] < rep.initial[2]
    model, ident = denoiser_val_l1(p, VAL, SCHED)
    assert model.shape == (4,) and np.all(model[1:] < ident[1:])


def test_zero_iterations_leave_params_unchanged():
    init = init_params("denoiser", 0, width=4)
    p, rep = pretrain_denoiser(CORPUS, SCHED, cfg("denoiser", 0), VAL)
    assert p.checksum() == init.checksum()
    assert len(rep.rows) == 1


def test_upsampler_flags():
    _, rep = pretrain_upsampler(CORPUS, cfg("upsampler", 30), VAL)
    assert rep.flags["bicubic_val_l1"] > 0
    assert isinstance(rep.flags["beats_bicubic"], (bool, np.bool_))


def test_predictor_needs_denoiser():
    with pytest.raises(MissingArtifactError, match="pretrain-denoiser"):
        train_predictor(CORPUS, SCHED, None, cfg("predictor", 1))


def test_predictor_never_touches_denoiser(denoiser):
    before = denoiser.checksum()
    p, rep = train_predictor(CORPUS, SCHED, denoiser, cfg("predictor", 12), VAL)
    assert denoiser.checksum() == before
    assert p.checksum() != init_params("predictor", 0, width=4).checksum()
    assert len(rep.rows[0]) == 5 and math.isfinite(rep.final[4])


def test_all_zero_weights_is_noop(denoiser):
    c = cfg("predictor", 5, lambda_1=0.0, lambda_l=0.0, lambda_g=0.0, weight_decay=0.0)
    start = init_params("predictor", 3, width=4)
    start["conv3.weight"].data[:] = 0.1
    ref = start.checksum()
    p, rep = train_predictor(CORPUS, SCHED, denoiser, c, VAL, params=start)
    assert p.checksum() == ref
    assert rep.final[4] == 0.0


def test_gradients_frozen_denoiser(denoiser):
    pred = init_params("predictor", 0, width=4)
    grads = predictor_gradients(pred, denoiser, CORPUS, SCHED, cfg("predictor", 1))
    assert all(not g.any() for g in grads["denoiser"].values())
    assert set(grads["denoiser"]) == set(denoiser)
    # the zero output layer blocks gradients upstream on the very first iteration
    assert np.abs(grads["predictor"]["conv3.weight"]).sum() > 0
    assert np.abs(grads["predictor"]["conv3.bias"]).sum() > 0


def test_divergence_dump():
    bad = make_split(CorpusConfig(n_train=4, n_val=1, n_test=1), "train")
    bad.samples[0].x0 = np.full_like(bad.samples[0].x0, np.nan)
    c = replace(cfg("upsampler", 20), batch=4)
    with pytest.raises(TrainingDivergedError) as info:
        pretrain_upsampler(bad, c, VAL)
    dump = info.value.dump
    # the poisoned sample is drawn at some early iteration, not necessarily the first
    assert dump["phase"] == "upsampler" and 0 <= dump["iteration"] < 20
    assert math.isnan(dump["loss"]) and dump["adam_step"] == dump["iteration"]
    assert "norm.conv1.weight" in dump and dump["finite.conv1.weight"] is True


def test_report_rows_increase():
    rep = TrainReport("denoiser")
    rep.add(0, float("nan"), 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        rep.add(0, 1.0, 1.0, 0.0, 0.0)


@pytest.mark.parametrize("bad", [dict(phase="gan"), dict(iterations=-1), dict(batch=0), dict(lr=0.0),
                                 dict(beta1=1.0), dict(weight_decay=-1.0), dict(eval_every=0),
                                 dict(lambda_l=-0.5)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        replace(TrainConfig(), **bad).validate()


def test_full_scale_lr_accepted():
    assert TrainConfig(lr=5e-5).validate().adam().lr == 5e-5
