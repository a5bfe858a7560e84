import numpy as np
import pytest

from lpnsr.autodiff import Tape, Tensor, backward, l1_loss
from lpnsr.errors import ShapeError, StepRangeError
from lpnsr.models import (
    ARCHS,
    Denoiser,
    NoisePredictor,
    OracleDenoiser,
    Upsampler,
    denoiser_forward,
    init_params,
    predictor_forward,
)
from lpnsr.data import bicubic_resample

rng = np.random.default_rng(0)
X = rng.standard_normal((2, 1, 8, 8)).astype(np.float32)
Y = rng.standard_normal((2, 1, 8, 8)).astype(np.float32)


@pytest.mark.parametrize("arch", ARCHS)
def test_parameter_budget(arch):
    p = init_params(arch)
    assert p.n_params <= 20_000
    assert init_params(arch, channels=3).n_params <= 20_000


def test_step_embeddings():
    assert [k for k in init_params("denoiser") if k.startswith("step_bias")] == [f"step_bias.{t}" for t in (1, 2, 3, 4)]
    assert [k for k in init_params("predictor") if k.startswith("step_bias")] == [f"step_bias.{t}" for t in (2, 3, 4)]
    assert not [k for k in init_params("upsampler") if k.startswith("step_bias")]


def test_init_deterministic():
    assert init_params("denoiser", 5).checksum() == init_params("denoiser", 5).checksum()
    assert init_params("denoiser", 5).checksum() != init_params("denoiser", 6).checksum()


def test_identity_at_init():
    d = Denoiser(init_params("denoiser"))
    for t in range(1, 5):
        assert d(X, Y, t).data.tobytes() == X.tobytes()
    np.testing.assert_array_equal(NoisePredictor(init_params("predictor"))(X, Y, Y, 3).data, 0)
    lr = X[:, :, :2, :2]
    np.testing.assert_array_equal(Upsampler(init_params("upsampler"))(lr).data, bicubic_resample(lr))


def test_step_conditioning_changes_output():
    p = init_params("denoiser")
    p["conv3.weight"].data[:] = np.random.default_rng(1).standard_normal(p["conv3.weight"].shape)
    p["step_bias.2"].data[:] = 1.0
    assert not np.allclose(denoiser_forward(p, X, Y, 1).data, denoiser_forward(p, X, Y, 2).data)


def test_oracle():
    x0 = np.full(X.shape, 0.3, np.float32)
    o = OracleDenoiser(x0)
    np.testing.assert_array_equal(o(X, Y, 4).data, x0)
    with pytest.raises(ShapeError):
        o(X[:1], Y[:1], 4)


def test_predictor_rejects_t1():
    with pytest.raises(StepRangeError):
        predictor_forward(init_params("predictor"), X, X, Y, 1)
    with pytest.raises(StepRangeError):
        denoiser_forward(init_params("denoiser"), X, Y, 5)


def test_shape_errors():
    with pytest.raises(ShapeError):
        denoiser_forward(init_params("denoiser"), X, Y[:, :, :4], 1)
    with pytest.raises(ShapeError):
        Upsampler(init_params("upsampler"))(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ValueError):
        init_params("vae")


def test_frozen_params_get_no_grad():
    den = init_params("denoiser").set_trainable(False)
    pred = init_params("predictor").set_trainable(True)
    with Tape() as tape:
        x0p = denoiser_forward(den, X, Y, 2)
        loss = l1_loss(predictor_forward(pred, X, x0p, Y, 2), Tensor(np.ones_like(X)))
    backward(loss, tape, leaves=list(pred.tensors.values()))
    assert den.grads() == {}
    assert set(pred.grads()) == set(pred.tensors)


def test_copy_is_independent():
    p = init_params("upsampler")
    q = p.copy()
    q["conv1.weight"].data[:] = 0
    assert p.checksum() != q.checksum()
