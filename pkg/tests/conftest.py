import pytest

TINY_CONFIG = """\
corpus.n_train = 16
corpus.n_val = 4
corpus.n_test = 4
train.denoiser_iterations = 6
train.upsampler_iterations = 6
train.predictor_iterations = 4
train.batch = 4
train.width = 4
train.eval_every = 2
eval.seeds = 2
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONFIG)
    return path

