"""Flat ``section.key = value`` run configuration: defaults, file, then flag overrides."""

from dataclasses import dataclass, field
from pathlib import Path

from .data import CorpusConfig
from .errors import ConfigError
from .sampling import InferenceConfig
from .schedule import build_schedule
from .training import TrainConfig

# key -> (type, default, help)
KEYS = {
    "run.seed": (int, 0, "global seed for data, training and inference"),
    "schedule.T": (int, 4, "number of diffusion steps"),
    "schedule.eta_min": (float, 0.001, "shifting sequence at t = 1"),
    "schedule.eta_max": (float, 0.999, "shifting sequence at t = T"),
    "schedule.kappa": (float, 2.0, "noise scale"),
    "corpus.n_train": (int, 2048, "training images"),
    "corpus.n_val": (int, 128, "validation images"),
    "corpus.n_test": (int, 128, "test images"),
    "corpus.size": (int, 32, "HR image side (multiple of 4)"),
    "corpus.channels": (int, 1, "image channels (1 or 3)"),
    "corpus.blur_min": (float, 0.5, "smallest degradation blur sigma"),
    "corpus.blur_max": (float, 1.5, "largest degradation blur sigma"),
    "corpus.noise_min": (float, 0.0, "smallest degradation noise sigma"),
    "corpus.noise_max": (float, 0.05, "largest degradation noise sigma"),
    "train.denoiser_iterations": (int, 5000, "denoiser pretraining iterations"),
    "train.upsampler_iterations": (int, 3000, "upsampler pretraining iterations"),
    "train.predictor_iterations": (int, 3000, "noise predictor training iterations"),
    "train.batch": (int, 8, "minibatch size"),
    "train.lr": (float, 1e-3, "Adam learning rate"),
    "train.beta1": (float, 0.9, "Adam beta1"),
    "train.beta2": (float, 0.999, "Adam beta2"),
    "train.eps": (float, 1e-8, "Adam epsilon"),
    "train.weight_decay": (float, 1e-4, "decoupled weight decay"),
    "train.lambda_1": (float, 1.0, "L1 loss weight"),
    "train.lambda_l": (float, 1.0, "perceptual proxy weight"),
    "train.lambda_g": (float, 0.1, "adversarial slot weight (term is zero)"),
    "train.eval_every": (int, 250, "validation/report cadence in iterations"),
    "train.width": (int, 16, "conv channels per network layer"),
    "infer.steps": (int, 4, "starting step t_start (1..T)"),
    "infer.init": (str, "regression", "starting image: bicubic or regression"),
    "infer.strategy": (str, "predicted", "noise: random, predicted, approx_optimal, optimal, zero"),
    "eval.seeds": (int, 3, "noise seeds averaged per evaluation row"),
    "eval.record_runtime": (bool, False, "add a (non-deterministic) runtime column to result tables"),
}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def convert(key, value):
    if key not in KEYS:
        raise ConfigError(f"unknown configuration key (known: {', '.join(sorted(KEYS))})", key=key)
    kind = KEYS[key][0]
    if not isinstance(value, str):
        return kind(value)
    try:
        return _parse_bool(value) if kind is bool else kind(value.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {kind.__name__} ({exc})", key=key) from None


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key", key=key)
        values[key] = convert(key, value)
    return values


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in KEYS.items()})

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self["run.seed"]

    def schedule(self):
        return build_schedule(self["schedule.T"], self["schedule.eta_min"], self["schedule.eta_max"],
                              self["schedule.kappa"])

    def corpus(self):
        keys = ("n_train", "n_val", "n_test", "size", "channels", "blur_min", "blur_max", "noise_min", "noise_max")
        return CorpusConfig(**{k: self[f"corpus.{k}"] for k in keys}, seed=self.seed)

    def train(self, phase):
        opts = {k: self[f"train.{k}"] for k in ("batch", "lr", "beta1", "beta2", "eps", "weight_decay",
                                                "lambda_1", "lambda_l", "lambda_g", "eval_every", "width")}
        return TrainConfig(phase=phase, iterations=self[f"train.{phase}_iterations"], seed=self.seed, **opts)

    def inference(self):
        return InferenceConfig(self["infer.steps"], self["infer.init"], self["infer.strategy"], self.seed)

    def eval_seeds(self):
        return tuple(self.seed + k for k in range(self["eval.seeds"]))

    def validate(self):
        """Check every section up front so no command starts work on a bad config."""
        sched = self.schedule()
        self.corpus().validate()
        for phase in ("denoiser", "upsampler", "predictor"):
            cfg = self.train(phase)
            if cfg.iterations < 1:
                raise ConfigError(f"must be >= 1, got {cfg.iterations}", key=f"train.{phase}_iterations")
            cfg.validate()
        try:
            infer_cfg = self.inference()
        except ValueError as exc:
            raise ConfigError(str(exc), key="infer.strategy") from None
        if not 1 <= infer_cfg.t_start <= sched.T:
            raise ConfigError(f"must lie in 1..{sched.T}, got {infer_cfg.t_start}", key="infer.steps")
        if self["eval.seeds"] < 1:
            raise ConfigError(f"must be >= 1, got {self['eval.seeds']}", key="eval.seeds")
        return self

    def to_text(self):
        return "".join(f"{key} = {_fmt(self.values[key])}\n" for key in sorted(self.values))

    def echo(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path`` (if any), then ``overrides``; validated."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        cfg.values.update(parse_config_text(text, str(path)))
    for key, value in (overrides or {}).items():
        cfg.values[key] = convert(key, value)
    return cfg.validate()
