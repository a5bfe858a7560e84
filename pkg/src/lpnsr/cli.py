"""Command-line entry point: ``lpnsr <command> [--out-dir DIR] [--section.key VALUE ...]``."""

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .artifacts import has_network, load_corpus, load_network, save_corpus, save_network
from .autodiff import Tensor
from .config import KEYS, load_config
from .data import make_corpus
from .errors import ConfigError, LPNSRError, MissingArtifactError, ShapeError, TrainingDivergedError
from .io import export_pgm, read_tensor, write_tensor
from .models import Denoiser, NoisePredictor, OracleDenoiser, Upsampler
from .sampling import Networks, compare_strategies, infer, step_sweep, write_table
from .training import denoiser_val_l1, pretrain_denoiser, pretrain_upsampler, train_predictor
from .verify import run_all_verifications

log = logging.getLogger("lpnsr")

COMMANDS = {
    "gen-data": "generate the synthetic train/val/test corpus",
    "pretrain-denoiser": "train the x0-predicting denoiser on forward-marginal states",
    "pretrain-upsampler": "train the regression upsampler used for regression init",
    "train-predictor": "train the noise predictor end to end through the reverse chain",
    "infer": "super-resolve an LR tensor file",
    "eval-steps": "step-count x init-mode sweep on the test split",
    "eval-strategies": "noise-strategy comparison on the test split",
    "verify": "run the numerical verification suite",
}
# shortcut flag -> config key
SHORTCUTS = {"seed": "run.seed", "steps": "infer.steps", "init": "infer.init", "strategy": "infer.strategy"}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="out", help="directory for every artifact (default: out)")
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int, help="shortcut for --run.seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    keys = common.add_argument_group("configuration keys (defaults <- --config file <- flags)")
    for key, (kind, default, text) in KEYS.items():
        keys.add_argument(f"--{key}", dest=key, metavar=kind.__name__.upper(),
                          help=f"{text} (default: {default})")

    parser = argparse.ArgumentParser(prog="lpnsr", description="LR-guided noise prediction for few-step diffusion SR")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "infer":
            p.add_argument("--input", required=True, help="LR image(s) as an LTEN file: [h,w], [C,h,w] or [B,C,h,w]")
            p.add_argument("--target", help="HR ground truth LTEN (needed by the 'optimal' strategy)")
            p.add_argument("--steps", type=int, help="shortcut for --infer.steps")
            p.add_argument("--init", choices=("bicubic", "regression"), help="shortcut for --infer.init")
            p.add_argument("--strategy", help="shortcut for --infer.strategy")
            p.add_argument("--pgm", action="store_true", help="also write PGM previews of inputs and outputs")
        if name == "eval-strategies":
            p.add_argument("--oracle", action="store_true", help="replace the denoiser by the ground-truth oracle")
    return parser


def _overrides(args):
    out = {key: getattr(args, key) for key in KEYS if getattr(args, key, None) is not None}
    for flag, key in SHORTCUTS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


class Run:
    def __init__(self, args, cfg):
        self.args, self.cfg = args, cfg
        self.out = Path(args.out_dir)
        self.corpus_dir = self.out / "corpus"
        self.ckpt_dir = self.out / "checkpoints"
        self.reports = self.out / "reports"
        self.results = self.out / "results"
        self.sched = cfg.schedule()

    def networks(self, need=("denoiser",), optional=()):
        loaded = {}
        for arch in tuple(need) + tuple(optional):
            if arch in need or has_network(self.ckpt_dir, arch):
                loaded[arch] = load_network(self.ckpt_dir, arch, self.sched)
        return Networks(
            Denoiser(loaded["denoiser"]),
            NoisePredictor(loaded["predictor"]) if "predictor" in loaded else None,
            Upsampler(loaded["upsampler"]) if "upsampler" in loaded else None,
        )

    def write_report(self, phase, report, path):
        report.checkpoint = str(path)
        self.reports.mkdir(parents=True, exist_ok=True)
        report.write(self.reports / f"{phase}.tsv")

    def eval_nets(self):
        return self.networks(need=("denoiser", "predictor", "upsampler"))

    def table(self, name, rows):
        self.results.mkdir(parents=True, exist_ok=True)
        path = self.results / name
        write_table(path, rows, include_runtime=self.cfg["eval.record_runtime"])
        return path


def cmd_gen_data(run):
    corpus = make_corpus(run.cfg.corpus())
    for split in corpus.values():
        save_corpus(split, run.corpus_dir)
    sizes = "/".join(str(len(corpus[s])) for s in ("train", "val", "test"))
    return f"gen-data: wrote {sizes} train/val/test pairs to {run.corpus_dir}"


def cmd_pretrain_denoiser(run):
    train, val = load_corpus(run.corpus_dir, "train"), load_corpus(run.corpus_dir, "val")
    params, report = pretrain_denoiser(train, run.sched, run.cfg.train("denoiser"), val=val)
    path = save_network(run.ckpt_dir, params, run.sched)
    run.write_report("denoiser", report, path)
    model, ident = denoiser_val_l1(params, val, run.sched, run.cfg.seed)
    per_t = " ".join(f"t{t + 1}={m:.4f}/{i:.4f}" for t, (m, i) in enumerate(zip(model, ident)))
    return f"pretrain-denoiser: val L1 model/identity {per_t}; saved {path}"


def cmd_pretrain_upsampler(run):
    train, val = load_corpus(run.corpus_dir, "train"), load_corpus(run.corpus_dir, "val")
    params, report = pretrain_upsampler(train, run.cfg.train("upsampler"), val=val)
    path = save_network(run.ckpt_dir, params)
    run.write_report("upsampler", report, path)
    flag = "beats" if report.flags["beats_bicubic"] else "DOES NOT beat"
    return (f"pretrain-upsampler: val L1 {report.final[2]:.5f} {flag} bicubic "
            f"{report.flags['bicubic_val_l1']:.5f}; saved {path}")


def cmd_train_predictor(run):
    denoiser = load_network(run.ckpt_dir, "denoiser", run.sched)
    train, val = load_corpus(run.corpus_dir, "train"), load_corpus(run.corpus_dir, "val")
    before = denoiser.checksum()
    params, report = train_predictor(train, run.sched, denoiser, run.cfg.train("predictor"), val=val)
    if denoiser.checksum() != before:
        raise LPNSRError("denoiser parameters changed during predictor training")
    path = save_network(run.ckpt_dir, params, run.sched)
    run.write_report("predictor", report, path)
    first, last = report.initial[4], report.final[4]
    return f"train-predictor: val loss_total {first:.5f} -> {last:.5f}; saved {path}"


def _as_batch(arr):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        return arr[None, None]
    if arr.ndim == 3:
        return arr[None]
    if arr.ndim == 4:
        return arr
    raise ShapeError(f"expected a 2-, 3- or 4-d tensor, got shape {arr.shape}")


def cmd_infer(run):
    cfg = run.cfg.inference()
    y_lr = _as_batch(read_tensor(run.args.input))
    x0 = _as_batch(read_tensor(run.args.target)) if run.args.target else None
    nets = run.networks(optional=("predictor", "upsampler"))
    out = infer(Tensor(y_lr), cfg, nets, run.sched, x0=x0).numpy()
    run.results.mkdir(parents=True, exist_ok=True)
    path = run.results / "infer.lten"
    write_tensor(path, out)
    if run.args.pgm:
        for i in range(out.shape[0]):
            for c in range(out.shape[1]):
                export_pgm(run.results / f"infer_{i:03d}_c{c}_sr.pgm", out[i, c])
                export_pgm(run.results / f"infer_{i:03d}_c{c}_lr.pgm", y_lr[i, c])
    return f"infer: {cfg.label()} on {y_lr.shape[0]} image(s) -> {path}"


def cmd_eval_steps(run):
    test = load_corpus(run.corpus_dir, "test")
    rows = step_sweep(test, run.eval_nets(), run.sched, run.cfg.eval_seeds())
    path = run.table("steps.tsv", rows)
    best = max(rows, key=lambda r: r.psnr)
    return f"eval-steps: {len(rows)} rows -> {path}; best PSNR {best.psnr:.3f} dB ({best.config})"


def cmd_eval_strategies(run):
    test = load_corpus(run.corpus_dir, "test")
    nets = run.eval_nets()
    oracle = OracleDenoiser if run.args.oracle else None
    rows = compare_strategies(test, nets, run.sched, run.cfg.eval_seeds(), init=run.cfg["infer.init"],
                              oracle_factory=oracle)
    path = run.table("strategies.tsv", rows)
    summary = ", ".join(f"{r.config.rsplit('/', 1)[1]} {r.psnr:.3f}" for r in rows)
    return f"eval-strategies: PSNR {summary} -> {path}"


def cmd_verify(run):
    denoiser = None
    if has_network(run.ckpt_dir, "denoiser"):
        denoiser = Denoiser(load_network(run.ckpt_dir, "denoiser", run.sched))
    report = run_all_verifications(run.sched, run.cfg.seed, denoiser=denoiser)
    run.results.mkdir(parents=True, exist_ok=True)
    path = run.results / "verify.txt"
    path.write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    status = "all checks passed" if report.passed else "FAILED"
    return f"verify: {status} ({len(report.checks)} checks) -> {path}", (0 if report.passed else 1)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain-denoiser": cmd_pretrain_denoiser,
    "pretrain-upsampler": cmd_pretrain_upsampler,
    "train-predictor": cmd_train_predictor,
    "infer": cmd_infer,
    "eval-steps": cmd_eval_steps,
    "eval-strategies": cmd_eval_strategies,
    "verify": cmd_verify,
}


def _thread_limit():
    value = os.environ.get("LPNSR_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"LPNSR_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"LPNSR_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"lpnsr {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    run = Run(args, cfg)
    try:
        with _thread_limit():
            cfg.echo(run.out / "config" / f"{args.command}.conf")
            result = HANDLERS[args.command](run)
    except ConfigError as exc:
        print(f"lpnsr {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        dump = getattr(exc, "dump", {})
        run.reports.mkdir(parents=True, exist_ok=True)
        path = run.reports / f"{dump.get('phase', 'training')}.diverged.txt"
        path.write_text("".join(f"{k}\t{v}\n" for k, v in dump.items()), encoding="utf-8")
        print(f"lpnsr {args.command}: {exc}; state dump in {path}", file=sys.stderr)
        return 1
    except MissingArtifactError as exc:
        print(f"lpnsr {args.command}: missing artifact: {exc}", file=sys.stderr)
        return 1
    except (LPNSRError, OSError, ValueError) as exc:
        print(f"lpnsr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    line, code = result if isinstance(result, tuple) else (result, 0)
    print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
