"""On-disk pipeline artifacts: corpus splits, LPNW checkpoints and their manifest."""

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import Corpus, PairedSample
from .errors import (
    ArchitectureMismatchError,
    FormatError,
    MissingArtifactError,
    ScheduleMismatchError,
    VersionError,
)
from .io import read_tensor, write_tensor
from .models import ARCHS, NetworkParams, init_params

LPNW_MAGIC = b"LPNW"
LPNW_VERSION = 1
MANIFEST = "manifest.txt"
PRODUCER = {"denoiser": "pretrain-denoiser", "predictor": "train-predictor", "upsampler": "pretrain-upsampler"}


# LPNW ----------------------------------------------------------------------

def encode_weights(tensors):
    """Serialise an ordered ``name -> array`` mapping."""
    out = [LPNW_MAGIC, struct.pack("<II", LPNW_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_weights(buf):
    def take(fmt, pos):
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("LPNW: truncated file")
        return struct.unpack_from(fmt, buf, pos), pos + size

    if len(buf) < 4 or buf[:4] != LPNW_MAGIC:
        raise FormatError(f"LPNW: bad magic {bytes(buf[:4])!r}")
    (version, count), pos = take("<II", 4)
    if version != LPNW_VERSION:
        raise VersionError(f"LPNW: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (n,), pos = take("<H", pos)
        if pos + n > len(buf):
            raise FormatError("LPNW: truncated tensor name")
        try:
            name = bytes(buf[pos:pos + n]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"LPNW: tensor name is not UTF-8 ({exc})") from None
        pos += n
        (ndim,), pos = take("<I", pos)
        dims, pos = take(f"<{ndim}I", pos)
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise FormatError(f"LPNW: truncated payload for {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"LPNW: {len(buf) - pos} trailing bytes")
    return tensors


# manifest ------------------------------------------------------------------

def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.exists():
        return {}
    entries = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    return entries


def write_manifest(directory, entries):
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    (Path(directory) / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _schedule_entries(arch, sched):
    if sched is None:
        return {}
    return {
        f"{arch}.schedule.T": str(sched.T),
        f"{arch}.schedule.kappa": repr(float(sched.kappa)),
        f"{arch}.schedule.eta": ",".join(repr(float(e)) for e in sched.eta),
    }


def save_network(directory, params, sched=None):
    """Write ``<arch>.lpnw`` and record it in the directory manifest; returns the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{params.arch}.lpnw"
    path.write_bytes(encode_weights(params.tensors))
    entries = {k: v for k, v in read_manifest(directory).items() if not k.startswith(params.arch + ".")}
    entries.update({
        f"{params.arch}.file": path.name,
        f"{params.arch}.arch": params.arch,
        f"{params.arch}.channels": str(params.channels),
        f"{params.arch}.width": str(params.width),
        f"{params.arch}.T": str(params.T),
    })
    # the upsampler never sees a diffusion state, so it carries no schedule
    if params.arch != "upsampler":
        entries.update(_schedule_entries(params.arch, sched))
    write_manifest(directory, entries)
    return path


def has_network(directory, arch):
    return f"{arch}.file" in read_manifest(directory)


def load_network(directory, arch, sched=None):
    """Read a checkpoint, checking its architecture tag, tensor layout and schedule."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}")
    directory = Path(directory)
    entries = read_manifest(directory)
    if f"{arch}.file" not in entries:
        raise MissingArtifactError(f"no {arch} checkpoint in {directory} (run {PRODUCER[arch]})")
    if entries.get(f"{arch}.arch") != arch:
        raise ArchitectureMismatchError(f"manifest tags {entries[f'{arch}.file']} as {entries.get(f'{arch}.arch')!r}, expected {arch!r}")
    path = directory / entries[f"{arch}.file"]
    if not path.exists():
        raise MissingArtifactError(f"checkpoint file {path} listed in manifest is missing")
    tensors = decode_weights(path.read_bytes())
    try:
        channels, width, T = (int(entries[f"{arch}.{k}"]) for k in ("channels", "width", "T"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"manifest entry for {arch} is incomplete ({exc})") from None
    if sched is not None and arch != "upsampler":
        recorded = {k: entries.get(k) for k in _schedule_entries(arch, sched)}
        if recorded != _schedule_entries(arch, sched):
            raise ScheduleMismatchError(
                f"{arch} checkpoint was trained with T={recorded[f'{arch}.schedule.T']}, "
                f"kappa={recorded[f'{arch}.schedule.kappa']}, eta={recorded[f'{arch}.schedule.eta']}; "
                f"this run uses T={sched.T}, kappa={sched.kappa!r}"
            )
    template = init_params(arch, 0, channels, width, T)
    expected = {k: v.shape for k, v in template.items()}
    found = {k: v.shape for k, v in tensors.items()}
    if expected != found:
        raise ArchitectureMismatchError(f"{path}: tensor layout does not match a {arch} network "
                                        f"(expected {sorted(expected)}, found {sorted(found)})")
    params = NetworkParams(arch, channels, width, T)
    params.tensors = {k: Tensor(tensors[k], name=k) for k in template}
    return params


# corpus --------------------------------------------------------------------

def save_corpus(corpus, root):
    """LTEN files per sample plus ``<split>.manifest`` (one relative HR path per line).

    Each HR file ``<split>/NNNNN.hr.lten`` has a sibling ``NNNNN.lr.lten``;
    degradation parameters go to ``<split>.degradations.tsv``.
    """
    root = Path(root)
    (root / corpus.split).mkdir(parents=True, exist_ok=True)
    lines, params = [], ["index\tblur_sigma\tnoise_sigma"]
    for i, s in enumerate(corpus.samples):
        rel = f"{corpus.split}/{i:05d}.hr.lten"
        write_tensor(root / rel, s.x0)
        write_tensor(root / rel.replace(".hr.", ".lr."), s.y_lr)
        lines.append(rel)
        params.append(f"{i}\t{s.blur_sigma!r}\t{s.noise_sigma!r}")
    (root / f"{corpus.split}.manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (root / f"{corpus.split}.degradations.tsv").write_text("\n".join(params) + "\n", encoding="utf-8")
    return root / f"{corpus.split}.manifest"


def load_corpus(root, split, limit=None):
    root = Path(root)
    manifest = root / f"{split}.manifest"
    if not manifest.exists():
        raise MissingArtifactError(f"no {split} corpus manifest under {root} (run gen-data)")
    rels = [ln.strip() for ln in manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if limit is not None:
        rels = rels[:limit]
    degr = {}
    table = root / f"{split}.degradations.tsv"
    if table.exists():
        for row in table.read_text(encoding="utf-8").splitlines()[1:]:
            i, b, n = row.split("\t")
            degr[int(i)] = (float(b), float(n))
    corpus = Corpus(split=split, seed=-1)
    for i, rel in enumerate(rels):
        x0, y_lr = read_tensor(root / rel), read_tensor(root / rel.replace(".hr.", ".lr."))
        corpus.samples.append(PairedSample.from_pair(x0, y_lr, *degr.get(i, (float("nan"), float("nan")))))
    return corpus
