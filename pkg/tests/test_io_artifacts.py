import struct

import numpy as np
import pytest

from lpnsr.artifacts import (
    decode_weights,
    encode_weights,
    has_network,
    load_corpus,
    load_network,
    read_manifest,
    save_corpus,
    save_network,
)
from lpnsr.data import CorpusConfig, make_split
from lpnsr.errors import (
    ArchitectureMismatchError,
    FormatError,
    MissingArtifactError,
    ScheduleMismatchError,
    VersionError,
)
from lpnsr.io import decode_tensor, encode_tensor, export_pgm, read_tensor, write_tensor
from lpnsr.models import init_params
from lpnsr.schedule import build_schedule


class TestLten:
    @pytest.mark.parametrize("shape", [(), (3,), (2, 1, 4, 4)])
    def test_roundtrip(self, tmp_path, shape):
        x = np.random.default_rng(0).standard_normal(shape).astype(np.float32)
        write_tensor(tmp_path / "x.lten", x)
        assert read_tensor(tmp_path / "x.lten").tobytes() == x.tobytes()

    def test_layout(self):
        buf = encode_tensor(np.array([[1.0, 2.0, 3.0]], np.float32))
        assert buf[:4] == b"LTEN"
        assert struct.unpack_from("<IIII", buf, 4) == (1, 2, 1, 3)
        assert np.frombuffer(buf[20:], "<f4").tolist() == [1.0, 2.0, 3.0]

    def test_errors(self):
        buf = encode_tensor(np.ones((2, 2), np.float32))
        with pytest.raises(FormatError, match="magic"):
            decode_tensor(b"XTEN" + buf[4:])
        with pytest.raises(VersionError):
            decode_tensor(buf[:4] + struct.pack("<I", 2) + buf[8:])
        for cut in (3, 11, 15, len(buf) - 1):
            with pytest.raises(FormatError):
                decode_tensor(buf[:cut])

    def test_distinct_error_kinds(self):
        assert issubclass(VersionError, FormatError)
        with pytest.raises(OSError):
            read_tensor("/nonexistent/dir/x.lten")


class TestPgm:
    def test_endpoints(self, tmp_path):
        img = np.array([[-1.0, 1.0], [0.0, -1.0]])
        export_pgm(tmp_path / "a.pgm", img)
        raw = (tmp_path / "a.pgm").read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert list(raw[-4:]) == [0, 255, 128, 0]

    def test_multichannel_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_pgm(tmp_path / "a.pgm", np.zeros((3, 4, 4)))


class TestWeights:
    def test_roundtrip(self):
        p = init_params("denoiser", 3, width=4)
        back = decode_weights(encode_weights(p.tensors))
        assert list(back) == list(p.tensors)
        for k in back:
            assert back[k].tobytes() == p[k].data.tobytes()

    def test_corruption(self):
        buf = encode_weights(init_params("upsampler", width=4).tensors)
        with pytest.raises(FormatError, match="magic"):
            decode_weights(b"NOPE" + buf[4:])
        with pytest.raises(VersionError):
            decode_weights(buf[:4] + struct.pack("<I", 9) + buf[8:])
        for cut in (10, 40, len(buf) - 2):
            with pytest.raises(FormatError):
                decode_weights(buf[:cut])
        with pytest.raises(FormatError, match="trailing"):
            decode_weights(buf + b"\x00")


class TestCheckpoints:
    def test_save_load(self, tmp_path):
        sched = build_schedule()
        p = init_params("predictor", 1, width=4)
        p["conv3.weight"].data[:] = 0.5
        save_network(tmp_path, p, sched)
        q = load_network(tmp_path, "predictor", sched)
        assert q.checksum() == p.checksum()
        assert has_network(tmp_path, "predictor") and not has_network(tmp_path, "denoiser")

    def test_missing_names_producer(self, tmp_path):
        with pytest.raises(MissingArtifactError, match="train-predictor"):
            load_network(tmp_path, "predictor")

    def test_schedule_mismatch(self, tmp_path):
        save_network(tmp_path, init_params("denoiser", width=4), build_schedule(4))
        with pytest.raises(ScheduleMismatchError, match="T=4"):
            load_network(tmp_path, "denoiser", build_schedule(3))
        with pytest.raises(ScheduleMismatchError):
            load_network(tmp_path, "denoiser", build_schedule(4, kappa=1.0))
        load_network(tmp_path, "denoiser", build_schedule(4))

    def test_upsampler_schedule_free(self, tmp_path):
        save_network(tmp_path, init_params("upsampler", width=4), build_schedule(4))
        assert not any(k.startswith("upsampler.schedule") for k in read_manifest(tmp_path))
        load_network(tmp_path, "upsampler", build_schedule(3))

    def test_architecture_mismatch(self, tmp_path):
        save_network(tmp_path, init_params("denoiser", width=4))
        # a denoiser file relabelled as a predictor has the wrong first-layer fan-in
        text = (tmp_path / "manifest.txt").read_text().replace("denoiser", "predictor")
        (tmp_path / "manifest.txt").write_text(text)
        (tmp_path / "denoiser.lpnw").rename(tmp_path / "predictor.lpnw")
        with pytest.raises(ArchitectureMismatchError):
            load_network(tmp_path, "predictor")

    def test_architecture_tag_mismatch(self, tmp_path):
        save_network(tmp_path, init_params("denoiser", width=4))
        path = tmp_path / "manifest.txt"
        path.write_text(path.read_text().replace("denoiser.arch = denoiser", "denoiser.arch = upsampler"))
        with pytest.raises(ArchitectureMismatchError):
            load_network(tmp_path, "denoiser")

    def test_manifest_keeps_other_networks(self, tmp_path):
        save_network(tmp_path, init_params("denoiser", width=4))
        save_network(tmp_path, init_params("upsampler", width=4))
        save_network(tmp_path, init_params("denoiser", 5, width=4))
        assert has_network(tmp_path, "denoiser") and has_network(tmp_path, "upsampler")


class TestCorpusFiles:
    def test_roundtrip(self, tmp_path):
        corpus = make_split(CorpusConfig(n_train=4, n_val=3, n_test=3), "val")
        save_corpus(corpus, tmp_path)
        assert (tmp_path / "val.manifest").read_text().splitlines()[0] == "val/00000.hr.lten"
        back = load_corpus(tmp_path, "val")
        assert back.hr.tobytes() == corpus.hr.tobytes()
        assert back.lr.tobytes() == corpus.lr.tobytes()
        assert back.up.tobytes() == corpus.up.tobytes()
        assert [s.blur_sigma for s in back] == [s.blur_sigma for s in corpus]
        assert len(load_corpus(tmp_path, "val", limit=2)) == 2

    def test_regeneration_byte_identical(self, tmp_path):
        cfg = CorpusConfig(n_train=2, n_val=2, n_test=2)
        for d in ("a", "b"):
            save_corpus(make_split(cfg, "test"), tmp_path / d)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_missing(self, tmp_path):
        with pytest.raises(MissingArtifactError, match="gen-data"):
            load_corpus(tmp_path, "train")
