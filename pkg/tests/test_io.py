import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uanet.config import ConfigError, RunConfig, from_ini, load_config, save_config, to_ini
from uanet.serialization import (
    FormatError,
    archive_bytes,
    decode_tensor,
    encode_tensor,
    load_archive,
    read_archive_text,
    save_archive,
)


class TestContainer:
    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(st.sampled_from([np.float32, np.float64]),
                      hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)))
    def test_round_trip(self, arr):
        back = decode_tensor(encode_tensor(arr))
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_header_layout(self):
        blob = encode_tensor(np.zeros((2, 3), dtype=np.float32))
        assert blob[:4] == b"UATN" and blob[4:7] == bytes([1, 0, 2])
        assert blob[7:15] == bytes([2, 0, 0, 0, 3, 0, 0, 0])
        assert len(blob) == 15 + 24

    @pytest.mark.parametrize("cut", [0, 3, 8, 20])
    def test_truncated(self, cut):
        blob = encode_tensor(np.ones((2, 3)))
        with pytest.raises(FormatError) as exc:
            decode_tensor(blob[:cut])
        assert exc.value.offset <= len(blob)

    def test_bad_magic_and_dtype(self):
        blob = bytearray(encode_tensor(np.ones(2)))
        with pytest.raises(FormatError):
            decode_tensor(b"XXXX" + bytes(blob[4:]))
        blob[5] = 9
        with pytest.raises(FormatError):
            decode_tensor(bytes(blob))
        with pytest.raises(TypeError):
            encode_tensor(np.ones(2, dtype=np.int32))


class TestArchive:
    def test_round_trip_and_manifest(self, tmp_path):
        tensors = {"b.weight": np.ones((2, 2), np.float32), "a.bias": np.zeros(3)}
        save_archive(tmp_path / "w.uatz", tensors, extras={"note.txt": "hi"})
        back = load_archive(tmp_path / "w.uatz")
        assert list(back) == ["b.weight", "a.bias"]
        assert np.array_equal(back["b.weight"], tensors["b.weight"])
        assert read_archive_text(tmp_path / "w.uatz", "MANIFEST.txt").splitlines() == [
            "b.weight\t2x2\tfloat32", "a.bias\t3\tfloat64"]
        assert read_archive_text(tmp_path / "w.uatz", "note.txt") == "hi"
        assert read_archive_text(tmp_path / "w.uatz", "missing") is None

    def test_bytes_are_reproducible(self):
        tensors = {"w": np.arange(6.0).reshape(2, 3)}
        assert archive_bytes(tensors) == archive_bytes(dict(tensors))

    def test_not_an_archive(self, tmp_path):
        (tmp_path / "x").write_bytes(b"junk")
        with pytest.raises(FormatError):
            load_archive(tmp_path / "x")


class TestConfig:
    def test_ini_round_trip(self, tmp_path):
        cfg = RunConfig(seed=7).replace(**{"uafm.case": "3", "pigm.mode": "cc",
                                           "model.stage_channels": "4, 4, 8, 8, 8",
                                           "optim.lr": "0.01", "ura.formula": "floor"})
        save_config(tmp_path / "c.ini", cfg)
        back = load_config(tmp_path / "c.ini")
        assert to_ini(back) == to_ini(cfg)
        assert back.model.encoder.stage_channels == [4, 4, 8, 8, 8]
        assert back.model.uafm_case.value == "3" and back.optim.lr == 0.01

    def test_partial_file_keeps_defaults(self):
        cfg = from_ini("[run]\nseed = 4\n")
        assert cfg.seed == 4 and cfg.optim.steps == RunConfig().optim.steps

    @pytest.mark.parametrize("text", ["[run]\nbogus = 1\n", "[optim]\nsteps = many\n",
                                      "[pigm]\nmode = sideways\n", "not ini at all"])
    def test_rejects_bad_input(self, text):
        with pytest.raises(ConfigError):
            from_ini(text)

    def test_validate(self):
        with pytest.raises(ConfigError):
            RunConfig(bits=16).validate()
        with pytest.raises(ConfigError):
            RunConfig().replace(**{"optim.steps": 0}).validate()

    def test_sub_seeds_are_distinct_and_stable(self):
        cfg = RunConfig(seed=1)
        seeds = {cfg.sub_seed(n) for n in ("data", "init", "augment")}
        assert len(seeds) == 3
        assert cfg.sub_seed("data") == RunConfig(seed=1).sub_seed("data")
        assert cfg.sub_seed("data") != RunConfig(seed=2).sub_seed("data")
