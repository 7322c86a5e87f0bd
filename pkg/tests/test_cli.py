"""Command-line interface: exit codes, determinism and reports."""

import json

import numpy as np
import pytest

from tbnn_aec.cli import CliConfig, bench, main
from tbnn_aec.datasim import short_rir
from tbnn_aec.errors import ConfigurationError
from tbnn_aec.tde import delay_by
from tbnn_aec.wavio import wav_read, wav_write

FS = 48000


@pytest.fixture
def pair(tmp_path, speech_corpus):
    far = speech_corpus.clip(5, 0.5)
    mic = np.convolve(delay_by(far, 480), short_rir(64, seed=5))[:len(far)]
    wav_write(tmp_path / "mic.wav", mic)
    wav_write(tmp_path / "ref.wav", far)
    return tmp_path


def _json(capsys):
    return json.loads(capsys.readouterr().out)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            CliConfig.from_dict({"bogus": 1})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigurationError, match="nlms"):
            CliConfig.from_dict({"nlms": {"tapz": 3}})

    def test_stft_fixed(self):
        with pytest.raises(ConfigurationError):
            CliConfig.from_dict({"stft": {"hop": 240, "win_len": 480, "fft_size": 480}})

    def test_digest_stable(self):
        assert CliConfig().digest() == CliConfig.from_dict({}).digest()
        assert CliConfig().digest() != CliConfig(seed=1).digest()


class TestExitCodes:
    def test_bad_config_key(self, tmp_path, pair):
        (tmp_path / "c.json").write_text('{"nope": 1}')
        rc = main(["process", "--config", str(tmp_path / "c.json"), "--mic", str(pair / "mic.wav"),
                   "--ref", str(pair / "ref.wav"), "--out", str(tmp_path / "o.wav")])
        assert rc == 2

    def test_missing_input(self, tmp_path):
        rc = main(["process", "--linear-only", "--mic", str(tmp_path / "none.wav"),
                   "--ref", str(tmp_path / "none.wav"), "--out", str(tmp_path / "o.wav")])
        assert rc == 3

    def test_missing_weights(self, tmp_path):
        assert main(["validate-weights", "--weights", str(tmp_path / "w.bin")]) == 3

    def test_rate_mismatch(self, tmp_path):
        wav_write(tmp_path / "m.wav", np.zeros(1000), sample_rate=16000)
        rc = main(["process", "--linear-only", "--mic", str(tmp_path / "m.wav"),
                   "--ref", str(tmp_path / "m.wav"), "--out", str(tmp_path / "o.wav")])
        assert rc == 2

    def test_short_delay_input(self, tmp_path):
        wav_write(tmp_path / "m.wav", np.ones(1000))
        assert main(["delay", "--mic", str(tmp_path / "m.wav"), "--ref", str(tmp_path / "m.wav")]) == 3


class TestProcess:
    def test_linear_only(self, pair, capsys):
        rc = main(["process", "--linear-only", "--delay", "480", "--mic", str(pair / "mic.wav"),
                   "--ref", str(pair / "ref.wav"), "--out", str(pair / "o.wav")])
        assert rc == 0
        rep = _json(capsys)
        assert rep["files"][0]["delay_samples"] == 480
        assert len(wav_read(pair / "o.wav").samples) == FS // 2

    def test_chunk_sweep_identical(self, pair, capsys):
        outs = []
        for chunk in ("1000", "480", "7"):
            main(["process", "--chunk", chunk, "--mic", str(pair / "mic.wav"),
                  "--ref", str(pair / "ref.wav"), "--out", str(pair / f"o{chunk}.wav")])
            outs.append(wav_read(pair / f"o{chunk}.wav").samples)
        capsys.readouterr()
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_batch_threads_identical(self, pair, capsys):
        jobs = [{"mic": str(pair / "mic.wav"), "ref": str(pair / "ref.wav"),
                 "out": str(pair / f"b{i}.wav")} for i in range(3)]
        (pair / "jobs.jsonl").write_text("".join(json.dumps(j) + "\n" for j in jobs))
        assert main(["process", "--linear-only", "--batch", str(pair / "jobs.jsonl"),
                     "--threads", "3"]) == 0
        capsys.readouterr()
        main(["process", "--linear-only", "--mic", str(pair / "mic.wav"),
              "--ref", str(pair / "ref.wav"), "--out", str(pair / "single.wav")])
        capsys.readouterr()
        single = wav_read(pair / "single.wav").samples
        for i in range(3):
            np.testing.assert_array_equal(wav_read(pair / f"b{i}.wav").samples, single)


class TestSimulateEvaluate:
    def test_simulate_is_byte_identical(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert main(["simulate", "--out-dir", str(tmp_path / d), "--n", "2", "--seed", "9",
                         "--duration", "1.0"]) == 0
        capsys.readouterr()
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "manifest.jsonl" in files and len(files) == 13
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_evaluate_check(self, tmp_path, capsys):
        main(["simulate", "--out-dir", str(tmp_path), "--n", "2", "--duration", "1.0"])
        capsys.readouterr()
        rc = main(["evaluate", "--manifest", str(tmp_path / "manifest.jsonl"), "--mode", "none",
                   "--check", "--csv", str(tmp_path / "r.csv")])
        rep = _json(capsys)
        assert rc == 0 and rep["all_identities_hold"]
        assert "name" in (tmp_path / "r.csv").read_text().splitlines()[0]

    def test_evaluate_nlms_short_echo(self, tmp_path, capsys):
        main(["simulate", "--out-dir", str(tmp_path), "--n", "1", "--duration", "3.0",
              "--scenario", "ST-FE", "--echo-rir-len", "64", "--linear-echo", "--no-noise",
              "--delay", "0:2000"])
        capsys.readouterr()
        main(["evaluate", "--manifest", str(tmp_path / "manifest.jsonl"), "--mode", "nlms",
              "--oracle-delay", "--erle-skip", "1.5"])
        assert _json(capsys)["scenes"][0]["erle_db"] > 20.0

    def test_files_mode_needs_dir(self, tmp_path, capsys):
        main(["simulate", "--out-dir", str(tmp_path), "--n", "1", "--duration", "1.0"])
        capsys.readouterr()
        assert main(["evaluate", "--manifest", str(tmp_path / "manifest.jsonl")]) == 2


class TestOther:
    def test_describe(self, capsys):
        assert main(["describe"]) == 0
        rep = _json(capsys)
        assert rep["trainable"] == 4932757 and abs(rep["relative_delta"]) <= 0.2

    def test_weights_round_trip(self, tmp_path, capsys):
        w = str(tmp_path / "w.bin")
        main(["describe", "--save-seed-weights", w])
        capsys.readouterr()
        assert main(["validate-weights", "--weights", w]) == 0
        assert _json(capsys)["ok"]
        main(["describe", "--weights", w])
        assert _json(capsys)["matches_manifest"]

    def test_delay(self, tmp_path, speech_corpus, capsys):
        far = speech_corpus.clip(6, 3.0)
        wav_write(tmp_path / "m.wav", delay_by(far, 4800))
        wav_write(tmp_path / "r.wav", far)
        assert main(["delay", "--mic", str(tmp_path / "m.wav"), "--ref", str(tmp_path / "r.wav")]) == 0
        assert abs(_json(capsys)["delay_samples"] - 4800) <= 240

    def test_bench_report(self, tiny_model):
        rep = bench(1.0, model=tiny_model)
        assert rep["rtf_total"] > 0 and rep["split_relative_gap"] <= 0.05
        assert rep["reference"]["total"] == 0.35
