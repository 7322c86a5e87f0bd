"""Scene simulation: room responses, echo path, corpora and mixing."""

import json

import numpy as np
import pytest

from tbnn_aec.datasim import (FRAME, Nonlinearity, SceneSpec, SyntheticCorpus, WavCorpus,
                              active_power, direct_path_samples, gen_rir, load_scene, make_echo,
                              measured_levels, mix_scene, nonlinear_distort, read_manifest,
                              sabine_reflection, sample_scene_spec, schroeder_rt60, short_rir,
                              vad_labels, write_scene)
from tbnn_aec.errors import ConfigurationError, DataError
from tbnn_aec.wavio import wav_write

FS = 48000


# ---------------------------------------------------------------------------
# Scene descriptions
# ---------------------------------------------------------------------------


class TestSceneSpec:
    def test_sampling_is_seeded(self):
        assert sample_scene_spec(7) == sample_scene_spec(7)
        assert sample_scene_spec(7) != sample_scene_spec(8)

    def test_ranges(self):
        for seed in range(50):
            s = sample_scene_spec(seed)
            assert 0 <= s.snr_db <= 25 and -15 <= s.ser_db <= 15
            assert 0.2 <= s.rt60 <= 1.2 and 0 <= s.delay <= 24000

    def test_requested_ranges_clamped(self):
        s = sample_scene_spec(1, snr=(30, 40), delay=(100, 100), scenario="ST-FE")
        assert s.snr_db == 25.0 and s.delay == 100 and s.scenario == "ST-FE"

    def test_json_round_trip(self):
        s = sample_scene_spec(3)
        assert SceneSpec.from_json(json.loads(json.dumps(s.to_json()))) == s

    @pytest.mark.parametrize("kwargs", [dict(snr_db=30), dict(rt60=0.1), dict(scenario="X"),
                                        dict(room_dims=(2, 2, 2)), dict(sample_rate=16000)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            SceneSpec(seed=0, **kwargs)


# ---------------------------------------------------------------------------
# Room acoustics
# ---------------------------------------------------------------------------


class TestRir:
    def test_sabine(self):
        beta = sabine_reflection((6, 4, 3), 0.5)
        alpha = 0.161 * 72 / (2 * (24 + 18 + 12) * 0.5)
        assert beta == pytest.approx(np.sqrt(1 - alpha))
        with pytest.raises(ConfigurationError):
            sabine_reflection((6, 4, 3), 0.01)

    def test_length_and_energy(self):
        h = gen_rir((6, 4, 3), 0.4, (1, 1, 1), (4, 3, 2))
        assert len(h) == int(np.ceil(1.5 * 0.4 * FS))
        assert np.sum(h ** 2) == pytest.approx(1.0)

    def test_direct_path(self):
        src, rcv = (1.0, 1.2, 1.5), (4.5, 3.0, 1.7)
        h = gen_rir((6, 4, 3), 0.3, src, rcv)
        first = int(np.nonzero(h)[0][0])
        assert abs(first - direct_path_samples(src, rcv)) <= 1

    @pytest.mark.parametrize("seed", range(5))
    def test_rt60_within_tolerance(self, seed):
        rng = np.random.default_rng(seed)
        room = tuple(rng.uniform((5, 3, 3), (8, 5, 4)))
        rt60 = float(rng.uniform(0.3, 1.0))
        h = gen_rir(room, rt60, rng.uniform(0.5, np.array(room) - 0.5),
                    rng.uniform(0.5, np.array(room) - 0.5), seed=seed)
        assert abs(schroeder_rt60(h) - rt60) / rt60 <= 0.10

    def test_schroeder_oracle(self):
        t = np.arange(FS) / FS
        h = np.exp(-3 * np.log(10) / 0.5 * t) * np.random.default_rng(0).standard_normal(FS)
        assert schroeder_rt60(h) == pytest.approx(0.5, rel=0.05)

    def test_source_outside(self):
        with pytest.raises(ConfigurationError):
            gen_rir((6, 4, 3), 0.4, (7, 1, 1), (1, 1, 1))

    def test_short_rir(self):
        h = short_rir(64, seed=1)
        assert len(h) == 64 and np.sum(h ** 2) == pytest.approx(1.0)
        assert h[0] > 0
        np.testing.assert_array_equal(h, short_rir(64, seed=1))


# ---------------------------------------------------------------------------
# Echo path
# ---------------------------------------------------------------------------


class TestEcho:
    def test_matches_direct_convolution(self, rng):
        x = rng.standard_normal(3000)
        h = short_rir(128, seed=2)
        z = make_echo(x, h, delay=250)
        ref = np.zeros(3000)
        ref[250:] = np.convolve(x, h)[:2750]
        np.testing.assert_allclose(z, ref, atol=1e-6)

    def test_distortion_examples(self):
        x = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
        y = nonlinear_distort(x, Nonlinearity(clip=0.8, gain=2.0))
        np.testing.assert_allclose(y, np.tanh(2 * np.clip(x, -0.8, 0.8)) / 2)
        np.testing.assert_array_equal(nonlinear_distort(x, Nonlinearity(enabled=False)), x)

    def test_distortion_creates_third_harmonic(self):
        t = np.arange(FS) / FS
        x = np.sin(2 * np.pi * 1000 * t)
        spec = np.abs(np.fft.rfft(nonlinear_distort(x)))
        assert spec[3000] > 1e-2 * spec[1000]
        assert spec[2000] < 1e-6 * spec[1000]

    def test_negative_delay(self, rng):
        with pytest.raises(ConfigurationError):
            make_echo(rng.standard_normal(10), [1.0], delay=-1)


# ---------------------------------------------------------------------------
# Corpora and mixing
# ---------------------------------------------------------------------------


class TestMixing:
    def test_vad_rule(self):
        s = np.zeros(4 * FRAME)
        s[:FRAME] = 1.0
        s[FRAME:2 * FRAME] = 0.02      # -34 dB: active
        s[2 * FRAME:3 * FRAME] = 0.005  # -46 dB: inactive
        np.testing.assert_array_equal(vad_labels(s), [1, 1, 0, 0])

    def test_active_power(self):
        x = np.concatenate([np.ones(FRAME), 3 * np.ones(FRAME)])
        assert active_power(x, [0, 1]) == 9.0
        with pytest.raises(DataError):
            active_power(x, [0, 0])

    @pytest.mark.parametrize("scenario", ["DT", "ST-FE", "ST-NE"])
    def test_sum_identity_and_levels(self, speech_corpus, noise_corpus, scenario):
        spec = SceneSpec(seed=11, scenario=scenario, duration=2.0, snr_db=12.0, ser_db=-3.0,
                         rt60=0.3, delay=1000)
        sc = mix_scene(spec, speech_corpus, noise_corpus)
        np.testing.assert_array_equal(sc.d, sc.s + sc.r + sc.v + sc.z)
        levels = measured_levels(sc)
        assert levels["snr_db"] == pytest.approx(12.0, abs=1e-3)
        if scenario != "ST-NE":
            assert levels["ser_db"] == pytest.approx(-3.0, abs=1e-3)
        else:
            assert not np.any(sc.x) and not np.any(sc.z)
        if scenario == "ST-FE":
            assert not np.any(sc.s) and not np.any(sc.vad)

    def test_deterministic(self, speech_corpus, noise_corpus):
        spec = sample_scene_spec(5, duration=1.0)
        a = mix_scene(spec, speech_corpus, noise_corpus)
        b = mix_scene(spec, speech_corpus, noise_corpus)
        for key in ("d", "s", "r", "v", "z", "x"):
            np.testing.assert_array_equal(getattr(a, key), getattr(b, key))

    def test_echo_delay_meta(self, speech_corpus, noise_corpus):
        spec = SceneSpec(seed=2, duration=1.0, delay=3000)
        sc = mix_scene(spec, speech_corpus, noise_corpus, echo_rir=short_rir(64, seed=0),
                       with_noise=False)
        assert sc.echo_delay == 3000
        assert not np.any(sc.v)

    def test_write_and_load(self, speech_corpus, noise_corpus, tmp_path):
        sc = mix_scene(SceneSpec(seed=4, duration=1.0), speech_corpus, noise_corpus)
        rec = write_scene(sc, tmp_path, "a")
        (tmp_path / "manifest.jsonl").write_text(json.dumps(rec) + "\n")
        recs = read_manifest(tmp_path / "manifest.jsonl")
        back = load_scene(recs[0], tmp_path)
        np.testing.assert_array_equal(back.d, sc.d)
        assert back.spec == sc.spec

    def test_bad_manifest(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"name": "x"}\n')
        with pytest.raises(DataError, match=":1:"):
            read_manifest(p)


class TestCorpora:
    def test_synthetic(self):
        c = SyntheticCorpus("speech", 4, 0)
        a = c.clip(1, 1.5)
        assert len(a) == int(1.5 * FS) and a.dtype == np.float32
        np.testing.assert_array_equal(a, c.clip(1, 1.5))
        assert np.any(a != c.clip(2, 1.5))
        with pytest.raises(ConfigurationError):
            SyntheticCorpus("music")

    def test_wav_corpus(self, tmp_path, rng):
        for i in range(2):
            wav_write(tmp_path / f"c{i}.wav", 0.1 * rng.standard_normal(FS).astype(np.float32))
        c = WavCorpus(str(tmp_path))
        assert len(c) == 2 and len(c.clip(0, 0.5)) == FS // 2
        with pytest.raises(DataError):
            c.clip(0, 2.0)

    def test_wav_corpus_manifest(self, tmp_path, rng):
        wav_write(tmp_path / "b.wav", np.zeros(FS))
        wav_write(tmp_path / "a.wav", np.zeros(FS))
        (tmp_path / "manifest.json").write_text(json.dumps({"clips": ["b.wav"]}))
        assert [f.name for f in WavCorpus(str(tmp_path)).files] == ["b.wav"]

    def test_empty(self, tmp_path):
        with pytest.raises(DataError):
            WavCorpus(str(tmp_path))
