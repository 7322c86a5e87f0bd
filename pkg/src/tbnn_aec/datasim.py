"""Echo-scene simulator: RIRs, loudspeaker nonlinearity, delayed echo and mixing.

A scene is ``d = s + r + v + z``: near-end speech ``s`` (direct path plus early
reflections when reverberant), its late reverberation ``r``, noise ``v`` and
echo ``z``, where ``z`` is the distorted far-end reference ``x`` convolved with
a room response and delayed.  Levels are set from the near-end power measured
over near-end-active frames.  All signals are float32 and the mixture is
formed in float32, so the sum identity holds sample-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .errors import ConfigurationError, DataError
from .validation import check_audio, check_in_range

SAMPLE_RATE = 48000
SPEED_OF_SOUND = 343.0
FRAME = 480
VAD_FLOOR_DB = -40.0
EARLY_MS = 50.0

ROOM_MIN = (5.0, 3.0, 3.0)
ROOM_MAX = (8.0, 5.0, 4.0)
RT60_RANGE = (0.2, 1.2)
SNR_RANGE = (0.0, 25.0)
SER_RANGE = (-15.0, 15.0)
DELAY_RANGE = (0, 24000)
NEAREND_REVERB_PROB = 0.3
SCENARIOS = ("ST-NE", "ST-FE", "DT")


@dataclass(frozen=True)
class Nonlinearity:
    """Hard clip at ``clip`` times the peak, then ``tanh(gain x) / gain``."""

    clip: float = 0.8
    gain: float = 2.0
    enabled: bool = True


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    room_dims: tuple = (6.0, 4.0, 3.0)
    rt60: float = 0.4
    snr_db: float = 15.0
    ser_db: float = 0.0
    delay: int = 2400
    nearend_reverb: bool = False
    nonlinearity: Nonlinearity = Nonlinearity()
    scenario: str = "DT"
    duration: float = 4.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if len(self.room_dims) != 3:
            raise ConfigurationError("room_dims needs three values")
        for k, (lo, hi) in enumerate(zip(ROOM_MIN, ROOM_MAX)):
            check_in_range(self.room_dims[k], f"room_dims[{k}]", lo, hi)
        check_in_range(self.rt60, "rt60", *RT60_RANGE)
        check_in_range(self.snr_db, "snr_db", *SNR_RANGE)
        check_in_range(self.ser_db, "ser_db", *SER_RANGE)
        check_in_range(self.delay, "delay", *DELAY_RANGE)
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}")
        check_in_range(self.duration, "duration", 0.5, 600.0)
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigurationError(f"scenes are generated at {SAMPLE_RATE} Hz")

    @property
    def num_samples(self):
        return int(round(self.duration * self.sample_rate))

    def to_json(self):
        d = asdict(self)
        d["room_dims"] = list(self.room_dims)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["room_dims"] = tuple(d["room_dims"])
        d["nonlinearity"] = Nonlinearity(**d.get("nonlinearity", {}))
        return cls(**d)


def _clamp(lo, hi, value):
    return float(min(max(value, lo), hi))


def sample_scene_spec(seed, scenario=None, duration=4.0, *, snr=SNR_RANGE, ser=SER_RANGE,
                      rt60=RT60_RANGE, delay=DELAY_RANGE):
    """Draw a scene description; requested ranges are clamped to the corpus bounds."""
    rng = np.random.default_rng([int(seed), 0x5CE])
    snr = (_clamp(*SNR_RANGE, snr[0]), _clamp(*SNR_RANGE, snr[1]))
    ser = (_clamp(*SER_RANGE, ser[0]), _clamp(*SER_RANGE, ser[1]))
    rt60 = (_clamp(*RT60_RANGE, rt60[0]), _clamp(*RT60_RANGE, rt60[1]))
    delay = (int(_clamp(*DELAY_RANGE, delay[0])), int(_clamp(*DELAY_RANGE, delay[1])))
    dims = tuple(float(v) for v in rng.uniform(ROOM_MIN, ROOM_MAX))
    spec = dict(
        seed=int(seed),
        room_dims=dims,
        rt60=float(rng.uniform(*rt60)),
        snr_db=float(rng.uniform(*snr)),
        ser_db=float(rng.uniform(*ser)),
        delay=int(rng.integers(delay[0], delay[1] + 1)),
        nearend_reverb=bool(rng.random() < NEAREND_REVERB_PROB),
        nonlinearity=Nonlinearity(float(rng.uniform(0.6, 1.0)), float(rng.uniform(0.5, 3.0)),
                                  bool(rng.random() < 0.5)),
        scenario=scenario or SCENARIOS[int(rng.integers(len(SCENARIOS)))],
        duration=float(duration),
    )
    return SceneSpec(**spec)


# ---------------------------------------------------------------- room acoustics

def sabine_reflection(room, rt60):
    """Wall reflection coefficient giving ``rt60`` by Sabine's formula."""
    lx, ly, lz = room
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.161 * volume / (surface * rt60)
    if alpha >= 1.0:
        raise ConfigurationError(f"rt60 {rt60:.3f} s is too short for a {room} m room")
    return float(np.sqrt(1.0 - alpha))


def _check_point(p, room, name):
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or np.any(p <= 0) or np.any(p >= np.asarray(room)):
        raise ConfigurationError(f"{name} {tuple(p)} is not strictly inside room {tuple(room)}")
    return p


def _axis_images(src, length, order):
    n = np.arange(-order, order + 1)
    pos = np.concatenate([2 * n * length + src, 2 * n * length - src])
    refl = np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)])
    return pos, refl


def gen_rir(room, rt60, source, receiver, seed=0, sample_rate=SAMPLE_RATE, early_ms=EARLY_MS):
    """Image-source early response plus an exponentially decaying noise tail.

    Images arriving within ``early_ms`` of the direct path are placed at the
    nearest sample with amplitude ``beta^k / (4 pi dist)``.  After that a
    seeded Gaussian tail decays at 60 dB per ``rt60``, its starting level
    matched to the image-source energy density.  The result is scaled to unit
    energy and lasts ``1.5 * rt60``.
    """
    room = tuple(float(v) for v in room)
    if len(room) != 3 or min(room) <= 0:
        raise ConfigurationError(f"invalid room dimensions {room}")
    src = _check_point(source, room, "source")
    rcv = _check_point(receiver, room, "receiver")
    check_in_range(rt60, "rt60", 0.05, 5.0)
    beta = sabine_reflection(room, rt60)
    n = int(np.ceil(1.5 * rt60 * sample_rate))
    direct = float(np.linalg.norm(src - rcv))
    t_early = direct / SPEED_OF_SOUND + early_ms / 1000.0
    reach = SPEED_OF_SOUND * t_early

    axes = [_axis_images(src[k], room[k], int(np.ceil(reach / (2 * room[k]))) + 1)
            for k in range(3)]
    px, py, pz = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing="ij")
    kx, ky, kz = np.meshgrid(axes[0][1], axes[1][1], axes[2][1], indexing="ij")
    dist = np.sqrt((px - rcv[0]) ** 2 + (py - rcv[1]) ** 2 + (pz - rcv[2]) ** 2).ravel()
    refl = (kx + ky + kz).ravel()
    keep = dist <= reach
    dist, refl = dist[keep], refl[keep]
    idx = np.round(dist / SPEED_OF_SOUND * sample_rate).astype(int)
    amp = beta ** refl / (4 * np.pi * dist)
    h = np.zeros(n)
    ok = idx < n
    np.add.at(h, idx[ok], amp[ok])

    # stochastic tail, level matched to the last 10 ms of early energy
    start = int(round(t_early * sample_rate))
    if start < n:
        win = int(0.01 * sample_rate)
        density = np.sum(h[max(0, start - win):start] ** 2) / win
        decay = 3.0 * np.log(10.0) / rt60
        t = np.arange(n - start) / sample_rate
        rng = np.random.default_rng([int(seed), 0x717])
        h[start:] += np.sqrt(density) * np.exp(-decay * t) * rng.standard_normal(n - start)
    return h / np.linalg.norm(h)


def schroeder_rt60(rir, sample_rate=SAMPLE_RATE, fit_db=(-5.0, -35.0)):
    """rt60 from a line fit to the backward-integrated energy decay curve."""
    h = np.asarray(rir, dtype=float)
    edc = np.cumsum((h ** 2)[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    sel = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    if len(sel) < 2:
        raise DataError("decay curve does not span the fit range")
    t = sel / sample_rate
    slope = np.polyfit(t, edc_db[sel], 1)[0]
    return float(-60.0 / slope)


def short_rir(length=64, seed=0, decay=10.0):
    """Seeded exponentially decaying random response of ``length`` taps, unit energy."""
    rng = np.random.default_rng([int(seed), 0x5407])
    h = rng.standard_normal(int(length)) * np.exp(-np.arange(int(length)) / decay)
    h[0] = abs(h[0]) + 1.0
    return h / np.linalg.norm(h)


def direct_path_samples(source, receiver, sample_rate=SAMPLE_RATE):
    dist = float(np.linalg.norm(np.asarray(source, float) - np.asarray(receiver, float)))
    return dist / SPEED_OF_SOUND * sample_rate


# ---------------------------------------------------------------- echo path

def nonlinear_distort(x, params=Nonlinearity()):
    """Memoryless loudspeaker model: hard clip, then soft saturation."""
    x = check_audio(x, "x", min_samples=0)
    if not params.enabled:
        return x.copy()
    peak = float(np.max(np.abs(x))) if len(x) else 0.0
    y = x
    if peak > 0 and params.clip < 1.0:
        level = params.clip * peak
        y = np.clip(y, -level, level)
    if params.gain > 0:
        y = np.tanh(params.gain * y) / params.gain
    return y


def delay_signal(x, delay, length=None):
    x = np.asarray(x)
    length = len(x) if length is None else int(length)
    out = np.zeros(length, dtype=x.dtype)
    if delay < length:
        m = min(len(x), length - delay)
        out[delay:delay + m] = x[:m]
    return out


def make_echo(x, rir, delay=0, params=Nonlinearity(enabled=False)):
    """``z = shift(conv(distort(x), rir), delay)`` truncated to ``len(x)``."""
    x = check_audio(x, "x", min_samples=1)
    h = check_audio(rir, "rir", min_samples=1)
    if delay < 0:
        raise ConfigurationError("delay must be non-negative")
    y = fftconvolve(nonlinear_distort(x, params), h)[:len(x)]
    return delay_signal(y, int(delay), len(x))


# ---------------------------------------------------------------- corpora

def _syllable_envelope(rng, n, sample_rate):
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.3) * sample_rate)
    while pos < n:
        on = int(rng.uniform(0.12, 0.4) * sample_rate)
        seg = np.hanning(on) ** 0.5 * rng.uniform(0.4, 1.0)
        m = min(on, n - pos)
        env[pos:pos + m] = seg[:m]
        pos += on + int(rng.uniform(0.05, 0.3 if rng.random() < 0.8 else 0.8) * sample_rate)
    return env


def synth_speech(seed, duration, sample_rate=SAMPLE_RATE):
    """Speech stand-in: gliding harmonic voicing and fricative noise under a syllabic envelope."""
    rng = np.random.default_rng([int(seed), 0x5BEEC])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(90, 240) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 3) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    voiced = np.zeros(n)
    for k in range(1, 40):
        voiced += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    voiced[k * f0 > sample_rate / 2] = 0.0
    b, a = [1.0, -0.95], [1.0]
    fric = lfilter(b, a, rng.standard_normal(n)) * 0.05
    env = _syllable_envelope(rng, n, sample_rate)
    mix = rng.uniform(0.2, 0.8, size=1)[0]
    y = env * (voiced + mix * fric)
    return (0.3 * y / (np.max(np.abs(y)) + 1e-12)).astype(np.float32)


def synth_noise(seed, duration, sample_rate=SAMPLE_RATE):
    """Stationary coloured noise (first-order lowpass of white noise)."""
    rng = np.random.default_rng([int(seed), 0x0015E])
    n = int(round(duration * sample_rate))
    pole = rng.uniform(0.0, 0.98)
    y = lfilter([1.0 - pole], [1.0, -pole], rng.standard_normal(n))
    return (0.1 * y / (np.std(y) + 1e-12)).astype(np.float32)


@dataclass
class SyntheticCorpus:
    """Deterministic generated clips; ``clip(i, duration)`` never runs short."""

    kind: str = "speech"
    size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("speech", "noise"):
            raise ConfigurationError("kind must be 'speech' or 'noise'")
        if self.size < 1:
            raise DataError("empty corpus")

    def __len__(self):
        return self.size

    def clip(self, index, duration, sample_rate=SAMPLE_RATE):
        fn = synth_speech if self.kind == "speech" else synth_noise
        return fn(self.seed * 100003 + int(index), duration, sample_rate)


@dataclass
class WavCorpus:
    """Directory of 48 kHz mono WAVs, listed by ``manifest.json`` (``{"clips": [...]}``) if present."""

    directory: str
    files: list = field(default_factory=list)

    def __post_init__(self):
        root = Path(self.directory)
        manifest = root / "manifest.json"
        if manifest.exists():
            try:
                names = json.loads(manifest.read_text())["clips"]
            except (ValueError, KeyError) as exc:
                raise DataError(f"bad corpus manifest {manifest}: {exc}") from None
            self.files = [root / (n["path"] if isinstance(n, dict) else n) for n in names]
        else:
            self.files = sorted(root.glob("*.wav"))
        if not self.files:
            raise DataError(f"empty corpus: {root}")

    def __len__(self):
        return len(self.files)

    def clip(self, index, duration, sample_rate=SAMPLE_RATE):
        from .wavio import wav_read

        audio = wav_read(self.files[index], expected_rate=sample_rate)
        n = int(round(duration * sample_rate))
        if len(audio.samples) < n:
            raise DataError(f"{self.files[index]}: {len(audio.samples)} samples, scene needs {n}")
        return np.asarray(audio.samples[:n], dtype=np.float32)


# ---------------------------------------------------------------- mixing

@dataclass
class Scene:
    d: np.ndarray
    s: np.ndarray
    r: np.ndarray
    v: np.ndarray
    z: np.ndarray
    x: np.ndarray
    vad: np.ndarray
    spec: SceneSpec
    echo_rir: np.ndarray
    meta: dict = field(default_factory=dict)

    SIGNALS = ("d", "s", "r", "v", "z", "x")

    @property
    def echo_delay(self):
        """Bulk delay plus the echo path's direct-path lag, in samples."""
        return self.meta["echo_delay"]


def frame_energy(x, frame=FRAME):
    x = np.asarray(x, dtype=np.float64)
    n_frames = -(-len(x) // frame)
    pad = np.zeros(n_frames * frame)
    pad[:len(x)] = x
    return np.sum(pad.reshape(n_frames, frame) ** 2, axis=1)


def vad_labels(s, floor_db=VAD_FLOOR_DB, frame=FRAME):
    """1 where the hop-frame energy of ``s`` is within ``floor_db`` of its peak frame."""
    e = frame_energy(s, frame)
    peak = e.max() if e.size else 0.0
    if peak <= 0:
        return np.zeros(len(e), dtype=np.int8)
    return (e > peak * 10 ** (floor_db / 10)).astype(np.int8)


def active_power(x, labels, frame=FRAME):
    """Mean square of ``x`` over the samples of frames labelled active."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.repeat(np.asarray(labels, bool), frame)[:len(x)]
    if not mask.any():
        raise DataError("no active frames to measure power over")
    return float(np.mean(x[mask] ** 2))


def _random_point(rng, room, margin=0.5):
    room = np.asarray(room)
    return rng.uniform(margin, room - margin)


def _split_early(wet, dry_rir, sample_rate):
    """Split reverberant speech into direct+early part and late tail."""
    peak = int(np.argmax(np.abs(dry_rir)))
    cut = peak + int(EARLY_MS / 1000 * sample_rate)
    early = np.zeros_like(dry_rir)
    early[:cut] = dry_rir[:cut]
    return early, dry_rir - early


def mix_scene(spec, speech, noise, echo_rir=None, with_noise=True):
    """Build a :class:`Scene` from ``spec`` and two corpora (``clip(i, duration)``).

    Gains are chosen from the near-end speech measured on its active frames,
    so ST-FE scenes (where ``s`` and ``r`` are then zeroed) keep the drawn
    noise and echo levels.  ``echo_rir`` overrides the simulated echo path;
    ``with_noise=False`` leaves ``v`` silent.
    """
    if len(speech) == 0 or len(noise) == 0:
        raise DataError("empty corpus")
    rng = np.random.default_rng([spec.seed, 0x313])
    fs, n = spec.sample_rate, spec.num_samples
    i_near, i_far = rng.choice(len(speech), 2, replace=len(speech) < 2)
    near = np.asarray(speech.clip(int(i_near), spec.duration, fs), np.float64)
    far = np.asarray(speech.clip(int(i_far), spec.duration, fs), np.float64)
    noise_clip = np.asarray(noise.clip(int(rng.integers(len(noise))), spec.duration, fs), np.float64)
    if min(len(near), len(far), len(noise_clip)) < n:
        raise DataError("corpus clip shorter than the scene")

    mic_pos = _random_point(rng, spec.room_dims)
    spk_pos = _random_point(rng, spec.room_dims)
    talker_pos = _random_point(rng, spec.room_dims)
    if echo_rir is None:
        echo_rir = gen_rir(spec.room_dims, spec.rt60, spk_pos, mic_pos, seed=spec.seed)
    echo_rir = check_audio(echo_rir, "echo_rir")

    if spec.nearend_reverb:
        h = gen_rir(spec.room_dims, spec.rt60, talker_pos, mic_pos, seed=spec.seed + 1)
        early, late = _split_early(near, h, fs)
        s = fftconvolve(near, early)[:n]
        r = fftconvolve(near, late)[:n]
    else:
        s, r = near[:n], np.zeros(n)

    labels = vad_labels(s + r)
    p_s = active_power(s, labels)
    v = noise_clip[:n] * np.sqrt(p_s / (active_power(noise_clip[:n], labels) * 10 ** (spec.snr_db / 10)))
    if not with_noise:
        v = np.zeros(n)
    x = far[:n]
    z = make_echo(x, echo_rir, spec.delay, spec.nonlinearity)
    p_z = active_power(z, labels) if np.any(z) else 0.0
    z = z * np.sqrt(p_s / (p_z * 10 ** (spec.ser_db / 10))) if p_z > 0 else z

    if spec.scenario == "ST-FE":
        s, r = np.zeros(n), np.zeros(n)
    elif spec.scenario == "ST-NE":
        x, z = np.zeros(n), np.zeros(n)

    s, r, v, z, x = (a.astype(np.float32) for a in (s, r, v, z, x))
    d = s + r + v + z
    meta = {
        "reference_power": p_s,
        "echo_delay": int(spec.delay + np.argmax(np.abs(echo_rir))),
        "mic_pos": mic_pos.tolist(),
        "speaker_pos": spk_pos.tolist(),
        "talker_pos": talker_pos.tolist(),
        "active_labels": labels.tolist(),
        "noise": bool(with_noise),
    }
    vad = vad_labels(s) if spec.scenario != "ST-FE" else np.zeros(len(labels), np.int8)
    return Scene(d, s, r, v, z, x, vad, spec, echo_rir, meta)


def measured_levels(scene):
    """Independent re-measurement of SNR and SER (dB) against the scene's reference power."""
    labels = np.asarray(scene.meta["active_labels"], bool)
    if scene.spec.scenario == "ST-FE":
        p_s = scene.meta["reference_power"]
    else:
        p_s = active_power(scene.s, labels)
    out = {}
    if scene.meta.get("noise", True):
        out["snr_db"] = 10 * np.log10(p_s / active_power(scene.v, labels))
    if scene.spec.scenario != "ST-NE":
        out["ser_db"] = 10 * np.log10(p_s / active_power(scene.z, labels))
    return out


def write_scene(scene, out_dir, name=None):
    """Write every component as float32 WAV; returns the manifest record."""
    from .wavio import wav_write

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = name or f"scene_{scene.spec.seed:06d}"
    files = {}
    for key in Scene.SIGNALS:
        path = out_dir / f"{name}_{key}.wav"
        wav_write(path, getattr(scene, key), scene.spec.sample_rate)
        files[key] = path.name
    meta = {k: v for k, v in scene.meta.items() if k != "active_labels"}
    return {"name": name, "spec": scene.spec.to_json(), "files": files,
            "vad": scene.vad.tolist(), "active_labels": scene.meta["active_labels"], "meta": meta}


def read_manifest(path):
    """Scene manifest: one JSON record per line."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                SceneSpec.from_json(rec["spec"])
                rec["files"]["d"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad scene record: {exc}") from None
            records.append(rec)
    return records


def load_scene(record, root):
    from .wavio import wav_read

    root = Path(root)
    sig = {k: wav_read(root / f).samples for k, f in record["files"].items()}
    spec = SceneSpec.from_json(record["spec"])
    meta = dict(record.get("meta", {}))
    meta["active_labels"] = record.get("active_labels", [])
    return Scene(sig["d"], sig["s"], sig["r"], sig["v"], sig["z"], sig["x"],
                 np.asarray(record.get("vad", []), np.int8), spec, np.zeros(1), meta)
