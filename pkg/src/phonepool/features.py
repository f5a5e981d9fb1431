"""Log-Mel filterbank frontend and per-speaker mean/variance normalization.

Frontend convention (fixed, mirrored by the reference oracle in the tests):

1. window/shift lengths in samples = round(ms * sample_rate / 1000);
2. frame i covers samples ``i*shift .. i*shift+window-1``, frame count
   ``(n - window) // shift + 1``;
3. optional Gaussian dither added per frame (off by default);
4. pre-emphasis applied inside each frame: ``y[0] = x[0] - p*x[0]``,
   ``y[j] = x[j] - p*x[j-1]``;
5. Hamming window (symmetric, ``0.54 - 0.46 cos(2 pi k/(N-1))``);
6. power spectrum ``|rfft(y, fft_size)|**2``;
7. triangular mel filters on the HTK scale ``mel = 2595*log10(1 + f/700)``,
   peak height 1 (no area normalization), evaluated at FFT bin centers;
8. natural log of the filter energies, floored at ``log_floor``.
"""

from dataclasses import dataclass, field
from typing import Optional
import wave as wavmod

import numpy as np

from .errors import ConfigError, ValidationError


@dataclass
class Waveform:
    samples: np.ndarray  # float, amplitude in [-1, 1]
    sample_rate: int
    utterance_id: str
    speaker_id: str


@dataclass
class FrontendConfig:
    window_ms: float = 25.0
    shift_ms: float = 10.0
    num_mel_bins: int = 40
    fft_size: Optional[int] = None  # None: next power of two >= window samples
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    dither: float = 0.0
    low_hz: float = 0.0
    high_hz: Optional[float] = None  # None: Nyquist

    def validate(self) -> None:
        if self.window_ms <= 0 or self.shift_ms <= 0:
            raise ConfigError("window_ms and shift_ms must be positive")
        if self.shift_ms > self.window_ms:
            raise ConfigError("shift_ms must not exceed window_ms")
        if self.num_mel_bins < 2:
            raise ConfigError("num_mel_bins must be at least 2")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError("preemphasis must lie in [0, 1)")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.dither < 0:
            raise ConfigError("dither must be non-negative")
        if self.fft_size is not None and self.fft_size & (self.fft_size - 1):
            raise ConfigError("fft_size must be a power of two")


@dataclass
class FeatureMatrix:
    utterance_id: str
    speaker_id: str
    data: np.ndarray = field(repr=False)  # (frames, dims) float64

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=float) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(num_bins: int, fft_size: int, sample_rate: float,
                   low_hz: float = 0.0, high_hz: Optional[float] = None):
    """Triangular mel filter matrix (num_bins, fft_size//2+1) and the
    mel-spaced edge/center frequencies in Hz (num_bins+2)."""
    if high_hz is None:
        high_hz = sample_rate / 2.0
    if high_hz > sample_rate / 2.0 + 1e-9:
        raise ConfigError(
            f"top mel edge {high_hz} Hz exceeds Nyquist {sample_rate / 2.0} Hz")
    if not 0.0 <= low_hz < high_hz:
        raise ConfigError("need 0 <= low_hz < high_hz")
    bin_freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    hz_points = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz),
                                      num_bins + 2))
    weights = np.zeros((num_bins, bin_freqs.shape[0]))
    for k in range(num_bins):
        left, center, right = hz_points[k], hz_points[k + 1], hz_points[k + 2]
        rise = (bin_freqs - left) / (center - left)
        fall = (right - bin_freqs) / (right - center)
        weights[k] = np.maximum(0.0, np.minimum(rise, fall))
    return weights, hz_points


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def compute_log_mel(wave: Waveform, cfg: FrontendConfig,
                    rng: Optional[np.random.Generator] = None) -> FeatureMatrix:
    """Convert a waveform into (frames, num_mel_bins) log-Mel features."""
    cfg.validate()
    samples = np.asarray(wave.samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise ValidationError("waveform must be a non-empty 1-d sample sequence")
    if wave.sample_rate <= 0:
        raise ValidationError("sample_rate must be positive")
    win = int(round(cfg.window_ms * wave.sample_rate / 1000.0))
    shift = int(round(cfg.shift_ms * wave.sample_rate / 1000.0))
    if win < 2 or shift < 1:
        raise ConfigError("window/shift too short for this sample rate")
    if samples.size < win:
        raise ValidationError(
            f"utterance too short: {samples.size} samples < one {win}-sample window")
    fft_size = cfg.fft_size if cfg.fft_size is not None else _next_pow2(win)
    if fft_size < win:
        raise ConfigError(f"fft_size {fft_size} smaller than window of {win} samples")

    num_frames = (samples.size - win) // shift + 1
    offsets = np.arange(num_frames) * shift
    frames = samples[offsets[:, None] + np.arange(win)[None, :]].copy()
    if cfg.dither > 0:
        if rng is None:
            rng = np.random.default_rng()
        frames += cfg.dither * rng.standard_normal(frames.shape)
    emph = frames.copy()
    emph[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    emph[:, 0] -= cfg.preemphasis * frames[:, 0]
    emph *= np.hamming(win)
    power = np.abs(np.fft.rfft(emph, fft_size, axis=1)) ** 2
    fbank, _ = mel_filterbank(cfg.num_mel_bins, fft_size, wave.sample_rate,
                              cfg.low_hz, cfg.high_hz)
    energies = power @ fbank.T
    data = np.log(np.maximum(energies, cfg.log_floor))
    return FeatureMatrix(wave.utterance_id, wave.speaker_id, data)


def read_wav(path: str, utterance_id: str, speaker_id: str) -> Waveform:
    """Read a RIFF/WAVE PCM16 mono file into a [-1, 1) waveform."""
    with wavmod.open(path, "rb") as f:
        if f.getnchannels() != 1:
            raise ValidationError(f"{path}: only mono files are supported")
        if f.getsampwidth() != 2:
            raise ValidationError(f"{path}: only 16-bit PCM is supported")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate, utterance_id, speaker_id)


def apply_speaker_cmvn(features: list[FeatureMatrix],
                       var_floor: float = 1e-10) -> list[FeatureMatrix]:
    """Normalize each speaker's features to zero mean, unit variance.

    Statistics are pooled over all frames of all utterances of a speaker
    (population variance); output rows are ``(x - mean) / sqrt(var + floor)``.
    """
    if not features:
        raise ValidationError("apply_speaker_cmvn: empty feature list")
    dims = features[0].dims
    for fm in features:
        if fm.dims != dims:
            raise ValidationError(
                f"dims mismatch: '{fm.utterance_id}' has {fm.dims}, expected {dims}")
    by_speaker: dict[str, list[int]] = {}
    for i, fm in enumerate(features):
        by_speaker.setdefault(fm.speaker_id, []).append(i)
    out: list[Optional[FeatureMatrix]] = [None] * len(features)
    for speaker, indices in by_speaker.items():
        stacked = np.concatenate([features[i].data for i in indices], axis=0)
        mean = stacked.mean(axis=0)
        var = stacked.var(axis=0)  # population (biased) variance
        scale = 1.0 / np.sqrt(var + var_floor)
        for i in indices:
            fm = features[i]
            out[i] = FeatureMatrix(fm.utterance_id, fm.speaker_id,
                                   (fm.data - mean) * scale)
    return out  # type: ignore[return-value]
