"""Waveform ingestion and stochastic waveform augmentation.

Three augmentations are supported, each with a measurable acoustic
contract: background-noise mixing at a target SNR, narrow notch filters at
random center frequencies, and zeroing random chunks of samples. All
randomness flows from explicit integer seeds, so equal inputs and seeds
give bit-identical outputs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from speechbench import kernels
from speechbench.errors import (
    AugmentConfigError,
    SampleRateMismatchError,
    SignalTooShortError,
    SilentSignalError,
    UnsupportedCodecError,
    WavReadError,
)
from speechbench.seeds import rng_from

CANONICAL_RATE = 16_000

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples (nominal range [-1, 1]) plus a rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for the three augmentations.

    Defaults: SNR 0-15 dB, 2-5 notches in [100, 7600] Hz, 1-5 zeroed chunks
    of 1000-2000 samples, each augmentation applied with probability 0.5.
    """

    snr_db_range: tuple[float, float] = (0.0, 15.0)
    notch_count_range: tuple[int, int] = (2, 5)
    notch_band: tuple[float, float] = (100.0, 7600.0)
    notch_q: float = 30.0
    chunk_count_range: tuple[int, int] = (1, 5)
    chunk_len_range: tuple[int, int] = (1000, 2000)
    per_augmentation_probability: float = 0.5

    def __post_init__(self):
        for name in ("snr_db_range", "notch_count_range", "notch_band", "chunk_count_range", "chunk_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise AugmentConfigError(f"{name} must satisfy low <= high, got {lo}..{hi}")
        if self.notch_band[0] <= 0:
            raise AugmentConfigError("notch_band must lie above 0 Hz")
        if not 0.0 <= self.per_augmentation_probability <= 1.0:
            raise AugmentConfigError("per_augmentation_probability must be in [0, 1]")
        if self.notch_q <= 0:
            raise AugmentConfigError("notch_q must be positive")


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM16 or IEEE float32).

    Multi-channel audio is downmixed by channel mean; PCM16 samples are
    scaled to [-1, 1). Raises FileNotFoundError, WavReadError for a bad
    container, UnsupportedCodecError for other codecs.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavReadError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavReadError(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise WavReadError(f"{path}: data chunk truncated")
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None or payload is None:
        raise WavReadError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels < 1 or rate <= 0:
        raise WavReadError(f"{path}: invalid channel count or rate")

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedCodecError(f"{path}: format tag {audio_format} with {bits}-bit samples is not supported")

    frames = raw.size // channels
    if frames < 1:
        raise WavReadError(f"{path}: empty data chunk")
    samples = raw[: frames * channels].reshape(frames, channels).mean(axis=1)
    return Waveform(samples=samples, sample_rate=rate)


def save_wav(path, w: Waveform) -> None:
    """Write a mono IEEE float32 WAV (no renormalization or clipping)."""
    payload = w.samples.astype("<f4").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        _WAVE_FORMAT_IEEE_FLOAT,
        1,
        w.sample_rate,
        w.sample_rate * 4,
        4,
        32,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def mix_noise(signal: Waveform, noise: Waveform, snr_db: float, offset: int | None = None, seed: int | None = None) -> Waveform:
    """Add `noise` to `signal` at the given RMS signal-to-noise ratio.

    The noise is cropped to the signal length at `offset` (drawn uniformly
    from `seed` when omitted) and scaled by
    g = (RMS(signal) / RMS(crop)) * 10^(-snr_db / 20). The sum is returned
    without renormalization, so samples may exceed [-1, 1].
    """
    if signal.sample_rate != noise.sample_rate:
        raise SampleRateMismatchError(f"signal rate {signal.sample_rate} != noise rate {noise.sample_rate}")
    if len(noise) < len(signal):
        raise SignalTooShortError(f"noise ({len(noise)} samples) shorter than signal ({len(signal)})")

    max_offset = len(noise) - len(signal)
    if offset is None:
        if max_offset == 0:
            offset = 0
        elif seed is None:
            raise ValueError("offset omitted: pass a seed to draw one")
        else:
            offset = int(rng_from(seed).integers(0, max_offset + 1))
    if not 0 <= offset <= max_offset:
        raise ValueError(f"offset {offset} outside [0, {max_offset}]")

    crop = noise.samples[offset : offset + len(signal)]
    signal_rms = signal.rms()
    crop_rms = float(np.sqrt(np.mean(np.square(crop))))
    if signal_rms == 0.0:
        raise SilentSignalError("signal RMS is zero: SNR undefined")
    if crop_rms == 0.0:
        raise SilentSignalError("noise crop RMS is zero: SNR undefined")

    gain = (signal_rms / crop_rms) * 10.0 ** (-snr_db / 20.0)
    return Waveform(samples=signal.samples + gain * crop, sample_rate=signal.sample_rate)


def design_notch(center_hz: float, sample_rate: int, q: float) -> np.ndarray:
    """Biquad band-stop coefficients (b0, b1, b2, a0, a1, a2) at `center_hz`."""
    w0 = 2.0 * math.pi * center_hz / sample_rate
    alpha = math.sin(w0) / (2.0 * q)
    cos_w0 = math.cos(w0)
    return np.array([1.0, -2.0 * cos_w0, 1.0, 1.0 + alpha, -2.0 * cos_w0, 1.0 - alpha])


def notch_filter(signal: Waveform, centers_hz, q: float) -> Waveform:
    """Apply one biquad notch per center frequency, cascaded in order."""
    centers = np.atleast_1d(np.asarray(centers_hz, dtype=np.float64))
    nyquist = signal.sample_rate / 2.0
    if np.any(centers <= 0) or np.any(centers >= nyquist):
        raise AugmentConfigError(f"notch centers must lie in (0, {nyquist}) Hz")
    if len(signal) < 64:
        raise SignalTooShortError("signal too short to notch (need >= 64 samples)")
    sos = np.stack([design_notch(f, signal.sample_rate, q) for f in centers])
    filtered = kernels.biquad_cascade(np.ascontiguousarray(signal.samples), np.ascontiguousarray(sos))
    return Waveform(samples=filtered, sample_rate=signal.sample_rate)


def apply_notches(signal: Waveform, count: int, seed: int, config: AugmentConfig | None = None) -> Waveform:
    """Notch out `count` center frequencies drawn uniformly from the band.

    Centers are rng(seed).uniform(band_lo, band_hi, count); each is a
    second-order biquad with the configured quality factor, attenuating a
    probe tone at the center by >= 20 dB while leaving tones an octave away
    essentially untouched.
    """
    config = config or AugmentConfig()
    lo, hi = config.notch_count_range
    if not lo <= count <= hi:
        raise AugmentConfigError(f"notch count {count} outside configured range [{lo}, {hi}]")
    if config.notch_band[1] >= signal.sample_rate / 2.0:
        raise AugmentConfigError(f"notch_band {config.notch_band} reaches Nyquist ({signal.sample_rate / 2.0} Hz)")
    centers = rng_from(seed).uniform(config.notch_band[0], config.notch_band[1], size=count)
    return notch_filter(signal, centers, config.notch_q)


def drop_chunks(signal: Waveform, seed: int, config: AugmentConfig | None = None) -> Waveform:
    """Zero out random non-overlapping spans of the signal.

    The span count and per-span lengths are drawn from the configured
    ranges; spans are kept at least one sample apart so each zeroed run
    stays individually measurable. If the drawn spans cannot fit, the count
    is reduced (never below one). Output length equals input length.
    """
    config = config or AugmentConfig()
    len_lo, len_hi = config.chunk_len_range
    if len(signal) < len_hi:
        raise SignalTooShortError(f"signal ({len(signal)} samples) shorter than max chunk length {len_hi}")

    rng = rng_from(seed)
    count_lo, count_hi = config.chunk_count_range
    n = int(rng.integers(count_lo, count_hi + 1))
    lengths = rng.integers(len_lo, len_hi + 1, size=n)
    while n > 1 and int(lengths[:n].sum()) + (n - 1) > len(signal):
        n -= 1
    lengths = lengths[:n]

    slack = len(signal) - int(lengths.sum()) - (n - 1)
    cuts = np.sort(rng.integers(0, slack + 1, size=n))
    out = signal.samples.copy()
    pos = 0
    prev_cut = 0
    for i in range(n):
        pos += int(cuts[i]) - prev_cut
        prev_cut = int(cuts[i])
        out[pos : pos + int(lengths[i])] = 0.0
        pos += int(lengths[i]) + 1
    return Waveform(samples=out, sample_rate=signal.sample_rate)


def augment_clip(signal: Waveform, noise_bank: list[Waveform], seed: int, config: AugmentConfig | None = None) -> Waveform:
    """Apply the three augmentations, each independently with the configured
    probability, in the fixed order noise -> notches -> chunks.

    The noise clip is drawn uniformly among bank entries at least as long
    as the signal (SNR, offset, notch centers, and chunk layout are all
    drawn from the same seeded stream). An empty noise bank disables the
    noise stage entirely (no draws consumed for it).
    """
    config = config or AugmentConfig()
    rng = rng_from(seed)
    p = config.per_augmentation_probability
    out = signal

    if noise_bank and rng.random() < p:
        eligible = [nz for nz in noise_bank if len(nz) >= len(out) and nz.sample_rate == out.sample_rate]
        if not eligible:
            raise SignalTooShortError("no noise in bank covers the signal at its sample rate")
        noise = eligible[int(rng.integers(0, len(eligible)))]
        snr_db = float(rng.uniform(config.snr_db_range[0], config.snr_db_range[1]))
        max_offset = len(noise) - len(out)
        offset = int(rng.integers(0, max_offset + 1)) if max_offset > 0 else 0
        out = mix_noise(out, noise, snr_db, offset=offset)

    if rng.random() < p:
        count = int(rng.integers(config.notch_count_range[0], config.notch_count_range[1] + 1))
        out = apply_notches(out, count, seed=int(rng.integers(0, 2**63)), config=config)

    if rng.random() < p:
        out = drop_chunks(out, seed=int(rng.integers(0, 2**63)), config=config)

    return out
