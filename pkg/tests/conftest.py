import numpy as np
import pytest

from speechbench.dsp import Waveform

SR = 16_000


def tone(freq_hz: float, seconds: float = 1.0, sr: int = SR, amp: float = 0.5) -> Waveform:
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(samples=amp * np.sin(2 * np.pi * freq_hz * t), sample_rate=sr)


def white_noise(seconds: float, sr: int = SR, seed: int = 0, amp: float = 0.3) -> Waveform:
    rng = np.random.default_rng(seed)
    return Waveform(samples=amp * rng.standard_normal(int(seconds * sr)), sample_rate=sr)


def dft_power(x: np.ndarray, freq_hz: float, sr: int = SR) -> float:
    """Independent single-bin spectral power oracle (direct projection)."""
    n = len(x)
    t = np.arange(n) / sr
    c = np.sum(x * np.exp(-2j * np.pi * freq_hz * t))
    return float(np.abs(c) ** 2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
