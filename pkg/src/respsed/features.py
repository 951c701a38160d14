"""Front end: 80 Hz high-pass, STFT power spectrogram, MFCCs with deltas,
band energies and per-group normalization into a 938x193 feature matrix."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import sosfilt

from .corpus import CLIP_SAMPLES, SAMPLE_RATE, Clip

N_FFT = 256
HOP = 64
N_FRAMES = CLIP_SAMPLES // HOP + 1  # 938 with centre padding
N_BINS = N_FFT // 2 + 1  # 129
BIN_HZ = SAMPLE_RATE / N_FFT  # 15.625
N_MELS = 40
N_MFCC = 20
LOG_FLOOR = 1e-10
NORM_EPS = 1e-8
BANDS = ((0.0, 250.0), (250.0, 500.0), (500.0, 1000.0), (0.0, 2000.0))
N_FEATURES = N_BINS + 3 * N_MFCC + len(BANDS)  # 193
ENERGY_OFFSET = N_BINS + 3 * N_MFCC  # first energy column


@dataclass(frozen=True, eq=False)
class Spectrogram:
    power: np.ndarray  # (frames, 129), linear power
    frame_times: np.ndarray
    bin_freqs: np.ndarray


@dataclass(frozen=True, eq=False)
class MfccSet:
    static_c: np.ndarray
    delta: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True, eq=False)
class BandEnergies:
    e: np.ndarray  # (frames, 4)
    edges: tuple[tuple[float, float], ...] = BANDS


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    x: np.ndarray  # (frames, 193)

    @property
    def n_frames(self) -> int:
        return self.x.shape[0]


# --------------------------------------------------------------------------
# High-pass filter


def butter_highpass_sos(order: int = 4, cutoff_hz: float = 80.0,
                        fs: float = SAMPLE_RATE) -> np.ndarray:
    """Digital Butterworth high-pass as second-order sections.

    Analog prototype poles are mapped low-pass -> high-pass at the prewarped
    cutoff, then through the bilinear transform. Gain is unity at Nyquist.
    """
    if order < 1 or not 0 < cutoff_hz < fs / 2:
        raise ValueError("need order >= 1 and 0 < cutoff < fs/2")
    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    wc = 2 * fs * np.tan(np.pi * cutoff_hz / fs)
    s_poles = wc / proto
    z_poles = (2 * fs + s_poles) / (2 * fs - s_poles)

    # upper-half-plane poles pair with their conjugates, a real pole stands alone
    upper = sorted((p for p in z_poles if p.imag > 1e-12), key=lambda p: abs(p))
    real = [p.real for p in z_poles if abs(p.imag) <= 1e-12]
    sections = []
    for p in upper:
        sections.append([1.0, -2.0, 1.0, 1.0, -2.0 * p.real, abs(p) ** 2])
    for p in real:
        sections.append([1.0, -1.0, 0.0, 1.0, -p, 0.0])
    sos = np.array(sections)

    # normalize |H(z=-1)| = 1
    gain = 1.0
    for b0, b1, b2, a0, a1, a2 in sos:
        gain *= (b0 - b1 + b2) / (a0 - a1 + a2)
    sos[0, :3] /= gain
    return sos


_HIGHPASS_SOS = butter_highpass_sos()


def highpass(signal: Clip | np.ndarray) -> np.ndarray:
    """Causal 4th-order Butterworth high-pass at 80 Hz."""
    x = signal.samples if isinstance(signal, Clip) else signal
    return sosfilt(_HIGHPASS_SOS, np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# Spectrogram


def hann_window(n: int = N_FFT) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def spectrogram(signal: np.ndarray) -> Spectrogram:
    x = np.asarray(signal, dtype=np.float64)
    if x.shape != (CLIP_SAMPLES,):
        raise ValueError(f"expected {CLIP_SAMPLES} samples, got shape {x.shape}")
    padded = np.pad(x, N_FFT // 2)
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP]
    power = np.abs(np.fft.rfft(frames * hann_window(), axis=1)) ** 2
    return Spectrogram(
        power=power,
        frame_times=np.arange(power.shape[0]) * HOP / SAMPLE_RATE,
        bin_freqs=np.arange(N_BINS) * SAMPLE_RATE / N_FFT,
    )


# --------------------------------------------------------------------------
# MFCC


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Triangular filters (n_mels, 129) evenly spaced on the mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(N_BINS) * BIN_HZ
    fb = np.zeros((n_mels, N_BINS))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


_MEL_FB = mel_filterbank()


def deltas(c: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames, edges replicated."""
    padded = np.pad(c, ((width, width), (0, 0)), mode="edge")
    n = len(c)
    num = sum(k * (padded[width + k:width + k + n] - padded[width - k:width - k + n])
              for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def mfcc(spec: Spectrogram) -> MfccSet:
    mel = spec.power @ _MEL_FB.T
    log_mel = np.log(np.maximum(mel, LOG_FLOOR))
    static_c = dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]
    d = deltas(static_c)
    return MfccSet(static_c, d, deltas(d))


# --------------------------------------------------------------------------
# Band energies and assembly


def band_energies(spec: Spectrogram) -> BandEnergies:
    cols = []
    for lo, hi in BANDS:
        if hi >= SAMPLE_RATE / 2:
            mask = spec.bin_freqs >= lo  # top band closed at Nyquist
        else:
            mask = (spec.bin_freqs >= lo) & (spec.bin_freqs < hi)
        cols.append(spec.power[:, mask].sum(axis=1))
    return BandEnergies(np.stack(cols, axis=1))


def zscore(block: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Whole-block z-score; blocks with std below eps map to zeros."""
    std = block.std()
    if std < eps:
        return np.zeros_like(block, dtype=np.float64)
    return (block - block.mean()) / std


def assemble_features(spec: Spectrogram, mfccs: MfccSet, energies: BandEnergies) -> FeatureTensor:
    n = spec.power.shape[0]
    if not (mfccs.static_c.shape[0] == energies.e.shape[0] == n):
        raise ValueError("frame counts differ between feature groups")
    groups = [zscore(np.log(spec.power + LOG_FLOOR))]
    groups += [zscore(m) for m in (mfccs.static_c, mfccs.delta, mfccs.accel)]
    groups += [zscore(energies.e[:, [j]]) for j in range(energies.e.shape[1])]
    return FeatureTensor(np.concatenate(groups, axis=1))


@dataclass(frozen=True, eq=False)
class ClipFeatures:
    features: FeatureTensor
    spec: Spectrogram  # linear power, kept for peak-frequency lookups


def extract(clip: Clip | np.ndarray) -> ClipFeatures:
    spec = spectrogram(highpass(clip))
    return ClipFeatures(assemble_features(spec, mfcc(spec), band_energies(spec)), spec)


def write_feature_dump(path: str | Path, f: FeatureTensor) -> None:
    rows, cols = f.x.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(f.x, dtype="<f4").tobytes())


def read_feature_dump(path: str | Path) -> FeatureTensor:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError("feature dump too short")
    rows, cols = struct.unpack("<II", data[:8])
    if len(data) != 8 + 4 * rows * cols:
        raise ValueError("feature dump size does not match its header")
    return FeatureTensor(np.frombuffer(data[8:], dtype="<f4").reshape(rows, cols).astype(np.float64))
