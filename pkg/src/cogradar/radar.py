"""Radar observation model: nonlinear measurement function, its Jacobian,
and the waveform-dependent measurement noise.

The transmit waveform enters the simulation only through the measurement
covariance: range accuracy follows the matched-filter scaling
sigma_range = c / (2 b sqrt(2 SNR)), so higher bandwidth means a tighter
range measurement.  Angle accuracy is an antenna property and does not
depend on the waveform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory import TruthPoint

SPEED_OF_LIGHT = 299_792_458.0  # m/s
DEFAULT_PRF = 1_000.0  # Hz, held constant; bandwidth is the adapted parameter
DEFAULT_MIN_BW = 0.5e6  # Hz
DEFAULT_MAX_BW = 10.0e6  # Hz


@dataclass(frozen=True)
class WaveformParams:
    """Transmit waveform decision vector: PRF and chirp bandwidth."""

    bandwidth: float  # Hz
    prf: float = DEFAULT_PRF  # Hz

    def __post_init__(self) -> None:
        if self.prf <= 0.0:
            raise ValueError("prf must be > 0")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be > 0")


@dataclass(frozen=True)
class RadarConfig:
    position: tuple[float, float, float] = (20_000.0, -12_000.0, 0.0)
    carrier_freq: float = 10.0e9  # Hz
    pulse_duration: float = 1.0e-4  # s
    transmit_energy: float = 1.0  # J, carried for completeness
    snr_ref: float = 300.0  # SNR at range_ref
    range_ref: float = 25_000.0  # m
    angle_noise_std: float = 2.0e-3  # rad, azimuth and elevation
    min_bw: float = DEFAULT_MIN_BW  # Hz
    max_bw: float = DEFAULT_MAX_BW  # Hz

    def __post_init__(self) -> None:
        if self.snr_ref <= 0.0:
            raise ValueError("snr_ref must be > 0")
        if self.range_ref <= 0.0:
            raise ValueError("range_ref must be > 0")
        if not 0.0 < self.min_bw <= self.max_bw:
            raise ValueError("need 0 < min_bw <= max_bw")
        if self.carrier_freq <= 0.0 or self.pulse_duration <= 0.0:
            raise ValueError("carrier_freq and pulse_duration must be > 0")
        if self.angle_noise_std <= 0.0:
            raise ValueError("angle_noise_std must be > 0")

    @property
    def position_array(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class Measurement:
    """One noisy radar observation and the covariance it was drawn from."""

    range: float  # m
    range_rate: float  # m/s
    azimuth: float  # rad
    elevation: float  # rad
    noise_cov: np.ndarray  # (4, 4)
    waveform: WaveformParams
    t: float  # s

    def __post_init__(self) -> None:
        if self.range <= 0.0:
            raise ValueError("measured range must be > 0")
        if not -np.pi / 2.0 < self.elevation < np.pi / 2.0:
            raise ValueError("elevation out of (-pi/2, pi/2)")

    @property
    def z(self) -> np.ndarray:
        return np.array([self.range, self.range_rate, self.azimuth, self.elevation])


def observe(state: np.ndarray, radar_position: np.ndarray) -> np.ndarray:
    """Noise-free measurement (range, range rate, azimuth, elevation).

    ``state`` is the 6-vector [position; velocity].
    """
    state = np.asarray(state, dtype=float)
    d = state[:3] - np.asarray(radar_position, dtype=float)
    v = state[3:6]
    rng = np.linalg.norm(d)
    if rng == 0.0:
        raise ValueError("target at radar")
    return np.array(
        [
            rng,
            float(d @ v) / rng,
            np.arctan2(d[1], d[0]),
            np.arcsin(d[2] / rng),
        ]
    )


def observe_jacobian(state: np.ndarray, radar_position: np.ndarray) -> np.ndarray:
    """Analytic 4x6 Jacobian of :func:`observe` at ``state``."""
    state = np.asarray(state, dtype=float)
    d = state[:3] - np.asarray(radar_position, dtype=float)
    v = state[3:6]
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("target at radar")
    rho_sq = d[0] ** 2 + d[1] ** 2
    rho = np.sqrt(rho_sq)

    H = np.zeros((4, 6))
    H[0, :3] = d / r
    H[1, :3] = v / r - (d @ v) * d / r**3
    H[1, 3:] = d / r
    H[2, 0] = -d[1] / rho_sq
    H[2, 1] = d[0] / rho_sq
    H[3, 0] = -d[2] * d[0] / (r**2 * rho)
    H[3, 1] = -d[2] * d[1] / (r**2 * rho)
    H[3, 2] = rho / r**2
    return H


def snr_at_range(range_m: float, config: RadarConfig) -> float:
    """Fourth-power radar-equation SNR relative to the reference point."""
    if range_m <= 0.0:
        raise ValueError("range must be > 0")
    return config.snr_ref * (config.range_ref / range_m) ** 4


def measurement_noise_cov(
    waveform: WaveformParams, snr: float, config: RadarConfig
) -> np.ndarray:
    """Diagonal measurement covariance R(theta) for one transmission.

    sigma_range      = c / (2 b   sqrt(2 SNR))
    sigma_range_rate = c / (2 f_c tau sqrt(2 SNR))
    sigma_az = sigma_el = angle_noise_std
    """
    if snr <= 0.0:
        raise ValueError("snr must be > 0")
    root = np.sqrt(2.0 * snr)
    sigma_range = SPEED_OF_LIGHT / (2.0 * waveform.bandwidth * root)
    sigma_rate = SPEED_OF_LIGHT / (
        2.0 * config.carrier_freq * config.pulse_duration * root
    )
    return np.diag(
        [
            sigma_range**2,
            sigma_rate**2,
            config.angle_noise_std**2,
            config.angle_noise_std**2,
        ]
    )


def measure(
    truth: TruthPoint,
    waveform: WaveformParams,
    config: RadarConfig,
    rng: np.random.Generator,
) -> Measurement:
    """Simulate one transmission: h(truth) plus Gaussian noise from R(theta)."""
    state = np.concatenate([truth.position, truth.velocity])
    z_true = observe(state, config.position_array)
    snr = snr_at_range(float(z_true[0]), config)
    R = measurement_noise_cov(waveform, snr, config)
    noise = np.sqrt(np.diag(R)) * rng.standard_normal(4)
    z = z_true + noise
    return Measurement(
        range=float(z[0]),
        range_rate=float(z[1]),
        azimuth=float(z[2]),
        elevation=float(z[3]),
        noise_cov=R,
        waveform=waveform,
        t=truth.t,
    )
