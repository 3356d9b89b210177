"""Extended Kalman Filter track maintenance.

Constant-velocity motion model with phase-dependent white-noise-acceleration
process noise, Joseph-form measurement updates, a range-only innovation gate,
and consecutive-miss bookkeeping that declares track loss.  All operations are
pure: each returns a new value, so parallel episodes never share state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .radar import Measurement, RadarConfig, observe, observe_jacobian
from .trajectory import Phase

DEFAULT_MISS_LIMIT = 5
_MAX_CONDITION = 1e12


class DegenerateInnovationError(ValueError):
    """Raised when the innovation covariance is numerically singular."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return np.pi - (np.pi - angle) % (2.0 * np.pi)


@dataclass(frozen=True)
class TrackState:
    """Filter estimate: mean, covariance, and the time they refer to."""

    x_hat: np.ndarray  # (6,) [position; velocity]
    P: np.ndarray  # (6, 6)
    t: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        if self.x_hat.shape != (6,):
            raise ValueError("x_hat must be a 6-vector")
        if self.P.shape != (6, 6):
            raise ValueError("P must be 6x6")

    @property
    def position(self) -> np.ndarray:
        return self.x_hat[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x_hat[3:]


@dataclass(frozen=True)
class ProcessModel:
    """Constant-velocity transition plus per-phase acceleration noise."""

    dt: float
    accel_noise_std: Mapping[Phase, float]

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        for phase in Phase:
            if phase not in self.accel_noise_std:
                raise ValueError(f"missing accel_noise_std for {phase.value}")
            if self.accel_noise_std[phase] < 0.0:
                raise ValueError("accel_noise_std must be >= 0")

    def transition_matrix(self) -> np.ndarray:
        F = np.eye(6)
        F[:3, 3:] = self.dt * np.eye(3)
        return F

    def process_noise(self, phase: Phase) -> np.ndarray:
        """Discrete white-noise-acceleration covariance for one step."""
        var = self.accel_noise_std[phase] ** 2
        dt = self.dt
        Q = np.zeros((6, 6))
        Q[:3, :3] = var * dt**4 / 4.0 * np.eye(3)
        Q[:3, 3:] = var * dt**3 / 2.0 * np.eye(3)
        Q[3:, :3] = var * dt**3 / 2.0 * np.eye(3)
        Q[3:, 3:] = var * dt**2 * np.eye(3)
        return Q


@dataclass(frozen=True)
class Innovation:
    """Measurement residual and its covariance, angles wrapped to (-pi, pi]."""

    nu: np.ndarray  # (4,)
    S: np.ndarray  # (4, 4)


@dataclass(frozen=True)
class GateResult:
    correlated: bool
    range_window: float  # m, 95% CI half-width from the range noise entry
    range_innovation: float  # m

    def __post_init__(self) -> None:
        if self.range_window <= 0.0:
            raise ValueError("range_window must be > 0")


@dataclass(frozen=True)
class TrackStatus:
    """Consecutive-miss counter; ``transmissions`` counts step_status calls."""

    consecutive_misses: int = 0
    lost: bool = False
    lost_at_step: Optional[int] = None
    transmissions: int = 0


def predict(track: TrackState, model: ProcessModel, phase: Phase) -> TrackState:
    """Time update: x = F x, P = F P F' + Q(phase), symmetrized."""
    if not (np.all(np.isfinite(track.x_hat)) and np.all(np.isfinite(track.P))):
        raise ValueError("non-finite track state")
    F = model.transition_matrix()
    x = F @ track.x_hat
    P = F @ track.P @ F.T + model.process_noise(phase)
    P = 0.5 * (P + P.T)
    return TrackState(x_hat=x, P=P, t=track.t + model.dt)


def update(
    track: TrackState, z: Measurement, radar: RadarConfig
) -> tuple[TrackState, Innovation]:
    """Joseph-form EKF measurement update at the predicted state."""
    radar_position = radar.position_array
    H = observe_jacobian(track.x_hat, radar_position)
    R = z.noise_cov
    nu = z.z - observe(track.x_hat, radar_position)
    nu[2] = wrap_angle(nu[2])
    nu[3] = wrap_angle(nu[3])

    S = H @ track.P @ H.T + R
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > _MAX_CONDITION:
        raise DegenerateInnovationError("degenerate innovation covariance")
    # K = P H' S^-1, via solve on the symmetric S
    K = np.linalg.solve(S, H @ track.P).T

    x = track.x_hat + K @ nu
    I_KH = np.eye(6) - K @ H
    P = I_KH @ track.P @ I_KH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return TrackState(x_hat=x, P=P, t=track.t), Innovation(nu=nu, S=S)


def gate(innovation: Innovation, z: Measurement) -> GateResult:
    """Range-only correlation test.

    The window is the 95% CI half-width of the range measurement noise; the
    transmission correlates when the range innovation stays within three
    windows on either side.
    """
    window = 1.96 * np.sqrt(z.noise_cov[0, 0])
    nu_range = float(innovation.nu[0])
    return GateResult(
        correlated=bool(abs(nu_range) <= 3.0 * window),
        range_window=float(window),
        range_innovation=nu_range,
    )


def step_status(
    status: TrackStatus, correlated: bool, miss_limit: int = DEFAULT_MISS_LIMIT
) -> TrackStatus:
    """Advance the miss counter; declare loss at miss_limit consecutive misses."""
    if status.lost:
        raise ValueError("track already lost")
    transmissions = status.transmissions + 1
    if correlated:
        return TrackStatus(
            consecutive_misses=0, lost=False, lost_at_step=None,
            transmissions=transmissions,
        )
    misses = status.consecutive_misses + 1
    lost = misses >= miss_limit
    return TrackStatus(
        consecutive_misses=misses,
        lost=lost,
        lost_at_step=transmissions if lost else None,
        transmissions=transmissions,
    )


def coast(track: TrackState) -> TrackState:
    """Miss handling: discard the measurement, keep the predicted state."""
    return track


def initialize_track(
    z: Measurement,
    radar: RadarConfig,
    position_std: float = 1_000.0,
    velocity_std: float = 500.0,
) -> TrackState:
    """Start a track from one measurement: invert geometry, zero velocity."""
    direction = np.array(
        [
            np.cos(z.elevation) * np.cos(z.azimuth),
            np.cos(z.elevation) * np.sin(z.azimuth),
            np.sin(z.elevation),
        ]
    )
    position = radar.position_array + z.range * direction
    x_hat = np.concatenate([position, np.zeros(3)])
    P = np.diag([position_std**2] * 3 + [velocity_std**2] * 3)
    return TrackState(x_hat=x_hat, P=P, t=z.t)
