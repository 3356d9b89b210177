"""Scenario bundles: trajectory, radar, tracker, and learning settings.

A ScenarioConfig is the single object the CLI and the experiment harness
pass around. It serializes to JSON so a study is reproducible from one
file plus a seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from typing import Any

from .experiment import EpisodeConfig, atomic_write_text
from .policy import ActionSet, Discretizer, QTable
from .radar import RadarConfig
from .tracker import ProcessModel
from .trajectory import Phase, TrajectoryConfig

DEFAULT_ALPHA = 0.1
DEFAULT_GAMMA = 0.9
DEFAULT_EPSILON = 0.2
DEFAULT_REWARD_CLIP = 2.0
DEFAULT_LOOKAHEAD = 5


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run, train, and evaluate on one scenario."""

    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    radar: RadarConfig = field(default_factory=RadarConfig)
    process: ProcessModel = field(
        default_factory=lambda: ProcessModel(
            dt=0.5,
            accel_noise_std={Phase.BOOST: 12.0, Phase.MID_COURSE: 5.0, Phase.TERMINAL: 22.0},
        )
    )
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    actions: ActionSet = field(default_factory=ActionSet)
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPSILON
    C: float = DEFAULT_REWARD_CLIP
    L: int = DEFAULT_LOOKAHEAD

    def __post_init__(self) -> None:
        if self.process.dt != self.trajectory.dt:
            raise ValueError("process.dt must match trajectory.dt")
        bws = self.actions.bandwidths
        if bws[0] < self.radar.min_bw or bws[-1] > self.radar.max_bw:
            raise ValueError("action bandwidths must lie within radar [min_bw, max_bw]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.C <= 0.0:
            raise ValueError("C must be > 0")
        if self.L < 1:
            raise ValueError("L must be >= 1")

    def new_table(self, discretizer: Discretizer, lookahead: bool = False) -> QTable:
        """Fresh all-zero Q-table wired to this scenario's hyperparameters."""
        return QTable.zeros(
            discretizer,
            actions=self.actions,
            alpha=self.alpha,
            gamma=self.gamma,
            epsilon=self.epsilon,
            C=self.C,
            L=self.L if lookahead else 1,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "trajectory": dataclasses.asdict(self.trajectory),
            "radar": dataclasses.asdict(self.radar),
            "process": {
                "dt": self.process.dt,
                "accel_noise_std": {
                    phase.value: self.process.accel_noise_std[phase] for phase in Phase
                },
            },
            "episode": dataclasses.asdict(self.episode),
            "actions_hz": list(self.actions.bandwidths),
            "hyperparams": {
                "alpha": self.alpha,
                "gamma": self.gamma,
                "epsilon": self.epsilon,
                "C": self.C,
                "L": self.L,
            },
        }

    def save(self, path: str) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        required = {"trajectory", "radar", "process", "episode", "actions_hz", "hyperparams"}
        missing = required - set(data)
        if missing:
            raise ValueError(f"scenario JSON missing keys: {sorted(missing)}")
        traj = dict(data["trajectory"])
        traj["launch_position"] = tuple(traj["launch_position"])
        radar = dict(data["radar"])
        radar["position"] = tuple(radar["position"])
        noise = {Phase(name): std for name, std in data["process"]["accel_noise_std"].items()}
        hyper = data["hyperparams"]
        return cls(
            trajectory=TrajectoryConfig(**traj),
            radar=RadarConfig(**radar),
            process=ProcessModel(dt=data["process"]["dt"], accel_noise_std=noise),
            episode=EpisodeConfig(**data["episode"]),
            actions=ActionSet(tuple(data["actions_hz"])),
            alpha=hyper["alpha"],
            gamma=hyper["gamma"],
            epsilon=hyper["epsilon"],
            C=hyper["C"],
            L=hyper["L"],
        )

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        with open(path) as handle:
            return cls.from_json_dict(json.load(handle))


def default_scenario() -> ScenarioConfig:
    """Hard scenario: boosting, maneuvering target watched broadside.

    The radar sits abeam the launch azimuth so the line-of-sight speed is
    near zero at track initiation and the unmodeled thrust, gravity, and
    terminal maneuvers project increasingly into range as the flight
    develops. Wide bandwidths then gate out their own measurements during
    boost and reentry (the prediction-error floor exceeds the narrow
    window) while midcourse is safe at any bandwidth; policies that react
    to the flight phase keep the track where fixed wide ones lose it.
    """
    return ScenarioConfig(
        trajectory=TrajectoryConfig(terminal_maneuver_accel_std=12.0),
        radar=RadarConfig(
            position=(14_800.0, -17_600.0, 0.0),
            snr_ref=120.0,
            range_ref=23_000.0,
        ),
        process=ProcessModel(
            dt=0.5,
            accel_noise_std={
                Phase.BOOST: 12.0,
                Phase.MID_COURSE: 5.0,
                Phase.TERMINAL: 22.0,
            },
        ),
        episode=EpisodeConfig(),
    )


def easy_scenario() -> ScenarioConfig:
    """Benign transfer scenario: gentler boost, no terminal maneuvers.

    Same radar, tracker, and protocol as the default scenario; only the
    target differs, so a Q-table trained on the default scenario can be
    evaluated here unchanged.
    """
    base = default_scenario()
    trajectory = TrajectoryConfig(
        launch_elevation_angle=1.31,
        thrust_accel=30.0,
        boost_duration=16.0,
        terminal_maneuver_accel_std=0.0,
        reentry_altitude=2_500.0,
    )
    return replace(base, trajectory=trajectory)
