"""Waveform-selection policies behind one decision interface.

Four policies choose the transmit bandwidth each dwell: a fixed bandwidth,
a heuristic that halves on a miss and doubles after five consecutive hits,
tabular Q-learning over a discretized (prediction variance, measurement
variance) state, and an L-step lookahead variant that propagates each reward
to the last L state-action pairs.

The Q-learning convention: the reward observed at transmission t updates the
previous pair, Q[s_{t-1}, a_{t-1}] += alpha * (r_t + gamma * max Q[s_t, :]
- Q[s_{t-1}, a_{t-1}]), so the very first transmission of an episode performs
no update.  The lookahead variant applies the same rule to the last L pairs,
newest first, against the evolving table.
"""

from __future__ import annotations

import json
import os
import tempfile
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .radar import DEFAULT_MAX_BW, DEFAULT_MIN_BW

DEFAULT_ACTIONS_HZ = (0.5e6, 1.0e6, 2.5e6, 5.0e6, 7.5e6, 10.0e6)
N_PRED_VAR_EDGES = 9  # 10 prediction-variance bins
N_MEAS_VAR_EDGES = 7  # 8 measurement-variance bins
DEFAULT_ALPHA = 0.1
DEFAULT_GAMMA = 0.9
DEFAULT_EPSILON = 0.2
DEFAULT_REWARD_CLIP = 2.0

_QTABLE_JSON_KEYS = (
    "alpha",
    "gamma",
    "epsilon",
    "C",
    "L",
    "actions_hz",
    "pred_var_edges",
    "meas_var_edges",
    "values",
)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class PolicyContext:
    """What the transmitter knows when it must pick the next waveform.

    ``predicted_range_variance`` is the range-projected prior variance
    (H P- H')_rr; ``last_measurement_range_variance`` is R_rr of the previous
    transmission's waveform.
    """

    predicted_range_variance: float  # m^2
    last_measurement_range_variance: float  # m^2
    last_correlated: bool
    correlated_streak: int
    step: int

    def __post_init__(self) -> None:
        if self.predicted_range_variance <= 0.0:
            raise ValueError("predicted_range_variance must be > 0")
        if self.last_measurement_range_variance <= 0.0:
            raise ValueError("last_measurement_range_variance must be > 0")
        if self.correlated_streak < 0:
            raise ValueError("correlated_streak must be >= 0")


@dataclass(frozen=True)
class ActionSet:
    """Ordered menu of transmit bandwidths."""

    bandwidths: tuple[float, ...] = DEFAULT_ACTIONS_HZ

    def __post_init__(self) -> None:
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        if len(self.bandwidths) < 2:
            raise ValueError("need at least two actions")
        if any(b <= 0.0 for b in self.bandwidths):
            raise ValueError("bandwidths must be > 0")
        if any(np.diff(self.bandwidths) <= 0.0):
            raise ValueError("bandwidths must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bandwidths)

    def __getitem__(self, index: int) -> float:
        return self.bandwidths[index]


@dataclass(frozen=True)
class Discretizer:
    """Maps the two context variances to one of 80 states.

    Bins are half-open [lo, hi): a value equal to an edge lands in the higher
    bin; values below the first edge go to bin 0 and above the last edge to
    the final bin, so every positive variance has a state.
    """

    pred_var_edges: tuple[float, ...]  # 9 ascending thresholds, m^2
    meas_var_edges: tuple[float, ...]  # 7 ascending thresholds, m^2

    def __post_init__(self) -> None:
        for name, edges, expected in (
            ("pred_var_edges", self.pred_var_edges, N_PRED_VAR_EDGES),
            ("meas_var_edges", self.meas_var_edges, N_MEAS_VAR_EDGES),
        ):
            edges = tuple(float(e) for e in edges)
            object.__setattr__(self, name, edges)
            if len(edges) != expected:
                raise ValueError(f"{name} must have {expected} thresholds")
            if any(np.diff(edges) <= 0.0):
                raise ValueError(f"{name} must be strictly ascending")
            if edges[0] <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_pred_bins(self) -> int:
        return len(self.pred_var_edges) + 1

    @property
    def n_meas_bins(self) -> int:
        return len(self.meas_var_edges) + 1

    @property
    def n_states(self) -> int:
        return self.n_pred_bins * self.n_meas_bins

    def pred_bin(self, variance: float) -> int:
        return int(np.searchsorted(self.pred_var_edges, variance, side="right"))

    def meas_bin(self, variance: float) -> int:
        return int(np.searchsorted(self.meas_var_edges, variance, side="right"))

    def state_index(self, pred_var: float, meas_var: float) -> int:
        return self.pred_bin(pred_var) * self.n_meas_bins + self.meas_bin(meas_var)

    @classmethod
    def from_samples(
        cls, pred_vars: Iterable[float], meas_vars: Iterable[float]
    ) -> "Discretizer":
        """Log-spaced edges between the 1st and 99th sample percentiles."""
        def edges(samples, n_edges):
            samples = np.asarray(list(samples), dtype=float)
            if samples.size < 2:
                raise ValueError("need at least two calibration samples")
            lo, hi = np.percentile(samples, [1.0, 99.0])
            if not 0.0 < lo < hi:
                raise ValueError("calibration samples must spread over positives")
            return tuple(np.geomspace(lo, hi, n_edges))

        return cls(
            pred_var_edges=edges(pred_vars, N_PRED_VAR_EDGES),
            meas_var_edges=edges(meas_vars, N_MEAS_VAR_EDGES),
        )

    def to_json_dict(self) -> dict:
        return {
            "pred_var_edges": list(self.pred_var_edges),
            "meas_var_edges": list(self.meas_var_edges),
        }

    def save(self, path: str) -> None:
        _atomic_write(path, json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str) -> "Discretizer":
        with open(path) as handle:
            doc = json.load(handle)
        missing = [k for k in ("pred_var_edges", "meas_var_edges") if k not in doc]
        if missing:
            raise ValueError(f"edges file missing keys: {missing}")
        return cls(
            pred_var_edges=tuple(doc["pred_var_edges"]),
            meas_var_edges=tuple(doc["meas_var_edges"]),
        )


def discretize(ctx: PolicyContext, discretizer: Discretizer) -> int:
    return discretizer.state_index(
        ctx.predicted_range_variance, ctx.last_measurement_range_variance
    )


# ---------------------------------------------------------------------------
# Q-table
# ---------------------------------------------------------------------------


@dataclass
class QTable:
    """Tabular action values plus everything needed to reuse them later."""

    values: np.ndarray  # (n_states, n_actions)
    discretizer: Discretizer
    actions: ActionSet = field(default_factory=ActionSet)
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPSILON
    C: float = DEFAULT_REWARD_CLIP
    L: int = 1

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.discretizer.n_states, len(self.actions))
        if self.values.shape != expected:
            raise ValueError(f"values must have shape {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
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

    @classmethod
    def zeros(cls, discretizer: Discretizer, **kwargs) -> "QTable":
        actions = kwargs.pop("actions", ActionSet())
        values = np.zeros((discretizer.n_states, len(actions)))
        return cls(values=values, discretizer=discretizer, actions=actions, **kwargs)

    def copy(self) -> "QTable":
        return QTable(
            values=self.values.copy(),
            discretizer=self.discretizer,
            actions=self.actions,
            alpha=self.alpha,
            gamma=self.gamma,
            epsilon=self.epsilon,
            C=self.C,
            L=self.L,
        )

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "C": self.C,
            "L": self.L,
            "actions_hz": list(self.actions.bandwidths),
            "pred_var_edges": list(self.discretizer.pred_var_edges),
            "meas_var_edges": list(self.discretizer.meas_var_edges),
            "values": self.values.tolist(),
        }

    def save(self, path: str) -> None:
        """Atomic write: the file appears complete or not at all."""
        _atomic_write(path, json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str) -> "QTable":
        with open(path) as handle:
            doc = json.load(handle)
        missing = [key for key in _QTABLE_JSON_KEYS if key not in doc]
        if missing:
            raise ValueError(f"Q-table file missing keys: {missing}")
        values = np.asarray(doc["values"], dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        return cls(
            values=values,
            discretizer=Discretizer(
                pred_var_edges=tuple(doc["pred_var_edges"]),
                meas_var_edges=tuple(doc["meas_var_edges"]),
            ),
            actions=ActionSet(bandwidths=tuple(doc["actions_hz"])),
            alpha=float(doc["alpha"]),
            gamma=float(doc["gamma"]),
            epsilon=float(doc["epsilon"]),
            C=float(doc["C"]),
            L=int(doc["L"]),
        )

    @property
    def value_bound(self) -> float:
        """|Q| never exceeds C/(1-gamma) once rewards are clipped to [-C, 0]."""
        return self.C / (1.0 - self.gamma)


class TransitionBuffer:
    """Ring buffer of the last ``capacity`` (state, action) pairs."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._pairs: deque[tuple[int, int]] = deque(maxlen=capacity)

    def push(self, state: int, action: int) -> None:
        self._pairs.append((int(state), int(action)))

    def clear(self) -> None:
        self._pairs.clear()

    def __len__(self) -> int:
        return len(self._pairs)

    def newest_first(self) -> list[tuple[int, int]]:
        return list(reversed(self._pairs))


# ---------------------------------------------------------------------------
# Learning rules
# ---------------------------------------------------------------------------


def reward(range_error: float, lost: bool, C: float = DEFAULT_REWARD_CLIP) -> float:
    """Negative range error in km, clipped at C; loss is always worst (-C)."""
    if range_error < 0.0:
        raise ValueError("range_error must be >= 0")
    if lost:
        return -C
    return -min(range_error / 1000.0, C)


def q_update(table: QTable, s_prev: int, a_prev: int, r: float, s_now: int) -> QTable:
    """One temporal-difference backup; mutates and returns the table."""
    td_target = r + table.gamma * table.values[s_now].max()
    table.values[s_prev, a_prev] += table.alpha * (
        td_target - table.values[s_prev, a_prev]
    )
    return table


def lookahead_update(
    table: QTable, buffer: TransitionBuffer, r: float, s_now: int
) -> QTable:
    """Back up the same reward to every buffered pair, newest first.

    Each sub-update re-reads the bootstrap term from the table as it stands,
    so earlier sub-updates feed later ones.
    """
    if len(buffer) == 0:
        raise ValueError("empty transition buffer")
    for s_prev, a_prev in buffer.newest_first():
        q_update(table, s_prev, a_prev, r, s_now)
    return table


def select_action(
    table: QTable, s: int, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over Q[s, :]; greedy ties break to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(table.actions)))
    return int(np.argmax(table.values[s]))


def bandwidth_scaling_step(
    prev_bw: float,
    correlated: bool,
    correlated_streak: int,
    min_bw: float = DEFAULT_MIN_BW,
    max_bw: float = DEFAULT_MAX_BW,
) -> tuple[float, int]:
    """One step of the halve-on-miss / double-after-5-hits heuristic.

    Returns the new bandwidth and streak.  The streak resets after a doubling
    so another five consecutive hits are needed before the next one.
    """
    if not min_bw <= prev_bw <= max_bw:
        raise ValueError("prev_bw out of [min_bw, max_bw]")
    if not correlated:
        return max(prev_bw / 2.0, min_bw), 0
    streak = correlated_streak + 1
    if streak >= 5:
        return min(2.0 * prev_bw, max_bw), 0
    return prev_bw, streak


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy(ABC):
    """Per-dwell bandwidth selection.

    ``last_state`` / ``last_action`` expose the tabular indices behind the
    most recent choice (None for policies that do not discretize).
    """

    last_state: Optional[int] = None
    last_action: Optional[int] = None

    @property
    def reward_clip(self) -> float:
        """C of the reward rule; episodes score every policy with it."""
        return DEFAULT_REWARD_CLIP

    def reset(self) -> None:
        """Clear per-episode state; the default has none."""
        self.last_state = None
        self.last_action = None

    @abstractmethod
    def initial_bandwidth(self) -> float:
        """Bandwidth of the track-initiation transmission."""

    @abstractmethod
    def choose(self, ctx: PolicyContext, rng: np.random.Generator) -> float:
        """Pick the bandwidth for the next transmission."""

    def learn(self, r: float) -> None:
        """Consume the reward observed after the last choice; default no-op."""


class FixedPolicy(Policy):
    """Always transmits the same bandwidth."""

    def __init__(
        self,
        bandwidth: float,
        min_bw: float = DEFAULT_MIN_BW,
        max_bw: float = DEFAULT_MAX_BW,
    ) -> None:
        if not min_bw <= bandwidth <= max_bw:
            raise ValueError("bandwidth out of [min_bw, max_bw]")
        self.bandwidth = float(bandwidth)

    def initial_bandwidth(self) -> float:
        return self.bandwidth

    def choose(self, ctx: PolicyContext, rng: np.random.Generator) -> float:
        return self.bandwidth


class BandwidthScalingPolicy(Policy):
    """Start wide, halve on every miss, double after five straight hits."""

    def __init__(
        self, min_bw: float = DEFAULT_MIN_BW, max_bw: float = DEFAULT_MAX_BW
    ) -> None:
        if not 0.0 < min_bw <= max_bw:
            raise ValueError("need 0 < min_bw <= max_bw")
        self.min_bw = float(min_bw)
        self.max_bw = float(max_bw)
        self.reset()

    def reset(self) -> None:
        super().reset()
        self._prev_bw = self.max_bw
        self._streak = 0

    def initial_bandwidth(self) -> float:
        return self.max_bw

    def choose(self, ctx: PolicyContext, rng: np.random.Generator) -> float:
        bw, self._streak = bandwidth_scaling_step(
            self._prev_bw,
            ctx.last_correlated,
            self._streak,
            self.min_bw,
            self.max_bw,
        )
        self._prev_bw = bw
        return bw


class QLearningPolicy(Policy):
    """Tabular Q-learning; ``lookahead`` (table.L) > 1 backs each reward up
    to that many previous state-action pairs."""

    def __init__(self, table: QTable, epsilon: Optional[float] = None) -> None:
        self.table = table
        self.epsilon = table.epsilon if epsilon is None else float(epsilon)
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self._buffer = TransitionBuffer(table.L)
        self._pending: Optional[tuple[int, int]] = None
        self.reset()

    @property
    def reward_clip(self) -> float:
        return self.table.C

    def reset(self) -> None:
        super().reset()
        self._buffer.clear()
        self._pending = None

    def initial_bandwidth(self) -> float:
        return self.table.actions[len(self.table.actions) - 1]

    def choose(self, ctx: PolicyContext, rng: np.random.Generator) -> float:
        s = discretize(ctx, self.table.discretizer)
        a = select_action(self.table, s, self.epsilon, rng)
        self.last_state, self.last_action = s, a
        self._pending = (s, a)
        return self.table.actions[a]

    def learn(self, r: float) -> None:
        """Reward observed after the last choice backs up the buffered pairs
        with a bootstrap from the state that choice acted on."""
        if self._pending is None:
            raise ValueError("learn called before choose")
        s_now, _ = self._pending
        if len(self._buffer) > 0:
            lookahead_update(self.table, self._buffer, r, s_now)
        self._buffer.push(*self._pending)
        self._pending = None
