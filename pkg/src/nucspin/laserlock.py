"""
Laser refocusing protocol for a drifting optical emitter.

The controller is a pure state machine: :func:`step` takes the current
:class:`ProtocolState` and the observation answering the previous action and
returns the next state and action. Phases::

    RESUME  --Tick-->          Probe (500 ms on the locked laser)
    PROBE   --Counts > 300-->  Resume
            --otherwise-->     Scan 3 GHz                      (SCAN3, attempt 1)
    SCAN3   --fit passes-->    LockTo A2, window recentred     (RESUME)
            --fails, 1st-->    Scan 3 GHz                      (SCAN3, attempt 2)
            --fails, 2nd-->    repump + scan 13 GHz            (RESET13, attempt 1)
    RESET13 --fit passes-->    Scan 3 GHz around A2            (SCAN3, escalated)
            --fails, 1st-->    repump + scan 13 GHz            (RESET13, attempt 2)
            --fails, 2nd-->    repump + scan 20 GHz            (RESET20)
    RESET20 --fit passes-->    Scan 3 GHz around A2            (SCAN3, escalated)
            --fails-->         repump + scan 20 GHz            (RESET20)

An escalated 3 GHz scan that fails goes straight to the 20 GHz search, so at
most eight actions separate any state from either Resume or a fresh 20 GHz
scan.

:class:`EmitterEnvironment` is a seeded simulated emitter answering those
actions, and :func:`run_closed_loop` couples the two.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from .fitting import DataSet, FitResult, fit_double_lorentzian, lorentzian

PROBE_S = 0.5
COUNT_THRESHOLD = 300
SCAN_RANGES_GHZ = (3.0, 13.0, 20.0)
MAX_SCAN3 = 2
MAX_RESET13 = 2
A2_WINDOW_FRACTION = 2.0 / 3.0


class ProtocolError(RuntimeError):
    """Observation does not answer the action the controller asked for."""


class Phase(str, enum.Enum):
    PROBE = "probe"
    SCAN3 = "scan3"
    RESET13 = "reset13"
    RESET20 = "reset20"
    RESUME = "resume"


# ---------------------------------------------------------------------------
# observations and actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Counts:
    counts: int

    def __post_init__(self):
        if self.counts < 0:
            raise ValueError("photon counts must be non-negative")


@dataclass(frozen=True, eq=False)
class ScanData:
    """Result of a frequency scan; ``fit`` may be supplied pre-computed."""

    data: DataSet | None = None
    fit: FitResult | None = None

    def __post_init__(self):
        if self.data is None and self.fit is None:
            raise ValueError("a scan observation needs data or a fit")


@dataclass(frozen=True)
class Tick:
    """The main measurement ran for one refocusing period."""

    elapsed_s: float = 0.0


Observation = Union[Counts, ScanData, Tick]


@dataclass(frozen=True)
class Probe:
    duration_s: float = PROBE_S


@dataclass(frozen=True)
class Scan:
    range_ghz: float
    center_ghz: float

    def __post_init__(self):
        if self.range_ghz not in SCAN_RANGES_GHZ:
            raise ValueError(f"scan range must be one of {SCAN_RANGES_GHZ} GHz")


@dataclass(frozen=True)
class RepumpThenScan(Scan):
    """Off-resonant charge reset (1 mW, 1 s, 785 nm) followed by a scan."""

    repump_s: float = 1.0


@dataclass(frozen=True)
class LockTo:
    """Fix the laser on ``frequency_ghz``; the next scan window is centred at ``window_center_ghz``."""

    frequency_ghz: float
    window_center_ghz: float


@dataclass(frozen=True)
class Resume:
    pass


Action = Union[Probe, Scan, RepumpThenScan, LockTo, Resume]


def action_name(action: Action) -> str:
    if isinstance(action, RepumpThenScan):
        return f"repump_scan{action.range_ghz:g}"
    if isinstance(action, Scan):
        return f"scan{action.range_ghz:g}"
    return {Probe: "probe", LockTo: "lock", Resume: "resume"}[type(action)]


def window_center_for(a2_ghz: float, span_ghz: float = SCAN_RANGES_GHZ[0]) -> float:
    """Centre of a ``span`` scan that places ``a2`` at 2/3 of the window."""
    return a2_ghz - (A2_WINDOW_FRACTION - 0.5) * span_ghz


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineCriteria:
    separation_ghz: tuple[float, float] = (0.9, 1.1)
    amplitude_ratio: tuple[float, float] = (1.0 / 3.0, 3.0)
    width_mhz: tuple[float, float] = (10.0, 100.0)
    min_snr: float = 5.0

    @classmethod
    def from_dict(cls, d: dict) -> "LineCriteria":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass(frozen=True)
class CriteriaReport:
    passed: bool
    checks: dict  # name -> (value, ok)

    @property
    def failed(self) -> list[str]:
        return [k for k, (_, ok) in self.checks.items() if not ok]


def _inside(value, window):
    return window[0] <= value <= window[1]


def check_criteria(fit: FitResult, criteria: LineCriteria = LineCriteria()) -> CriteriaReport:
    """Evaluate the separation, ratio, width and signal-to-background windows."""
    d = fit.derived
    w1, w2 = d["width1_mhz"], d["width2_mhz"]
    checks = {
        "separation": (d["separation_ghz"], _inside(d["separation_ghz"], criteria.separation_ghz)),
        "ratio": (d["amplitude_ratio"], _inside(d["amplitude_ratio"], criteria.amplitude_ratio)),
        "width": ((w1, w2), _inside(w1, criteria.width_mhz) and _inside(w2, criteria.width_mhz)),
        "snr": (d["snr"], d["snr"] > criteria.min_snr),
    }
    if not fit.converged:
        checks["converged"] = (False, False)
    return CriteriaReport(all(ok for _, ok in checks.values()), checks)


# ---------------------------------------------------------------------------
# state machine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolState:
    phase: Phase = Phase.PROBE
    attempts: int = 0
    window_center_ghz: float = 0.0
    last_fit: FitResult | None = field(default=None, compare=False)
    locked_ghz: float | None = None
    #: set after a 13 or 20 GHz scan succeeded; a failing 3 GHz scan then goes straight to 20 GHz
    escalated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase(self.phase))
        limit = {Phase.SCAN3: MAX_SCAN3, Phase.RESET13: MAX_RESET13}.get(self.phase)
        if limit is not None and not 1 <= self.attempts <= limit:
            raise ValueError(f"{self.phase.value} attempt counter must be in 1..{limit}")


_EXPECTED = {
    Phase.PROBE: Counts,
    Phase.SCAN3: ScanData,
    Phase.RESET13: ScanData,
    Phase.RESET20: ScanData,
    Phase.RESUME: Tick,
}


def _evaluate(obs: ScanData, criteria: LineCriteria) -> tuple[FitResult | None, bool]:
    fit = obs.fit
    if fit is None:
        try:
            fit = fit_double_lorentzian(obs.data)
        except ValueError:
            return None, False
    return fit, check_criteria(fit, criteria).passed


def step(state: ProtocolState, obs: Observation, criteria: LineCriteria = LineCriteria()
         ) -> tuple[ProtocolState, Action]:
    """Advance the refocusing protocol by one observation."""
    expected = _EXPECTED[state.phase]
    if not isinstance(obs, expected):
        raise ProtocolError(f"phase {state.phase.value} expects {expected.__name__}, got {type(obs).__name__}")
    center = state.window_center_ghz

    if state.phase is Phase.RESUME:
        return replace(state, phase=Phase.PROBE, attempts=0), Probe()

    if state.phase is Phase.PROBE:
        if obs.counts > COUNT_THRESHOLD:
            return replace(state, phase=Phase.RESUME, attempts=0), Resume()
        return replace(state, phase=Phase.SCAN3, attempts=1, escalated=False), Scan(3.0, center)

    fit, ok = _evaluate(obs, criteria)
    if ok:
        a2 = fit.derived["a2_center_ghz"]
        new_center = window_center_for(a2)
        if state.phase is Phase.SCAN3:
            new = replace(state, phase=Phase.RESUME, attempts=0, window_center_ghz=new_center,
                          last_fit=fit, locked_ghz=a2, escalated=False)
            return new, LockTo(a2, new_center)
        # a wide scan succeeded: go back to the fine 3 GHz scan around A2
        new = replace(state, phase=Phase.SCAN3, attempts=1, window_center_ghz=new_center, last_fit=fit,
                      escalated=True)
        return new, Scan(3.0, new_center)

    if state.phase is Phase.SCAN3:
        if state.escalated:
            # the wide scan found the lines but the fine scan did not: no second trip through 13 GHz
            return replace(state, phase=Phase.RESET20, attempts=1), RepumpThenScan(20.0, center)
        if state.attempts < MAX_SCAN3:
            return replace(state, attempts=state.attempts + 1), Scan(3.0, center)
        return replace(state, phase=Phase.RESET13, attempts=1), RepumpThenScan(13.0, center)
    if state.phase is Phase.RESET13:
        if state.attempts < MAX_RESET13:
            return replace(state, attempts=state.attempts + 1), RepumpThenScan(13.0, center)
        return replace(state, phase=Phase.RESET20, attempts=1), RepumpThenScan(20.0, center)
    return replace(state, attempts=state.attempts + 1), RepumpThenScan(20.0, center)


# ---------------------------------------------------------------------------
# simulated emitter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvironmentConfig:
    drift_mhz_per_min: float = 5.0
    drift_model: str = "persistent"  # or "gaussian"
    drift_step_s: float = 60.0
    a2_start_ghz: float = 0.0
    splitting_ghz: float = 1.0
    width_a1_mhz: float = 41.0
    width_a2_mhz: float = 24.0
    amplitude_ratio: float = 1.2  # A2 / A1 peak height
    probe_peak_counts: float = 1000.0  # per 500 ms, laser on A2
    probe_background_counts: float = 10.0
    scan_peak_counts: float = 100.0  # per scan bin at A2
    scan_background_counts: float = 5.0
    scan_step_mhz: float = 5.0
    scan_rate_ghz_per_s: float = 0.3
    ionization_probability: float = 0.0  # per probe or scan
    shot_noise: bool = True

    def __post_init__(self):
        for name in ("splitting_ghz", "width_a1_mhz", "width_a2_mhz", "amplitude_ratio", "probe_peak_counts",
                     "scan_peak_counts", "scan_step_mhz", "scan_rate_ghz_per_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("drift_mhz_per_min", "probe_background_counts", "scan_background_counts"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.drift_model not in ("persistent", "gaussian"):
            raise ValueError(f"unknown drift model {self.drift_model!r}")
        if not self.drift_step_s > 0:
            raise ValueError("drift_step_s must be positive")
        if not 0 <= self.ionization_probability <= 1:
            raise ValueError("ionization_probability must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentConfig":
        return cls(**d)


class EmitterEnvironment:
    """Seeded drifting emitter answering protocol actions.

    The A2 line random-walks. With the default ``"persistent"`` model it moves
    at exactly ``drift_mhz_per_min`` and picks a random direction every
    ``drift_step_s``; with ``"gaussian"`` it diffuses with that standard
    deviation per minute. A1 sits ``splitting_ghz`` below. Each probe or scan
    may ionise the emitter once it has been acquired; all lines then vanish
    until the next repump.
    """

    def __init__(self, config: EnvironmentConfig = EnvironmentConfig(), seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.t_s = 0.0
        self.a2_ghz = config.a2_start_ghz
        self.laser_ghz = config.a2_start_ghz
        self.dark = False
        self._direction = 0.0
        self._segment_left_s = 0.0

    # -- physics ---------------------------------------------------------
    def _advance(self, dt_s: float):
        if dt_s <= 0:
            return
        c = self.config
        rate_ghz_per_s = 1e-3 * c.drift_mhz_per_min / 60.0
        if c.drift_model == "gaussian":
            sigma_ghz = 1e-3 * c.drift_mhz_per_min * math.sqrt(dt_s / 60.0)
            if sigma_ghz > 0:
                self.a2_ghz += sigma_ghz * self.rng.standard_normal()
        else:
            left = dt_s
            while left > 0:
                if self._segment_left_s <= 0:
                    self._direction = 1.0 if self.rng.random() < 0.5 else -1.0
                    self._segment_left_s = c.drift_step_s
                dt = min(left, self._segment_left_s)
                self.a2_ghz += self._direction * rate_ghz_per_s * dt
                self._segment_left_s -= dt
                left -= dt
        self.t_s += dt_s

    def line_shape(self, freq_ghz) -> np.ndarray:
        """Peak-normalised A1 + A2 absorption (A2 height 1)."""
        c = self.config
        if self.dark:
            return np.zeros_like(np.asarray(freq_ghz, dtype=float))
        a1 = lorentzian(freq_ghz, self.a2_ghz - c.splitting_ghz, 1e-3 * c.width_a1_mhz, 1.0 / c.amplitude_ratio)
        return a1 + lorentzian(freq_ghz, self.a2_ghz, 1e-3 * c.width_a2_mhz, 1.0)

    def _counts(self, mean):
        mean = np.asarray(mean, dtype=float)
        return np.asarray(self.rng.poisson(mean), dtype=float) if self.config.shot_noise else mean

    def _maybe_ionize(self):
        if self.config.ionization_probability and self.rng.random() < self.config.ionization_probability:
            self.dark = True

    # -- protocol interface ----------------------------------------------
    def respond(self, action: Action, period_s: float = 60.0) -> Observation:
        c = self.config
        if isinstance(action, (Resume, LockTo)):
            if isinstance(action, LockTo):
                self.laser_ghz = action.frequency_ghz
            self._advance(period_s)
            return Tick(period_s)
        if isinstance(action, Probe):
            self._advance(action.duration_s)
            mean = c.probe_peak_counts * self.line_shape(self.laser_ghz) + c.probe_background_counts
            counts = Counts(int(round(float(self._counts(mean)))))
            self._maybe_ionize()
            return counts
        if isinstance(action, Scan):
            if isinstance(action, RepumpThenScan):
                self._advance(action.repump_s)
                self.dark = False
            self._advance(action.range_ghz / c.scan_rate_ghz_per_s)
            step_ghz = 1e-3 * c.scan_step_mhz
            n = int(round(action.range_ghz / step_ghz)) + 1
            x = action.center_ghz + np.linspace(-0.5, 0.5, n) * action.range_ghz
            y = self._counts(c.scan_peak_counts * self.line_shape(x) + c.scan_background_counts)
            self._maybe_ionize()
            return ScanData(DataSet(x, y, x_unit="GHz", y_unit="counts"))
        raise TypeError(f"unknown action {action!r}")


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


@dataclass
class LockRun:
    rows: list[dict]
    probe_errors_mhz: list[float]
    probe_linewidths_mhz: list[float]

    @property
    def fraction_within_linewidth(self) -> float:
        if not self.probe_errors_mhz:
            return float("nan")
        ok = [e <= w for e, w in zip(self.probe_errors_mhz, self.probe_linewidths_mhz)]
        return float(np.mean(ok))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        cols = ["t_s", "phase", "action", "counts_or_fit_center_ghz", "locked_error_mhz"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def run_closed_loop(env: EmitterEnvironment, duration_s: float = 3600.0, period_s: float = 60.0,
                    criteria: LineCriteria = LineCriteria(), max_actions: int = 100_000) -> LockRun:
    """Run the protocol against ``env`` for ``duration_s`` of simulated time.

    The loop starts with a 20 GHz search around the environment's initial laser
    frequency. At every probe the distance between laser and true A2 is logged
    together with the A2 linewidth of the last accepted fit.
    """
    state = ProtocolState(Phase.RESET20, attempts=1, window_center_ghz=env.laser_ghz)
    action: Action = RepumpThenScan(20.0, env.laser_ghz)
    rows, errors, widths = [], [], []
    for _ in range(max_actions):
        if env.t_s >= duration_s:
            break
        obs = env.respond(action, period_s)
        value = ""
        error = ""
        if isinstance(obs, Counts):
            value = obs.counts
            if state.locked_ghz is not None and state.last_fit is not None:
                error = 1e3 * abs(env.laser_ghz - env.a2_ghz)
                errors.append(error)
                widths.append(state.last_fit.derived["width2_mhz"])
        state, action = step(state, obs, criteria)
        if isinstance(action, LockTo):
            value = action.frequency_ghz
        rows.append({"t_s": env.t_s, "phase": state.phase.value, "action": action_name(action),
                     "counts_or_fit_center_ghz": value, "locked_error_mhz": error})
    return LockRun(rows, errors, widths)


def run_config_json(env_config: EnvironmentConfig, criteria: LineCriteria, seed: int, duration_s: float,
                    period_s: float) -> str:
    return json.dumps({"environment": asdict(env_config), "criteria": asdict(criteria), "seed": seed,
                       "duration_s": duration_s, "period_s": period_s}, sort_keys=True)


__all__ = [
    "Action", "Counts", "CriteriaReport", "EmitterEnvironment", "EnvironmentConfig", "LineCriteria", "LockRun",
    "LockTo", "Observation", "Phase", "Probe", "ProtocolError", "ProtocolState", "RepumpThenScan", "Resume",
    "Scan", "ScanData", "Tick", "check_criteria", "run_closed_loop", "step",
    "window_center_for",
]
