"""Timed simulation scenarios: control-layer activation, load events, noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

EVENT_KINDS = ("activate_steady", "activate_local", "activate_distributed",
               "set_I_L_bar", "scale_Y_L")


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    dg: int | None = None        # None applies to every DG
    value: float | None = None   # new I_L_bar (A) or Y_L scale factor

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind in ("set_I_L_bar", "scale_Y_L") and self.value is None:
            raise ValueError(f"{self.kind} needs a value")


@dataclass(frozen=True)
class Disturbance:
    enabled: bool = False
    sigma_v2: float = 0.5
    sigma_c2: float = 0.5
    sigma_l2: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    t_end: float
    h: float = 1e-4
    events: tuple[Event, ...] = ()
    disturbance: Disturbance = field(default_factory=Disturbance)
    # layer states at t = 0
    steady_on: bool = True
    local_on: bool = True
    distributed_on: bool = True

    def __post_init__(self):
        if self.h <= 0 or self.t_end <= 0:
            raise ValueError("need positive step and horizon")
        times = [e.t for e in self.events]
        if any(t < 0 or t > self.t_end for t in times):
            raise ValueError("event outside [0, t_end]")
        if sorted(times) != times:
            raise ValueError("events must be time-ordered")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.h))


def layer_activation_scenario(t_end: float = 10.0, h: float = 1e-4,
                              t_steady: float = 1.0, t_local: float = 3.0,
                              t_distributed: float = 6.0) -> Scenario:
    """All layers off at t=0, brought up in the standard order."""
    return Scenario(
        t_end, h,
        events=(Event(t_steady, "activate_steady"),
                Event(t_local, "activate_local"),
                Event(t_distributed, "activate_distributed")),
        steady_on=False, local_on=False, distributed_on=False)


def load_change_scenario(t_end: float = 10.0, h: float = 1e-4,
                         i_step: float = 3.0, y_scale: float = 1.3,
                         t_current: float | None = None,
                         t_up: float | None = None,
                         t_down: float | None = None,
                         base_I_L: float = 3.0) -> Scenario:
    """Current-load step then an impedance-load swell and restore.

    Default event times sit at 20%, 40% and 80% of the horizon (2, 4, 8 s
    on the standard 10 s run).
    """
    t_current = 0.2 * t_end if t_current is None else t_current
    t_up = 0.4 * t_end if t_up is None else t_up
    t_down = 0.8 * t_end if t_down is None else t_down
    return Scenario(
        t_end, h,
        events=(Event(t_current, "set_I_L_bar", dg=None, value=base_I_L + i_step),
                Event(t_up, "scale_Y_L", dg=None, value=y_scale),
                Event(t_down, "scale_Y_L", dg=None, value=1.0 / y_scale)))
