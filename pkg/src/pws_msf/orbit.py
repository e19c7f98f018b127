"""Attracting periodic orbit of a single agent and its event skeleton."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentModel, Mode
from .errors import ChatterDetected, NoEventFound, NotConverged
from .integrator import (
    DEFAULT_STEP,
    MAX_EVENTS,
    EventKind,
    EventRecord,
    Segment,
    Trajectory,
    flow_segment,
    initial_mode,
    integrate_hybrid,
)

SKELETON_FORMAT = "pws-msf/orbit-skeleton"

_ALLOWED = {
    Mode.MINUS: {EventKind.CROSS_MINUS_TO_PLUS, EventKind.SLIDE_ENTRY_FROM_MINUS},
    Mode.PLUS: {EventKind.CROSS_PLUS_TO_MINUS, EventKind.SLIDE_ENTRY_FROM_PLUS},
    Mode.SLIDING: {EventKind.EXIT_TO_MINUS, EventKind.EXIT_TO_PLUS},
}


@dataclass
class OrbitSkeleton:
    """One period of ``x_S`` starting from a free-flow state ``anchor_state``.

    ``segments`` tile ``[0, period]``; every segment but the last ends with the
    event that switches to the next one.
    """

    period: float
    anchor_state: np.ndarray
    anchor_mode: Mode
    segments: list[Segment]
    step: float
    model_name: str = "custom"
    model_params: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def events(self) -> list[EventRecord]:
        return [s.event for s in self.segments if s.event is not None]

    @property
    def times(self) -> np.ndarray:
        return Trajectory(self.segments).times

    @property
    def states(self) -> np.ndarray:
        return Trajectory(self.segments).states

    def sliding_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.mode is Mode.SLIDING]

    def to_dict(self, sample_stride: int | None = None) -> dict:
        data = {
            "format": SKELETON_FORMAT,
            "version": 1,
            "model": {"name": self.model_name, "params": dict(self.model_params)},
            "step": self.step,
            "period": self.period,
            "anchor_state": self.anchor_state.tolist(),
            "anchor_mode": self.anchor_mode.value,
            "segments": [
                {"mode": s.mode.value, "t_start": s.t_start, "t_end": s.t_end,
                 "x_start": s.states[0].tolist()}
                for s in self.segments
            ],
            "events": [
                {"time": e.time, "state": e.state.tolist(), "kind": e.kind.value,
                 "saltation": e.saltation.tolist()}
                for e in self.events
            ],
        }
        if sample_stride:
            t = self.times
            x = self.states
            idx = np.unique(np.r_[np.arange(0, len(t), sample_stride), len(t) - 1])
            data["samples"] = {"t": t[idx].tolist(), "x": x[idx].tolist()}
        return data

    @classmethod
    def from_dict(cls, data: dict, model: AgentModel) -> "OrbitSkeleton":
        """Rebuild a skeleton, regenerating the fine grid by re-integration."""
        if data.get("format") != SKELETON_FORMAT:
            raise ValueError("not an orbit skeleton document")
        events = [
            EventRecord(float(e["time"]), np.array(e["state"], dtype=float),
                        EventKind(e["kind"]), np.array(e["saltation"], dtype=float))
            for e in data["events"]
        ]
        step = float(data["step"])
        segments = []
        ev_iter = iter(events)
        n = len(data["segments"])
        for i, s in enumerate(data["segments"]):
            seg = flow_segment(model, Mode(s["mode"]), np.array(s["x_start"], dtype=float),
                               float(s["t_start"]), step, float(s["t_end"]), detect_events=False)
            if i < n - 1:
                seg.event = next(ev_iter)
                seg.states[-1] = seg.event.state
            segments.append(seg)
        return cls(
            period=float(data["period"]),
            anchor_state=np.array(data["anchor_state"], dtype=float),
            anchor_mode=Mode(data["anchor_mode"]),
            segments=segments,
            step=step,
            model_name=data["model"]["name"],
            model_params=dict(data["model"]["params"]),
        )


def check_grammar(segments: list[Segment]) -> None:
    """Raise ``ValueError`` unless modes and events alternate consistently."""
    for i, seg in enumerate(segments):
        ev = seg.event
        if ev is None:
            if i != len(segments) - 1:
                raise ValueError(f"segment {i} ends without an event")
            continue
        if ev.kind not in _ALLOWED[seg.mode]:
            raise ValueError(f"{ev.kind.value} cannot end a {seg.mode.value} segment")
        if i + 1 < len(segments) and segments[i + 1].mode is not ev.kind.target:
            raise ValueError(f"segment {i + 1} mode does not follow {ev.kind.value}")


def _chain(model, mode, x, t, step, t_stop, max_events):
    """Yield consecutive segments from ``(t, x)`` until ``t_stop``."""
    n_events = 0
    while t < t_stop:
        seg = flow_segment(model, mode, x, t, step, t_stop)
        yield seg
        if seg.event is None:
            return
        n_events += 1
        if n_events > max_events:
            raise ChatterDetected(f"more than {max_events} events")
        x, t, mode = seg.event.state, seg.event.time, seg.event.kind.target


def find_periodic_orbit(model: AgentModel, x0, step: float = DEFAULT_STEP, tol: float = 1e-10,
                        max_laps: int = 50, anchor_kind: EventKind | None = None,
                        max_time: float = 1e4, max_events: int = MAX_EVENTS) -> OrbitSkeleton:
    """Converge onto an attracting periodic orbit and extract its skeleton.

    A recurring event (by default the first tangential exit kind met) serves
    as Poincare anchor; laps are iterated until consecutive anchor states agree
    to ``tol`` in the max norm. The returned skeleton is re-anchored at the
    middle of the longest free-flow segment of the converged lap.
    """
    x0 = np.asarray(x0, dtype=float)
    mode = initial_mode(model, x0)
    segments: list[Segment] = []
    anchors: list[tuple[float, np.ndarray, int]] = []
    seen: set[EventKind] = set()
    chosen = anchor_kind
    converged = False
    for seg in _chain(model, mode, x0, 0.0, step, max_time, max_events):
        segments.append(seg)
        ev = seg.event
        if ev is None:
            break
        if chosen is None and (ev.kind.is_exit or ev.kind in seen):
            chosen = ev.kind
        seen.add(ev.kind)
        if ev.kind is not chosen:
            continue
        anchors.append((ev.time, ev.state, len(segments) - 1))
        if len(anchors) >= 2:
            diff = np.max(np.abs(anchors[-1][1] - anchors[-2][1]))
            if diff < tol:
                converged = True
                break
            if len(anchors) - 1 >= max_laps:
                raise NotConverged(f"anchor states still differ by {diff:.3e} after "
                                   f"{max_laps} laps")
    if not seen:
        raise NoEventFound(f"no event within t = {max_time}")
    if not converged:
        raise NotConverged(f"no convergence within t = {max_time} ({len(anchors)} anchor hits)")

    t_prev, _, i_prev = anchors[-2]
    t_last, _, i_last = anchors[-1]
    period = t_last - t_prev
    lap = segments[i_prev + 1:i_last + 1]
    free = [s for s in lap if s.mode is not Mode.SLIDING and len(s.times) > 2]
    if not free:
        raise NoEventFound("orbit has no free-flow segment to anchor at")
    longest = max(free, key=lambda s: s.t_end - s.t_start)
    mid = len(longest.times) // 2
    s0 = longest.states[mid].copy()
    skeleton_segments = list(_chain(model, longest.mode, s0, 0.0, step, period, max_events))
    check_grammar(skeleton_segments)
    return OrbitSkeleton(
        period=period,
        anchor_state=s0,
        anchor_mode=longest.mode,
        segments=skeleton_segments,
        step=step,
        model_name=model.name,
        model_params=dict(model.params),
    )


def resample(model: AgentModel, skeleton: OrbitSkeleton, step: float) -> OrbitSkeleton:
    """Re-integrate every segment of ``skeleton`` on a grid of size ``step``.

    Segment boundaries and event records are kept; only the fine grid (and
    with it the stage states used for linearization) changes.
    """
    if math.isclose(step, skeleton.step, rel_tol=0.0, abs_tol=0.0):
        return skeleton
    data = skeleton.to_dict()
    data["step"] = step
    return OrbitSkeleton.from_dict(data, model)


def orbit_residual(model: AgentModel, skeleton: OrbitSkeleton) -> float:
    """``|x(T) - x(0)|`` after re-integrating one period from the anchor."""
    traj = integrate_hybrid(model, skeleton.anchor_state, 0.0, skeleton.period, skeleton.step,
                            mode=skeleton.anchor_mode)
    return float(np.linalg.norm(traj.final_state - skeleton.anchor_state))
