"""Fixed-step RK4 integration of a single Filippov agent with event location.

Each mode is integrated on its own grid ``t_start + k * step``; the grid is
restarted at every event node. Every step keeps its four stage states so that
a linearization along the trajectory can later be co-integrated on exactly
the same mesh.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .agent import (
    ZERO_BAND,
    AgentModel,
    Mode,
    PointKind,
    classify_point,
    exit_rate,
    saltation_crossing,
    saltation_slide_entry,
    sliding_alpha,
    sliding_field,
)
from .errors import (
    ChatterDetected,
    DegenerateEvent,
    MaxIterations,
    NoSignChange,
    NonFiniteValue,
)

SLIDING_DRIFT_TOL = 1e-10
EVENT_TOL = 1e-12
DEFAULT_STEP = 1e-3
MAX_EVENTS = 10_000


class EventKind(enum.Enum):
    CROSS_MINUS_TO_PLUS = "CrossMinusToPlus"
    CROSS_PLUS_TO_MINUS = "CrossPlusToMinus"
    SLIDE_ENTRY_FROM_MINUS = "SlideEntryFromMinus"
    SLIDE_ENTRY_FROM_PLUS = "SlideEntryFromPlus"
    EXIT_TO_MINUS = "TangentialExitToMinus"
    EXIT_TO_PLUS = "TangentialExitToPlus"

    @property
    def source(self) -> Mode:
        return _SOURCE[self]

    @property
    def target(self) -> Mode:
        return _TARGET[self]

    @property
    def is_exit(self) -> bool:
        return self in (EventKind.EXIT_TO_MINUS, EventKind.EXIT_TO_PLUS)


_SOURCE = {
    EventKind.CROSS_MINUS_TO_PLUS: Mode.MINUS,
    EventKind.CROSS_PLUS_TO_MINUS: Mode.PLUS,
    EventKind.SLIDE_ENTRY_FROM_MINUS: Mode.MINUS,
    EventKind.SLIDE_ENTRY_FROM_PLUS: Mode.PLUS,
    EventKind.EXIT_TO_MINUS: Mode.SLIDING,
    EventKind.EXIT_TO_PLUS: Mode.SLIDING,
}
_TARGET = {
    EventKind.CROSS_MINUS_TO_PLUS: Mode.PLUS,
    EventKind.CROSS_PLUS_TO_MINUS: Mode.MINUS,
    EventKind.SLIDE_ENTRY_FROM_MINUS: Mode.SLIDING,
    EventKind.SLIDE_ENTRY_FROM_PLUS: Mode.SLIDING,
    EventKind.EXIT_TO_MINUS: Mode.MINUS,
    EventKind.EXIT_TO_PLUS: Mode.PLUS,
}


@dataclass
class EventRecord:
    time: float
    state: np.ndarray
    kind: EventKind
    saltation: np.ndarray


@dataclass
class Segment:
    """One constant-mode stretch of a trajectory.

    ``stages[k]`` holds the four RK4 stage states of the step from
    ``times[k]`` to ``times[k + 1]``.
    """

    mode: Mode
    times: np.ndarray
    states: np.ndarray
    stages: np.ndarray
    event: EventRecord | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class Trajectory:
    segments: list[Segment]

    @property
    def events(self) -> list[EventRecord]:
        return [s.event for s in self.segments if s.event is not None]

    def _concat(self, attr):
        parts = [getattr(self.segments[0], attr)]
        parts += [getattr(s, attr)[1:] for s in self.segments[1:]]
        return np.concatenate(parts)

    @property
    def times(self) -> np.ndarray:
        return self._concat("times")

    @property
    def states(self) -> np.ndarray:
        return self._concat("states")

    @property
    def modes(self) -> list[Mode]:
        out = [self.segments[0].mode] * len(self.segments[0].times)
        for s in self.segments[1:]:
            out += [s.mode] * (len(s.times) - 1)
        return out

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[-1]

    @property
    def final_mode(self) -> Mode:
        seg = self.segments[-1]
        return seg.event.kind.target if seg.event is not None else seg.mode


# -- Runge-Kutta kernels ----------------------------------------------------


def _rk4(fun, x, h):
    k1 = fun(x)
    s2 = x + (0.5 * h) * k1
    k2 = fun(s2)
    s3 = x + (0.5 * h) * k2
    k3 = fun(s3)
    s4 = x + h * k3
    k4 = fun(s4)
    x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_new, np.stack([x, s2, s3, s4]), k1


def rk4_step(field: Callable, x, t: float, step: float) -> np.ndarray:
    """Classical RK4 step for ``x' = field(t, x)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    h = step
    k1 = np.asarray(field(t, x), dtype=float)
    k2 = np.asarray(field(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(field(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(field(t + h, x + h * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NonFiniteValue(f"non-finite stage derivative at t = {t}")
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_propagators(A: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Step matrices of RK4 applied to the linear system ``Z' = A(t) Z``.

    ``A`` has shape ``(K, 4, m, m)`` with the coefficient at the four stage
    points of each step; ``h`` holds the ``K`` step sizes. Returns ``P`` with
    ``Z_{k+1} = P[k] Z_k``, identical to stepping RK4 on ``Z`` directly.
    """
    m = A.shape[-1]
    eye = np.eye(m)
    hh = np.asarray(h, dtype=float)[:, None, None]
    A1, A2, A3, A4 = A[:, 0], A[:, 1], A[:, 2], A[:, 3]
    K1 = A1
    K2 = A2 @ (eye + 0.5 * hh * K1)
    K3 = A3 @ (eye + 0.5 * hh * K2)
    K4 = A4 @ (eye + hh * K3)
    return eye + (hh / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def ordered_product(P: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Return ``P[K-1] @ ... @ P[1] @ P[0]`` using pairwise reduction."""
    m = P.shape[-1]
    out = np.eye(m)
    for start in range(0, len(P), chunk):
        block = P[start:start + chunk]
        while len(block) > 1:
            if len(block) % 2:
                block = np.concatenate([block, np.eye(m)[None]])
            block = block[1::2] @ block[0::2]
        out = block[0] @ out
    return out


def integrate_ltv(coefficient: Callable[[float], np.ndarray], Z0, t0: float, t1: float,
                  step: float) -> np.ndarray:
    """Propagate ``Z' = coefficient(t) Z`` from ``t0`` to ``t1`` with fixed-step RK4."""
    Z0 = np.asarray(Z0, dtype=float)
    if t1 == t0:
        return Z0.copy()
    n_full = int(math.floor((t1 - t0) / step))
    grid = [t0 + k * step for k in range(n_full + 1)]
    if t1 - grid[-1] > 1e-12 * step:
        grid.append(t1)
    else:
        grid[-1] = t1
    grid = np.array(grid)
    h = np.diff(grid)
    A = np.empty((len(h), 4) + (Z0.shape[0],) * 2)
    for k, (t, hk) in enumerate(zip(grid[:-1], h)):
        A[k, 0] = coefficient(t)
        A[k, 1] = A[k, 2] = coefficient(t + 0.5 * hk)
        A[k, 3] = coefficient(t + hk)
    if not np.all(np.isfinite(A)):
        raise NonFiniteValue("non-finite coefficient matrix")
    Z = ordered_product(rk4_propagators(A, h)) @ Z0
    if not np.all(np.isfinite(Z)):
        raise NonFiniteValue("non-finite fundamental matrix")
    return Z


# -- event location ---------------------------------------------------------


def _hermite(x_a, f_a, x_b, f_b, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * x_a + (t3 - 2 * t2 + theta) * h * f_a
            + (-2 * t3 + 3 * t2) * x_b + (t3 - t2) * h * f_b)


def _locate(fun, x_a, h, x_b, event_fn, event_grad=None, f_a=None):
    """Root of ``event_fn`` inside one RK4 step; returns ``(tau, x, stages)``."""
    g_a = event_fn(x_a)
    g_b = event_fn(x_b)
    if g_a == 0.0:
        return 0.0, x_a.copy(), np.stack([x_a] * 4)
    if np.sign(g_a) == np.sign(g_b):
        raise NoSignChange(f"event function has signs ({g_a:.3e}, {g_b:.3e}) over the step")
    if f_a is None:
        f_a = fun(x_a)
    f_b = fun(x_b)
    theta = brentq(lambda th: event_fn(_hermite(x_a, f_a, x_b, f_b, h, th)), 0.0, 1.0,
                   xtol=1e-14)

    def phi(tau):
        return event_fn(_rk4(fun, x_a, tau)[0])

    # narrow bracket around the dense-output guess, widened on failure
    lo, hi = 0.0, h
    delta = 1e-3 * h
    a, b = max(0.0, theta * h - delta), min(h, theta * h + delta)
    pa = g_a if a == 0.0 else phi(a)
    pb = g_b if b == h else phi(b)
    if np.sign(pa) != np.sign(pb) or pa == 0.0 or pb == 0.0:
        lo, hi = a, b
    try:
        tau = brentq(phi, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    except RuntimeError as exc:
        raise MaxIterations(str(exc)) from None
    x, stages, _ = _rk4(fun, x_a, tau)
    if event_grad is not None:
        for _ in range(8):
            g = event_fn(x)
            if abs(g) <= 1e-16 * (1.0 + np.linalg.norm(x)):
                break
            gr = event_grad(x)
            x = x - g * gr / (gr @ gr)
    if abs(event_fn(x)) > EVENT_TOL * (1.0 + np.linalg.norm(x)):
        raise MaxIterations(f"event residual {abs(event_fn(x)):.3e} above tolerance")
    return tau, x, stages


def _mode_fun(model: AgentModel, mode: Mode):
    if mode is Mode.MINUS:
        return model.field_minus
    if mode is Mode.PLUS:
        return model.field_plus
    return lambda x: sliding_field(model, x)


def locate_event(model: AgentModel, mode: Mode, bracket, event_fn, event_grad=None):
    """Locate a zero of ``event_fn`` along the flow of ``mode`` inside one step.

    ``bracket`` is ``(t_a, x_a, t_b, x_b)`` with ``x_b`` the RK4 image of
    ``x_a`` over ``t_b - t_a``. The dense-output root is refined on the RK4
    map itself; with ``event_grad`` the result is finally Newton-projected
    onto the zero set.
    """
    t_a, x_a, t_b, x_b = bracket
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    tau, x, _ = _locate(_mode_fun(model, mode), x_a, t_b - t_a, x_b, event_fn, event_grad)
    return t_a + tau, x


def project_to_surface(model: AgentModel, x: np.ndarray, tol: float = 1e-15) -> np.ndarray:
    for _ in range(10):
        hx = model.switch(x)
        if abs(hx) <= tol:
            break
        g = model.switch_grad(x)
        x = x - hx * g / (g @ g)
    return x


# -- hybrid integration -----------------------------------------------------


def initial_mode(model: AgentModel, x0) -> Mode:
    x0 = np.asarray(x0, dtype=float)
    hx = model.switch(x0)
    if abs(hx) > 1e-12 * (1.0 + np.linalg.norm(x0)):
        return Mode.PLUS if hx > 0 else Mode.MINUS
    kind = classify_point(model, x0).kind
    if kind is PointKind.ATTRACTIVE_SLIDING:
        return Mode.SLIDING
    if kind in (PointKind.CROSSING_UP, PointKind.TANGENTIAL_EXIT_PLUS):
        return Mode.PLUS
    if kind in (PointKind.CROSSING_DOWN, PointKind.TANGENTIAL_EXIT_MINUS):
        return Mode.MINUS
    raise DegenerateEvent(f"cannot start at a {kind.value} point {x0}")


def _event_at_surface(model, x, source):
    kind = classify_point(model, x).kind
    if kind is PointKind.ATTRACTIVE_SLIDING:
        ek = EventKind.SLIDE_ENTRY_FROM_MINUS if source is Mode.MINUS else EventKind.SLIDE_ENTRY_FROM_PLUS
        return ek, saltation_slide_entry(model, x, source)
    if source is Mode.MINUS and kind is PointKind.CROSSING_UP:
        return EventKind.CROSS_MINUS_TO_PLUS, saltation_crossing(model, x, Mode.MINUS)
    if source is Mode.PLUS and kind is PointKind.CROSSING_DOWN:
        return EventKind.CROSS_PLUS_TO_MINUS, saltation_crossing(model, x, Mode.PLUS)
    raise DegenerateEvent(f"non-generic surface hit from {source.value}: {kind.value} at {x}")


def _exit_event(model, x, kind):
    side = kind.target
    rate = exit_rate(model, x, side)
    f = model.field(side, x)
    band = ZERO_BAND * (1.0 + np.linalg.norm(f))
    ok = rate < -band if side is Mode.MINUS else rate > band
    if not ok:
        raise DegenerateEvent(f"tangential exit to {side.value} fails the derivative test "
                              f"(rate {rate:.3e}) at {x}")
    return kind, np.eye(x.size)


def flow_segment(model: AgentModel, mode: Mode, x0, t0: float, step: float, t_stop: float,
                 detect_events: bool = True) -> Segment:
    """Integrate in a fixed mode until the first event or ``t_stop``."""
    if not step > 0:
        raise ValueError("step must be positive")
    fun = _mode_fun(model, mode)
    x = np.asarray(x0, dtype=float).copy()
    times = [t0]
    states = [x]
    stages = []
    k = 0
    t = t0
    while t < t_stop:
        t_next = t0 + (k + 1) * step
        final = t_next >= t_stop
        if final:
            t_next = t_stop
        h = t_next - t
        x_b, st, f_a = _rk4(fun, x, h)
        if not np.all(np.isfinite(x_b)):
            raise NonFiniteValue(f"non-finite state at t = {t_next} in mode {mode.value}")
        if mode is Mode.SLIDING:
            x_b = project_to_surface(model, x_b)

        if detect_events:
            hit = _check_step(model, mode, x, x_b)
            if hit is not None:
                event_fn, event_grad, label = hit
                tau, x_ev, st_ev = _locate(fun, x, h, x_b, event_fn, event_grad, f_a)
                if mode is Mode.SLIDING:
                    x_ev = project_to_surface(model, x_ev)
                    kind, S = _exit_event(model, x_ev, label)
                else:
                    kind, S = _event_at_surface(model, x_ev, mode)
                t_ev = t + tau
                times.append(t_ev)
                states.append(x_ev)
                stages.append(st_ev)
                ev = EventRecord(t_ev, x_ev, kind, S)
                return Segment(mode, np.array(times), np.array(states),
                               np.array(stages).reshape(-1, 4, x.size), ev)
        times.append(t_next)
        states.append(x_b)
        stages.append(st)
        x = x_b
        t = t_next
        k += 1
    return Segment(mode, np.array(times), np.array(states),
                   np.array(stages).reshape(-1, 4, x.size), None)


def _check_step(model, mode, x_a, x_b):
    """Return ``(event_fn, event_grad, label)`` when the step crosses an event."""
    if mode is Mode.MINUS:
        h_b = model.switch(x_b)
        if h_b > 0 or (h_b == 0 and model.switch(x_a) != 0):
            return model.switch, model.switch_grad, None
        return None
    if mode is Mode.PLUS:
        h_b = model.switch(x_b)
        if h_b < 0 or (h_b == 0 and model.switch(x_a) != 0):
            return model.switch, model.switch_grad, None
        return None
    a_b = sliding_alpha(model, x_b)
    if a_b <= 0.0:
        return (lambda x: sliding_alpha(model, x)), None, EventKind.EXIT_TO_MINUS
    if a_b >= 1.0:
        return (lambda x: 1.0 - sliding_alpha(model, x)), None, EventKind.EXIT_TO_PLUS
    return None


def integrate_hybrid(model: AgentModel, x0, t0: float, t_end: float, step: float = DEFAULT_STEP,
                     mode: Mode | None = None, max_events: int = MAX_EVENTS) -> Trajectory:
    """Event-driven integration of one agent over ``[t0, t_end]``."""
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    x = np.asarray(x0, dtype=float)
    if mode is None:
        mode = initial_mode(model, x)
    elif mode is Mode.SLIDING:
        x = project_to_surface(model, x)
    segments = []
    t = t0
    n_events = 0
    while True:
        seg = flow_segment(model, mode, x, t, step, t_end)
        segments.append(seg)
        if seg.event is None:
            break
        n_events += 1
        if n_events > max_events:
            raise ChatterDetected(f"more than {max_events} events before t = {seg.t_end}")
        x = seg.event.state
        t = seg.event.time
        mode = seg.event.kind.target
        if t >= t_end:
            break
    return Trajectory(segments)
