"""Linearization along a stored orbit skeleton.

The coefficient of every variational system is evaluated at the RK4 stage
states recorded while integrating the orbit, which is the same as
co-integrating the agent and the linear system on one mesh.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .agent import AgentModel, Mode
from .errors import NonFiniteValue
from .integrator import Segment, ordered_product, rk4_propagators
from .orbit import OrbitSkeleton

CHUNK = 2048


def sliding_projector(model: AgentModel, x) -> np.ndarray:
    """``(f+ - f-) grad(h)^T / grad(h).(f- - f+)``; right-multiplied by ``E`` it gives ``B``."""
    fm = model.field_minus(x)
    fp = model.field_plus(x)
    g = model.switch_grad(x)
    return np.outer(fp - fm, g) / (g @ (fm - fp))


def segment_linearization(model: AgentModel, seg: Segment) -> dict:
    """Stage-point Jacobians (and, when sliding, projectors) of one segment.

    Shapes are ``(K, 4, n, n)``; results are cached on the segment.
    """
    key = ("lin",) + model.key
    if key in seg.cache:
        return seg.cache[key]
    K = len(seg.stages)
    n = seg.states.shape[1]
    pts = seg.stages.reshape(-1, n)
    jac = np.array([model.jacobian(seg.mode, p) for p in pts]).reshape(K, 4, n, n)
    out = {"jac": jac, "proj": None}
    if seg.mode is Mode.SLIDING:
        out["proj"] = np.array([sliding_projector(model, p) for p in pts]).reshape(K, 4, n, n)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteValue("non-finite Jacobian along the orbit")
    seg.cache[key] = out
    return out


def transition(model: AgentModel, skeleton: OrbitSkeleton, dim: int,
               coefficient: Callable[[Segment, dict, slice], np.ndarray],
               jump: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Accumulate the fundamental matrix over one period.

    ``coefficient(seg, lin, sl)`` returns the ``(k, 4, dim, dim)`` stage
    coefficients for the steps ``sl`` of ``seg``; ``jump`` maps an event's
    single-agent saltation matrix to the ``dim x dim`` jump applied after it.
    """
    Z = np.eye(dim)
    for seg in skeleton.segments:
        lin = segment_linearization(model, seg)
        h = seg.steps
        for start in range(0, len(h), CHUNK):
            sl = slice(start, start + CHUNK)
            A = coefficient(seg, lin, sl)
            Z = ordered_product(rk4_propagators(A, h[sl])) @ Z
        if seg.event is not None:
            Z = jump(seg.event.saltation) @ Z
    if not np.all(np.isfinite(Z)):
        raise NonFiniteValue("non-finite monodromy matrix")
    return Z
