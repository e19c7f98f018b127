"""Piecewise-smooth agent and pointwise Filippov calculus.

An agent obeys ``x' = f-(x)`` where ``h(x) < 0`` and ``x' = f+(x)`` where
``h(x) > 0``. On the switching surface ``h = 0`` attractive sliding follows the
Filippov convex combination

    f_sigma = (1 - alpha) f- + alpha f+,
    alpha = grad(h).f- / grad(h).(f- - f+).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DegenerateDenominator,
    DimensionMismatch,
    OffManifold,
    WrongClassification,
)

Vector = np.ndarray
Matrix = np.ndarray
VectorField = Callable[[Vector], Vector]

# |s| <= ZERO_BAND * (1 + |f|) counts as a zero normal velocity
ZERO_BAND = 1e-9
ON_MANIFOLD_TOL = 1e-8
DENOMINATOR_TOL = 1e-12


class Mode(enum.Enum):
    MINUS = "minus"
    PLUS = "plus"
    SLIDING = "sliding"


class PointKind(enum.Enum):
    CROSSING_UP = "TransversalCrossingUp"
    CROSSING_DOWN = "TransversalCrossingDown"
    ATTRACTIVE_SLIDING = "AttractiveSliding"
    TANGENTIAL_EXIT_MINUS = "TangentialExitMinus"
    TANGENTIAL_EXIT_PLUS = "TangentialExitPlus"
    REPULSIVE = "Repulsive"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class PointClass:
    kind: PointKind
    dh_minus: float
    dh_plus: float


def _fd_jacobian(fun: VectorField) -> Callable[[Vector], Matrix]:
    eps3 = np.cbrt(np.finfo(float).eps)

    def jac(x):
        x = np.asarray(x, dtype=float)
        dx = eps3 * (1.0 + np.linalg.norm(x))
        cols = []
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = dx
            cols.append((fun(x + e) - fun(x - e)) / (2.0 * dx))
        return np.column_stack(cols)

    return jac


@dataclass(frozen=True)
class AgentModel:
    """The two smooth fields of one agent plus its switching function.

    Jacobians left as ``None`` fall back to central finite differences; a
    missing Hessian of ``h`` defaults to zero, which is exact for affine ``h``.
    With ``vectorized=True`` the fields, ``switch`` and ``switch_grad`` also
    accept an ``(n, k)`` array of ``k`` column states, which lets the network
    simulator evaluate all agents in one call.
    """

    dim: int
    field_minus: VectorField
    field_plus: VectorField
    switch: Callable[[Vector], float]
    switch_grad: Callable[[Vector], Vector]
    jac_minus: Callable[[Vector], Matrix] | None = None
    jac_plus: Callable[[Vector], Matrix] | None = None
    switch_hess: Callable[[Vector], Matrix] | None = None
    name: str = "custom"
    params: tuple = field(default=())
    vectorized: bool = False

    def __post_init__(self):
        if self.jac_minus is None:
            object.__setattr__(self, "jac_minus", _fd_jacobian(self.field_minus))
        if self.jac_plus is None:
            object.__setattr__(self, "jac_plus", _fd_jacobian(self.field_plus))
        if self.switch_hess is None:
            zero = np.zeros((self.dim, self.dim))
            object.__setattr__(self, "switch_hess", lambda x: zero.copy())

    @property
    def key(self) -> tuple:
        return (self.name, self.params)

    def field(self, mode: Mode, x: Vector) -> Vector:
        if mode is Mode.MINUS:
            return self.field_minus(x)
        if mode is Mode.PLUS:
            return self.field_plus(x)
        return sliding_field(self, x)

    def jacobian(self, mode: Mode, x: Vector) -> Matrix:
        if mode is Mode.MINUS:
            return self.jac_minus(x)
        if mode is Mode.PLUS:
            return self.jac_plus(x)
        return sliding_jacobian(self, x)


def _check_dim(model: AgentModel, x) -> Vector:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"expected state of length {model.dim}, got shape {x.shape}")
    return x


def _alpha_parts(model, x):
    fm = model.field_minus(x)
    fp = model.field_plus(x)
    g = model.switch_grad(x)
    num = g @ fm
    den = g @ (fm - fp)
    if not abs(den) > 1e-6 and not abs(den) > DENOMINATOR_TOL * (
            1.0 + np.linalg.norm(fm) + np.linalg.norm(fp)):
        raise DegenerateDenominator(f"grad(h).(f- - f+) = {den:.3e} at x = {x}")
    return fm, fp, g, num, den


def sliding_alpha(model: AgentModel, x) -> float:
    x = _check_dim(model, x)
    _, _, _, num, den = _alpha_parts(model, x)
    return num / den


def sliding_field(model: AgentModel, x) -> Vector:
    """Filippov sliding field, without checking that ``x`` lies on the surface."""
    fm, fp, _, num, den = _alpha_parts(model, x)
    alpha = num / den
    return (1.0 - alpha) * fm + alpha * fp


def eval_field(model: AgentModel, mode: Mode, x) -> Vector:
    x = _check_dim(model, x)
    if mode is Mode.SLIDING:
        hx = model.switch(x)
        if abs(hx) > ON_MANIFOLD_TOL:
            raise OffManifold(f"|h(x)| = {abs(hx):.3e} in sliding mode")
        fm = model.field_minus(x)
        # equal fields: any convex weight gives the same vector
        if np.array_equal(fm, model.field_plus(x)):
            return fm
    return model.field(mode, x)


def sliding_jacobian(model: AgentModel, x) -> Matrix:
    """Jacobian of the sliding field.

    Differentiating the convex combination gives
    ``(1 - a) Df- + a Df+ + (f+ - f-) grad(a)^T`` with ``grad(a)`` from the
    quotient rule; the Hessian of ``h`` enters through the derivative of
    ``grad(h)``.
    """
    x = np.asarray(x, dtype=float)
    if np.array_equal(model.field_minus(x), model.field_plus(x)):
        return model.jac_minus(x)
    fm, fp, g, num, den = _alpha_parts(model, x)
    alpha = num / den
    Jm = model.jac_minus(x)
    Jp = model.jac_plus(x)
    H = model.switch_hess(x)
    grad_num = H @ fm + Jm.T @ g
    grad_den = H @ (fm - fp) + (Jm - Jp).T @ g
    grad_alpha = (grad_num * den - num * grad_den) / den**2
    return (1.0 - alpha) * Jm + alpha * Jp + np.outer(fp - fm, grad_alpha)


def classify_point(model: AgentModel, x) -> PointClass:
    x = _check_dim(model, x)
    hx = model.switch(x)
    if abs(hx) > ON_MANIFOLD_TOL * (1.0 + np.linalg.norm(x)):
        raise OffManifold(f"|h(x)| = {abs(hx):.3e} exceeds {ON_MANIFOLD_TOL}")
    fm = model.field_minus(x)
    fp = model.field_plus(x)
    g = model.switch_grad(x)
    sm = float(g @ fm)
    sp = float(g @ fp)
    zm = abs(sm) <= ZERO_BAND * (1.0 + np.linalg.norm(fm))
    zp = abs(sp) <= ZERO_BAND * (1.0 + np.linalg.norm(fp))
    if zm and zp:
        kind = PointKind.DEGENERATE
    elif zm:
        kind = PointKind.TANGENTIAL_EXIT_MINUS if sp < 0 else PointKind.DEGENERATE
    elif zp:
        kind = PointKind.TANGENTIAL_EXIT_PLUS if sm > 0 else PointKind.DEGENERATE
    elif sm > 0 and sp > 0:
        kind = PointKind.CROSSING_UP
    elif sm < 0 and sp < 0:
        kind = PointKind.CROSSING_DOWN
    elif sm > 0 and sp < 0:
        kind = PointKind.ATTRACTIVE_SLIDING
    else:
        kind = PointKind.REPULSIVE
    return PointClass(kind, sm, sp)


def exit_rate(model: AgentModel, x, side: Mode) -> float:
    """Time derivative of ``grad(h).f_side`` along the sliding flow at ``x``.

    A tangential exit into ``R-`` needs this negative for ``side=MINUS``; an
    exit into ``R+`` needs it positive for ``side=PLUS``.
    """
    x = np.asarray(x, dtype=float)
    f = model.field(side, x)
    J = model.jacobian(side, x)
    g = model.switch_grad(x)
    H = model.switch_hess(x)
    return float((H @ f + J.T @ g) @ sliding_field(model, x))


def _rank_one_update(f_in, f_out, g, denom_label):
    den = g @ f_in
    if not abs(den) > DENOMINATOR_TOL * (1.0 + np.linalg.norm(f_in)):
        raise DegenerateDenominator(f"{denom_label} = {den:.3e}")
    return np.eye(f_in.size) + np.outer(f_out - f_in, g) / den


def saltation_crossing(model: AgentModel, x, source: Mode = Mode.MINUS) -> Matrix:
    """Jump matrix of a transversal crossing leaving region ``source``."""
    pc = classify_point(model, x)
    x = np.asarray(x, dtype=float)
    g = model.switch_grad(x)
    if source is Mode.MINUS:
        if pc.kind is not PointKind.CROSSING_UP:
            raise WrongClassification(f"minus-to-plus crossing at a {pc.kind.value} point")
        return _rank_one_update(model.field_minus(x), model.field_plus(x), g, "grad(h).f-")
    if source is Mode.PLUS:
        if pc.kind is not PointKind.CROSSING_DOWN:
            raise WrongClassification(f"plus-to-minus crossing at a {pc.kind.value} point")
        return _rank_one_update(model.field_plus(x), model.field_minus(x), g, "grad(h).f+")
    raise ValueError("source must be Mode.MINUS or Mode.PLUS")


def saltation_slide_entry(model: AgentModel, x, source: Mode = Mode.PLUS) -> Matrix:
    """Jump matrix for a transversal arrival on the surface followed by sliding.

    ``grad(h)^T S = 0``: the matrix projects onto the tangent space, so it is
    singular by construction.
    """
    pc = classify_point(model, x)
    if pc.kind is not PointKind.ATTRACTIVE_SLIDING:
        raise WrongClassification(f"sliding entry at a {pc.kind.value} point")
    if source not in (Mode.MINUS, Mode.PLUS):
        raise ValueError("source must be Mode.MINUS or Mode.PLUS")
    x = np.asarray(x, dtype=float)
    f_in = model.field(source, x)
    label = "grad(h).f-" if source is Mode.MINUS else "grad(h).f+"
    return _rank_one_update(f_in, sliding_field(model, x), model.switch_grad(x), label)


# -- model registry ---------------------------------------------------------


def galvanetto(gamma: float = 3.0, v_bar: float = 0.15) -> AgentModel:
    """Stick-slip oscillator on a belt moving at speed ``v_bar``.

    ``y1' = y2``, ``y2' = -y1 -+ 1 / (1 +- gamma (y2 - v_bar))`` with the
    upper signs above the surface ``y2 = v_bar``.
    """
    gamma = float(gamma)
    v_bar = float(v_bar)

    def f_minus(x):
        d = x[1] - v_bar
        return np.array([x[1], -x[0] + 1.0 / (1.0 - gamma * d)])

    def f_plus(x):
        d = x[1] - v_bar
        return np.array([x[1], -x[0] - 1.0 / (1.0 + gamma * d)])

    def j_minus(x):
        d = x[1] - v_bar
        return np.array([[0.0, 1.0], [-1.0, gamma / (1.0 - gamma * d) ** 2]])

    def j_plus(x):
        d = x[1] - v_bar
        return np.array([[0.0, 1.0], [-1.0, gamma / (1.0 + gamma * d) ** 2]])

    def grad(x):
        x1 = np.asarray(x[1], dtype=float)
        return np.array([np.zeros_like(x1), np.ones_like(x1)])

    zero = np.zeros((2, 2))
    return AgentModel(
        dim=2,
        field_minus=f_minus,
        field_plus=f_plus,
        switch=lambda x: x[1] - v_bar,
        switch_grad=grad,
        jac_minus=j_minus,
        jac_plus=j_plus,
        switch_hess=lambda x: zero.copy(),
        name="galvanetto",
        params=(("gamma", gamma), ("v_bar", v_bar)),
        vectorized=True,
    )


MODELS: dict[str, Callable[..., AgentModel]] = {"galvanetto": galvanetto}


def get_model(name: str, **params) -> AgentModel:
    try:
        factory = MODELS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(MODELS)}") from None
    return factory(**params)
