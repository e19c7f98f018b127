"""Reduced variational systems, Floquet multipliers and the MSF sweep.

For each Laplacian eigenvalue ``lambda_i`` the transverse dynamics decouple
into an ``n``-dimensional linear system with ``nu = sigma * lambda_i``:

* free segments:    ``Z' = (Df(x_S) + nu E) Z``
* sliding segments: ``Z' = (Df_sigma(x_S) + nu (E + B)) Z``

and the single-agent saltation matrices applied at every event.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentModel, Mode
from .errors import DimensionMismatch, NonFiniteValue, PWSError, SizeGuardExceeded
from .network import NetworkTopology, full_monodromy
from .orbit import OrbitSkeleton, resample
from .variational import segment_linearization, transition

LOG_FLOOR = -745.0
FULL_SIZE_GUARD = 64
MATCH_TOL = 1e-8
# |msf| below this is rounding noise around a marginal (lambda = 0) case
MARGIN = 1e-9


def _check_E(model: AgentModel, E) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.shape != (model.dim, model.dim):
        raise DimensionMismatch(f"E must be {model.dim}x{model.dim}, got {E.shape}")
    return E


def reduced_transition(model: AgentModel, skeleton: OrbitSkeleton, nu: float, E,
                       step: float | None = None) -> np.ndarray:
    """``Z(T)`` of the reduced system with parameter ``nu``."""
    E = _check_E(model, E)
    if step is not None:
        skeleton = resample(model, skeleton, step)
    nuE = nu * E

    def coefficient(seg, lin, sl):
        A = lin["jac"][sl] + nuE
        if lin["proj"] is not None:
            A = A + nu * (lin["proj"][sl] @ E)
        return A

    return transition(model, skeleton, model.dim, coefficient, lambda S: S)


def b_matrices(model: AgentModel, skeleton: OrbitSkeleton, E) -> np.ndarray:
    """``B`` at every stored stage point of every sliding segment, stacked."""
    E = _check_E(model, E)
    out = [segment_linearization(model, s)["proj"].reshape(-1, model.dim, model.dim) @ E
           for s in skeleton.sliding_segments()]
    if not out:
        return np.empty((0, model.dim, model.dim))
    return np.concatenate(out)


def floquet_multipliers(Z) -> np.ndarray:
    """Eigenvalues of ``Z`` sorted by descending modulus (ties: real part, then imaginary)."""
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise DimensionMismatch(f"square matrix required, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise NonFiniteValue("monodromy matrix has non-finite entries")
    ev = np.linalg.eigvals(Z).astype(complex)
    order = np.lexsort((-ev.imag, -ev.real, -np.abs(ev)))
    return ev[order]


def safe_log(modulus: float) -> float:
    """``log`` with the floor ``LOG_FLOOR`` for zero (or subnormal) moduli."""
    return max(math.log(modulus), LOG_FLOOR) if modulus > 0 else LOG_FLOOR


@dataclass
class MSFRow:
    sigma: float
    nus: list[float]
    multipliers: list[np.ndarray]
    msf: float
    stable: bool
    error: str | None = None

    @property
    def max_transverse_modulus(self) -> float:
        if self.error is not None or len(self.multipliers) < 2:
            return math.nan
        return float(max(np.abs(m).max() for m in self.multipliers[1:]))


def msf_value(model: AgentModel, skeleton: OrbitSkeleton, topology: NetworkTopology,
              sigma: float, step: float | None = None) -> MSFRow:
    """Multipliers for every Laplacian eigenvalue and the resulting MSF value.

    The ``i = 1`` (zero eigenvalue) row is kept for diagnostics but is not
    part of the maximum.
    """
    if step is not None:
        skeleton = resample(model, skeleton, step)
    nus = [float(sigma * lam) for lam in topology.spectrum]
    cache: dict[float, np.ndarray] = {}
    mults = []
    for nu in nus:
        if nu not in cache:
            Z = reduced_transition(model, skeleton, nu, topology.inner_coupling)
            cache[nu] = floquet_multipliers(Z)
        mults.append(cache[nu])
    if topology.N < 2:
        lam = math.nan
    else:
        lam = max(safe_log(float(abs(t))) for m in mults[1:] for t in m)
    return MSFRow(float(sigma), nus, mults, lam, bool(lam < -MARGIN), None)


@dataclass
class MSFTable:
    rows: list[MSFRow]
    N: int
    n: int
    header_lines: list[str] = field(default_factory=list)

    def columns(self) -> list[str]:
        cols = ["sigma", "msf", "stable"]
        for i in range(1, self.N + 1):
            for j in range(1, self.n + 1):
                cols += [f"tau_{i}_{j}_re", f"tau_{i}_{j}_im"]
        return cols + ["error"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header_lines:
            buf.write(f"# {line}\n")
        buf.write("# tau_i_j: j-th multiplier (descending modulus) for the i-th Laplacian "
                  "eigenvalue (descending, i=1 is the zero eigenvalue, excluded from msf)\n")
        buf.write(f"# msf = max log|tau_i_j| over i>=2; log(0) floored at {LOG_FLOOR:g}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for r in self.rows:
            if r.error is not None:
                w.writerow([fmt(r.sigma), "nan", "", *(["nan"] * (2 * self.N * self.n)), r.error])
                continue
            vals = [fmt(r.sigma), fmt(r.msf), "true" if r.stable else "false"]
            for m in r.multipliers:
                for t in m:
                    vals += [fmt(t.real), fmt(t.imag)]
            w.writerow(vals + [""])
        return buf.getvalue()

    def modulus_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "max_transverse_multiplier_modulus"])
        for r in self.rows:
            w.writerow([fmt(r.sigma), fmt(r.max_transverse_modulus)])
        return buf.getvalue()


def fmt(v: float) -> str:
    """17 significant digits, enough for an exact round trip."""
    return format(float(v), ".17g")


def msf_sweep(model: AgentModel, skeleton: OrbitSkeleton, topology: NetworkTopology,
              sigma_grid, step: float | None = None, jobs: int = 1) -> MSFTable:
    """One :class:`MSFRow` per grid value, in grid order.

    A failing row records its error message and the sweep continues.
    """
    grid = [float(s) for s in sigma_grid]
    if not grid:
        raise ValueError("empty sigma grid")
    if step is not None:
        skeleton = resample(model, skeleton, step)
    # linearize once up front so worker threads only read the cache
    for seg in skeleton.segments:
        segment_linearization(model, seg)

    def row(s):
        try:
            return msf_value(model, skeleton, topology, s)
        except PWSError as exc:
            return MSFRow(s, [s * lam for lam in topology.spectrum], [], math.nan, False,
                          f"{type(exc).__name__}: {exc}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(row, grid))
    else:
        rows = [row(s) for s in grid]
    return MSFTable(rows, topology.N, model.dim)


@dataclass
class ValidationReport:
    sigma: float
    full: np.ndarray
    reduced: np.ndarray
    distance: float
    ok: bool


def match_distance(a, b) -> float:
    """Greedy pairing distance between two multisets, relative to ``max(1, max|.|)``.

    Elements of ``a`` are taken in descending modulus and paired with the
    nearest unused element of ``b``.
    """
    a = floquet_multipliers(np.diag(a)) if len(a) else np.asarray(a)
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        raise DimensionMismatch("multisets differ in size")
    worst = 0.0
    for x in a:
        k = int(np.argmin([abs(x - y) for y in b]))
        worst = max(worst, abs(x - b.pop(k)))
    scale = max(1.0, float(np.max(np.abs(a))) if len(a) else 1.0)
    return worst / scale


def validate_against_full(model: AgentModel, skeleton: OrbitSkeleton, topology: NetworkTopology,
                          sigma: float | None = None, step: float | None = None,
                          tol: float = MATCH_TOL) -> ValidationReport:
    """Compare the full network monodromy spectrum with the reduced multipliers."""
    if topology.N * topology.n > FULL_SIZE_GUARD:
        raise SizeGuardExceeded(f"nN = {topology.N * topology.n} exceeds {FULL_SIZE_GUARD}")
    if sigma is not None:
        topology = topology.with_sigma(sigma)
    if step is not None:
        skeleton = resample(model, skeleton, step)
    full = floquet_multipliers(full_monodromy(model, topology, skeleton))
    row = msf_value(model, skeleton, topology, topology.sigma)
    reduced = floquet_multipliers(np.diag(np.concatenate(row.multipliers)))
    d = match_distance(full, reduced)
    return ValidationReport(topology.sigma, full, reduced, d, bool(d <= tol))


def saltation_residuals(model: AgentModel, event) -> dict[str, float]:
    """How well an event's jump matrix satisfies its defining identities.

    ``flow`` is ``|S f_in - f_out|``; for sliding entries ``normal`` is
    ``|grad(h)^T S|`` (the jump must land in the tangent space).
    """
    x = event.state
    S = event.saltation
    f_in = model.field(event.kind.source, x)
    f_out = model.field(event.kind.target, x)
    out = {"flow": float(np.max(np.abs(S @ f_in - f_out)))}
    if event.kind.target is Mode.SLIDING:
        out["normal"] = float(np.max(np.abs(model.switch_grad(x) @ S)))
    return out
