"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
report) or directly with ``python tests/test_acceptance.py``.
"""

import numpy as np
import pytest

from pws_msf.agent import (
    AgentModel,
    Mode,
    PointKind,
    classify_point,
    saltation_crossing,
    saltation_slide_entry,
    sliding_field,
)
from pws_msf.integrator import EventKind, integrate_hybrid
from pws_msf.msf import (
    b_matrices,
    floquet_multipliers,
    msf_sweep,
    reduced_transition,
    saltation_residuals,
    validate_against_full,
)
from pws_msf.network import (
    build_topology,
    complete_graph,
    path_graph,
    perturbed_state,
    simulate_network,
)

from conftest import E_GALV

SIGMAS = [1.0, 1.2, 2.6, 2.7, 4.8]
EXPECTED = [False, False, False, True, True]


@pytest.fixture(scope="module")
def report(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        if tr is not None:
            tr.write_line(line)
        else:
            print(line)
        return ok

    return emit


@pytest.fixture(scope="module")
def pair():
    return build_topology(complete_graph(2), E_GALV)


@pytest.fixture(scope="module")
def table_fine(model, skeleton_fine, pair):
    return msf_sweep(model, skeleton_fine, pair, SIGMAS, jobs=4)


@pytest.fixture(scope="module")
def table_coarse(model, skeleton, pair):
    return msf_sweep(model, skeleton, pair, SIGMAS, jobs=4)


def _flags(table):
    return [r.stable for r in table.rows]


def _trivial_ok(table):
    out = []
    for r in table.rows:
        ev = r.multipliers[0]
        out.append(bool(np.min(np.abs(ev - 1.0)) <= 1e-6 and np.min(np.abs(ev)) <= 1e-12))
    return out


def test_criterion_1_classification(report, table_fine):
    flags = _flags(table_fine)
    detail = ", ".join(f"sigma={s:g}: stable={f} (max|tau|={r.max_transverse_modulus:.4f})"
                       for s, f, r in zip(SIGMAS, flags, table_fine.rows))
    ok = report(1, flags == EXPECTED, f"step 1e-4; {detail}")
    assert ok


def test_criterion_2_trivial_multipliers(report, table_fine):
    per_sigma = _trivial_ok(table_fine)
    worst_one = max(np.min(np.abs(r.multipliers[0] - 1)) for r in table_fine.rows)
    worst_zero = max(np.min(np.abs(r.multipliers[0])) for r in table_fine.rows)
    ok = report(2, all(per_sigma),
                f"nu=0 rows: max |tau-1| = {worst_one:.2e} (tol 1e-6), "
                f"max min|tau| = {worst_zero:.2e} (tol 1e-12)")
    assert ok


def test_criterion_3_full_vs_reduced(report, model, skeleton):
    cases = [(complete_graph(2), s) for s in (0.0, 1.0, 2.7, 4.8)]
    cases += [(path_graph(3), s) for s in (0.0, 1.0)]
    dists = []
    for A, s in cases:
        rep = validate_against_full(model, skeleton, build_topology(A, E_GALV), s)
        dists.append((len(A), s, rep.distance))
    worst = max(d for *_, d in dists)
    detail = "; ".join(f"N={n} sigma={s:g}: {d:.1e}" for n, s, d in dists)
    ok = report(3, worst <= 1e-8, f"pairing distance (tol 1e-8): {detail}")
    assert ok


def _random_instance(rng):
    """Affine-linear fields and an affine switch with a random point on the surface."""
    n = int(rng.integers(2, 5))
    A, C = rng.normal(size=(2, n, n))
    b, d, c = rng.normal(size=(3, n))
    x = rng.normal(size=n)
    e = float(c @ x)
    m = AgentModel(dim=n, field_minus=lambda y: A @ y + b, field_plus=lambda y: C @ y + d,
                   switch=lambda y: float(c @ y - e), switch_grad=lambda y: c.copy(),
                   jac_minus=lambda y: A, jac_plus=lambda y: C)
    return m, x


def test_criterion_4_saltation_identities(report, model, skeleton):
    worst = 0.0
    for ev in skeleton.events:
        worst = max(worst, *saltation_residuals(model, ev).values())
    rng = np.random.default_rng(20240601)
    checked = 0
    worst_rand = 0.0
    while checked < 100:
        m, x = _random_instance(rng)
        pc = classify_point(m, x)
        fm, fp = m.field_minus(x), m.field_plus(x)
        g = m.switch_grad(x)
        # keep the events generic: normal speeds well away from zero
        if min(abs(pc.dh_minus), abs(pc.dh_plus)) < 0.1 * np.linalg.norm(g) * (
                np.linalg.norm(fm) + np.linalg.norm(fp)) / 2:
            continue
        if pc.kind is PointKind.CROSSING_UP:
            S = saltation_crossing(m, x, Mode.MINUS)
            res = np.abs(S @ fm - fp).max() / (1 + np.linalg.norm(fp))
        elif pc.kind is PointKind.CROSSING_DOWN:
            S = saltation_crossing(m, x, Mode.PLUS)
            res = np.abs(S @ fp - fm).max() / (1 + np.linalg.norm(fm))
        elif pc.kind is PointKind.ATTRACTIVE_SLIDING:
            fs = sliding_field(m, x)
            src, f_in = (Mode.MINUS, fm) if rng.random() < 0.5 else (Mode.PLUS, fp)
            S = saltation_slide_entry(m, x, src)
            res = max(np.abs(S @ f_in - fs).max() / (1 + np.linalg.norm(fs)),
                      np.abs(g @ S).max() / (1 + np.abs(S).max()))
        else:
            continue
        worst_rand = max(worst_rand, res)
        checked += 1
    ok = report(4, worst <= 1e-12 and worst_rand <= 1e-12,
                f"orbit events max residual {worst:.1e}; {checked} random points "
                f"max relative residual {worst_rand:.1e} (tol 1e-12)")
    assert ok


def test_criterion_5_closed_forms(report, model, skeleton, skeleton_fine):
    sl = max(np.abs(sliding_field(model, np.array([y, 0.15])) - [0.15, 0.0]).max()
             for y in (-0.5, 0.0, 0.5))
    exits = [e.state[0] for sk in (skeleton, skeleton_fine) for e in sk.events
             if e.kind is EventKind.EXIT_TO_MINUS]
    exit_err = max(abs(y - 1.0) for y in exits)
    eb = max(np.abs(E_GALV + b_matrices(model, sk, E_GALV)).max()
             for sk in (skeleton, skeleton_fine))
    ok = report(5, sl <= 1e-12 and exit_err <= 1e-8 and eb <= 1e-12,
                f"|f_sigma - (0.15, 0)| = {sl:.1e}; exit y1 error {exit_err:.1e}; "
                f"max |E + B| = {eb:.1e}")
    assert ok


def test_criterion_6_finite_difference_oracle(report, model, skeleton):
    Z = reduced_transition(model, skeleton, 0.0, E_GALV)
    s0 = skeleton.anchor_state

    def flow(x):
        return integrate_hybrid(model, x, 0.0, skeleton.period, skeleton.step,
                                mode=skeleton.anchor_mode).final_state

    base = flow(s0)
    errs = []
    for eps in (1e-6, 5e-7):
        F = np.column_stack([(flow(s0 + eps * e) - base) / eps for e in np.eye(2)])
        errs.append(np.abs(F - Z).max())
    ratio = errs[0] / errs[1]
    ok = report(6, errs[0] <= 1e-4 and 0.5 <= ratio <= 8.0,
                f"max column error {errs[0]:.2e} (tol 1e-4); halving ratio {ratio:.3f} "
                f"(accepted [0.5, 8])")
    assert ok


def test_criterion_7_network_simulation(report, model, skeleton):
    horizon = 50 * skeleton.period
    x0 = perturbed_state(skeleton.anchor_state, 2, 1e-2)
    res = {}
    for sigma in (4.8, 1.2):
        topo = build_topology(complete_graph(2), E_GALV, sigma)
        tr = simulate_network(model, topo, x0, horizon, 1e-2)
        res[sigma] = tr.sync_error
    stable = res[4.8]
    unstable = res[1.2]
    ok_stable = bool(np.min(stable) < 1e-6)
    ok_unstable = bool(unstable[-1] >= unstable[0])
    ok = report(7, ok_stable and ok_unstable,
                f"sigma=4.8: sync error {stable[0]:.2e} -> min {np.min(stable):.2e}, "
                f"final {stable[-1]:.2e} (need < 1e-6); "
                f"sigma=1.2: {unstable[0]:.2e} -> final {unstable[-1]:.2e} (need >= initial)")
    assert ok


def test_criterion_8_step_robustness(report, skeleton, skeleton_fine, table_coarse, table_fine):
    same_flags = _flags(table_coarse) == _flags(table_fine)
    trivial = all(_trivial_ok(table_coarse)) and all(_trivial_ok(table_fine))
    flags_right = _flags(table_coarse) == EXPECTED
    dT = abs(skeleton.period - skeleton_fine.period)
    ok = report(8, same_flags and trivial and flags_right and dT <= 1e-6,
                f"flags at 1e-3 {_flags(table_coarse)} vs 1e-4 {_flags(table_fine)}; "
                f"trivial multipliers ok at both: {trivial}; period difference {dT:.1e}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
