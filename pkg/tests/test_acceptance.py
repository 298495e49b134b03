"""End-to-end acceptance runs at their stated resolutions and tolerances.

Each criterion prints one PASS/FAIL line. The heavy pipelines (three
Wulff norms at h = 1/64, the rectangle at h = 1/128, the fattening domain
at h = 1/64) run once per session and are shared across criteria.
"""

import math

import numpy as np
import pytest

from aimcf.anisotropy import dual_oracle, ell, euclidean, polytope, weighted_ell
from aimcf.levelset import Contour, anisotropic_perimeter
from aimcf.verify import run_suite

WULFF_SUITES = ("wulff_euclid", "wulff_l1", "wulff_linf")


def _line(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {tag} {detail}")


@pytest.fixture(scope="session")
def wulff_reports():
    return {name: run_suite(name, keep_fields=True) for name in WULFF_SUITES}


@pytest.fixture(scope="session")
def rectangle_report():
    return run_suite("rectangle")


@pytest.fixture(scope="session")
def three_squares_report():
    return run_suite("three_squares")


@pytest.fixture(scope="session")
def monotone_report():
    return run_suite("monotone")


@pytest.fixture(scope="session")
def growth_report(wulff_reports):
    return run_suite("growth", shared=wulff_reports["wulff_euclid"])


@pytest.fixture(scope="session")
def harnack_report(wulff_reports):
    return run_suite("harnack", shared=wulff_reports["wulff_euclid"])


# -------------------------------------------------------------- criterion 1


@pytest.mark.parametrize("name", WULFF_SUITES)
def test_criterion_01_wulff_p_potential(wulff_reports, name):
    m = wulff_reports[name]["metrics"]
    err = max(m["u_rel_err_lower"], m["u_rel_err_upper"])
    ok = err <= m["u_tol"] and m["solve_seconds"] <= 60.0
    _line(1, f"wulff-p-potential[{name}]", ok,
          f"rel err {err:.4f} (tol {m['u_tol']}), solve {m['solve_seconds']:.1f}s")
    assert err <= m["u_tol"]
    assert m["solve_seconds"] <= 60.0


# -------------------------------------------------------------- criterion 2


@pytest.mark.parametrize("name", WULFF_SUITES)
def test_criterion_02_moser_limit(wulff_reports, name):
    m = wulff_reports[name]["metrics"]
    ok = m["v_sup_err"] <= 0.05
    _line(2, f"moser-limit[{name}]", ok, f"sup err {m['v_sup_err']:.4f} (tol 0.05)")
    assert m["v_sup_err"] <= 0.05


# -------------------------------------------------------------- criterion 3


def test_criterion_03_exponential_growth(growth_report):
    m = growth_report["metrics"]
    ok = growth_report["pass"]
    _line(3, "exponential-growth", ok,
          f"P_F(G_0) dev {m['P_F_G0_vs_2pi']:.4f}, rescaled dev "
          f"{m['max_rescaled_deviation']:.4f}, slope {m['log_perimeter_slope']:.4f}")
    assert m["P_F_G0_vs_2pi"] <= 0.05
    assert m["max_rescaled_deviation"] <= 0.05
    assert abs(m["log_perimeter_slope"] - 1.0) <= 0.05


# -------------------------------------------------------------- criterion 4


def test_criterion_04_rectangle(rectangle_report):
    m = rectangle_report["metrics"]
    ok = rectangle_report["pass"]
    _line(4, "rectangle", ok,
          f"sup err {m['v_sup_err']:.4f} (tol 0.05), corners "
          f"{['%.4f' % d for d in m['corner_dist']]} (tol {m['corner_tol']:.4f})")
    assert m["v_sup_err"] <= 0.05
    assert max(m["corner_dist"]) <= m["corner_tol"]


# -------------------------------------------------------------- criterion 5


def test_criterion_05_fattening(three_squares_report):
    m = three_squares_report["metrics"]
    ok = three_squares_report["pass"]
    detail = (f"t_flag {m.get('t_flag', float('nan')):.4f} (t* {m['t_star']:.4f}), "
              f"P_F {m.get('P_F_at_flag', float('nan')):.2f}, "
              f"area {m.get('fattened_area', float('nan')):.2f}, "
              f"growth dev {max(m['growth_deviation']):.4f}")
    _line(5, "fattening", ok, detail)
    assert "t_flag" in m, "no fattening flag inside the t* window"
    assert abs(m["t_flag"] - m["t_star"]) <= 0.05
    assert abs(m["P_F_at_flag"] / 24.0 - 1.0) <= 0.05
    assert abs(m["fattened_area"] / 24.0 - 1.0) <= 0.05
    assert max(m["growth_deviation"]) <= 0.05


# -------------------------------------------------------------- criterion 6


def test_criterion_06_comparison_monotonicity(monotone_report):
    m = monotone_report["metrics"]
    ok = monotone_report["pass"]
    _line(6, "comparison-monotonicity", ok,
          f"{m['cases']} cases, {len(m['failures'])} failures, "
          f"energy monotone: {m['energy_monotone']}")
    assert m["failures"] == []
    assert m["energy_monotone"]


# -------------------------------------------------------------- criterion 7


def test_criterion_07_barrier_sandwich(wulff_reports, rectangle_report,
                                       three_squares_report):
    counts = {}
    for name in WULFF_SUITES:
        mm = wulff_reports[name]["metrics"]
        counts[name] = mm["sandwich_violations"] + mm["u_sandwich_violations"]
    counts["rectangle"] = rectangle_report["metrics"]["sandwich_violations"]
    counts["three_squares"] = three_squares_report["metrics"]["sandwich_violations"]
    ok = all(c == 0 for c in counts.values())
    _line(7, "barrier-sandwich", ok, str(counts))
    assert all(c == 0 for c in counts.values())


# -------------------------------------------------------------- criterion 8


def test_criterion_08_anisotropy_laws():
    rng = np.random.default_rng(42)
    pool = [euclidean(), ell(1), ell(1.5), ell(4), ell(math.inf),
            weighted_ell(2, [1.0, 2.0]),
            polytope([(1.0, 0.2), (-0.3, 1.0), (0.9, -0.8)])]
    pts = rng.standard_normal((1000, 2)) * rng.uniform(0.1, 10, (1000, 1))
    worst = {"bidual": 0.0, "cs": 0.0, "hom": 0.0, "sub_dual": 0.0,
             "sub_pair": 0.0, "grad_dual": 0.0, "oracle": 0.0}
    for F in pool:
        Fd = F.dual_anisotropy()
        for x in pts:
            v = F.eval(x)
            worst["bidual"] = max(worst["bidual"],
                                  abs(Fd.eval_dual(x) - v) / (1 + v))
            z = F.subgradient(x)
            worst["sub_dual"] = max(worst["sub_dual"], F.eval_dual(z) - 1.0)
            worst["sub_pair"] = max(worst["sub_pair"],
                                    abs(z @ x - v) / (1 + v))
            for lam in (0.5, 2.0, 10.0):
                worst["hom"] = max(worst["hom"],
                                   abs(F.eval(lam * x) - lam * v) / (lam * v + 1e-300))
        for x, xi in zip(pts[:500], pts[500:]):
            worst["cs"] = max(worst["cs"],
                              x @ xi - F.eval_dual(x) * F.eval(xi) * (1 + 1e-12))
        # F(grad F0) = 1 at finite-difference-stable points
        checked = 0
        for x in pts[:200]:
            grads = []
            for e in (1e-5, 2e-5):
                g = np.array([
                    (F.eval_dual(x + (e, 0)) - F.eval_dual(x - (e, 0))) / (2 * e),
                    (F.eval_dual(x + (0, e)) - F.eval_dual(x - (0, e))) / (2 * e)])
                grads.append(g)
            if np.max(np.abs(grads[0] - grads[1])) > 1e-6 * (1 + np.abs(grads[0]).max()):
                continue
            checked += 1
            worst["grad_dual"] = max(worst["grad_dual"], abs(F.eval(grads[0]) - 1.0))
        assert checked > 50
        for x in pts[:40]:
            direct = F.eval_dual(x)
            probe = dual_oracle(F, x, 10_000)
            worst["oracle"] = max(worst["oracle"], abs(probe - direct) / (1 + direct))
    ok = (worst["bidual"] <= 1e-9 and worst["cs"] <= 1e-12
          and worst["hom"] <= 1e-12 and worst["sub_dual"] <= 1e-9
          and worst["sub_pair"] <= 1e-9 and worst["grad_dual"] <= 1e-4
          and worst["oracle"] <= 1e-3)
    _line(8, "anisotropy-laws", ok, str({k: f"{v:.2e}" for k, v in worst.items()}))
    assert worst["bidual"] <= 1e-9
    assert worst["cs"] <= 1e-12
    assert worst["hom"] <= 1e-12
    assert worst["sub_dual"] <= 1e-9
    assert worst["sub_pair"] <= 1e-9
    assert worst["grad_dual"] <= 1e-4
    assert worst["oracle"] <= 1e-3


# -------------------------------------------------------------- criterion 9


def test_criterion_09_harnack(harnack_report):
    m = harnack_report["metrics"]
    ok = harnack_report["pass"]
    _line(9, "harnack", ok,
          f"osc {m['osc_last']:.4f} vs log(5/3) {math.log(5/3):.4f} "
          f"(dev {m['vs_closed_form']:.4f}), cross-p {m['cross_p_variation']:.4f}")
    assert m["vs_closed_form"] <= 0.10
    assert m["cross_p_variation"] <= 0.10


# -------------------------------------------------------------- criterion 10


def test_criterion_10_polygon_perimeters():
    sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    unit_square = Contour([np.array(sq + sq[:1])])
    dia = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    diamond = Contour([np.array(dia + dia[:1])])
    three = []
    for cx, cy in ((0.0, 2.0), (-2.0, -2.0), (2.0, -2.0)):
        s = [(cx - 0.5, cy - 0.5), (cx + 0.5, cy - 0.5),
             (cx + 0.5, cy + 0.5), (cx - 0.5, cy + 0.5)]
        three.append(np.array(s + s[:1]))
    three_squares = Contour(three)

    table = [
        (unit_square, ell(1), 4.0),
        (unit_square, euclidean(), 4.0),
        (diamond, ell(math.inf), 4.0),
        (three_squares, ell(1), 12.0),
    ]
    worst = max(abs(anisotropic_perimeter(c, F) - want) for c, F, want in table)
    ok = worst <= 1e-12
    _line(10, "polygon-perimeters", ok, f"worst defect {worst:.2e}")
    assert worst <= 1e-12
