import math

import numpy as np
import pytest

from aimcf.anisotropy import (
    Anisotropy,
    AnisotropyError,
    dual_oracle,
    ell,
    euclidean,
    parse_anisotropy,
    polytope,
    weighted_ell,
)


def norm_pool():
    hexgen = [(1.0, 0.0), (0.5, math.sqrt(3) / 2), (-0.5, math.sqrt(3) / 2)]
    return [
        euclidean(),
        ell(1),
        ell(2),
        ell(1.5),
        ell(4),
        ell(math.inf),
        weighted_ell(2, [1.0, 2.0]),
        weighted_ell(1, [0.5, 3.0]),
        polytope([(1.0, 0.0), (0.0, 1.0)]),
        polytope(hexgen),
    ]


def sample_points(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 2))
    pts *= rng.uniform(0.1, 10.0, size=(n, 1))
    return pts


# ---------------------------------------------------------------- eval


def test_eval_ell1():
    assert ell(1).eval((3.0, 4.0)) == pytest.approx(7.0)


def test_eval_euclidean():
    assert euclidean().eval((3.0, 4.0)) == pytest.approx(5.0)


def test_eval_polytope_axis_generators():
    # support set {+-e1, +-e2} realizes the ell-inf norm
    F = polytope([(1.0, 0.0), (0.0, 1.0)])
    assert F.eval((3.0, 4.0)) == pytest.approx(4.0)


def test_eval_zero_iff_origin():
    for F in norm_pool():
        assert F.eval((0.0, 0.0)) == 0.0
        assert F.eval((1e-8, -2e-9)) > 0.0


def test_eval_rejects_nonfinite():
    with pytest.raises(AnisotropyError):
        euclidean().eval((np.nan, 0.0))
    with pytest.raises(AnisotropyError):
        ell(1).eval((np.inf, 0.0))


def test_degenerate_generators_rejected():
    with pytest.raises(AnisotropyError):
        polytope([(1.0, 0.0)])  # +-e1 does not span R^2


# ---------------------------------------------------------------- eval_dual


def test_dual_ell1_is_ellinf():
    assert ell(1).eval_dual((3.0, 4.0)) == pytest.approx(4.0)


def test_dual_euclidean_self():
    assert euclidean().eval_dual((3.0, 4.0)) == pytest.approx(5.0)


def test_dual_ellinf_is_ell1():
    assert ell(math.inf).eval_dual((3.0, 4.0)) == pytest.approx(7.0)


def test_dual_oracle_examples():
    assert dual_oracle(ell(1), (1.0, 0.0), 360) == pytest.approx(1.0, abs=1e-3)
    assert dual_oracle(euclidean(), (0.0, 0.0), 64) == 0.0
    assert dual_oracle(ell(math.inf), (1.0, 1.0), 360) == pytest.approx(2.0, abs=1e-3)


def test_dual_oracle_requires_enough_directions():
    with pytest.raises(AnisotropyError):
        dual_oracle(euclidean(), (1.0, 0.0), 4)


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_biduality_closed_form(F):
    Fd = F.dual_anisotropy()
    Fdd = Fd.dual_anisotropy()
    for x in sample_points(1000, seed=1):
        v = F.eval(x)
        assert Fdd.eval(x) == pytest.approx(v, rel=1e-9, abs=1e-12)
        # applying eval_dual twice routes through both closed forms
        assert Fd.eval_dual(x) == pytest.approx(v, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_dual_matches_oracle(F):
    for x in sample_points(40, seed=2):
        direct = F.eval_dual(x)
        probe = dual_oracle(F, x, 10_000)
        assert probe <= direct * (1 + 1e-9) + 1e-12
        assert abs(probe - direct) <= 1e-3 * (1.0 + direct)


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_cauchy_schwarz(F):
    pts = sample_points(500, seed=3)
    xis = sample_points(500, seed=4)
    for x, xi in zip(pts, xis):
        assert x @ xi <= F.eval_dual(x) * F.eval(xi) * (1 + 1e-12) + 1e-15


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_homogeneity_and_evenness(F):
    for xi in sample_points(200, seed=5):
        v = F.eval(xi)
        for lam in (0.5, 2.0, 10.0):
            assert F.eval(lam * xi) == pytest.approx(lam * v, rel=1e-12)
        assert F.eval(-xi) == pytest.approx(v, rel=1e-12)


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_triangle_inequality_sampled(F):
    a = sample_points(300, seed=6)
    b = sample_points(300, seed=7)
    for xi, eta in zip(a, b):
        assert F.eval(xi + eta) <= F.eval(xi) + F.eval(eta) + 1e-12


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_equivalence_constants_bound(F):
    c, C = F.equivalence_constants()
    assert 0 < c <= C
    for xi in sample_points(200, seed=8):
        r = np.linalg.norm(xi)
        assert c * r * (1 - 1e-9) <= F.eval(xi) <= C * r * (1 + 1e-9)


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_gradient_of_dual_lies_on_unit_sphere(F):
    # F(grad F0(x)) = 1 wherever the finite-difference gradient is stable
    rng = np.random.default_rng(9)
    checked = 0
    for x in sample_points(300, seed=10):
        if F.eval_dual(x) < 1e-3:
            continue
        grads = []
        for e in (1e-5, 2e-5):
            g = np.zeros(2)
            for i in range(2):
                dx = np.zeros(2)
                dx[i] = e
                g[i] = (F.eval_dual(x + dx) - F.eval_dual(x - dx)) / (2 * e)
            grads.append(g)
        if np.max(np.abs(grads[0] - grads[1])) > 1e-6 * (1 + np.max(np.abs(grads[0]))):
            continue  # kink of the polar norm
        checked += 1
        assert F.eval(grads[0]) == pytest.approx(1.0, abs=1e-4)
    assert checked > 100


# ---------------------------------------------------------------- subgradient


def test_subgradient_examples():
    z = ell(1).subgradient((1.0, 0.0))
    np.testing.assert_allclose(z, [1.0, 0.0])
    np.testing.assert_allclose(euclidean().subgradient((0.0, 0.0)), [0.0, 0.0])
    np.testing.assert_allclose(ell(1).subgradient((1.0, 1.0)), [1.0, 1.0])


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_subgradient_characterization(F):
    for xi in sample_points(400, seed=11):
        z = F.subgradient(xi)
        fval = F.eval(xi)
        assert F.eval_dual(z) <= 1 + 1e-9
        assert z @ xi == pytest.approx(fval, abs=1e-9 * (1 + fval))
    np.testing.assert_allclose(F.subgradient((0.0, 0.0)), np.zeros(2))


# ---------------------------------------------------------------- smoothing


def test_smooth_eval_polytope_sandwich_example():
    F = polytope([(1.0, 0.0), (0.0, 1.0)], smoothing_delta=1e-3)
    v, _ = F.smooth_eval_grad((1.0, 0.0))
    assert 1.0 <= v <= 1.0 + 1e-3 * math.log(4.0)


def test_smooth_eval_grad_zero_at_origin():
    for F in norm_pool():
        Fs = F.with_smoothing(smoothing_delta=1e-3)
        _, g = Fs.smooth_eval_grad((0.0, 0.0))
        if not Fs.is_crystalline:
            np.testing.assert_allclose(g, np.zeros(2))
        else:
            # smoothed gradient at the origin is an average of an even set
            assert np.linalg.norm(g) <= 1e-9


def test_smooth_eval_euclidean():
    v, g = euclidean().smooth_eval_grad((3.0, 4.0))
    assert v == pytest.approx(5.0)
    np.testing.assert_allclose(g, [0.6, 0.8])


@pytest.mark.parametrize("F", [ell(1), ell(math.inf),
                               polytope([(1.0, 0.2), (-0.3, 1.0), (0.9, -0.8)])],
                         ids=["ell1", "ellinf", "poly3"])
def test_smoothing_sandwich(F):
    delta = 1e-3
    Fs = F.with_smoothing(smoothing_delta=delta)
    gap = delta * math.log(len(Fs.generators))
    for xi in sample_points(500, seed=12):
        exact = F.eval(xi)
        smooth, _ = Fs.smooth_eval_grad(xi)
        assert exact - 1e-12 <= smooth <= exact + gap + 1e-12


@pytest.mark.parametrize("F", [ell(1), ell(math.inf)], ids=["ell1", "ellinf"])
def test_smooth_gradient_is_exact_fd(F):
    Fs = F.with_smoothing(smoothing_delta=1e-2)
    rng = np.random.default_rng(13)
    for xi in rng.standard_normal((50, 2)):
        _, g = Fs.smooth_eval_grad(xi)
        for i in range(2):
            dx = np.zeros(2)
            dx[i] = 1e-6
            fd = (Fs.smooth_eval_grad(xi + dx)[0] - Fs.smooth_eval_grad(xi - dx)[0]) / 2e-6
            assert g[i] == pytest.approx(fd, abs=1e-7)


# ---------------------------------------------------------------- Wulff shapes


def test_wulff_contains_examples():
    assert ell(1).wulff_contains((0.5, 0.0), (0.0, 0.0), 1.0)
    assert not euclidean().wulff_contains((1.0, 0.0), (0.0, 0.0), 1.0)
    assert not ell(math.inf).wulff_contains((0.6, 0.6), (0.0, 0.0), 1.0)


def test_wulff_polygon_euclidean_circle():
    pts = euclidean().wulff_polygon((0.0, 0.0), 1.0, 360)
    np.testing.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), 1.0, atol=1e-12)


def test_wulff_polygon_axis_points():
    pts = ell(1).wulff_polygon((0.0, 0.0), 1.0, 4)
    np.testing.assert_allclose(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-12)
    pts = ell(math.inf).wulff_polygon((0.0, 0.0), 2.0, 4)
    np.testing.assert_allclose(np.abs(pts).sum(axis=1), 2.0, atol=1e-12)


@pytest.mark.parametrize("F", norm_pool(), ids=lambda F: F.descriptor()[:24])
def test_wulff_polygon_on_level_set(F):
    center = np.array([0.3, -0.7])
    pts = F.wulff_polygon(center, 2.5, 64)
    for p in pts:
        assert F.eval_dual(p - center) == pytest.approx(2.5, abs=1e-12 * 2.5 * 10)


# ---------------------------------------------------------------- text syntax


@pytest.mark.parametrize("text", [
    "euclidean", "ell:1", "ell:2", "ell:inf", "ell:3/2",
    "well:2:1.0,2.0", "poly:1,0;0,1", "poly:1,0.2;-0.3,1;0.9,-0.8",
])
def test_parse_roundtrip(text):
    F = parse_anisotropy(text)
    G = parse_anisotropy(F.descriptor())
    pts = sample_points(50, seed=14)
    for x in pts:
        assert F.eval(x) == pytest.approx(G.eval(x), rel=1e-14)
        assert F.eval_dual(x) == pytest.approx(G.eval_dual(x), rel=1e-14)


@pytest.mark.parametrize("text", ["ell:0.5", "ell:zz", "well:2:1,-1", "poly:1,0",
                                  "poly:", "spam", "well:2", "ell:1/0"])
def test_parse_rejects(text):
    with pytest.raises(AnisotropyError):
        parse_anisotropy(text)


def test_generators_are_even_and_immutable():
    F = parse_anisotropy("poly:1,0;0,1")
    gens = {tuple(g) for g in F.generators}
    assert gens == {(1, 0), (0, 1), (-1, 0), (0, -1)}
    with pytest.raises(ValueError):
        F.generators[0, 0] = 5.0
