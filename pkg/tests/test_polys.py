import numpy as np
import pytest

from manifold_mcmc import MonomialPoly, PolySystem


def test_eval_simple():
    # f(x, y) = 2 x^2 y - 3 y + 1
    f = MonomialPoly.from_terms(2, [(2.0, (2, 1)), (-3.0, (0, 1)), (1.0, (0, 0))])
    assert f(np.array([2.0, 3.0])) == pytest.approx(2 * 4 * 3 - 9 + 1)
    assert f.degree == 3


def test_grad_matches_finite_differences(rng):
    f = MonomialPoly.from_terms(
        3, [(1.5, (2, 0, 1)), (-0.7, (0, 3, 0)), (2.0, (1, 1, 1)), (0.3, (0, 0, 0))]
    )
    for _ in range(10):
        x = rng.normal(size=3)
        g = f.grad(x)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (f(x + e) - f(x - e)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_line_coeffs_match_direct_evaluation(rng):
    f = MonomialPoly.from_terms(
        3, [(1.0, (4, 0, 0)), (2.0, (2, 2, 0)), (-1.0, (0, 0, 3)), (0.5, (1, 0, 0))]
    )
    for _ in range(20):
        o = rng.normal(size=3)
        b = rng.normal(size=3)
        coeffs = f.line_coeffs(o, b)
        assert coeffs.shape == (f.degree + 1,)
        for t in rng.normal(size=5):
            direct = f(o + b * t)
            via = sum(c * t**j for j, c in enumerate(coeffs))
            assert via == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_zero_polynomial():
    z = MonomialPoly.zero(4)
    x = np.ones(4)
    assert z(x) == 0.0
    assert np.all(z.grad(x) == 0.0)
    assert z.line_coeffs(x, x).tolist() == [0.0]


def test_system_eval_and_jac(rng):
    f1 = MonomialPoly.from_terms(2, [(1.0, (2, 0)), (1.0, (0, 2)), (-1.0, (0, 0))])
    f2 = MonomialPoly.from_terms(2, [(1.0, (1, 1))])
    sys2 = PolySystem([f1, f2])
    x = rng.normal(size=2)
    vals = sys2(x)
    assert vals[0] == pytest.approx(x[0] ** 2 + x[1] ** 2 - 1)
    assert vals[1] == pytest.approx(x[0] * x[1])
    jac = sys2.jac(x)
    # column j is the gradient of component j
    assert jac[:, 0] == pytest.approx([2 * x[0], 2 * x[1]])
    assert jac[:, 1] == pytest.approx([x[1], x[0]])


def test_shape_validation():
    with pytest.raises(ValueError):
        MonomialPoly(np.ones(2), np.zeros((3, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        MonomialPoly(np.ones(1), -np.ones((1, 2), dtype=np.int64))
