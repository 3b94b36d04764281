"""Independent test oracles shared across test modules."""

import numpy as np


class Poly2d:
    """Bivariate polynomial c[i, j] x^i y^j with analytic derivatives."""

    def __init__(self, coeffs):
        self.c = np.atleast_2d(np.asarray(coeffs, dtype=float))

    @classmethod
    def random(cls, rng, degree, scale=1.0):
        n = degree + 1
        mask = np.add.outer(np.arange(n), np.arange(n)) <= degree
        return cls(rng.uniform(-scale, scale, size=(n, n)) * mask)

    def __call__(self, x, y):
        return np.polynomial.polynomial.polyval2d(x, y, self.c)

    def dx(self):
        return Poly2d(np.polynomial.polynomial.polyder(self.c, axis=0))

    def dy(self):
        return Poly2d(np.polynomial.polynomial.polyder(self.c, axis=1))

    def grad(self, x, y):
        return self.dx()(x, y), self.dy()(x, y)

    def laplacian(self):
        cxx = np.polynomial.polynomial.polyder(self.c, m=2, axis=0)
        cyy = np.polynomial.polynomial.polyder(self.c, m=2, axis=1)
        n0 = max(cxx.shape[0], cyy.shape[0])
        n1 = max(cxx.shape[1], cyy.shape[1])
        out = np.zeros((n0, n1))
        out[: cxx.shape[0], : cxx.shape[1]] += cxx
        out[: cyy.shape[0], : cyy.shape[1]] += cyy
        return Poly2d(out)


def random_triangle(rng, min_double_area=0.2):
    while True:
        v = rng.uniform(-1, 1, size=(3, 2))
        d1, d2 = v[1] - v[0], v[2] - v[0]
        if d1[0] * d2[1] - d1[1] * d2[0] > min_double_area:
            return v
