"""Shared fixtures and numerical oracles for the test suite.

Oracles here are deliberately independent of the library code paths they
check: finite differences instead of analytic kernel derivatives, scipy
special functions and quadrature instead of the hand-rolled versions, and
pure-numpy label propagation instead of the production component labeler.
"""

import numpy as np
import pytest

from fieldtopo import covariance


@pytest.fixture(scope="session")
def rpw():
    return covariance.rpw_model()


@pytest.fixture(scope="session")
def bf():
    return covariance.bargmann_fock_model()


@pytest.fixture(scope="session")
def rpw_law(rpw):
    return covariance.jet2_law(rpw)


@pytest.fixture(scope="session")
def bf_law(bf):
    return covariance.jet2_law(bf)


def fd_derivative(f, x, order, step):
    """Central finite difference of a scalar function, Richardson once."""

    def diff(h):
        if order == 0:
            return f(x)
        if order == 1:
            return (f(x + h) - f(x - h)) / (2.0 * h)
        if order == 2:
            return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
        raise ValueError(order)

    d1, d2 = diff(step), diff(step / 2.0)
    return (4.0 * d2 - d1) / 3.0


# central-difference stencils (offset: coefficient), second-order accurate
_STENCILS = {
    0: {0: 1.0},
    1: {1: 0.5, -1: -0.5},
    2: {1: 1.0, 0: -2.0, -1: 1.0},
    3: {2: 0.5, 1: -1.0, -1: 1.0, -2: -0.5},
    4: {2: 1.0, 1: -4.0, 0: 6.0, -1: -4.0, -2: 1.0},
}


def fd_partial2d(f, orders, step):
    """Mixed partial of f(x1, x2) at the origin by tensor-product central
    differences (each second-order accurate), Richardson once."""
    n1, n2 = orders
    s1, s2 = _STENCILS[n1], _STENCILS[n2]

    def diff(h):
        acc = 0.0
        for o1, c1 in s1.items():
            for o2, c2 in s2.items():
                acc += c1 * c2 * f(o1 * h, o2 * h)
        return acc / h ** (n1 + n2)

    d1, d2 = diff(step), diff(step / 2.0)
    return (4.0 * d2 - d1) / 3.0


def flood_count_inside(mask, radii, R):
    """Count 4-connected components of `mask` whose cells all lie within
    distance R of the origin (`radii` gives each cell's distance).

    Pure-python BFS over the set cells: an oracle independent of the
    production labeling code.
    """
    from collections import deque

    n1, n2 = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for i0, j0 in zip(*np.nonzero(mask)):
        if seen[i0, j0]:
            continue
        queue = deque([(i0, j0)])
        seen[i0, j0] = True
        contained = True
        while queue:
            i, j = queue.popleft()
            if radii[i, j] > R:
                contained = False
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < n1 and 0 <= b < n2 and mask[a, b] and not seen[a, b]:
                    seen[a, b] = True
                    queue.append((a, b))
        if contained:
            count += 1
    return count


def label_components(mask):
    """Connected components of a boolean grid by pure-numpy min-label
    propagation (4-connectivity).  Oracle for the production labeler."""
    labels = np.where(mask, np.arange(mask.size, dtype=np.int64).reshape(mask.shape) + 1, 0)
    while True:
        nxt = labels.copy()
        for shift, axis in (((1,), 0), ((-1,), 0), ((1,), 1), ((-1,), 1)):
            rolled = np.roll(labels, shift, axis=axis)
            # forbid wrap-around
            if axis == 0 and shift == (1,):
                rolled[0, :] = 0
            elif axis == 0:
                rolled[-1, :] = 0
            elif shift == (1,):
                rolled[:, 0] = 0
            else:
                rolled[:, -1] = 0
            take = mask & (rolled > 0) & ((rolled < nxt) | (nxt == 0))
            nxt[take] = rolled[take]
        if np.array_equal(nxt, labels):
            return labels
        labels = nxt
