"""Independent reference implementations used only by the tests."""

import numpy as np
import scipy.sparse
import scipy.sparse.linalg


def tensor_element_stiffness(h):
    """Trilinear brick stiffness from 1-D linear-element matrices (local order x fastest)."""
    k = [np.array([[1.0, -1.0], [-1.0, 1.0]]) / hi for hi in h]
    m = [np.array([[2.0, 1.0], [1.0, 2.0]]) * hi / 6.0 for hi in h]
    return (
        np.kron(m[2], np.kron(m[1], k[0]))
        + np.kron(m[2], np.kron(k[1], m[0]))
        + np.kron(k[2], np.kron(m[1], m[0]))
    )


def box_poisson_face(zeta, n=10, source=10.0):
    """Dense-assembly solve on the 1 x n x n box; returns face values at x1 = -0.05, x2 fastest."""
    h = np.array([0.1, 1.0 / n, 1.0 / n])
    ke = tensor_element_stiffness(h)
    n1, n2, n3 = 2, n + 1, n + 1

    def gid(i, j, k):
        return i + n1 * (j + n2 * k)

    size = n1 * n2 * n3
    K = np.zeros((size, size))
    f = np.zeros(size)
    e = 0
    for k3 in range(n):
        for k2 in range(n):
            ids = [gid(a, k2 + b, k3 + c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
            K[np.ix_(ids, ids)] += zeta[e] * ke
            f[ids] += source * np.prod(h) / 8.0
            e += 1
    fixed = np.zeros(size, dtype=bool)
    for i in range(n1):
        for j in range(n2):
            for k in range(n3):
                if j in (0, n) or k in (0, n):
                    fixed[gid(i, j, k)] = True
    free = ~fixed
    u = np.zeros(size)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], f[free])
    return np.array([u[gid(0, j, k)] for k in range(n3) for j in range(n2)])


def fd_square_poisson(n_cells, source=10.0):
    """Five-point FD solution of -lap u = source on [-0.5, 0.5]^2, zero boundary; (n+1)^2 grid."""
    m = n_cells - 1
    h = 1.0 / n_cells
    t = scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m)) / h**2
    eye = scipy.sparse.identity(m)
    lap = scipy.sparse.kron(eye, t) + scipy.sparse.kron(t, eye)
    inner = scipy.sparse.linalg.spsolve(lap.tocsc(), np.full(m * m, source))
    u = np.zeros((n_cells + 1, n_cells + 1))
    u[1:-1, 1:-1] = inner.reshape(m, m)
    return u
