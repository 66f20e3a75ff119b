"""Trilinear hexahedral finite elements for ``-div(zeta grad u) = f`` on a box.

The coefficient ``zeta`` is constant per element. Homogeneous Dirichlet
conditions hold on the four faces ``|x2| = half-width`` and ``|x3| =
half-width``; the two ``x1`` faces carry zero flux.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.linalg

from abris.errors import InputError, NumericalError

# local node order: (a, b, c) in {0,1}^3 with a fastest
_LOCAL = np.array([(a, b, c) for c, b, a in product((0, 1), repeat=3)])


def element_stiffness(h):
    """Stiffness of a unit-coefficient brick with edge lengths ``h`` (8x8).

    Integrated with 2x2x2 Gauss quadrature, which is exact for trilinear shapes.
    """
    h = np.asarray(h, dtype=float)
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    signs = 2.0 * _LOCAL - 1.0
    ke = np.zeros((8, 8))
    jac_det = np.prod(h) / 8.0
    for xi in product(gp, repeat=3):
        xi = np.asarray(xi)
        # dN/dxi for N_a = prod_k (1 + s_ak xi_k) / 8
        fac = 1.0 + signs * xi
        dn = np.empty((8, 3))
        for k in range(3):
            others = [j for j in range(3) if j != k]
            dn[:, k] = signs[:, k] * fac[:, others[0]] * fac[:, others[1]] / 8.0
        grad = dn * (2.0 / h)
        ke += grad @ grad.T * jac_det
    return ke


@dataclass
class PoissonMesh:
    """Structured brick mesh of a box.

    Attributes:
        lower (np.ndarray): Lower box corner.
        upper (np.ndarray): Upper box corner.
        shape (tuple[int, int, int]): Element counts along x1, x2, x3.
    """

    lower: np.ndarray
    upper: np.ndarray
    shape: tuple

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        if np.any(self.upper <= self.lower) or min(self.shape) < 1:
            raise InputError("invalid mesh box or resolution")

    @classmethod
    def default(cls, n=10):
        """The 1 x n x n mesh of ``[-0.05,0.05] x [-0.5,0.5]^2``."""
        return cls([-0.05, -0.5, -0.5], [0.05, 0.5, 0.5], (1, n, n))

    @property
    def node_shape(self):
        return tuple(s + 1 for s in self.shape)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def n_elements(self):
        return int(np.prod(self.shape))

    @property
    def h(self):
        return (self.upper - self.lower) / np.array(self.shape)

    def node_index(self, i1, i2, i3):
        n1, n2, _ = self.node_shape
        return i1 + n1 * (i2 + n2 * i3)

    @cached_property
    def nodes(self):
        """Node coordinates (n_nodes, 3), x1 fastest then x2 then x3."""
        axes = [np.linspace(lo, hi, s + 1) for lo, hi, s in zip(self.lower, self.upper, self.shape)]
        x3, x2, x1 = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel(), x3.ravel()])

    @cached_property
    def connectivity(self):
        """Global node ids per element (n_elements, 8); elements ordered x1, x2, x3 fastest first."""
        e1, e2, e3 = self.shape
        conn = []
        for k3 in range(e3):
            for k2 in range(e2):
                for k1 in range(e1):
                    conn.append([self.node_index(k1 + a, k2 + b, k3 + c) for a, b, c in _LOCAL])
        return np.array(conn)

    @cached_property
    def element_centers(self):
        return self.nodes[self.connectivity].mean(axis=1)

    @cached_property
    def dirichlet_mask(self):
        """True at nodes on the faces ``x2 = const`` or ``x3 = const`` of the box."""
        x = self.nodes
        tol = 1e-12 * np.max(self.upper - self.lower)
        on = np.zeros(self.n_nodes, dtype=bool)
        for k in (1, 2):
            on |= np.abs(x[:, k] - self.lower[k]) < tol
            on |= np.abs(x[:, k] - self.upper[k]) < tol
        return on

    @cached_property
    def output_nodes(self):
        """Node ids on the face ``x1 = lower[0]``, x2 fastest then x3."""
        _, n2, n3 = self.node_shape
        return np.array([self.node_index(0, i2, i3) for i3 in range(n3) for i2 in range(n2)])

    @cached_property
    def reference_stiffness(self):
        return element_stiffness(self.h)

    @cached_property
    def _free(self):
        return np.flatnonzero(~self.dirichlet_mask)

    @cached_property
    def _free_assembly(self):
        """Scatter indices into the dense free-free matrix and the matching element entries."""
        n_free = self._free.size
        local = np.full(self.n_nodes, -1)
        local[self._free] = np.arange(n_free)
        conn = local[self.connectivity]
        rows = np.repeat(conn, 8, axis=1)
        cols = np.tile(conn, (1, 8))
        keep = (rows >= 0) & (cols >= 0)
        elem = np.broadcast_to(np.arange(self.n_elements)[:, None], rows.shape)[keep]
        vals = np.broadcast_to(self.reference_stiffness.ravel(), rows.shape)[keep]
        return rows[keep] * n_free + cols[keep], elem, vals

    def load_vector(self, source=10.0):
        """Consistent nodal load of a constant volumetric source."""
        f = np.zeros(self.n_nodes)
        np.add.at(f, self.connectivity, source * np.prod(self.h) / 8.0)
        return f

    @cached_property
    def _free_load(self):
        return self.load_vector()[self._free]


def assemble_stiffness(mesh, zeta):
    """Full (n_nodes x n_nodes) stiffness matrix with elementwise ``zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (mesh.n_elements,):
        raise InputError(f"expected {mesh.n_elements} coefficients, got {zeta.shape}")
    k = np.zeros((mesh.n_nodes, mesh.n_nodes))
    ke = mesh.reference_stiffness
    for e, nodes in enumerate(mesh.connectivity):
        k[np.ix_(nodes, nodes)] += zeta[e] * ke
    return k


def solve_nodal(mesh, zeta, source=10.0):
    """Nodal solution on all nodes for elementwise coefficient ``zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (mesh.n_elements,):
        raise InputError(f"expected {mesh.n_elements} coefficients, got {zeta.shape}")
    if np.any(~(zeta > 0.0)) or not np.all(np.isfinite(zeta)):
        raise InputError("coefficient field must be positive and finite")
    lin, elem, vals = mesh._free_assembly
    n_free = mesh._free.size
    k = np.bincount(lin, weights=zeta[elem] * vals, minlength=n_free * n_free).reshape(n_free, n_free)
    rhs = mesh._free_load * (source / 10.0)
    try:
        u_free = scipy.linalg.cho_solve(scipy.linalg.cho_factor(k), rhs)
    except np.linalg.LinAlgError as err:
        raise NumericalError("stiffness matrix is not positive definite") from err
    u = np.zeros(mesh.n_nodes)
    u[mesh._free] = u_free
    return u


def poisson_solve(mesh, zeta):
    """Nodal solution on the face ``x1 = lower[0]`` (x2 fastest, then x3)."""
    return solve_nodal(mesh, zeta)[mesh.output_nodes]
