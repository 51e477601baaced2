"""Piecewise-linear finite elements on surface triangulations.

Element matrices use exact closed forms (the integrands are polynomial on
flat triangles); quadrature enters only for error norms against an exact
solution, where integrands live on the curved surface via the closest-point
lift.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateTriangle, GenerationMismatch, SolverDivergence
from .geometry import geometric_operators, lift


class FeFunction:
    """Nodal coefficient vector bound to one mesh generation.

    Parameters
    ----------
    generation : int
        Generation id of the mesh the coefficients refer to.
    coefficients : (N,) array
        One value per mesh node.
    """

    __slots__ = ("generation", "coefficients")

    def __init__(self, generation, coefficients):
        self.generation = int(generation)
        self.coefficients = np.asarray(coefficients, dtype=float)

    @classmethod
    def on_mesh(cls, mesh, coefficients):
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (mesh.n_nodes,):
            raise ValueError(
                f"expected {mesh.n_nodes} coefficients, got {c.shape}")
        return cls(mesh.generation, c)

    def copy(self):
        return FeFunction(self.generation, self.coefficients.copy())

    def __len__(self):
        return len(self.coefficients)

    def check(self, mesh):
        """Raise GenerationMismatch unless bound to ``mesh``."""
        if self.generation != mesh.generation:
            raise GenerationMismatch(
                f"function generation {self.generation} vs mesh generation "
                f"{mesh.generation}")
        if len(self.coefficients) != mesh.n_nodes:
            raise GenerationMismatch(
                f"{len(self.coefficients)} coefficients on a mesh with "
                f"{mesh.n_nodes} nodes")
        return self


class QuadratureRule:
    """Symmetric barycentric quadrature on the reference triangle.

    Weights are normalized to sum to one, so an integral is approximated by
    ``area * sum_q w_q f(x_q)``.
    """

    __slots__ = ("points", "weights", "degree")

    def __init__(self, points, weights, degree):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.degree = int(degree)
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-14):
            raise ValueError("quadrature weights must sum to 1")

    @classmethod
    def edge_midpoints(cls):
        """Three-point edge-midpoint rule, exact for degree 2."""
        pts = [(0.5, 0.5, 0.0), (0.0, 0.5, 0.5), (0.5, 0.0, 0.5)]
        return cls(pts, [1.0 / 3.0] * 3, degree=2)

    @classmethod
    def degree4(cls):
        """Six-point symmetric rule, exact for degree 4."""
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts, wts = [], []
        for a, w in ((a1, w1), (a2, w2)):
            b = 1.0 - 2.0 * a
            pts += [(b, a, a), (a, b, a), (a, a, b)]
            wts += [w, w, w]
        return cls(pts, wts, degree=4)

    def physical_points(self, mesh):
        """Map the rule onto every triangle: returns (M, Q, 3) coordinates."""
        corners = mesh.nodes[mesh.triangles]  # (M, 3, 3)
        return np.einsum("qi,mij->mqj", self.points, corners)


def basis_gradients(mesh):
    """Tangential gradients of the three nodal basis functions per triangle.

    Returns
    -------
    (M, 3, 3) array ``G`` with ``G[t, i]`` the (constant) surface gradient of
    the barycentric basis function of local vertex i on triangle t.
    """
    p = mesh.nodes[mesh.triangles]
    met = mesh.metrics
    two_area = (2.0 * met.area)[:, None]
    G = np.empty((mesh.n_triangles, 3, 3))
    for i in range(3):
        edge_opp = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        G[:, i] = np.cross(met.normal, edge_opp) / two_area
    return G


def element_gradient(corners, values):
    """Constant tangential gradient of a P1 function on one flat triangle.

    Parameters
    ----------
    corners : (3, 3) array of vertex coordinates.
    values : (3,) nodal values.
    """
    corners = np.asarray(corners, dtype=float)
    values = np.asarray(values, dtype=float)
    cr = np.cross(corners[1] - corners[0], corners[2] - corners[0])
    two_area = np.linalg.norm(cr)
    if two_area <= 1e-14 * max(np.linalg.norm(corners[1] - corners[0]),
                               np.linalg.norm(corners[2] - corners[0])) ** 2:
        raise DegenerateTriangle("triangle with (near) zero area")
    n = cr / two_area
    g = np.zeros(3)
    for i in range(3):
        edge_opp = corners[(i + 2) % 3] - corners[(i + 1) % 3]
        g += values[i] * np.cross(n, edge_opp) / two_area
    return g


def all_element_gradients(mesh, u):
    """Tangential gradient of ``u`` on every triangle, shape (M, 3)."""
    u.check(mesh)
    vals = u.coefficients[mesh.triangles]  # (M, 3)
    return np.einsum("mi,mij->mj", vals, basis_gradients(mesh))


def assemble(mesh):
    """Mass and stiffness matrices of the P1 space on the flat triangulation.

    Returns
    -------
    (mass, stiffness) : scipy.sparse.csr_array
        ``mass[i, j] = integral(phi_i phi_j)``,
        ``stiffness[i, j] = integral(grad phi_i . grad phi_j)``;
        both symmetric, mass positive definite, stiffness with constants in
        its kernel.
    """
    met = mesh.metrics
    G = basis_gradients(mesh)
    area = met.area
    m_loc = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    a_loc = area[:, None, None] * np.einsum("mik,mjk->mij", G, G)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    mass = sp.csr_array(
        sp.coo_array((m_loc.ravel(), (rows, cols)), shape=(n, n)))
    stiffness = sp.csr_array(
        sp.coo_array((a_loc.ravel(), (rows, cols)), shape=(n, n)))
    return mass, stiffness


def interpolate(mesh, field, time=None):
    """Nodal interpolant of a scalar field.

    ``field`` is called as ``field(points)`` or ``field(points, time)`` with
    a vectorized ``(N, 3)`` argument.
    """
    if time is None:
        values = field(mesh.nodes)
    else:
        values = field(mesh.nodes, time)
    values = np.broadcast_to(np.asarray(values, dtype=float),
                             (mesh.n_nodes,))
    return FeFunction.on_mesh(mesh, values.copy())


def jacobi_cg(matrix, b, x0=None, rtol=1e-10, max_iter=None):
    """Conjugate gradients with diagonal preconditioning.

    Solves ``matrix @ x = b`` for a symmetric positive definite sparse
    matrix.  Returns ``(x, iterations)``; iteration 0 means the start vector
    already satisfied the residual test (in particular ``b = 0``).

    Raises
    ------
    SolverDivergence
        If the relative residual does not reach ``rtol`` within
        ``max_iter`` iterations (default ``10 n``).
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = 10 * n
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matrix @ x
    inv_diag = 1.0 / matrix.diagonal()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(max_iter + 1):
        if np.linalg.norm(r) <= rtol * b_norm:
            return x, k
        if k == max_iter:
            break
        q = matrix @ p
        alpha = rz / float(p @ q)
        x += alpha * p
        r -= alpha * q
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverDivergence(
        f"PCG did not reach rtol={rtol:g} within {max_iter} iterations "
        f"(relative residual {np.linalg.norm(r) / b_norm:.3g})")


def backward_euler_step(mass, stiffness, u_prev, f_n, tau):
    """One implicit Euler step of the discrete heat equation.

    Solves ``(mass + tau * stiffness) u = mass (u_prev + tau * f_n)`` with
    diagonally preconditioned CG started from ``u_prev``.

    Returns
    -------
    (FeFunction, int)
        The new solution (same generation as the inputs) and the number of
        CG iterations spent.
    """
    if u_prev.generation != f_n.generation:
        raise GenerationMismatch("u_prev and f_n live on different meshes")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    system = (mass + tau * stiffness).tocsr()
    rhs = mass @ (u_prev.coefficients + tau * f_n.coefficients)
    x, iters = jacobi_cg(system, rhs, x0=u_prev.coefficients)
    return FeFunction(u_prev.generation, x), iters


# ------------------------------------------------------------- lifted norms

def _lifted_quadrature(mesh, surface, rule):
    """Lift a quadrature rule to the exact surface.

    Returns per-(triangle, point): flat points ``x`` (M, Q, 3), lifted points
    ``y``, measure-ratio weights ``mu`` (M, Q), and the scaled weights
    ``w[m, q] = area_m * w_q * mu[m, q]`` integrating over the exact surface.
    """
    x = rule.physical_points(mesh)
    m, q = x.shape[:2]
    y = lift(surface, x.reshape(-1, 3)).reshape(m, q, 3)
    nu_h = np.broadcast_to(mesh.metrics.normal[:, None, :], x.shape)
    ops = geometric_operators(surface, x.reshape(-1, 3),
                              nu_h.reshape(-1, 3))
    mu = ops.mu.reshape(m, q)
    w = mesh.metrics.area[:, None] * rule.weights[None, :] * mu
    return x, y, ops, w


def lifted_l2_norm(mesh, surface, u, rule=None):
    """L2 norm of the lifted finite element function over the exact surface."""
    u.check(mesh)
    rule = rule or QuadratureRule.degree4()
    _, _, _, w = _lifted_quadrature(mesh, surface, rule)
    vals = np.einsum("qi,mi->mq", rule.points, u.coefficients[mesh.triangles])
    return float(np.sqrt(np.sum(w * vals ** 2)))


def flat_l2_norm(mass, u):
    """Exact L2 norm over the flat triangulation via the mass matrix."""
    c = u.coefficients
    return float(np.sqrt(c @ (mass @ c)))


def flat_h1_seminorm(stiffness, u):
    """Exact H1 seminorm over the flat triangulation."""
    c = u.coefficients
    return float(np.sqrt(max(c @ (stiffness @ c), 0.0)))


class ErrorEvaluator:
    """Reusable lifted-quadrature context for error norms on a fixed mesh.

    Lifting the quadrature points and building the geometric operators
    dominates the cost of an error evaluation; a time march on a fixed mesh
    repeats it identically every step.  This precomputes the lifted points,
    measure weights and gradient transforms once, so repeated evaluations
    pay only for the integrand arithmetic.
    """

    __slots__ = ("mesh", "rule", "_y", "_w", "_trans", "_basis")

    def __init__(self, mesh, surface, rule=None):
        self.mesh = mesh
        self.rule = rule or QuadratureRule.degree4()
        x, y, ops, w = _lifted_quadrature(mesh, surface, self.rule)
        m, q = x.shape[:2]
        self._y = y
        self._w = w
        self._trans = ops.grad_transform.reshape(m, q, 3, 3)
        self._basis = basis_gradients(mesh)

    def errors(self, u_h, exact_u, exact_grad, time):
        """L2 and H1-seminorm errors of the lifted discrete solution.

        The exact solution and its tangential gradient are evaluated at
        lifted quadrature points; the discrete tangential gradient is mapped
        to the exact surface with the lifted-gradient transform, and all
        integrals are weighted with the surface-measure ratio.

        Returns
        -------
        (l2_error, h1_semi_error)
        """
        u_h.check(self.mesh)
        tri = self.mesh.triangles
        vals = np.einsum("qi,mi->mq", self.rule.points,
                         u_h.coefficients[tri])
        diff = vals - exact_u(self._y, time)
        l2_sq = float(np.sum(self._w * diff ** 2))
        grads = np.einsum("mi,mij->mj", u_h.coefficients[tri],
                          self._basis)  # (M, 3) flat gradients
        lifted_grad = np.einsum("mqij,mj->mqi", self._trans, grads)
        gdiff = lifted_grad - exact_grad(self._y, time)
        h1_sq = float(np.sum(self._w * np.einsum("mqi,mqi->mq",
                                                 gdiff, gdiff)))
        return np.sqrt(l2_sq), np.sqrt(h1_sq)


def errors_vs_exact(mesh, surface, u_h, exact_u, exact_grad, time,
                    rule=None):
    """One-shot form of ``ErrorEvaluator.errors`` (see there)."""
    return ErrorEvaluator(mesh, surface, rule).errors(u_h, exact_u,
                                                      exact_grad, time)


def lifted_l2_distance(mesh, surface, u_h, field, time=None, rule=None):
    """L2(Gamma) distance between the lifted discrete function and a field.

    ``field`` takes ``(points)`` when ``time`` is None, else ``(points, t)``.
    """
    if time is None:
        exact = lambda y, t: field(y)  # noqa: E731
    else:
        exact = field

    def zero_grad(y, t):
        return np.zeros_like(y)

    l2, _ = errors_vs_exact(mesh, surface, u_h, exact, zero_grad, time,
                            rule=rule)
    return l2
