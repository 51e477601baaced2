"""Signed-distance level-set surfaces, closest-point lifting, and the
geometric operators that relate quantities on a polyhedral interpolation
surface to their counterparts on the exact surface.

Conventions
-----------
All point-based functions are vectorized: ``points`` may have any shape
``(..., 3)`` and results broadcast accordingly.  ``nu_h`` denotes the unit
normal of a flat element, ``nu`` the exact surface normal (the gradient of
the signed distance).
"""

import numpy as np

from .errors import NonConvergence, OutsideTube, SingularShapeOperator

_EYE3 = np.eye(3)


class LevelSetSurface:
    """A closed surface described by a signed distance function.

    Parameters
    ----------
    distance : callable
        ``distance(points)`` with ``points`` of shape ``(..., 3)`` returning
        the signed distance, shape ``(...,)``.  Negative inside.
    gradient : callable
        Gradient of the distance, shape ``(..., 3)``; a unit vector for an
        exact signed distance.
    hessian : callable
        Hessian of the distance (the extended Weingarten map), shape
        ``(..., 3, 3)``.
    bounding_radius : float
        Radius of a ball around the origin containing the surface; the
        closest-point lift refuses points with ``|d| >= bounding_radius / 4``.
    name : str, optional
        Identifier used in diagnostics.
    """

    def __init__(self, distance, gradient, hessian, bounding_radius, name=""):
        self.distance = distance
        self.gradient = gradient
        self.hessian = hessian
        self.bounding_radius = float(bounding_radius)
        self.name = name

    def __repr__(self):
        return f"LevelSetSurface({self.name or 'custom'}, R={self.bounding_radius})"


def unit_sphere():
    """Unit sphere centred at the origin, with analytic derivatives."""

    def distance(p):
        p = np.asarray(p, dtype=float)
        return np.linalg.norm(p, axis=-1) - 1.0

    def gradient(p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p, axis=-1, keepdims=True)
        return p / r

    def hessian(p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p, axis=-1, keepdims=True)
        n = p / r
        outer = n[..., :, None] * n[..., None, :]
        return (_EYE3 - outer) / r[..., None]

    return LevelSetSurface(distance, gradient, hessian, bounding_radius=1.0,
                           name="unit-sphere")


def torus(major_radius=2.0, minor_radius=0.5):
    """Torus around the z-axis with exact signed distance.

    The distance is ``hypot(hypot(x, y) - R0, z) - r0``, which is the true
    signed distance away from the axis of symmetry.
    """
    R0, r0 = float(major_radius), float(minor_radius)

    def distance(p):
        p = np.asarray(p, dtype=float)
        rho = np.hypot(p[..., 0], p[..., 1])
        return np.hypot(rho - R0, p[..., 2]) - r0

    def gradient(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        rho = np.hypot(x, y)
        q = rho - R0
        D = np.hypot(q, z)
        g = np.empty_like(p)
        g[..., 0] = q * x / (rho * D)
        g[..., 1] = q * y / (rho * D)
        g[..., 2] = z / D
        return g

    def hessian(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        rho = np.hypot(x, y)
        q = rho - R0
        D = np.hypot(q, z)
        # distance = f(q(x, y), z) with f = hypot; chain rule in (q, z)
        grho = np.zeros(p.shape)
        grho[..., 0] = x / rho
        grho[..., 1] = y / rho
        e3 = np.zeros(p.shape)
        e3[..., 2] = 1.0
        outer_rho = grho[..., :, None] * grho[..., None, :]
        P_xy = np.diag([1.0, 1.0, 0.0])
        hess_rho = (P_xy - outer_rho) / rho[..., None, None]
        f_q = (q / D)[..., None, None]
        f_qq = (z ** 2 / D ** 3)[..., None, None]
        f_zz = (q ** 2 / D ** 3)[..., None, None]
        f_qz = (-q * z / D ** 3)[..., None, None]
        cross = (grho[..., :, None] * e3[..., None, :]
                 + e3[..., :, None] * grho[..., None, :])
        return (f_q * hess_rho + f_qq * outer_rho + f_qz * cross
                + f_zz * e3[..., :, None] * e3[..., None, :])

    return LevelSetSurface(distance, gradient, hessian,
                           bounding_radius=R0 + r0,
                           name=f"torus-{R0}-{r0}")


def lift(surface, points, tol=1e-12, max_iter=100):
    """Closest-point lift onto the surface.

    Fixed-point iteration ``y <- x - d(x) * nu(y)`` with the distance frozen
    at the source point and the unit normal re-evaluated at the current
    iterate.  For an exact signed distance this converges in one step.

    Raises
    ------
    OutsideTube
        If ``|d(x)| >= bounding_radius / 4`` for any point.
    NonConvergence
        If the increment does not drop below ``tol`` within ``max_iter``
        iterations, or the converged point is not on the surface.
    """
    x = np.asarray(points, dtype=float)
    d0 = surface.distance(x)
    guard = surface.bounding_radius / 4.0
    if np.any(np.abs(d0) >= guard):
        worst = float(np.max(np.abs(d0)))
        raise OutsideTube(
            f"point with |d| = {worst:.3g} outside lift tube (limit {guard:.3g})")
    d0e = d0[..., None]
    g = surface.gradient(x)
    g = g / np.linalg.norm(g, axis=-1, keepdims=True)
    y = x - d0e * g
    for _ in range(max_iter):
        n = surface.gradient(y)
        n = n / np.linalg.norm(n, axis=-1, keepdims=True)
        y_new = x - d0e * n
        delta = np.max(np.abs(y_new - y)) if y.size else 0.0
        y = y_new
        if delta < tol:
            break
    else:
        raise NonConvergence(f"closest-point iteration stalled after {max_iter} steps")
    residual = np.max(np.abs(surface.distance(y))) if y.size else 0.0
    if residual > 1e-10:
        raise NonConvergence(
            f"lifted point off-surface by {residual:.3g}; distance callbacks inconsistent?")
    return y


def lift_jacobian(surface, points):
    """Jacobian of the closest-point map, ``I - grad d grad d^T - d Hess d``."""
    p = np.asarray(points, dtype=float)
    d = surface.distance(p)[..., None, None]
    g = surface.gradient(p)
    H = surface.hessian(p)
    outer = g[..., :, None] * g[..., None, :]
    return _EYE3 - outer - d * H


def measure_ratio(surface, points, t1, t2):
    """Surface-measure ratio d(sigma) / d(sigma_h) on a flat element.

    ``t1``/``t2`` span the element plane at each point; the ratio is the area
    distortion of the closest-point map restricted to that plane, i.e.
    ``|Dp t1 x Dp t2| / |t1 x t2|``.
    """
    Dp = lift_jacobian(surface, points)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    im1 = np.einsum("...ij,...j->...i", Dp, t1)
    im2 = np.einsum("...ij,...j->...i", Dp, t2)
    num = np.linalg.norm(np.cross(im1, im2), axis=-1)
    den = np.linalg.norm(np.cross(t1, t2), axis=-1)
    return num / den


def _tangent_pair(nu_h):
    """A deterministic orthonormal basis of the plane orthogonal to nu_h."""
    nu_h = np.asarray(nu_h, dtype=float)
    # pick the coordinate axis least aligned with nu_h, then Gram-Schmidt
    axis = np.argmin(np.abs(nu_h), axis=-1)
    a = np.zeros(nu_h.shape)
    np.put_along_axis(a, axis[..., None], 1.0, axis=-1)
    t1 = a - np.sum(a * nu_h, axis=-1, keepdims=True) * nu_h
    t1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(nu_h, t1)
    return t1, t2


def lifted_gradient_transform(surface, points, nu_h):
    """Matrix mapping flat tangential gradients to lifted surface gradients.

    Returns ``(I - d A)^{-1} (I - nu_h nu^T / (nu_h . nu))`` evaluated at each
    point, where ``A`` is the extended Weingarten map.
    """
    p = np.asarray(points, dtype=float)
    nu_h = np.broadcast_to(np.asarray(nu_h, dtype=float), p.shape)
    d = surface.distance(p)
    nu = surface.gradient(p)
    nu = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
    dot = np.sum(nu_h * nu, axis=-1)
    if np.any(dot <= 0.0):
        raise ValueError("element normal points away from the surface normal")
    Q = _EYE3 - nu_h[..., :, None] * nu[..., None, :] / dot[..., None, None]
    A = surface.hessian(p)
    IdA = _EYE3 - d[..., None, None] * A
    det = np.linalg.det(IdA)
    if np.any(np.abs(det) < 1e-12):
        raise SingularShapeOperator("I - d*Weingarten is singular")
    B = np.linalg.inv(IdA)
    return B @ Q


class GeometricOperators:
    """Bundle of pointwise geometric quantities.

    Attributes (all batched over the leading point axes):

    - ``distance`` : signed distance d
    - ``normal`` : exact unit normal
    - ``weingarten`` : extended Weingarten map (Hessian of d)
    - ``mu`` : measure ratio of the closest-point map on the element plane
    - ``projector`` : tangential projector P of the exact surface
    - ``projector_h`` : tangential projector of the flat element
    - ``grad_transform`` : matrix of :func:`lifted_gradient_transform`
    - ``r_tilde`` : weighted transform whose quadratic form turns flat
      Dirichlet integrands into exact-surface ones
    - ``a_tilde`` : ``r_tilde`` composed with ``projector_h``; close to
      ``projector_h`` at second order in the mesh size
    """

    __slots__ = ("distance", "normal", "weingarten", "mu", "projector",
                 "projector_h", "grad_transform", "r_tilde", "a_tilde")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw[k])


def geometric_operators(surface, points, nu_h):
    """Evaluate all geometric operators at points of a flat element.

    Parameters
    ----------
    surface : LevelSetSurface
    points : array, shape (..., 3)
        Evaluation points on (or near) the flat element.
    nu_h : array, shape (..., 3) or (3,)
        Unit normal of the element, broadcast over the points.

    Raises
    ------
    SingularShapeOperator
        If ``I - d*Weingarten`` is singular at some point.
    ValueError
        If ``nu_h . nu <= 0`` somewhere (inadmissible element).
    """
    p = np.asarray(points, dtype=float)
    nu_h = np.broadcast_to(np.asarray(nu_h, dtype=float), p.shape)
    d = surface.distance(p)
    nu = surface.gradient(p)
    nu = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
    dot = np.sum(nu_h * nu, axis=-1)
    if np.any(dot <= 0.0):
        raise ValueError("element normal points away from the surface normal")
    A = surface.hessian(p)
    IdA = _EYE3 - d[..., None, None] * A
    det = np.linalg.det(IdA)
    if np.any(np.abs(det) < 1e-12):
        raise SingularShapeOperator("I - d*Weingarten is singular")
    B = np.linalg.inv(IdA)
    Q = _EYE3 - nu_h[..., :, None] * nu[..., None, :] / dot[..., None, None]
    P = _EYE3 - nu[..., :, None] * nu[..., None, :]
    P_h = _EYE3 - nu_h[..., :, None] * nu_h[..., None, :]
    t1, t2 = _tangent_pair(nu_h)
    mu = measure_ratio(surface, p, t1, t2)
    QT = np.swapaxes(Q, -1, -2)
    r_tilde = mu[..., None, None] * (P_h @ QT @ B @ B @ Q)
    a_tilde = r_tilde @ P_h
    return GeometricOperators(distance=d, normal=nu, weingarten=A, mu=mu,
                              projector=P, projector_h=P_h,
                              grad_transform=B @ Q,
                              r_tilde=r_tilde, a_tilde=a_tilde)
