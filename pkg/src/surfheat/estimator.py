"""Residual-based a posteriori indicators for the implicit time stepper.

Three element-wise quantities steer the adaptive driver: a spatial indicator
(co-normal flux jumps plus the strong interior residual), a temporal
indicator (full H1 norm of the discrete time increment), and a coarsening
indicator (its L2 part, bounding what nodal coarsening may spoil).  All are
exact integrals of piecewise polynomials -- no quadrature error enters.
"""

import numpy as np

from .mesh import conormal_flux_jumps
from .fem import basis_gradients


class Indicators:
    """Per-element squared indicators with their global sums.

    ``spatial_sq``, ``temporal_sq``, ``coarsening_sq`` are per-element
    vectors; jump contributions are split half/half between the two adjacent
    elements, so each global value equals the sum of its vector exactly.
    ``eta_combined`` is the scalar step indicator
    ``(1 + h^2) sqrt(tau (eta_h^2 + eta_tau^2))`` with the mesh-wide ``h``.
    """

    __slots__ = ("spatial_sq", "temporal_sq", "coarsening_sq", "eta_h_sq",
                 "eta_tau_sq", "eta_c_sq", "eta_combined", "tau", "h")

    def __init__(self, spatial_sq, temporal_sq, coarsening_sq, tau, h):
        self.spatial_sq = spatial_sq
        self.temporal_sq = temporal_sq
        self.coarsening_sq = coarsening_sq
        self.eta_h_sq = float(spatial_sq.sum())
        self.eta_tau_sq = float(temporal_sq.sum())
        self.eta_c_sq = float(coarsening_sq.sum())
        self.tau = float(tau)
        self.h = float(h)
        self.eta_combined = combined(np.sqrt(self.eta_h_sq),
                                     np.sqrt(self.eta_tau_sq), tau, h)


def _element_l2_sq(mesh, values):
    """Exact integral of the square of a P1 function, per element."""
    v = values[mesh.triangles]
    return mesh.metrics.area / 12.0 * (v.sum(axis=1) ** 2
                                       + (v ** 2).sum(axis=1))


def _element_gradients(mesh, values):
    return np.einsum("mi,mij->mj", values[mesh.triangles],
                     basis_gradients(mesh))


def spatial_indicator(mesh, u_n, u_prev, f_h, tau):
    """Squared spatial indicator: per-element vector and its sum.

    Edge part: squared co-normal flux jump times ``h_S^2`` (the jump is
    constant along an edge of length ``h_S``), attributed half/half to the
    adjacent elements.  Element part: ``h_T^2`` times the exact square
    integral of the strong residual ``(u_n - u_prev)/tau - f_h``.
    """
    u_n.check(mesh)
    u_prev.check(mesh)
    f_h.check(mesh)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    grads = _element_gradients(mesh, u_n.coefficients)
    jumps = conormal_flux_jumps(mesh, grads)
    edge_sq = mesh.edge_geometry.length ** 2 * jumps ** 2
    residual = ((u_n.coefficients - u_prev.coefficients) / tau
                - f_h.coefficients)
    per_element = (mesh.metrics.h_T ** 2 * _element_l2_sq(mesh, residual)
                   + 0.5 * edge_sq[mesh.tri_edges].sum(axis=1))
    return per_element, float(per_element.sum())


def temporal_indicator(mesh, u_n, u_prev):
    """Squared H1(T) norms of the time increment ``u_n - u_prev``."""
    u_n.check(mesh)
    u_prev.check(mesh)
    w = u_n.coefficients - u_prev.coefficients
    g = _element_gradients(mesh, w)
    per_element = (_element_l2_sq(mesh, w)
                   + mesh.metrics.area * np.einsum("mi,mi->m", g, g))
    return per_element, float(per_element.sum())


def coarsening_indicator(mesh, u_n, u_prev):
    """Squared L2(T) norms of the time increment (the part of the temporal
    indicator that nodal coarsening can increase)."""
    u_n.check(mesh)
    u_prev.check(mesh)
    w = u_n.coefficients - u_prev.coefficients
    per_element = _element_l2_sq(mesh, w)
    return per_element, float(per_element.sum())


def combined(eta_h, eta_tau, tau, h):
    """Step indicator ``(1 + h^2) sqrt(tau (eta_h^2 + eta_tau^2))`` from the
    (unsquared) spatial and temporal indicator values."""
    if eta_h < 0.0 or eta_tau < 0.0 or tau < 0.0 or h < 0.0:
        raise ValueError("indicator inputs must be nonnegative")
    return float((1.0 + h * h)
                 * np.sqrt(tau * (eta_h * eta_h + eta_tau * eta_tau)))


def compute_indicators(mesh, u_n, u_prev, f_h, tau):
    """All indicators of one accepted or tentative step, bundled."""
    spatial_sq, _ = spatial_indicator(mesh, u_n, u_prev, f_h, tau)
    temporal_sq, _ = temporal_indicator(mesh, u_n, u_prev)
    coarsening_sq, _ = coarsening_indicator(mesh, u_n, u_prev)
    return Indicators(spatial_sq, temporal_sq, coarsening_sq, tau,
                      mesh.metrics.h)
