"""Coil geometry, coil resistance and magnet-coil flux coupling.

The magnet is modelled with the surface-charge picture of a uniformly
magnetized cuboid: two rectangular sheets of magnetic charge +/-M on its top
and bottom faces.  Field coordinates are centred on the magnet, z along the
magnetization, so the magnet occupies ``|x| <= a/2, |y| <= b/2, |z| <= t/2``.
The coil plane sits ``gap`` below the bottom face, at ``z = -(gap + t/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .device import CoilSpec, MagnetSpec, ParameterError

MU0 = 4e-7 * math.pi

# Bz(x, y, gap) on the coil plane, arrays in, array out.
PlaneField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class ConvergenceError(RuntimeError):
    """Raised when an iterative numerical procedure fails to converge."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class Turn:
    side_length: float
    z_plane: float = 0.0


@dataclass(frozen=True)
class CoilLayout:
    turns: tuple[Turn, ...]
    track_cross_section: float
    total_track_length: float

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    @property
    def side_lengths(self) -> np.ndarray:
        return np.array([t.side_length for t in self.turns])


@dataclass(frozen=True)
class FluxSample:
    z_gap: float
    flux_linkage: float


def build_layout(coil: CoilSpec) -> CoilLayout:
    """Realize ``coil`` as concentric square turns on its track centrelines.

    The outermost centreline sits half a track width inside the outer edge, so
    its side is ``outer_side - track_width``; each further turn is ``2 * pitch``
    shorter.
    """
    outer = coil.outer_side - coil.track_width
    sides = [outer - 2 * coil.pitch * i for i in range(coil.n_turns)]
    if sides[-1] <= 0:
        raise ParameterError(
            f"innermost turn side would be {sides[-1]:.3e} m; reduce n_turns or pitch"
        )
    total = 0.0
    for s in sides:
        total += 4 * s
    return CoilLayout(
        turns=tuple(Turn(side_length=s) for s in sides),
        track_cross_section=coil.track_width * coil.track_thickness,
        total_track_length=total,
    )


def coil_resistance(layout: CoilLayout, resistivity: float) -> float:
    """DC series resistance of the track, rho * L / A."""
    return resistivity * layout.total_track_length / layout.track_cross_section


def _face_sum(half_a: float, half_b: float, x, y, w):
    # Sum over the four corners of arctan(u v / (w r)) for a charged sheet at
    # height difference w; this is the normal-field integral of the sheet.
    total = 0.0
    for i, xc in enumerate((-half_a, half_a)):
        for j, yc in enumerate((-half_b, half_b)):
            u = xc - x
            v = yc - y
            r = np.sqrt(u * u + v * v + w * w)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.arctan(u * v / (w * r))
            term = np.where(np.isnan(term), 0.0, term)
            total = total + (1 if (i + j) % 2 == 0 else -1) * term
    return total


def _bz_centered(magnet: MagnetSpec, x, y, z):
    a = magnet.side_a / 2
    b = magnet.side_b / 2
    c = magnet.thickness / 2
    top = _face_sum(a, b, x, y, z - c)
    bottom = _face_sum(a, b, x, y, z + c)
    return magnet.remanence / (4 * math.pi) * (top - bottom)


def magnet_bz(magnet: MagnetSpec, point) -> float | np.ndarray:
    """z-component of B (T) at ``point = (x, y, z)`` in the magnet-centred frame.

    Accepts scalars or broadcastable arrays.  Points inside the magnet body are
    rejected; the charge model gives H there, not B.
    """
    x, y, z = (np.asarray(p, dtype=float) for p in point)
    inside = (
        (np.abs(x) < magnet.side_a / 2)
        & (np.abs(y) < magnet.side_b / 2)
        & (np.abs(z) < magnet.thickness / 2)
    )
    if np.any(inside):
        raise ParameterError("magnet_bz: point lies inside the magnet volume")
    bz = _bz_centered(magnet, x, y, z)
    return float(bz) if np.ndim(bz) == 0 else bz


def plane_field(magnet: MagnetSpec) -> PlaneField:
    """Bz on a coil plane ``gap`` below the magnet, as a function of (x, y, gap)."""

    def bz(x, y, gap):
        return _bz_centered(magnet, x, y, -(gap + magnet.thickness / 2))

    return bz


def _panel_nodes(edges: np.ndarray, n_panels_each: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    xg, wg = leggauss(order)
    nodes = []
    weights = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sub = np.linspace(lo, hi, n_panels_each + 1)
        for p0, p1 in zip(sub[:-1], sub[1:]):
            half = (p1 - p0) / 2
            nodes.append((p0 + p1) / 2 + half * xg)
            weights.append(half * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def _edge_breaks(magnet: MagnetSpec, gap: float) -> list[float]:
    # Panel edges graded towards the footprint edge, where Bz varies on the
    # scale of the gap.  Only valid for a square footprint (same breaks in x, y).
    if magnet.side_a != magnet.side_b:
        return []
    a = magnet.side_a / 2
    out = {a}
    for k in (0.25, 0.5, 1.0, 2.0, 4.0):
        out.update((a - k * gap, a + k * gap))
    return sorted(b for b in out if b > 0)


def _square_flux(bz: PlaneField, half: float, gap: float, breaks: list[float], n_panels: int, order: int) -> float:
    # Quarter square [0, half]^2 times four; the field is mirror symmetric in x and y.
    edges = np.array([0.0] + [b for b in breaks if 0 < b < half] + [half])
    nodes, weights = _panel_nodes(edges, n_panels, order)
    xx, yy = np.meshgrid(nodes, nodes, indexing="ij")
    vals = bz(xx, yy, gap)
    return 4.0 * float(weights @ vals @ weights)


class _FluxRule:
    """Composite Gauss-Legendre rule over every turn of a layout.

    The panel structure is fixed at construction so repeated evaluations at
    nearby gaps share one quadrature error, which cancels in differences.
    """

    def __init__(self, layout: CoilLayout, breaks: list[float], order: int):
        self.layout = layout
        self.breaks = breaks
        self.order = order

    def evaluate(self, bz: PlaneField, z_gap: float, n_panels: int) -> float:
        return sum(
            _square_flux(bz, t.side_length / 2, z_gap + t.z_plane, self.breaks, n_panels, self.order)
            for t in self.layout.turns
        )

    def converge(self, bz: PlaneField, z_gap: float, rtol: float, max_refinements: int) -> tuple[float, int]:
        n_panels = 1
        history = [self.evaluate(bz, z_gap, n_panels)]
        for _ in range(max_refinements):
            n_panels *= 2
            history.append(self.evaluate(bz, z_gap, n_panels))
            prev, cur = history[-2], history[-1]
            scale = max(abs(cur), abs(prev))
            if scale == 0.0 or abs(cur - prev) <= rtol * scale:
                return cur, n_panels
        raise ConvergenceError(
            f"flux quadrature did not reach rtol={rtol:g} after {max_refinements} refinements "
            f"(last values {history[-3:]})",
            history,
        )


def _check_gap(z_gap: float) -> None:
    if not (isinstance(z_gap, (int, float)) and math.isfinite(z_gap) and z_gap > 0):
        raise ParameterError(f"z_gap must be a finite value > 0, got {z_gap!r}")


def flux_linkage(
    magnet: MagnetSpec,
    layout: CoilLayout,
    z_gap: float,
    *,
    rtol: float = 1e-4,
    order: int = 8,
    max_refinements: int = 8,
    field: PlaneField | None = None,
) -> float:
    """Total flux linkage (Wb) of the coil with the magnet bottom ``z_gap`` above it.

    Each turn is a filament on its centreline; the enclosed flux is a composite
    Gauss-Legendre integral with panel edges graded towards the magnet
    footprint.  Panels are doubled until the total changes by less than
    ``rtol``.  ``field`` overrides the magnet field (used for synthetic sources).
    """
    _check_gap(z_gap)
    bz = field if field is not None else plane_field(magnet)
    rule = _FluxRule(layout, _edge_breaks(magnet, z_gap), order)
    value, _ = rule.converge(bz, z_gap, rtol, max_refinements)
    return value


def transduction_coefficient(
    magnet: MagnetSpec,
    layout: CoilLayout,
    z_gap: float,
    *,
    h0: float | None = None,
    rtol: float = 1e-3,
    max_halvings: int = 12,
    field: PlaneField | None = None,
) -> float:
    """K = -dPhi/dz_gap (V s/m) by central differences with step halving.

    Positive K means the flux grows as the magnet approaches the coil.  The
    step starts at ``z_gap / 4`` and is halved until two successive estimates
    agree to ``rtol``.
    """
    _check_gap(z_gap)
    h = h0 if h0 is not None else z_gap / 4
    if not z_gap > h:
        raise ParameterError(f"z_gap ({z_gap}) must exceed the difference step ({h})")
    bz = field if field is not None else plane_field(magnet)
    rule = _FluxRule(layout, _edge_breaks(magnet, z_gap), order=8)
    phi0, n_panels = rule.converge(bz, z_gap, 1e-8, 10)

    def estimate(step: float) -> float:
        lo = rule.evaluate(bz, z_gap - step, n_panels)
        hi = rule.evaluate(bz, z_gap + step, n_panels)
        return (lo - hi) / (2 * step)

    history = [estimate(h)]
    for _ in range(max_halvings):
        h /= 2
        history.append(estimate(h))
        prev, cur = history[-2], history[-1]
        scale = max(abs(prev), abs(cur))
        if scale == 0.0 or abs(cur - prev) <= rtol * scale:
            return cur
        # A difference within rounding of the flux itself is a zero gradient.
        if scale * 2 * h < 1e-12 * abs(phi0):
            return 0.0
    raise ConvergenceError(f"derivative did not settle to rtol={rtol:g}", history)


def flux_table(magnet: MagnetSpec, layout: CoilLayout, gaps) -> list[FluxSample]:
    return [FluxSample(float(z), flux_linkage(magnet, layout, float(z))) for z in gaps]


def dipole_bz(moment_mu0: float, x, y, z):
    """Point-dipole Bz (T) for a moment along z; ``moment_mu0`` is mu0*m (T m^3)."""
    r2 = x * x + y * y + z * z
    r = np.sqrt(r2)
    return moment_mu0 / (4 * math.pi) * (3 * z * z / r**5 - 1 / r**3)
