"""Nine-point neighbor stencils at calibrated 3D chord spacing.

The target spacing d is a Euclidean (chord) distance in model space,
realized by offsets along the two parameter axes. Offsets are found by
bisection on the monotone chord-length function; diagonals compose the
axial offsets (square layout). Stencils never cross patch seams; when
the patch boundary is closer than d the offset clamps to the boundary
and the point carries a flag instead of failing.

Slot order is row-major NW,N,NE,W,center,E,SW,S,SE with north = +v and
east = +u; the center occupies slot 4.
"""

from dataclasses import dataclass

import numpy as np

from .bezier import ControlGrid, PiecewiseManifold, SurfacePoint, eval_patch
from .errors import StencilOutOfPatch

__all__ = ["Stencil", "calibrate_offset", "build_stencil", "SLOT_NAMES", "NEIGHBOR_SLOTS"]

SLOT_NAMES = ("NW", "N", "NE", "W", "C", "E", "SW", "S", "SE")
NEIGHBOR_SLOTS = (0, 1, 2, 3, 5, 6, 7, 8)  # all slots except the center

_CHORD_REL_TOL = 1e-9
_MAX_BISECT = 80


def _chord(grid: ControlGrid, u0: float, v0: float, base: np.ndarray, axis: str, offset: float) -> float:
    if axis == "u":
        p = eval_patch(grid, u0 + offset, v0)
    else:
        p = eval_patch(grid, u0, v0 + offset)
    return float(np.linalg.norm(p - base))


def calibrate_offset(
    grid: ControlGrid,
    point: SurfacePoint,
    axis: str,
    direction: int,
    d: float,
):
    """Parameter offset delta >= 0 whose chord to the base point equals d.

    Returns (delta, clamped). The returned delta is signed magnitude
    along +axis for direction=+1 or -axis for direction=-1 (always
    non-negative; the caller applies the sign). If the boundary arrives
    before the chord reaches d, the offset clamps there and
    clamped=True. If d exceeds the chord across the entire patch along
    that axis, StencilOutOfPatch is raised.
    """
    if axis not in ("u", "v"):
        raise ValueError(f"axis must be 'u' or 'v', got {axis!r}")
    if direction not in (-1, 1):
        raise ValueError(f"direction must be +1 or -1, got {direction!r}")
    if d <= 0.0:
        raise ValueError(f"spacing d must be positive, got {d}")

    u0, v0 = point.u, point.v
    base = eval_patch(grid, u0, v0)
    coord = u0 if axis == "u" else v0

    lo_end = -coord  # offset reaching coordinate 0
    hi_end = 1.0 - coord

    # chord across the full parameter range at the transverse coordinate
    if axis == "u":
        a = eval_patch(grid, 0.0, v0)
        b = eval_patch(grid, 1.0, v0)
    else:
        a = eval_patch(grid, u0, 0.0)
        b = eval_patch(grid, u0, 1.0)
    whole = float(np.linalg.norm(b - a))
    if d > whole:
        raise StencilOutOfPatch(
            f"spacing d={d} exceeds patch extent {whole:.6g} along {axis} at {point}"
        )

    max_off = hi_end if direction > 0 else -lo_end  # available room, >= 0
    if max_off <= 0.0:
        return 0.0, True
    reach = _chord(grid, u0, v0, base, axis, direction * max_off)
    if reach < d:
        return max_off, True

    lo, hi = 0.0, max_off
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        c = _chord(grid, u0, v0, base, axis, direction * mid)
        if abs(c - d) <= _CHORD_REL_TOL * d:
            return mid, False
        if c < d:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


@dataclass
class Stencil:
    """3x3 grid of surface points around a center at target chord spacing d.

    ``achieved_spacings`` / ``clamped`` cover the 8 neighbors in slot
    order (center slot 4 omitted, see NEIGHBOR_SLOTS).
    """

    center: SurfacePoint
    points: tuple  # 9 SurfacePoint, slot order per SLOT_NAMES
    d: float
    achieved_spacings: np.ndarray  # (8,)
    clamped: tuple  # 8 bools

    def __post_init__(self):
        assert self.points[4] == self.center


def build_stencil(manifold: PiecewiseManifold, center: SurfacePoint, d: float) -> Stencil:
    """Calibrate the 4 axial offsets and compose the 3x3 stencil."""
    manifold.assert_ready(center.patch_id)
    grid = manifold.grid(center.patch_id)

    du_pos, cl_e = calibrate_offset(grid, center, "u", +1, d)
    du_neg, cl_w = calibrate_offset(grid, center, "u", -1, d)
    dv_pos, cl_n = calibrate_offset(grid, center, "v", +1, d)
    dv_neg, cl_s = calibrate_offset(grid, center, "v", -1, d)

    u0, v0 = center.u, center.v
    pid = center.patch_id
    west, east = u0 - du_neg, u0 + du_pos
    south, north = v0 - dv_neg, v0 + dv_pos

    coords = [
        (west, north),  # NW
        (u0, north),  # N
        (east, north),  # NE
        (west, v0),  # W
        (u0, v0),  # C
        (east, v0),  # E
        (west, south),  # SW
        (u0, south),  # S
        (east, south),  # SE
    ]
    points = tuple(
        center if slot == 4 else SurfacePoint(pid, u, v) for slot, (u, v) in enumerate(coords)
    )

    slot_clamped = {
        0: cl_w or cl_n,
        1: cl_n,
        2: cl_e or cl_n,
        3: cl_w,
        5: cl_e,
        6: cl_w or cl_s,
        7: cl_s,
        8: cl_e or cl_s,
    }
    base = eval_patch(grid, u0, v0)
    spacings = np.array(
        [
            float(np.linalg.norm(eval_patch(grid, points[s].u, points[s].v) - base))
            for s in NEIGHBOR_SLOTS
        ]
    )
    clamped = tuple(slot_clamped[s] for s in NEIGHBOR_SLOTS)
    return Stencil(center=center, points=points, d=d, achieved_spacings=spacings, clamped=clamped)
