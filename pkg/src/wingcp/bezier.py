"""Piecewise Bezier surface manifolds with analytic derivative jets.

A tensor-product Bezier patch over the unit square is defined by an
(m+1) x (n+1) grid of 3D control points:

    F(u, v) = sum_a sum_b P_ab B_{a,m}(u) B_{b,n}(v)

Several patches concatenated form a piecewise smooth manifold. All
derivatives are computed analytically through the Bernstein
degree-reduction recursion (d/dt B_{a,m} = m (B_{a-1,m-1} - B_{a,m-1})),
so jets are exact for polynomial data; derivatives beyond the polynomial
degree are exactly zero.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidPatch, SampleParseError

__all__ = [
    "ControlGrid",
    "SurfacePoint",
    "SurfaceJet",
    "ValidityReport",
    "Seam",
    "PiecewiseManifold",
    "bernstein",
    "bernstein_row",
    "eval_patch",
    "jet",
    "check_patch",
    "load_control_grids",
    "save_control_grids",
    "load_manifold",
]


@dataclass
class ControlGrid:
    """Control net of one Bezier patch.

    ``points`` has shape (m+1, n+1, 3); degrees are inferred from it.
    Both degrees must be at least 1 so the patch has two independent
    tangent directions. The array is frozen after construction.
    """

    patch_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"control points must have shape (m+1, n+1, 3), got {pts.shape}")
        if pts.shape[0] < 2 or pts.shape[1] < 2:
            raise ValueError("both degrees must be >= 1 (need two tangent directions)")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"patch {self.patch_id!r}: non-finite control coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def degrees(self):
        """(m, n) polynomial degrees along u and v."""
        return self.points.shape[0] - 1, self.points.shape[1] - 1

    def bbox_diagonal(self):
        lo = self.points.reshape(-1, 3).min(axis=0)
        hi = self.points.reshape(-1, 3).max(axis=0)
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class SurfacePoint:
    """Parameter-space address (patch_id, u, v) on the piecewise manifold."""

    patch_id: str
    u: float
    v: float

    def __post_init__(self):
        if not (0.0 <= self.u <= 1.0 and 0.0 <= self.v <= 1.0):
            raise ValueError(f"parameters outside [0,1]: u={self.u}, v={self.v}")


@dataclass
class SurfaceJet:
    """All mixed partials d^(p+q) F / du^p dv^q with p+q <= order at one point.

    ``d[p, q]`` is the 3-vector partial; slots with p+q > order are zero
    and must not be read (use :meth:`partial`).
    """

    point: SurfacePoint
    order: int
    d: np.ndarray  # (order+1, order+1, 3)

    def partial(self, p, q):
        if p < 0 or q < 0 or p + q > self.order:
            raise ValueError(f"partial ({p},{q}) outside jet order {self.order}")
        return self.d[p, q]

    @property
    def position(self):
        return self.d[0, 0]

    @property
    def jacobian(self):
        """3x2 Jacobian [dF/du, dF/dv] as columns."""
        return np.stack([self.d[1, 0], self.d[0, 1]], axis=1)


def bernstein(a: int, m: int, t: float) -> float:
    """Bernstein basis value B_{a,m}(t) = C(m,a) t^a (1-t)^(m-a)."""
    if not 0 <= a <= m:
        raise ValueError(f"basis index a={a} outside 0..{m}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"parameter t={t} outside [0,1]")
    return math.comb(m, a) * t**a * (1.0 - t) ** (m - a)


def bernstein_row(m: int, t: float) -> np.ndarray:
    """All degree-m Bernstein values at t, as a length-(m+1) vector."""
    s = 1.0 - t
    return np.array([math.comb(m, a) * t**a * s ** (m - a) for a in range(m + 1)])


def _check_domain(u, v):
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError(f"parameters outside [0,1]: u={u}, v={v}")


def eval_patch(grid: ControlGrid, u: float, v: float) -> np.ndarray:
    """Evaluate F(u, v) on one patch. Returns a 3-vector."""
    _check_domain(u, v)
    m, n = grid.degrees
    bu = bernstein_row(m, u)
    bv = bernstein_row(n, v)
    return np.einsum("a,b,abc->c", bu, bv, grid.points)


def jet(grid: ControlGrid, u: float, v: float, order: int = 3) -> SurfaceJet:
    """Analytic derivative jet of the patch at (u, v).

    Partials are evaluated from iterated forward differences of the
    control net:

        d^(p+q)F/du^p dv^q = m!/(m-p)! n!/(n-q)!
            * sum_ab (Delta^{p,q} P)_ab B_{a,m-p}(u) B_{b,n-q}(v)

    which is exact (no truncation). Orders past the degree are exactly
    zero rather than an error.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"jet order must be 1, 2 or 3, got {order}")
    _check_domain(u, v)
    m, n = grid.degrees
    d = np.zeros((order + 1, order + 1, 3))
    diff_u = grid.points
    for p in range(min(order, m) + 1):
        bu = bernstein_row(m - p, u)
        cu = math.perm(m, p)
        diff_uv = diff_u
        for q in range(min(order - p, n) + 1):
            bv = bernstein_row(n - q, v)
            d[p, q] = (cu * math.perm(n, q)) * np.einsum("a,b,abc->c", bu, bv, diff_uv)
            diff_uv = np.diff(diff_uv, axis=1)
        diff_u = np.diff(diff_u, axis=0)
    return SurfaceJet(point=SurfacePoint(grid.patch_id, u, v), order=order, d=d)


@dataclass
class ValidityReport:
    """Outcome of the immersion / self-intersection check for one patch.

    ``immersion_margin`` is the minimum over the sample grid of the
    smallest singular value of the Jacobian. ``intersections`` lists
    sample pairs that nearly coincide in 3D while being far apart in
    parameter space. A failing patch yields a report, not an exception.
    """

    patch_id: str
    valid: bool
    immersion_margin: float
    margin_location: tuple  # (u, v) where the margin is attained
    rank_tol: float
    intersections: list  # [{"a": (u,v), "b": (u,v), "dist3d": float, "dist_param": float}]
    intersection_count: int
    eps_space: float
    delta_param: float
    samples_per_axis: int
    bbox_diagonal: float

    def to_dict(self):
        return {
            "patch_id": self.patch_id,
            "valid": self.valid,
            "immersion_margin": self.immersion_margin,
            "margin_location": list(self.margin_location),
            "rank_tol": self.rank_tol,
            "intersections": self.intersections,
            "intersection_count": self.intersection_count,
            "eps_space": self.eps_space,
            "delta_param": self.delta_param,
            "samples_per_axis": self.samples_per_axis,
            "bbox_diagonal": self.bbox_diagonal,
        }


_MAX_REPORTED_PAIRS = 64


def check_patch(
    grid: ControlGrid,
    samples_per_axis: int = 64,
    rank_tol: float | None = None,
    eps_space: float | None = None,
    delta_param: float = 0.05,
) -> ValidityReport:
    """Sample-based validity check: immersion margin and self-contact scan.

    Tolerances scale with the control-net bounding-box diagonal:
    rank_tol defaults to 1e-8 * diag, eps_space to 1e-6 * diag. The
    self-intersection scan is a heuristic over the sample grid, not an
    exact algebraic test.
    """
    if samples_per_axis < 4:
        raise ValueError("samples_per_axis must be >= 4")
    m, n = grid.degrees
    diag = grid.bbox_diagonal()
    if rank_tol is None:
        rank_tol = 1e-8 * diag
    if eps_space is None:
        eps_space = 1e-6 * diag

    ss = np.linspace(0.0, 1.0, samples_per_axis)
    bu = np.array([bernstein_row(m, t) for t in ss])  # (N, m+1)
    bv = np.array([bernstein_row(n, t) for t in ss])
    bu1 = np.array([bernstein_row(m - 1, t) for t in ss])
    bv1 = np.array([bernstein_row(n - 1, t) for t in ss])

    pts = np.einsum("ia,jb,abc->ijc", bu, bv, grid.points)
    fu = m * np.einsum("ia,jb,abc->ijc", bu1, bv, np.diff(grid.points, axis=0))
    fv = n * np.einsum("ia,jb,abc->ijc", bu, bv1, np.diff(grid.points, axis=1))

    jac = np.stack([fu, fv], axis=-1)  # (N, N, 3, 2)
    sig = np.linalg.svd(jac.reshape(-1, 3, 2), compute_uv=False)
    sig_min = sig[:, -1].reshape(samples_per_axis, samples_per_axis)
    flat_idx = int(np.argmin(sig_min))
    iu, iv = np.unravel_index(flat_idx, sig_min.shape)
    margin = float(sig_min[iu, iv])
    margin_loc = (float(ss[iu]), float(ss[iv]))

    uu, vv = np.meshgrid(ss, ss, indexing="ij")
    params = np.stack([uu.ravel(), vv.ravel()], axis=1)
    tree = cKDTree(pts.reshape(-1, 3))
    pairs = tree.query_pairs(r=eps_space, output_type="ndarray")
    intersections = []
    count = 0
    if len(pairs):
        pdist = np.linalg.norm(params[pairs[:, 0]] - params[pairs[:, 1]], axis=1)
        hits = pairs[pdist > delta_param]
        count = len(hits)
        flat = pts.reshape(-1, 3)
        for i, j in hits[:_MAX_REPORTED_PAIRS]:
            intersections.append(
                {
                    "a": [float(params[i, 0]), float(params[i, 1])],
                    "b": [float(params[j, 0]), float(params[j, 1])],
                    "dist3d": float(np.linalg.norm(flat[i] - flat[j])),
                    "dist_param": float(np.linalg.norm(params[i] - params[j])),
                }
            )

    return ValidityReport(
        patch_id=grid.patch_id,
        valid=(margin >= rank_tol and count == 0),
        immersion_margin=margin,
        margin_location=margin_loc,
        rank_tol=float(rank_tol),
        intersections=intersections,
        intersection_count=count,
        eps_space=float(eps_space),
        delta_param=float(delta_param),
        samples_per_axis=samples_per_axis,
        bbox_diagonal=diag,
    )


@dataclass(frozen=True)
class Seam:
    """Shared-boundary record between two patches (recorded, not enforced)."""

    patch_a: str
    edge_a: str  # "u0" | "u1" | "v0" | "v1"
    patch_b: str
    edge_b: str


def _boundary_points(grid: ControlGrid, edge: str) -> np.ndarray:
    if edge == "u0":
        return grid.points[0, :, :]
    if edge == "u1":
        return grid.points[-1, :, :]
    if edge == "v0":
        return grid.points[:, 0, :]
    if edge == "v1":
        return grid.points[:, -1, :]
    raise ValueError(f"unknown edge {edge!r}")


class PiecewiseManifold:
    """Ordered collection of Bezier patches with validity bookkeeping.

    Feature extraction requires each patch to have passed
    :func:`check_patch` (or to be explicitly exempted). Reports are kept
    per patch so callers can serialize them.
    """

    def __init__(self, grids, adjacency=None):
        ids = [g.patch_id for g in grids]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patch ids in manifold")
        self._grids = {g.patch_id: g for g in grids}
        self.adjacency = list(adjacency) if adjacency is not None else None
        self.reports: dict[str, ValidityReport] = {}
        self._exempt: set[str] = set()

    @property
    def patch_ids(self):
        return list(self._grids)

    def __contains__(self, patch_id):
        return patch_id in self._grids

    def grid(self, patch_id) -> ControlGrid:
        try:
            return self._grids[patch_id]
        except KeyError:
            raise KeyError(f"unknown patch id {patch_id!r}") from None

    def check_all(self, samples_per_axis: int = 64, **kwargs) -> dict:
        """Run the validity check on every patch; returns the report map."""
        for pid, grid in self._grids.items():
            self.reports[pid] = check_patch(grid, samples_per_axis, **kwargs)
        return self.reports

    def exempt(self, patch_id):
        """Skip the validity gate for one patch (caller takes responsibility)."""
        self.grid(patch_id)
        self._exempt.add(patch_id)

    def exempt_all(self):
        for pid in self._grids:
            self._exempt.add(pid)

    def is_ready(self, patch_id) -> bool:
        if patch_id in self._exempt:
            return True
        report = self.reports.get(patch_id)
        return report is not None and report.valid

    def assert_ready(self, patch_id):
        if patch_id not in self._grids:
            raise KeyError(f"unknown patch id {patch_id!r}")
        if not self.is_ready(patch_id):
            report = self.reports.get(patch_id)
            state = "failed validity check" if report is not None else "was never checked"
            raise InvalidPatch(f"patch {patch_id!r} {state}; check or exempt it first")

    def invalid_patches(self):
        return [pid for pid in self._grids if not self.is_ready(pid)]

    def detect_seams(self, tol: float = 1e-9) -> list:
        """Match patch boundaries whose control points coincide within tol."""
        seams = []
        ids = self.patch_ids
        edges = ("u0", "u1", "v0", "v1")
        for i, pa in enumerate(ids):
            for pb in ids[i + 1 :]:
                for ea in edges:
                    ba = _boundary_points(self.grid(pa), ea)
                    for eb in edges:
                        bb = _boundary_points(self.grid(pb), eb)
                        if ba.shape == bb.shape and np.max(np.abs(ba - bb)) <= tol:
                            seams.append(Seam(pa, ea, pb, eb))
        self.adjacency = seams
        return seams


# ---------------------------------------------------------------------------
# Control-grid file format: CSV with header patch_id,a,b,x,y,z
# ---------------------------------------------------------------------------

_GRID_HEADER = ["patch_id", "a", "b", "x", "y", "z"]


def load_control_grids(path) -> list:
    """Parse a control-grid CSV into a list of ControlGrid.

    Rows of a patch must cover the full (m+1) x (n+1) index rectangle;
    degrees are inferred from the maximum indices. Errors carry the
    offending row number.
    """
    per_patch: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _GRID_HEADER:
            raise SampleParseError(f"{path}: expected header {','.join(_GRID_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise SampleParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            pid = row[0].strip()
            try:
                a, b = int(row[1]), int(row[2])
                xyz = [float(c) for c in row[3:6]]
            except ValueError as exc:
                raise SampleParseError(f"{path}:{lineno}: {exc}") from None
            if a < 0 or b < 0:
                raise SampleParseError(f"{path}:{lineno}: negative control index")
            if not all(math.isfinite(c) for c in xyz):
                raise SampleParseError(f"{path}:{lineno}: non-finite coordinate")
            entry = per_patch.setdefault(pid, {})
            if pid not in order:
                order.append(pid)
            if (a, b) in entry:
                raise SampleParseError(f"{path}:{lineno}: duplicate index ({a},{b}) in patch {pid!r}")
            entry[(a, b)] = xyz

    grids = []
    for pid in order:
        entry = per_patch[pid]
        m = max(a for a, _ in entry)
        n = max(b for _, b in entry)
        if len(entry) != (m + 1) * (n + 1):
            raise SampleParseError(
                f"{path}: patch {pid!r} covers {len(entry)} of {(m + 1) * (n + 1)} grid slots"
            )
        pts = np.empty((m + 1, n + 1, 3))
        for (a, b), xyz in entry.items():
            pts[a, b] = xyz
        grids.append(ControlGrid(pid, pts))
    return grids


def save_control_grids(path, grids):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_GRID_HEADER)
        for grid in grids:
            m, n = grid.degrees
            for a in range(m + 1):
                for b in range(n + 1):
                    x, y, z = grid.points[a, b]
                    writer.writerow(
                        [grid.patch_id, a, b, format(x, ".17g"), format(y, ".17g"), format(z, ".17g")]
                    )


def load_manifold(path) -> PiecewiseManifold:
    return PiecewiseManifold(load_control_grids(path))
