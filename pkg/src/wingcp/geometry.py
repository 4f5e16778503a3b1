"""Riemannian metric, connection and curvature from surface jets.

With coordinates x1 = u, x2 = v and the immersion F(u, v), the induced
metric and its derivatives are inner products of the jet:

    g_ij        = <d_i F, d_j F>
    d_l g_ij    = <d_l d_i F, d_j F> + <d_i F, d_l d_j F>
    d_m d_l g_ij = <d_m d_l d_i F, d_j F> + <d_l d_i F, d_m d_j F>
                 + <d_m d_i F, d_l d_j F> + <d_i F, d_m d_l d_j F>

Christoffel symbols follow from the metric,

    Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_li - d_l g_ij)

and their coordinate derivatives are obtained analytically with
d(g^-1) = -g^-1 (dg) g^-1, so no finite differences enter the chain.
The curvature coefficients are

    R^s_ijk = (Gamma^l_ik Gamma^s_jl - Gamma^l_jk Gamma^s_il)
              + d_j Gamma^s_ik - d_i Gamma^s_jk

stored in index order [s][i][j][k] (antisymmetric in i, j). Two Ricci
contractions are supported; in two dimensions they differ by sign only:

    "standard"     R_ij = sum_k R^k_ikj   (spheres get positive scalar curvature)
    "first-index"  R_ij = sum_k R^k_kij   (the opposite sign)

Scalar curvature is S = g^ij R_ij in either case.
"""

from dataclasses import dataclass

import numpy as np

from .bezier import PiecewiseManifold, SurfaceJet, SurfacePoint, jet
from .errors import DegenerateMetric

__all__ = [
    "CONVENTIONS",
    "DEFAULT_CONVENTION",
    "RiemannianFeatures",
    "metric",
    "inverse_metric",
    "christoffel",
    "riemann_tensor",
    "contract",
    "feature_bundle",
    "feature_csv_header",
    "feature_csv_row",
]

CONVENTIONS = ("standard", "first-index")
DEFAULT_CONVENTION = "standard"

# det(g) threshold is scale-aware: singular values of g scale with
# geometry size squared, so compare against (trace g)^2.
_DEGENERATE_REL_TOL = 1e-12


@dataclass
class RiemannianFeatures:
    """Full geometric feature set at one surface point."""

    point: SurfacePoint
    position: np.ndarray  # F(u, v), 3-vector
    g: np.ndarray  # (2, 2)
    g_inv: np.ndarray  # (2, 2)
    det_g: float
    gamma: np.ndarray  # (2, 2, 2), [k][i][j]
    riemann: np.ndarray  # (2, 2, 2, 2), [s][i][j][k]
    ricci: np.ndarray  # (2, 2)
    scalar: float
    convention: str


def _dF(jet_: SurfaceJet, *indices) -> np.ndarray:
    """Partial of F for a list of coordinate indices (0 = u, 1 = v)."""
    p = sum(1 for i in indices if i == 0)
    q = len(indices) - p
    return jet_.partial(p, q)


def metric(jet_: SurfaceJet):
    """Metric g_ij and its first derivatives d_l g_ij from an order>=2 jet.

    Returns (g, dg) with g shape (2, 2) and dg shape (2, 2, 2) indexed
    [l][i][j]. Symmetric slots are mirrored, so g and dg are symmetric
    in (i, j) exactly as stored.
    """
    if jet_.order < 2:
        raise ValueError("metric derivatives need a jet of order >= 2")
    e = [_dF(jet_, 0), _dF(jet_, 1)]
    g = np.empty((2, 2))
    for i in range(2):
        for j in range(i, 2):
            g[i, j] = g[j, i] = float(e[i] @ e[j])
    dg = np.empty((2, 2, 2))
    for l in range(2):
        for i in range(2):
            for j in range(i, 2):
                val = float(_dF(jet_, l, i) @ e[j]) + float(e[i] @ _dF(jet_, l, j))
                dg[l, i, j] = dg[l, j, i] = val
    return g, dg


def _metric_hessian(jet_: SurfaceJet) -> np.ndarray:
    """Second metric derivatives d_m d_l g_ij, shape (2, 2, 2, 2) [m][l][i][j]."""
    if jet_.order < 3:
        raise ValueError("second metric derivatives need an order-3 jet")
    e = [_dF(jet_, 0), _dF(jet_, 1)]
    ddg = np.empty((2, 2, 2, 2))
    for m_ in range(2):
        for l in range(2):
            for i in range(2):
                for j in range(i, 2):
                    val = (
                        float(_dF(jet_, m_, l, i) @ e[j])
                        + float(_dF(jet_, l, i) @ _dF(jet_, m_, j))
                        + float(_dF(jet_, m_, i) @ _dF(jet_, l, j))
                        + float(e[i] @ _dF(jet_, m_, l, j))
                    )
                    ddg[m_, l, i, j] = ddg[m_, l, j, i] = val
    return ddg


def inverse_metric(g: np.ndarray, point: SurfacePoint | None = None) -> np.ndarray:
    """Closed-form 2x2 inverse; raises DegenerateMetric when det is too small."""
    g = np.asarray(g, dtype=float)
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    tr = g[0, 0] + g[1, 1]
    if det <= _DEGENERATE_REL_TOL * tr * tr:
        raise DegenerateMetric(det, point)
    return np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det


def christoffel(jet_: SurfaceJet):
    """Christoffel symbols and their coordinate derivatives.

    Returns (gamma, dgamma): gamma[k][i][j] and dgamma[x][k][i][j], both
    symmetric in (i, j) as stored. Requires an order-3 jet because
    dgamma consumes third derivatives of F.
    """
    g, dg = metric(jet_)
    g_inv = inverse_metric(g, jet_.point)
    ddg = _metric_hessian(jet_)

    # dginv[x] = -g_inv @ dg[x] @ g_inv
    dginv = np.stack([-g_inv @ dg[x] @ g_inv for x in range(2)])

    gamma = np.empty((2, 2, 2))
    dgamma = np.empty((2, 2, 2, 2))
    for i in range(2):
        for j in range(i, 2):
            for k in range(2):
                acc = 0.0
                for l in range(2):
                    acc += g_inv[k, l] * (dg[i, j, l] + dg[j, l, i] - dg[l, i, j])
                gamma[k, i, j] = gamma[k, j, i] = 0.5 * acc
            for x in range(2):
                for k in range(2):
                    acc = 0.0
                    for l in range(2):
                        acc += dginv[x, k, l] * (dg[i, j, l] + dg[j, l, i] - dg[l, i, j])
                        acc += g_inv[k, l] * (ddg[x, i, j, l] + ddg[x, j, l, i] - ddg[x, l, i, j])
                    dgamma[x, k, i, j] = dgamma[x, k, j, i] = 0.5 * acc
    return gamma, dgamma


def riemann_tensor(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """Curvature coefficients R^s_ijk from Christoffel data at one point.

    R^s_ijk = (Gamma^l_ik Gamma^s_jl - Gamma^l_jk Gamma^s_il)
              + d_j Gamma^s_ik - d_i Gamma^s_jk
    """
    riem = np.empty((2, 2, 2, 2))
    for s in range(2):
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    quad = 0.0
                    for l in range(2):
                        quad += gamma[l, i, k] * gamma[s, j, l] - gamma[l, j, k] * gamma[s, i, l]
                    riem[s, i, j, k] = quad + dgamma[j, s, i, k] - dgamma[i, s, j, k]
    return riem


def contract(riemann: np.ndarray, g_inv: np.ndarray, convention: str = DEFAULT_CONVENTION):
    """Ricci tensor and scalar curvature from the curvature coefficients.

    The two supported contractions differ by sign only in 2D; this is
    asserted at runtime unless Python runs with -O.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}, expected one of {CONVENTIONS}")
    ricci_std = np.einsum("aiaj->ij", riemann)
    ricci_first = np.einsum("aaij->ij", riemann)
    scale = max(1.0, float(np.max(np.abs(riemann))))
    assert np.allclose(ricci_first, -ricci_std, atol=1e-9 * scale), (
        "Ricci contractions are not opposite in sign; curvature input is inconsistent"
    )
    ricci = ricci_std if convention == "standard" else ricci_first
    scalar = float(np.einsum("ij,ij->", g_inv, ricci))
    return ricci, scalar


def feature_bundle(
    manifold: PiecewiseManifold,
    point: SurfacePoint,
    convention: str = DEFAULT_CONVENTION,
) -> RiemannianFeatures:
    """Full jet -> metric -> connection -> curvature chain at one point.

    The point's patch must have passed (or been exempted from) the
    validity check. DegenerateMetric propagates with the point attached.
    """
    manifold.assert_ready(point.patch_id)
    grid = manifold.grid(point.patch_id)
    jet_ = jet(grid, point.u, point.v, order=3)
    g, _ = metric(jet_)
    try:
        g_inv = inverse_metric(g, point)
        gamma, dgamma = christoffel(jet_)
    except DegenerateMetric as exc:
        raise DegenerateMetric(exc.det, point) from None
    riem = riemann_tensor(gamma, dgamma)
    ricci, scalar = contract(riem, g_inv, convention)
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    return RiemannianFeatures(
        point=point,
        position=jet_.position.copy(),
        g=g,
        g_inv=g_inv,
        det_g=float(det),
        gamma=gamma,
        riemann=riem,
        ricci=ricci,
        scalar=scalar,
        convention=convention,
    )


# ---------------------------------------------------------------------------
# Feature dump rows: patch_id,u,v,x,y,z,g11,g12,g22,gam111,...,gam222,S
# (Christoffel columns ordered [k][i][j] with i <= j)
# ---------------------------------------------------------------------------


def feature_csv_header(stencil_slot: bool = False) -> list:
    head = ["patch_id", "u", "v", "x", "y", "z", "g11", "g12", "g22"]
    head += [f"gam{k + 1}{i + 1}{j + 1}" for k in range(2) for i in range(2) for j in range(i, 2)]
    head += ["S"]
    if stencil_slot:
        head.append("stencil_slot")
    return head


def feature_csv_row(f: RiemannianFeatures, stencil_slot: int | None = None) -> list:
    vals = [
        f.point.patch_id,
        format(f.point.u, ".17g"),
        format(f.point.v, ".17g"),
        format(f.position[0], ".17g"),
        format(f.position[1], ".17g"),
        format(f.position[2], ".17g"),
        format(f.g[0, 0], ".17g"),
        format(f.g[0, 1], ".17g"),
        format(f.g[1, 1], ".17g"),
    ]
    vals += [
        format(f.gamma[k, i, j], ".17g") for k in range(2) for i in range(2) for j in range(i, 2)
    ]
    vals.append(format(f.scalar, ".17g"))
    if stencil_slot is not None:
        vals.append(str(stencil_slot))
    return vals
