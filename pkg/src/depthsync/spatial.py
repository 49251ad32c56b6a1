"""Extrinsic estimation from image-plane correspondences.

The objective is the summed pixel distance between LQ keypoints and the
HQ keypoints pushed through unproject -> rigid transform -> project. The
transform is a 7-vector (quaternion w,x,y,z then translation); the rotation
uses the normalized quaternion, so the loss is invariant to its scale.
"""

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import AlignmentInfeasibleError, DivergenceError, InvalidInputError
from .geometry import MIN_Z, RigidTransform, quat_to_matrix, reproject_depth, unproject_points

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
SHRINK = 0.5
GRADIENT_STEP = 1e-2
MAX_HALVINGS = 60
# divergence is judged against at least this mean first-pass loss
DIVERGENCE_FLOOR_PX = 0.1


@dataclass
class CorrespondenceSet:
    """Matched pixels: ``p_lq`` (N,2), HQ pixel ``p_hq`` (N,2) with its HQ depth, and frame-pair index."""

    p_lq: np.ndarray
    p_hq: np.ndarray
    depth_hq: np.ndarray
    pair: np.ndarray

    def __post_init__(self):
        self.p_lq = np.asarray(self.p_lq, dtype=np.float64).reshape(-1, 2)
        self.p_hq = np.asarray(self.p_hq, dtype=np.float64).reshape(-1, 2)
        self.depth_hq = np.asarray(self.depth_hq, dtype=np.float64).reshape(-1)
        self.pair = np.asarray(self.pair, dtype=np.int64).reshape(-1)
        n = len(self.p_lq)
        if not (len(self.p_hq) == len(self.depth_hq) == len(self.pair) == n):
            raise InvalidInputError("correspondence arrays have inconsistent lengths")
        if np.any(~(self.depth_hq > 0)):
            raise InvalidInputError("every HQ correspondence needs a positive depth")

    def __len__(self):
        return len(self.p_lq)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.p_lq for s in sets]), np.concatenate([s.p_hq for s in sets]),
                   np.concatenate([s.depth_hq for s in sets]), np.concatenate([s.pair for s in sets]))

    def subset(self, idx):
        return CorrespondenceSet(self.p_lq[idx], self.p_hq[idx], self.depth_hq[idx], self.pair[idx])

    def check_bounds(self, k_lq, k_hq):
        if not (np.all(k_lq.contains(*self.p_lq.T)) and np.all(k_hq.contains(*self.p_hq.T))):
            raise InvalidInputError("correspondence pixel outside image bounds")


@dataclass
class LossResult:
    loss: float
    gradient: np.ndarray
    n_used: int
    n_dropped: int
    distances: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False, default=None)
    jacobian: np.ndarray = field(repr=False, default=None)


def transform_to_params(t):
    return np.concatenate([t.rotation, t.translation])


def params_to_transform(theta):
    return RigidTransform(theta[:4], theta[4:])


def _huber(e, delta):
    """Per-term loss and its derivative for Huber-weighted distances.

    Each distance is scaled by the Huber weight min(1, delta / e), so inliers
    keep their plain distance and far matches lose influence as 1 / e. The
    returned loss is the potential of that weighted gradient.
    """
    if delta is None:
        return e, np.ones_like(e)
    far = e > delta
    ratio = np.where(far, e, delta) / delta
    return np.where(far, delta * (1 + np.log(ratio)), e), np.where(far, 1.0 / ratio, 1.0)


def _evaluate(theta, P, p_lq, k_lq, huber=None, with_jacobian=False):
    q = theta[:4]
    nq = np.linalg.norm(q)
    u = q / nq
    X = P @ quat_to_matrix(u).T + theta[4:]
    front = X[:, 2] > MIN_Z
    Pf, X, target = P[front], X[front], p_lq[front]
    Z = X[:, 2]
    proj = np.stack([k_lq.fx * X[:, 0] / Z + k_lq.cx, k_lq.fy * X[:, 1] / Z + k_lq.cy], -1)
    r = proj - target
    e = np.hypot(r[:, 0], r[:, 1])
    rho, drho = _huber(e, huber)
    loss = float(np.sum(rho))

    n = len(Z)
    # dX/du for X = R(u) P: 2(wP + v x P) for w, 2((v.P) e_k + v P_k - v_k P + w e_k x P) for v_k
    w, v = u[0], u[1:]
    vP = Pf @ v
    dX_du = np.empty((n, 3, 4))
    dX_du[:, :, 0] = 2 * (w * Pf + np.cross(v, Pf))
    x, y, z = Pf.T
    cols = (np.stack([vP, -w * z, w * y], -1), np.stack([w * z, vP, -w * x], -1), np.stack([-w * y, w * x, vP], -1))
    for k in range(3):
        dX_du[:, :, k + 1] = 2 * (cols[k] + Pf[:, k, None] * v - v[k] * Pf)
    du_dq = (np.eye(4) - np.outer(u, u)) / nq
    dq = (dX_du.reshape(-1, 4) @ du_dq).reshape(n, 3, 4)
    # chain through the projection; dX/dt is the identity
    ax, ay = X[:, 0] / Z, X[:, 1] / Z
    J = np.zeros((n, 2, 7))
    J[:, 0, :4] = dq[:, 0] - ax[:, None] * dq[:, 2]
    J[:, 1, :4] = dq[:, 1] - ay[:, None] * dq[:, 2]
    J[:, 0, 4], J[:, 0, 6] = 1.0, -ax
    J[:, 1, 5], J[:, 1, 6] = 1.0, -ay
    J[:, 0] *= (k_lq.fx / Z)[:, None]
    J[:, 1] *= (k_lq.fy / Z)[:, None]

    # d rho / d r = rho'(e) r / e, zero at e == 0
    scale = np.divide(drho, e, out=np.zeros_like(e), where=e > 0)
    grad = ((scale[:, None] * r).reshape(1, -1) @ J.reshape(-1, 7))[0]
    return LossResult(loss, grad, n, int(len(P) - n), e,
                      r if with_jacobian else None, J if with_jacobian else None)


def _hq_points(corr, k_hq):
    return unproject_points(corr.p_hq[:, 0], corr.p_hq[:, 1], corr.depth_hq, k_hq)


def correspondence_loss(corr, k_hq, k_lq, t, huber_px=None):
    """Summed pixel distance (optionally Huber-smoothed) and its gradient over the 7 parameters.

    Terms whose transformed point has z <= 1e-4 m are dropped and counted in
    ``n_dropped``.
    """
    if len(corr) == 0:
        raise InvalidInputError("empty correspondence set")
    theta = transform_to_params(t) if isinstance(t, RigidTransform) else np.asarray(t, dtype=np.float64)
    return _evaluate(theta, _hq_points(corr, k_hq), corr.p_lq, k_lq, huber_px)


def _loss_only(theta, P, p_lq, k_lq, huber):
    R = quat_to_matrix(theta[:4])
    X = P @ R.T + theta[4:]
    front = X[:, 2] > MIN_Z
    X, target = X[front], p_lq[front]
    Z = X[:, 2]
    e = np.hypot(k_lq.fx * X[:, 0] / Z + k_lq.cx - target[:, 0], k_lq.fy * X[:, 1] / Z + k_lq.cy - target[:, 1])
    return float(np.sum(_huber(e, huber)[0])), len(Z)


def minimize_loss(corr, k_hq, k_lq, t0, huber_px=None, max_steps=200, tol=1e-6):
    """Descent on the correspondence loss with Armijo backtracking.

    The search direction is the gradient preconditioned by the reweighted
    Gauss-Newton matrix (weights rho'(e)/e); if that is not a descent
    direction the plain negative gradient is used instead. Steps that would
    drop more terms past the z cutoff are rejected. Returns the final
    transform, the loss trace (first entry is the starting loss), and whether
    the parameter update fell below ``tol``.
    """
    P = _hq_points(corr, k_hq)
    p_lq = corr.p_lq
    theta = transform_to_params(t0)
    res = _evaluate(theta, P, p_lq, k_lq, huber_px, with_jacobian=True)
    trace = [res.loss]
    converged = False
    for _ in range(max_steps):
        g = res.gradient
        if res.n_used == 0 or not np.any(g):
            converged = True
            break
        _, drho = _huber(res.distances, huber_px)
        wts = drho / np.maximum(res.distances, 1e-9)
        Jf = res.jacobian.reshape(-1, 7)
        H = Jf.T @ (np.repeat(wts, 2)[:, None] * Jf)
        lam = 1e-9 * np.trace(H) / 7 + 1e-12
        try:
            d = -np.linalg.solve(H + lam * np.eye(7), g)
        except np.linalg.LinAlgError:
            d = -g
        directions = [(d, 1.0)] if g @ d < 0 else []
        directions.append((-g, GRADIENT_STEP))
        accepted = None
        for d, alpha in directions:
            slope = g @ d
            for _ in range(MAX_HALVINGS):
                cand = theta + alpha * d
                cand[:4] /= np.linalg.norm(cand[:4])
                loss, used = _loss_only(cand, P, p_lq, k_lq, huber_px)
                # pushing terms behind the camera lowers the sum without fitting anything
                if used >= res.n_used and loss <= res.loss + ARMIJO_C * alpha * slope:
                    accepted = cand
                    break
                alpha *= SHRINK
            if accepted is not None:
                break
        if accepted is None:
            converged = True
            break
        step = np.max(np.abs(accepted - theta))
        theta = accepted
        res = _evaluate(theta, P, p_lq, k_lq, huber_px, with_jacobian=True)
        trace.append(res.loss)
        if step < tol:
            converged = True
            break
    return params_to_transform(theta), trace, converged


@dataclass
class CalibrationReport:
    transform: RigidTransform
    losses: list
    pass_losses: list
    correspondence_counts: list
    converged: bool
    residual: float
    n_correspondences: int
    n_dropped: int = 0


def gather_correspondences(lq, hq, pairs, provider, t):
    """Runs the provider on every (lq index, hq index) pair under transform ``t``."""
    sets = []
    for n, (i, j) in enumerate(pairs):
        warp = None
        if getattr(provider, "needs_warp", True):
            depth, color, index = reproject_depth(hq[j].depth, hq[j].color, hq.intrinsics,
                                                  lq.intrinsics, t, return_index=True)
            warp = (depth, color, index)
        p_lq, p_hq, d_hq = provider(lq, hq, i, j, warp)
        c = CorrespondenceSet(p_lq, p_hq, d_hq, np.full(len(p_lq), n))
        sets.append(c)
    corr = CorrespondenceSet.concat(sets)
    corr.check_bounds(lq.intrinsics, hq.intrinsics)
    return corr


def calibrate(lq, hq, mapping, provider, passes=10, huber_px=None, min_corr=50,
              max_steps=200, tol=1e-6, init=None, max_gap_ms=None):
    """Estimate the HQ->LQ transform from matched frame pairs.

    Starting from ``init`` (identity by default), each pass re-warps HQ color
    under the current estimate, asks the provider for fresh correspondences
    and minimizes the loss. Providers with ``needs_warp = False`` return the
    same correspondences every pass, so a single pass is run for them.
    """
    pairs = [(i, j) for i, j, gap in mapping.pairs if max_gap_ms is None or gap <= max_gap_ms]
    if not pairs:
        raise AlignmentInfeasibleError("no frame pairs to calibrate on")
    t = RigidTransform.identity() if init is None else init
    losses, pass_losses, counts = [], [], []
    converged = False
    first_mean = None
    corr = None
    for n in range(passes):
        corr = gather_correspondences(lq, hq, pairs, provider, t)
        counts.append(len(corr))
        if len(corr) < min_corr:
            raise AlignmentInfeasibleError(f"only {len(corr)} correspondences (need {min_corr})")
        t_new, trace, _ = minimize_loss(corr, hq.intrinsics, lq.intrinsics, t, huber_px, max_steps, tol)
        mean0 = trace[0] / len(corr)
        if first_mean is None:
            first_mean = mean0
        elif mean0 > 10 * max(first_mean, DIVERGENCE_FLOOR_PX):
            raise DivergenceError(f"pass {n}: mean loss {mean0:.3g} px exceeds 10x initial {first_mean:.3g} px")
        losses.extend(trace)
        pass_losses.append(trace[-1])
        update = max(np.max(np.abs(t_new.rotation - t.rotation)), np.max(np.abs(t_new.translation - t.translation)))
        t = t_new
        log.debug("pass %d: %d correspondences, loss %.4g -> %.4g", n, len(corr), trace[0], trace[-1])
        if not getattr(provider, "needs_warp", True) or update < tol:
            converged = True
            break
    final = correspondence_loss(corr, hq.intrinsics, lq.intrinsics, t)
    return CalibrationReport(t, losses, pass_losses, counts, converged,
                             final.loss / max(final.n_used, 1), len(corr), final.n_dropped)


# -- classic keypoint provider --------------------------------------------------

def luminance(color):
    c = np.asarray(color, dtype=np.float64)
    return 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]


_REFLECT = cv2.BORDER_REFLECT  # edge sample repeated, as scipy.ndimage's "reflect"


def harris_corners(gray, max_corners=400, sigma=1.5, k=0.04, nms_size=7, rel_threshold=0.01, border=6,
                   allowed=None):
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    ix = cv2.Sobel(gray, cv2.CV_64F, 1, 0, ksize=3, borderType=_REFLECT)
    iy = cv2.Sobel(gray, cv2.CV_64F, 0, 1, ksize=3, borderType=_REFLECT)
    ksize = 2 * int(4 * sigma + 0.5) + 1
    sxx, syy, sxy = (cv2.GaussianBlur(a, (ksize, ksize), sigma, borderType=_REFLECT) for a in (ix * ix, iy * iy, ix * iy))
    resp = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    local_max = cv2.dilate(resp, np.ones((nms_size, nms_size), np.uint8), borderType=_REFLECT)
    peak = (resp == local_max) & (resp > rel_threshold * max(resp.max(), 1e-12))
    peak[:border] = peak[-border:] = False
    peak[:, :border] = peak[:, -border:] = False
    if allowed is not None:
        peak &= allowed
    ys, xs = np.nonzero(peak)
    order = np.argsort(-resp[ys, xs], kind="stable")[:max_corners]
    return np.stack([xs[order], ys[order]], -1)


def patch_descriptors(gray, pts, half=5):
    offs = np.arange(-half, half + 1)
    ys = pts[:, 1, None, None] + offs[None, :, None]
    xs = pts[:, 0, None, None] + offs[None, None, :]
    patches = gray[ys, xs].reshape(len(pts), -1)
    patches = patches - patches.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(patches, axis=1, keepdims=True)
    return patches / np.maximum(norm, 1e-9), norm.ravel() > 1e-6


class ClassicProvider:
    """Harris corners + normalized cross-correlation patches + mutual nearest matching.

    Matches LQ color against HQ color warped into the LQ view; each match's
    warped pixel is traced back to the HQ source pixel it was splatted from.
    """

    needs_warp = True

    def __init__(self, max_corners=400, patch_half=5, search_radius=64.0, ratio=0.8, min_ncc=0.7):
        self.max_corners = max_corners
        self.patch_half = patch_half
        self.search_radius = search_radius
        self.ratio = ratio
        self.min_ncc = min_ncc
        self._lq_cache = {}

    def _lq_features(self, color):
        # the LQ side never changes between passes or shift candidates
        hit = self._lq_cache.get(id(color))
        if hit is not None and hit[0] is color:
            return hit[1]
        g = luminance(color)
        c = harris_corners(g, self.max_corners, border=self.patch_half + 1)
        feats = (c,) + patch_descriptors(g, c, self.patch_half) if len(c) else (c, None, None)
        self._lq_cache[id(color)] = (color, feats)
        return feats

    def __call__(self, lq, hq, i, j, warp):
        _, wcolor, windex = warp
        hit = windex >= 0
        if not hit.any():
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
        # splatted HQ images are sparse; fill from the nearest hit for matching
        gap, (ny, nx) = ndimage.distance_transform_edt(~hit, return_indices=True)
        filled = wcolor[ny, nx]
        src = windex[ny, nx]

        c_lq, d_lq, ok_lq = self._lq_features(lq[i].color)
        g_hq = luminance(filled)
        c_hq = harris_corners(g_hq, self.max_corners, border=self.patch_half + 1, allowed=gap <= 1.5)
        if len(c_lq) == 0 or len(c_hq) == 0:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
        d_hq, ok_hq = patch_descriptors(g_hq, c_hq, self.patch_half)
        ncc = d_lq @ d_hq.T
        dist2 = ((c_lq[:, None, :] - c_hq[None, :, :]) ** 2).sum(-1)
        ncc[(dist2 > self.search_radius**2) | ~ok_lq[:, None] | ~ok_hq[None, :]] = -np.inf
        desc = np.sqrt(np.maximum(2 - 2 * ncc, 0))  # inf where masked

        best_hq = np.argmin(desc, axis=1)
        best_lq = np.argmin(desc, axis=0)
        rows = np.arange(len(c_lq))
        mutual = best_lq[best_hq] == rows
        if desc.shape[1] > 1:
            two = np.partition(desc, 1, axis=1)
            first, second = two[:, 0], two[:, 1]
        else:
            first, second = desc[:, 0], np.full(len(c_lq), np.inf)
        keep = (mutual & np.isfinite(first) & (first < self.ratio * second)
                & (ncc[rows, best_hq] >= self.min_ncc))
        a = rows[keep]
        bq = c_hq[best_hq[keep]]
        lin = src[bq[:, 1], bq[:, 0]]
        hv, hu = np.divmod(lin, hq.intrinsics.width)
        depth = hq[j].depth[hv, hu]
        good = depth > 0
        return (c_lq[a][good].astype(np.float64), np.stack([hu, hv], -1)[good].astype(np.float64),
                depth[good])
