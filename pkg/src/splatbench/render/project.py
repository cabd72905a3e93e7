"""Per-splat projection: world Gaussians -> screen-space 2D Gaussians.

Forward produces, for every splat visible from a camera, the projected mean,
the 2D conic (inverse covariance), view depth, and the view-evaluated color.
The matching backward routine chains per-splat screen-space gradients coming
out of the blending kernel back to gradients on the 3D parameters
(center, scale, rotation quaternion, opacity, SH color coefficients).

2D covariance uses the EWA affine approximation of the perspective Jacobian,
with a fixed anti-aliasing floor added to the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.model import SceneModel
from .camera import Camera

ZNEAR = 0.05
ALPHA_MIN = 1e-8        # per-pixel skip threshold; one pixel flipping across
                        # it moves the loss by ~1e-8, invisible to finite
                        # differences
ALPHA_BIN = 1e-12       # tile binning radius contour; a 16px tile column
                        # flipping in/out of a splat's bbox then carries only
                        # ~1e-12-level contributions (all below ALPHA_MIN)
ALPHA_CULL = 1e-14      # frustum culling contour, wider still, so a whole
                        # splat entering/leaving the image changes nothing
                        # the kernel would keep
ALPHA_CLAMP = 0.99      # per-splat alpha ceiling
T_MIN = 1e-4            # compositing stops once transmittance drops below
AA_VARIANCE = 0.3       # px^2 added to the 2D covariance diagonal

# Real spherical harmonics; the DC basis value is folded to 1 so that the
# first coefficient is plain RGB.
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """(N, 3) unit directions -> (N, (degree+1)^2) basis values."""
    n = dirs.shape[0]
    out = np.empty((n, (degree + 1) ** 2))
    out[:, 0] = 1.0
    if degree == 0:
        return out
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -_C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = -_C1 * x
    if degree == 1:
        return out
    xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
    out[:, 4] = _C2[0] * xy
    out[:, 5] = _C2[1] * yz
    out[:, 6] = _C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = _C2[3] * xz
    out[:, 8] = _C2[4] * (xx - yy)
    if degree == 2:
        return out
    out[:, 9] = _C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = _C3[1] * xy * z
    out[:, 11] = _C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = _C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = _C3[5] * z * (xx - yy)
    out[:, 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d direction, shape (N, (degree+1)^2, 3)."""
    n = dirs.shape[0]
    grad = np.zeros((n, (degree + 1) ** 2, 3))
    if degree == 0:
        return grad
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    grad[:, 1, 1] = -_C1
    grad[:, 2, 2] = _C1
    grad[:, 3, 0] = -_C1
    if degree == 1:
        return grad
    grad[:, 4, 0] = _C2[0] * y
    grad[:, 4, 1] = _C2[0] * x
    grad[:, 5, 1] = _C2[1] * z
    grad[:, 5, 2] = _C2[1] * y
    grad[:, 6, 0] = -2.0 * _C2[2] * x
    grad[:, 6, 1] = -2.0 * _C2[2] * y
    grad[:, 6, 2] = 4.0 * _C2[2] * z
    grad[:, 7, 0] = _C2[3] * z
    grad[:, 7, 2] = _C2[3] * x
    grad[:, 8, 0] = 2.0 * _C2[4] * x
    grad[:, 8, 1] = -2.0 * _C2[4] * y
    if degree == 2:
        return grad
    grad[:, 9, 0] = _C3[0] * 6.0 * x * y
    grad[:, 9, 1] = _C3[0] * (3.0 * x * x - 3.0 * y * y)
    grad[:, 10, 0] = _C3[1] * y * z
    grad[:, 10, 1] = _C3[1] * x * z
    grad[:, 10, 2] = _C3[1] * x * y
    grad[:, 11, 0] = -2.0 * _C3[2] * x * y
    grad[:, 11, 1] = _C3[2] * (4.0 * z * z - x * x - 3.0 * y * y)
    grad[:, 11, 2] = _C3[2] * 8.0 * y * z
    grad[:, 12, 0] = -6.0 * _C3[3] * x * z
    grad[:, 12, 1] = -6.0 * _C3[3] * y * z
    grad[:, 12, 2] = _C3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y)
    grad[:, 13, 0] = _C3[4] * (4.0 * z * z - 3.0 * x * x - y * y)
    grad[:, 13, 1] = -2.0 * _C3[4] * x * y
    grad[:, 13, 2] = _C3[4] * 8.0 * x * z
    grad[:, 14, 0] = 2.0 * _C3[5] * x * z
    grad[:, 14, 1] = -2.0 * _C3[5] * y * z
    grad[:, 14, 2] = _C3[5] * (x * x - y * y)
    grad[:, 15, 0] = _C3[6] * (3.0 * x * x - 3.0 * y * y)
    grad[:, 15, 1] = -6.0 * _C3[6] * x * y
    return grad


@dataclass
class Projection:
    """Screen-space quantities for the splats visible from one camera."""

    idx: np.ndarray        # (M,) indices into the scene arrays
    mu2d: np.ndarray       # (M, 2) projected centers, pixels
    conic: np.ndarray      # (M, 3) inverse 2D covariance (a, b, c)
    z: np.ndarray          # (M,) view depth of centers
    color: np.ndarray      # (M, 3) view-evaluated color, clipped to [0, 1]
    opacity: np.ndarray    # (M,)
    radius: np.ndarray     # (M,) influence radius in pixels
    # cached intermediates for the backward pass
    p_cam: np.ndarray      # (M, 3)
    jac: np.ndarray        # (M, 2, 3)
    cov_cam: np.ndarray    # (M, 3, 3)
    rotmat: np.ndarray     # (M, 3, 3) splat rotation matrices
    quat_unit: np.ndarray  # (M, 4)
    quat_norm: np.ndarray  # (M,) original quaternion norms
    scale: np.ndarray      # (M, 3)
    basis: np.ndarray      # (M, n_sh)
    dirs: np.ndarray       # (M, 3) unit view directions, world frame
    dir_len: np.ndarray    # (M,)
    color_raw: np.ndarray  # (M, 3) pre-clip evaluated color


def _quat_to_rotmat_unit(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def preprocess(scene: SceneModel, camera: Camera) -> Projection:
    """Project all splats; keep those in front of the camera touching the image."""
    n = len(scene)
    quat_norm = np.linalg.norm(scene.rotations, axis=1)
    quat_unit = scene.rotations / quat_norm[:, None]
    rotmat = _quat_to_rotmat_unit(quat_unit)
    m_mat = rotmat * scene.scales[:, None, :]          # R diag(s)
    cov3 = np.einsum("nij,nkj->nik", m_mat, m_mat)

    p_cam = camera.world_to_cam(scene.centers)
    z = p_cam[:, 2]
    in_front = z > ZNEAR
    # guard divisions for culled splats
    z_safe = np.where(in_front, z, 1.0)

    w_rot = camera.rotation.T                          # world -> cam
    cov_cam = np.einsum("ij,njk,lk->nil", w_rot, cov3, w_rot)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z_safe
    jac[:, 0, 2] = -camera.fx * p_cam[:, 0] / z_safe**2
    jac[:, 1, 1] = camera.fy / z_safe
    jac[:, 1, 2] = -camera.fy * p_cam[:, 1] / z_safe**2

    cov2 = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2[:, 0, 0] += AA_VARIANCE
    cov2[:, 1, 1] += AA_VARIANCE
    a2, b2, c2 = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a2 * c2 - b2 * b2
    det_safe = np.where(det > 1e-12, det, 1.0)
    conic = np.stack([c2 / det_safe, -b2 / det_safe, a2 / det_safe], axis=1)

    mu2d = np.stack([camera.fx * p_cam[:, 0] / z_safe + camera.cx,
                     camera.fy * p_cam[:, 1] / z_safe + camera.cy], axis=1)

    mid = 0.5 * (a2 + c2)
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0) + 1e-12)
    radius = np.sqrt(np.maximum(2.0 * np.log(scene.opacities / ALPHA_BIN), 0.0)
                     * lam_max)
    radius_cull = np.sqrt(np.maximum(2.0 * np.log(scene.opacities / ALPHA_CULL), 0.0)
                          * lam_max)

    dvec = scene.centers - camera.position
    dir_len = np.linalg.norm(dvec, axis=1)
    dirs = dvec / np.maximum(dir_len, 1e-12)[:, None]
    basis = sh_basis(dirs, scene.sh_degree)
    color_raw = np.einsum("nk,nkc->nc", basis, scene.colors)
    color = np.clip(color_raw, 0.0, 1.0)

    keep = (in_front & (det > 1e-12) & (radius > 0.0)
            & (mu2d[:, 0] + radius_cull >= 0)
            & (mu2d[:, 0] - radius_cull <= camera.width - 1)
            & (mu2d[:, 1] + radius_cull >= 0)
            & (mu2d[:, 1] - radius_cull <= camera.height - 1))
    idx = np.nonzero(keep)[0]

    return Projection(
        idx=idx, mu2d=mu2d[idx], conic=conic[idx], z=z[idx], color=color[idx],
        opacity=scene.opacities[idx].copy(), radius=radius[idx],
        p_cam=p_cam[idx], jac=jac[idx], cov_cam=cov_cam[idx], rotmat=rotmat[idx],
        quat_unit=quat_unit[idx], quat_norm=quat_norm[idx], scale=scene.scales[idx].copy(),
        basis=basis[idx], dirs=dirs[idx], dir_len=dir_len[idx], color_raw=color_raw[idx])


def backward(proj: Projection, camera: Camera, sh_degree: int, n_total: int,
             g_mu2d: np.ndarray, g_conic: np.ndarray, g_color: np.ndarray,
             g_opacity: np.ndarray, g_z: np.ndarray, n_sh: int,
             coeffs: np.ndarray | None = None) -> dict:
    """Chain screen-space gradients back to 3D splat parameters.

    Inputs are per-visible-splat (aligned with proj arrays); outputs are
    full-size arrays with zeros for splats that did not contribute.
    `coeffs` (M, n_sh, 3) is required when sh_degree > 0 for the
    view-direction chain.
    """
    m = proj.idx.size
    out = {
        "centers": np.zeros((n_total, 3)),
        "scales": np.zeros((n_total, 3)),
        "rotations": np.zeros((n_total, 4)),
        "opacities": np.zeros(n_total),
        "colors": np.zeros((n_total, n_sh, 3)),
    }
    if m == 0:
        return out

    # conic -> 2D covariance: A = inv(S2); dL/dS2 = -A dLdA A
    dlda_mat = np.empty((m, 2, 2))
    dlda_mat[:, 0, 0] = g_conic[:, 0]
    dlda_mat[:, 0, 1] = dlda_mat[:, 1, 0] = 0.5 * g_conic[:, 1]
    dlda_mat[:, 1, 1] = g_conic[:, 2]
    a_mat = np.empty((m, 2, 2))
    a_mat[:, 0, 0] = proj.conic[:, 0]
    a_mat[:, 0, 1] = a_mat[:, 1, 0] = proj.conic[:, 1]
    a_mat[:, 1, 1] = proj.conic[:, 2]
    b2 = -np.einsum("nij,njk,nkl->nil", a_mat, dlda_mat, a_mat)  # dL/dSigma2

    # Sigma2 = J Sigma_cam J^T + aa*I
    dldj = 2.0 * np.einsum("nij,njk,nkl->nil", b2, proj.jac, proj.cov_cam)
    dld_cov_cam = np.einsum("nji,njk,nkl->nil", proj.jac, b2, proj.jac)

    # Sigma_cam = W Sigma W^T with W = R_cam^T (constant)
    w_rot = camera.rotation.T
    dld_cov3 = np.einsum("ji,njk,kl->nil", w_rot, dld_cov_cam, w_rot)

    # Sigma = M M^T, M = R diag(s)
    dld_sym = dld_cov3 + np.transpose(dld_cov3, (0, 2, 1))
    m_mat = proj.rotmat * proj.scale[:, None, :]
    dldm = np.einsum("nij,njk->nik", dld_sym, m_mat)
    out["scales"][proj.idx] = np.einsum("nij,nij->nj", dldm, proj.rotmat)
    dldr = dldm * proj.scale[:, None, :]

    # rotation matrix -> unit quaternion -> raw quaternion
    w, x, y, z = (proj.quat_unit[:, 0], proj.quat_unit[:, 1],
                  proj.quat_unit[:, 2], proj.quat_unit[:, 3])
    g = dldr
    dldq_unit = np.empty((m, 4))
    dldq_unit[:, 0] = 2.0 * (
        z * (g[:, 1, 0] - g[:, 0, 1]) + y * (g[:, 0, 2] - g[:, 2, 0])
        + x * (g[:, 2, 1] - g[:, 1, 2]))
    dldq_unit[:, 1] = 2.0 * (
        -2.0 * x * (g[:, 1, 1] + g[:, 2, 2]) + y * (g[:, 0, 1] + g[:, 1, 0])
        + z * (g[:, 0, 2] + g[:, 2, 0]) + w * (g[:, 2, 1] - g[:, 1, 2]))
    dldq_unit[:, 2] = 2.0 * (
        x * (g[:, 0, 1] + g[:, 1, 0]) - 2.0 * y * (g[:, 0, 0] + g[:, 2, 2])
        + z * (g[:, 1, 2] + g[:, 2, 1]) + w * (g[:, 0, 2] - g[:, 2, 0]))
    dldq_unit[:, 3] = 2.0 * (
        x * (g[:, 0, 2] + g[:, 2, 0]) + y * (g[:, 1, 2] + g[:, 2, 1])
        - 2.0 * z * (g[:, 0, 0] + g[:, 1, 1]) + w * (g[:, 1, 0] - g[:, 0, 1]))
    # through normalization: dq_unit/dq_raw = (I - u u^T) / |q|
    proj_coeff = np.einsum("ni,ni->n", dldq_unit, proj.quat_unit)
    out["rotations"][proj.idx] = (dldq_unit - proj_coeff[:, None] * proj.quat_unit) \
        / proj.quat_norm[:, None]

    # screen mean + Jacobian entries + depth channel -> camera-frame point
    g_pcam = np.einsum("nji,nj->ni", proj.jac, g_mu2d)
    fx, fy = camera.fx, camera.fy
    px, py, pz = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    inv_z2 = 1.0 / pz**2
    g_pcam[:, 0] += dldj[:, 0, 2] * (-fx * inv_z2)
    g_pcam[:, 1] += dldj[:, 1, 2] * (-fy * inv_z2)
    g_pcam[:, 2] += (dldj[:, 0, 0] * (-fx * inv_z2)
                     + dldj[:, 1, 1] * (-fy * inv_z2)
                     + dldj[:, 0, 2] * (2.0 * fx * px / pz**3)
                     + dldj[:, 1, 2] * (2.0 * fy * py / pz**3))
    g_pcam[:, 2] += g_z
    g_center = g_pcam @ camera.rotation.T

    # color: clip indicator, SH coefficients, and (degree > 0) view direction
    inside = ((proj.color_raw > 0.0) & (proj.color_raw < 1.0)).astype(np.float64)
    g_col_raw = g_color * inside
    out["colors"][proj.idx] = proj.basis[:, :, None] * g_col_raw[:, None, :]
    if sh_degree > 0:
        if coeffs is None:
            raise ValueError("coeffs required for sh_degree > 0")
        bgrad = sh_basis_grad(proj.dirs, sh_degree)        # (M, n_sh, 3)
        dlddir = np.einsum("nkc,nkd->nd",
                           coeffs * g_col_raw[:, None, :], bgrad)
        # direction = (center - cam) / |center - cam|
        eye = np.eye(3)
        perp = (eye[None] - proj.dirs[:, :, None] * proj.dirs[:, None, :]) \
            / proj.dir_len[:, None, None]
        g_center += np.einsum("nd,ndi->ni", dlddir, perp)

    out["centers"][proj.idx] = g_center
    out["opacities"][proj.idx] = g_opacity
    return out
