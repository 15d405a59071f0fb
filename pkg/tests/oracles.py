"""Independent numerical oracles used by the tests.

Everything here avoids the library's closed forms: integrals come from
scipy adaptive quadrature, minima from golden-section search or grid scans,
special functions from scipy/mpmath, and reductions from naive Python loops.
"""

import numpy as np
from scipy import integrate
from scipy import special as sps


def mahalanobis_quadratic(r, mu, sigma, alpha):
    """Coefficients (a, b, c) of Delta^2(z r, mu, alpha sigma) = a z^2 + b z + c,
    sampled from three dense-solve evaluations (no factored shortcut)."""
    spr = alpha * np.asarray(sigma, dtype=float)

    def d2(z):
        d = z * np.asarray(r, float) - np.asarray(mu, float)
        return float(d @ np.linalg.solve(spr, d))

    c = d2(0.0)
    plus, minus = d2(1.0), d2(-1.0)
    b = (plus - minus) / 2.0
    a = (plus + minus) / 2.0 - c
    return a, b, c


def quad_ray_density(r, mu, sigma, alpha, zmax=None):
    """Adaptive quadrature of integral_0^inf exp(-Delta^2(z r, mu, alpha sigma)) dz."""
    spr = alpha * np.asarray(sigma, dtype=float)
    r = np.asarray(r, float)
    mu = np.asarray(mu, float)

    def integrand(z):
        d = z * r - mu
        return np.exp(-(d @ np.linalg.solve(spr, d)))

    a, b, _ = mahalanobis_quadratic(r, mu, sigma, alpha)
    z_peak = -b / (2.0 * a)
    width = 1.0 / np.sqrt(a)
    if zmax is None:
        zmax = max(z_peak, 0.0) + 14.0 * width
    points = [z_peak] if 0.0 < z_peak < zmax else None
    val, _ = integrate.quad(
        integrand, 0.0, zmax, points=points, epsabs=1e-300, epsrel=1e-10, limit=400
    )
    return val


def golden_min(f, lo, hi, iters=200):
    """Golden-section minimizer of a unimodal scalar function."""
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def argmin_depth(r, mu, sigma, alpha=1.0, lo=-100.0, hi=100.0):
    """Argmin over z of Delta^2(z r, mu, alpha sigma): golden-section search
    followed by one parabolic-vertex step (the objective is quadratic in z,
    so the refinement is exact up to rounding)."""
    spr = alpha * np.asarray(sigma, dtype=float)
    r = np.asarray(r, float)
    mu = np.asarray(mu, float)

    def d2(z):
        d = z * r - mu
        return float(d @ np.linalg.solve(spr, d))

    z0 = golden_min(d2, lo, hi, iters=120)
    slope = (d2(z0 + 1.0) - d2(z0 - 1.0)) / 2.0
    curv = d2(z0 + 1.0) + d2(z0 - 1.0) - 2.0 * d2(z0)
    return z0 - slope / curv


def reprojection_objective(p2d_points, rel_joints, z_root):
    """Mean squared 2D error of the re-projected rig at a candidate root depth."""
    x1, y1 = p2d_points[0]
    z = np.asarray(z_root, dtype=float)
    zj = z[..., None] + rel_joints[:, 2]
    px = (z[..., None] * x1 + rel_joints[:, 0]) / zj
    py = (z[..., None] * y1 + rel_joints[:, 1]) / zj
    dx = px - p2d_points[1:, 0]
    dy = py - p2d_points[1:, 1]
    return np.mean(dx * dx + dy * dy, axis=-1)


def brute_force_root_depth(p2d_points, rel_joints, lo=0.1, hi=50.0, step=1e-4):
    """Grid scan of the reprojection objective plus golden refinement."""
    best_z = None
    best_val = np.inf
    chunk = 200_000
    n = int(round((hi - lo) / step)) + 1
    for start in range(0, n, chunk):
        zs = lo + step * np.arange(start, min(start + chunk, n))
        vals = reprojection_objective(p2d_points, rel_joints, zs)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val = float(vals[k])
            best_z = float(zs[k])
    f = lambda z: float(reprojection_objective(p2d_points, rel_joints, np.asarray(z)))
    return golden_min(f, best_z - 2 * step, best_z + 2 * step, iters=120)


def oracle_probe_pixel(rays, prims_mus, prims_sigmas, appearances, background,
                       alpha, z_bg, log_f_bg, probes):
    """Compose per-pixel weights at probe pixels from quadrature densities and
    golden-section depths; the background density comes from the supplied
    high-precision log value."""
    import math

    results = {}
    m = len(prims_mus)
    lam_bg = 1.0 / (1.0 + z_bg**4)
    for (i, j) in probes:
        r = rays[i, j]
        logs = []
        for k in range(m):
            f = quad_ray_density(r, prims_mus[k], prims_sigmas[k], alpha)
            zs = argmin_depth(r, prims_mus[k], prims_sigmas[k], alpha)
            lam = 1.0 / (1.0 + zs**4)
            logs.append(math.log(lam) + (math.log(f) if f > 0 else -math.inf))
        logs.append(math.log(lam_bg) + log_f_bg)
        mx = max(logs)
        w = np.exp(np.array(logs) - mx)
        w /= w.sum()
        pix = w[:m] @ np.asarray(appearances) + w[m] * np.asarray(background)
        results[(i, j)] = (w, pix)
    return results


def high_precision_log_background(z_bg, alpha):
    """log of sqrt(alpha pi)/2 * erfc(z_bg / sqrt(alpha)) at 50 digits."""
    import mpmath as mp

    with mp.workdps(50):
        val = mp.log(mp.sqrt(alpha * mp.pi) / 2 * mp.erfc(z_bg / mp.sqrt(alpha)))
        return float(val)


def scipy_erfc(x):
    return sps.erfc(x)


def naive_composite(F, lam):
    F = np.asarray(F, float)
    lam = np.asarray(lam, float)
    out = np.zeros_like(F)
    flat_f = F.reshape(-1, F.shape[-1])
    flat_l = lam.reshape(-1, F.shape[-1])
    flat_o = out.reshape(-1, F.shape[-1])
    for row in range(flat_f.shape[0]):
        total = 0.0
        for k in range(flat_f.shape[1]):
            total += flat_l[row, k] * flat_f[row, k]
        for k in range(flat_f.shape[1]):
            flat_o[row, k] = flat_l[row, k] * flat_f[row, k] / total
    return out
