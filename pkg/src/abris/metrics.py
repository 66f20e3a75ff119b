"""Error norms and divergences for comparing posterior approximations."""

import numpy as np
from scipy.integrate import trapezoid

from abris.errors import InputError
from abris.forward_models.kkl import field_from_theta
from abris.variational import VariationalParams

MMCS_GRID_POINTS = 512
_MAX_REFINED = 2000


def relative_l2(estimate, truth):
    """``|estimate - truth|_2 / |truth|_2``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise InputError("estimate and truth must have the same shape")
    norm = np.linalg.norm(truth)
    if norm == 0.0:
        raise InputError("relative error w.r.t. a zero vector")
    return float(np.linalg.norm(estimate - truth) / norm)


def weighted_a_norm_error(estimate, truth, A):
    """Relative error in the norm with positive diagonal weights ``A``.

    ``A`` is the diagonal as a vector; the usual choice is ``truth**2``.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    A = np.asarray(A, dtype=float)
    if estimate.shape != truth.shape or A.shape != truth.shape:
        raise InputError("estimate, truth and weights must have the same shape")
    if np.any(~(A > 0.0)):
        raise InputError("A-norm weights must be positive")
    denom = np.sum(A * truth * truth)
    if denom == 0.0:
        raise InputError("relative error w.r.t. a zero vector")
    return float(np.sqrt(np.sum(A * (estimate - truth) ** 2) / denom))


def _silverman(x):
    n = x.size
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def _kde(x, grid, bw):
    # chunked to bound memory at large sample counts
    out = np.zeros_like(grid)
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start : start + 4096]) / bw
        out += np.exp(-0.5 * z * z).sum(axis=1)
    return out / (x.size * bw * np.sqrt(2.0 * np.pi))


def cauchy_schwarz_1d(p, q, n_grid=MMCS_GRID_POINTS):
    """Cauchy-Schwarz divergence of two 1-D sample sets via Gaussian KDE."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    floor = 1e-6 * (hi - lo) if hi > lo else 1e-6
    bw_p = max(_silverman(p), floor)
    bw_q = max(_silverman(q), floor)
    pad = 3.0 * max(bw_p, bw_q)
    grid = np.linspace(lo - pad, hi + pad, n_grid)
    narrow = min(bw_p, bw_q)
    if narrow < 4.0 * (grid[1] - grid[0]):
        # a kernel narrower than the grid spacing would be missed; add local points
        centers = np.unique(np.concatenate([p, q]))[:_MAX_REFINED]
        local = np.linspace(-6.0 * narrow, 6.0 * narrow, 49)
        grid = np.unique(np.concatenate([grid, (centers[:, None] + local).ravel()]))
    fp = _kde(p, grid, bw_p)
    fq = _kde(q, grid, bw_q)
    cross = trapezoid(fp * fq, grid)
    pp = trapezoid(fp * fp, grid)
    qq = trapezoid(fq * fq, grid)
    return float(max(-np.log(cross / np.sqrt(pp * qq)), 0.0))


def mmcs(samples_p, samples_q, n_grid=MMCS_GRID_POINTS):
    """Maximum over dimensions of the marginal Cauchy-Schwarz divergence."""
    p = np.asarray(samples_p, dtype=float)
    q = np.asarray(samples_q, dtype=float)
    p = p[:, None] if p.ndim == 1 else p
    q = q[:, None] if q.ndim == 1 else q
    if p.shape[1] != q.shape[1]:
        raise InputError("sample sets must share their dimension")
    if p.shape[0] < 100 or q.shape[0] < 100:
        raise InputError("MMCS needs at least 100 samples per set")
    return max(cauchy_schwarz_1d(p[:, j], q[:, j], n_grid) for j in range(p.shape[1]))


def posterior_mean_field(posterior, expansion, n_draws=10_000, rng=None, return_std=False):
    """MC mean (and optionally std) of the coefficient field under a posterior.

    Args:
        posterior: :class:`VariationalParams` or an (n, d) array of posterior samples.
        expansion (FieldExpansion): Field parameterization.
        n_draws (int): Draws taken from a variational posterior.
        rng (np.random.Generator): Needed for a variational posterior.
        return_std (bool): Also return the elementwise standard deviation.
    """
    if isinstance(posterior, VariationalParams):
        if rng is None:
            raise InputError("sampling a variational posterior needs an rng")
        theta = posterior.family.draw(posterior.lam, n_draws, rng)
    else:
        theta = np.atleast_2d(np.asarray(posterior, dtype=float))
    fields = field_from_theta(expansion, theta)
    mean = fields.mean(axis=0)
    if return_std:
        return mean, fields.std(axis=0)
    return mean
