"""ADMM reconstruction of thin-slice DWI sets from undersampled thick-slice
RF-encoded acquisitions.

Per outer iteration: closed-form slab-wise linear least squares for the
volume, accelerated proximal-gradient basis pursuit for the per-voxel
ridgelet coefficients, multiplier update, TV proximal denoising, and the TV
multiplier update.  Initialization is a Tikhonov-regularized direct solve.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .encoding import DwiVolumeSet


class NumericalFailure(RuntimeError):
    """Non-finite values produced by a named reconstruction stage."""

    def __init__(self, stage):
        super().__init__(f"non-finite values produced by stage '{stage}'")
        self.stage = stage


@dataclass
class SolverConfig:
    lam: float = 0.02  # l1 weight ("lambda" in config files)
    lambda_tv: float = 0.005
    rho1: float = 0.01
    rho2: float = 0.01
    n_iter: int = 8
    epsilon: float = 1e-4
    bp_inner_iters: int = 50
    tv_inner_iters: int = 20
    tikhonov_mu: float = 0.2

    def __post_init__(self):
        for name in ("lam", "lambda_tv", "rho1", "rho2", "tikhonov_mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class ReconReport:
    iterations_run: int = 0
    rel_change_history: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)  # dicts per iter
    wall_time: float = 0.0


def soft_threshold(v, t):
    """Componentwise sign(v) * max(|v| - t, 0); prox of t * l1."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _scheme_groups(scheme):
    """Group q indices by the set of RF profiles that sampled them."""
    by_j = {}
    for k, idx in enumerate(scheme.assignments, start=1):
        for j in idx:
            by_j.setdefault(j, []).append(k)
    groups = {}
    for j in sorted(by_j):
        groups.setdefault(tuple(by_j[j]), []).append(j)
    positions = [
        {j: p for p, j in enumerate(idx)} for idx in scheme.assignments
    ]
    return list(groups.items()), positions


def _lls_solve(y_list, basis, scheme, ridge, extra=None):
    """Per-(x, y, slab, q) solve of the slab-coupled normal equations.

    Solves (sum_k B_k^T B_k + ridge I) s = sum_k B_k^T y_k + extra, where
    the sums run over the RF profiles that sampled each q index and extra is
    an optional precomputed thin-space right-hand-side contribution.
    """
    af = basis.af
    nx, ny, nslab = y_list[0].values.shape[:3]
    nq = scheme.n_q
    out = np.zeros((nx, ny, nslab * af, nq))
    groups, positions = _scheme_groups(scheme)
    for ks, js in groups:
        b_rows = basis.matrix[[k - 1 for k in ks]]
        factor = cho_factor(b_rows.T @ b_rows + ridge * np.eye(af))
        js = np.asarray(js, dtype=np.intp)
        rhs = np.zeros((nx, ny, nslab, af, len(js)))
        for k in ks:
            pos = [positions[k - 1][j] for j in js]
            yk = y_list[k - 1].values[..., pos]
            rhs += basis.matrix[k - 1][None, None, None, :, None] * yk[..., None, :]
        if extra is not None:
            rhs += extra[..., js].reshape(nx, ny, nslab, af, len(js))
        flat = rhs.transpose(3, 0, 1, 2, 4).reshape(af, -1)
        sol = cho_solve(factor, flat)
        sol = sol.reshape(af, nx, ny, nslab, len(js)).transpose(1, 2, 3, 0, 4)
        out[..., js] = sol.reshape(nx, ny, nslab * af, len(js))
    return out


def tikhonov_init(y_list, basis, scheme, mu):
    """Closed-form ridge-regularized slab inversion (the baseline method)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    values = _lls_solve(y_list, basis, scheme, ridge=mu)
    return DwiVolumeSet(values=values, voxel_size=y_list[0].voxel_size)


def lls_update(y_list, basis, scheme, cfg, ac_minus_dual, z_minus_gamma=None):
    """Volume update: data term plus coupling to coefficients (and TV).

    ac_minus_dual is (A c - Lambda) in thin space; z_minus_gamma is (Z -
    gamma) and may be omitted when rho2 = 0, reducing exactly to the
    sparsity-only update.
    """
    extra = cfg.rho1 * ac_minus_dual
    ridge = cfg.rho1
    if z_minus_gamma is not None:
        extra = extra + cfg.rho2 * z_minus_gamma
        ridge = cfg.rho1 + cfg.rho2
    return _lls_solve(y_list, basis, scheme, ridge=ridge, extra=extra)


def dictionary_lipschitz(a, rho1=1.0, iters=500, tol=1e-13):
    """Largest eigenvalue of rho1 * A^T A by power iteration."""
    gram = a.T @ a
    v = np.full(gram.shape[0], 1.0 / np.sqrt(gram.shape[0]))
    lam = 0.0
    for _ in range(iters):
        w = gram @ v
        lam_new = np.linalg.norm(w)
        v = w / lam_new
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return rho1 * lam


def _bp_objective(a, c, b, lam, rho1):
    resid = a @ c - b
    return 0.5 * rho1 * np.sum(resid**2, axis=0) + lam * np.sum(np.abs(c), axis=0)


def bp_update(a, b, lam, rho1, n_iters, warm_start=None, lipschitz=None, tol=1e-6):
    """Per-column basis pursuit: min (rho1/2)|b - A c|^2 + lam |c|_1.

    Monotone accelerated proximal-gradient (restart to the previous iterate
    whenever a column's objective would increase).  Columns whose null
    solution is already optimal (rho1 * |A^T b|_inf <= lam) are returned as
    exact zeros without iterating.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    m = a.shape[1]
    ncols = b.shape[1]
    c_out = np.zeros((m, ncols))
    atb = a.T @ b
    active = rho1 * np.max(np.abs(atb), axis=0) > lam
    if not np.any(active):
        return c_out
    if lipschitz is None:
        lipschitz = dictionary_lipschitz(a, rho1)
    step = 1.0 / lipschitz
    thresh = lam * step

    b_act = b[:, active]
    if warm_start is None:
        x = np.zeros((m, b_act.shape[1]))
    else:
        x = np.array(warm_start[:, active])
    fx = _bp_objective(a, x, b_act, lam, rho1)
    x_prev = x
    y = x
    t = 1.0
    total_prev = np.inf
    for _ in range(n_iters):
        grad = rho1 * (a.T @ (a @ y) - atb[:, active])
        z = soft_threshold(y - step * grad, thresh)
        fz = _bp_objective(a, z, b_act, lam, rho1)
        accept = fz <= fx
        x_new = np.where(accept, z, x)
        f_new = np.where(accept, fz, fx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        x_prev, x, fx, t = x, x_new, f_new, t_new
        total = float(np.sum(fx))
        # strict: tol = 0 disables early stopping (a monotone-rejection
        # iteration leaves the objective exactly unchanged without having
        # converged)
        if abs(total_prev - total) < tol * max(total, 1e-300):
            break
        total_prev = total
    c_out[:, active] = x
    return c_out


def lambda_dual_update(lam_dual, s_cols, ac_cols):
    """Multiplier step for the coefficient constraint: Lambda + (s - A c)."""
    return lam_dual + (s_cols - ac_cols)


def gamma_dual_update(gamma, s, z):
    """Multiplier step for the TV split: gamma + (S - Z)."""
    return gamma + (s - z)


def _grad3(u):
    """Forward differences along the three spatial axes, Neumann boundary."""
    g = np.zeros((3,) + u.shape, dtype=u.dtype)
    g[0, :-1] = u[1:] - u[:-1]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    g[2, :, :, :-1] = u[:, :, 1:] - u[:, :, :-1]
    return g


def _div3(p):
    """Negative adjoint of _grad3."""
    out = np.zeros(p.shape[1:], dtype=p.dtype)
    out[:-1] += p[0, :-1]
    out[1:] -= p[0, :-1]
    out[:, :-1] += p[1, :, :-1]
    out[:, 1:] -= p[1, :, :-1]
    out[:, :, :-1] += p[2, :, :, :-1]
    out[:, :, 1:] -= p[2, :, :, :-1]
    return out


def tv_seminorm(u):
    """Isotropic 3-D total variation, summed over any trailing q axis."""
    g = _grad3(u)
    return float(np.sum(np.sqrt(np.sum(g**2, axis=0))))


def tv_prox(v, weight, n_iters, tau=1.0 / 12.0):
    """Proximal operator of weight * TV via Chambolle dual projection.

    v may carry a trailing q axis; each q-volume is denoised independently.
    weight = 0 returns v unchanged.
    """
    if weight == 0.0:
        return np.array(v)
    scaled = v / weight
    p = np.zeros((3,) + v.shape)
    for _ in range(n_iters):
        g = _grad3(_div3(p) - scaled)
        mag = np.sqrt(np.sum(g**2, axis=0))
        p = (p + tau * g) / (1.0 + tau * mag)
    return v - weight * _div3(p)


def tv_update(s_plus_gamma, cfg):
    """TV subproblem: denoised estimate Z of the current volume."""
    if cfg.lambda_tv == 0.0:
        return np.array(s_plus_gamma)
    if not cfg.rho2 > 0:
        raise ValueError("rho2 must be positive when lambda_tv > 0")
    return tv_prox(s_plus_gamma, cfg.lambda_tv / cfg.rho2, cfg.tv_inner_iters)


def _active_mask(y_list, basis, shape):
    """Thin voxels whose slab carries any measurement (the head mask)."""
    nx, ny, nz = shape
    af = basis.af
    active = np.zeros((nx, ny, nz // af), dtype=bool)
    for y in y_list:
        active |= np.any(y.values != 0.0, axis=3)
    return np.repeat(active, af, axis=2)


def _check_finite(arr, stage):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(stage)


def _data_term(s_values, y_list, basis, scheme):
    from .qspace import scheme_mask
    from .encoding import downsample

    s = DwiVolumeSet(values=s_values)
    total = 0.0
    for k in range(1, scheme.n_rf + 1):
        idx = scheme_mask(scheme, k)
        pred = downsample(s, basis, k).values[..., idx]
        total += 0.5 * float(np.sum((y_list[k - 1].values - pred) ** 2))
    return total


def reconstruct(y_list, basis, scheme, dictionary, cfg, literal_gamma_update=False):
    """Full ADMM reconstruction with ridgelet l1 and TV regularization.

    Update order per outer iteration: volume (LLS), coefficients (BP),
    coefficient multiplier, TV denoising of the fresh volume, TV multiplier.
    Stops on relative volume change below cfg.epsilon or after cfg.n_iter
    iterations.  literal_gamma_update feeds the pre-update volume into the
    TV multiplier instead of the fresh one (compatibility switch).
    """
    t0 = time.perf_counter()
    report = ReconReport()
    af = basis.af
    nslab = y_list[0].values.shape[2]
    shape = y_list[0].values.shape[:2] + (nslab * af,)
    nq = scheme.n_q
    a = dictionary.matrix
    use_tv = cfg.lambda_tv > 0.0 or cfg.rho2 > 0.0

    active = _active_mask(y_list, basis, shape)
    act_flat = active.reshape(-1)

    s = tikhonov_init(y_list, basis, scheme, cfg.tikhonov_mu).values
    s[~active] = 0.0
    _check_finite(s, "tikhonov_init")

    from .ridgelets import fit_coefficients_ls

    c = np.zeros((np.prod(shape), a.shape[1]))
    c[act_flat] = fit_coefficients_ls(
        dictionary, s.reshape(-1, nq)[act_flat], ridge=1e-3
    )
    lam_dual = np.zeros((np.prod(shape), nq))
    z = np.array(s) if use_tv else None
    gamma = np.zeros_like(s) if use_tv else None
    lipschitz = dictionary_lipschitz(a, cfg.rho1) if cfg.rho1 > 0 else None

    s_prev_outer = s
    for it in range(cfg.n_iter):
        ac = (c @ a.T).reshape(shape + (nq,))
        ac_minus_dual = ac - lam_dual.reshape(shape + (nq,))
        s_before = s
        if use_tv:
            s = lls_update(y_list, basis, scheme, cfg, ac_minus_dual, z - gamma)
        else:
            s = lls_update(y_list, basis, scheme, cfg, ac_minus_dual)
        s[~active] = 0.0
        _check_finite(s, "lls_update")

        s_cols = s.reshape(-1, nq)
        b = (s_cols[act_flat] + lam_dual[act_flat]).T
        c_act = bp_update(
            a,
            b,
            cfg.lam,
            cfg.rho1,
            cfg.bp_inner_iters,
            warm_start=c[act_flat].T,
            lipschitz=lipschitz,
        )
        c = np.zeros_like(c)
        c[act_flat] = c_act.T
        _check_finite(c, "bp_update")

        ac_cols = c[act_flat] @ a.T
        lam_dual[act_flat] = lambda_dual_update(
            lam_dual[act_flat], s_cols[act_flat], ac_cols
        )
        _check_finite(lam_dual, "lambda_dual_update")

        if use_tv:
            z = tv_update(s + gamma, cfg)
            _check_finite(z, "tv_update")
            gamma = gamma_dual_update(
                gamma, s_before if literal_gamma_update else s, z
            )
            _check_finite(gamma, "gamma_dual_update")

        denom = np.linalg.norm(s_prev_outer)
        rel = float(np.linalg.norm(s - s_prev_outer) / denom) if denom > 0 else 0.0
        report.rel_change_history.append(rel)
        report.objective_history.append(
            {
                "data": _data_term(s, y_list, basis, scheme),
                "l1": cfg.lam * float(np.sum(np.abs(c))),
                "tv": cfg.lambda_tv * tv_seminorm(z) if use_tv else 0.0,
            }
        )
        report.iterations_run = it + 1
        s_prev_outer = s
        if rel < cfg.epsilon:
            break

    report.wall_time = time.perf_counter() - t0
    return DwiVolumeSet(values=s, voxel_size=y_list[0].voxel_size), report


def reconstruct_sparse_only(y_list, basis, scheme, dictionary, cfg):
    """Dedicated three-step scheme (LLS, BP, multiplier), no TV machinery."""
    t0 = time.perf_counter()
    report = ReconReport()
    af = basis.af
    nslab = y_list[0].values.shape[2]
    shape = y_list[0].values.shape[:2] + (nslab * af,)
    nq = scheme.n_q
    a = dictionary.matrix

    active = _active_mask(y_list, basis, shape)
    act_flat = active.reshape(-1)

    s = tikhonov_init(y_list, basis, scheme, cfg.tikhonov_mu).values
    s[~active] = 0.0

    from .ridgelets import fit_coefficients_ls

    c = np.zeros((np.prod(shape), a.shape[1]))
    c[act_flat] = fit_coefficients_ls(
        dictionary, s.reshape(-1, nq)[act_flat], ridge=1e-3
    )
    lam_dual = np.zeros((np.prod(shape), nq))
    lipschitz = dictionary_lipschitz(a, cfg.rho1) if cfg.rho1 > 0 else None

    s_prev = s
    for it in range(cfg.n_iter):
        ac = (c @ a.T).reshape(shape + (nq,))
        s = lls_update(y_list, basis, scheme, cfg, ac - lam_dual.reshape(shape + (nq,)))
        s[~active] = 0.0

        s_cols = s.reshape(-1, nq)
        b = (s_cols[act_flat] + lam_dual[act_flat]).T
        c_act = bp_update(
            a,
            b,
            cfg.lam,
            cfg.rho1,
            cfg.bp_inner_iters,
            warm_start=c[act_flat].T,
            lipschitz=lipschitz,
        )
        c = np.zeros_like(c)
        c[act_flat] = c_act.T

        lam_dual[act_flat] = lambda_dual_update(
            lam_dual[act_flat], s_cols[act_flat], c[act_flat] @ a.T
        )

        denom = np.linalg.norm(s_prev)
        rel = float(np.linalg.norm(s - s_prev) / denom) if denom > 0 else 0.0
        report.rel_change_history.append(rel)
        report.objective_history.append(
            {
                "data": _data_term(s, y_list, basis, scheme),
                "l1": cfg.lam * float(np.sum(np.abs(c))),
                "tv": 0.0,
            }
        )
        report.iterations_run = it + 1
        s_prev = s
        if rel < cfg.epsilon:
            break

    report.wall_time = time.perf_counter() - t0
    return DwiVolumeSet(values=s, voxel_size=y_list[0].voxel_size), report
