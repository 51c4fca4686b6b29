"""Independent reference computations used by the tests.

Nothing here calls the package's inference code; every oracle is built from
the generative equations by dense joint-Gaussian algebra, brute force or
bisection.
"""

import numpy as np


def gaussian_condition(mean, cov, observed, values):
    """Condition N(mean, cov) on cov-indices ``observed`` taking ``values``.

    Returns (mean, cov) of the remaining coordinates. ``values`` may be (k,)
    or (k, T).
    """
    n = cov.shape[0]
    obs = np.asarray(observed)
    hid = np.setdiff1d(np.arange(n), obs)
    s_ho = cov[np.ix_(hid, obs)]
    s_oo = cov[np.ix_(obs, obs)]
    gain = np.linalg.solve(s_oo, s_ho.T).T
    v = np.asarray(values, dtype=float)
    mo = mean[obs] if v.ndim == 1 else mean[obs][:, None]
    mh = mean[hid] if v.ndim == 1 else mean[hid][:, None]
    return mh + gain @ (v - mo), cov[np.ix_(hid, hid)] - gain @ s_ho.T


def static_joint(params):
    """Mean and covariance of the stacked vector (s, z, y, x)."""
    r, p, q = params.r, params.p, params.q
    w = np.diag(params.w_diag)
    le = np.diag(params.lambda_eps_diag)
    u, v = params.u_mat, params.v_mat
    # Linear map from independent sources (s, eps, e_y, e_x) to (s, z, y, x).
    n_src = 2 * r + p + q
    a = np.zeros((2 * r + p + q, n_src))
    a[:r, :r] = np.eye(r)
    a[r:2 * r, :r] = w
    a[r:2 * r, r:2 * r] = np.eye(r)
    a[2 * r:2 * r + p, :r] = u @ w
    a[2 * r:2 * r + p, r:2 * r] = u
    a[2 * r:2 * r + p, 2 * r:2 * r + p] = np.eye(p)
    a[2 * r + p:, :r] = v
    a[2 * r + p:, 2 * r + p:] = np.eye(q)
    src = np.zeros((n_src, n_src))
    src[:r, :r] = np.eye(r)
    src[r:2 * r, r:2 * r] = le
    src[2 * r:2 * r + p, 2 * r:2 * r + p] = params.lambda_y
    src[2 * r + p:, 2 * r + p:] = params.lambda_x
    mean = np.concatenate([np.zeros(2 * r), params.c_y, params.c_x])
    return mean, a @ src @ a.T


def chain_joint(params, n_steps):
    """Mean and covariance of (s_1..s_T, x_1..x_T) for the latent Markov chain.

    s_1 ~ N(0, diag(w^2 + Λ_ε)), s_t = W s_{t-1} + ε_t, x_t = V s_t + c_x + e_t.
    """
    r = params.r
    w = params.w_diag
    le = params.lambda_eps_diag
    var = [w ** 2 + le]
    for _ in range(1, n_steps):
        var.append(w ** 2 * var[-1] + le)
    ss = np.zeros((n_steps * r, n_steps * r))
    for a in range(n_steps):
        for b in range(a, n_steps):
            block = np.diag(w ** (b - a) * var[a])
            ss[b * r:(b + 1) * r, a * r:(a + 1) * r] = block
            ss[a * r:(a + 1) * r, b * r:(b + 1) * r] = block
    vb = np.kron(np.eye(n_steps), params.v_mat)
    lb = np.kron(np.eye(n_steps), params.lambda_x)
    cov = np.block([[ss, ss @ vb.T], [vb @ ss, vb @ ss @ vb.T + lb]])
    mean = np.concatenate([np.zeros(n_steps * r), np.tile(params.c_x, n_steps)])
    return mean, cov


def chain_posterior(params, x_seq):
    """Posterior mean (r, T) and full covariance of s_1..s_T given x_1..x_T."""
    r, t = params.r, x_seq.shape[1]
    mean, cov = chain_joint(params, t)
    obs = np.arange(t * r, t * r + t * params.q)
    m, c = gaussian_condition(mean, cov, obs, x_seq.T.ravel())
    return m.reshape(t, r).T, c


def mvn_logpdf(values, mean, cov):
    values = np.asarray(values, dtype=float)
    d = values - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * (d @ np.linalg.solve(cov, d) + logdet + d.size * np.log(2 * np.pi)))


def largest_root_bisection(coeffs, lo=0.0, hi=1.0, grid=20001, tol=1e-15):
    """Largest root in [lo, hi] of a3 l^3 + a2 l^2 + a1 l + a0 by grid scan plus bisection."""
    a0, a1, a2, a3 = coeffs
    f = lambda lam: ((a3 * lam + a2) * lam + a1) * lam + a0
    xs = np.linspace(lo, hi, grid)
    fs = f(xs)
    roots = np.flatnonzero(fs == 0.0)
    idx = np.flatnonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0)
    best = None
    if idx.size:
        a, b = xs[idx[-1]], xs[idx[-1] + 1]
        fa = f(a)
        while b - a > tol:
            m = 0.5 * (a + b)
            fm = f(m)
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        best = 0.5 * (a + b)
    if roots.size and (best is None or xs[roots[-1]] > best):
        best = float(xs[roots[-1]])
    return best


def random_spd(rng, n, floor=0.2):
    a = rng.standard_normal((n, n))
    return a @ a.T + floor * np.eye(n)
