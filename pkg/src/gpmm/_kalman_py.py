"""Pure numpy Kalman kernels; the reference implementation of the compiled core.

Both backends share one calling convention.  The covariance pass depends only
on the model and the sequence length, so it runs once per length; the mean
pass is batched over ``n`` independent sequences of that length.
"""

import numpy as np


def _sym(a):
    return 0.5 * (a + a.swapaxes(-1, -2))


def covariance_pass(c_mat, w, lam_eps, n_steps):
    """Filter and smoother covariances for a diagonal-transition state model.

    Parameters
    ----------
    c_mat : (r, r) array
        Observation information V^T Λ_x^{-1} V.
    w, lam_eps : (r,) arrays
        Transition diagonal and transition noise variances.
    n_steps : int
        Sequence length T.

    Returns
    -------
    pred, filt, smooth : (T, r, r) arrays
        Predicted, filtered and smoothed state covariances.
    gain : (T - 1, r, r) array
        Smoother gains J_t = Y_t W P_{t+1}^{-1}.
    """
    c_mat = np.asarray(c_mat, dtype=float)
    w = np.asarray(w, dtype=float)
    lam_eps = np.asarray(lam_eps, dtype=float)
    r = w.shape[0]
    eye = np.eye(r)
    pred = np.empty((n_steps, r, r))
    filt = np.empty((n_steps, r, r))
    smooth = np.empty((n_steps, r, r))
    gain = np.empty((max(n_steps - 1, 0), r, r))
    p_mat = np.diag(w * w + lam_eps)
    for t in range(n_steps):
        pred[t] = p_mat
        y_mat = _sym(np.linalg.solve(eye + p_mat @ c_mat, p_mat))
        filt[t] = y_mat
        p_mat = _sym(w[:, None] * y_mat * w[None, :] + np.diag(lam_eps))
    if n_steps:
        smooth[-1] = filt[-1]
    for t in range(n_steps - 2, -1, -1):
        # J = Y W P^{-1}; P and Y are symmetric so solve the transposed system.
        j_mat = np.linalg.solve(pred[t + 1], (filt[t] * w[None, :]).T).T
        gain[t] = j_mat
        smooth[t] = _sym(filt[t] + j_mat @ (smooth[t + 1] - pred[t + 1]) @ j_mat.T)
    return pred, filt, smooth, gain


def mean_pass(a_mats, b_vecs, d_mats, j_mats):
    """Filtered and smoothed means for a batch of sequences.

    Forward: mu_t = A_t mu_{t-1} + b_t with mu_0 = 0.
    Backward: mu_hat_t = D_t mu_t + J_t mu_hat_{t+1}, mu_hat_T = mu_T.

    ``b_vecs`` has shape (n, T, r); both outputs share that shape.
    """
    b_vecs = np.asarray(b_vecs, dtype=float)
    n, n_steps, r = b_vecs.shape
    mu = np.empty_like(b_vecs)
    prev = np.zeros((n, r))
    for t in range(n_steps):
        prev = prev @ a_mats[t].T + b_vecs[:, t]
        mu[:, t] = prev
    mu_hat = np.empty_like(b_vecs)
    if n_steps:
        mu_hat[:, -1] = mu[:, -1]
    for t in range(n_steps - 2, -1, -1):
        mu_hat[:, t] = mu[:, t] @ d_mats[t].T + mu_hat[:, t + 1] @ j_mats[t].T
    return mu, mu_hat
