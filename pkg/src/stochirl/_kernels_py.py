"""Pure numpy implementation of the Euler-Maruyama kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used
when the extension is unavailable or ``STOCHIRL_PURE_PYTHON`` is set.
Work is vectorized across paths, the time loop stays in Python.

Layout of the per-path window functionals (``M`` paths, ``l`` windows)::

    delta_xx  (M, l, n(n+1)/2)   xbar(X(t_j + dt)) - xbar(X(t_j))
    delta_uu  (M, l, m(m+1)/2)   integral of ubar(u)
    i_xx      (M, l, n*n)        integral of kron(X, X)
    i_xu      (M, l, n*m)        integral of kron(X, u)

Integrals use the left-endpoint rule on the simulation grid.
"""

import numpy as np

NAME = "python"


def _xbar(X, iu, ju):
    return X[:, iu] * X[:, ju]


def window_functionals(A, B, C, D, K, E, x0, dW, h, steps_per_window, windows, guard):
    """Simulate ``u = K X + E[k]`` paths and integrate window functionals.

    Returns ``(delta_xx, delta_uu, i_xx, i_xu, fail_step)`` where
    ``fail_step`` is -1 on success or the grid index at which some path
    exceeded ``guard`` in Euclidean norm.
    """
    M = dW.shape[0]
    n = A.shape[0]
    m = B.shape[1]
    iun, jun = np.triu_indices(n)
    ium, jum = np.triu_indices(m)
    dxx = np.zeros((M, windows, iun.size))
    duu = np.zeros((M, windows, ium.size))
    ixx = np.zeros((M, windows, n * n))
    ixu = np.zeros((M, windows, n * m))
    X = np.tile(np.asarray(x0, dtype=float), (M, 1))
    At, Bt, Ct, Dt, Kt = A.T, B.T, C.T, D.T, K.T
    g2 = guard * guard
    k = 0
    for j in range(windows):
        xb0 = _xbar(X, iun, jun)
        sxx = np.zeros((M, n, n))
        sxu = np.zeros((M, n, m))
        suu = np.zeros((M, ium.size))
        for _ in range(steps_per_window):
            u = X @ Kt + E[k]
            sxx += X[:, :, None] * X[:, None, :]
            sxu += X[:, :, None] * u[:, None, :]
            suu += u[:, ium] * u[:, jum]
            X = X + (X @ At + u @ Bt) * h + (X @ Ct + u @ Dt) * dW[:, k, None]
            k += 1
            if np.any(np.einsum("pi,pi->p", X, X) > g2) or not np.all(np.isfinite(X)):
                return dxx, duu, ixx, ixu, k
        dxx[:, j] = _xbar(X, iun, jun) - xb0
        duu[:, j] = h * suu
        ixx[:, j] = h * sxx.reshape(M, n * n)
        ixu[:, j] = h * sxu.reshape(M, n * m)
    return dxx, duu, ixx, ixu, -1


def paths(A, B, C, D, K, E, x0, dW, h, guard):
    """Simulate and store full state/control trajectories.

    Returns ``(X, U, fail_step)`` with ``X`` of shape ``(M, N+1, n)`` and
    ``U`` of shape ``(M, N+1, m)``.
    """
    M, N = dW.shape
    n = A.shape[0]
    m = B.shape[1]
    Xs = np.empty((M, N + 1, n))
    Us = np.empty((M, N + 1, m))
    X = np.tile(np.asarray(x0, dtype=float), (M, 1))
    At, Bt, Ct, Dt, Kt = A.T, B.T, C.T, D.T, K.T
    g2 = guard * guard
    for k in range(N):
        u = X @ Kt + E[k]
        Xs[:, k] = X
        Us[:, k] = u
        X = X + (X @ At + u @ Bt) * h + (X @ Ct + u @ Dt) * dW[:, k, None]
        if np.any(np.einsum("pi,pi->p", X, X) > g2) or not np.all(np.isfinite(X)):
            return Xs, Us, k + 1
    Xs[:, N] = X
    Us[:, N] = X @ Kt + E[N]
    return Xs, Us, -1
