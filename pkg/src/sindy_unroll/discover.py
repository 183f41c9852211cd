"""Sparse regression solvers: closed-form unrolled STRidge and a gradient variant."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .core import (CoefficientMatrix, Dataset, DiscoveredModel, DiscoveryConfig,
                   DivergedDuringUnroll, InvalidConfig, IterationRecord, Library, NonFiniteFeatures, SGDConfig,
                   SingularSystem, SpatialGrid, UnsupportedLibraryForSGD, fingerprint,
                   make_training_pairs)
from .dictionary import evaluate, monomial_jacobian
from .unroll import unroll

# per-system defaults: (lambda, alpha_th, normalize). The PDE libraries hold
# columns whose scales differ by orders of magnitude (u vs u_xxxx), so their
# ridge penalty acts on unit-RMS columns; ODE libraries use the plain penalty.
DEFAULTS = {
    "cubic-oscillator": (1e-2, 0.05, False),
    "linear-oscillator": (1e-2, 0.05, False),
    "fitzhugh-nagumo": (1e-2, 0.05, False),
    "advection": (1e-2, 0.01, True),
    "reaction-diffusion": (1e-1, 0.05, True),
    "kuramoto-sivashinsky": (1e-6, 0.1, True),
}


def default_config(system: str, **overrides) -> DiscoveryConfig:
    if system not in DEFAULTS:
        raise InvalidConfig(f"unknown system {system!r}")
    lam, th, norm = DEFAULTS[system]
    return DiscoveryConfig(**{"lam": lam, "alpha_th": th, "normalize": norm, **overrides})


def ridge_solve(features, targets, lam: float, normalize: bool = False):
    """Solve (X^T X + lam I) w = X^T Y by Cholesky.

    With ``normalize`` the columns are first scaled to unit root-mean-square, the
    penalty acts on the scaled coefficients, and the result is mapped back.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    vector = Y.ndim == 1
    if vector:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise ValueError(f"incompatible shapes {X.shape} and {Y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NonFiniteFeatures("features or targets contain NaN/Inf")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    scale = None
    if normalize:
        scale = np.sqrt(np.mean(X * X, axis=0))
        scale[scale == 0] = 1.0
        X = X / scale
    G = X.T @ X
    b = X.T @ Y
    A = G + lam * np.eye(G.shape[0]) if lam > 0 else G
    try:
        c, low = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        d = np.abs(np.diag(c))
        if lam == 0 and (d.min() == 0 or (d.min() / d.max()) ** 2 < 1e-14):
            raise SingularSystem("Gram matrix is rank deficient and lambda = 0")
        w = scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except np.linalg.LinAlgError:
        if lam == 0:
            raise SingularSystem("Gram matrix is rank deficient and lambda = 0") from None
        # numerically indefinite despite lam > 0 (huge, nearly collinear columns)
        w = np.linalg.lstsq(A, b, rcond=None)[0]
    if scale is not None:
        w = w / scale[:, None]
    return w[:, 0] if vector else w


def solve_active(features, targets, active, lam, normalize=True):
    """Ridge-solve each target column on its own active feature set.

    Target columns that share an active set are solved together.
    """
    new = np.zeros(active.shape)
    patterns = {}
    for j in range(active.shape[1]):
        patterns.setdefault(active[:, j].tobytes(), []).append(j)
    for key, cols_j in patterns.items():
        rows = np.flatnonzero(active[:, cols_j[0]])
        if rows.size == 0:
            continue
        w = ridge_solve(features[:, rows], targets[:, cols_j], lam, normalize)
        new[np.ix_(rows, cols_j)] = w
    return new


def hard_threshold(values, active, alpha_th):
    small = np.abs(values) < alpha_th
    keep = active & ~small
    out = np.where(keep, values, 0.0)
    return out, keep


def _converged(changes, config):
    w = config.convergence_window
    return len(changes) >= w and float(np.mean(changes[-w:])) < config.convergence_tol


def _flat_steps(steps, M):
    return np.repeat(np.asarray(steps, dtype=np.float64), M)[:, None]


def discover_closed_form(dataset: Dataset, library: Library, config: DiscoveryConfig,
                         initial_alpha=None, callback=None) -> DiscoveredModel:
    """Iterate unroll -> ridge on active columns -> hard threshold until alpha settles.

    ``callback(iteration, alpha)`` is called after every thresholding step.
    """
    U_prev, U_next, steps = make_training_pairs(dataset)
    J, M, d = U_prev.shape
    if library.n_vars != d:
        raise ValueError("library and dataset disagree on the number of variables")
    times = dataset.time.times[:-1]
    h_rows = _flat_steps(steps, M)
    flat_prev = U_prev.reshape(J * M, d)
    flat_next = U_next.reshape(J * M, d)
    targets = (flat_next - flat_prev) / h_rows

    if initial_alpha is None:
        alpha = np.zeros((len(library), d))
        active = np.ones((len(library), d), dtype=bool)
    else:
        alpha = np.array(initial_alpha.values)
        active = np.array(initial_alpha.active)
    trace, changes = [], []
    for it in range(1, config.max_iters + 1):
        cols = np.flatnonzero(active.any(axis=1))
        res = unroll(config.method, U_prev, times, steps, library, alpha, config.K, cols)
        if res.diverged is not None:
            trace.append(IterationRecord(it, float("nan"), float("nan"), int(active.sum()), True))
            raise DivergedDuringUnroll(res.diverged, CoefficientMatrix(alpha, active), it)
        eff = res.effective_dictionary
        new = solve_active(eff, targets, active, config.lam, config.normalize)
        new, active = hard_threshold(new, active, config.alpha_th)
        resid = flat_next - (flat_prev + h_rows * (eff @ new))
        change = float(np.linalg.norm(new - alpha))
        trace.append(IterationRecord(it, float(np.mean(resid ** 2)), change, int(active.sum())))
        changes.append(change)
        alpha = new
        if callback is not None:
            callback(it, alpha)
        if _converged(changes, config):
            break
    return DiscoveredModel(library, CoefficientMatrix(alpha, active), config, tuple(trace),
                           fingerprint(dataset))


def discover_plain_sindy(dataset: Dataset, library: Library, config: DiscoveryConfig,
                         callback=None) -> DiscoveredModel:
    """Classic forward-difference SINDy with STRidge (no unrolling)."""
    U_prev, U_next, steps = make_training_pairs(dataset)
    J, M, d = U_prev.shape
    h_rows = _flat_steps(steps, M)
    flat_prev = U_prev.reshape(J * M, d)
    flat_next = U_next.reshape(J * M, d)
    targets = (flat_next - flat_prev) / h_rows
    theta = evaluate(library, U_prev, dataset.time.times[:-1])
    alpha = np.zeros((len(library), d))
    active = np.ones(alpha.shape, dtype=bool)
    trace, changes = [], []
    for it in range(1, config.max_iters + 1):
        new = solve_active(theta, targets, active, config.lam, config.normalize)
        new, active = hard_threshold(new, active, config.alpha_th)
        resid = flat_next - (flat_prev + h_rows * (theta @ new))
        change = float(np.linalg.norm(new - alpha))
        trace.append(IterationRecord(it, float(np.mean(resid ** 2)), change, int(active.sum())))
        changes.append(change)
        alpha = new
        if callback is not None:
            callback(it, alpha)
        if _converged(changes, config):
            break
    return DiscoveredModel(library, CoefficientMatrix(alpha, active), config, tuple(trace),
                           fingerprint(dataset))


# --------------------------------------------------------------------------- gradient variant

def _point_library(library):
    return Library(library.terms, library.n_vars, SpatialGrid.point(), library.variables)


def _rhs_and_sensitivity(lib, alpha, u, S):
    B, d = u.shape
    theta = evaluate(lib, u[:, None, :], None, check=False)        # [B, T]
    dtheta = monomial_jacobian(lib, u)                               # [B, T, d]
    f = theta @ alpha
    Ju = np.einsum("tc,btv->bcv", alpha, dtheta)
    Sf = np.einsum("bcv,bvtj->bctj", Ju, S)
    for c in range(d):
        Sf[:, c, :, c] += theta
    return f, Sf


def unrolled_sensitivity(method, U_prev, h, library, alpha, K):
    """Unrolled prediction of flat rows [B, d] and its Jacobian wrt alpha, [B, d, T, d]."""
    lib = _point_library(library)
    u = np.array(U_prev, dtype=np.float64)
    B, d = u.shape
    T = len(library)
    S = np.zeros((B, d, T, d))
    sub = (np.asarray(h, dtype=np.float64) / K).reshape(B, 1)
    sub4 = sub[:, :, None, None]
    for _ in range(K):
        if method == "euler":
            f, Sf = _rhs_and_sensitivity(lib, alpha, u, S)
            u = u + sub * f
            S = S + sub4 * Sf
        else:
            k1, S1 = _rhs_and_sensitivity(lib, alpha, u, S)
            k2, S2 = _rhs_and_sensitivity(lib, alpha, u + 0.5 * sub * k1, S + 0.5 * sub4 * S1)
            k3, S3 = _rhs_and_sensitivity(lib, alpha, u + 0.5 * sub * k2, S + 0.5 * sub4 * S2)
            k4, S4 = _rhs_and_sensitivity(lib, alpha, u + sub * k3, S + sub4 * S3)
            u = u + sub / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            S = S + sub4 / 6.0 * (S1 + 2 * S2 + 2 * S3 + S4)
    return u, S


def sgd_loss(method, U_prev, U_next, h, library, alpha, K, lam):
    """Mean over rows of |(U_next - prediction)/h|^2 plus lam * |alpha|^2."""
    lib = _point_library(library)
    pred = unroll(method, U_prev[:, None, :], None, h, lib, alpha, K).prediction[:, 0, :]
    r = (U_next - pred) / np.asarray(h).reshape(-1, 1)
    return float(np.sum(r ** 2) / r.shape[0] + lam * np.sum(alpha ** 2))


def sgd_loss_and_grad(method, U_prev, U_next, h, library, alpha, K, lam):
    pred, S = unrolled_sensitivity(method, U_prev, h, library, alpha, K)
    hh = np.asarray(h, dtype=np.float64).reshape(-1, 1)
    r = (U_next - pred) / hh
    B = r.shape[0]
    loss = float(np.sum(r ** 2) / B + lam * np.sum(alpha ** 2))
    grad = -2.0 / B * np.einsum("bc,bctj->tj", r / hh, S) + 2.0 * lam * alpha
    return loss, grad


class RAdam:
    """Rectified Adam with the usual defaults (beta1=0.9, beta2=0.999)."""

    def __init__(self, lr, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def step(self, param, grad):
        self.t += 1
        b1, b2, t = self.b1, self.b2, self.t
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** t)
        rho_t = self.rho_inf - 2 * t * b2 ** t / (1 - b2 ** t)
        if rho_t > 5.0:
            l = np.sqrt(1 - b2 ** t) / (np.sqrt(self.v) + self.eps)
            r = np.sqrt((rho_t - 4) * (rho_t - 2) * self.rho_inf
                        / ((self.rho_inf - 4) * (self.rho_inf - 2) * rho_t))
            return param - self.lr * m_hat * r * l
        return param - self.lr * m_hat


class GradientDescent:
    def __init__(self, lr, shape):
        self.lr = lr

    def step(self, param, grad):
        return param - self.lr * grad


def discover_sgd(dataset: Dataset, library: Library, config: DiscoveryConfig) -> DiscoveredModel:
    if not library.monomial_only:
        raise UnsupportedLibraryForSGD("the gradient solver supports constant/monomial libraries only")
    sgd = config.sgd or SGDConfig()
    U_prev, U_next, steps = make_training_pairs(dataset)
    J, M, d = U_prev.shape
    X = U_prev.reshape(J * M, d)
    Y = U_next.reshape(J * M, d)
    h = np.repeat(steps, M)
    N = X.shape[0]
    rng = np.random.default_rng(config.seed)
    alpha = np.zeros((len(library), d))
    active = np.ones(alpha.shape, dtype=bool)
    # same objective as the closed-form ridge (penalty against a sum over rows), scaled by 1/N
    lam = config.lam / N
    lr = sgd.learning_rate
    opt_cls = RAdam if sgd.optimizer == "radam" else GradientDescent
    trace = []
    epoch_no = 0
    for _round in range(sgd.threshold_rounds):
        opt = opt_cls(lr, alpha.shape)
        for _ in range(sgd.epochs_per_threshold):
            epoch_no += 1
            start = alpha
            perm = rng.permutation(N)
            losses = []
            for b0 in range(0, N, sgd.batch_size):
                idx = perm[b0:b0 + sgd.batch_size]
                loss, grad = sgd_loss_and_grad(config.method, X[idx], Y[idx], h[idx], library,
                                               alpha, config.K, lam)
                if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    trace.append(IterationRecord(epoch_no, float("nan"), float("nan"),
                                                 int(active.sum()), True))
                    raise DivergedDuringUnroll({"epoch": epoch_no}, CoefficientMatrix(alpha, active),
                                               epoch_no)
                grad = np.where(active, grad, 0.0)
                alpha = np.where(active, opt.step(alpha, grad), 0.0)
                losses.append(loss)
            trace.append(IterationRecord(epoch_no, float(np.mean(losses)),
                                         float(np.linalg.norm(alpha - start)), int(active.sum())))
        alpha, active = hard_threshold(alpha, active, config.alpha_th)
        lr /= sgd.lr_decay
    return DiscoveredModel(library, CoefficientMatrix(alpha, active), config, tuple(trace),
                           fingerprint(dataset))


def discover(dataset: Dataset, library: Library, config: DiscoveryConfig) -> DiscoveredModel:
    if config.solver == "sgd":
        return discover_sgd(dataset, library, config)
    return discover_closed_form(dataset, library, config)


# --------------------------------------------------------------------------- output

def format_equation(coefs, terms, name, names):
    parts = []
    for c, t in zip(coefs, terms):
        if c == 0:
            continue
        lbl = t.render(names)
        body = f"{abs(c):.3f}" + ("" if lbl == "1" else f" {lbl}")
        if not parts:
            parts.append(("-" if c < 0 else "") + body)
        else:
            parts.append(("- " if c < 0 else "+ ") + body)
    return f"d{name}/dt = " + (" ".join(parts) if parts else "0")


def pretty_print(model: DiscoveredModel, variables=None):
    names = tuple(variables) if variables else model.library.variables
    vals = model.coefficients.values
    return [format_equation(vals[:, j], model.library.terms, names[j], names)
            for j in range(vals.shape[1])]
