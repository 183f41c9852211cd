"""Reference data generators, subsampling, noise and model rollouts."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (CoefficientMatrix, Dataset, DiscoveredModel, EmptyDataset, InvalidConfig,
                   Library, SimulationDiverged, SpatialGrid, TimeGrid)
from .dictionary import SYSTEMS, apply_stencil, evaluate, standard_library


@dataclass(frozen=True)
class SystemSpec:
    name: str
    grid: SpatialGrid
    t_end: float
    fine_dt: float          # sampling interval of the generated dataset
    integrator_dt: float    # internal time step of the solver
    initial_condition: str
    variables: tuple
    library: Library
    ground_truth: CoefficientMatrix
    origin: tuple = (0.0,)  # coordinate of grid index 0 along each axis
    ic_state: tuple = ()    # ODE initial state

    @property
    def stride(self) -> int:
        return int(round(self.fine_dt / self.integrator_dt))

    @property
    def n_samples(self) -> int:
        return int(round(self.t_end / self.fine_dt))

    def coordinates(self):
        return [o + s * np.arange(n) for o, s, n in zip(self.origin, self.grid.spacings, self.grid.dims)]


_ODE_TRUTH = {
    "cubic-oscillator": {("u^3", 0): -0.1, ("v^3", 0): 2.0, ("u^3", 1): -2.0, ("v^3", 1): -0.1},
    "linear-oscillator": {("u", 0): -0.1, ("v", 0): 2.0, ("u", 1): -2.0, ("v", 1): -0.1},
    "fitzhugh-nagumo": {("1", 0): 0.1, ("u", 0): 1.0, ("v", 0): -1.0, ("u^3", 0): -1.0 / 3.0,
                        ("u", 1): 0.1, ("v", 1): -0.1},
}
_PDE_TRUTH = {
    "advection": {("u_x", 0): -0.4},
    "kuramoto-sivashinsky": {("u_xx", 0): -1.0, ("u_xxxx", 0): -1.0, ("u u_x", 0): -5.0},
    "reaction-diffusion": {
        ("u_xx", 0): 0.1, ("u_yy", 0): 0.1, ("u", 0): 1.0, ("u^3", 0): -1.0, ("v^3", 0): 1.0,
        ("u^2 v", 0): 1.0, ("u v^2", 0): -1.0,
        ("v_xx", 1): 0.1, ("v_yy", 1): 0.1, ("v", 1): 1.0, ("u^3", 1): -1.0, ("v^3", 1): -1.0,
        ("u^2 v", 1): -1.0, ("u v^2", 1): -1.0,
    },
}


def system_spec(name: str, t_end=None, fine_dt=None, n_points=None, initial_state=None) -> SystemSpec:
    """Default setup for one of the six benchmark systems, with optional overrides."""
    if name not in SYSTEMS:
        raise InvalidConfig(f"unknown system {name!r}; expected one of {SYSTEMS}")
    if name in _ODE_TRUTH:
        defaults = {
            "cubic-oscillator": (10.0, 2e-4, (-0.488, 1.096)),
            "linear-oscillator": (10.0, 2e-4, (2.0, 0.0)),
            "fitzhugh-nagumo": (100.0, 1e-2, (1.0, 0.1)),
        }[name]
        t_end = defaults[0] if t_end is None else t_end
        fine_dt = defaults[1] if fine_dt is None else fine_dt
        ic = defaults[2] if initial_state is None else tuple(float(v) for v in initial_state)
        if len(ic) != 2:
            raise InvalidConfig("ODE initial state needs two values")
        grid = SpatialGrid.point()
        lib = standard_library(name, grid)
        spec = SystemSpec(name, grid, float(t_end), float(fine_dt), fine_dt / 10.0,
                          f"point{ic}", ("x", "y"), lib,
                          CoefficientMatrix.from_terms(lib, _ODE_TRUTH[name]), (0.0,), ic)
    elif name == "advection":
        n = n_points or 100
        grid = SpatialGrid((n,), (1.0 / n,))
        lib = standard_library(name, grid)
        dt = fine_dt or 2e-4
        spec = SystemSpec(name, grid, float(t_end or 2.0), dt, dt, "sin(2 pi x)", ("u",), lib,
                          CoefficientMatrix.from_terms(lib, _PDE_TRUTH[name]), (0.0,))
    elif name == "kuramoto-sivashinsky":
        n = n_points or 100
        L = 64.0
        grid = SpatialGrid((n,), (L / n,))
        lib = standard_library(name, grid)
        dt = fine_dt or 1e-3
        spec = SystemSpec(name, grid, float(t_end or 100.0), dt, min(dt, 1e-3),
                          "0.5 exp(-100 (x - L/2)^2)", ("u",), lib,
                          CoefficientMatrix.from_terms(lib, _PDE_TRUTH[name]), (0.0,))
    else:
        n = n_points or 64
        grid = SpatialGrid((n, n), (20.0 / n, 20.0 / n))
        lib = standard_library(name, grid)
        dt = fine_dt or 0.0125
        spec = SystemSpec(name, grid, float(t_end or 10.0), dt, min(dt, 5e-4),
                          "u = exp(-(x^2 + y^2)/2), v = 0", ("u", "v"), lib,
                          CoefficientMatrix.from_terms(lib, _PDE_TRUTH[name]), (-10.0, -10.0))
    _validate(spec)
    return spec


def _validate(spec):
    if not (spec.t_end > 0 and spec.fine_dt > 0 and np.isfinite(spec.t_end) and np.isfinite(spec.fine_dt)):
        raise InvalidConfig("t_end and dt must be positive and finite")
    if spec.n_samples < 1:
        raise InvalidConfig("t_end must cover at least one sampling interval")
    if abs(spec.stride * spec.integrator_dt - spec.fine_dt) > 1e-9 * spec.fine_dt:
        raise InvalidConfig(f"sampling dt {spec.fine_dt} is not a multiple of the solver step "
                            f"{spec.integrator_dt}")


# --------------------------------------------------------------------------- integrators

def _ode_rhs(name):
    if name == "cubic-oscillator":
        return lambda x, y: (-0.1 * x ** 3 + 2.0 * y ** 3, -2.0 * x ** 3 - 0.1 * y ** 3)
    if name == "linear-oscillator":
        return lambda x, y: (-0.1 * x + 2.0 * y, -2.0 * x - 0.1 * y)
    return lambda x, y: (x - y - x ** 3 / 3.0 + 0.1, 0.1 * x - 0.1 * y)


def _simulate_ode(spec):
    f = _ode_rhs(spec.name)
    dt = spec.integrator_dt
    half = 0.5 * dt
    sixth = dt / 6.0
    x, y = spec.ic_state
    out = np.empty((spec.n_samples + 1, 1, 2))
    out[0, 0] = x, y
    for n in range(1, spec.n_samples + 1):
        try:
            for _ in range(spec.stride):
                a1, b1 = f(x, y)
                a2, b2 = f(x + half * a1, y + half * b1)
                a3, b3 = f(x + half * a2, y + half * b2)
                a4, b4 = f(x + dt * a3, y + dt * b3)
                x = x + sixth * (a1 + 2 * a2 + 2 * a3 + a4)
                y = y + sixth * (b1 + 2 * b2 + 2 * b3 + b4)
        except OverflowError:
            raise SimulationDiverged(n * spec.fine_dt) from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise SimulationDiverged(n * spec.fine_dt)
        out[n, 0] = x, y
    return out


def _simulate_advection(spec):
    (x,) = spec.coordinates()
    t = spec.fine_dt * np.arange(spec.n_samples + 1)
    return np.sin(2 * np.pi * (x[None, :] - 0.4 * t[:, None]))[:, :, None]


def etdrk4_coefficients(lin, dt, n_contour=32):
    """exp factors and phi-function weights, contour-averaged to avoid cancellation."""
    E = np.exp(dt * lin)
    E2 = np.exp(dt * lin / 2)
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    LR = dt * lin[:, None] + r[None, :]
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = dt * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = dt * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1))
    return E, E2, Q, f1, f2, f3


def _simulate_ks(spec):
    n = spec.grid.dims[0]
    L = spec.grid.spacings[0] * n
    (x,) = spec.coordinates()
    u0 = 0.5 * np.exp(-100.0 * (x - L / 2) ** 2)
    k = 2 * np.pi * np.fft.rfftfreq(n, d=L / n)
    lin = k ** 2 - k ** 4
    kd = k.copy()
    if n % 2 == 0:
        kd[-1] = 0.0
    g = -2.5j * kd                        # -5 u u_x = -(5/2) (u^2)_x
    E, E2, Q, f1, f2, f3 = etdrk4_coefficients(lin, spec.integrator_dt)
    rfft, irfft = np.fft.rfft, np.fft.irfft

    def nonlin(vh):
        w = irfft(vh, n)
        return g * rfft(w * w)

    v = rfft(u0)
    out = np.empty((spec.n_samples + 1, n, 1))
    out[0, :, 0] = u0
    for s in range(1, spec.n_samples + 1):
        for _ in range(spec.stride):
            Nv = nonlin(v)
            a = E2 * v + Q * Nv
            Na = nonlin(a)
            b = E2 * v + Q * Na
            Nb = nonlin(b)
            c = E2 * a + Q * (2 * Nb - Nv)
            Nc = nonlin(c)
            v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        u = irfft(v, n)
        if not np.all(np.isfinite(u)):
            raise SimulationDiverged(s * spec.fine_dt)
        out[s, :, 0] = u
    return out


def _rd_rhs(spec):
    dx, dy = spec.grid.spacings

    def lap(f):
        return apply_stencil(f, 0, 2, dx) + apply_stencil(f, 1, 2, dy)

    def rhs(u, v):
        u2, v2 = u * u, v * v
        u3, v3 = u2 * u, v2 * v
        u2v, uv2 = u2 * v, u * v2
        du = 0.1 * lap(u) + u - u3 + v3 + u2v - uv2
        dv = 0.1 * lap(v) + v - u3 - v3 - u2v - uv2
        return du, dv

    return rhs


def _simulate_rd(spec):
    xs, ys = spec.coordinates()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    u = np.exp(-(X ** 2 + Y ** 2) / 2)
    v = np.zeros_like(u)
    f = _rd_rhs(spec)
    dt = spec.integrator_dt
    out = np.empty((spec.n_samples + 1, u.size, 2))
    out[0, :, 0], out[0, :, 1] = u.ravel(), v.ravel()
    for s in range(1, spec.n_samples + 1):
        for _ in range(spec.stride):
            a1, b1 = f(u, v)
            a2, b2 = f(u + 0.5 * dt * a1, v + 0.5 * dt * b1)
            a3, b3 = f(u + 0.5 * dt * a2, v + 0.5 * dt * b2)
            a4, b4 = f(u + dt * a3, v + dt * b3)
            u = u + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            v = v + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise SimulationDiverged(s * spec.fine_dt)
        out[s, :, 0], out[s, :, 1] = u.ravel(), v.ravel()
    return out


def simulate(spec: SystemSpec, seed=None) -> Dataset:
    if spec.name in _ODE_TRUTH:
        states = _simulate_ode(spec)
    elif spec.name == "advection":
        states = _simulate_advection(spec)
    elif spec.name == "kuramoto-sivashinsky":
        states = _simulate_ks(spec)
    else:
        states = _simulate_rd(spec)
    times = TimeGrid(spec.fine_dt * np.arange(spec.n_samples + 1))
    return Dataset(spec.grid, times, states, None, seed, spec.name)


# --------------------------------------------------------------------------- dataset transforms

def subsample(dataset: Dataset, stride: int) -> Dataset:
    stride = int(stride)
    if stride < 1:
        raise InvalidConfig("stride must be >= 1")
    if stride == 1:
        return dataset
    states = dataset.states[::stride]
    if states.shape[0] < 2:
        raise EmptyDataset(f"stride {stride} leaves fewer than two snapshots")
    return replace(dataset, time=TimeGrid(dataset.time.times[::stride]), states=states)


def stride_for(dataset: Dataset, h: float) -> int:
    """Stride that turns the dataset's uniform sampling step into h."""
    dt = float(dataset.time.times[1] - dataset.time.times[0])
    stride = int(round(h / dt))
    if stride < 1 or abs(stride * dt - h) > 1e-6 * h:
        raise InvalidConfig(f"h={h} is not a multiple of the sampling step {dt}")
    return stride


def add_noise(dataset: Dataset, sigma: float, seed=None) -> Dataset:
    if sigma < 0:
        raise InvalidConfig("sigma must be >= 0")
    if sigma == 0:
        return dataset
    rng = np.random.default_rng(seed)
    s = dataset.states
    std = s.reshape(-1, s.shape[2]).std(axis=0)
    noisy = s + rng.standard_normal(s.shape) * (sigma * std)
    return replace(dataset, states=noisy, noise_sigma=float(sigma), seed=seed)


def rollout(model: DiscoveredModel, initial, grid: SpatialGrid, t_end: float, dt: float) -> Dataset:
    """Integrate du/dt = Theta(u) alpha with classical RK4."""
    lib = model.library
    if lib.grid != grid:
        raise InvalidConfig("model library grid does not match the rollout grid")
    alpha = model.coefficients.values
    cols = np.flatnonzero(model.coefficients.active.any(axis=1))
    u = np.asarray(initial, dtype=np.float64).reshape(1, grid.n_points, lib.n_vars)
    n = int(round(t_end / dt))
    out = np.empty((n + 1,) + u.shape[1:])
    out[0] = u[0]

    def f(w):
        with np.errstate(over="ignore", invalid="ignore"):
            return (evaluate(lib, w, None, cols, check=False) @ alpha).reshape(w.shape)

    for i in range(1, n + 1):
        k1 = f(u)
        k2 = f(u + 0.5 * dt * k1)
        k3 = f(u + 0.5 * dt * k2)
        k4 = f(u + dt * k3)
        with np.errstate(over="ignore", invalid="ignore"):
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise SimulationDiverged(i * dt)
        out[i] = u[0]
    return Dataset(grid, TimeGrid(dt * np.arange(n + 1)), out)
