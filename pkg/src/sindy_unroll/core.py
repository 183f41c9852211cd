"""Shared domain types: grids, datasets, term libraries, coefficients, configs, models.

Everything here is immutable after construction. Arrays stored on the frozen
dataclasses are marked read-only so that accidental in-place edits fail loudly.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Literal, Sequence

import numpy as np


# --------------------------------------------------------------------------- errors

class SindyError(Exception):
    """Base class for all package errors."""


class EmptyDataset(SindyError):
    pass


class GridMismatch(SindyError):
    pass


class NonFiniteState(SindyError):
    def __init__(self, index, message=None):
        self.index = tuple(int(i) for i in index)
        super().__init__(message or f"non-finite state value at index {self.index}")


class UnsupportedOrder(SindyError):
    pass


class SingularSystem(SindyError):
    pass


class NonFiniteFeatures(SindyError):
    pass


class DivergedDuringUnroll(SindyError):
    def __init__(self, diagnostic, alpha, iteration=None):
        self.diagnostic = diagnostic
        self.alpha = alpha
        self.iteration = iteration
        super().__init__(f"unrolled prediction diverged at iteration {iteration}: {diagnostic}")


class UnsupportedLibraryForSGD(SindyError):
    pass


class SimulationDiverged(SindyError):
    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"simulation diverged at t={self.time:g}")


class LibraryMismatch(SindyError):
    pass


class UnsupportedDimension(SindyError):
    pass


class InvalidConfig(SindyError):
    pass


class CorruptFile(SindyError):
    pass


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------- grids

@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = _frozen(np.ravel(self.times))
        if t.size == 0 or not np.all(np.isfinite(t)):
            raise InvalidConfig("time stamps must be finite and non-empty")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise InvalidConfig("time stamps must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @classmethod
    def uniform(cls, dt: float, n_steps: int, t0: float = 0.0) -> "TimeGrid":
        return cls(t0 + dt * np.arange(n_steps + 1))

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    __hash__ = None


@dataclass(frozen=True)
class SpatialGrid:
    dims: tuple
    spacings: tuple
    boundary: str = "periodic"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacings = tuple(float(s) for s in self.spacings)
        if len(dims) == 0 or len(dims) != len(spacings):
            raise InvalidConfig("dims and spacings must have the same non-zero length")
        if any(d < 1 for d in dims) or any(not (s > 0 and np.isfinite(s)) for s in spacings):
            raise InvalidConfig("axis lengths must be >= 1 and spacings > 0")
        if self.boundary != "periodic":
            raise InvalidConfig(f"unsupported boundary {self.boundary!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacings", spacings)

    @classmethod
    def point(cls) -> "SpatialGrid":
        """Single dummy location used by ODE datasets."""
        return cls((1,), (1.0,))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def is_point(self) -> bool:
        return self.dims == (1,)

    def to_dict(self):
        return {"dims": list(self.dims), "spacings": list(self.spacings), "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["dims"]), tuple(d["spacings"]), d.get("boundary", "periodic"))


# --------------------------------------------------------------------------- dataset

@dataclass(frozen=True, eq=False)
class Dataset:
    grid: SpatialGrid
    time: TimeGrid
    states: np.ndarray
    noise_sigma: float | None = None
    seed: int | None = None
    system: str | None = None

    def __post_init__(self):
        s = _frozen(self.states)
        if s.ndim != 3:
            raise InvalidConfig(f"states must have shape [time, space, var], got {s.shape}")
        if s.shape[0] != len(self.time):
            raise InvalidConfig("number of snapshots does not match number of time stamps")
        if s.shape[1] != self.grid.n_points:
            raise GridMismatch(f"states have {s.shape[1]} points, grid has {self.grid.n_points}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteState(np.argwhere(~np.isfinite(s))[0])
        object.__setattr__(self, "states", s)

    @property
    def n_vars(self) -> int:
        return self.states.shape[2]

    @property
    def n_pairs(self) -> int:
        return (self.states.shape[0] - 1) * self.states.shape[1]


def make_training_pairs(dataset: Dataset):
    """Return (U_prev, U_next, steps) with U_prev[j] = states[j], U_next[j] = states[j+1]."""
    s = dataset.states
    if s.shape[0] < 2:
        raise EmptyDataset("need at least two snapshots to form a training pair")
    return s[:-1], s[1:], dataset.time.steps


def fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(dataset.grid.to_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(dataset.time.times, dtype="<f8").tobytes())
    h.update(struct.pack("<qqq", *dataset.states.shape))
    h.update(np.ascontiguousarray(dataset.states, dtype="<f8").tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------- library

AXES = "xyz"
DEFAULT_VARS = ("u", "v", "w")


@dataclass(frozen=True)
class Term:
    """One candidate function.

    kind is one of "constant", "monomial", "derivative", "product". Products are
    a monomial (exponents) times a spatial derivative of one variable.
    """
    kind: str
    exponents: tuple = ()
    var: int | None = None
    orders: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "monomial", "derivative", "product"):
            raise InvalidConfig(f"unknown term kind {self.kind!r}")
        exps = tuple(int(e) for e in self.exponents)
        orders = tuple(int(o) for o in self.orders)
        if any(e < 0 for e in exps) or any(o < 0 for o in orders):
            raise InvalidConfig("exponents and derivative orders must be non-negative")
        if any(o > 4 for o in orders):
            raise UnsupportedOrder(f"derivative order {max(orders)} > 4")
        if self.kind in ("derivative", "product") and (self.var is None or sum(orders) == 0):
            raise InvalidConfig(f"{self.kind} term needs a variable and a non-zero derivative order")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "orders", orders)
        if not self.label:
            object.__setattr__(self, "label", self.render(DEFAULT_VARS))

    @property
    def has_derivative(self) -> bool:
        return self.kind in ("derivative", "product")

    def render(self, names: Sequence[str]) -> str:
        parts = []
        if self.kind in ("monomial", "product"):
            for name, e in zip(names, self.exponents):
                if e == 1:
                    parts.append(name)
                elif e > 1:
                    parts.append(f"{name}^{e}")
        if self.has_derivative:
            sub = "".join(AXES[a] * o for a, o in enumerate(self.orders))
            parts.append(f"{names[self.var]}_{sub}")
        return " ".join(parts) if parts else "1"

    def to_dict(self):
        params = {}
        if self.kind in ("monomial", "product"):
            params["exponents"] = list(self.exponents)
        if self.has_derivative:
            params["var"] = self.var
            params["orders"] = list(self.orders)
        return {"kind": self.kind, "parameters": params, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        p = d.get("parameters", {})
        return cls(d["kind"], tuple(p.get("exponents", ())), p.get("var"),
                   tuple(p.get("orders", ())), d["label"])


def constant() -> Term:
    return Term("constant")


def monomial(*exponents) -> Term:
    if sum(exponents) == 0:
        return constant()
    return Term("monomial", tuple(exponents))


def derivative(var: int, *orders) -> Term:
    return Term("derivative", (), var, tuple(orders))


def product(exponents, var: int, *orders) -> Term:
    return Term("product", tuple(exponents), var, tuple(orders))


@dataclass(frozen=True)
class Library:
    terms: tuple
    n_vars: int
    grid: SpatialGrid
    variables: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise InvalidConfig("library needs at least one term")
        labels = [t.label for t in terms]
        if len(set(labels)) != len(labels):
            raise InvalidConfig("term labels must be unique")
        for t in terms:
            if t.kind in ("monomial", "product") and len(t.exponents) != self.n_vars:
                raise InvalidConfig(f"term {t.label!r} has wrong number of exponents")
            if t.has_derivative:
                if t.var >= self.n_vars:
                    raise InvalidConfig(f"term {t.label!r} refers to a missing variable")
                if len(t.orders) != self.grid.ndim:
                    raise GridMismatch(f"term {t.label!r} does not match a {self.grid.ndim}D grid")
        object.__setattr__(self, "terms", terms)
        if not self.variables:
            object.__setattr__(self, "variables", DEFAULT_VARS[: self.n_vars])

    def __len__(self):
        return len(self.terms)

    @property
    def labels(self):
        return [t.label for t in self.terms]

    @property
    def monomial_only(self) -> bool:
        return all(not t.has_derivative for t in self.terms)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_dict(self):
        return {"terms": [t.to_dict() for t in self.terms], "n_vars": self.n_vars,
                "grid": self.grid.to_dict(), "variables": list(self.variables)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Term.from_dict(t) for t in d["terms"]), int(d["n_vars"]),
                   SpatialGrid.from_dict(d["grid"]), tuple(d.get("variables", ())))


# --------------------------------------------------------------------------- coefficients

@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    values: np.ndarray
    active: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise InvalidConfig("coefficient matrix must be 2-D [terms, vars]")
        a = (v != 0) if self.active is None else np.array(self.active, dtype=bool, copy=True)
        if a.shape != v.shape:
            raise InvalidConfig("active mask shape mismatch")
        if not np.all(np.isfinite(v)):
            raise NonFiniteFeatures("coefficients must be finite")
        v[~a] = 0.0
        v.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "active", a)

    @classmethod
    def zeros(cls, n_terms, n_vars, active=True):
        return cls(np.zeros((n_terms, n_vars)), np.full((n_terms, n_vars), bool(active)))

    @classmethod
    def from_terms(cls, library: Library, entries: dict):
        """Build from {(label, var_index): value}."""
        v = np.zeros((len(library), library.n_vars))
        for (label, j), c in entries.items():
            v[library.index(label), j] = c
        return cls(v)

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        return (isinstance(other, CoefficientMatrix) and np.array_equal(self.values, other.values)
                and np.array_equal(self.active, other.active))

    __hash__ = None


# --------------------------------------------------------------------------- configs

@dataclass(frozen=True)
class SGDConfig:
    learning_rate: float = 5e-3
    lr_decay: float = 10.0
    epochs_per_threshold: int = 200
    threshold_rounds: int = 3
    batch_size: int = 100
    optimizer: Literal["radam", "gd"] = "radam"

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.lr_decay > 1:
            raise InvalidConfig("need learning_rate > 0 and lr_decay > 1")
        if min(self.epochs_per_threshold, self.threshold_rounds, self.batch_size) < 1:
            raise InvalidConfig("SGD counts must be >= 1")
        if self.optimizer not in ("radam", "gd"):
            raise InvalidConfig(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class DiscoveryConfig:
    method: Literal["euler", "rk4"] = "euler"
    solver: Literal["closed-form", "sgd"] = "closed-form"
    K: int = 1
    lam: float = 1e-2
    alpha_th: float = 0.05
    max_iters: int = 50
    convergence_window: int = 5
    convergence_tol: float = 1e-6
    normalize: bool = True
    sgd: SGDConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise InvalidConfig(f"unknown method {self.method!r}")
        if self.solver not in ("closed-form", "sgd"):
            raise InvalidConfig(f"unknown solver {self.solver!r}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidConfig("K must be an integer >= 1")
        if not (self.lam >= 0) or not (self.alpha_th >= 0):
            raise InvalidConfig("lambda and alpha_th must be >= 0")
        if self.max_iters < 1 or self.convergence_window < 1 or not self.convergence_tol >= 0:
            raise InvalidConfig("invalid iteration / convergence settings")
        if isinstance(self.sgd, dict):
            object.__setattr__(self, "sgd", SGDConfig(**self.sgd))
        object.__setattr__(self, "K", int(self.K))

    def to_dict(self):
        d = asdict(self)
        d["sgd"] = None if self.sgd is None else asdict(self.sgd)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown discovery config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "DiscoveryConfig":
        return replace(self, **kw)


# --------------------------------------------------------------------------- model

@dataclass(frozen=True)
class IterationRecord:
    iter: int
    loss: float
    alpha_change: float
    active_count: int
    diverged: bool = False


@dataclass(frozen=True, eq=False)
class DiscoveredModel:
    library: Library
    coefficients: CoefficientMatrix
    config: DiscoveryConfig
    trace: tuple = field(default_factory=tuple)
    dataset_fingerprint: str = ""

    def to_dict(self):
        return {
            "library": self.library.to_dict(),
            "alpha": self.coefficients.values.tolist(),
            "active": self.coefficients.active.tolist(),
            "config": self.config.to_dict(),
            "trace": [asdict(r) for r in self.trace],
            "dataset_fingerprint": self.dataset_fingerprint,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Library.from_dict(d["library"]),
                   CoefficientMatrix(np.array(d["alpha"], dtype=float), np.array(d["active"], dtype=bool)),
                   DiscoveryConfig.from_dict(d["config"]),
                   tuple(IterationRecord(**r) for r in d["trace"]),
                   d["dataset_fingerprint"])
