"""Model specification: time grids, drift and diffusion families, parameters.

The drift of subject ``i`` is ``phi_xi(t) * b_beta(x)`` with

    phi_xi(t) = xi_0 + xi_1 g_1(z_1(t)) + ... + xi_p g_p(z_p(t)),

and the diffusion ``sigma(x)`` is known.  The parameter vector is ordered
``(xi_0, ..., xi_p, beta_1, ..., beta_q)``, so that the product model
``(theta_1 + theta_2 z)(theta_3 + theta_4 x)`` reads ``theta = (xi_0, xi_1,
beta_1, beta_2)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ParameterError

log = logging.getLogger(__name__)

__all__ = [
    "TimeGrid",
    "TRANSFORMS",
    "LinearFactor",
    "FixedFactor",
    "CallableFactor",
    "factor_from_name",
    "DriftSpec",
    "DiffusionSpec",
    "Constant",
    "CKLS",
    "diffusion_from_dict",
    "ModelSpec",
    "ThetaVector",
]


@dataclass(frozen=True)
class TimeGrid:
    """Equispaced grid ``0 = t_0 < ... < t_m = t_end``."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ParameterError(f"t_end must be positive, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ParameterError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def step(self) -> float:
        return self.t_end / self.n_steps

    @property
    def knots(self) -> np.ndarray:
        # last knot is t_end exactly
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_end, self.n_steps * factor)


# ---------------------------------------------------------------------------
# covariate transforms g_l

def _id(z):
    return z


TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": _id,
    "tanh": np.tanh,
    "square": np.square,
    "exp": np.exp,
    "arctan": np.arctan,
}


def _transform(t):
    if callable(t):
        return t
    try:
        return TRANSFORMS[t]
    except KeyError:
        raise ParameterError(
            f"unknown transform {t!r}; known: {sorted(TRANSFORMS)}"
        ) from None


# ---------------------------------------------------------------------------
# factor families b_beta


def _one(x):
    return np.ones_like(x, dtype=float)


def _identity(x):
    return np.asarray(x, dtype=float)


def _neg_identity(x):
    return -np.asarray(x, dtype=float)


class LinearFactor:
    """Factor linear in its parameters, ``b_beta(x) = sum_s beta_s h_s(x)``.

    Every coordinate of the drift is then affine given the others, which is
    what the closed-form coordinate updates and the Gibbs sampler rely on.
    """

    linear = True

    def __init__(self, basis: Sequence[Callable], names: Sequence[str] | None = None,
                 label: str | None = None):
        self.basis = tuple(basis)
        if names is None:
            names = [f"beta{s + 1}" for s in range(len(self.basis))]
        self.names = tuple(names)
        self.label = label

    @property
    def n_params(self) -> int:
        return len(self.basis)

    @property
    def width(self) -> int:
        """Number of basis functions."""
        return len(self.basis)

    def basis_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(h(x), x.shape) for h in self.basis], axis=-1)

    def coefficients(self, beta) -> np.ndarray:
        return np.asarray(beta, dtype=float)

    def __call__(self, x, beta) -> np.ndarray:
        return self.basis_values(x) @ self.coefficients(beta)

    def __repr__(self):
        return f"{type(self).__name__}({self.label or len(self.basis)})"


class FixedFactor(LinearFactor):
    """Known factor ``b(x)`` without free parameters."""

    def __init__(self, func: Callable, label: str | None = None):
        super().__init__([func], names=(), label=label)

    @property
    def n_params(self) -> int:
        return 0

    def coefficients(self, beta) -> np.ndarray:
        return np.ones(1)


class CallableFactor:
    """Arbitrary factor ``b(x, beta)``; coordinates in ``beta`` need not be affine."""

    linear = False

    def __init__(self, func: Callable, n_params: int, names: Sequence[str] | None = None,
                 label: str | None = None):
        self.func = func
        self._n = int(n_params)
        self.names = tuple(names) if names is not None else tuple(
            f"beta{s + 1}" for s in range(self._n))
        self.label = label

    @property
    def n_params(self) -> int:
        return self._n

    def __call__(self, x, beta) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=float), np.asarray(beta, dtype=float)),
                          dtype=float)

    def __repr__(self):
        return f"CallableFactor({self.label or self.func!r})"


_FACTORS = {
    "affine": lambda: LinearFactor([_one, _identity], label="affine"),
    "linear": lambda: LinearFactor([_identity], label="linear"),
    "identity": lambda: FixedFactor(_identity, label="identity"),
    "neg_identity": lambda: FixedFactor(_neg_identity, label="neg_identity"),
    "unit": lambda: FixedFactor(_one, label="unit"),
}


def factor_from_name(name: str):
    """Built-in factor families.

    ``affine``: beta_1 + beta_2 x; ``linear``: beta_1 x; ``identity``: x;
    ``neg_identity``: -x; ``unit``: 1.
    """
    try:
        return _FACTORS[name]()
    except KeyError:
        raise ParameterError(f"unknown factor family {name!r}; known: {sorted(_FACTORS)}") from None


# ---------------------------------------------------------------------------
# drift


@dataclass(frozen=True)
class DriftSpec:
    """Covariate part ``phi_xi`` and factor family ``b_beta`` of the drift."""

    transforms: tuple = ()
    factor: object = field(default_factory=lambda: factor_from_name("affine"))
    covariate_ranges: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if isinstance(self.factor, str):
            object.__setattr__(self, "factor", factor_from_name(self.factor))
        if self.covariate_ranges is not None:
            ranges = tuple((float(lo), float(hi)) for lo, hi in self.covariate_ranges)
            if len(ranges) != self.p:
                raise ParameterError(
                    f"{len(ranges)} covariate ranges for {self.p} covariates")
            for lo, hi in ranges:
                if not lo < hi:
                    raise ParameterError(f"empty covariate range ({lo}, {hi})")
            object.__setattr__(self, "covariate_ranges", ranges)
        object.__setattr__(self, "_funcs", tuple(_transform(t) for t in self.transforms))

    @property
    def p(self) -> int:
        return len(self.transforms)

    @property
    def q(self) -> int:
        return self.factor.n_params

    @property
    def n_xi(self) -> int:
        return self.p + 1

    def clamp(self, z) -> np.ndarray:
        """Clamp covariates into the declared ranges, warning on each hit."""
        z = np.asarray(z, dtype=float)
        if self.covariate_ranges is None or self.p == 0:
            return z
        lo = np.array([r[0] for r in self.covariate_ranges])
        hi = np.array([r[1] for r in self.covariate_ranges])
        out = np.clip(z, lo, hi)
        hits = int(np.count_nonzero(out != z))
        if hits:
            log.warning("clamped %d covariate values into the declared range", hits)
        return out

    def covariate_features(self, z) -> np.ndarray:
        """``(1, g_1(z_1), ..., g_p(z_p))`` along the last axis."""
        z = self.clamp(z)
        if z.ndim == 0 or z.shape[-1] != self.p:
            raise ParameterError(f"covariate array must end in an axis of size {self.p}")
        cols = [np.ones(z.shape[:-1])]
        cols += [np.asarray(g(z[..., l]), dtype=float) for l, g in enumerate(self._funcs)]
        return np.stack(cols, axis=-1)

    def phi(self, xi, z) -> np.ndarray:
        return self.covariate_features(z) @ np.asarray(xi, dtype=float)

    def features(self, z, x) -> np.ndarray:
        """Kronecker features ``G(z) (x) H(x)`` so that drift = features @ coefficients.

        Only defined for linear factor families.
        """
        G = self.covariate_features(z)
        H = self.factor.basis_values(x)
        return (G[..., :, None] * H[..., None, :]).reshape(G.shape[:-1] + (-1,))

    def to_dict(self) -> dict:
        if any(callable(t) for t in self.transforms) or self.factor.label is None:
            raise ParameterError("drift with user callables cannot be serialized")
        return {
            "transforms": list(self.transforms),
            "factor": self.factor.label,
            "covariate_ranges": None if self.covariate_ranges is None
            else [list(r) for r in self.covariate_ranges],
        }


# ---------------------------------------------------------------------------
# diffusion


class DiffusionSpec:
    """Known diffusion coefficient ``sigma(x)``."""

    family = "base"
    requires_positive_state = False

    def __call__(self, x) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(DiffusionSpec):
    sigma: float = 1.0

    family = "constant"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"constant diffusion needs sigma > 0, got {self.sigma}")

    def __call__(self, x):
        return np.full(np.shape(x), float(self.sigma))

    def to_dict(self):
        return {"family": "constant", "sigma": self.sigma}


@dataclass(frozen=True)
class CKLS(DiffusionSpec):
    """Power diffusion ``A x^B`` on the positive half-line.

    Simulation reflects at ``floor``; evaluation on a nonpositive state raises.
    """

    A: float
    B: float
    floor: float = 1e-8

    family = "ckls"
    requires_positive_state = True

    def __post_init__(self):
        if not self.A > 0:
            raise ParameterError(f"CKLS diffusion needs A > 0, got {self.A}")
        if not self.B >= 0:
            raise ParameterError(f"CKLS diffusion needs B >= 0, got {self.B}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("CKLS diffusion evaluated at a nonpositive state")
        return self.A * x ** self.B

    def to_dict(self):
        return {"family": "ckls", "A": self.A, "B": self.B}


def diffusion_from_dict(d: dict) -> DiffusionSpec:
    fam = d.get("family")
    if fam == "constant":
        return Constant(float(d.get("sigma", 1.0)))
    if fam == "ckls":
        return CKLS(float(d["A"]), float(d["B"]))
    raise ParameterError(f"unknown diffusion family {fam!r}")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Parameter vector with names and closed per-coordinate bounds."""

    values: np.ndarray
    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if not (len(v) == len(lo) == len(hi) == len(self.names)):
            raise ParameterError("values, names and bounds must have equal length")
        if not np.all(np.isfinite(v)):
            raise ParameterError(f"non-finite parameter values {v}")
        if np.any(lo > hi):
            raise ParameterError("lower bound above upper bound")
        bad = (v < lo) | (v > hi)
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise ParameterError(
                f"{self.names[j]}={v[j]} outside bounds [{lo[j]}, {hi[j]}]")
        for a in (v, lo, hi):
            a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return len(self.values)

    def __getitem__(self, j):
        if isinstance(j, str):
            j = self.names.index(j)
        return float(self.values[j])

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype)

    def __eq__(self, other):
        return (isinstance(other, ThetaVector) and self.names == other.names
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __repr__(self):
        body = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.names, self.values))
        return f"ThetaVector({body})"

    def with_values(self, values) -> "ThetaVector":
        return ThetaVector(values, self.names, self.lower, self.upper)

    def replace(self, j: int, value: float) -> "ThetaVector":
        v = self.values.copy()
        v[j] = value
        return self.with_values(v)

    def clamp(self, values) -> "ThetaVector":
        return self.with_values(np.clip(np.asarray(values, dtype=float), self.lower, self.upper))

    def on_boundary(self) -> np.ndarray:
        return (self.values <= self.lower) | (self.values >= self.upper)

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Drift family, diffusion and the bounded parameter space.

    ``diffusion`` is either one :class:`DiffusionSpec` shared by all subjects or
    a sequence with one entry per subject.
    """

    drift: DriftSpec
    diffusion: object = field(default_factory=Constant)
    bounds: tuple | None = None
    names: tuple | None = None

    def __post_init__(self):
        if isinstance(self.diffusion, (list, tuple)):
            object.__setattr__(self, "diffusion", tuple(self.diffusion))
        d = self.dim
        bounds = self.bounds
        if bounds is None:
            bounds = [(-10.0, 10.0)] * d
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(bounds) != d:
            raise ParameterError(f"{len(bounds)} bounds for {d} parameters")
        object.__setattr__(self, "bounds", bounds)
        names = self.names
        if names is None:
            names = tuple(f"xi{l}" for l in range(self.drift.n_xi)) + tuple(self.drift.factor.names)
        if len(names) != d:
            raise ParameterError(f"{len(names)} names for {d} parameters")
        object.__setattr__(self, "names", tuple(names))

    @property
    def dim(self) -> int:
        return self.drift.n_xi + self.drift.q

    @property
    def p(self) -> int:
        return self.drift.p

    @property
    def linear(self) -> bool:
        return bool(self.drift.factor.linear)

    @property
    def identifiable(self) -> bool:
        # a free linear factor can trade scale with xi
        return not (self.linear and self.drift.q > 0)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    def theta(self, values) -> ThetaVector:
        return ThetaVector(values, self.names, self.lower, self.upper)

    def clamp(self, values) -> ThetaVector:
        return ThetaVector(np.clip(np.asarray(values, dtype=float), self.lower, self.upper),
                           self.names, self.lower, self.upper)

    def split(self, values):
        """``(xi, beta)`` views of a parameter array."""
        v = np.asarray(values, dtype=float)
        k = self.drift.n_xi
        return v[..., :k], v[..., k:]

    def diffusion_for(self, i: int) -> DiffusionSpec:
        if isinstance(self.diffusion, tuple):
            return self.diffusion[i]
        return self.diffusion

    # -- linear families: drift = features @ kron(xi, beta)

    @property
    def n_coefficients(self) -> int:
        return self.drift.n_xi * self.drift.factor.width

    def coefficients(self, values) -> np.ndarray:
        """Identified coefficients ``kron(xi, beta)``; pairwise products in the product model."""
        xi, beta = self.split(values)
        bc = self.drift.factor.coefficients(beta) if self.drift.q else np.ones(1)
        return np.kron(xi, bc)

    def coefficient_names(self) -> list[str]:
        k = self.drift.n_xi
        if self.drift.q == 0:
            return list(self.names[:k])
        return [f"{a}*{b}" for a in self.names[:k] for b in self.names[k:]]

    def coefficient_jacobian(self, values) -> np.ndarray:
        """``d coefficients / d theta`` with shape (n_coefficients, dim)."""
        xi, beta = self.split(values)
        n_xi = self.drift.n_xi
        r = self.drift.factor.width
        J = np.zeros((n_xi * r, self.dim))
        bc = self.drift.factor.coefficients(beta) if self.drift.q else np.ones(1)
        for l in range(n_xi):
            J[l * r:(l + 1) * r, l] = bc
        for s in range(self.drift.q):
            J[s::r, n_xi + s] = xi
        return J

    def to_dict(self) -> dict:
        if isinstance(self.diffusion, tuple):
            diff = [d.to_dict() for d in self.diffusion]
        else:
            diff = self.diffusion.to_dict()
        return {
            "drift": self.drift.to_dict(),
            "diffusion": diff,
            "bounds": [list(b) for b in self.bounds],
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        dr = d.get("drift", {})
        drift = DriftSpec(
            transforms=tuple(dr.get("transforms", ())),
            factor=factor_from_name(dr.get("factor", "affine")),
            covariate_ranges=dr.get("covariate_ranges"),
        )
        diff = d.get("diffusion", {"family": "constant", "sigma": 1.0})
        if isinstance(diff, list):
            diffusion = tuple(diffusion_from_dict(x) for x in diff)
        else:
            diffusion = diffusion_from_dict(diff)
        return cls(drift, diffusion, bounds=d.get("bounds"), names=d.get("names"))
