"""Covariance functions as immutable, composable expression trees.

Every kernel exposes

* ``k(X, X2=None)`` -- the Gram matrix (symmetrized when ``X2`` is omitted),
* ``k.eval(x, x2)`` -- a single covariance value,
* ``k.grad_theta(X)`` -- one ``n x n`` matrix per hyperparameter,
* ``k.params()`` / ``k.with_values(values)`` -- the flattened hyperparameter
  layout, in natural (not log) units.

Kernels combine with ``+`` and ``*``. The text form produced by ``str(k)``
is parsed back by :func:`parse_kernel`::

    SE(sigma=1,l=0.5) * EXP(sigma=1,l=2) + RQ(sigma=1,alpha=1,l=1)

Layout convention: parameters are listed leaf by leaf, left to right, and
within a leaf in the order of its constructor arguments. Vector-valued
parameters expand to ``name[i]`` entries; SE length scales of inactive
dimensions are not part of the layout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgument
from .linalg import symmetrize

__all__ = [
    "Kernel",
    "Linear",
    "SquaredExponential",
    "Exponential",
    "RationalQuadratic",
    "Matern32",
    "Matern52",
    "PeriodicExponential",
    "SpectralMixture",
    "Sum",
    "Product",
    "Param",
    "parse_kernel",
    "gram",
    "grad_theta",
]


class Param(NamedTuple):
    name: str
    value: float
    positive: bool = True


def as_points(X) -> np.ndarray:
    """Coerce inputs to an ``(n, d)`` float array; 1-D input means d = 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return X[:, None]
    if X.ndim != 2:
        raise InvalidArgument(f"inputs must be 1-D or 2-D, got shape {X.shape}")
    return X


def _positive(name, values, allow_zero=False):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} must be finite")
    bad = arr < 0 if allow_zero else arr <= 0
    if np.any(bad):
        bound = "non-negative" if allow_zero else "strictly positive"
        raise InvalidArgument(f"{name} must be {bound}, got {values!r}")
    return tuple(float(v) for v in arr)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmt_vec(values) -> str:
    if len(values) == 1:
        return _fmt(values[0])
    return "[" + ",".join(_fmt(v) for v in values) + "]"


class Kernel:
    """Base class; subclasses are frozen dataclasses."""

    tag = "?"

    # -- layout ---------------------------------------------------------
    def params(self) -> list[Param]:
        raise NotImplementedError

    def with_values(self, values: Sequence[float]) -> "Kernel":
        """Return a copy with hyperparameters replaced (layout order)."""
        values = list(np.asarray(values, dtype=float).ravel())
        if len(values) != self.n_params:
            raise InvalidArgument(
                f"expected {self.n_params} hyperparameters, got {len(values)}"
            )
        return self._rebuild(values)

    @property
    def n_params(self) -> int:
        return len(self.params())

    def _rebuild(self, values: list) -> "Kernel":
        raise NotImplementedError

    def required_dim(self) -> int | None:
        return None

    # -- evaluation -----------------------------------------------------
    def _check(self, X, X2):
        X = as_points(X)
        X2 = X if X2 is None else as_points(X2)
        if X.shape[1] != X2.shape[1]:
            raise InvalidArgument(
                f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}"
            )
        d = self.required_dim()
        if d is not None and X.shape[1] != d:
            raise InvalidArgument(
                f"kernel {self.tag} expects {d}-dimensional inputs, got {X.shape[1]}"
            )
        return X, X2

    def __call__(self, X, X2=None) -> np.ndarray:
        same = X2 is None
        X, X2 = self._check(X, X2)
        K = self._matrix(X, X2)
        return symmetrize(K) if same else K

    def eval(self, x, x2) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if x.ndim != 1 or x2.ndim != 1:
            raise InvalidArgument("eval expects two single points")
        return float(self(x[None, :], x2[None, :])[0, 0])

    def diag(self, X) -> np.ndarray:
        X = as_points(X)
        step = 256
        return np.concatenate(
            [np.diag(self._matrix(X[i : i + step], X[i : i + step])) for i in range(0, len(X), step)]
        ) if len(X) else np.empty(0)

    def grad_theta(self, X, X2=None) -> list[np.ndarray]:
        """Derivatives of the Gram matrix w.r.t. each hyperparameter."""
        same = X2 is None
        X, X2 = self._check(X, X2)
        grads = self._grads(X, X2)
        return [symmetrize(g) for g in grads] if same else grads

    def _matrix(self, X, X2):
        raise NotImplementedError

    def _grads(self, X, X2):
        raise NotImplementedError

    # -- algebra --------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        return Sum(self, other)

    def __mul__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        return Product(self, other)

    def leaves(self) -> list["Kernel"]:
        return [self]

    def __str__(self):
        return self.to_string()

    def to_string(self) -> str:
        raise NotImplementedError


def _diffs(X, X2):
    return X[:, None, :] - X2[None, :, :]


def _sqdist(X, X2):
    d = _diffs(X, X2)
    return np.einsum("ijk,ijk->ij", d, d)


# ---------------------------------------------------------------------------
# leaf kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Linear(Kernel):
    """``sigma^2 * x^T x'``."""

    sigma: float = 1.0
    tag = "LIN"

    def __post_init__(self):
        _positive("sigma", self.sigma)

    def params(self):
        return [Param("sigma", self.sigma)]

    def _rebuild(self, values):
        return Linear(sigma=values.pop(0))

    def _matrix(self, X, X2):
        return self.sigma**2 * (X @ X2.T)

    def _grads(self, X, X2):
        return [2.0 * self.sigma * (X @ X2.T)]

    def to_string(self):
        return f"LIN(sigma={_fmt(self.sigma)})"


@dataclass(frozen=True)
class SquaredExponential(Kernel):
    """ARD squared exponential, ``sigma^2 exp(-1/2 sum_j tau_j (x_j - x'_j)^2)``.

    ``tau_j = 1 / l_j^2``. A single length scale is shared by every
    dimension. Dimensions listed in ``inactive`` get ``tau_j = 0``: the
    kernel ignores them and their length scale leaves the layout.
    """

    sigma: float = 1.0
    lengthscale: tuple = (1.0,)
    inactive: tuple = ()
    tag = "SE"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        object.__setattr__(self, "lengthscale", _positive("l", self.lengthscale))
        inactive = tuple(sorted({int(j) for j in np.atleast_1d(self.inactive)}))
        if any(j < 0 for j in inactive):
            raise InvalidArgument("inactive dimensions must be non-negative")
        object.__setattr__(self, "inactive", inactive)

    @property
    def ard(self):
        return len(self.lengthscale) > 1

    def required_dim(self):
        return len(self.lengthscale) if self.ard else None

    def _active_ls(self):
        return [j for j in range(len(self.lengthscale)) if j not in self.inactive]

    def params(self):
        out = [Param("sigma", self.sigma)]
        if self.ard:
            out += [Param(f"l[{j}]", self.lengthscale[j]) for j in self._active_ls()]
        else:
            out.append(Param("l", self.lengthscale[0]))
        return out

    def _rebuild(self, values):
        sigma = values.pop(0)
        ls = list(self.lengthscale)
        if self.ard:
            for j in self._active_ls():
                ls[j] = values.pop(0)
        else:
            ls[0] = values.pop(0)
        return SquaredExponential(sigma, tuple(ls), self.inactive)

    def _tau(self, d):
        if self.ard:
            tau = 1.0 / np.asarray(self.lengthscale) ** 2
        else:
            tau = np.full(d, 1.0 / self.lengthscale[0] ** 2)
        mask = np.ones(d, dtype=bool)
        for j in self.inactive:
            if j < d:
                mask[j] = False
        return np.where(mask, tau, 0.0), mask

    def _matrix(self, X, X2):
        tau, _ = self._tau(X.shape[1])
        D = _diffs(X, X2)
        return self.sigma**2 * np.exp(-0.5 * np.einsum("ijk,k->ij", D * D, tau))

    def _grads(self, X, X2):
        K = self._matrix(X, X2)
        D2 = _diffs(X, X2) ** 2
        grads = [2.0 * K / self.sigma]
        if self.ard:
            for j in self._active_ls():
                grads.append(K * D2[:, :, j] / self.lengthscale[j] ** 3)
        else:
            _, mask = self._tau(X.shape[1])
            r2 = D2[:, :, mask].sum(axis=2)
            grads.append(K * r2 / self.lengthscale[0] ** 3)
        return grads

    def to_string(self):
        s = f"SE(sigma={_fmt(self.sigma)},l={_fmt_vec(self.lengthscale)}"
        if self.inactive:
            s += ",inactive=" + (
                str(self.inactive[0])
                if len(self.inactive) == 1
                else "[" + ",".join(str(j) for j in self.inactive) + "]"
            )
        return s + ")"


@dataclass(frozen=True)
class Exponential(Kernel):
    """``sigma^2 exp(-||x - x'|| / (2 l))``, the curve-fitting EXP kernel."""

    sigma: float = 1.0
    lengthscale: float = 1.0
    tag = "EXP"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _positive("l", self.lengthscale)

    def params(self):
        return [Param("sigma", self.sigma), Param("l", self.lengthscale)]

    def _rebuild(self, values):
        return Exponential(values.pop(0), values.pop(0))

    def _matrix(self, X, X2):
        r = np.sqrt(_sqdist(X, X2))
        return self.sigma**2 * np.exp(-r / (2.0 * self.lengthscale))

    def _grads(self, X, X2):
        r = np.sqrt(_sqdist(X, X2))
        K = self.sigma**2 * np.exp(-r / (2.0 * self.lengthscale))
        return [2.0 * K / self.sigma, K * r / (2.0 * self.lengthscale**2)]

    def to_string(self):
        return f"EXP(sigma={_fmt(self.sigma)},l={_fmt(self.lengthscale)})"


@dataclass(frozen=True)
class RationalQuadratic(Kernel):
    """``sigma^2 (1 + r^2 / (2 alpha l^2))^(-alpha)``."""

    sigma: float = 1.0
    alpha: float = 1.0
    lengthscale: float = 1.0
    tag = "RQ"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _positive("alpha", self.alpha)
        _positive("l", self.lengthscale)

    def params(self):
        return [
            Param("sigma", self.sigma),
            Param("alpha", self.alpha),
            Param("l", self.lengthscale),
        ]

    def _rebuild(self, values):
        return RationalQuadratic(values.pop(0), values.pop(0), values.pop(0))

    def _base(self, X, X2):
        r2 = _sqdist(X, X2)
        return r2, 1.0 + r2 / (2.0 * self.alpha * self.lengthscale**2)

    def _matrix(self, X, X2):
        _, B = self._base(X, X2)
        return self.sigma**2 * B ** (-self.alpha)

    def _grads(self, X, X2):
        a, ell = self.alpha, self.lengthscale
        r2, B = self._base(X, X2)
        K = self.sigma**2 * B ** (-a)
        d_alpha = K * (-np.log(B) + r2 / (2.0 * a * ell**2 * B))
        d_ell = K * r2 / (ell**3 * B)
        return [2.0 * K / self.sigma, d_alpha, d_ell]

    def to_string(self):
        return (
            f"RQ(sigma={_fmt(self.sigma)},alpha={_fmt(self.alpha)},"
            f"l={_fmt(self.lengthscale)})"
        )


@dataclass(frozen=True)
class Matern32(Kernel):
    """``sigma^2 (1 + a) exp(-a)`` with ``a = sqrt(3) r / l``.

    The amplitude is an addition for composability; ``sigma = 1`` gives the
    textbook unit-variance form.
    """

    sigma: float = 1.0
    lengthscale: float = 1.0
    tag = "M32"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _positive("l", self.lengthscale)

    def params(self):
        return [Param("sigma", self.sigma), Param("l", self.lengthscale)]

    def _rebuild(self, values):
        return type(self)(values.pop(0), values.pop(0))

    def _a(self, X, X2):
        return math.sqrt(3.0) * np.sqrt(_sqdist(X, X2)) / self.lengthscale

    def _matrix(self, X, X2):
        a = self._a(X, X2)
        return self.sigma**2 * (1.0 + a) * np.exp(-a)

    def _grads(self, X, X2):
        a = self._a(X, X2)
        e = np.exp(-a)
        K = self.sigma**2 * (1.0 + a) * e
        return [2.0 * K / self.sigma, self.sigma**2 * a * a * e / self.lengthscale]

    def to_string(self):
        return f"{self.tag}(sigma={_fmt(self.sigma)},l={_fmt(self.lengthscale)})"


@dataclass(frozen=True)
class Matern52(Matern32):
    """``sigma^2 (1 + a + a^2/3) exp(-a)`` with ``a = sqrt(5) r / l``."""

    tag = "M52"

    def _a(self, X, X2):
        return math.sqrt(5.0) * np.sqrt(_sqdist(X, X2)) / self.lengthscale

    def _matrix(self, X, X2):
        a = self._a(X, X2)
        return self.sigma**2 * (1.0 + a + a * a / 3.0) * np.exp(-a)

    def _grads(self, X, X2):
        a = self._a(X, X2)
        e = np.exp(-a)
        K = self.sigma**2 * (1.0 + a + a * a / 3.0) * e
        d_ell = self.sigma**2 * a * a * (1.0 + a) * e / (3.0 * self.lengthscale)
        return [2.0 * K / self.sigma, d_ell]


@dataclass(frozen=True)
class PeriodicExponential(Kernel):
    """``sigma^2 exp(-1/2 sum_j sin^2(pi (x_j - x'_j) / lambda_j) / l_j^2)``.

    Length scales and periods are either one shared value or one per input
    dimension.
    """

    sigma: float = 1.0
    lengthscale: tuple = (1.0,)
    period: tuple = (1.0,)
    tag = "PER"

    def __post_init__(self):
        _positive("sigma", self.sigma)
        object.__setattr__(self, "lengthscale", _positive("l", self.lengthscale))
        object.__setattr__(self, "period", _positive("period", self.period))

    def required_dim(self):
        dims = {len(self.lengthscale), len(self.period)} - {1}
        if len(dims) > 1:
            raise InvalidArgument("PER length scales and periods disagree on dimension")
        return dims.pop() if dims else None

    def params(self):
        out = [Param("sigma", self.sigma)]
        for name, vec in (("l", self.lengthscale), ("period", self.period)):
            if len(vec) == 1:
                out.append(Param(name, vec[0]))
            else:
                out += [Param(f"{name}[{j}]", v) for j, v in enumerate(vec)]
        return out

    def _rebuild(self, values):
        sigma = values.pop(0)
        ls = tuple(values.pop(0) for _ in self.lengthscale)
        per = tuple(values.pop(0) for _ in self.period)
        return PeriodicExponential(sigma, ls, per)

    def _parts(self, X, X2):
        d = X.shape[1]
        ell = np.broadcast_to(np.asarray(self.lengthscale), (d,))
        lam = np.broadcast_to(np.asarray(self.period), (d,))
        D = _diffs(X, X2)
        arg = np.pi * D / lam
        S = np.sin(arg)
        K = self.sigma**2 * np.exp(-0.5 * np.einsum("ijk,k->ij", S * S, 1.0 / ell**2))
        return D, arg, S, K, ell, lam

    def _matrix(self, X, X2):
        return self._parts(X, X2)[3]

    def _grads(self, X, X2):
        D, arg, S, K, ell, lam = self._parts(X, X2)
        d_ell = K[:, :, None] * S * S / ell**3
        d_lam = K[:, :, None] * S * np.cos(arg) * np.pi * D / (ell**2 * lam**2)
        grads = [2.0 * K / self.sigma]
        for vec, block in ((self.lengthscale, d_ell), (self.period, d_lam)):
            if len(vec) == 1:
                grads.append(block.sum(axis=2))
            else:
                grads += [block[:, :, j] for j in range(len(vec))]
        return grads

    def to_string(self):
        return (
            f"PER(sigma={_fmt(self.sigma)},l={_fmt_vec(self.lengthscale)},"
            f"period={_fmt_vec(self.period)})"
        )


@dataclass(frozen=True)
class SpectralMixture(Kernel):
    """``sum_m w_m cos(2 pi s^T mu_m) exp(-2 pi^2 s^T diag(v_m) s)``, ``s = x - x'``.

    ``weights`` has shape ``(Q,)``, ``means`` and ``variances`` ``(Q, d)``.
    Means are unconstrained reals; weights may be zero.
    """

    weights: tuple = (1.0,)
    means: tuple = ((0.0,),)
    variances: tuple = ((1.0,),)
    tag = "SM"

    def __post_init__(self):
        w = _positive("w", self.weights, allow_zero=True)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if mu.shape != var.shape or mu.shape[0] != len(w):
            raise InvalidArgument(
                f"SM shapes disagree: w {len(w)}, mu {mu.shape}, var {var.shape}"
            )
        if not np.all(np.isfinite(mu)):
            raise InvalidArgument("mu must be finite")
        _positive("var", var.ravel())
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", tuple(tuple(r) for r in mu.tolist()))
        object.__setattr__(self, "variances", tuple(tuple(r) for r in var.tolist()))

    def required_dim(self):
        return len(self.means[0])

    def params(self):
        out = [Param(f"w[{m}]", w) for m, w in enumerate(self.weights)]
        for m, row in enumerate(self.means):
            out += [Param(f"mu[{m}][{j}]", v, positive=False) for j, v in enumerate(row)]
        for m, row in enumerate(self.variances):
            out += [Param(f"var[{m}][{j}]", v) for j, v in enumerate(row)]
        return out

    def _rebuild(self, values):
        q, d = len(self.weights), len(self.means[0])
        w = [values.pop(0) for _ in range(q)]
        mu = [[values.pop(0) for _ in range(d)] for _ in range(q)]
        var = [[values.pop(0) for _ in range(d)] for _ in range(q)]
        return SpectralMixture(tuple(w), tuple(map(tuple, mu)), tuple(map(tuple, var)))

    def _components(self, X, X2):
        D = _diffs(X, X2)
        mu = np.asarray(self.means)
        var = np.asarray(self.variances)
        phase = 2.0 * np.pi * np.einsum("ijk,mk->mij", D, mu)
        env = np.exp(-2.0 * np.pi**2 * np.einsum("ijk,mk->mij", D * D, var))
        return D, phase, env

    def _matrix(self, X, X2):
        _, phase, env = self._components(X, X2)
        return np.einsum("m,mij->ij", np.asarray(self.weights), np.cos(phase) * env)

    def _grads(self, X, X2):
        D, phase, env = self._components(X, X2)
        w = np.asarray(self.weights)
        cos, sin = np.cos(phase), np.sin(phase)
        grads = [cos[m] * env[m] for m in range(len(w))]
        d = D.shape[2]
        for m in range(len(w)):
            for j in range(d):
                grads.append(-w[m] * sin[m] * env[m] * 2.0 * np.pi * D[:, :, j])
        for m in range(len(w)):
            for j in range(d):
                grads.append(-2.0 * np.pi**2 * w[m] * cos[m] * env[m] * D[:, :, j] ** 2)
        return grads

    def to_string(self):
        def mat(rows):
            return "[" + ",".join("[" + ",".join(_fmt(v) for v in r) + "]" for r in rows) + "]"

        w = "[" + ",".join(_fmt(v) for v in self.weights) + "]"
        return f"SM(w={w},mu={mat(self.means)},var={mat(self.variances)})"


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Binary(Kernel):
    left: Kernel
    right: Kernel

    def leaves(self):
        return self.left.leaves() + self.right.leaves()

    def params(self):
        out = []
        for i, leaf in enumerate(self.leaves()):
            out += [p._replace(name=f"{leaf.tag}#{i}.{p.name}") for p in leaf.params()]
        return out

    def _rebuild(self, values):
        return type(self)(self.left._rebuild(values), self.right._rebuild(values))

    def required_dim(self):
        dims = {self.left.required_dim(), self.right.required_dim()} - {None}
        if len(dims) > 1:
            raise InvalidArgument(f"operands of {self.tag} disagree on input dimension")
        return dims.pop() if dims else None


@dataclass(frozen=True)
class Sum(_Binary):
    tag = "+"

    def _matrix(self, X, X2):
        return self.left._matrix(X, X2) + self.right._matrix(X, X2)

    def _grads(self, X, X2):
        return self.left._grads(X, X2) + self.right._grads(X, X2)

    def to_string(self):
        return f"{self.left.to_string()} + {self.right.to_string()}"


@dataclass(frozen=True)
class Product(_Binary):
    tag = "*"

    def _matrix(self, X, X2):
        return self.left._matrix(X, X2) * self.right._matrix(X, X2)

    def _grads(self, X, X2):
        KL = self.left._matrix(X, X2)
        KR = self.right._matrix(X, X2)
        return [g * KR for g in self.left._grads(X, X2)] + [
            KL * g for g in self.right._grads(X, X2)
        ]

    def to_string(self):
        def wrap(k):
            s = k.to_string()
            return f"({s})" if isinstance(k, Sum) else s

        return f"{wrap(self.left)} * {wrap(self.right)}"


def gram(k: Kernel, X, X2=None) -> np.ndarray:
    return k(X, X2)


def grad_theta(k: Kernel, X) -> list[np.ndarray]:
    return k.grad_theta(X)


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[()\[\],=*+]))"
)


def _tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise InvalidArgument(f"cannot parse kernel expression at {text[pos:]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


def _arg(args, *names, default=None, required=False):
    for n in names:
        if n in args:
            return args.pop(n)
    if required:
        raise InvalidArgument(f"missing parameter {names[0]!r}")
    return default


def _build_sm(args):
    w = np.atleast_1d(_arg(args, "w", "weights", required=True))
    mu = np.atleast_2d(_arg(args, "mu", "means", required=True))
    var = np.atleast_2d(_arg(args, "var", "variances", required=True))
    return SpectralMixture(tuple(w), tuple(map(tuple, mu)), tuple(map(tuple, var)))


_BUILDERS = {
    "LIN": lambda a: Linear(sigma=_arg(a, "sigma", default=1.0)),
    "LINEAR": lambda a: Linear(sigma=_arg(a, "sigma", default=1.0)),
    "SE": lambda a: SquaredExponential(
        sigma=_arg(a, "sigma", default=1.0),
        lengthscale=tuple(np.atleast_1d(_arg(a, "l", "lengthscale", default=1.0))),
        inactive=tuple(np.atleast_1d(_arg(a, "inactive", default=())).astype(int)),
    ),
    "EXP": lambda a: Exponential(
        sigma=_arg(a, "sigma", default=1.0), lengthscale=_arg(a, "l", "lengthscale", default=1.0)
    ),
    "RQ": lambda a: RationalQuadratic(
        sigma=_arg(a, "sigma", default=1.0),
        alpha=_arg(a, "alpha", default=1.0),
        lengthscale=_arg(a, "l", "lengthscale", default=1.0),
    ),
    "M32": lambda a: Matern32(
        sigma=_arg(a, "sigma", default=1.0), lengthscale=_arg(a, "l", "lengthscale", default=1.0)
    ),
    "M52": lambda a: Matern52(
        sigma=_arg(a, "sigma", default=1.0), lengthscale=_arg(a, "l", "lengthscale", default=1.0)
    ),
    "PER": lambda a: PeriodicExponential(
        sigma=_arg(a, "sigma", default=1.0),
        lengthscale=tuple(np.atleast_1d(_arg(a, "l", "lengthscale", default=1.0))),
        period=tuple(np.atleast_1d(_arg(a, "period", "lambda", default=1.0))),
    ),
    "SM": _build_sm,
}
_BUILDERS["MATERN32"] = _BUILDERS["M32"]
_BUILDERS["MATERN52"] = _BUILDERS["M52"]
_BUILDERS["PE"] = _BUILDERS["PER"]


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise InvalidArgument(f"expected {value!r} in kernel expression, got {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self):
        k = self.term()
        while self.peek()[1] == "+":
            self.take("+")
            k = Sum(k, self.term())
        return k

    def term(self):
        k = self.factor()
        while self.peek()[1] == "*":
            self.take("*")
            k = Product(k, self.factor())
        return k

    def factor(self):
        kind, val = self.peek()
        if val == "(":
            self.take("(")
            k = self.expr()
            self.take(")")
            return k
        if kind != "name":
            raise InvalidArgument(f"expected kernel name, got {val!r}")
        self.take()
        builder = _BUILDERS.get(val.upper())
        if builder is None:
            raise InvalidArgument(f"unknown kernel {val!r}")
        self.take("(")
        args = {}
        while self.peek()[1] != ")":
            name = self.take()[1]
            self.take("=")
            args[name] = self.value()
            if self.peek()[1] == ",":
                self.take(",")
        self.take(")")
        kernel = builder(args)
        if args:
            raise InvalidArgument(f"unknown parameter(s) for {val}: {sorted(args)}")
        return kernel

    def value(self):
        kind, val = self.peek()
        if val == "[":
            self.take("[")
            items = [self.value()]
            while self.peek()[1] == ",":
                self.take(",")
                items.append(self.value())
            self.take("]")
            return items
        if kind != "num":
            raise InvalidArgument(f"expected a number, got {val!r}")
        self.take()
        return float(val)


def parse_kernel(text: str) -> Kernel:
    """Parse the text form of a kernel expression (``*`` binds tighter than ``+``)."""
    p = _Parser(text)
    k = p.expr()
    if p.i != len(p.toks):
        raise InvalidArgument(f"trailing input in kernel expression: {p.toks[p.i][1]!r}")
    return k
