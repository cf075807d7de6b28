"""Fit readable primitive formulas ``c * f(a*x + b) + d`` to edge activations.

For every primitive the inner affine map ``(a, b)`` is chosen by a coarse
grid search followed by Nelder-Mead; the outer ``(c, d)`` is always the
closed-form least-squares solution for the current ``(a, b)``. Power-like
primitives are reported in a canonical form with ``a = 1`` (their scale is
absorbed into ``c``), so the same curve always yields the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import KanNetwork
from .errors import InvalidInputError
from .spline import SplineFunction, spline_eval

EPS_LOG = 1e-6
EPS_DIV = 1e-6
TIE_TOL = 1e-9
ZERO_VAR = 1e-12
A_GRID = (0.2, 0.5, 1.0, 2.0, 5.0, -0.2, -0.5, -1.0, -2.0, -5.0)
B_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)


def _inv(u):
    return 1.0 / np.where(np.abs(u) < EPS_DIV, np.where(u < 0, -EPS_DIV, EPS_DIV), u)


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: object
    template: str
    # f(l*u) = l**power * f(u) for l > 0; None if not homogeneous
    power: float | None = None
    parity: int = 0  # +1 even, -1 odd, 0 neither


PRIMITIVES = (
    Primitive("x", lambda u: u, "({})", 1.0, -1),
    Primitive("x^2", lambda u: u * u, "({})^2", 2.0, 1),
    Primitive("x^3", lambda u: u * u * u, "({})^3", 3.0, -1),
    Primitive("1/x", _inv, "1/({})", -1.0, -1),
    Primitive("sqrt|x|", lambda u: np.sqrt(np.abs(u)), "sqrt(|{}|)", 0.5, 1),
    Primitive("|x|", np.abs, "|{}|", 1.0, 1),
    Primitive("exp", lambda u: np.exp(np.clip(u, -50.0, 50.0)), "exp({})"),
    Primitive("log", lambda u: np.log(np.abs(u) + EPS_LOG), "log(|{}|)"),
    Primitive("sin", np.sin, "sin({})"),
    Primitive("cos", np.cos, "cos({})", None, 1),
    Primitive("tanh", np.tanh, "tanh({})"),
    Primitive("constant", lambda u: np.ones_like(u), "1"),
)

LIBRARY = {p.name: p for p in PRIMITIVES}


def r_squared(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    resid = y - pred
    sse = float(resid @ resid) / y.size
    yc = y - y.mean()
    var = float(yc @ yc) / y.size
    if var < ZERO_VAR:
        return 1.0 if sse < ZERO_VAR else 0.0
    return 1.0 - sse / var


@dataclass
class SymbolicFit:
    primitive: str
    a: float
    b: float
    c: float
    d: float
    r_squared: float
    edge: tuple[int, int, int] | None = None

    def evaluate(self, x):
        u = self.a * np.asarray(x, dtype=float) + self.b
        return self.c * LIBRARY[self.primitive].fn(u) + self.d

    def render(self, var: str = "x") -> str:
        prim = LIBRARY[self.primitive]
        if prim.name == "constant":
            return _num(self.d)
        inner = _affine(self.a, var, self.b)
        body = prim.template.format(inner)
        out = body if self.c == 1.0 else f"{_num(self.c)}*{body}"
        if self.d != 0.0:
            out += f" - {_num(-self.d)}" if self.d < 0 else f" + {_num(self.d)}"
        return out

    def to_dict(self) -> dict:
        d = {"primitive": self.primitive, "a": self.a, "b": self.b, "c": self.c,
             "d": self.d, "r_squared": self.r_squared}
        if self.edge is not None:
            d["layer"], d["q"], d["p"] = self.edge
        return d


def _num(v: float) -> str:
    return f"{v:.4g}"


def _affine(a: float, var: str, b: float) -> str:
    s = var if a == 1.0 else f"{_num(a)}*{var}"
    if b > 0:
        s += f" + {_num(b)}"
    elif b < 0:
        s += f" - {_num(-b)}"
    return s


def _outer(u: np.ndarray, y: np.ndarray):
    """Least-squares ``(c, d)`` for ``y ~ c*u + d`` along the last axis."""
    um = u.mean(axis=-1, keepdims=True)
    uc = u - um
    ym = y.mean()
    var = (uc * uc).sum(axis=-1)
    cov = uc @ (y - ym)
    ok = np.isfinite(var) & (var > 1e-300)
    c = np.where(ok, cov / np.where(ok, var, 1.0), 0.0)
    d = ym - c * np.where(ok, um[..., 0], 0.0)
    return c, d


def _sse(prim: Primitive, x, y, a, b):
    u = prim.fn(a * x + b)
    if not np.all(np.isfinite(u)):
        return np.inf, 0.0, float(y.mean())
    c, d = _outer(u, y)
    r = y - (c * u + d)
    return float(r @ r), float(c), float(d)


def _canonical(prim: Primitive, a, b, c, d):
    if prim.name == "x":
        return 1.0, 0.0, c * a, c * b + d
    if prim.power is None or a == 0.0:
        if prim.parity == 1 and a < 0:
            return -a, -b, c, d
        return a, b, c, d
    scale = abs(a)
    b = b / scale
    c = c * scale ** prim.power
    a = a / scale
    if a < 0:
        # f(-x + b) = parity * f(x - b)
        b = -b
        c = c * prim.parity
    return 1.0, b, c, d


def fit_primitive(prim: Primitive, x, y) -> SymbolicFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if prim.name == "constant":
        d = float(y.mean())
        return SymbolicFit(prim.name, 1.0, 0.0, 0.0, d, r_squared(y, np.full_like(y, d)))
    if prim.name == "x":
        # linear in x: the affine search is redundant
        _, c, d = _sse(prim, x, y, 1.0, 0.0)
        return SymbolicFit(prim.name, 1.0, 0.0, c, d, r_squared(y, c * x + d))
    ag, bg = np.meshgrid(np.array(A_GRID), np.array(B_GRID), indexing="ij")
    ag, bg = ag.ravel(), bg.ravel()
    with np.errstate(all="ignore"):
        u = prim.fn(ag[:, None] * x[None, :] + bg[:, None])
        c, d = _outer(u, y)
        resid = y[None, :] - (c[:, None] * u + d[:, None])
        sse = np.where(np.all(np.isfinite(u), axis=1), (resid * resid).sum(axis=1), np.inf)
    start = int(np.argmin(sse))
    best = (float(sse[start]), float(ag[start]), float(bg[start]))

    def objective(ab):
        with np.errstate(all="ignore"):
            return _sse(prim, x, y, ab[0], ab[1])[0]

    yc = y - y.mean()
    scale = float(yc @ yc)
    res = minimize(objective, np.array(best[1:]), method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-13 * scale, "maxiter": 300})
    if np.isfinite(res.fun) and res.fun < best[0]:
        best = (float(res.fun), float(res.x[0]), float(res.x[1]))
    _, a, b = best
    with np.errstate(all="ignore"):
        _, c, d = _sse(prim, x, y, a, b)
    a, b, c, d = _canonical(prim, a, b, c, d)
    fit = SymbolicFit(prim.name, a, b, c, d, 0.0)
    with np.errstate(all="ignore"):
        pred = fit.evaluate(x)
    fit.r_squared = r_squared(y, pred) if np.all(np.isfinite(pred)) else -np.inf
    return fit


def fit_samples(x, y, library=PRIMITIVES) -> SymbolicFit:
    """Best primitive for samples ``(x, y)``; earlier library entries win ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yc = y - y.mean()
    if float(yc @ yc) / y.size < ZERO_VAR:
        return fit_primitive(LIBRARY["constant"], x, y)
    best = None
    for prim in library:
        fit = fit_primitive(prim, x, y)
        if best is None or fit.r_squared > best.r_squared + TIE_TOL:
            best = fit
    return best


def fit_edge(f: SplineFunction, library=PRIMITIVES, sample_count: int = 101) -> SymbolicFit:
    if sample_count < 50:
        raise InvalidInputError(f"sample_count must be >= 50, got {sample_count}")
    xs = np.linspace(f.grid.domain_lo, f.grid.domain_hi, sample_count)
    return fit_samples(xs, spline_eval(f, xs), library)


@dataclass
class SymbolicReport:
    fits: list[SymbolicFit] = field(default_factory=list)
    formulas: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"edges": [f.to_dict() for f in self.fits],
                "formulas": [{"output": i, "expression": s} for i, s in enumerate(self.formulas)]}

    def text(self) -> str:
        return "".join(f"y_{i + 1} = {s}\n" for i, s in enumerate(self.formulas))


def symbolify_network(net: KanNetwork, library=PRIMITIVES, sample_count: int = 101) -> SymbolicReport:
    """Fit every active edge and compose per-output expressions layer by layer.

    A fully masked network gives an empty report.
    """
    report = SymbolicReport()
    if not any(layer.mask.any() for layer in net.layers):
        return report
    exprs = [f"x_{p + 1}" for p in range(net.widths[0])]
    for l, layer in enumerate(net.layers):
        nxt = []
        for q in range(layer.n_out):
            terms = []
            for p in range(layer.n_in):
                if not layer.mask[q, p]:
                    continue
                fit = fit_edge(layer.edge(q, p), library, sample_count)
                fit.edge = (l, q, p)
                report.fits.append(fit)
                arg = exprs[p] if l == 0 else f"({exprs[p]})"
                terms.append(fit.render(arg))
            nxt.append(" + ".join(terms) if terms else "0")
        exprs = nxt
    report.formulas = exprs
    return report
