"""KAN layers and networks: forward/backward passes, pruning, refinement.

A layer stores its edge activations as stacked arrays rather than as a
matrix of objects so that a whole batch is evaluated with a handful of
matrix products. ``KanLayer.edge(q, p)`` returns the equivalent standalone
:class:`~kanf.spline.SplineFunction` for any single edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spline
from ._files import atomic_write_json
from .errors import CheckpointError, InvalidInputError
from .spline import KnotGrid, SplineFunction

FORMAT_VERSION = 1


@dataclass
class KanLayer:
    grid: KnotGrid
    coefficients: np.ndarray  # (n_out, n_in, G + k)
    base_weight: np.ndarray  # (n_out, n_in)
    spline_weight: np.ndarray  # (n_out, n_in)
    mask: np.ndarray  # (n_out, n_in), True = active

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.base_weight = np.asarray(self.base_weight, dtype=float)
        self.spline_weight = np.asarray(self.spline_weight, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        shape = self.base_weight.shape
        if len(shape) != 2:
            raise InvalidInputError(f"edge arrays must be 2-D, got shape {shape}")
        if (self.spline_weight.shape != shape or self.mask.shape != shape
                or self.coefficients.shape != shape + (self.grid.basis_count,)):
            raise InvalidInputError("edge parameter shapes are inconsistent")

    @property
    def n_out(self) -> int:
        return self.base_weight.shape[0]

    @property
    def n_in(self) -> int:
        return self.base_weight.shape[1]

    def edge(self, q: int, p: int) -> SplineFunction:
        return SplineFunction(self.grid, self.coefficients[q, p].copy(),
                              self.base_weight[q, p], self.spline_weight[q, p])

    def edge_values(self, x: np.ndarray) -> np.ndarray:
        """Each edge activation at its own input, shape ``(N, n_out, n_in)``.

        Masked edges are reported as zero.
        """
        return _edge_outputs(self, np.asarray(x, dtype=float))[0] * self.mask

    def copy(self) -> "KanLayer":
        return KanLayer(self.grid, self.coefficients.copy(), self.base_weight.copy(),
                        self.spline_weight.copy(), self.mask.copy())


@dataclass
class KanNetwork:
    layers: list[KanLayer]
    base_enabled: bool = True

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise InvalidInputError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        first = self.layers[0].grid
        for layer in self.layers:
            g = layer.grid
            if (g.degree, g.domain_lo, g.domain_hi) != (first.degree, first.domain_lo, first.domain_hi):
                raise InvalidInputError("all layers must share spline degree and domain")

    @classmethod
    def init(cls, widths, interior_count: int = 5, degree: int = 3, seed: int = 0,
             domain=(-1.0, 1.0), base: bool = True) -> "KanNetwork":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInputError(f"widths must list >= 2 positive sizes, got {widths}")
        grid = KnotGrid(float(domain[0]), float(domain[1]), interior_count, degree)
        rng = np.random.default_rng(seed)
        nb = grid.basis_count
        layers = []
        for n_in, n_out in zip(widths, widths[1:]):
            coef = rng.normal(0.0, 0.1 / nb, size=(n_out, n_in, nb))
            wb = np.full((n_out, n_in), 1.0 / np.sqrt(n_in) if base else 0.0)
            ws = np.ones((n_out, n_in))
            layers.append(KanLayer(grid, coef, wb, ws, np.ones((n_out, n_in), dtype=bool)))
        return cls(layers, base)

    @classmethod
    def zeros(cls, widths, interior_count: int = 5, degree: int = 3, domain=(-1.0, 1.0)) -> "KanNetwork":
        net = cls.init(widths, interior_count, degree, 0, domain, base=False)
        for layer in net.layers:
            layer.coefficients[:] = 0.0
        return net

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def degree(self) -> int:
        return self.layers[0].grid.degree

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order; updates must be in place."""
        out = []
        for layer in self.layers:
            out += [layer.coefficients, layer.base_weight, layer.spline_weight]
        return out

    def copy(self) -> "KanNetwork":
        return KanNetwork([layer.copy() for layer in self.layers], self.base_enabled)

    def same_architecture(self, other: "KanNetwork") -> bool:
        return (self.widths == other.widths
                and all(a.grid == b.grid for a, b in zip(self.layers, other.layers)))


@dataclass
class LayerGradient:
    coefficients: np.ndarray
    base_weight: np.ndarray
    spline_weight: np.ndarray


@dataclass
class GradientSet:
    layers: list[LayerGradient]
    inputs: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for g in self.layers:
            out += [g.coefficients, g.base_weight, g.spline_weight]
        return out


@dataclass
class _LayerCache:
    x: np.ndarray
    basis: np.ndarray
    branch: np.ndarray
    act: np.ndarray
    dbasis: np.ndarray | None = None


@dataclass
class ForwardCache:
    layers: list[_LayerCache]
    output_shape: tuple
    squeeze: bool


def _edge_outputs(layer: KanLayer, x: np.ndarray, derivative: bool = False):
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise InvalidInputError(f"layer expects inputs of width {layer.n_in}, got shape {x.shape}")
    if derivative:
        basis, dbasis = spline.basis_with_derivative(layer.grid, x)  # (N, n_in, nb)
    else:
        basis, dbasis = spline.basis_eval(layer.grid, x), None
    # batched over inputs: (n_in, N, nb) @ (n_in, nb, n_out) -> (n_in, N, n_out)
    branch = np.matmul(basis.transpose(1, 0, 2), layer.coefficients.transpose(1, 2, 0))
    branch = branch.transpose(1, 2, 0)  # (N, n_out, n_in)
    act = spline.silu(x)
    phi = layer.spline_weight * branch + layer.base_weight * act[:, None, :]
    return phi, _LayerCache(x, basis, branch, act, dbasis)


def layer_forward(layer: KanLayer, x: np.ndarray, derivative: bool = False):
    """Single-layer map: node ``q`` sums its active edges ``phi_{q,p}(x_p)``."""
    phi, cache = _edge_outputs(layer, x, derivative)
    return np.where(layer.mask, phi, 0.0).sum(axis=-1), cache


def _check_input(net: KanNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.widths[0]:
        raise InvalidInputError(f"network expects input width {net.widths[0]}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("network input contains non-finite values")
    return x, squeeze


def forward(net: KanNetwork, x, keep_derivatives: bool = True):
    """Evaluate ``net`` on one sample (1-D) or a batch (2-D, rows = samples).

    Returns ``(output, cache)``; the cache feeds :func:`backward`.
    """
    h, squeeze = _check_input(net, x)
    caches = []
    for layer in net.layers:
        h, c = layer_forward(layer, h, keep_derivatives)
        caches.append(c)
    cache = ForwardCache(caches, h.shape, squeeze)
    return (h[0] if squeeze else h), cache


def predict(net: KanNetwork, x) -> np.ndarray:
    return forward(net, x, keep_derivatives=False)[0]


def backward(net: KanNetwork, cache: ForwardCache, output_grad) -> GradientSet:
    g = np.asarray(output_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    if len(cache.layers) != len(net.layers) or g.shape != cache.output_shape:
        raise InvalidInputError(
            f"output gradient shape {np.shape(output_grad)} does not match the cached forward pass"
        )
    grads = []
    for layer, c in zip(reversed(net.layers), reversed(cache.layers)):
        if c.x.shape[1] != layer.n_in:
            raise InvalidInputError("cache does not belong to this network")
        mask = layer.mask
        g_edge = g[:, :, None] * mask  # (N, n_out, n_in)
        d_base = (g.T @ c.act) * mask
        if not net.base_enabled:
            d_base = np.zeros_like(d_base)
        d_spline_w = np.einsum("nqp,nqp->qp", g_edge, c.branch)
        # (n_in, n_out, N) @ (n_in, N, nb) -> (n_in, n_out, nb)
        d_coef = np.matmul(g_edge.transpose(2, 1, 0), c.basis.transpose(1, 0, 2))
        d_coef = d_coef.transpose(1, 0, 2) * layer.spline_weight[:, :, None]
        grads.append(LayerGradient(d_coef, d_base, d_spline_w))

        dbasis = c.dbasis
        if dbasis is None:
            _, dbasis = spline.basis_with_derivative(layer.grid, c.x)
        dbranch = np.matmul(dbasis.transpose(1, 0, 2), layer.coefficients.transpose(1, 2, 0))
        dbranch = dbranch.transpose(1, 2, 0)  # (N, n_out, n_in)
        dphi = layer.spline_weight * dbranch + layer.base_weight * spline.silu_grad(c.x)[:, None, :]
        g = (g_edge * dphi).sum(axis=1)
    grads.reverse()
    return GradientSet(grads, g[0] if cache.squeeze else g)


@dataclass
class PruneReport:
    threshold: float
    masked_edges: list[tuple[int, int, int, float]] = field(default_factory=list)
    active_parameters: int = 0
    total_parameters: int = 0
    max_output_perturbation: float = 0.0
    node_bounds: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "masked_edges": [
                {"layer": l, "q": q, "p": p, "importance": imp} for l, q, p, imp in self.masked_edges
            ],
            "active_parameters": self.active_parameters,
            "total_parameters": self.total_parameters,
            "max_output_perturbation": self.max_output_perturbation,
            "node_bounds": self.node_bounds,
        }


def edge_importance(net: KanNetwork, inputs) -> list[np.ndarray]:
    """Mean absolute activation of every edge over a sample set."""
    x, _ = _check_input(net, inputs)
    if x.shape[0] == 0:
        raise InvalidInputError("importance needs at least one sample")
    out = []
    for layer in net.layers:
        phi, _ = _edge_outputs(layer, x)
        phi = np.where(layer.mask, phi, 0.0)
        out.append(np.abs(phi).mean(axis=0))
        x = phi.sum(axis=-1)
    return out


def prune(net: KanNetwork, inputs, threshold: float):
    """Mask edges whose mean ``|phi|`` over ``inputs`` falls below ``threshold``.

    Importances of every layer come from the unpruned network, so masks at a
    higher threshold are always a superset. ``node_bounds[l][q]`` is the sum
    of importances newly masked into node ``q`` of layer ``l``, which bounds
    the mean change of that node for fixed layer inputs.
    """
    if not np.isfinite(threshold) or threshold < 0:
        raise InvalidInputError(f"prune threshold must be >= 0, got {threshold}")
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("pruning needs a non-empty 2-D sample matrix")
    importances = edge_importance(net, x)
    pruned = net.copy()
    report = PruneReport(float(threshold))
    for l, (layer, imp) in enumerate(zip(pruned.layers, importances)):
        drop = layer.mask & (imp < threshold)
        for q, p in zip(*np.nonzero(drop)):
            report.masked_edges.append((l, int(q), int(p), float(imp[q, p])))
        report.node_bounds.append([float(v) for v in np.where(drop, imp, 0.0).sum(axis=1)])
        layer.mask = layer.mask & ~drop
    before = predict(net, x)
    after = predict(pruned, x)
    report.max_output_perturbation = float(np.max(np.abs(after - before)))
    report.active_parameters = count_parameters(pruned, active_only=True)
    report.total_parameters = count_parameters(pruned)
    return pruned, report


def refine_network(net: KanNetwork, new_interior_count: int, sample_count: int = 1000) -> KanNetwork:
    """Refit every edge's spline branch on a finer grid; masks are kept.

    Masked edges are refitted as well so that a layer keeps one shared grid;
    they stay masked and contribute nothing.
    """
    layers = []
    for layer in net.layers:
        old = layer.grid
        if new_interior_count <= old.interior_count:
            raise InvalidInputError(
                f"new interior count {new_interior_count} must exceed {old.interior_count}"
            )
        grid = old.with_intervals(new_interior_count)
        if sample_count < grid.basis_count:
            raise InvalidInputError(f"sample_count must be >= {grid.basis_count}")
        xs = np.linspace(old.domain_lo, old.domain_hi, sample_count)
        values = spline.basis_eval(old, xs) @ layer.coefficients.reshape(-1, old.basis_count).T
        coef = spline.fit_curve(grid, xs, values).T.reshape(layer.n_out, layer.n_in, grid.basis_count)
        layers.append(KanLayer(grid, coef, layer.base_weight.copy(),
                               layer.spline_weight.copy(), layer.mask.copy()))
    return KanNetwork(layers, net.base_enabled)


def count_parameters(net: KanNetwork, active_only: bool = False) -> int:
    """``G + k`` coefficients plus the two branch weights for every edge."""
    total = 0
    for layer in net.layers:
        edges = int(layer.mask.sum()) if active_only else layer.mask.size
        total += edges * (layer.grid.basis_count + 2)
    return total


def network_to_dict(net: KanNetwork) -> dict:
    first = net.layers[0].grid
    return {
        "widths": net.widths,
        "degree": first.degree,
        "domain": [first.domain_lo, first.domain_hi],
        "base_enabled": net.base_enabled,
        "layers": [
            {
                "interior_count": layer.grid.interior_count,
                "coefficients": layer.coefficients.tolist(),
                "base_weight": layer.base_weight.tolist(),
                "spline_weight": layer.spline_weight.tolist(),
                "mask": layer.mask.astype(int).tolist(),
            }
            for layer in net.layers
        ],
    }


def network_from_dict(d: dict) -> KanNetwork:
    try:
        lo, hi = d["domain"]
        layers = []
        for item in d["layers"]:
            grid = KnotGrid(float(lo), float(hi), int(item["interior_count"]), int(d["degree"]))
            layers.append(KanLayer(grid, item["coefficients"], item["base_weight"],
                                   item["spline_weight"], np.asarray(item["mask"], dtype=bool)))
        net = KanNetwork(layers, bool(d.get("base_enabled", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed network record: {exc}") from exc
    if net.widths != list(d["widths"]):
        raise CheckpointError(f"checkpoint widths {d['widths']} disagree with layer shapes {net.widths}")
    return net


def save_checkpoint(path, net: KanNetwork, normalization: dict | None = None,
                    metadata: dict | None = None) -> Path:
    doc = {"format_version": FORMAT_VERSION, **network_to_dict(net),
           "normalization": normalization, "metadata": metadata or {}}
    return atomic_write_json(path, doc)


def load_checkpoint(path) -> tuple[KanNetwork, dict | None, dict]:
    """Read a checkpoint; returns ``(network, normalization, metadata)``."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path} is not valid JSON: {exc}") from exc
    version = doc.get("format_version") if isinstance(doc, dict) else None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}; expected {FORMAT_VERSION}")
    return network_from_dict(doc), doc.get("normalization"), doc.get("metadata", {})
