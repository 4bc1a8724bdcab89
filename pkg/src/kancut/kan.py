"""Efficient KAN layers: base path + spline path fused by concatenation and
a penalized-tanh GLU, and the two-layer head built from them.

The spline path never materializes a [batch, n_out, n_in] expansion; it is a
single matmul of the flattened basis tensor against the flattened spline
weights. ``spline_path_reference`` keeps the expanded formulation around as
the equivalence oracle.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bspline import SplineGrid, basis_matrix, default_grid
from .errors import DimensionError, ParameterError
from .rng import derive_rng

_BASE_ACTIVATIONS = {"silu": ad.silu, "tanh": ad.tanh, "relu": ad.relu}


@dataclass
class KanLayerParams:
    """One efficient KAN layer: mixing weights, GLU projections, gate penalty."""

    base_weight: Tensor        # [n_out, n_in]
    spline_weight: Tensor      # [n_out, n_in, num_bases]
    glu_w: Tensor              # [n_out, 2*n_out]
    glu_b: Tensor              # [n_out]
    glu_v: Tensor              # [n_out, 2*n_out]
    glu_c: Tensor              # [n_out]
    alpha: float
    grid: SplineGrid
    base_activation: str = "silu"

    def __post_init__(self):
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if self.spline_weight.shape[2] != self.grid.num_bases:
            raise DimensionError(
                f"spline weight has {self.spline_weight.shape[2]} basis slots, "
                f"grid provides {self.grid.num_bases}")
        n_out = self.base_weight.shape[0]
        if self.glu_w.shape != (n_out, 2 * n_out) or self.glu_v.shape != (n_out, 2 * n_out):
            raise DimensionError("GLU projections must map 2*n_out -> n_out")

    @property
    def n_in(self):
        return self.base_weight.shape[1]

    @property
    def n_out(self):
        return self.base_weight.shape[0]

    def parameters(self):
        return {
            "base_weight": self.base_weight,
            "spline_weight": self.spline_weight,
            "glu_w": self.glu_w,
            "glu_b": self.glu_b,
            "glu_v": self.glu_v,
            "glu_c": self.glu_c,
        }


def penalized_tanh(x, alpha):
    """rho_alpha(x) = tanh(x) + alpha * max(-x, 0)."""
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    return ad.tanh(x) + alpha * ad.relu(-x)


def base_path(x, params):
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise DimensionError(f"base_path expects [batch, {params.n_in}], got {x.shape}")
    act = _BASE_ACTIVATIONS[params.base_activation]
    return ad.linear(act(x), params.base_weight)


def spline_path(x, params):
    """sum_{p,j} spline_weight[o,p,j] * B(x)[b,p,j] as one flat matmul."""
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise DimensionError(f"spline_path expects [batch, {params.n_in}], got {x.shape}")
    nb = params.grid.num_bases
    bases = basis_matrix(params.grid, x)
    flat = ad.reshape(bases, (x.shape[0], params.n_in * nb))
    w = ad.reshape(params.spline_weight, (params.n_out, params.n_in * nb))
    return ad.linear(flat, w)


def spline_path_reference(x_data, params, chunk=128):
    """Expanded-tensor formulation of the spline path (oracle, numpy only).

    Materializes the per-edge activation tensor [chunk, n_out, n_in] the way
    the unreformulated layer would, then sums over inputs.
    """
    from .bspline import CLAMP_MARGIN
    from . import kernels

    x_data = np.asarray(x_data, dtype=np.float64)
    grid = params.grid
    w = params.spline_weight.data
    out = np.zeros((x_data.shape[0], params.n_out))
    for lo in range(0, x_data.shape[0], chunk):
        xs = x_data[lo : lo + chunk]
        clamped = np.clip(xs.reshape(-1), grid.grid_min, grid.grid_max - CLAMP_MARGIN)
        B, _ = kernels.bspline_bases(clamped, grid.knots, grid.degree)
        B = B.reshape(xs.shape[0], params.n_in, grid.num_bases)
        edge = np.einsum("opj,bpj->bop", w, B)      # [b, n_out, n_in] expansion
        out[lo : lo + chunk] = edge.sum(axis=2)
    return out


def glu_concat_activation(base_out, spline_out, params):
    """concat the two paths, then (W.co + b) * rho_alpha(V.co + c)."""
    if base_out.shape != spline_out.shape or base_out.shape[1] != params.n_out:
        raise DimensionError(
            f"GLU inputs must both be [batch, {params.n_out}], "
            f"got {base_out.shape} and {spline_out.shape}")
    co = ad.concat_last(base_out, spline_out)
    value = ad.linear(co, params.glu_w, params.glu_b)
    gate = penalized_tanh(ad.linear(co, params.glu_v, params.glu_c), params.alpha)
    return value * gate


def kan_layer_forward(x, params):
    return glu_concat_activation(base_path(x, params), spline_path(x, params), params)


@dataclass
class TwoLayerKanHead:
    """Two chained KAN layers mapping n_in -> hidden -> embed_dim."""

    layer1: KanLayerParams
    layer2: KanLayerParams

    def __post_init__(self):
        if self.layer1.n_out != self.layer2.n_in:
            raise DimensionError(
                f"layer widths do not chain: {self.layer1.n_out} -> {self.layer2.n_in}")

    @property
    def embed_dim(self):
        return self.layer2.n_out

    def __call__(self, x):
        return two_layer_kan_forward(x, self)

    def parameters(self):
        out = {}
        for tag, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for name, p in layer.parameters().items():
                out[f"{tag}.{name}"] = p
        return out


def two_layer_kan_forward(x, head):
    return kan_layer_forward(kan_layer_forward(x, head.layer1), head.layer2)


def l1_spline_regularization(layers, inputs, mode="activation"):
    """Mean |spline activation| per layer, summed over layers.

    ``inputs[i]`` is the batch fed to ``layers[i]``. ``mode="weight"``
    switches to the mean |spline_weight| norm instead.
    """
    if not layers:
        raise ParameterError("need at least one layer to regularize")
    if mode not in ("activation", "weight"):
        raise ParameterError(f"unknown regularization mode {mode!r}")
    total = None
    for i, layer in enumerate(layers):
        if mode == "activation":
            s = spline_path(inputs[i], layer)
            term = ad.reduce(ad.relu(s) + ad.relu(-s), kind="mean")
        else:
            w = layer.spline_weight
            term = ad.reduce(ad.relu(w) + ad.relu(-w), kind="mean")
        total = term if total is None else total + term
    return total


def init_kan_layer(n_in, n_out, grid, rng, alpha=0.25, base_activation="silu"):
    if n_in < 1 or n_out < 1:
        raise ParameterError(f"layer dims must be positive, got {n_in} -> {n_out}")
    nb = grid.num_bases
    bound = np.sqrt(6.0 / n_in)
    base_w = rng.uniform(-bound, bound, (n_out, n_in))
    spline_w = rng.uniform(-0.1 / np.sqrt(n_in), 0.1 / np.sqrt(n_in), (n_out, n_in, nb))
    # value projection starts as a passthrough of the base half
    glu_w = np.concatenate(
        [np.eye(n_out), rng.uniform(-0.1, 0.1, (n_out, n_out)) / np.sqrt(n_out)], axis=1)
    glu_v = rng.uniform(-1.0, 1.0, (n_out, 2 * n_out)) / np.sqrt(2 * n_out)
    return KanLayerParams(
        base_weight=ad.param(base_w),
        spline_weight=ad.param(spline_w),
        glu_w=ad.param(glu_w),
        glu_b=ad.param(np.zeros(n_out)),
        glu_v=ad.param(glu_v),
        glu_c=ad.param(np.zeros(n_out)),
        alpha=alpha,
        grid=grid,
        base_activation=base_activation,
    )


def init_kan_head(n_in, hidden=256, embed_dim=256, grid=None, seed=0,
                  alpha=0.25, base_activation="silu"):
    """Deterministically initialized two-layer head for a given seed."""
    if n_in < 1 or hidden < 1 or embed_dim < 1:
        raise ParameterError("head dims must be positive")
    if grid is None:
        grid = default_grid()
    rng = derive_rng(seed, "kan-head-init")
    layer1 = init_kan_layer(n_in, hidden, grid, rng, alpha, base_activation)
    layer2 = init_kan_layer(hidden, embed_dim, grid, rng, alpha, base_activation)
    return TwoLayerKanHead(layer1=layer1, layer2=layer2)
