"""Patch sampling, head embedding, and the InfoNCE / PatchNCE losses.

Negatives always come from other sampled locations of the same input image.
The batched PatchNCE computes one [S, S] similarity matrix per tapped layer
with the positive on the diagonal; the scalar ``info_nce`` is the reference
unit the brute-force tests loop over.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ParameterError
from .rng import derive_rng


@dataclass
class NceConfig:
    tau: float = 0.07
    num_patches: int = 256
    layer_ids: tuple = (0, 2, 3, 5, 7)

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.num_patches < 2:
            raise ParameterError(f"need at least 2 patches, got {self.num_patches}")


@dataclass
class StackLayer:
    embeddings: Tensor        # [S, K], rows unit-norm
    channels: int
    location_ids: np.ndarray  # [S], distinct, in-range spatial indices


@dataclass
class FeatureStack:
    layers: list


def sample_patch_locations(layer_spatial_sizes, num_patches, seed):
    """Distinct uniformly sampled spatial ids per layer, capped at layer area.

    The same ids must be reused for the input image and its translation so
    queries and positives correspond; `seed` may be an int or a Generator.
    """
    if num_patches < 2:
        raise ParameterError(f"need at least 2 patches, got {num_patches}")
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(int(seed), "patches")
    out = []
    for area in layer_spatial_sizes:
        if area < 1:
            raise ParameterError("cannot sample locations from an empty layer")
        count = min(num_patches, area)
        out.append(rng.permutation(area)[:count])
    return out


def embed_patches(activations, ids, head):
    """Gather channel vectors at `ids`, embed with `head`, L2-normalize rows."""
    if activations.ndim != 4 or activations.shape[0] != 1:
        raise DimensionError(f"expected activations [1,c,h,w], got {activations.shape}")
    _, c, h, w = activations.shape
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= h * w):
        raise ParameterError(f"location id out of range for {h}x{w} layer")
    rows = ad.transpose(ad.reshape(activations, (c, h * w)))
    picked = ad.gather_rows(rows, ids)
    return ad.l2_normalize_rows(head(picked))


def info_nce(q, p, negs, tau):
    """(N+1)-way cross-entropy of the positive against the negatives.

    Inputs are expected unit-normalized; computed in log-sum-exp form so
    small temperatures stay finite.
    """
    if tau <= 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    if q.ndim != 1 or p.ndim != 1 or negs.ndim != 2:
        raise DimensionError("info_nce expects q[K], p[K], negs[N,K]")
    if q.shape != p.shape or negs.shape[1] != q.shape[0]:
        raise DimensionError(
            f"embedding dims disagree: q{q.shape}, p{p.shape}, negs{negs.shape}")
    if negs.shape[0] < 1:
        raise DimensionError("need at least one negative")
    k = q.shape[0]
    pos = ad.reduce(q * p, kind="sum", keepdims=False)           # scalar
    neg = ad.reshape(ad.matmul(negs, ad.reshape(q, (k, 1))), (negs.shape[0],))
    logits = ad.concat_last(ad.reshape(pos, (1,)), neg) / tau
    shift = float(np.max(logits.data))
    lse = ad.log(ad.reduce(ad.exp(logits - shift), kind="sum")) + shift
    return lse - pos / tau


def patch_nce_loss(input_stack, generated_stack, tau, strict_sum=False):
    """Per-location InfoNCE with same-image negatives, aggregated over layers.

    Queries come from the generated stack, positives and negatives from the
    input stack at the shared location ids. Locations are averaged per layer
    (``strict_sum=True`` recovers the raw double sum) and layers are summed.
    """
    if tau <= 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    if len(input_stack.layers) != len(generated_stack.layers):
        raise ContractError("stacks have different layer counts")
    total = None
    for lin, lgen in zip(input_stack.layers, generated_stack.layers):
        if not np.array_equal(lin.location_ids, lgen.location_ids):
            raise ContractError("stacks sampled different locations")
        if lin.embeddings.shape != lgen.embeddings.shape:
            raise ContractError("stack embedding shapes disagree")
        s = lin.embeddings.shape[0]
        logits = ad.matmul(lgen.embeddings, ad.transpose(lin.embeddings)) / tau
        shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
        lse = ad.log(ad.reduce(ad.exp(logits - shift), axes=1, kind="sum", keepdims=True)) + shift
        pos = ad.reduce(logits * Tensor(np.eye(s)), axes=1, kind="sum", keepdims=True)
        per_loc = lse - pos
        layer_loss = ad.reduce(per_loc, kind="sum" if strict_sum else "mean")
        total = layer_loss if total is None else total + layer_loss
    if total is None:
        raise ContractError("stacks are empty")
    return total


def build_stack(tap_activations, location_ids, heads):
    """Embed every tapped layer of one image into a FeatureStack."""
    layers = []
    for acts, ids, head in zip(tap_activations, location_ids, heads):
        emb = embed_patches(acts, ids, head)
        layers.append(StackLayer(embeddings=emb, channels=acts.shape[1], location_ids=ids))
    return FeatureStack(layers=layers)


def identity_patch_nce(domain_b_image, generator, heads, cfg, seed):
    """PatchNCE between features of b and features of G(b)."""
    idt, taps_b = generator.forward(domain_b_image, want_taps=True)
    taps_idt = generator.encoder_features(idt, generator.cfg.tap_ids)
    sizes = [t.shape[2] * t.shape[3] for t in taps_b]
    ids = sample_patch_locations(sizes, cfg.num_patches, seed)
    stack_b = build_stack(taps_b, ids, heads)
    stack_idt = build_stack(taps_idt, ids, heads)
    return patch_nce_loss(stack_b, stack_idt, cfg.tau)
