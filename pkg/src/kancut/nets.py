"""Desk-scale ResNet encoder-decoder generator, patch discriminator, LSGAN
losses, the combined generator objective, and the alternating train step.

Generator convolutions use reflection padding, the discriminator zero
padding. Encoder stages are numbered so tap ids stay stable:

    0: input image          3: second downsample out
    1: stem conv out        4..: residual block outs
    2: first downsample out

The defaults tap {input, down-1, down-2, res-2, res-4} = (0, 2, 3, 5, 7).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .contrastive import build_stack, identity_patch_nce, patch_nce_loss, sample_patch_locations
from .errors import DimensionError, ParameterError, TrainingDivergedError
from .rng import derive_rng


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    base_width: int = 32
    n_downsample: int = 2
    n_res_blocks: int = 4
    tap_ids: tuple = (0, 2, 3, 5, 7)

    @property
    def n_stages(self):
        return 2 + self.n_downsample + self.n_res_blocks

    def __post_init__(self):
        self.tap_ids = tuple(self.tap_ids)
        if any(t < 0 or t >= self.n_stages for t in self.tap_ids):
            raise ParameterError(
                f"tap ids must lie in [0, {self.n_stages - 1}], got {self.tap_ids}")

    def stage_channels(self, stage):
        if stage == 0:
            return self.in_channels
        if stage == 1:
            return self.base_width
        if stage <= 1 + self.n_downsample:
            return self.base_width * 2 ** (stage - 1)
        return self.base_width * 2 ** self.n_downsample


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    base_width: int = 64


def _leaky_relu(x, slope=0.2):
    return ad.relu(x) - slope * ad.relu(-x)


def _conv_block(x, k, scale, shift, stride, pad, pad_mode):
    y = ad.conv2d(x, k, stride=stride, pad=pad, pad_mode=pad_mode)
    return ad.relu(ad.instance_norm2d(y, scale, shift))


class Generator:
    """ResNet encoder-decoder; forward optionally returns encoder taps."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    def parameters(self):
        return dict(self.params)

    def _encoder_stages(self, x, upto):
        p = self.params
        stages = [x]
        if upto == 0:
            return stages
        h = _conv_block(x, p["stem.k"], p["stem.scale"], p["stem.shift"], 1, 3, "reflect")
        stages.append(h)
        for i in range(self.cfg.n_downsample):
            if len(stages) > upto:
                return stages
            h = _conv_block(h, p[f"down{i}.k"], p[f"down{i}.scale"], p[f"down{i}.shift"],
                            2, 1, "reflect")
            stages.append(h)
        for i in range(self.cfg.n_res_blocks):
            if len(stages) > upto:
                return stages
            r = _conv_block(h, p[f"res{i}.k1"], p[f"res{i}.scale1"], p[f"res{i}.shift1"],
                            1, 1, "reflect")
            r = ad.conv2d(r, p[f"res{i}.k2"], stride=1, pad=1, pad_mode="reflect")
            r = ad.instance_norm2d(r, p[f"res{i}.scale2"], p[f"res{i}.shift2"])
            h = h + r
            stages.append(h)
        return stages

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"expected [n,{self.cfg.in_channels},h,w], got {x.shape}")
        div = 2 ** self.cfg.n_downsample
        if x.shape[2] % div or x.shape[3] % div:
            raise DimensionError(
                f"spatial size {x.shape[2]}x{x.shape[3]} not divisible by {div}")

    def encoder_features(self, x, ids):
        """Activations at the requested encoder stages only."""
        self._check_input(x)
        ids = tuple(ids)
        if any(t < 0 or t >= self.cfg.n_stages for t in ids):
            raise ParameterError(f"invalid encoder stage in {ids}")
        stages = self._encoder_stages(x, max(ids) if ids else 0)
        return [stages[t] for t in ids]

    def forward(self, x, want_taps=False):
        """Translate x; values land in [-1, 1] via the final tanh."""
        self._check_input(x)
        p = self.params
        stages = self._encoder_stages(x, self.cfg.n_stages - 1)
        h = stages[-1]
        for i in reversed(range(self.cfg.n_downsample)):
            h = ad.upsample_nearest(h, 2)
            h = _conv_block(h, p[f"up{i}.k"], p[f"up{i}.scale"], p[f"up{i}.shift"],
                            1, 1, "reflect")
        h = ad.conv2d(h, p["final.k"], bias=p["final.b"], stride=1, pad=3, pad_mode="reflect")
        fake = ad.tanh(h)
        if want_taps:
            return fake, [stages[t] for t in self.cfg.tap_ids]
        return fake, None


def init_generator(cfg, seed):
    rng = derive_rng(seed, "gen-init")
    p = {}

    def conv(name, o, c, k):
        p[f"{name}.k"] = ad.param(rng.normal(0.0, 0.02, (o, c, k, k)))
        p[f"{name}.scale"] = ad.param(np.ones(o))
        p[f"{name}.shift"] = ad.param(np.zeros(o))

    w = cfg.base_width
    conv("stem", w, cfg.in_channels, 7)
    ch = w
    for i in range(cfg.n_downsample):
        conv(f"down{i}", ch * 2, ch, 3)
        ch *= 2
    for i in range(cfg.n_res_blocks):
        p[f"res{i}.k1"] = ad.param(rng.normal(0.0, 0.02, (ch, ch, 3, 3)))
        p[f"res{i}.scale1"] = ad.param(np.ones(ch))
        p[f"res{i}.shift1"] = ad.param(np.zeros(ch))
        p[f"res{i}.k2"] = ad.param(rng.normal(0.0, 0.02, (ch, ch, 3, 3)))
        p[f"res{i}.scale2"] = ad.param(np.ones(ch))
        p[f"res{i}.shift2"] = ad.param(np.zeros(ch))
    for i in reversed(range(cfg.n_downsample)):
        conv(f"up{i}", ch // 2, ch, 3)
        ch //= 2
    p["final.k"] = ad.param(rng.normal(0.0, 0.02, (cfg.in_channels, ch, 7, 7)))
    p["final.b"] = ad.param(np.zeros(cfg.in_channels))
    return Generator(cfg, p)


class Discriminator:
    """3-layer strided patch discriminator; outputs a spatial score map."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    def parameters(self):
        return dict(self.params)

    def __call__(self, x):
        p = self.params
        h = _leaky_relu(ad.conv2d(x, p["d0.k"], bias=p["d0.b"], stride=2, pad=1))
        h = ad.conv2d(h, p["d1.k"], stride=2, pad=1)
        h = _leaky_relu(ad.instance_norm2d(h, p["d1.scale"], p["d1.shift"]))
        return ad.conv2d(h, p["d2.k"], bias=p["d2.b"], stride=1, pad=1)


def init_discriminator(cfg, seed):
    rng = derive_rng(seed, "disc-init")
    w = cfg.base_width
    p = {
        "d0.k": ad.param(rng.normal(0.0, 0.02, (w, cfg.in_channels, 4, 4))),
        "d0.b": ad.param(np.zeros(w)),
        "d1.k": ad.param(rng.normal(0.0, 0.02, (2 * w, w, 4, 4))),
        "d1.scale": ad.param(np.ones(2 * w)),
        "d1.shift": ad.param(np.zeros(2 * w)),
        "d2.k": ad.param(rng.normal(0.0, 0.02, (1, 2 * w, 4, 4))),
        "d2.b": ad.param(np.zeros(1)),
    }
    return Discriminator(cfg, p)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def lsgan_d_loss(d_real, d_fake):
    """0.5 E[(D(real)-1)^2] + 0.5 E[D(fake)^2]"""
    if d_real.shape != d_fake.shape:
        raise DimensionError(f"score maps disagree: {d_real.shape} vs {d_fake.shape}")
    return 0.5 * ad.reduce(ad.square(d_real - 1.0), kind="mean") \
        + 0.5 * ad.reduce(ad.square(d_fake), kind="mean")


def lsgan_g_loss(d_fake):
    """0.5 E[(D(fake)-1)^2]"""
    return 0.5 * ad.reduce(ad.square(d_fake - 1.0), kind="mean")


@dataclass
class ObjectiveWeights:
    lambda_nce_a: float = 1.0
    lambda_nce_b: float = 1.0

    def __post_init__(self):
        if self.lambda_nce_a < 0 or self.lambda_nce_b < 0:
            raise ParameterError("objective weights must be >= 0")


def total_generator_objective(g_adv, nce_a, nce_b, weights):
    """g_adv + lambda_a * nce_a + lambda_b * nce_b"""
    if weights.lambda_nce_a < 0 or weights.lambda_nce_b < 0:
        raise ParameterError("objective weights must be >= 0")
    return g_adv + weights.lambda_nce_a * nce_a + weights.lambda_nce_b * nce_b


# ---------------------------------------------------------------------------
# one alternating update
# ---------------------------------------------------------------------------

def train_step(iteration, a_img, b_img, gen, disc, heads, nce_cfg, weights,
               opt_gen, opt_disc, opt_heads, seed):
    """Discriminator step on detached fakes, then generator+heads step.

    Returns every loss component; raises TrainingDivergedError if any of
    them goes non-finite.
    """
    ad.reset_tape()
    fake, taps_a = gen.forward(a_img, want_taps=True)

    # discriminator update (no generator gradient through the detached fake)
    d_real = disc(b_img)
    d_fake_det = disc(fake.detach())
    d_loss = lsgan_d_loss(d_real, d_fake_det)
    disc_params = list(disc.parameters().values())
    ad.zero_grads(disc_params)
    ad.backward(d_loss)
    ad.adam_step(disc_params, None, opt_disc)

    # generator + heads update
    g_adv = lsgan_g_loss(disc(fake))
    taps_fake = gen.encoder_features(fake, gen.cfg.tap_ids)
    sizes = [t.shape[2] * t.shape[3] for t in taps_a]
    ids_a = sample_patch_locations(
        sizes, nce_cfg.num_patches, derive_rng(seed, "patches-a", str(iteration)))
    stack_a = build_stack(taps_a, ids_a, heads)
    stack_fake = build_stack(taps_fake, ids_a, heads)
    nce_a = patch_nce_loss(stack_a, stack_fake, nce_cfg.tau)
    nce_b = identity_patch_nce(
        b_img, gen, heads, nce_cfg, derive_rng(seed, "patches-b", str(iteration)))
    total = total_generator_objective(g_adv, nce_a, nce_b, weights)

    metrics = {
        "iteration": iteration,
        "d_loss": d_loss.item(),
        "g_adv": g_adv.item(),
        "nce_a": nce_a.item(),
        "nce_b": nce_b.item(),
        "total": total.item(),
    }
    for name, value in metrics.items():
        if name != "iteration" and not np.isfinite(value):
            raise TrainingDivergedError(iteration, f"{name} became {value} at iteration {iteration}")

    gen_params = list(gen.parameters().values())
    head_params = [list(h.parameters().values()) for h in heads]
    ad.zero_grads(gen_params)
    for hp in head_params:
        ad.zero_grads(hp)
    ad.backward(total)
    ad.adam_step(gen_params, None, opt_gen)
    for hp, opt in zip(head_params, opt_heads):
        ad.adam_step(hp, None, opt)
    return metrics


# spec-level functional aliases
def generator_forward(gen, image, want_taps=False):
    return gen.forward(image, want_taps=want_taps)


def encoder_features(gen, image, ids):
    return gen.encoder_features(image, ids)
