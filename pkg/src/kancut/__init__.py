"""KAN-CUT at desk scale: two-layer KAN projection heads driving patchwise
contrastive learning inside an LSGAN image-translation pipeline."""

__version__ = "0.1.0"
