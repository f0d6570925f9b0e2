"""Spatial mixup and horizontal flips.

Spatial mixup glues the left half of one image to the right half of another
image of the same class (a vertical seam); nothing is blended, so every
output pixel is copied from one of the inputs. ``axis="horizontal"`` puts
the seam across the middle instead (top/bottom halves), for sensitivity runs.

Images are (H, W, 3) float arrays in [0, 1]; batches are (B, H, W, 3).
"""
import numpy as np

from .errors import ConfigError, ShapeError

SPLIT_AXES = ("vertical", "horizontal")


def spatial_mixup(a, b, axis="vertical"):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot mix images of shapes {a.shape} and {b.shape}")
    if a.ndim < 2:
        raise ShapeError(f"expected an (H, W[, C]) image, got shape {a.shape}")
    if axis not in SPLIT_AXES:
        raise ConfigError(f"split axis must be one of {SPLIT_AXES}, got {axis!r}")
    dim = 1 if axis == "vertical" else 0
    size = a.shape[dim]
    if size % 2:
        raise ConfigError(f"mixup needs an even {'width' if dim else 'height'}, got {size}")
    out = a.copy()
    half = size // 2
    if dim == 1:
        out[:, half:] = b[:, half:]
    else:
        out[half:] = b[half:]
    return out


def hflip(a):
    """Mirror an image left-right (column j -> W-1-j)."""
    return np.ascontiguousarray(np.asarray(a)[:, ::-1])


def augment_pretrain(images, labels, pool, rng, p_mix=0.5, p_flip=0.5, axis="vertical"):
    """Return an augmented copy of a batch.

    Per sample: with probability ``p_mix`` mix with an image drawn uniformly
    from ``pool[label]``, then with probability ``p_flip`` flip. Labels do not
    change. Each sample consumes exactly three draws from ``rng`` so the
    stream stays aligned regardless of outcomes.
    """
    labels = np.asarray(labels)
    if p_mix > 0:
        for label in np.unique(labels):
            if len(pool.get(int(label), ())) == 0:
                raise ConfigError(f"mixup pool for class {int(label)} is empty")
    out = np.array(images, copy=True)
    for i, label in enumerate(labels):
        u_mix, u_pick, u_flip = rng.random(3)
        if u_mix < p_mix:
            candidates = pool[int(label)]
            out[i] = spatial_mixup(out[i], candidates[int(u_pick * len(candidates))], axis)
        if u_flip < p_flip:
            out[i] = hflip(out[i])
    return out


def augment_finetune(target, source_pool_same_class, rng, axis="vertical"):
    """Mix a target-domain image with a freshly drawn same-class source image."""
    if len(source_pool_same_class) == 0:
        raise ConfigError("source pool for this class is empty")
    idx = int(rng.integers(len(source_pool_same_class)))
    return spatial_mixup(target, source_pool_same_class[idx], axis)
