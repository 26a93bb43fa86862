"""Mapping between 8-bit images and 3-order tensors.

``patch-stack`` (default) pads the image by reflection to a multiple of the
patch size ``B``, cuts ``B x B`` patches in raster order and stacks them
along mode 3 with the channels of each patch interleaved, giving a tensor of
shape ``(B, B, patches * channels)``. ``whole-image`` uses ``(H, W, C)``
directly. ``latent`` marks externally supplied tensors that bypass this
module. Samples are scaled to ``[0, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

__all__ = [
    "STRATEGIES",
    "LATENT_REFERENCE_DIMS",
    "TensorizationDescriptor",
    "as_image",
    "tensorize",
    "detensorize",
    "effective_ranks",
    "read_image",
    "write_image",
]

STRATEGIES = ("latent", "whole-image", "patch-stack")
#: tensor shape the nominal rate-config ranks refer to
LATENT_REFERENCE_DIMS = (40, 40, 32)


@dataclass(frozen=True)
class TensorizationDescriptor:
    strategy: str = "patch-stack"
    patch_size: int = 16
    height: int = 0
    width: int = 0
    channels: int = 0
    pad_bottom: int = 0
    pad_right: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown tensorization strategy {self.strategy!r}")
        if self.strategy == "patch-stack" and self.patch_size < 1:
            raise ValueError("patch size must be positive")
        if self.strategy != "latent" and self.channels not in (0, 1, 3):
            raise ValueError(f"unsupported channel count {self.channels}")

    @property
    def pixel_count(self) -> int:
        return self.height * self.width

    def tensor_dims(self) -> Tuple[int, int, int]:
        if self.strategy == "whole-image":
            return (self.height, self.width, self.channels)
        if self.strategy == "patch-stack":
            b = self.patch_size
            patches = ((self.height + self.pad_bottom) // b) * ((self.width + self.pad_right) // b)
            return (b, b, patches * self.channels)
        raise ValueError("latent tensors carry their own dims")


def as_image(img) -> np.ndarray:
    """Return ``img`` as an ``(H, W, C)`` uint8 array with ``C`` in {1, 3}."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError(f"images must be 8-bit, got dtype {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"unsupported image shape {arr.shape}; need 1 or 3 channels")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image has no pixels")
    return arr


def tensorize(img, strategy: str = "patch-stack", patch_size: int = 16):
    """Return ``(tensor, descriptor)`` for an 8-bit image."""
    img = as_image(img)
    h, w, c = img.shape
    if strategy == "whole-image":
        desc = TensorizationDescriptor("whole-image", 0, h, w, c)
        return img.astype(np.float64) / 255.0, desc
    if strategy != "patch-stack":
        raise ValueError(f"cannot tensorize an image with strategy {strategy!r}")
    b = int(patch_size)
    pad_b = (-h) % b
    pad_r = (-w) % b
    desc = TensorizationDescriptor("patch-stack", b, h, w, c, pad_b, pad_r)
    padded = np.pad(img, ((0, pad_b), (0, pad_r), (0, 0)), mode="reflect") if (pad_b or pad_r) else img
    nh, nw = padded.shape[0] // b, padded.shape[1] // b
    t = padded.reshape(nh, b, nw, b, c).transpose(1, 3, 0, 2, 4).reshape(b, b, nh * nw * c)
    return np.ascontiguousarray(t, dtype=np.float64) / 255.0, desc


def detensorize(t: np.ndarray, desc: TensorizationDescriptor) -> np.ndarray:
    """Inverse of :func:`tensorize`; samples are rounded and clamped to [0, 255]."""
    t = np.asarray(t, dtype=np.float64)
    if desc.strategy == "latent":
        raise ValueError("latent tensors have no image form")
    if t.shape != desc.tensor_dims():
        raise ValueError(f"tensor shape {t.shape} does not match descriptor {desc.tensor_dims()}")
    pixels = np.clip(np.floor(t * 255.0 + 0.5), 0, 255).astype(np.uint8)
    if desc.strategy == "whole-image":
        return pixels
    b, c = desc.patch_size, desc.channels
    nh = (desc.height + desc.pad_bottom) // b
    nw = (desc.width + desc.pad_right) // b
    img = pixels.reshape(b, b, nh, nw, c).transpose(2, 0, 3, 1, 4).reshape(nh * b, nw * b, c)
    return np.ascontiguousarray(img[: desc.height, : desc.width])


def _scaled(r: int, size: int, reference: int) -> int:
    return int(math.floor(r * size / reference + 0.5))


def effective_ranks(ranks: Sequence[int], dims: Sequence[int], strategy: str,
                    patch_size: int = 16) -> Tuple[int, int, int]:
    """Translate nominal ranks (stated for a 40x40x32 latent) to a tensor's dims.

    * latent: ranks are used as given, clipped to the dims.
    * patch-stack: modes 1 and 2 scale by ``B / 40``; mode 3 keeps the
      nominal count of components, clipped to the number of patch slices.
    * whole-image: modes 1 and 2 scale by ``H / 40`` and ``W / 40``; mode 3 is
      clipped to the channel count.

    Every rank is clipped to ``[1, I_n]``.
    """
    r1, r2, r3 = (int(r) for r in ranks)
    i1, i2, i3 = (int(d) for d in dims)
    if strategy == "latent":
        out = (r1, r2, r3)
    elif strategy in ("patch-stack", "whole-image"):
        ref = LATENT_REFERENCE_DIMS
        out = (_scaled(r1, i1, ref[0]), _scaled(r2, i2, ref[1]), r3)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return tuple(max(1, min(r, d)) for r, d in zip(out, (i1, i2, i3)))


def read_image(path) -> np.ndarray:
    """Read a PNG/PPM/PGM file as an ``(H, W, C)`` uint8 array."""
    from PIL import Image

    with Image.open(Path(path)) as im:
        if im.mode in ("I;16", "I", "F"):
            raise ValueError(f"{path}: only 8-bit images are supported (mode {im.mode})")
        im = im.convert("L") if im.mode in ("L", "1", "LA") else im.convert("RGB")
        return as_image(np.array(im, dtype=np.uint8))


def write_image(path, img) -> None:
    from PIL import Image

    img = as_image(img)
    arr = img[:, :, 0] if img.shape[2] == 1 else img
    Image.fromarray(arr).save(Path(path))
