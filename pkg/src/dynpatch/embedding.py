"""Patch embedding at fixed and dynamically chosen patch sizes.

The token grid uses ceiling division with zero padding on the bottom/right
edge, so a 320x800 image yields 1000 tokens at 16 px, 810 at 18 px and 640
at 20 px. A single base projection kernel lives at 16 px; kernels for every
other size are derived from it by a pseudo-inverse resize of the bilinear
interpolation map, which preserves patch/projection inner products exactly
whenever the resize upsamples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix

BASE_PATCH_SIZE = 16


@dataclass(frozen=True)
class PatchGridSpec:
    image_h: int
    image_w: int
    patch_size: int
    rows: int
    cols: int

    @property
    def token_count(self) -> int:
        return self.rows * self.cols


@dataclass
class EmbedKernel:
    """Linear projection from a flattened patch to a C-dim feature.

    proj has one row per patch input (patch_size^2 * channels, flattened in
    (row, col, channel) order) and one column per output feature.
    """

    patch_size: int
    channels: int
    proj: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.proj = as_matrix(self.proj)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        expected = self.patch_size * self.patch_size * self.channels
        if self.proj.shape[0] != expected:
            raise ValueError(
                f"proj has {self.proj.shape[0]} rows, expected "
                f"{expected} for patch_size={self.patch_size}, "
                f"channels={self.channels}"
            )
        if self.bias.shape[0] != self.proj.shape[1]:
            raise ValueError("bias length does not match feature dimension")

    @property
    def feature_dim(self) -> int:
        return self.proj.shape[1]


@dataclass
class TokenSet:
    features: np.ndarray  # (N, C)
    grid: PatchGridSpec
    patch_size: int

    def __post_init__(self):
        self.features = as_matrix(self.features)
        if self.features.shape[0] != self.grid.token_count:
            raise ValueError(
                f"{self.features.shape[0]} feature rows for a grid of "
                f"{self.grid.token_count} tokens"
            )


def grid_for(image_h: int, image_w: int, patch_size: int) -> PatchGridSpec:
    """Token grid for an image, padding the bottom/right to a patch multiple."""
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    if image_h < 1 or image_w < 1:
        raise ValueError(f"image dimensions must be >= 1, got {image_h}x{image_w}")
    rows = math.ceil(image_h / patch_size)
    cols = math.ceil(image_w / patch_size)
    return PatchGridSpec(image_h, image_w, patch_size, rows, cols)


def bilinear_resize_matrix_1d(n_src: int, n_dst: int) -> np.ndarray:
    """Linear map performing bilinear resampling of a length-n_src signal.

    Sample centers sit at (i + 0.5)/n; source coordinates are clamped at the
    edges, the usual convention for image resizing.
    """
    r = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        src = (i + 0.5) * n_src / n_dst - 0.5
        src = min(max(src, 0.0), n_src - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_src - 1)
        w = src - lo
        r[i, lo] += 1.0 - w
        if hi != lo:
            r[i, hi] += w
    return r


def bilinear_resize_matrix_2d(p_src: int, p_dst: int) -> np.ndarray:
    r1 = bilinear_resize_matrix_1d(p_src, p_dst)
    return np.kron(r1, r1)


def pi_resize_kernel(base: EmbedKernel, target_p: int) -> EmbedKernel:
    """Resize a patch-embedding kernel to a new patch size.

    With R the bilinear resize map from the base pixel grid to the target
    grid, the new projection is pinv(R^T) applied per channel to the base
    projection, so that <resize(x), proj_new> approximates <x, proj_base>
    in least squares (exactly, when R has full column rank, i.e. upsampling).
    """
    if target_p < 2:
        raise ValueError(f"target patch size must be >= 2, got {target_p}")
    p0 = base.patch_size
    r2d = bilinear_resize_matrix_2d(p0, target_p)
    if np.linalg.matrix_rank(r2d) == 0:
        raise ValueError("degenerate resize map (rank 0)")
    mapper = np.linalg.pinv(r2d.T)  # (target_p^2, p0^2)
    ch = base.channels
    c = base.feature_dim
    # proj rows are flattened (row, col, channel); regroup so the pixel
    # resize acts on the spatial axis only.
    old = base.proj.reshape(p0 * p0, ch, c)
    new = np.einsum("ts,scf->tcf", mapper, old).reshape(target_p * target_p * ch, c)
    return EmbedKernel(target_p, ch, new, base.bias.copy())


def pad_image(image: np.ndarray, patch_size: int) -> np.ndarray:
    h, w = image.shape[:2]
    grid = grid_for(h, w, patch_size)
    pad_h = grid.rows * patch_size - h
    pad_w = grid.cols * patch_size - w
    if pad_h == 0 and pad_w == 0:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)))


def embed(image: np.ndarray, kernel: EmbedKernel) -> TokenSet:
    """Project non-overlapping patches of an (H, W, channels) image.

    Patches are flattened in (row, col, channel) order and visited row-major
    over the grid. The image is zero padded on the bottom/right to the next
    patch multiple.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, channels) image, got {image.shape}")
    if image.shape[2] != kernel.channels:
        raise ValueError(
            f"image has {image.shape[2]} channels, kernel expects {kernel.channels}"
        )
    p = kernel.patch_size
    grid = grid_for(image.shape[0], image.shape[1], p)
    padded = pad_image(image, p)
    ch = kernel.channels
    # (rows, p, cols, p, ch) -> (rows, cols, p, p, ch) -> (N, p*p*ch)
    blocks = padded.reshape(grid.rows, p, grid.cols, p, ch)
    patches = blocks.transpose(0, 2, 1, 3, 4).reshape(grid.token_count, p * p * ch)
    features = patches @ kernel.proj + kernel.bias
    return TokenSet(features=features, grid=grid, patch_size=p)


def positional_encoding(grid: PatchGridSpec, feature_dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal encoding on normalized grid coordinates.

    Channel layout: [0, C/4) sin of the row phase, [C/4, C/2) cos of the row
    phase, then the same for the column. Phases are 2*pi * (r/rows) scaled by
    a geometric frequency ladder 10000^(-k/(C/4)), so token (0, 0) has all
    sines 0 and cosines 1, and tokens at equal normalized coordinates agree
    across patch sizes.
    """
    if feature_dim % 4 != 0:
        raise ValueError(f"feature_dim must be divisible by 4, got {feature_dim}")
    quarter = feature_dim // 4
    freqs = 2.0 * np.pi * (10000.0 ** (-np.arange(quarter) / quarter))
    rr, cc = np.meshgrid(np.arange(grid.rows), np.arange(grid.cols), indexing="ij")
    u = (rr / grid.rows).ravel()  # (N,)
    v = (cc / grid.cols).ravel()
    row_phase = u[:, None] * freqs[None, :]
    col_phase = v[:, None] * freqs[None, :]
    return np.concatenate(
        [np.sin(row_phase), np.cos(row_phase), np.sin(col_phase), np.cos(col_phase)],
        axis=1,
    )


def project_fine_to_coarse(
    fine_idx: int, fine: PatchGridSpec, coarse: PatchGridSpec
) -> int:
    """Map a fine token index to the coarse token containing its pixel center."""
    if fine.image_h != coarse.image_h or fine.image_w != coarse.image_w:
        raise ValueError("fine and coarse grids must describe the same image")
    if not 0 <= fine_idx < fine.token_count:
        raise ValueError(
            f"fine index {fine_idx} out of range for {fine.token_count} tokens"
        )
    r, c = divmod(fine_idx, fine.cols)
    center_y = (r + 0.5) * fine.patch_size
    center_x = (c + 0.5) * fine.patch_size
    cr = min(int(center_y // coarse.patch_size), coarse.rows - 1)
    cc = min(int(center_x // coarse.patch_size), coarse.cols - 1)
    return cr * coarse.cols + cc
