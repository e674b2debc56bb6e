"""Vector quantization: nearest-codeword search, the two-codebook
channel-split layer, the three-stage residual hierarchy, and offline
k-means codebook fitting.

Quantization distance is the sequential (channel-ascending) sum of squared
differences; ties break to the lowest index.  Dequantization is a pure
table gather, so its output is platform-exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptStreamError, ShapeError
from .tensor_ops import DEFAULT_POLICY, EvalPolicy, _accumulate

NUM_STAGES = 3
BOOKS_PER_STAGE = 2

# chunk quantization so the [chunk, K] distance buffer stays ~16 MB
_DIST_BUDGET = 1 << 22


def index_width(k: int) -> int:
    """Bits needed for one index of a size-k codebook (1 bit minimum)."""
    return max(1, int(np.ceil(np.log2(max(k, 2)))))


@dataclass
class Codebook:
    """A codeword table: codewords[K, d] float32."""

    codewords: np.ndarray

    def __post_init__(self):
        self.codewords = np.ascontiguousarray(self.codewords, dtype=np.float32)
        if self.codewords.ndim != 2 or self.codewords.shape[0] < 1:
            raise ConfigError("codebook must be a [K, d] table with K >= 1")
        if not np.isfinite(self.codewords).all():
            raise ConfigError("codebook contains non-finite codewords")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

    @property
    def index_width(self) -> int:
        return index_width(self.size)


@dataclass(frozen=True)
class CodebookSpec:
    """Per-stage codebook sizes; every stage uses two codebooks over
    equal channel halves."""

    sizes: tuple[int, int, int]

    def __post_init__(self):
        if len(self.sizes) != NUM_STAGES or any(k < 1 for k in self.sizes):
            raise ConfigError(f"need {NUM_STAGES} positive stage sizes")

    @property
    def index_widths(self) -> tuple[int, ...]:
        return tuple(index_width(k) for k in self.sizes)


KEYFRAME_SPEC = CodebookSpec((8192, 2048, 512))
PREDICTED_SPECS = {
    "high": CodebookSpec((8192, 2048, 512)),
    "mid": CodebookSpec((64, 2048, 512)),
    "low": CodebookSpec((8, 2048, 512)),
}


@dataclass
class IndexGrid:
    """Per-stage [2, h_s, w_s] int32 index planes, stage s at 1/2^s of the
    latent resolution."""

    stages: list[np.ndarray]

    def __post_init__(self):
        self.stages = [np.ascontiguousarray(s, dtype=np.int32) for s in self.stages]
        for s in self.stages:
            if s.ndim != 3 or s.shape[0] != BOOKS_PER_STAGE:
                raise ShapeError(f"index stage must be [2, h, w], got {s.shape}")

    def validate(self, spec: CodebookSpec):
        for arr, k in zip(self.stages, spec.sizes):
            if arr.min() < 0 or arr.max() >= k:
                raise CorruptStreamError(
                    f"index out of range for codebook size {k}")


@dataclass
class CodebookSet:
    """Two codebooks per stage, three stages."""

    stages: list[tuple[Codebook, Codebook]]
    fit_warning: bool = False

    def __post_init__(self):
        if len(self.stages) != NUM_STAGES:
            raise ConfigError(f"need {NUM_STAGES} codebook stages")

    def spec(self) -> CodebookSpec:
        return CodebookSpec(tuple(a.size for a, _ in self.stages))


def quantize_batch(vectors: np.ndarray, book: Codebook) -> np.ndarray:
    """Nearest-codeword indices for vectors[N, d].

    Distances accumulate channel-ascending and sequentially, so results are
    bit-reproducible per build; argmin takes the first (lowest) index on
    exact ties.
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[1] != book.dim:
        raise ShapeError(
            f"vectors {vectors.shape} incompatible with codebook dim {book.dim}")
    n, d = vectors.shape
    z = book.codewords
    chunk = max(1, _DIST_BUDGET // max(book.size, 1))
    out = np.empty(n, dtype=np.int32)
    for lo in range(0, n, chunk):
        v = vectors[lo:lo + chunk]
        acc = np.zeros((v.shape[0], book.size), np.float32)
        for i in range(d):
            diff = v[:, i:i + 1] - z[None, :, i]
            acc += diff * diff
        out[lo:lo + chunk] = np.argmin(acc, axis=1)
    return out


def quantize(y_vec: np.ndarray, book: Codebook) -> int:
    """Nearest codeword index for a single vector."""
    return int(quantize_batch(np.asarray(y_vec, np.float32)[None, :], book)[0])


def dequantize(s: int, book: Codebook) -> np.ndarray:
    """Codeword lookup; raises on out-of-range indices."""
    if not 0 <= int(s) < book.size:
        raise CorruptStreamError(f"index {s} out of range for K={book.size}")
    return book.codewords[int(s)]


def dequantize_batch(indices: np.ndarray, book: Codebook) -> np.ndarray:
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= book.size):
        raise CorruptStreamError(
            f"index out of range for K={book.size}")
    return book.codewords[indices]


def mcvq_quantize(z: np.ndarray, books: tuple[Codebook, Codebook]):
    """Channel-split two-codebook quantization.

    Returns (indices[2, h, w], z_hat[c, h, w]); channels [0, c/2) go through
    the first codebook, the rest through the second, then merge.
    """
    z = np.ascontiguousarray(z, dtype=np.float32)
    c, h, w = z.shape
    if c % 2:
        raise ConfigError(f"channel count {c} must be even for the split")
    half = c // 2
    for b in books:
        if b.dim != half:
            raise ConfigError(
                f"codebook dim {b.dim} != channel half {half}")
    indices = np.empty((BOOKS_PER_STAGE, h, w), np.int32)
    z_hat = np.empty_like(z)
    for bi, b in enumerate(books):
        part = z[bi * half:(bi + 1) * half]          # [half, h, w]
        vecs = part.reshape(half, h * w).T            # [hw, half]
        idx = quantize_batch(vecs, b)
        indices[bi] = idx.reshape(h, w)
        z_hat[bi * half:(bi + 1) * half] = b.codewords[idx].T.reshape(half, h, w)
    return indices, z_hat


def mcvq_dequantize(indices: np.ndarray, books, channels: int) -> np.ndarray:
    half = channels // 2
    _, h, w = indices.shape
    z_hat = np.empty((channels, h, w), np.float32)
    for bi, b in enumerate(books):
        looked = dequantize_batch(indices[bi].ravel(), b)   # [hw, half]
        z_hat[bi * half:(bi + 1) * half] = looked.T.reshape(half, h, w)
    return z_hat


def vq_downsample(x: np.ndarray, policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Fixed 2x2 per-channel average (a strided conv with a constant
    kernel), accumulated in (ky, kx) raster order.  The hierarchy uses
    content-independent resampling: average-down followed by duplicate-up
    is an orthogonal projection onto block-constant signals, which is what
    keeps residual stages from hurting reconstruction."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample needs even extents, got {h}x{w}")
    quarter = np.float32(0.25)
    taps = (x[:, 0::2, 0::2], x[:, 0::2, 1::2],
            x[:, 1::2, 0::2], x[:, 1::2, 1::2])
    return policy.finish(_accumulate(lambda i: quarter * taps[i], 4, policy))


def vq_upsample(x: np.ndarray, policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Nearest-neighbor 2x duplication (no arithmetic)."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    return policy.finish(np.repeat(np.repeat(x, 2, axis=1), 2, axis=2))


def multistage_quantize(y: np.ndarray, books: CodebookSet,
                        policy: EvalPolicy = DEFAULT_POLICY):
    """Three residual stages of downsample + two-codebook VQ.

    Stage 1 quantizes the downsampled latents; stages 2 and 3 quantize the
    downsampled residual the previous stage left behind.  Returns
    (IndexGrid, y_hat) where y_hat comes from the shared decode path, so the
    encoder-side reference equals the decoder's reconstruction bit for bit.
    """
    y = np.ascontiguousarray(y, dtype=np.float32)
    c, h, w = y.shape
    if h % 8 or w % 8:
        raise ShapeError(f"latent extents {h}x{w} must be divisible by 8")
    stages = []
    cur = y
    for s in range(NUM_STAGES):
        cur = vq_downsample(cur, policy)
        idx, z_hat = mcvq_quantize(cur, books.stages[s])
        stages.append(idx)
        cur = cur - z_hat       # residual quantized by the next stage
    grid = IndexGrid(stages)
    return grid, multistage_dequantize(grid, books, policy)


def multistage_dequantize(grid: IndexGrid, books: CodebookSet,
                          policy: EvalPolicy = DEFAULT_POLICY,
                          stages: int = NUM_STAGES) -> np.ndarray:
    """Reconstruct latents by upsampling from the deepest stage and adding
    each shallower stage's quantized contribution on the way up."""
    if not 1 <= stages <= len(grid.stages):
        raise ConfigError(f"stage count {stages} out of range")
    c = BOOKS_PER_STAGE * books.stages[0][0].dim
    acc = None
    for s in range(stages - 1, -1, -1):
        z_hat = mcvq_dequantize(grid.stages[s], books.stages[s], c)
        acc = z_hat if acc is None else z_hat + vq_upsample(acc, policy)
    return vq_upsample(acc, policy)


def _kmeans_pp_init(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]), np.float64)
    centers[0] = data[rng.integers(n)]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = data[rng.integers(n)]
            continue
        probs = d2 / total
        centers[i] = data[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((data - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(data: np.ndarray, k: int, seed: int = 0, iters: int = 50,
               tol: float = 1e-6):
    """Plain Lloyd k-means with k-means++ seeding.

    Returns (centroids[k, d] float32, warned).  If the data has fewer
    distinct rows than k, distinct rows are recycled as centroids and the
    warning flag is set.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError("k-means needs a non-empty [N, d] batch")
    distinct = np.unique(data, axis=0)
    if distinct.shape[0] < k:
        reps = int(np.ceil(k / distinct.shape[0]))
        centers = np.tile(distinct, (reps, 1))[:k]
        return centers.astype(np.float32), True
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(data, k, rng)
    prev_inertia = np.inf
    for _ in range(iters):
        # chunked assignment keeps the [chunk, k] buffer bounded
        chunk = max(1, _DIST_BUDGET // k)
        assign = np.empty(data.shape[0], np.int64)
        inertia = 0.0
        for lo in range(0, data.shape[0], chunk):
            d2 = ((data[lo:lo + chunk, None, :] - centers[None]) ** 2).sum(axis=2)
            assign[lo:lo + chunk] = np.argmin(d2, axis=1)
            inertia += d2[np.arange(d2.shape[0]), assign[lo:lo + chunk]].sum()
        for ci in range(k):
            mask = assign == ci
            if mask.any():
                centers[ci] = data[mask].mean(axis=0)
            else:
                # re-seed dead centroids at the worst-represented point
                far = np.argmax(((data - centers[assign]) ** 2).sum(axis=1))
                centers[ci] = data[far]
        if prev_inertia - inertia <= tol * max(prev_inertia, 1e-30):
            break
        prev_inertia = inertia
    return centers.astype(np.float32), False


def fit_codebooks(latents, spec: CodebookSpec, seed: int = 0,
                  policy: EvalPolicy = DEFAULT_POLICY) -> CodebookSet:
    """Fit per-stage, per-half codebooks by k-means on a latent batch.

    Stages are fitted sequentially on the residuals the previous stage
    leaves, mirroring the quantization path.
    """
    latents = [np.ascontiguousarray(t, dtype=np.float32) for t in latents]
    if not latents:
        raise ConfigError("empty latent batch")
    c = latents[0].shape[0]
    half = c // 2
    current = [vq_downsample(t, policy) for t in latents]
    warned = False
    stages = []
    for s, k in enumerate(spec.sizes):
        books = []
        for bi in range(BOOKS_PER_STAGE):
            vecs = np.concatenate([
                t[bi * half:(bi + 1) * half].reshape(half, -1).T
                for t in current])
            centers, warn = kmeans_fit(vecs, k, seed=seed + 31 * s + bi)
            warned = warned or warn
            books.append(Codebook(centers))
        books = tuple(books)
        nxt = []
        for t in current:
            _, z_hat = mcvq_quantize(t, books)
            if s + 1 < NUM_STAGES:
                nxt.append(vq_downsample(t - z_hat, policy))
        current = nxt
        stages.append(books)
    return CodebookSet(stages, fit_warning=warned)
