"""Truncated SVD of the data matrix: subspaces, truncation level, disk cache.

The data matrix has at most ``n_detectors`` nonzero singular values, so
only the first ``n_detectors`` left/right singular vectors are ever
computed or stored.  Truncation at level L splits the stored right
vectors into the signal block (columns < L) and the usable noise block
(columns L..rank); modes below the null threshold are flagged unusable
rather than fabricated.

Cache file layout (little-endian): magic ``TRSC``, format version u32,
meta-hash 32 bytes, n_detectors u64, phase size u64, then the singular
values, the left vectors (column-major), and the stored right vectors
(column-major) as IEEE-754 doubles.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CacheFormatError,
    CacheHashError,
    CacheTruncatedError,
    CacheVersionError,
    InvalidArgumentError,
    NumericalError,
)
from .grid import AngularGrid, Mesh

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"TRSC"
MATRIX_MAGIC = b"TRSA"
FORMAT_VERSION = 1
# below this multiple of the leading singular value a mode counts as numerical null space
NULL_THRESHOLD = 1e-13


@dataclass(frozen=True)
class CacheMeta:
    """Provenance of a cache: grid digest and format version.

    ``created_at`` is set when the SVD is computed; the fixed file layout
    does not persist it, so it is ``None`` after a load.
    """

    grid_hash: bytes
    format_version: int = FORMAT_VERSION
    created_at: float | None = None


@dataclass
class SvdCache:
    """Truncated singular triplets of the data matrix.

    ``mu`` is nonincreasing; ``left[:, i]`` and ``right[:, i]`` satisfy
    ``A right_i = mu_i left_i`` and ``A^t left_i = mu_i right_i``.
    """

    mu: np.ndarray
    left: np.ndarray
    right: np.ndarray
    meta: CacheMeta = field(default_factory=lambda: CacheMeta(grid_hash=b"\x00" * 32))

    @property
    def n_detectors(self) -> int:
        return self.left.shape[0]

    @property
    def n_phase(self) -> int:
        return self.right.shape[0]

    @property
    def usable(self) -> np.ndarray:
        """Boolean mask of modes above the null threshold."""
        if self.mu.size == 0 or self.mu[0] <= 0.0:
            return np.zeros(self.mu.shape, dtype=bool)
        return self.mu >= NULL_THRESHOLD * self.mu[0]

    @property
    def numerical_rank(self) -> int:
        return int(self.usable.sum())

    def signal_basis(self, level: int) -> np.ndarray:
        return self.right[:, :level]

    def noise_basis(self, level: int) -> np.ndarray:
        """Usable noise-subspace columns (level .. numerical rank)."""
        return self.right[:, level : self.numerical_rank]


def compute_svd(matrix: np.ndarray, grid_hash: bytes = b"\x00" * 32) -> SvdCache:
    """Compute the truncated SVD of the data matrix.

    A dense LAPACK SVD of the full matrix keeps both singular-vector
    families orthonormal to machine precision even across the strongly
    decaying tail of the spectrum, which the identity and orthogonality
    checks downstream rely on; only the leading ``n_detectors`` triplets
    are retained.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidArgumentError("data matrix must be 2-D")
    n_d, n_phase = matrix.shape
    if n_d > n_phase:
        raise InvalidArgumentError(
            f"expected at most as many detectors as phase unknowns, got {n_d} x {n_phase}"
        )
    try:
        left, mu, right_t = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        gram = matrix @ matrix.T
        raise NumericalError(
            "SVD of the data matrix failed",
            diagnostics={
                "shape": matrix.shape,
                "gram_trace": float(np.trace(gram)),
                "gram_max": float(np.abs(gram).max()),
            },
        ) from exc
    cache = SvdCache(
        mu=mu,
        left=left,
        right=np.ascontiguousarray(right_t.T),
        meta=CacheMeta(grid_hash=grid_hash, created_at=time.time()),
    )
    logger.debug(
        "SVD: %d modes, mu1=%.3e, rank=%d", mu.size, mu[0] if mu.size else 0.0, cache.numerical_rank
    )
    return cache


# ---------------------------------------------------------------------------
# truncation level selection


@dataclass(frozen=True)
class TruncationPolicy:
    """How to pick the number of signal modes L.

    ``fixed``: a prescribed level, clamped to [1, n_detectors].
    ``jump``: the largest index whose ratio to the next singular value
    attains the maximal jump, provided that jump exceeds ``jump_factor``
    (falls back to the numerical rank when no jump qualifies).
    ``projection``: data-driven; the last index whose median data
    projection still clears the tail noise floor by ``1 / plateau_factor``.
    """

    kind: str
    value: int | None = None
    jump_factor: float = 10.0
    plateau_factor: float = 0.5

    @staticmethod
    def fixed(value: int) -> "TruncationPolicy":
        return TruncationPolicy(kind="fixed", value=int(value))

    @staticmethod
    def jump(factor: float = 10.0) -> "TruncationPolicy":
        return TruncationPolicy(kind="jump", jump_factor=float(factor))

    @staticmethod
    def projection(plateau: float = 0.5) -> "TruncationPolicy":
        return TruncationPolicy(kind="projection", plateau_factor=float(plateau))


def select_L(cache: SvdCache, data: np.ndarray, policy: TruncationPolicy) -> int:
    """Select the signal-subspace size from the spectrum and the data."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != cache.n_detectors:
        raise InvalidArgumentError("data vectors and cache disagree on detector count")
    if not np.any(data != 0.0):
        raise InvalidArgumentError("cannot select a truncation level from all-zero data")

    rank = cache.numerical_rank
    if policy.kind == "fixed":
        if policy.value is None:
            raise InvalidArgumentError("fixed truncation policy needs a value")
        return int(np.clip(policy.value, 1, cache.n_detectors))

    if policy.kind == "jump":
        mu = cache.mu[:rank]
        if rank < 2:
            return max(rank, 1)
        ratios = mu[:-1] / np.maximum(mu[1:], 1e-300)
        best = float(ratios.max())
        if best < policy.jump_factor:
            logger.debug("jump policy: no ratio above %.1f, using rank %d", policy.jump_factor, rank)
            return rank
        # ties resolved toward the largest index
        return int(np.flatnonzero(ratios == best)[-1]) + 1

    if policy.kind == "projection":
        proj = np.median(np.abs(data @ cache.left), axis=0)[:rank]
        tail = max(3, rank // 8)
        floor = float(np.median(proj[-tail:]))
        above = np.flatnonzero(proj * policy.plateau_factor > floor)
        level = int(above[-1]) + 1 if above.size else 1
        return int(np.clip(level, 1, rank))

    raise InvalidArgumentError(f"unknown truncation policy {policy.kind!r}")


# ---------------------------------------------------------------------------
# grid fingerprint and binary container


def grid_fingerprint(mesh: Mesh, angular: AngularGrid, mode: str, known: np.ndarray) -> bytes:
    """32-byte digest of everything the data matrix was assembled from."""
    h = hashlib.sha256()
    (x0, x1), (y0, y1) = mesh.domain
    h.update(struct.pack("<4q4d", mesh.nx, mesh.ny, mesh.n_detectors, mesh.n_sources, x0, x1, y0, y1))
    h.update(struct.pack("<qd", angular.ns, angular.g))
    h.update(mode.encode())
    h.update(np.ascontiguousarray(known, dtype="<f8").tobytes())
    return h.digest()


def _header(magic: bytes, grid_hash: bytes, dim_a: int, dim_b: int) -> bytes:
    if len(grid_hash) != 32:
        raise InvalidArgumentError("meta hash must be exactly 32 bytes")
    return magic + struct.pack("<I", FORMAT_VERSION) + grid_hash + struct.pack("<QQ", dim_a, dim_b)


def _read_header(raw: bytes, magic: bytes, path: Path) -> tuple[bytes, int, int]:
    header_size = 4 + 4 + 32 + 16
    if len(raw) < header_size:
        raise CacheTruncatedError(f"{path}: file shorter than the {header_size}-byte header")
    if raw[:4] != magic:
        raise CacheFormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CacheVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    grid_hash = raw[8:40]
    dim_a, dim_b = struct.unpack_from("<QQ", raw, 40)
    return grid_hash, dim_a, dim_b


def save_cache(cache: SvdCache, path: str | Path) -> None:
    """Write the cache in the fixed binary layout (bit-exact round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_d, n = cache.n_detectors, cache.n_phase
    with open(path, "wb") as fh:
        fh.write(_header(CACHE_MAGIC, cache.meta.grid_hash, n_d, n))
        fh.write(np.ascontiguousarray(cache.mu, dtype="<f8").tobytes())
        fh.write(np.asfortranarray(cache.left, dtype="<f8").tobytes(order="F"))
        fh.write(np.asfortranarray(cache.right, dtype="<f8").tobytes(order="F"))


def load_cache(path: str | Path, expected_hash: bytes | None = None) -> SvdCache:
    """Load a cache file, verifying magic, version, size, and meta hash."""
    path = Path(path)
    raw = path.read_bytes()
    grid_hash, n_d, n = _read_header(raw, CACHE_MAGIC, path)
    expected_size = 56 + 8 * (n_d + n_d * n_d + n * n_d)
    if len(raw) != expected_size:
        raise CacheTruncatedError(f"{path}: {len(raw)} bytes, header promises {expected_size}")
    if expected_hash is not None and grid_hash != expected_hash:
        raise CacheHashError(
            f"{path}: cache was built for different grids "
            f"(stored {grid_hash.hex()[:12]}..., expected {expected_hash.hex()[:12]}...)"
        )
    off = 56
    mu = np.frombuffer(raw, dtype="<f8", count=n_d, offset=off).copy()
    off += 8 * n_d
    left = (
        np.frombuffer(raw, dtype="<f8", count=n_d * n_d, offset=off).reshape((n_d, n_d), order="F").copy()
    )
    off += 8 * n_d * n_d
    right = (
        np.frombuffer(raw, dtype="<f8", count=n * n_d, offset=off).reshape((n, n_d), order="F").copy()
    )
    return SvdCache(mu=mu, left=left, right=right, meta=CacheMeta(grid_hash=grid_hash))


def save_matrix(matrix: np.ndarray, grid_hash: bytes, path: str | Path) -> None:
    """Write a dense matrix (row-major) in the same container envelope."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_header(MATRIX_MAGIC, grid_hash, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def load_matrix(path: str | Path, expected_hash: bytes | None = None) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    grid_hash, rows, cols = _read_header(raw, MATRIX_MAGIC, path)
    expected_size = 56 + 8 * rows * cols
    if len(raw) != expected_size:
        raise CacheTruncatedError(f"{path}: {len(raw)} bytes, header promises {expected_size}")
    if expected_hash is not None and grid_hash != expected_hash:
        raise CacheHashError(f"{path}: matrix container was built for different grids")
    return np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=56).reshape(rows, cols).copy()
