"""Exact simulation of mean-zero stationary Gaussian fields on lattice windows.

Two exact routes: a dense lower-triangular factorization of the site-pair
covariance matrix (always available at desk scale), and spectral sampling on
an embedding torus for full rectangular windows when the embedding is
nonnegative definite.  Randomness comes from counter-based streams keyed by
(master seed, replicate index), with normals drawn through the inverse CDF so
replicate schedules are reproducible across platforms and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .covariance import Covariogram
from .errors import ConfigError, DimensionMismatch, EmptyWindow, NotPositiveDefinite, WindowTooLarge
from .estimators import FieldSample
from .geometry import LatticeWindow

_U64 = np.uint64
_MASK64 = (1 << 64) - 1

CHOLESKY = "cholesky"
CIRCULANT = "circulant"

DEFAULT_SITE_CAP = 5000


class RngStream:
    """Counter-based random stream keyed by (seed, replicate index).

    A fresh stream replays the same outputs for the same key, and streams with
    distinct indices are independent by construction.
    """

    def __init__(self, seed: int, index: int = 0):
        if seed < 0 or index < 0:
            raise ConfigError("seed and replicate index must be nonnegative")
        self.seed = int(seed)
        self.index = int(index)
        key = np.array([self.seed & _MASK64, self.index & _MASK64], dtype=_U64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniforms(self, n: int) -> np.ndarray:
        """Strictly interior uniforms on (0, 1) with 53-bit resolution."""
        raw = self._gen.integers(0, 1 << 63, size=n, dtype=np.uint64) >> _U64(10)
        return (raw.astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via the inverse CDF of the uniform stream."""
        return ndtri(self.uniforms(n))


def substream(master_seed: int, replicate: int) -> RngStream:
    """Independent stream for one replicate of a seeded experiment."""
    return RngStream(master_seed, replicate)


@dataclass(frozen=True)
class FieldGenerator:
    """Prepared sampler for one (covariogram, window) pair."""

    window: LatticeWindow
    cov: Covariogram
    method: str
    diagnostics: dict = field(default_factory=dict, compare=False)
    chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    spectrum_sqrt: np.ndarray | None = field(default=None, repr=False, compare=False)
    embed_shape: tuple = ()
    block_shape: tuple = ()


def covariance_matrix(cov: Covariogram, window: LatticeWindow, chunk: int = 512) -> np.ndarray:
    """Dense site-pair covariance matrix in window site order."""
    n = window.n_sites
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, chunk):
        block = window.sites[start : start + chunk]
        diffs = block[:, None, :] - window.sites[None, :, :]
        out[start : start + block.shape[0]] = cov.sigma_many(diffs)
    return out


def _is_full_box(window: LatticeWindow) -> bool:
    span = window.hi - window.lo + 1
    return int(np.prod(span)) == window.n_sites


def _circulant_spectrum(cov: Covariogram, span: np.ndarray):
    """Nonnegative spectrum of the embedding torus, or None if indefinite."""
    embed = tuple(int(max(2 * (s - 1), 1)) for s in span)
    lag_axes = []
    for m in embed:
        lags = np.arange(m)
        lags = np.where(lags <= m // 2, lags, lags - m)
        lag_axes.append(lags)
    grids = np.meshgrid(*lag_axes, indexing="ij")
    lags = np.stack([g.ravel() for g in grids], axis=-1)
    base = cov.sigma_many(lags).reshape(embed)
    lam = np.fft.fftn(base)
    if np.max(np.abs(lam.imag)) > 1e-8 * max(np.max(np.abs(lam.real)), 1.0):
        return None, embed
    lam = lam.real
    floor = -1e-10 * max(float(lam.max()), 1.0)
    if lam.min() < floor:
        return None, embed
    return np.sqrt(np.clip(lam, 0.0, None)), embed


def build_generator(
    cov: Covariogram,
    window: LatticeWindow,
    method: str = "auto",
    site_cap: int = DEFAULT_SITE_CAP,
) -> FieldGenerator:
    """Prepare an exact sampler for the covariogram on the window.

    ``auto`` prefers the spectral route on full rectangular windows and falls
    back to the dense factorization; an explicit ``circulant`` request also
    falls back when the embedding fails, with the reason recorded.
    """
    if window.n_sites == 0:
        raise EmptyWindow("cannot build a generator on an empty window")
    if cov.d != window.d:
        raise DimensionMismatch("covariogram dimension mismatch")
    if method not in ("auto", CHOLESKY, CIRCULANT):
        raise ConfigError("method must be auto, cholesky or circulant")

    diagnostics: dict = {"requested": method}
    if method in ("auto", CIRCULANT):
        if _is_full_box(window):
            span = window.hi - window.lo + 1
            sqrt_lam, embed = _circulant_spectrum(cov, span)
            if sqrt_lam is not None:
                diagnostics["embedding"] = embed
                return FieldGenerator(
                    window=window,
                    cov=cov,
                    method=CIRCULANT,
                    diagnostics=diagnostics,
                    spectrum_sqrt=sqrt_lam,
                    embed_shape=embed,
                    block_shape=tuple(int(s) for s in span),
                )
            diagnostics["fallback"] = "embedding not nonnegative definite"
        else:
            diagnostics["fallback"] = "window is not a full rectangle"
        if method == CIRCULANT:
            diagnostics["note"] = "circulant requested; using dense factorization"

    if window.n_sites > site_cap:
        raise WindowTooLarge(
            f"{window.n_sites} sites exceed the dense factorization cap {site_cap}"
        )
    sigma_mat = covariance_matrix(cov, window)
    try:
        chol = np.linalg.cholesky(sigma_mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            "covariance matrix on this window is not positive definite"
        ) from exc
    return FieldGenerator(
        window=window, cov=cov, method=CHOLESKY, diagnostics=diagnostics, chol=chol
    )


def reconstruction_error(gen: FieldGenerator) -> float:
    """Relative Frobenius error of the factorization (dense route only)."""
    if gen.method != CHOLESKY:
        raise ConfigError("reconstruction check applies to the dense factorization")
    sigma_mat = covariance_matrix(gen.cov, gen.window)
    delta = gen.chol @ gen.chol.T - sigma_mat
    return float(np.linalg.norm(delta) / np.linalg.norm(sigma_mat))


def sample_field(gen: FieldGenerator, stream: RngStream) -> FieldSample:
    """One mean-zero Gaussian draw on the generator's window."""
    if gen.method == CHOLESKY:
        z = stream.normals(gen.window.n_sites)
        values = gen.chol @ z
        return FieldSample(gen.window, values[:, None])
    m = int(np.prod(gen.embed_shape))
    z = stream.normals(2 * m)
    zeta = (z[:m] + 1j * z[m:]).reshape(gen.embed_shape)
    w = np.fft.fftn(gen.spectrum_sqrt * zeta) / np.sqrt(m)
    block = w.real[tuple(slice(0, s) for s in gen.block_shape)]
    return FieldSample(gen.window, block.ravel()[:, None])


def lift_for_statistic(sample: FieldSample, stat_name: str) -> FieldSample:
    """Deterministic per-site transform giving a statistic its input columns."""
    name = stat_name.lower()
    if name == "mean":
        return sample
    if name == "momvar":
        x = sample.values[:, 0]
        return FieldSample(sample.window, np.stack([x, x * x], axis=1))
    raise ConfigError(
        f"no scalar-field lift registered for statistic {stat_name!r}"
    )
