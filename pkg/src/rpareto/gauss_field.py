"""Fractional Brownian field simulation and Gaussian conditioning.

The field ``G`` is centred Gaussian with covariance

    Cov(G(s), G(t)) = c (|s|^beta + |t|^beta - |s - t|^beta),

so that ``Var(G(s) - G(t)) = 2 c |s - t|^beta``. Two exact samplers are
provided on regular grids:

* circulant embedding of a compactly supported stationary covariance that
  agrees with the field's increment structure on the grid (the
  stationarisation of Stein, 2002), followed by pinning at the grid anchor
  and a random linear correction;
* a dense Cholesky factorisation of the covariance matrix.

Both consume a fixed number of standard normals per draw (``noise_dim``),
which is what the coupled normalizing-constant estimator relies on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft
from scipy.linalg import solve_triangular

from .geometry import ConfigurationError, SiteSet

JITTER_START = 1e-10
JITTER_MAX = 1e-6
EIGEN_TOL = 1e-10
# support radius (unit coordinates) of the widest stationary embedding
EMBED_RADIUS = 2.0


class NumericalError(ArithmeticError):
    """A factorisation or estimator failed beyond its repair budget."""


@dataclass(frozen=True)
class VariogramParams:
    """Power variogram ``gamma(h) = c |h|^beta``."""

    c: float
    beta: float

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ValueError(f"variogram scale must be positive, got {self.c}")
        if not 0 < self.beta <= 2:
            raise ValueError(f"variogram exponent must lie in (0, 2], got {self.beta}")


@dataclass
class GaussianFieldSample:
    values: np.ndarray
    seed_trace: object = None
    pin_index: int | None = 0


def semivariogram(h, params: VariogramParams):
    """``c * |h|^beta`` for lag vectors ``h`` (last axis is the coordinate)."""
    h = np.asarray(h, dtype=float)
    norm = np.sqrt(np.sum(h * h, axis=-1))
    return params.c * norm ** params.beta


def fbf_covariance(s, t, params: VariogramParams):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    ns = np.sqrt(np.sum(s * s, axis=-1))
    nt = np.sqrt(np.sum(t * t, axis=-1))
    d = s - t
    nd = np.sqrt(np.sum(d * d, axis=-1))
    b = params.beta
    return params.c * (ns ** b + nt ** b - nd ** b)


def fbf_covariance_matrix(points, params: VariogramParams, pin=None) -> np.ndarray:
    """Covariance matrix of the field pinned at ``pin`` (default: coordinate origin)."""
    pts = np.asarray(points, dtype=float)
    if pin is not None:
        pts = pts - np.asarray(pin, dtype=float)
    return fbf_covariance(pts[:, None, :], pts[None, :, :], params)


def cholesky_jitter(matrix: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor, adding escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * trace / n`` and grows tenfold up to
    ``1e-6 * trace / n``.
    """
    n = matrix.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(matrix) / n, np.finfo(float).tiny)
    eps = JITTER_START
    while eps <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(matrix + eps * scale * np.eye(n))
        except np.linalg.LinAlgError:
            eps *= 10.0
    cond = np.linalg.cond(matrix)
    raise NumericalError(f"{what} matrix not positive definite after jitter "
                         f"(n={n}, condition number {cond:.3e})")


# ---------------------------------------------------------------------------
# stationary embedding of the fractional Brownian field
# ---------------------------------------------------------------------------

def _embedding_coefficients(beta):
    """Coefficients ``(c0, c2, b, R)`` of the stationary covariance

    rho(r) = c0 - r^beta + c2 r^2         for r <= 1,
             b (R - r)^3 / r              for 1 < r <= R,
             0                            otherwise.
    """
    if beta <= 1.5:
        return 1.0 - beta / 2.0, beta / 2.0, 0.0, 1.0
    R = EMBED_RADIUS
    b = beta * (2.0 - beta) / (3.0 * R * (R * R - 1.0))
    c2 = (beta - b * (R - 1.0) ** 2 * (R + 2.0)) / 2.0
    c0 = b * (R - 1.0) ** 3 + 1.0 - c2
    return c0, c2, b, R


def _stationary_rho(r, beta):
    c0, c2, b, R = _embedding_coefficients(beta)
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inner = r <= 1.0
    out[inner] = c0 - r[inner] ** beta + c2 * r[inner] ** 2
    if b > 0:
        outer = (r > 1.0) & (r <= R)
        out[outer] = b * (R - r[outer]) ** 3 / r[outer]
    return out


class FieldSampler:
    """Exact fBf sampler on the fine grid of a :class:`SiteSet`.

    The field is pinned at the grid anchor (fine index 0), so its
    covariance is ``fbf_covariance(s - a, t - a)`` with ``a`` the anchor;
    on grids built with the default origin ``a`` is the coordinate origin.

    Parameters
    ----------
    sites : SiteSet
    method : {"auto", "circulant", "cholesky"}
        ``auto`` picks whichever path is cheaper per draw.
    """

    def __init__(self, sites: SiteSet, method: str = "auto"):
        if method not in ("auto", "circulant", "cholesky"):
            raise ConfigurationError(f"unknown sampler method {method!r}")
        self.sites = sites
        self.n = sites.n_fine
        self.diameter = sites.diameter
        anchor = sites.fine_sites[0]
        self._rel = sites.fine_sites - anchor
        self._unit = self._rel / self.diameter

        # period per axis >= 2 * EMBED_RADIUS in unit coordinates, so the
        # periodised covariance coincides with rho on the torus for every beta
        periods = []
        for k, h in zip(sites.shape, sites.spacing):
            if k == 1:
                periods.append(1)
            else:
                need = int(math.ceil(2 * EMBED_RADIUS * self.diameter / h - 1e-9))
                periods.append(sp_fft.next_fast_len(max(need, 2 * (k - 1))))
        self.embed_shape = tuple(periods)
        self.embed_size = int(np.prod(periods))

        if method == "auto":
            m = self.embed_size
            circ_cost = m * (math.log2(max(m, 2)) + 4)
            dense_cost = (self.n - 1) ** 2
            method = "circulant" if circ_cost < dense_cost else "cholesky"
        self.method = method
        if method == "circulant":
            self.noise_dim = self.embed_size + sites.dim
        else:
            self.noise_dim = self.n - 1
        self._eig_cache = {}
        self._chol_cache = {}
        self.fallback_betas = set()

    # -- per-beta factors (unit scale c = 1) ---------------------------------
    def _eigenvalues(self, beta):
        lam = self._eig_cache.get(beta)
        if lam is None:
            lags = []
            for m, k, h in zip(self.embed_shape, self.sites.shape, self.sites.spacing):
                idx = np.arange(m)
                lags.append(np.minimum(idx, m - idx) * (h / self.diameter))
            mesh = np.meshgrid(*lags, indexing="ij")
            r = np.sqrt(sum(g * g for g in mesh))
            lam = sp_fft.fftn(_stationary_rho(r, beta)).real
            lo = lam.min()
            top = max(lam.max(), 0.0)
            if lo < -EIGEN_TOL * max(top, 1e-300):
                lam = None
            else:
                lam = np.sqrt(np.clip(lam, 0.0, None))
            self._eig_cache[beta] = lam
        return lam

    def _dense_factor(self, beta):
        L = self._chol_cache.get(beta)
        if L is None:
            cov = fbf_covariance_matrix(self._rel[1:], VariogramParams(1.0, beta))
            L = cholesky_jitter(cov, "fBf")
            self._chol_cache[beta] = L
        return L

    def transform(self, noise, params: VariogramParams) -> np.ndarray:
        """Map standard normal rows of width ``noise_dim`` to fBf draws.

        Returns an array of shape ``(rows, n_fine)``; column 0 (the anchor)
        is exactly zero.
        """
        noise = np.atleast_2d(np.asarray(noise, dtype=float))
        if noise.shape[1] != self.noise_dim:
            raise ValueError(f"noise width {noise.shape[1]} != sampler noise_dim {self.noise_dim}")
        rows = noise.shape[0]
        beta = float(params.beta)
        out = np.zeros((rows, self.n))
        if self.method == "circulant":
            sqrt_lam = self._eigenvalues(beta)
            if sqrt_lam is None:
                if beta not in self.fallback_betas:
                    warnings.warn(f"circulant embedding not PSD for beta={beta}; "
                                  "using dense Cholesky", RuntimeWarning, stacklevel=2)
                    self.fallback_betas.add(beta)
                L = self._dense_factor(beta)
                out[:, 1:] = noise[:, :self.n - 1] @ L.T
            else:
                axes = tuple(range(1, len(self.embed_shape) + 1))
                z = noise[:, :self.embed_size].reshape((rows,) + self.embed_shape)
                y = sp_fft.ifftn(sqrt_lam * sp_fft.fftn(z, axes=axes), axes=axes).real
                crop = (slice(None),) + tuple(slice(0, k) for k in self.sites.shape)
                y = y[crop].reshape(rows, self.n)
                _, c2, _, _ = _embedding_coefficients(beta)
                lin = noise[:, self.embed_size:] @ self._unit.T
                out = (y - y[:, :1] + math.sqrt(2.0 * c2) * lin) * self.diameter ** (beta / 2.0)
                out[:, 0] = 0.0
        else:
            L = self._dense_factor(beta)
            out[:, 1:] = noise @ L.T
        out *= math.sqrt(params.c)
        return out

    def sample(self, params: VariogramParams, rng: np.random.Generator, size=None):
        k = 1 if size is None else int(size)
        noise = rng.standard_normal((k, self.noise_dim))
        fields = self.transform(noise, params)
        return fields[0] if size is None else fields


@lru_cache(maxsize=64)
def get_sampler(sites: SiteSet, method: str = "auto") -> FieldSampler:
    return FieldSampler(sites, method)


def sample_fbf(sites: SiteSet, params: VariogramParams, rng: np.random.Generator,
               method: str = "auto") -> GaussianFieldSample:
    """One exact draw of the fractional Brownian field on the fine grid."""
    sampler = get_sampler(sites, method)
    return GaussianFieldSample(values=sampler.sample(params, rng), seed_trace=_trace(rng), pin_index=0)


def _trace(rng):
    try:
        return rng.bit_generator.seed_seq.entropy
    except AttributeError:
        return None


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

@dataclass
class ConditionalGaussian:
    """Law of the field given its values on ``condition_indices``.

    ``mean`` has length ``n_sites``; the covariance factor acts on the free
    (unconditioned) sites only and is exposed in full as :attr:`factor`.
    """

    n_sites: int
    condition_indices: np.ndarray
    condition_values: np.ndarray
    free_indices: np.ndarray
    mean: np.ndarray
    chol: np.ndarray

    @property
    def factor(self) -> np.ndarray:
        full = np.zeros((self.n_sites, self.n_sites))
        full[np.ix_(self.free_indices, self.free_indices)] = self.chol
        return full

    @property
    def covariance(self) -> np.ndarray:
        f = self.factor
        return f @ f.T


class KrigingOperator:
    """Simple-kriging weights and conditional factor for a fixed design.

    Sites listed in ``fixed`` carry zero prior variance (the pinning
    site); they are conditioned to zero implicitly.
    """

    def __init__(self, points, cond, fixed, beta):
        n = points.shape[0]
        cond = np.asarray(cond, dtype=np.intp)
        known = np.zeros(n, dtype=bool)
        known[cond] = True
        known[fixed] = True
        self.n = n
        self.cond = cond
        self.active = np.array([i for i in cond if i not in set(fixed.tolist())], dtype=np.intp)
        self.free = np.flatnonzero(~known)
        cov = fbf_covariance_matrix(points, VariogramParams(1.0, beta))
        s_bb = cov[np.ix_(self.active, self.active)]
        s_ba = cov[np.ix_(self.active, self.free)]
        s_aa = cov[np.ix_(self.free, self.free)]
        if self.active.size:
            lb = cholesky_jitter(s_bb, "conditioning")
            v = solve_triangular(lb, s_ba, lower=True)
            # weights W with mean_free = x_active @ W
            self.weights = solve_triangular(lb.T, v, lower=False)
            cond_cov = s_aa - v.T @ v
        else:
            self.weights = np.zeros((0, self.free.size))
            cond_cov = s_aa
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        self.unit_chol = cholesky_jitter(cond_cov, "conditional") if self.free.size else np.zeros((0, 0))

    def free_mean(self, active_values):
        """Conditional mean on the free sites for values on the active set."""
        return np.asarray(active_values, dtype=float) @ self.weights


@lru_cache(maxsize=512)
def _kriging_operator(sites: SiteSet, cond: tuple, pin, beta: float) -> KrigingOperator:
    pts = sites.fine_sites
    pin_point = np.zeros(sites.dim) if pin is None else pts[pin]
    rel = pts - pin_point
    fixed = np.flatnonzero(np.all(rel == 0.0, axis=1))
    return KrigingOperator(rel, cond, fixed, beta)


def kriging_operator(sites: SiteSet, condition_indices, params: VariogramParams,
                     pin=None) -> KrigingOperator:
    cond = tuple(int(i) for i in np.asarray(condition_indices, dtype=np.intp).reshape(-1))
    if len(set(cond)) != len(cond):
        raise ConfigurationError("conditioning sites must be distinct")
    return _kriging_operator(sites, cond, None if pin is None else int(pin), float(params.beta))


def build_conditional(sites: SiteSet, condition_indices, condition_values,
                      params: VariogramParams, pin=None) -> ConditionalGaussian:
    """Gaussian conditioning of the fBf on a subset of fine sites.

    Parameters
    ----------
    pin : int, optional
        Fine index at which the field is pinned to zero. By default the
        field is pinned at the coordinate origin, matching
        :func:`fbf_covariance`.
    """
    cond = np.asarray(condition_indices, dtype=np.intp).reshape(-1)
    values = np.asarray(condition_values, dtype=float).reshape(-1)
    if cond.shape != values.shape:
        raise ValueError("one conditioning value per conditioning site is required")
    op = kriging_operator(sites, cond, params, pin)
    lookup = dict(zip(cond.tolist(), values.tolist()))
    for i in set(cond.tolist()) - set(op.active.tolist()):
        if lookup[i] != 0.0:
            raise ConfigurationError(f"site {i} is pinned at zero but conditioned to {lookup[i]}")
    active_vals = np.array([lookup[i] for i in op.active.tolist()])
    mean = np.zeros(sites.n_fine)
    mean[op.free] = op.free_mean(active_vals)
    mean[cond] = values
    return ConditionalGaussian(n_sites=sites.n_fine, condition_indices=cond,
                               condition_values=values, free_indices=op.free,
                               mean=mean, chol=math.sqrt(params.c) * op.unit_chol)


def sample_conditional(cond: ConditionalGaussian, rng: np.random.Generator | None = None,
                       size=None, noise=None) -> GaussianFieldSample:
    """Draw ``mean + L z``; conditioning sites are reproduced exactly.

    ``noise`` may be passed explicitly (shape ``(n_free,)`` or
    ``(size, n_free)``) instead of drawing it from ``rng``.
    """
    k = 1 if size is None else int(size)
    if noise is None:
        noise = rng.standard_normal((k, cond.free_indices.size))
    noise = np.atleast_2d(noise)
    values = np.tile(cond.mean, (noise.shape[0], 1))
    values[:, cond.free_indices] += noise @ cond.chol.T
    if size is None:
        values = values[0]
    return GaussianFieldSample(values=values, seed_trace=_trace(rng) if rng is not None else None,
                               pin_index=None)
