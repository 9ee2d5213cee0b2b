"""Site sets: a regular fine grid, coarse observation sites and the
normalizing site ``s0``, together with the index maps between them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inconsistent geometry, risk or experiment configuration."""


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Fine grid, coarse observation sites and normalizing site.

    Attributes
    ----------
    shape : tuple of int
        Number of grid nodes per axis. Fine sites are stored in C order
        (last axis varies fastest).
    spacing : tuple of float
        Grid spacing per axis.
    origin : tuple of float
        Coordinate of the first grid node.
    s0_index : int
        Fine index of the normalizing site.
    coarse_in_fine : ndarray of int, shape (n,)
        Fine index of every coarse observation site ``s_1..s_n``.
    """

    shape: tuple
    spacing: tuple
    origin: tuple
    s0_index: int
    coarse_in_fine: np.ndarray
    fine_sites: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shape = tuple(int(k) for k in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if not (len(shape) == len(spacing) == len(origin)) or len(shape) == 0:
            raise ConfigurationError("shape, spacing and origin must share one dimension")
        if any(k < 1 for k in shape) or any(h <= 0 for h in spacing):
            raise ConfigurationError("side counts must be >= 1 and spacings > 0")
        coarse = np.asarray(self.coarse_in_fine, dtype=np.intp).reshape(-1)
        coarse.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "s0_index", int(self.s0_index))
        object.__setattr__(self, "coarse_in_fine", coarse)

        axes = [o + h * np.arange(k) for o, h, k in zip(origin, spacing, shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        fine = np.stack([m.reshape(-1) for m in mesh], axis=1)
        fine.setflags(write=False)
        object.__setattr__(self, "fine_sites", fine)

        n_fine = fine.shape[0]
        observed = self.observed_in_fine
        if n_fine < 2:
            raise ConfigurationError("the fine grid needs at least two sites")
        if np.any(observed < 0) or np.any(observed >= n_fine):
            raise ConfigurationError("coarse site not on grid")
        if len(np.unique(observed)) != len(observed):
            raise ConfigurationError("coarse sites (including s0) must be distinct grid nodes")

    # -- derived views -------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_fine(self) -> int:
        return self.fine_sites.shape[0]

    @property
    def n_coarse(self) -> int:
        """Number of coarse sites excluding ``s0`` (the paper's ``n``)."""
        return self.coarse_in_fine.shape[0]

    @property
    def observed_in_fine(self) -> np.ndarray:
        """Fine indices of ``(s0, s_1, ..., s_n)`` in that order."""
        return np.concatenate([[self.s0_index], self.coarse_in_fine]).astype(np.intp)

    @property
    def s0(self) -> np.ndarray:
        return self.fine_sites[self.s0_index]

    @property
    def coarse_sites(self) -> np.ndarray:
        return self.fine_sites[self.coarse_in_fine]

    @property
    def latent_in_fine(self) -> np.ndarray:
        """Fine indices that carry no observation."""
        mask = np.ones(self.n_fine, dtype=bool)
        mask[self.observed_in_fine] = False
        return np.flatnonzero(mask)

    @property
    def fully_observed(self) -> bool:
        return self.latent_in_fine.size == 0

    @property
    def diameter(self) -> float:
        """Largest distance between two fine sites."""
        return float(np.sqrt(sum(((k - 1) * h) ** 2 for k, h in zip(self.shape, self.spacing))))

    def multi_index(self, index: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    # -- hashing for per-parameter caches ------------------------------
    def _key(self):
        return (self.shape, self.spacing, self.origin, self.s0_index,
                tuple(self.coarse_in_fine.tolist()))

    def __hash__(self):
        return hash(self._key())

    def __eq__(self, other):
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self._key() == other._key()

    # -- config round trip ---------------------------------------------
    def to_dict(self) -> dict:
        return {
            "side_counts": list(self.shape),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "s0": list(self.multi_index(self.s0_index)),
            "coarse": [list(self.multi_index(i)) for i in self.coarse_in_fine],
        }

    @classmethod
    def from_dict(cls, block: dict) -> "SiteSet":
        """Build a site set from a geometry config block.

        ``coarse`` may be an explicit list of multi-indices (``s0`` is
        added if missing), ``"all"``, or an integer ``k`` selecting ``k``
        evenly spaced nodes per axis (see :func:`build_regular_grid`).
        """
        side_counts = block.get("side_counts", (9, 9))
        d = len(side_counts)
        coarse = block.get("coarse", 3)
        s0 = block.get("s0")
        if s0 is not None and not isinstance(coarse, (str, int)):
            coarse = [tuple(c) if np.ndim(c) else c for c in coarse]
            key = tuple(s0) if np.ndim(s0) else s0
            if key not in coarse:
                coarse = [key] + coarse
        return build_regular_grid(
            side_counts,
            spacing=block.get("spacing", [1.0] * d),
            coarse_pattern=coarse,
            s0_index=s0,
            origin=block.get("origin"),
        )


def _as_per_axis(value, d, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (d,))
    if arr.shape != (d,):
        raise ConfigurationError(f"{name} must have one entry per axis")
    return tuple(arr.tolist())


def _flat_index(multi, shape) -> int:
    multi = tuple(int(i) for i in multi)
    if len(multi) != len(shape) or any(not 0 <= i < k for i, k in zip(multi, shape)):
        raise ConfigurationError(f"coarse site {multi} not on grid of shape {shape}")
    return int(np.ravel_multi_index(multi, shape))


def build_regular_grid(side_counts: Sequence[int],
                       spacing=1.0,
                       coarse_pattern=3,
                       s0_index=None,
                       origin=None) -> SiteSet:
    """Build a regular grid with an embedded coarse observation design.

    Parameters
    ----------
    side_counts : sequence of int
        Nodes per axis.
    spacing : float or sequence of float
        Grid spacing (scalar or per axis).
    coarse_pattern : int, "all" or sequence of multi-indices
        ``k`` selects ``k`` evenly spaced nodes per axis (``k=3`` on a 9x9
        grid gives nodes 0, 4, 8 on each axis); ``"all"`` observes every
        node; an explicit list gives the selected nodes.
    s0_index : int, multi-index or None
        Normalizing site; must be one of the selected nodes. ``None`` picks
        the selected node closest to the grid centre (ties: lowest index).
    origin : sequence of float, optional
        Coordinate of the first node, zero by default.

    Returns
    -------
    SiteSet
    """
    shape = tuple(int(k) for k in side_counts)
    d = len(shape)
    if d == 0 or any(k < 1 for k in shape):
        raise ConfigurationError("side_counts must be positive integers")
    spacing = _as_per_axis(spacing, d, "spacing")
    origin = _as_per_axis(0.0 if origin is None else origin, d, "origin")
    n_fine = int(np.prod(shape))

    if isinstance(coarse_pattern, str):
        if coarse_pattern != "all":
            raise ConfigurationError(f"unknown coarse pattern {coarse_pattern!r}")
        selected = list(range(n_fine))
    elif np.isscalar(coarse_pattern):
        k = int(coarse_pattern)
        if k < 1:
            raise ConfigurationError("coarse pattern count must be >= 1")
        per_axis = []
        for n_axis in shape:
            if k > n_axis:
                raise ConfigurationError("more coarse nodes per axis than grid nodes")
            pos = np.round(np.linspace(0, n_axis - 1, k)).astype(int) if k > 1 else np.array([(n_axis - 1) // 2])
            per_axis.append(pos)
        mesh = np.meshgrid(*per_axis, indexing="ij")
        selected = [_flat_index(m, shape) for m in zip(*(a.reshape(-1) for a in mesh))]
    else:
        selected = [_flat_index(m, shape) if np.ndim(m) else int(m) for m in coarse_pattern]

    if s0_index is None:
        centre = (np.asarray(shape) - 1) / 2.0
        dist = [np.sum((np.array(np.unravel_index(i, shape)) - centre) ** 2) for i in selected]
        s0 = selected[int(np.argmin(dist))]
    elif np.ndim(s0_index):
        s0 = _flat_index(s0_index, shape)
    else:
        s0 = int(s0_index)
    if s0 not in selected:
        raise ConfigurationError("s0 must be one of the selected coarse nodes")
    if any(not 0 <= i < n_fine for i in selected):
        raise ConfigurationError("coarse site not on grid")

    coarse = [i for i in selected if i != s0]
    return SiteSet(shape=shape, spacing=spacing, origin=origin, s0_index=s0,
                   coarse_in_fine=np.array(coarse, dtype=np.intp))
