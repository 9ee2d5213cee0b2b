"""Positively homogeneous risk functionals on site-indexed vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConfigurationError, SiteSet

KINDS = ("fine_mean", "coarse_mean", "sup", "weighted")
TARGETS = ("fine", "coarse")


@dataclass(frozen=True, eq=False)
class RiskSpec:
    """A degree-1 homogeneous functional.

    ``target`` names the site set the functional reads: ``"fine"`` (the
    whole grid, in fine order) or ``"coarse"`` (``s0`` followed by the
    coarse sites). ``fine_mean``/``coarse_mean`` fix the target; ``sup``
    and ``weighted`` take it explicitly.
    """

    kind: str
    target: str = "fine"
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown risk kind {self.kind!r}")
        target = {"fine_mean": "fine", "coarse_mean": "coarse"}.get(self.kind, self.target)
        if target not in TARGETS:
            raise ConfigurationError(f"unknown risk target {self.target!r}")
        object.__setattr__(self, "target", target)
        if self.kind == "weighted":
            if self.weights is None:
                raise ConfigurationError("weighted risk needs weights")
            w = tuple(float(x) for x in np.asarray(self.weights, dtype=float).reshape(-1))
            if any(x < 0 for x in w) or not any(x > 0 for x in w):
                raise ConfigurationError("risk weights must be nonnegative and not all zero")
            object.__setattr__(self, "weights", w)

    def _key(self):
        return (self.kind, self.target, self.weights)

    def __hash__(self):
        return hash(self._key())

    def __eq__(self, other):
        return isinstance(other, RiskSpec) and self._key() == other._key()

    @classmethod
    def point(cls, index: int, size: int, target: str = "fine") -> "RiskSpec":
        """Evaluation at a single site of the target set."""
        w = np.zeros(size)
        w[index] = 1.0
        return cls("weighted", target, tuple(w))

    def target_indices(self, sites: SiteSet) -> np.ndarray | None:
        """Fine indices read by the functional (``None`` means the whole grid in order)."""
        return None if self.target == "fine" else sites.observed_in_fine

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "target": self.target}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_config(cls, value) -> "RiskSpec":
        if isinstance(value, str):
            return cls(value)
        return cls(value["kind"], value.get("target", "fine"), value.get("weights"))


FINE_MEAN = RiskSpec("fine_mean")
COARSE_MEAN = RiskSpec("coarse_mean")


def evaluate(spec: RiskSpec, values) -> np.ndarray | float:
    """Evaluate the functional on the last axis of ``values``.

    Accepts a single vector or a stack of vectors; returns a float or an
    array with the leading shape.
    """
    v = np.asarray(values, dtype=float)
    if spec.kind == "weighted":
        w = np.asarray(spec.weights)
        if v.shape[-1] != w.size:
            raise ValueError(f"risk expects {w.size} values, got {v.shape[-1]}")
        out = v @ w
    elif spec.kind == "sup":
        out = v.max(axis=-1)
    else:
        out = v.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def evaluate_prepended(spec: RiskSpec, coarse_values) -> np.ndarray | float:
    """Risk of ``(1, x)``: the value at ``s0`` is fixed to one."""
    x = np.asarray(coarse_values, dtype=float)
    ones = np.ones(x.shape[:-1] + (1,))
    return evaluate(spec, np.concatenate([ones, x], axis=-1))


def evaluate_on_fine(spec: RiskSpec, sites: SiteSet, fields) -> np.ndarray | float:
    """Evaluate on fine-grid vectors, projecting to the target set first."""
    f = np.asarray(fields, dtype=float)
    if f.shape[-1] != sites.n_fine:
        raise ValueError(f"expected {sites.n_fine} fine-grid values, got {f.shape[-1]}")
    idx = spec.target_indices(sites)
    if idx is not None:
        f = f[..., idx]
    return evaluate(spec, f)


def check_target(spec: RiskSpec, sites: SiteSet):
    """Raise if a weighted spec does not match the size of its target set."""
    if spec.kind == "weighted":
        size = sites.n_fine if spec.target == "fine" else sites.n_coarse + 1
        if len(spec.weights) != size:
            raise ConfigurationError(f"risk weights have length {len(spec.weights)}, "
                                     f"target set has {size} sites")


def fine_weights(spec: RiskSpec, sites: SiteSet) -> np.ndarray | None:
    """Weights ``a`` with ``r(f) = a @ f`` on fine vectors, or ``None`` if
    the functional is not linear."""
    if spec.kind == "sup":
        return None
    idx = spec.target_indices(sites)
    size = sites.n_fine if idx is None else idx.size
    local = np.asarray(spec.weights) if spec.kind == "weighted" else np.full(size, 1.0 / size)
    if idx is None:
        return local.copy()
    out = np.zeros(sites.n_fine)
    np.add.at(out, idx, local)
    return out
