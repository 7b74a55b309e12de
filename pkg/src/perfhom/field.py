"""Stationary ergodic capacity fields on the lattice.

Each site value is a pure function of (seed, site, law) through a
counter-based hash, so fields generated over different boxes agree on
overlaps and lattice shifts are exact identities rather than statistical
statements.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from .capacity import PExponent, radius_for_capacity
from .errors import ConfigError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def site_uniform(seed: int, sites: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) deviate per lattice site, keyed on (seed, site).

    ``sites`` has shape (m, n) with integer coordinates; the result only
    depends on the individual rows, never on their order.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    with np.errstate(over="ignore"):
        state = np.full(sites.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        state = _splitmix64(state)
        for d in range(sites.shape[1]):
            coord = sites[:, d].astype(np.uint64)
            state = _splitmix64(state ^ coord)
    return state.astype(np.float64) / 2.0**64


@dataclass(frozen=True)
class ConstantLaw:
    gamma0: float

    def __post_init__(self):
        if self.gamma0 < 0:
            raise ConfigError(f"constant law needs gamma0 >= 0, got {self.gamma0}")

    @property
    def gamma_max(self) -> float:
        return self.gamma0

    @property
    def mean(self) -> float:
        return self.gamma0

    def sample(self, u: np.ndarray) -> np.ndarray:
        return np.full_like(u, self.gamma0)


@dataclass(frozen=True)
class UniformLaw:
    gamma_min: float
    gamma_max_: float

    def __post_init__(self):
        if not 0 <= self.gamma_min <= self.gamma_max_:
            raise ConfigError(
                f"uniform law needs 0 <= lo <= hi, got ({self.gamma_min}, {self.gamma_max_})"
            )

    @property
    def gamma_max(self) -> float:
        return self.gamma_max_

    @property
    def mean(self) -> float:
        return 0.5 * (self.gamma_min + self.gamma_max_)

    def sample(self, u: np.ndarray) -> np.ndarray:
        return self.gamma_min + (self.gamma_max_ - self.gamma_min) * u


@dataclass(frozen=True)
class BernoulliLaw:
    q: float
    gamma0: float

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise ConfigError(f"bernoulli law needs q in [0, 1], got {self.q}")
        if self.gamma0 < 0:
            raise ConfigError(f"bernoulli law needs gamma0 >= 0, got {self.gamma0}")

    @property
    def gamma_max(self) -> float:
        return self.gamma0

    @property
    def mean(self) -> float:
        return self.q * self.gamma0

    def sample(self, u: np.ndarray) -> np.ndarray:
        return np.where(u < self.q, self.gamma0, 0.0)


Law = ConstantLaw | UniformLaw | BernoulliLaw

#: Default site law: bounded above and away from zero.
DEFAULT_LAW = UniformLaw(0.5, 1.5)


def law_from_config(spec) -> Law:
    """Build a law from a config mapping like {"kind": "uniform", "lo": .5, "hi": 1.5}."""
    if isinstance(spec, (ConstantLaw, UniformLaw, BernoulliLaw)):
        return spec
    try:
        kind = spec["kind"]
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"law spec needs a 'kind' key, got {spec!r}") from exc
    if kind == "constant":
        return ConstantLaw(float(spec["gamma0"]))
    if kind == "uniform":
        return UniformLaw(float(spec["lo"]), float(spec["hi"]))
    if kind == "bernoulli":
        return BernoulliLaw(float(spec["q"]), float(spec["gamma0"]))
    raise ConfigError(f"unknown law kind {kind!r}")


@dataclass(frozen=True)
class LatticeBox:
    """Integer box [lo, hi) in Z^n."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ConfigError("box lo/hi dimension mismatch")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigError(f"empty lattice box {self.lo}..{self.hi}")

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def sites(self) -> np.ndarray:
        """All sites of the box as an (m, n) integer array, lexicographic."""
        axes = [np.arange(l, h) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class CapacityField:
    """Lattice-indexed capacity densities gamma(k), reproducibly seeded.

    ``offset`` shifts the sampled site: the stored value at k equals the
    generator's output at k + offset, which is how lattice translations
    are realized exactly.
    """

    box: LatticeBox
    law: Law
    seed: int
    offset: tuple = dc_field(default=())
    values: np.ndarray = dc_field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.box.n

    def gamma(self, k) -> float:
        idx = tuple(int(ki) - li for ki, li in zip(k, self.box.lo))
        return float(self.values[idx])

    def gamma_at_sites(self, sites: np.ndarray) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        lo = np.asarray(self.box.lo, dtype=np.int64)
        idx = (sites - lo).T
        return self.values[tuple(idx)]

    def flat_values(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True)
class PerforationSpec:
    """Hole centers eps*k and their capacity-derived radii."""

    eps: float
    pe: PExponent
    lattice_sites: np.ndarray  # (m, n) int
    centers: np.ndarray  # (m, n) float
    radii: np.ndarray  # (m,) float
    gammas: np.ndarray  # (m,) float

    @property
    def count(self) -> int:
        return len(self.radii)


def sample_field(law: Law, seed: int, box: LatticeBox, offset: tuple = None) -> CapacityField:
    """Generate the field over ``box``; deterministic in (seed, law, site)."""
    if offset is None:
        offset = (0,) * box.n
    if len(offset) != box.n:
        raise ConfigError("offset dimension mismatch")
    sites = box.sites() + np.asarray(offset, dtype=np.int64)
    u = site_uniform(seed, sites)
    values = law.sample(u).reshape(box.shape)
    return CapacityField(box=box, law=law, seed=seed, offset=tuple(offset), values=values)


def shift_field(f: CapacityField, kprime) -> CapacityField:
    """Translate by kprime: result.gamma(k) == generator value at k + kprime."""
    kprime = tuple(int(k) for k in kprime)
    offset = tuple(o + k for o, k in zip(f.offset, kprime))
    return sample_field(f.law, f.seed, f.box, offset=offset)


def unit_box_lattice(eps: float) -> LatticeBox:
    """Lattice box covering eps^{-1} (0,1)^n for n = 2 (closed range 0..M)."""
    M = inverse_cell_size(eps)
    return LatticeBox((0, 0), (M + 1, M + 1))


def inverse_cell_size(eps: float) -> int:
    """1/eps as an exact integer, or ConfigError."""
    frac = Fraction(eps).limit_denominator(10**9)
    if frac.numerator != 1:
        raise ConfigError(f"cell size must be 1/M for integer M, got {eps}")
    return frac.denominator


def field_for_unit_box(law: Law, seed: int, eps: float, n: int = 2) -> CapacityField:
    M = inverse_cell_size(eps)
    box = LatticeBox((0,) * n, (M + 1,) * n)
    return sample_field(law, seed, box)


def holes_from_field(f: CapacityField, eps: float, pe: PExponent) -> PerforationSpec:
    """One hole per interior lattice site with gamma > 0; boundary sites dropped."""
    M = inverse_cell_size(eps)
    n = f.n
    lo = np.asarray(f.box.lo)
    hi = np.asarray(f.box.hi)
    if np.any(lo > 1) or np.any(hi < M):
        raise ConfigError(
            f"field box {f.box.lo}..{f.box.hi} does not cover the interior lattice 1..{M - 1}"
        )
    axes = [np.arange(1, M)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([m.ravel() for m in mesh], axis=1)
    gammas = f.gamma_at_sites(sites)
    keep = gammas > 0
    sites = sites[keep]
    gammas = gammas[keep]
    radii = np.array([radius_for_capacity(g, eps, pe) for g in gammas])
    return PerforationSpec(
        eps=eps,
        pe=pe,
        lattice_sites=sites,
        centers=sites.astype(np.float64) * eps,
        radii=radii,
        gammas=gammas,
    )


def export_field_csv(f: CapacityField, path) -> None:
    """Snapshot as CSV with columns k1,...,kn,gamma."""
    sites = f.box.sites()
    gammas = f.flat_values()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"k{d + 1}" for d in range(f.n)] + ["gamma"])
        for site, g in zip(sites, gammas):
            writer.writerow([*map(int, site), repr(float(g))])
