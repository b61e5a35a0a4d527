"""Model parameters, lattices, quenched disorder and its persistence.

Site enumeration is lexicographic over ``[0, L)^d`` (last coordinate fastest).
Spacetime sites ``(x, t)`` are flattened x-major, ``w = x * M + t``, and every
``(N, M)`` array in the package uses that layout.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError, ShapeMismatchError

GENERATOR_ID = "pcg64-boxmuller-v1"
SCHEMA_VERSION = 1
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the transverse + longitudinal random-field Ising model.

    ``M`` is the Trotter slice count; leave it ``None`` for purely quantum work.
    ``b1`` and ``b3`` are the strengths of the artificial random-field
    perturbations that only exist on the classical side.
    """

    beta: float = 1.0
    J1: float = 1.0
    J3: float = 1.0
    c: float = 1.0
    b1: float = 0.0
    b3: float = 0.0
    d: int = 1
    L: int = 2
    M: int | None = None

    def __post_init__(self):
        for name in ("beta", "J1", "J3", "c", "b1", "b3"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        for name in ("d", "L"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.d not in (1, 2, 3):
            raise ConfigError(f"d must be 1, 2 or 3, got {self.d}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.M is not None:
            if isinstance(self.M, bool) or not isinstance(self.M, (int, np.integer)) or self.M < 1:
                raise ConfigError(f"M must be a positive integer or None, got {self.M!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "L", int(self.L))
        if self.M is not None:
            object.__setattr__(self, "M", int(self.M))

    @property
    def n_sites(self) -> int:
        return self.L ** self.d

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def require_M(self) -> int:
        if self.M is None:
            raise ConfigError("this operation needs a Trotter slice count M")
        return self.M


@dataclass(frozen=True)
class QuantumLattice:
    """Free-boundary cubic lattice ``V_L`` with its nearest-neighbour bonds."""

    d: int
    L: int
    sites: tuple[tuple[int, ...], ...]
    bonds: tuple[tuple[int, int], ...]

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @cached_property
    def bond_array(self) -> np.ndarray:
        return np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.sites]
        for i, j in self.bonds:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(n) for n in nbrs)


def build_lattice(params: ModelParams) -> QuantumLattice:
    """Enumerate sites lexicographically and each nearest-neighbour bond once."""
    d, L = params.d, params.L
    sites = tuple(itertools.product(range(L), repeat=d))
    index = {s: i for i, s in enumerate(sites)}
    bonds = []
    for i, s in enumerate(sites):
        for axis in range(d):
            if s[axis] + 1 < L:
                nb = s[:axis] + (s[axis] + 1,) + s[axis + 1:]
                bonds.append((i, index[nb]))
    return QuantumLattice(d=d, L=L, sites=sites, bonds=tuple(bonds))


@dataclass(frozen=True)
class SpacetimeLattice:
    """``W = V_L x T_M`` with periodic imaginary time."""

    base: QuantumLattice
    M: int

    @property
    def n_sites(self) -> int:
        return self.base.n_sites * self.M

    def index(self, x: int, t: int) -> int:
        return x * self.M + (t % self.M)

    def next_slice(self, t: int) -> int:
        return (t + 1) % self.M

    def prev_slice(self, t: int) -> int:
        return (t - 1) % self.M

    @property
    def shape(self) -> tuple[int, int]:
        return (self.base.n_sites, self.M)


def build_spacetime(params: ModelParams) -> SpacetimeLattice:
    return SpacetimeLattice(base=build_lattice(params), M=params.require_M())


def validate_spins(values, shape) -> np.ndarray:
    """Return ``values`` as an int8 array after checking it is a +-1 field of ``shape``."""
    arr = np.asarray(values)
    if arr.shape != tuple(shape):
        raise ShapeMismatchError(f"spin configuration has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("spin configuration entries must be exactly -1 or +1")
    return arr.astype(np.int8)


# ---------------------------------------------------------------------------
# Seeds and disorder
# ---------------------------------------------------------------------------

def derive_seed(master_seed: int, *key: int) -> int:
    """Split a master seed into an independent 64-bit child seed.

    The child is ``SeedSequence(master_seed, spawn_key=key)`` reduced to one
    uint64 word. Realization ``r`` of an ensemble uses ``key=(0, r)``; the MC
    stream of replica ``a`` for that realization uses ``key=(1, r, a)``.
    """
    ss = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    pairs = (n + 1) // 2
    u = rng.random((pairs, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(theta)
    z[:, 1] = r * np.sin(theta)
    return z.reshape(-1)[:n]


def standard_normals(seed: int, n: int) -> np.ndarray:
    """``n`` N(0,1) draws: Box-Muller on PCG64 doubles, pairs emitted (cos, sin)."""
    rng = np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
    return _box_muller(rng, n)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """Quenched Gaussian fields for one sample.

    ``g1``, ``g3`` have shape ``(N,)``; ``h1``, ``h3`` have shape ``(N, M)``
    (``(N, 0)`` when no Trotter slices were requested).
    """

    g1: np.ndarray
    g3: np.ndarray
    h1: np.ndarray
    h3: np.ndarray
    seed: int
    d: int
    L: int
    M: int | None
    generator_id: str = GENERATOR_ID

    def __post_init__(self):
        for name in ("g1", "g3", "h1", "h3"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.L ** self.d
        m = self.M or 0
        if self.g1.shape != (n,) or self.g3.shape != (n,):
            raise ShapeMismatchError("g1/g3 must have one entry per lattice site")
        if self.h1.shape != (n, m) or self.h3.shape != (n, m):
            raise ShapeMismatchError("h1/h3 must have one entry per spacetime site")

    def __eq__(self, other):
        if not isinstance(other, DisorderRealization):
            return NotImplemented
        meta = (self.seed, self.generator_id, self.d, self.L, self.M)
        other_meta = (other.seed, other.generator_id, other.d, other.L, other.M)
        return meta == other_meta and all(
            getattr(self, k).tobytes() == getattr(other, k).tobytes() for k in ("g1", "g3", "h1", "h3")
        )

    __hash__ = None

    def check_compatible(self, params: ModelParams, need_slices: bool = False):
        if (self.d, self.L) != (params.d, params.L):
            raise ShapeMismatchError(
                f"realization was drawn for d={self.d}, L={self.L}; run uses d={params.d}, L={params.L}"
            )
        if need_slices and self.M != params.M:
            raise ShapeMismatchError(f"realization has M={self.M}, run uses M={params.M}")

    def replace_fields(self, **arrays) -> "DisorderRealization":
        return replace(self, **arrays)


def sample_disorder(params: ModelParams, seed: int) -> DisorderRealization:
    """Draw (g1, g3, h1, h3) in that order from one Box-Muller stream."""
    n = params.n_sites
    m = params.M or 0
    z = standard_normals(seed, 2 * n + 2 * n * m)
    g1, g3 = z[:n], z[n:2 * n]
    h1 = z[2 * n:2 * n + n * m].reshape(n, m)
    h3 = z[2 * n + n * m:].reshape(n, m)
    return DisorderRealization(g1=g1, g3=g3, h1=h1, h3=h3, seed=int(seed) & _MASK64,
                               d=params.d, L=params.L, M=params.M)


def realization_to_dict(r: DisorderRealization) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "seed": r.seed,
        "generator_id": r.generator_id,
        "d": r.d,
        "L": r.L,
        "M": r.M,
        "g1": r.g1.tolist(),
        "g3": r.g3.tolist(),
        "h1": r.h1.reshape(-1).tolist(),
        "h3": r.h3.reshape(-1).tolist(),
    }


def _require(doc, key, types):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"field {key!r} has the wrong type")
    return value


def _float_list(doc, key) -> list:
    values = _require(doc, key, list)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise SchemaError(f"field {key!r} must be a list of numbers")
    return values


def realization_from_dict(doc) -> DisorderRealization:
    if not isinstance(doc, dict):
        raise SchemaError("realization document must be a JSON object")
    version = _require(doc, "version", int)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported realization version {version}")
    d = _require(doc, "d", int)
    L = _require(doc, "L", int)
    M = doc.get("M")
    if M is not None and (not isinstance(M, int) or isinstance(M, bool)):
        raise SchemaError("field 'M' must be an integer or null")
    n, m = L ** d, M or 0
    g1, g3 = _float_list(doc, "g1"), _float_list(doc, "g3")
    h1, h3 = _float_list(doc, "h1"), _float_list(doc, "h3")
    if len(g1) != n or len(g3) != n or len(h1) != n * m or len(h3) != n * m:
        raise SchemaError("array lengths do not match the declared lattice")
    return DisorderRealization(
        g1=g1, g3=g3,
        h1=np.asarray(h1, dtype=float).reshape(n, m),
        h3=np.asarray(h3, dtype=float).reshape(n, m),
        seed=_require(doc, "seed", int),
        generator_id=_require(doc, "generator_id", str),
        d=d, L=L, M=M,
    )


def save_realization(r: DisorderRealization, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(realization_to_dict(r), indent=1) + "\n")
    return path


def load_realization(path, params: ModelParams | None = None) -> DisorderRealization:
    """Read a realization file; with ``params`` also check it fits that lattice."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    r = realization_from_dict(doc)
    if params is not None:
        r.check_compatible(params, need_slices=params.M is not None)
    return r
