"""Suzuki-Trotter mapping of the quantum model onto a (d+1)-dimensional Ising model.

With ``u = beta |J1 g1_x + b1 h1_{x,t}| / M`` each temporal bond carries
``K_{x,t}`` with ``tanh(beta K) = exp(-u)`` and contributes a spin-independent
factor ``sqrt(sinh(u) / 2)`` to ``C_W``. Negative transverse coefficients are
gauged away by a pi rotation about the 3-axis, so only ``|coeff|`` enters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (SCHEMA_VERSION, DisorderRealization, ModelParams, SpacetimeLattice,
                   build_spacetime, validate_spins)
from .errors import (ConfigError, ResourceCapError, SchemaError, ShapeMismatchError,
                     ZeroTransverseField)
from . import spectral

ENUMERATION_CAP = 22
_CHUNK = 1 << 15


@dataclass(frozen=True, eq=False)
class ClassicalModel:
    """Compiled couplings of H_W. ``K[x, t]`` joins (x, t) and (x, t+1)."""

    lattice: SpacetimeLattice
    beta: float
    spatial_coupling: float
    K: np.ndarray
    field: np.ndarray
    log_weight: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.lattice.shape

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def M(self) -> int:
        return self.lattice.M


def temporal_coupling(u) -> np.ndarray:
    """beta*K = artanh(exp(-u)) = (log1p(e^-u) - log(1 - e^-u)) / 2."""
    u = np.asarray(u, dtype=float)
    return 0.5 * (np.log1p(np.exp(-u)) - np.log(-np.expm1(-u)))


def log_half_sinh(u) -> np.ndarray:
    """log(sinh(u) / 2) for u > 0 without overflow or cancellation."""
    u = np.asarray(u, dtype=float)
    return u + np.log(-np.expm1(-2.0 * u)) - 2.0 * math.log(2.0)


def _slice_fields(params: ModelParams, disorder: DisorderRealization):
    n, m = params.n_sites, params.require_M()
    disorder.check_compatible(params)
    if disorder.M == m:
        return disorder.h1, disorder.h3
    if params.b1 == 0.0 and params.b3 == 0.0:
        zeros = np.zeros((n, m))
        return zeros, zeros
    raise ShapeMismatchError(f"realization has M={disorder.M} but the model uses M={m} with b != 0")


def transverse_slices(params: ModelParams, disorder: DisorderRealization) -> np.ndarray:
    h1, _ = _slice_fields(params, disorder)
    return params.J1 * disorder.g1[:, None] + params.b1 * h1


def compile_model(params: ModelParams, disorder: DisorderRealization) -> ClassicalModel:
    """Build H(b1, b3, c, h1, h3); at b1 = b3 = 0 this is H_W."""
    lattice = build_spacetime(params)
    M, beta = lattice.M, params.beta
    h1, h3 = _slice_fields(params, disorder)
    coeff = np.abs(params.J1 * disorder.g1[:, None] + params.b1 * h1)
    if np.any(coeff == 0.0):
        x, t = np.argwhere(coeff == 0.0)[0]
        raise ZeroTransverseField(f"transverse coefficient vanishes at site {x}, slice {t}")
    u = beta * coeff / M
    K = temporal_coupling(u) / beta
    if not np.all(np.isfinite(K)):
        raise ZeroTransverseField("transverse coefficient too small: temporal coupling overflows")
    field = (params.J3 * disorder.g3[:, None] + params.b3 * math.sqrt(M) * h3 + params.c) / (2.0 * M)
    log_weight = float(0.5 * np.sum(log_half_sinh(u)))
    K.setflags(write=False)
    field = np.ascontiguousarray(field, dtype=float)
    field.setflags(write=False)
    return ClassicalModel(lattice=lattice, beta=beta, spatial_coupling=1.0 / (4.0 * M),
                          K=K, field=field, log_weight=log_weight)


def config_energies(model: ClassicalModel, S: np.ndarray) -> np.ndarray:
    """H_W for a stack of configurations of shape (C, N, M)."""
    bonds = model.lattice.base.bond_array
    e = np.zeros(S.shape[0])
    if len(bonds):
        e -= model.spatial_coupling * np.einsum("cbt,cbt->c", S[:, bonds[:, 0], :], S[:, bonds[:, 1], :],
                                                dtype=float)
    e -= np.einsum("cxt,cxt,xt->c", S, np.roll(S, -1, axis=2), model.K, dtype=float)
    e -= np.einsum("cxt,xt->c", S, model.field, dtype=float)
    return e


def classical_energy(model: ClassicalModel, config) -> float:
    """H_W(sigma) for a (N, M) array of +-1."""
    sigma = validate_spins(config, model.shape)
    return float(config_energies(model, sigma[None].astype(float))[0])


def local_field(model: ClassicalModel, config, x: int, t: int) -> float:
    """phi_w such that H_W = -sigma_w phi_w + (terms without sigma_w) for M >= 2."""
    M = model.M
    s = np.asarray(config)
    nb = model.lattice.base.neighbors[x]
    phi = model.spatial_coupling * float(sum(s[y, t] for y in nb)) + model.field[x, t]
    if M > 1:
        tp, tn = (t - 1) % M, (t + 1) % M
        phi += model.K[x, tp] * s[x, tp] + model.K[x, t] * s[x, tn]
    return float(phi)


def enumerate_configs(n_sites: int, start: int, stop: int) -> np.ndarray:
    k = np.arange(start, stop)[:, None]
    shifts = np.arange(n_sites - 1, -1, -1)[None, :]
    return (1 - 2 * ((k >> shifts) & 1)).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ClassicalSums:
    """Exact Gibbs data of the classical model; ``logZ`` excludes log C_W."""

    logZ: float
    marginals: np.ndarray
    pair: np.ndarray

    @property
    def truncated_pair(self) -> np.ndarray:
        m = self.marginals.reshape(-1)
        return self.pair - np.outer(m, m)


def _check_enum(model: ClassicalModel, cap: int):
    if model.n_sites > cap:
        raise ResourceCapError(f"|W| = {model.n_sites} exceeds enumeration cap {cap}")


def gibbs_distribution(model: ClassicalModel, cap: int = ENUMERATION_CAP):
    """All configurations (rows, flattened x-major) with their Gibbs probabilities."""
    _check_enum(model, cap)
    W = model.n_sites
    S = enumerate_configs(W, 0, 2 ** W)
    logw = -model.beta * config_energies(model, S.reshape(-1, *model.shape).astype(float))
    logZ = logw.max() + np.log(np.exp(logw - logw.max()).sum())
    return S, np.exp(logw - logZ), float(logZ)


def exact_classical_sum(model: ClassicalModel, cap: int = ENUMERATION_CAP) -> ClassicalSums:
    """Brute-force log Z, <sigma_w> and <sigma_w sigma_z> over 2^|W| states.

    Chunks are reduced in a fixed order with a running log-sum-exp, so the
    result does not depend on chunking.
    """
    _check_enum(model, cap)
    W = model.n_sites
    total = 2 ** W
    log_shift = None
    acc_z = 0.0
    acc_m = np.zeros(W)
    acc_p = np.zeros((W, W))
    for start in range(0, total, _CHUNK):
        S = enumerate_configs(W, start, min(total, start + _CHUNK)).astype(float)
        logw = -model.beta * config_energies(model, S.reshape(-1, *model.shape))
        cmax = logw.max()
        if log_shift is None:
            log_shift = cmax
        elif cmax > log_shift:
            scale = math.exp(log_shift - cmax)
            acc_z *= scale
            acc_m *= scale
            acc_p *= scale
            log_shift = cmax
        w = np.exp(logw - log_shift)
        acc_z += w.sum()
        acc_m += w @ S
        acc_p += (S * w[:, None]).T @ S
    logZ = float(log_shift + math.log(acc_z))
    return ClassicalSums(logZ=logZ, marginals=(acc_m / acc_z).reshape(model.shape),
                         pair=acc_p / acc_z)


def transfer_matrix_logz(model: ClassicalModel, cap: int = spectral.DEFAULT_CAP) -> float:
    """log Z of the classical model as the trace of a product of slice transfer matrices."""
    N, M = model.shape
    dim = 2 ** N
    if dim > cap:
        raise ResourceCapError(f"transfer matrix dimension {dim} exceeds cap {cap}")
    s = enumerate_configs(N, 0, dim).astype(float)
    bonds = model.lattice.base.bond_array
    spatial = np.zeros(dim)
    for x, y in bonds:
        spatial += model.spatial_coupling * s[:, x] * s[:, y]
    beta = model.beta
    P = np.eye(dim)
    log_scale = 0.0
    for t in range(M):
        diag = spatial + s @ model.field[:, t]
        expo = beta * (diag[:, None] + (s * model.K[:, t]) @ s.T)
        # for M = 1 only the diagonal (self-loop) enters the trace
        shift = expo.max()
        T = np.exp(expo - shift)
        P = P @ T
        norm = np.abs(P).max()
        P /= norm
        log_scale += shift + math.log(norm)
    return float(log_scale + math.log(np.trace(P)))


def classical_logz(model: ClassicalModel, enum_cap: int = ENUMERATION_CAP,
                   cap: int = spectral.DEFAULT_CAP) -> float:
    if model.n_sites <= enum_cap:
        return exact_classical_sum(model, enum_cap).logZ
    return transfer_matrix_logz(model, cap)


@dataclass(frozen=True)
class TrotterPoint:
    M: int
    logZ_classical: float
    log_weight: float
    logZ_quantum: float
    rel_error: float


def trotter_gap(params: ModelParams, disorder: DisorderRealization, M_list,
                enum_cap: int = ENUMERATION_CAP, cap: int = spectral.DEFAULT_CAP) -> list[TrotterPoint]:
    """|C_W Z_cl(M) - Z| / Z for each M, computed in log space."""
    if params.b1 != 0.0 or params.b3 != 0.0:
        raise ConfigError("trotter_gap compares against the unperturbed quantum model; set b1 = b3 = 0")
    q = params.with_(M=None)
    logZq = spectral.solve(q, disorder, cap=cap).logZ
    out = []
    for M in M_list:
        model = compile_model(params.with_(M=int(M)), disorder)
        logZc = classical_logz(model, enum_cap, cap)
        rel = abs(math.expm1(model.log_weight + logZc - logZq))
        out.append(TrotterPoint(M=int(M), logZ_classical=logZc, log_weight=model.log_weight,
                                logZ_quantum=logZq, rel_error=rel))
    return out


def model_to_dict(model: ClassicalModel, seed: int | None = None) -> dict:
    base = model.lattice.base
    return {
        "version": SCHEMA_VERSION,
        "kind": "classical_model",
        "seed": seed,
        "d": base.d,
        "L": base.L,
        "M": model.M,
        "beta": model.beta,
        "spatial_coupling": model.spatial_coupling,
        "K": model.K.reshape(-1).tolist(),
        "field": model.field.reshape(-1).tolist(),
        "log_weight": model.log_weight,
    }


def model_from_dict(doc) -> ClassicalModel:
    try:
        if doc.get("version") != SCHEMA_VERSION or doc.get("kind") != "classical_model":
            raise SchemaError("not a version-1 classical_model document")
        params = ModelParams(beta=doc["beta"], d=doc["d"], L=doc["L"], M=doc["M"])
        lattice = build_spacetime(params)
        K = np.asarray(doc["K"], dtype=float).reshape(lattice.shape)
        field = np.asarray(doc["field"], dtype=float).reshape(lattice.shape)
        return ClassicalModel(lattice=lattice, beta=float(doc["beta"]),
                              spatial_coupling=float(doc["spatial_coupling"]),
                              K=K, field=field, log_weight=float(doc["log_weight"]))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed classical model document: {exc}") from exc


def save_model(model: ClassicalModel, path, seed: int | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model, seed), indent=1) + "\n")
    return path


def load_model(path) -> ClassicalModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
