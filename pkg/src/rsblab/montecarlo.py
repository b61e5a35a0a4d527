"""Replica heat-bath Monte Carlo for the compiled classical model.

Every replica owns one PCG64 stream seeded with ``derive_seed(master, 1, r, a)``
(realization ``r``, replica ``a``). Uniform variates are drawn in numpy and
consumed by a compiled kernel, so results depend only on the seeds.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numba
import numpy as np

from .core import DisorderRealization, ModelParams, derive_seed
from .errors import ConfigError, SimulationError
from .pathintegral import ClassicalModel, compile_model, config_energies
from .stats import ObservableSeries, binning_analysis, integrated_autocorrelation_time

MIN_THERMALIZATION = 1000
_BLOCK = 2048


@numba.njit(cache=True)
def _sweep_lexicographic(s, K, field, nbr_ptr, nbr_idx, spatial, beta, u):
    N, M = s.shape
    k = 0
    for x in range(N):
        for t in range(M):
            phi = field[x, t]
            acc = 0.0
            for j in range(nbr_ptr[x], nbr_ptr[x + 1]):
                acc += s[nbr_idx[j], t]
            phi += spatial * acc
            if M > 1:
                tp = t - 1 if t > 0 else M - 1
                tn = t + 1 if t < M - 1 else 0
                phi += K[x, tp] * s[x, tp] + K[x, t] * s[x, tn]
            if u[k] * (1.0 + math.exp(-2.0 * beta * phi)) < 1.0:
                s[x, t] = 1
            else:
                s[x, t] = -1
            k += 1


@numba.njit(cache=True)
def _worldline_flips(s, field, nbr_ptr, nbr_idx, spatial, beta, u):
    # heat-bath choice between sigma and sigma with worldline x reversed
    N, M = s.shape
    for x in range(N):
        dE = 0.0
        for t in range(M):
            acc = 0.0
            for j in range(nbr_ptr[x], nbr_ptr[x + 1]):
                acc += s[nbr_idx[j], t]
            dE += 2.0 * s[x, t] * (spatial * acc + field[x, t])
        if u[x] * (1.0 + math.exp(beta * dE)) < 1.0:
            for t in range(M):
                s[x, t] = -s[x, t]


@numba.njit(cache=True)
def _run_block(s, K, field, nbr_ptr, nbr_idx, spatial, beta, u, interval, worldlines, snaps):
    N, M = s.shape
    W = N * M
    k = 0
    for m in range(snaps.shape[0]):
        for _ in range(interval):
            _sweep_lexicographic(s, K, field, nbr_ptr, nbr_idx, spatial, beta, u[k, :W])
            if worldlines:
                _worldline_flips(s, field, nbr_ptr, nbr_idx, spatial, beta, u[k, W:])
            k += 1
        snaps[m] = s


def _csr_neighbors(model: ClassicalModel):
    nbrs = model.lattice.base.neighbors
    ptr = np.zeros(len(nbrs) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(n) for n in nbrs])
    idx = np.array([j for n in nbrs for j in n], dtype=np.int64)
    return ptr, idx


def local_fields(model: ClassicalModel, s: np.ndarray) -> np.ndarray:
    """phi_w for every spacetime site of one configuration (self-loop excluded when M = 1)."""
    phi = np.array(model.field, dtype=float)
    for x, y in model.lattice.base.bonds:
        phi[x] += model.spatial_coupling * s[y]
        phi[y] += model.spatial_coupling * s[x]
    if model.M > 1:
        phi += np.roll(model.K, 1, axis=1) * np.roll(s, 1, axis=1) + model.K * np.roll(s, -1, axis=1)
    return phi


def checkerboard_masks(model: ClassicalModel) -> tuple[np.ndarray, np.ndarray]:
    """Two-colouring of W; requires even M (or M = 1) for the periodic time ring."""
    M = model.M
    if M > 1 and M % 2:
        raise ConfigError("checkerboard updates need even M")
    coords = np.array(model.lattice.base.sites).sum(axis=1)
    parity = (coords[:, None] + (np.arange(M)[None, :] if M > 1 else 0)) % 2
    return parity == 0, parity == 1


@dataclass
class ReplicaState:
    """n >= 2 configurations over one compiled model, each with its own RNG stream."""

    configs: np.ndarray
    rngs: list
    seeds: list
    sweep_count: int = 0

    @property
    def n_replicas(self) -> int:
        return self.configs.shape[0]


def init_state(model: ClassicalModel, n_replicas: int, master_seed: int,
               realization_index: int = 0) -> ReplicaState:
    if n_replicas < 2:
        raise ConfigError("replica MC needs at least two replicas")
    seeds = [derive_seed(master_seed, 1, realization_index, a) for a in range(n_replicas)]
    rngs = [np.random.Generator(np.random.PCG64(sd)) for sd in seeds]
    configs = np.empty((n_replicas, *model.shape), dtype=np.int8)
    for a, rng in enumerate(rngs):
        configs[a] = np.where(rng.random(model.shape) < 0.5, 1, -1)
    return ReplicaState(configs=configs, rngs=rngs, seeds=seeds)


def heat_bath_sweep(state: ReplicaState, model: ClassicalModel, beta: float | None = None,
                    order: str = "lexicographic", n_sweeps: int = 1,
                    worldlines: bool = True) -> ReplicaState:
    """Update every site of every replica once per sweep, in place.

    sigma_w = +1 with probability 1 / (1 + exp(-2 beta phi_w)). With
    ``worldlines`` each sweep ends with one heat-bath attempt per spatial site
    to reverse its whole imaginary-time worldline; that move leaves every
    temporal bond unchanged and keeps strongly coupled worldlines ergodic.
    """
    beta = model.beta if beta is None else float(beta)
    N, M = model.shape
    W = N * M
    ptr, idx = _csr_neighbors(model)
    K = np.ascontiguousarray(model.K)
    fld = np.ascontiguousarray(model.field)
    if order == "lexicographic":
        for a in range(state.n_replicas):
            u = state.rngs[a].random((n_sweeps, W + N))
            s = state.configs[a]
            for k in range(n_sweeps):
                _sweep_lexicographic(s, K, fld, ptr, idx, model.spatial_coupling, beta, u[k, :W])
                if worldlines:
                    _worldline_flips(s, fld, ptr, idx, model.spatial_coupling, beta, u[k, W:])
    elif order == "checkerboard":
        masks = checkerboard_masks(model)
        for a in range(state.n_replicas):
            s = state.configs[a]
            for _ in range(n_sweeps):
                u = state.rngs[a].random(W + N)
                uu = u[:W].reshape(N, M)
                for mask in masks:
                    phi = local_fields(model, s.astype(float))
                    up = uu * (1.0 + np.exp(-2.0 * beta * phi)) < 1.0
                    s[mask] = np.where(up[mask], 1, -1)
                if worldlines:
                    _worldline_flips(s, fld, ptr, idx, model.spatial_coupling, beta, u[W:])
    else:
        raise ValueError(f"unknown sweep order {order!r}")
    state.sweep_count += n_sweeps
    return state


def replica_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


def measure_overlaps(state: ReplicaState) -> dict:
    """rho^1 and rho^3 for every unordered replica pair (a < b)."""
    s = state.configs.astype(float)
    n, N, M = s.shape
    kink = 1.0 - s * np.roll(s, -1, axis=2)  # 0 or 2
    out = {"pairs": replica_pairs(n), "rho1": [], "rho3": []}
    for a, b in out["pairs"]:
        out["rho1"].append(np.sum(kink[a] * kink[b]) / (16.0 * N * M))
        out["rho3"].append(np.sum(s[a] * s[b]) / (4.0 * N * M))
    out["rho1"] = np.array(out["rho1"])
    out["rho3"] = np.array(out["rho3"])
    return out


def measure_fields(state: ReplicaState, disorder: DisorderRealization) -> dict:
    """mu^1, mu^3, h^1_L, h^3_L for each replica."""
    N, M = state.configs.shape[1:]
    if disorder.h1.shape != (N, M):
        raise ConfigError(f"realization h fields have shape {disorder.h1.shape}, expected {(N, M)}")
    return _fields(state.configs, disorder.h1, disorder.h3)


def _fields(configs, h1, h3) -> dict:
    s = configs.astype(float)
    n, N, M = s.shape
    kink = 1.0 - s * np.roll(s, -1, axis=2)
    rootM = math.sqrt(M)
    return {
        "mu1": kink.sum(axis=(1, 2)) / (4.0 * N * M),
        "mu3": s.sum(axis=(1, 2)) / (2.0 * N * M),
        "h1L": np.einsum("axt,xt->a", kink, h1) / (4.0 * N * rootM),
        "h3L": np.einsum("axt,xt->a", s, h3) / (2.0 * N * rootM),
    }


def sample_block(state: ReplicaState, model: ClassicalModel, n_samples: int, interval: int,
                 order: str = "lexicographic", worldlines: bool = True) -> np.ndarray:
    """Advance all replicas ``n_samples * interval`` sweeps; return snapshots (n, B, N, M).

    Consumes each replica's stream exactly as repeated :func:`heat_bath_sweep` calls.
    """
    n = state.n_replicas
    N, M = model.shape
    snaps = np.empty((n, n_samples, N, M), dtype=np.int8)
    if order != "lexicographic":
        for b in range(n_samples):
            heat_bath_sweep(state, model, order=order, n_sweeps=interval, worldlines=worldlines)
            snaps[:, b] = state.configs
        return snaps
    ptr, idx = _csr_neighbors(model)
    K = np.ascontiguousarray(model.K)
    fld = np.ascontiguousarray(model.field)
    for a in range(n):
        u = state.rngs[a].random((n_samples * interval, N * M + N))
        _run_block(state.configs[a], K, fld, ptr, idx, model.spatial_coupling, model.beta,
                   u, interval, worldlines, snaps[a])
    state.sweep_count += n_samples * interval
    return snaps


def measure_snapshots(snaps: np.ndarray, model: ClassicalModel, h1, h3, pairs) -> dict:
    """Vectorized measurements over snapshots of shape (n, B, N, M); rows are samples."""
    n, B, N, M = snaps.shape
    s = snaps.astype(float)
    kink = 1.0 - s * np.roll(s, -1, axis=3)
    a_idx = [a for a, _ in pairs]
    b_idx = [b for _, b in pairs]
    rho1 = np.einsum("pbxt,pbxt->bp", kink[a_idx], kink[b_idx]) / (16.0 * N * M)
    rho3 = np.einsum("pbxt,pbxt->bp", s[a_idx], s[b_idx]) / (4.0 * N * M)
    rootM = math.sqrt(M)
    e = config_energies(model, s.reshape(n * B, N, M)).reshape(n, B)
    return {
        "rho1": rho1,
        "rho3": rho3,
        "mu1": kink.sum(axis=(2, 3)).T / (4.0 * N * M),
        "mu3": s.sum(axis=(2, 3)).T / (2.0 * N * M),
        "h1L": np.einsum("abxt,xt->ba", kink, h1) / (4.0 * N * rootM),
        "h3L": np.einsum("abxt,xt->ba", s, h3) / (2.0 * N * rootM),
        "psi_proxy": (-model.beta * e / N).T,
    }


@dataclass
class ExperimentResult:
    series: dict
    pair_series: dict
    replica_series: dict
    pairs: list
    sweeps: np.ndarray
    metadata: dict = field(default_factory=dict)

    def gg_moments(self) -> dict:
        """Replica-symmetrized sample means used by the GG estimators.

        ``rho``: <rho_{ab}>; ``rho_sq``: <rho_{ab}^2>; ``rho_share``: <rho_{ab} rho_{ac}>
        (pairs sharing one index); ``rho_disjoint``: <rho_{ab} rho_{cd}>.
        Averages run over all pairs of each class and over samples.
        """
        out = {}
        for comp in ("rho1", "rho3"):
            X = self.pair_series[comp]
            pairs = self.pairs
            share, disjoint = [], []
            for p, q in combinations(range(len(pairs)), 2):
                common = len(set(pairs[p]) & set(pairs[q]))
                (share if common == 1 else disjoint).append(X[:, p] * X[:, q])
            out[comp] = {
                "rho": float(X.mean()),
                "rho_sq": float((X ** 2).mean()),
                "rho_share": float(np.mean(share)) if share else float("nan"),
                "rho_disjoint": float(np.mean(disjoint)) if disjoint else float("nan"),
            }
        return out


def run_experiment(params: ModelParams, disorder: DisorderRealization, n_replicas: int = 2,
                   sweeps: int = 20000, thermalization: int | None = None, measure_interval: int = 1,
                   master_seed: int = 0, realization_index: int = 0, order: str = "lexicographic",
                   model: ClassicalModel | None = None, worldlines: bool = True) -> ExperimentResult:
    """Thermalize, then measure every ``measure_interval`` sweeps until ``sweeps`` in total.

    With ``thermalization=None`` the first max(1000 sweeps, 20 tau_int(mu3))
    are discarded, tau_int being estimated on the measured mu3 series.
    """
    model = compile_model(params, disorder) if model is None else model
    auto = thermalization is None
    therm = MIN_THERMALIZATION if auto else int(thermalization)
    if sweeps <= therm:
        raise ConfigError(f"sweeps ({sweeps}) must exceed thermalization ({therm})")
    if measure_interval < 1:
        raise ConfigError("measure_interval must be >= 1")

    state = init_state(model, n_replicas, master_seed, realization_index)
    heat_bath_sweep(state, model, order=order, n_sweeps=therm, worldlines=worldlines)
    n_meas = (sweeps - therm) // measure_interval
    pairs = replica_pairs(n_replicas)
    if disorder.M == model.M:
        h1, h3 = disorder.h1, disorder.h3
    else:
        h1 = h3 = np.zeros(model.shape)
    chunks = {k: [] for k in ("rho1", "rho3", "mu1", "mu3", "h1L", "h3L", "psi_proxy", "stamps")}
    done = 0
    while done < n_meas:
        B = min(_BLOCK, n_meas - done)
        snaps = sample_block(state, model, B, measure_interval, order=order, worldlines=worldlines)
        m = measure_snapshots(snaps, model, h1, h3, pairs)
        for key, val in m.items():
            chunks[key].append(val)
        chunks["stamps"].append(state.sweep_count - measure_interval * np.arange(B - 1, -1, -1))
        done += B
    rho1 = np.concatenate(chunks["rho1"])
    rho3 = np.concatenate(chunks["rho3"])
    stamps = np.concatenate(chunks["stamps"]).astype(np.int64)
    rep = {k: np.concatenate(chunks[k]) for k in ("mu1", "mu3", "h1L", "h3L", "psi_proxy")}
    if not np.all(np.isfinite(rep["psi_proxy"])):
        bad = int(stamps[np.argmin(np.all(np.isfinite(rep["psi_proxy"]), axis=1))])
        raise SimulationError(f"non-finite energy at sweep {bad}")

    mu3 = rep["mu3"].mean(axis=1)
    tau_mu3 = integrated_autocorrelation_time(mu3) if n_meas > 1 else 0.5
    discard_samples = 0
    if auto:
        extra = int(math.ceil(20.0 * tau_mu3 * measure_interval)) - therm
        if extra > 0:
            discard_samples = min(n_meas - 2, int(math.ceil(extra / measure_interval)))
    sl = slice(discard_samples, None)
    rho1, rho3, stamps = rho1[sl], rho3[sl], stamps[sl]
    rep = {k: v[sl] for k, v in rep.items()}

    series = {
        "rho1": ObservableSeries("rho1", rho1.mean(axis=1), stamps),
        "rho3": ObservableSeries("rho3", rho3.mean(axis=1), stamps),
    }
    for name, arr in rep.items():
        series[name] = ObservableSeries(name, arr.mean(axis=1), stamps)
    taus, widths = {}, {}
    for name, s in series.items():
        if len(s.samples) > 1:
            taus[name] = integrated_autocorrelation_time(s.samples) * measure_interval
            widths[name] = binning_analysis(s.samples).bin_width
            s.bin_width = widths[name]
    metadata = {
        "master_seed": int(master_seed),
        "realization_index": int(realization_index),
        "realization_seed": int(disorder.seed),
        "replica_seeds": state.seeds,
        "n_replicas": n_replicas,
        "sweeps": int(sweeps),
        "thermalization": therm + discard_samples * measure_interval,
        "thermalization_auto": auto,
        "measure_interval": measure_interval,
        "order": order,
        "worldline_moves": worldlines,
        "beta": model.beta,
        "M": model.M,
        "tau_int_sweeps": taus,
        "bin_width": widths,
    }
    return ExperimentResult(series=series, pair_series={"rho1": rho1, "rho3": rho3},
                            replica_series=rep, pairs=pairs, sweeps=stamps, metadata=metadata)


def write_series(result: ExperimentResult, outdir, prefix: str = "mc") -> list[Path]:
    """One ``(sweep, value)`` CSV per observable and per pair overlap, plus a JSON sidecar."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def _csv(name, values):
        path = outdir / f"{prefix}_{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "value"])
            for sw, v in zip(result.sweeps, values):
                w.writerow([int(sw), repr(float(v))])
        written.append(path)

    for name, s in result.series.items():
        _csv(name, s.samples)
    for comp, X in result.pair_series.items():
        for p, (a, b) in enumerate(result.pairs):
            _csv(f"{comp}_{a + 1}{b + 1}", X[:, p])
    side = outdir / f"{prefix}_meta.json"
    side.write_text(json.dumps(result.metadata, indent=1, sort_keys=True) + "\n")
    written.append(side)
    return written
