"""Finite-size checks of the correlation inequalities and identities behind the no-RSB argument.

Each check returns a :class:`CheckReport` (pass iff worst violation <= tolerance)
or a :class:`ScanResult` over system sizes. Disorder-averaged statistics use
realizations as jackknife units, so Monte Carlo noise is nested inside.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np
from scipy import stats as sps

from . import montecarlo, spectral
from .core import DisorderRealization, ModelParams, derive_seed, sample_disorder
from .errors import InsufficientEnsemble, ResourceCapError
from .pathintegral import (ENUMERATION_CAP, ClassicalModel, compile_model, exact_classical_sum,
                           gibbs_distribution)
from .stats import jackknife

FD_STEP = 1e-4
FD_STEP_CHECK = 5e-5


def digest(obj) -> str:
    """Short stable hash of a JSON-able parameter record."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CheckReport:
    check_id: str
    instances: int
    worst_violation: float
    tolerance: float
    context: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.worst_violation <= self.tolerance)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = self.passed
        out["digest"] = digest(self.context)
        return out

    def merge(self, other: "CheckReport") -> "CheckReport":
        return CheckReport(self.check_id, self.instances + other.instances,
                           max(self.worst_violation, other.worst_violation),
                           max(self.tolerance, other.tolerance), self.context)


@dataclass
class ScanResult:
    axis: str
    points: list  # (axis value, estimate, error, n_samples), sorted on axis
    target: str = ""
    fit: dict | None = None
    note: str = ""

    def __post_init__(self):
        self.points = sorted((float(a), float(e), abs(float(s)), int(n)) for a, e, s, n in self.points)

    @property
    def axis_values(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def errors(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def scaled(self, factors) -> "ScanResult":
        f = np.asarray(factors, dtype=float)
        pts = [(a, e * k, s * k, n) for (a, e, s, n), k in zip(self.points, f)]
        out = ScanResult(self.axis, pts, target=self.target)
        out.fit_loglog()
        return out

    def fit_loglog(self) -> dict | None:
        """Least-squares line through (log axis, log estimate) if every estimate is positive at 2 sigma."""
        est, err = self.estimates, self.errors
        if len(est) < 2 or np.any(est <= 2.0 * err) or np.any(est <= 0):
            self.fit = None
            self.note = "degenerate fit: some estimates not positive at 2 sigma"
            return None
        x, y = np.log(self.axis_values), np.log(est)
        slope, intercept = np.polyfit(x, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
        self.fit = {"slope": float(slope), "intercept": float(intercept), "residual": resid}
        self.note = ""
        return self.fit


# ---------------------------------------------------------------------------
# FKG and the four-point bound (classical model, exact enumeration)
# ---------------------------------------------------------------------------

def check_truncated_pairs(model: ClassicalModel, tol: float = 1e-12,
                          cap: int = ENUMERATION_CAP) -> CheckReport:
    """<sigma_w; sigma_z> >= -tol for every pair of spacetime sites."""
    sums = exact_classical_sum(model, cap)
    worst = max(0.0, -float(sums.truncated_pair.min()))
    return CheckReport("fkg.truncated_pair", 1, worst, tol, {"shape": model.shape})


def _marginals_with_field(model: ClassicalModel, z: int, delta: float, cap: int) -> np.ndarray:
    fld = np.array(model.field)
    fld.reshape(-1)[z] += delta
    shifted = ClassicalModel(model.lattice, model.beta, model.spatial_coupling, model.K, fld,
                             model.log_weight)
    return exact_classical_sum(shifted, cap).marginals.reshape(-1)


def _richardson_min(fd_h: np.ndarray, fd_h2: np.ndarray) -> float:
    return float(min(fd_h.min(), fd_h2.min(), ((4.0 * fd_h2 - fd_h) / 3.0).min()))


def check_field_monotonicity_classical(model: ClassicalModel, tol: float = 1e-6,
                                       step: float = FD_STEP, cap: int = ENUMERATION_CAP) -> CheckReport:
    """d<sigma_w>/d field_z >= -tol for all (w, z), by central differences."""
    worst_min = 0.0
    for z in range(model.n_sites):
        derivs = []
        for h in (step, FD_STEP_CHECK):
            plus = _marginals_with_field(model, z, h, cap)
            minus = _marginals_with_field(model, z, -h, cap)
            derivs.append((plus - minus) / (2.0 * h))
        worst_min = min(worst_min, _richardson_min(*derivs))
    return CheckReport("fkg.field_monotonicity.classical", 1, max(0.0, -worst_min), tol,
                       {"shape": model.shape})


def check_field_monotonicity_quantum(params: ModelParams, disorder: DisorderRealization,
                                     tol: float = 1e-6, step: float = FD_STEP,
                                     cap: int = spectral.DEFAULT_CAP) -> CheckReport:
    """Weak FKG: <S^3_x> nondecreasing in the longitudinal field at every y.

    Differences are taken in g3_y and multiplied by sign(J3), i.e. along
    increasing effective field J3 g3_y + c.
    """
    n = params.n_sites
    sign = math.copysign(1.0, params.J3) if params.J3 != 0 else 0.0
    p = params.with_(M=None, b1=0.0, b3=0.0)

    def one_point(g3):
        r = disorder.replace_fields(g3=g3)
        return spectral.longitudinal_correlations(spectral.solve(p, r, cap=cap), n)[0]

    worst_min = 0.0
    for y in range(n):
        derivs = []
        for h in (step, FD_STEP_CHECK):
            gp = np.array(disorder.g3)
            gm = np.array(disorder.g3)
            gp[y] += h
            gm[y] -= h
            derivs.append(sign * (one_point(gp) - one_point(gm)) / (2.0 * h))
        worst_min = min(worst_min, _richardson_min(*derivs))
    return CheckReport("fkg.field_monotonicity.quantum", 1, max(0.0, -worst_min), tol,
                       {"n_sites": n, "seed": disorder.seed})


def check_fkg(target, mode: str = "truncated_pair", **kw) -> CheckReport:
    """Dispatch on ``mode``; ``target`` is a ClassicalModel or a (params, disorder) pair."""
    if mode == "truncated_pair":
        return check_truncated_pairs(target, **kw)
    if mode == "field_monotonicity":
        if isinstance(target, ClassicalModel):
            return check_field_monotonicity_classical(target, **kw)
        params, disorder = target
        return check_field_monotonicity_quantum(params, disorder, **kw)
    raise ValueError(f"unknown FKG mode {mode!r}")


def four_point_violations(model: ClassicalModel, cap: int = ENUMERATION_CAP):
    """Arrays (lhs, rhs) over all quadruples, flattened as ((x, y), (w, z)).

    lhs = |<s_x s_y; s_w s_z>|, rhs = <(s_x + s_y); (s_w + s_z)>.
    """
    S, p, _ = gibbs_distribution(model, cap)
    S = S.astype(float)
    W = S.shape[1]
    m = p @ S
    C2 = (S * p[:, None]).T @ S
    T = C2 - np.outer(m, m)
    Q = (S[:, :, None] * S[:, None, :]).reshape(len(p), W * W)
    four = (Q * p[:, None]).T @ Q
    q = C2.reshape(-1)
    lhs = np.abs(four - np.outer(q, q))
    rhs = (T[:, None, :, None] + T[:, None, None, :] + T[None, :, :, None] + T[None, :, None, :])
    return lhs, rhs.reshape(W * W, W * W)


def check_four_point_bound(model: ClassicalModel, tol: float = 1e-12,
                           cap: int = ENUMERATION_CAP) -> CheckReport:
    lhs, rhs = four_point_violations(model, cap)
    worst = max(0.0, float(np.max(lhs - rhs)))
    return CheckReport("four_point_bound", 1, worst, tol, {"shape": model.shape})


# ---------------------------------------------------------------------------
# Harris sandwich
# ---------------------------------------------------------------------------

def check_harris(spec: spectral.SpectralDecomposition, operators: dict, slack: float = 1e-10,
                 commuting: tuple = ()) -> CheckReport:
    """Worst violation of lower <= middle <= upper; equality required for names in ``commuting``."""
    worst = 0.0
    triples = {}
    for name, O in operators.items():
        tr = spectral.harris_check(spec, O)
        triples[name] = (tr.lower, tr.middle, tr.upper)
        worst = max(worst, tr.lower - tr.middle, tr.middle - tr.upper)
        if name in commuting:
            worst = max(worst, abs(tr.upper - tr.lower))
    return CheckReport("harris_sandwich", len(operators), max(0.0, worst), slack,
                       {"triples": triples})


@dataclass(frozen=True)
class DuhamelGibbs:
    duhamel: float
    gibbs: float
    commutator_term: float

    def sandwich_holds(self, slack: float = 1e-10) -> bool:
        return (self.duhamel <= self.gibbs + slack
                and self.gibbs <= self.duhamel + self.commutator_term + slack)


def duhamel_vs_gibbs_overlap(params: ModelParams, disorder: DisorderRealization, i: int,
                             cap: int = spectral.DEFAULT_CAP) -> DuhamelGibbs:
    """(R,R)_D, <R^2> and beta/12 <[R,[H2,R]]> for R = R^i_{1,2} on the replicated space."""
    n = params.n_sites
    if 4 ** n > cap:
        raise ResourceCapError(f"two-replica dimension {4 ** n} exceeds cap {cap}")
    H = spectral.build_hamiltonian(params.with_(M=None), disorder, cap=cap)
    spec2 = spectral.diagonalize(spectral.replicated_hamiltonian(H, cap), params.beta)
    R = spectral.overlap_operator(n, i, cap)
    tr = spectral.harris_check(spec2, R)
    return DuhamelGibbs(duhamel=tr.lower, gibbs=tr.middle, commutator_term=tr.upper - tr.lower)


MP_DIGITS = 40
MP_MAX_DIM = 64


def _mp_partition(H, beta: float, ref: float):
    # sum_k exp(-beta (E_k - ref)) with eigenvalues in the current mpmath precision
    E = mpmath.eigsy(H, eigvals_only=True)
    b = mpmath.mpf(beta)
    return mpmath.fsum(mpmath.exp(-b * (e - ref)) for e in E)


def duhamel_derivative_identity(H: np.ndarray, O1: np.ndarray, O2: np.ndarray, beta: float,
                                step: float = FD_STEP,
                                extended: bool | None = None) -> tuple[float, float]:
    """Return (beta^2 (O1,O2)_D, central-difference (1/Z) d^2 Z / dx1 dx2).

    The perturbed Hamiltonian is H - x1 O1 - x2 O2. In double precision the
    four-point stencil loses about eps / step^2 to cancellation, so for
    dimensions up to ``MP_MAX_DIM`` the partition functions are evaluated with
    ``MP_DIGITS`` significant digits (``extended=None`` picks automatically).
    """
    spec = spectral.diagonalize(H, beta)
    analytic = beta * beta * spectral.duhamel_product(spec, O1, O2)
    H = np.asarray(H, dtype=float)
    O1 = np.asarray(O1, dtype=float)
    O2 = np.asarray(O2, dtype=float)
    stencil = ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0))
    if extended is None:
        extended = H.shape[0] <= MP_MAX_DIM
    if extended:
        with mpmath.workdps(MP_DIGITS):
            ref = float(spec.energies[0])
            h = mpmath.mpf(step)
            Hm, A, B = (mpmath.matrix(X.tolist()) for X in (H, O1, O2))
            z0 = _mp_partition(Hm, beta, ref)
            acc = mpmath.fsum(sign * _mp_partition(Hm - s1 * h * A - s2 * h * B, beta, ref)
                              for s1, s2, sign in stencil)
            return analytic, float(acc / (4 * h * h) / z0)
    acc = 0.0
    for s1, s2, sign in stencil:
        Hp = H - s1 * step * O1 - s2 * step * O2
        acc += sign * math.exp(spectral.diagonalize(Hp, beta).logZ - spec.logZ)
    return analytic, acc / (4.0 * step * step)


@dataclass(frozen=True)
class SpinIdentities:
    """Exact ED values of the spin-magnitude and S^2 quantities at one instance."""

    magnitude: np.ndarray  # <sum_j (S^j_x)^2> per site
    s2_mean: np.ndarray  # <S^2_x>
    s2_pair: np.ndarray  # <S^2_x S^2_y>
    overlap2: spectral.OverlapMoments

    def worst(self, n_sites: int) -> dict:
        off = self.s2_pair - np.diag(np.diag(self.s2_pair))
        return {
            "magnitude": float(np.max(np.abs(self.magnitude - 0.75))),
            "s2_mean": float(np.max(np.abs(self.s2_mean))),
            "s2_diagonal": float(np.max(np.abs(np.diag(self.s2_pair) - 0.25))),
            "s2_offdiagonal": float(np.max(np.abs(off))) if n_sites > 1 else 0.0,
            "overlap2_mean": abs(self.overlap2.mean),
            "overlap2_second": abs(self.overlap2.second_gibbs - 1.0 / (16.0 * n_sites)),
        }


def spin_identities(spec: spectral.SpectralDecomposition, params: ModelParams,
                    cap: int = spectral.DEFAULT_CAP) -> SpinIdentities:
    n = params.n_sites
    ops = {i: [spectral.spin_operator(n, x, i, cap) for x in range(n)] for i in (1, 2, 3)}
    mag = np.array([spectral.gibbs_expectation(spec, sum(ops[i][x] @ ops[i][x] for i in (1, 2, 3)))
                    for x in range(n)])
    s2 = np.array([spectral.gibbs_expectation(spec, ops[2][x]) for x in range(n)])
    pair = np.array([[spectral.gibbs_expectation(spec, ops[2][x] @ ops[2][y]) for y in range(n)]
                     for x in range(n)])
    om = spectral.overlap_moments(spec, params, 2, cap=cap)
    return SpinIdentities(magnitude=mag, s2_mean=s2, s2_pair=pair, overlap2=om)


def ed_check_instance(params: ModelParams, disorder: DisorderRealization,
                      cap: int = spectral.DEFAULT_CAP, fd_step: float = FD_STEP) -> dict:
    """Every exact-diagonalization check on one instance: name -> violation.

    Relative violations for the closed form and the derivative identity,
    absolute for the rest. Two-replica entries are present only when 4^N <= cap.
    """
    p = params.with_(M=None)
    n = p.n_sites
    H = spectral.build_hamiltonian(p, disorder, cap=cap)
    spec = spectral.diagonalize(H, p.beta)
    out = {}
    if n == 1:
        h = math.hypot(p.J1 * disorder.g1[0], p.J3 * disorder.g3[0] + p.c)
        logz = math.log(2.0) + math.log(math.cosh(p.beta * h / 2.0))
        out["closed_form_logZ"] = abs(spec.logZ - logz) / abs(logz)
        if h > 0:
            s3 = (p.J3 * disorder.g3[0] + p.c) / (2.0 * h) * math.tanh(p.beta * h / 2.0)
            got = spectral.longitudinal_correlations(spec, 1)[0][0]
            out["closed_form_S3"] = abs(got - s3)
    m1, m3 = spectral.magnetization(n, 1, cap), spectral.magnetization(n, 3, cap)
    analytic, fd = duhamel_derivative_identity(H, m1, m3, p.beta, fd_step)
    out["duhamel_identity"] = abs(analytic - fd) / max(abs(fd), 1e-300)
    out.update(spin_identities(spec, p, cap).worst(n))
    worst_h = 0.0
    for O in (m1, m3):
        tr = spectral.harris_check(spec, O)
        worst_h = max(worst_h, tr.lower - tr.middle, tr.middle - tr.upper)
    if p.J1 == 0.0:
        tr = spectral.harris_check(spec, m3)
        worst_h = max(worst_h, abs(tr.upper - tr.lower), abs(tr.middle - tr.lower))
    if 4 ** n <= cap:
        for i in (1, 3):
            om = spectral.overlap_moments(spec, p, i, cross_check=True, cap=cap, H=H)
            out[f"factorized_duhamel_R{i}"] = abs(om.second_duhamel - om.direct_duhamel)
            dg = duhamel_vs_gibbs_overlap(p, disorder, i, cap)
            worst_h = max(worst_h, dg.duhamel - dg.gibbs, dg.gibbs - dg.duhamel - dg.commutator_term)
    out["harris"] = max(0.0, worst_h)
    return out


# ---------------------------------------------------------------------------
# Ghirlanda-Guerra residuals
# ---------------------------------------------------------------------------

def _feature_matrix(S: np.ndarray, shape, component: int) -> tuple[np.ndarray, float]:
    N, M = shape
    if component == 3:
        return S.astype(float), 1.0 / (4.0 * N * M)
    if component == 1:
        s = S.reshape(-1, N, M).astype(float)
        kink = 1.0 - s * np.roll(s, -1, axis=2)
        return kink.reshape(len(S), N * M), 1.0 / (16.0 * N * M)
    raise ValueError("overlap component must be 1 or 3")


def exact_replica_moments(model: ClassicalModel, component: int = 3,
                          cap: int = ENUMERATION_CAP) -> dict:
    """Replica moments of rho^i from single-replica enumeration (replicas are independent).

    Keys as in :meth:`montecarlo.ExperimentResult.gg_moments`.
    """
    S, p, _ = gibbs_distribution(model, cap)
    F, c = _feature_matrix(S, model.shape, component)
    m = p @ F
    C = (F * p[:, None]).T @ F
    rho = c * float(m @ m)
    return {
        "rho": rho,
        "rho_sq": c * c * float(np.sum(C * C)),
        "rho_share": c * c * float(m @ C @ m),
        "rho_disjoint": rho * rho,
    }


def gg_combination(means: dict, n: int, f: str) -> float:
    """GG residual built from disorder-averaged moments."""
    r = means["rho"]
    if f == "one":
        # E<rho_{1,n+1}> - (1/n) E<1> E<rho_12> - (1/n) sum_{a=2..n} E<rho_{1a}>
        return r - r / n - sum(r for _ in range(2, n + 1)) / n
    if n == 2:
        return 2.0 * means["rho_share"] - r * r - means["rho_sq"]
    if n == 3:
        return 3.0 * means["rho_disjoint"] - r * r - 2.0 * means["rho_share"]
    raise ValueError("GG residuals implemented for n = 2 and n = 3")


@dataclass
class GGResult:
    residual: float
    error: float
    n_realizations: int
    L: int
    n: int
    component: int
    f: str
    means: dict = field(default_factory=dict)


_MOMENT_KEYS = ("rho", "rho_sq", "rho_share", "rho_disjoint")


def _gg_worker(job):
    params, seed, index, backend, comp, n, mc_kw, master_seed = job
    disorder = sample_disorder(params, seed)
    model = compile_model(params, disorder)
    if backend == "exact":
        mom = exact_replica_moments(model, comp)
    else:
        res = montecarlo.run_experiment(params, disorder, n_replicas=n + 1 if n == 2 else 4,
                                        master_seed=master_seed, realization_index=index,
                                        model=model, **mc_kw)
        mom = res.gg_moments()[f"rho{comp}"]
    return [mom[k] for k in _MOMENT_KEYS]


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def gg_residual(params: ModelParams, n_realizations: int, n: int = 2, component: int = 3,
                f: str = "rho", backend: str = "mc", master_seed: int = 0, workers: int = 1,
                min_ensemble: int = 50, mc_options: dict | None = None) -> GGResult:
    """Disorder-averaged GG residual; error is a jackknife over realizations.

    ``f="rho"`` gives the n=2 identity with f = rho_12 or the n=3 identity with
    f = rho_23; ``f="one"`` is the relabeling identity with f = 1.
    """
    if n_realizations < min_ensemble:
        raise InsufficientEnsemble(f"{n_realizations} realizations < required {min_ensemble}")
    if min_ensemble < 2:
        min_ensemble = 2
    mc_kw = {"sweeps": 21000, "thermalization": 1000, "measure_interval": 1}
    mc_kw.update(mc_options or {})
    params = params.with_(M=params.require_M())
    jobs = [(params, derive_seed(master_seed, 0, r), r, backend, component, n, mc_kw, master_seed)
            for r in range(n_realizations)]
    rows = np.array(_map(_gg_worker, jobs, workers))

    def est(X):
        means = dict(zip(_MOMENT_KEYS, X.mean(axis=0)))
        return gg_combination(means, n, f)

    value, err = jackknife(rows, estimator=est)
    return GGResult(residual=float(value), error=float(err), n_realizations=n_realizations,
                    L=params.L, n=n, component=component, f=f,
                    means=dict(zip(_MOMENT_KEYS, map(float, rows.mean(axis=0)))))


# ---------------------------------------------------------------------------
# Variance scans
# ---------------------------------------------------------------------------

TARGETS = ("psi", "mu3", "overlap_total", "overlap_gibbs_part")


def realization_quantities(params: ModelParams, disorder: DisorderRealization, target: str,
                           component: int = 3, backend: str = "spectral",
                           cap: int = spectral.DEFAULT_CAP) -> list[float]:
    """Per-realization ingredients of one scan target.

    psi: [log Z / N]; mu3: [(m3,m3)_D - <m3>^2]; overlap targets: [<R>, <R^2>].
    overlap_total is E<R^2> - (E<R>)^2 and overlap_gibbs_part is E[<R^2> - <R>^2],
    so their difference is the disorder variance of <R>. The classical backend
    substitutes the compiled model's rho, mu^3 and log Z (without C_W), where
    the Duhamel product becomes a plain second moment.
    """
    n = params.n_sites
    if backend == "spectral":
        p = params.with_(M=None)
        spec = spectral.solve(p, disorder, cap=cap)
        if target == "psi":
            return [spec.logZ / n]
        if target == "mu3":
            m3 = spectral.magnetization(n, 3, cap)
            one, _ = spectral.longitudinal_correlations(spec, n)
            return [spectral.duhamel_product(spec, m3, m3) - float(one.mean()) ** 2]
        om = spectral.overlap_moments(spec, p, component, cap=cap)
        return [om.mean, om.second_gibbs]
    if backend != "classical":
        raise ValueError(f"unknown scan backend {backend!r}")
    model = compile_model(params, disorder)
    if target in ("psi", "mu3"):
        S, prob, logZ = gibbs_distribution(model)
        if target == "psi":
            return [logZ / n]
        mu = S.astype(float).mean(axis=1) / 2.0
        return [float(prob @ (mu - prob @ mu) ** 2)]
    mom = exact_replica_moments(model, component)
    return [mom["rho"], mom["rho_sq"]]


def _scan_worker(job):
    params, seed, target, component, backend, cap = job
    disorder = sample_disorder(params, seed)
    return realization_quantities(params, disorder, target, component, backend, cap)


def _target_estimator(target: str):
    if target == "psi":
        return lambda X: float(np.var(X[:, 0], ddof=1))
    if target == "mu3":
        return lambda X: float(X[:, 0].mean())
    if target == "overlap_total":
        return lambda X: float(X[:, 1].mean() - X[:, 0].mean() ** 2)
    if target == "overlap_gibbs_part":
        return lambda X: float(np.mean(X[:, 1] - X[:, 0] ** 2))
    raise ValueError(f"unknown scan target {target!r}; choose from {TARGETS}")


def variance_scan(params: ModelParams, L_list, n_realizations: int, target: str,
                  component: int = 3, backend: str = "spectral", master_seed: int = 0,
                  workers: int = 1, cap: int = spectral.DEFAULT_CAP,
                  min_ensemble: int = 2) -> ScanResult:
    """Estimate a variance-type target at each L, with jackknife errors over realizations.

    Realization r at size L uses seed ``derive_seed(master_seed, 0, L, r)``.
    """
    est = _target_estimator(target)
    if n_realizations < max(min_ensemble, 2):
        raise InsufficientEnsemble(f"{n_realizations} realizations < required {max(min_ensemble, 2)}")
    points = []
    for L in L_list:
        p = params.with_(L=int(L))
        if backend == "spectral" and 2 ** p.n_sites > cap:
            raise ResourceCapError(f"L={L}: dimension {2 ** p.n_sites} exceeds cap {cap}")
        jobs = [(p, derive_seed(master_seed, 0, int(L), r), target, component, backend, cap)
                for r in range(n_realizations)]
        X = np.array(_map(_scan_worker, jobs, workers))
        value, err = jackknife(X, estimator=est)
        points.append((L, value, err, n_realizations))
    scan = ScanResult("L", points, target=target)
    scan.fit_loglog()
    return scan


def spearman_trend(scan: ScanResult) -> tuple[float, float]:
    res = sps.spearmanr(scan.axis_values, scan.estimates)
    return float(res.statistic), float(res.pvalue)


def decreasing_trend(scan: ScanResult, alpha: float = 0.05, sigma: float = 2.0) -> bool:
    """Spearman correlation negative with p < alpha, or every estimate within ``sigma`` errors of 0."""
    if np.all(np.abs(scan.estimates) <= sigma * scan.errors):
        return True
    rho, p = spearman_trend(scan)
    return bool(rho < 0 and p < alpha)


def positive_trend_slope(scan: ScanResult) -> tuple[float, float]:
    """Weighted least-squares slope of estimate vs axis and its standard error."""
    x, y, e = scan.axis_values, scan.estimates, scan.errors
    if np.any(e <= 0):
        w = np.ones_like(y)
    else:
        w = 1.0 / e ** 2
    X = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ X.T @ (w * y)
    return float(beta[1]), float(math.sqrt(cov[1, 1]))


def no_positive_trend(scan: ScanResult, sigma: float = 2.0) -> bool:
    """Bounded in the scanned range: the fitted slope is not positive beyond ``sigma`` errors."""
    slope, se = positive_trend_slope(scan)
    return slope <= sigma * se
