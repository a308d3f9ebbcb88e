"""Simulation designs, replicated experiments and their metrics.

Designs follow a partially linear model ``Y = X beta + sin(2 pi U) + eps``
with Gaussian or multivariate-t3 rows, AR(1) or compound-symmetric
correlation, and ``p1`` signals of amplitude ``+-A`` at random positions.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from fractions import Fraction
import hashlib
import json
import math

import numpy as np

from .errors import ExperimentFailed, MissingRanking, StabGKnockError, ValidationError
from .spline import DesignTriple

COV_KINDS = ("ar1", "compound")
DESIGN_DISTS = ("gaussian", "student_t3")
CSV_FIELDS = ("scenario_id", "method", "q", "A", "rho", "n", "p", "p1", "metric", "value",
              "stderr", "seed")
MMS_LEVELS = (5, 25, 50, 75, 95)
T3_CONVENTION = "Sigma is the scale matrix: rows are Gaussian rows times sqrt(3 / chi2_3)"


@dataclass(frozen=True)
class Scenario:
    n: int
    p: int
    p1: int
    A: float
    rho: float
    cov_kind: str = "ar1"
    design_dist: str = "gaussian"
    g_kind: str = "sin2pi"
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValidationError(f"n and p must be positive, got n={self.n}, p={self.p}")
        if not 0 <= self.p1 <= self.p:
            raise ValidationError(f"need 0 <= p1 <= p, got p1={self.p1}, p={self.p}")
        if not 0 <= self.rho < 1:
            raise ValidationError(f"rho must be in [0, 1), got {self.rho}")
        if self.A < 0:
            raise ValidationError(f"A must be >= 0, got {self.A}")
        if self.cov_kind not in COV_KINDS:
            raise ValidationError(f"cov_kind must be one of {COV_KINDS}")
        if self.design_dist not in DESIGN_DISTS:
            raise ValidationError(f"design_dist must be one of {DESIGN_DISTS}")
        if self.g_kind != "sin2pi":
            raise ValidationError(f"unknown g_kind {self.g_kind!r}")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")

    @property
    def scenario_id(self):
        dist = "t3" if self.design_dist == "student_t3" else "gauss"
        return (f"{self.cov_kind}-{dist}-n{self.n}-p{self.p}-p1{self.p1}"
                f"-A{self.A!r}-rho{self.rho!r}")


def correlated_rows(n, p, rho, cov_kind, rng):
    """Standard Gaussian rows with AR(1) ``rho^|i-j|`` or compound ``rho`` correlation."""
    Zr = rng.standard_normal((n, p))
    if rho == 0:
        return Zr
    if cov_kind == "ar1":
        X = np.empty_like(Zr)
        X[:, 0] = Zr[:, 0]
        c = math.sqrt(1 - rho ** 2)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + c * Zr[:, j]
        return X
    common = rng.standard_normal((n, 1))
    return math.sqrt(rho) * common + math.sqrt(1 - rho) * Zr


def covariance(p, rho, cov_kind):
    idx = np.arange(p)
    if cov_kind == "ar1":
        return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    S = np.full((p, p), rho)
    np.fill_diagonal(S, 1.0)
    return S


def generate(sc):
    """Draw one data set.

    Returns
    -------
    d : DesignTriple
    beta : ndarray, shape (p,)
    support : tuple
        Sorted 0-based signal positions.
    """
    rng = np.random.default_rng(sc.seed)
    X = correlated_rows(sc.n, sc.p, sc.rho, sc.cov_kind, rng)
    if sc.design_dist == "student_t3":
        X *= np.sqrt(3.0 / rng.chisquare(3, size=sc.n))[:, None]
    support = np.sort(rng.choice(sc.p, size=sc.p1, replace=False))
    beta = np.zeros(sc.p)
    beta[support] = sc.A * rng.choice([-1.0, 1.0], size=sc.p1)
    U = rng.uniform(0.0, 1.0, size=sc.n)
    eps = sc.noise_sd * rng.standard_normal(sc.n)
    Y = X @ beta + np.sin(2 * np.pi * U) + eps
    return DesignTriple(X, U, Y), beta, tuple(int(j) for j in support)


def replicate_seeds(master, R):
    """Counter-based seeds: replicate ``r`` depends only on (master, r)."""
    out = []
    for r in range(R):
        data, method = np.random.SeedSequence([int(master), r]).generate_state(2)
        out.append((int(data), int(method)))
    return out


@dataclass(frozen=True)
class MetricRow:
    scenario_id: str
    method: str
    q: float
    A: float
    rho: float
    n: int
    p: int
    p1: int
    metric: str
    value: float
    stderr: float
    seed: int


@dataclass
class MetricReport:
    """Metric rows plus (not serialized to CSV) per-replicate records."""

    rows: list = field(default_factory=list)
    records: list = field(default_factory=list, compare=False, repr=False)
    failures: int = field(default=0, compare=False)

    def get(self, metric, method=None, scenario_id=None):
        hits = [r for r in self.rows if r.metric == metric
                and (method is None or r.method == method)
                and (scenario_id is None or r.scenario_id == scenario_id)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match metric={metric!r}, method={method!r}")
        return hits[0]

    def value(self, metric, method=None):
        return self.get(metric, method).value

    @property
    def fdr_hat(self):
        return self.value("fdr")

    @property
    def power_hat(self):
        return self.value("power")

    def extend(self, other):
        return MetricReport(self.rows + other.rows, self.records + other.records,
                            self.failures + other.failures)


def _mean_se(vals):
    """Exact mean of rational values and the sample-sd standard error."""
    R = len(vals)
    if R == 0:
        return float("nan"), float("nan")
    mean = sum(vals, Fraction(0)) / R
    if R == 1:
        return float(mean), 0.0
    var = sum(((v - mean) ** 2 for v in vals), Fraction(0)) / (R - 1)
    return float(mean), math.sqrt(float(var) / R)


def fdp_power(selected, support):
    """Exact false discovery proportion and power of one selection."""
    sel = set(int(j) for j in selected)
    S = set(int(j) for j in support)
    fdp = Fraction(len(sel - S), max(len(sel), 1))
    power = Fraction(len(sel & S), len(S)) if S else Fraction(0)
    return fdp, power


def _rows(sc, method, q, seed, metrics):
    return [MetricRow(sc.scenario_id, method, float(q), float(sc.A), float(sc.rho), sc.n,
                      sc.p, sc.p1, name, float(v), float(se), int(seed))
            for name, (v, se) in metrics]


def _run_reps(R, seeds, task, n_jobs, max_fail):
    def safe(r):
        try:
            return task(r, *seeds[r]), None
        except (StabGKnockError, np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            out = list(ex.map(safe, range(R)))
    else:
        out = [safe(r) for r in range(R)]
    failures = sum(err is not None for _, err in out)
    if failures > max_fail * R:
        first = next(err for _, err in out if err is not None)
        raise ExperimentFailed(f"{failures} of {R} replicates failed; first: {first}")
    return out, failures


def run_experiment(sc, method, q, R, n_jobs=1, max_fail=0.1):
    """Replicate ``method`` on fresh draws of ``sc``.

    Parameters
    ----------
    sc : Scenario
        ``sc.seed`` is the master seed.
    method : callable
        ``method(d, q, seed) -> iterable of selected indices``; its ``name``
        attribute (or ``__name__``) labels the output.
    q : float
    R : int
        Number of replicates.

    Returns
    -------
    MetricReport
        Rows ``fdr`` and ``power`` with standard errors over the replicates
        that ran; failures are recorded per replicate.
    """
    if R < 1:
        raise ValidationError(f"R must be >= 1, got {R}")
    name = getattr(method, "name", getattr(method, "__name__", "method"))
    seeds = replicate_seeds(sc.seed, R)

    def task(r, data_seed, method_seed):
        d, _, support = generate(replace(sc, seed=data_seed))
        return tuple(int(j) for j in method(d, q, method_seed)), support

    out, failures = _run_reps(R, seeds, task, n_jobs, max_fail)
    records, fdps, pows = [], [], []
    for r, (res, err) in enumerate(out):
        rec = dict(replicate=r, data_seed=seeds[r][0], method_seed=seeds[r][1], error=err)
        if res is not None:
            sel, support = res
            fdp, pw = fdp_power(sel, support)
            fdps.append(fdp)
            pows.append(pw)
            rec.update(selected=list(sel), fdp=float(fdp), power=float(pw))
        records.append(rec)
    metrics = [("fdr", _mean_se(fdps)), ("power", _mean_se(pows)),
               ("failures", (failures, 0.0))]
    return MetricReport(_rows(sc, name, q, sc.seed, metrics), records, failures)


def min_model_size(ranking, support):
    """Shortest prefix of ``ranking`` containing every index of ``support``."""
    pos = {int(j): i for i, j in enumerate(ranking)}
    missing = [j for j in support if int(j) not in pos]
    if missing:
        raise ValidationError(f"ranking omits signal indices {missing[:5]}")
    return max(pos[int(j)] for j in support) + 1 if len(support) else 0


def screening_metrics(kept_sets, true_support, full_rankings=None, mms=True):
    """FDR, PRR, SSR and MMS quantiles of a screen over replicates.

    ``true_support`` is one support shared by all replicates or a list with
    one support per replicate. Returns a list of ``(name, (value, stderr))``.
    """
    R = len(kept_sets)
    supports = true_support
    if R and (len(true_support) == 0 or not hasattr(true_support[0], "__len__")):
        supports = [true_support] * R
    fdr, prr, ssr = [], [], []
    for kept, S in zip(kept_sets, supports):
        fdp, pw = fdp_power(kept, S)
        fdr.append(fdp)
        prr.append(pw)
        ssr.append(Fraction(int(set(S) <= set(int(j) for j in kept))))
    out = [("fdr", _mean_se(fdr)), ("prr", _mean_se(prr)), ("ssr", _mean_se(ssr))]
    if mms:
        if full_rankings is None:
            raise MissingRanking("MMS needs a complete feature ranking per replicate")
        sizes = np.array([min_model_size(rk, S) for rk, S in zip(full_rankings, supports)])
        for lv in MMS_LEVELS:
            out.append((f"mms_q{lv:02d}", (float(np.percentile(sizes, lv)), 0.0)))
    return out


def screening_report(sc, kept_sets, true_supports, rankings, method, k, seed=None):
    metrics = screening_metrics(kept_sets, true_supports, rankings, mms=rankings is not None)
    # screening has no nominal level; q is written as 0
    return MetricReport(_rows(sc, method, 0.0, sc.seed if seed is None else seed,
                              metrics + [("k", (k, 0.0))]))


def run_screening_experiment(sc, screens, k, R, n_jobs=1, max_fail=0.1):
    """Replicate several screens on the same draws of ``sc``.

    ``screens`` maps a method name to ``fn(X_star, Y_star, k, seed) -> (kept, ranking)``.
    Data are spline-projected with the default basis first.
    """
    from .spline import project_data

    seeds = replicate_seeds(sc.seed, R)

    def task(r, data_seed, method_seed):
        d, _, support = generate(replace(sc, seed=data_seed))
        pdata = project_data(d)
        res = {name: fn(pdata.X_star, pdata.Y_star, k, method_seed)
               for name, fn in screens.items()}
        return res, support

    out, failures = _run_reps(R, seeds, task, n_jobs, max_fail)
    ok = [res for res, err in out if err is None]
    report = MetricReport(failures=failures)
    for name in screens:
        kept = [tuple(res[name][0]) for res, _ in ok]
        ranks = [res[name][1] for res, _ in ok]
        supports = [S for _, S in ok]
        report = report.extend(screening_report(sc, kept, supports, ranks, name, k))
    report.records = [dict(replicate=r, error=err) for r, (_, err) in enumerate(out)]
    report.failures = failures
    return report


def make_method(name, **cfg):
    """Selection method for :func:`run_experiment`.

    ``name`` is ``stab_gknock`` (dispatching to the two-stage version when
    ``p >= n/2``), ``spls_stab_gknock`` or ``bh``; ``cfg`` goes to
    :class:`PipelineConfig`.
    """
    from .pipeline import PipelineConfig, bh_baseline, run_selection

    if name == "bh":
        def method(d, q, seed):
            return bh_baseline(d, q)
    elif name in ("stab_gknock", "spls_stab_gknock"):
        force = name == "spls_stab_gknock"

        def method(d, q, seed):
            out = run_selection(d, PipelineConfig(q=q, seed=seed, **cfg), force_two_stage=force)
            return out.selected
    else:
        raise ValidationError(f"unknown method {name!r}")
    label = name if name == "bh" else f"{name}[{cfg.get('statistic', 'SPD').upper()}]"
    method.name = label
    return method


def screen_methods(restarts=10):
    """Screens for :func:`run_screening_experiment`: Sparse-PLS, SIS and RRCS."""
    from .screening import (SolverOptions, rrcs_ranking, sis_ranking, spls_ranking,
                            spls_screen)

    def spls(X, y, k, seed):
        res = spls_screen(X, y, k, SolverOptions(restarts=restarts), rng=seed)
        return res.kept, spls_ranking(res, X, y)

    def marginal(rank_fn):
        def fn(X, y, k, seed):
            rk = rank_fn(X, y)
            return tuple(sorted(int(j) for j in rk[:k])), rk
        return fn

    return {"spls": spls, "sis": marginal(sis_ranking), "rrcs": marginal(rrcs_ranking)}


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def export_results(report, path, manifest=None):
    """Write the metric rows as CSV and a JSON manifest next to it.

    Floats use ``repr`` so they read back bit for bit. The timestamp lives
    only in the manifest, so the CSV of a repeated run is byte-identical.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for row in report.rows:
            w.writerow([_fmt(getattr(row, f)) for f in CSV_FIELDS])
    digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
    info = dict(manifest or {})
    info.update(csv_sha256=digest, t3_convention=T3_CONVENTION,
                timestamp=datetime.now(timezone.utc).isoformat())
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True, default=str)
    return path


def read_results(path):
    """Inverse of :func:`export_results` (metric rows only)."""
    types = dict(scenario_id=str, method=str, q=float, A=float, rho=float, n=int, p=int,
                 p1=int, metric=str, value=float, stderr=float, seed=int)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValidationError(f"unexpected CSV header {reader.fieldnames}")
        rows = [MetricRow(**{k: types[k](v) for k, v in rec.items()}) for rec in reader]
    return MetricReport(rows)


def scenario_dict(sc):
    out = asdict(sc)
    out["scenario_id"] = sc.scenario_id
    return out
