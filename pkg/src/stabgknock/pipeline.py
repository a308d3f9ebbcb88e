"""End-to-end selection: Stab-GKnock for ``p < n/2`` and the two-stage
SPLS-Stab-GKnock (screen on one half, select on the other) for large ``p``."""

from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
import hashlib
import json

import numpy as np

from .errors import DimensionError, ScreeningTooAggressive, StabGKnockError, ValidationError
from .knockoffs import construct_gknockoff, estimate_sigma2, row_augment
from .screening import SolverOptions, default_k, spls_screen
from .selection import MODES, bh_select, select, univariate_pvalues
from .spline import SplineSpec, project_data
from .statistics import CV_RULES, KINDS, LAMBDA_RULES, statistic_function


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one selection run.

    ``spline=None`` picks the default basis for the rows actually used.
    ``split_n1`` and ``k`` only matter for the two-stage procedure; ``None``
    gives ``n1 = n // 2`` and ``k = min(floor(n1 / log n1), n2 // 2)``.
    """

    q: float = 0.1
    mode: str = "knockoff_plus"
    spline: SplineSpec = None
    L: int = 100
    lambda_rule: str = "global_cv"
    cv_rule: str = "1se"
    statistic: str = "SPD"
    split_n1: int = None
    k: int = None
    seed: int = 0
    augment: bool = True
    restarts: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValidationError(f"q must be in (0, 1), got {self.q}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.statistic.upper() not in KINDS:
            raise ValidationError(f"statistic must be one of {KINDS}, got {self.statistic!r}")
        object.__setattr__(self, "statistic", self.statistic.upper())
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValidationError(
                f"lambda_rule must be one of {LAMBDA_RULES}, got {self.lambda_rule!r}")
        if self.cv_rule not in CV_RULES:
            raise ValidationError(f"cv_rule must be one of {CV_RULES}, got {self.cv_rule!r}")
        if self.L < 1:
            raise ValidationError(f"L must be >= 1, got {self.L}")
        if self.k is not None and self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.split_n1 is not None and self.split_n1 < 1:
            raise ValidationError(f"split_n1 must be >= 1, got {self.split_n1}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}")

    def to_dict(self):
        out = asdict(self)
        out["spline"] = None if self.spline is None else asdict(self.spline)
        # thread count does not change results
        out.pop("n_jobs")
        return out

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class SplitPlan:
    idx1: np.ndarray
    idx2: np.ndarray


@contextmanager
def _stage(name):
    try:
        yield
    except StabGKnockError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def _seeds(seed):
    """Independent integer seeds for each randomized step."""
    names = ("split", "screen", "sigma", "augment", "statistic", "knockoff")
    kids = np.random.SeedSequence(int(seed)).spawn(len(names))
    return dict(zip(names, (int(ss.generate_state(1)[0]) for ss in kids)))


def split_data(n, n1, seed):
    """Uniform split of ``range(n)`` into sorted index sets of sizes ``n1`` and ``n - n1``."""
    if not 1 <= n1 < n:
        raise ValidationError(f"need 1 <= n1 < n, got n1={n1}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(idx1=np.sort(perm[:n1]), idx2=np.sort(perm[n1:]))


def _spline_for(cfg, n):
    return cfg.spline if cfg.spline is not None else SplineSpec.default(n)


def stab_gknock(d, cfg):
    """Stab-GKnock on a design with ``p < n/2``.

    Projects off the spline part, builds generalized knockoffs (row-augmenting
    when the projected space is too small), computes the knockoff statistic
    and applies the knockoff(+) threshold. Indices refer to columns of
    ``d.X``.

    Returns
    -------
    SelectionOutcome
    """
    seeds = _seeds(cfg.seed)
    n, p = d.n, d.p
    with _stage("projection"):
        spec = _spline_for(cfg, n)
        K = spec.basis_dim
        if p >= n - K:
            raise DimensionError(
                f"p={p} is not below the projected rank n - K = {n - K}; "
                "use the two-stage procedure")
        pdata = project_data(d, spec)
    sigma2 = None
    with _stage("knockoff"):
        if n - K < 2 * p:
            if not cfg.augment:
                raise DimensionError(
                    f"knockoffs need n - K >= 2p (n={n}, K={K}, p={p}) and row "
                    "augmentation is disabled")
            sigma2 = estimate_sigma2(pdata.X_star, pdata.Y_star, rng=seeds["sigma"],
                                     basis_dim=K)
            pdata = row_augment(pdata, sigma2, rng=seeds["augment"], target_rows=2 * p + K)
        aug = construct_gknockoff(pdata.X_star, Z=pdata.Z, rng=seeds["knockoff"])
    with _stage("statistic"):
        fn = statistic_function(cfg.statistic, L=cfg.L, lambda_rule=cfg.lambda_rule,
                                n_jobs=cfg.n_jobs, cv_rule=cfg.cv_rule)
        stats = fn(aug, pdata.Y_star, seeds["statistic"])
    prov = dict(
        algorithm="stab_gknock",
        config=cfg.to_dict(),
        config_digest=cfg.digest(),
        n=n, p=p,
        spline=asdict(spec),
        knots=pdata.knots.tolist(),
        augmented_rows=pdata.augmented_rows,
        sigma2_hat=sigma2,
        s=float(aug.s[0]) if np.all(aug.s == aug.s[0]) else aug.s.tolist(),
        construction_residuals=list(aug.construction_residuals),
        knockoff_flags=list(aug.flags),
        statistic=stats.kind,
        lambda_used=stats.lambda_used,
        col_scales=pdata.col_scales.tolist(),
        columns=list(range(p)),
        names=list(d.names),
    )
    with _stage("selection"):
        out = select(stats.W, cfg.q, cfg.mode, provenance=prov)
    out.provenance["selected_names"] = [d.names[j] for j in out.selected]
    return out


def spls_stab_gknock(d, cfg):
    """Two-stage selection: Sparse-PLS screen on one part of the rows, then
    Stab-GKnock on the screened columns using the other part.

    The spline basis is re-fit on each part. Reported indices refer to
    columns of ``d.X``; ``W`` is indexed by ``provenance['columns']``.
    """
    seeds = _seeds(cfg.seed)
    n, p = d.n, d.p
    n1 = cfg.split_n1 if cfg.split_n1 is not None else n // 2
    n2 = n - n1
    with _stage("split"):
        plan = split_data(n, n1, seeds["split"])
        k = cfg.k if cfg.k is not None else max(1, min(default_k(n1), n2 // 2))
        if k > n2 // 2:
            raise ValidationError(f"k={k} exceeds floor(n2 / 2) = {n2 // 2} (n2 = {n2})")
    with _stage("screening"):
        d1 = d.subset(rows=plan.idx1)
        if k >= p:
            kept = tuple(range(p))
            screen_obj = None
        else:
            pd1 = project_data(d1, _spline_for(cfg, n1))
            res = spls_screen(pd1.X_star, pd1.Y_star, k,
                              SolverOptions(restarts=cfg.restarts, n_jobs=cfg.n_jobs),
                              rng=seeds["screen"])
            kept, screen_obj = res.kept, res.objective
        if not kept:
            raise ScreeningTooAggressive("the screening stage kept no features")
    d2 = d.subset(rows=plan.idx2, cols=list(kept))
    inner = stab_gknock(d2, cfg)
    kept_arr = np.asarray(kept)
    selected = tuple(int(kept_arr[j]) for j in inner.selected)
    prov = dict(inner.provenance)
    prov.update(
        algorithm="spls_stab_gknock",
        n=n, p=p, n1=n1, n2=n2, k=k,
        split_idx1=plan.idx1.tolist(),
        screened=list(kept),
        screen_objective=screen_obj,
        columns=list(kept),
        stage_two_basis="refit on the second part",
        selected_names=[d.names[j] for j in selected],
        names=list(d.names),
    )
    return replace(inner, selected=selected, provenance=prov)


def run_selection(d, cfg, force_two_stage=False):
    """Dispatch on dimension: one stage when ``p < n/2``, else two stages."""
    if force_two_stage or not d.p < d.n / 2:
        return spls_stab_gknock(d, cfg)
    return stab_gknock(d, cfg)


def bh_baseline(d, q, spec=None):
    """Benjamini-Hochberg on marginal t-tests of the projected data."""
    pdata = project_data(d, spec)
    pv = univariate_pvalues(pdata.X_star, pdata.Y_star, dims_removed=pdata.Z.shape[1])
    return bh_select(pv, q)
