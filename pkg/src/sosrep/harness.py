"""Dataset handling, anomaly-detection protocols, and evaluation metrics.

Implements the evaluation pipeline: CSV ingestion, seeded stratified splits,
z-score standardization on train statistics, Fisher-divergence tuning of the
smoothness (or bandwidth) per seed, anomaly scoring by negative density, and
Mann-Whitney AUC-ROC with rank aggregation across datasets.  Also contains
the three experiment protocols: standard AD, duplicated anomalies (masking),
the negative-fraction comparison of the two gradient iterations, and the
empirical consistency trend check with a = 1/N.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import rankdata

from .baseline_kernels import (
    ClosedFormKernel,
    kde_density,
    kernel_gradient_closed_form,
    kernel_matrix_closed_form,
)
from .errors import DataError, NumericsError, SosrepError, ValidationError
from .score_fd import FdOptions, FdProfile, fd_statistic, tune
from .sdo_kernel import FrequencySample, SdoParams, feature_map, kernel_matrix, sample_frequencies
from .solver import FittedModel, SolverOptions, add_jitter, fit, fit_model

AD_METHODS = (
    "sosrep_sdo",
    "sosrep_gaussian",
    "sosrep_laplacian",
    "kde_sdo",
    "kde_gaussian",
    "kde_laplacian",
)
DEFAULT_SEEDS = (0, 1, 2, 3)


@dataclass
class Dataset:
    """Row-major feature table with optional binary anomaly labels (1 = anomaly)."""

    X: np.ndarray
    y: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise DataError("feature values must be finite")
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (X.shape[0],):
                raise DataError(
                    f"label vector length {y.shape} does not match {X.shape[0]} rows"
                )
            if y.size and not np.all(np.isin(y, (0, 1))):
                raise DataError("labels must be binary 0/1")
            self.y = y.astype(int)
        self.X = X

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def load_csv(path, label_column: str | None = None, name: str | None = None) -> Dataset:
    """Parse a headered CSV of numeric features, splitting off the label column.

    Rows with missing values are rejected with their row indices; cells that
    fail to parse report the file line; labels must be 0/1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found in header {header}")
        label_idx = header.index(label_column)
    feat_idx = [j for j in range(len(header)) if j != label_idx]
    if not feat_idx:
        raise DataError(f"{path}: no feature columns")

    data = rows[1:]
    X = np.empty((len(data), len(feat_idx)))
    y = np.empty(len(data), dtype=int) if label_idx is not None else None
    missing: list[int] = []
    for i, row in enumerate(data):
        if len(row) != len(header) or any(row[j].strip() == "" for j in range(len(header))):
            missing.append(i)
            continue
        for k, j in enumerate(feat_idx):
            cell = row[j].strip()
            try:
                v = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"{path}: line {i + 2}: could not parse {cell!r} as a number"
                ) from exc
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i} has non-finite value {cell!r}")
            X[i, k] = v
        if label_idx is not None:
            cell = row[label_idx].strip()
            try:
                lv = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"{path}: line {i + 2}: could not parse label {cell!r}"
                ) from exc
            if lv not in (0.0, 1.0):
                raise DataError(f"{path}: row {i} has non-binary label {cell!r}")
            y[i] = int(lv)
    if missing:
        raise DataError(f"{path}: rows with missing values: {missing}")
    if name is None:
        name = os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(X=X, y=y, name=name)


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def split(ds: Dataset, seed: int, train_frac: float = 0.7):
    """Deterministic shuffle split; stratified by label when labels exist.

    Train receives round(train_frac * N) rows and the anomaly proportion is
    preserved within one sample per part (largest-remainder allocation).  An
    empty stratum in either part warns rather than fails.
    """
    if not (0.0 < train_frac < 1.0):
        raise ValidationError(f"train_frac must lie strictly between 0 and 1, got {train_frac}")
    n = ds.n
    if n < 2:
        raise ValidationError("need at least 2 rows to split")
    rng = _rng(seed)
    n_train = int(round(train_frac * n))
    if ds.y is None:
        perm = rng.permutation(n)
        tr, te = perm[:n_train], perm[n_train:]
    else:
        classes = (0, 1)
        shuffled = []
        quotas = []
        for c in classes:
            idx = np.flatnonzero(ds.y == c)
            shuffled.append(rng.permutation(idx))
            quotas.append(train_frac * len(idx))
        base = [int(math.floor(q)) for q in quotas]
        leftover = n_train - sum(base)
        order = sorted(classes, key=lambda c: (-(quotas[c] - base[c]), c))
        k = 0
        while leftover > 0:
            c = order[k % len(order)]
            if base[c] < len(shuffled[c]):
                base[c] += 1
                leftover -= 1
            k += 1
        tr = np.concatenate([s[:b] for s, b in zip(shuffled, base)]).astype(int)
        te = np.concatenate([s[b:] for s, b in zip(shuffled, base)]).astype(int)
        for c in classes:
            n_c = len(shuffled[c])
            if n_c > 0 and (base[c] == 0 or base[c] == n_c):
                part = "train" if base[c] == 0 else "test"
                warnings.warn(
                    f"stratum {c} has zero rows in the {part} part", RuntimeWarning, stacklevel=2
                )
    train = Dataset(X=ds.X[tr], y=None if ds.y is None else ds.y[tr], name=f"{ds.name}#train")
    test = Dataset(X=ds.X[te], y=None if ds.y is None else ds.y[te], name=f"{ds.name}#test")
    return train, test


def standardize(train: Dataset, test: Dataset):
    """Per-feature z-score with train statistics; constant features centered."""
    if train.n < 1:
        raise ValidationError("train set must be nonempty")
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    zero = std == 0.0
    scale = np.where(zero, 1.0, std)
    train2 = replace(train, X=(train.X - mean) / scale)
    test2 = replace(test, X=(test.X - mean) / scale)
    stats = {
        "mean": [float(v) for v in mean],
        "std": [float(v) for v in std],
        "zero_variance_columns": [int(j) for j in np.flatnonzero(zero)],
    }
    return train2, test2, stats


def auc_roc(scores, labels) -> float:
    """AUC-ROC by the Mann-Whitney rank formula with average ranks on ties.

    Higher score means more anomalous (label 1).
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise DataError("labels must be binary 0/1")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("both classes must be present to compute AUC")
    ranks = rankdata(scores)
    u = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# density models used by the baselines


class ClosedFormRepresenterModel:
    """f = sum_i alpha_i k(x_i, .) with a closed-form kernel.

    With squared=True the density is f^2 (pre-density estimator); otherwise
    the density is f itself (KDE when alpha is uniform).
    """

    def __init__(self, X_train, alpha, kernel: ClosedFormKernel, squared: bool):
        self.X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
        self.alpha = np.asarray(alpha, dtype=float)
        self.kernel = kernel
        self.squared = squared

    def f_values(self, Y) -> np.ndarray:
        return self.alpha @ kernel_matrix_closed_form(self.kernel, self.X_train, Y)

    def density(self, Y) -> np.ndarray:
        f = self.f_values(Y)
        return f * f if self.squared else f

    def score_batch(self, Y):
        f = self.f_values(Y)
        grads = kernel_gradient_closed_form(self.kernel, self.X_train, Y)
        G = np.einsum("n,nmd->md", self.alpha, grads)
        factor = 2.0 if self.squared else 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            S = factor * G / f[:, None]
        return S, f


class SdoKdeModel:
    """KDE with the sampled kernel: f(y) = (1/N) sum_i k_hat(x_i, y).

    Evaluated through the mean feature weight vector; finite-T values can be
    slightly negative and are reported as-is.
    """

    def __init__(self, X_train, fs: FrequencySample):
        X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
        n = X_train.shape[0]
        alpha = np.full(n, 1.0 / n)
        Phi = feature_map(X_train, fs)
        self._inner = FittedModel(
            alpha=alpha, fs=fs, feature_weights=Phi.T @ alpha, X_train=X_train
        )

    def f_values(self, Y) -> np.ndarray:
        return self._inner.f_values(Y)

    def density(self, Y) -> np.ndarray:
        return self._inner.f_values(Y)

    def score_batch(self, Y):
        f, G = self._inner.f_and_grad(Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            S = G / f[:, None]
        return S, f


# ---------------------------------------------------------------------------
# standard AD protocol


def _default_a_grid() -> tuple:
    return tuple(np.geomspace(1e2, 1e-6, 25))


def _default_sigma_grid() -> tuple:
    return tuple(np.geomspace(10.0, 0.05, 25))


@dataclass(frozen=True)
class AdConfig:
    """Hyperparameters of the AD pipeline; all serialized into reports."""

    T: int = 4096
    m: int | None = None
    lr: float = 0.1
    n_iters: int = 1000
    grad_tol: float = 1e-8
    n_fd_iters: int = 100
    h: float = 1e-4
    probe: str = "rademacher"
    a_grid: tuple = field(default_factory=_default_a_grid)
    sigma_grid: tuple = field(default_factory=_default_sigma_grid)
    train_frac: float = 0.7
    fd_max_rows: int | None = None

    def snapshot(self) -> dict:
        d = asdict(self)
        d["a_grid"] = [float(v) for v in d["a_grid"]]
        d["sigma_grid"] = [float(v) for v in d["sigma_grid"]]
        return d


@dataclass
class ExperimentReport:
    dataset: str
    method: str
    seeds: tuple
    aucs: dict
    mean_auc: float
    config: dict
    chosen: dict
    standardization: dict
    warnings: tuple
    profiles: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": "1",
            "kind": "ad_report",
            "dataset": self.dataset,
            "method": self.method,
            "seeds": list(self.seeds),
            "aucs": {str(k): v for k, v in self.aucs.items()},
            "mean_auc": self.mean_auc,
            "config": self.config,
            "chosen": {str(k): v for k, v in self.chosen.items()},
            "standardization": self.standardization,
            "warnings": list(self.warnings),
        }


def _make_fit_fn(method: str, train_X: np.ndarray, seed: int, config: AdConfig):
    """Candidate-to-model factory for one (method, seed) tuple, with a cache."""
    d = train_X.shape[1]
    cache: dict[float, object] = {}
    if method in ("sosrep_sdo", "kde_sdo"):
        candidates = tuple(config.a_grid)
    else:
        candidates = tuple(config.sigma_grid)

    def build(value: float):
        if method == "sosrep_sdo":
            params = SdoParams(a=value, d=d, m=config.m)
            opts = SolverOptions(
                method="natural", lr=config.lr, n_iters=config.n_iters,
                seed=seed, grad_tol=config.grad_tol,
            )
            return fit_model(train_X, params, config.T, seed=seed, opts=opts)
        if method == "kde_sdo":
            params = SdoParams(a=value, d=d, m=config.m)
            fs = sample_frequencies(params, config.T, seed)
            return SdoKdeModel(train_X, fs)
        family = method.split("_")[1]
        kernel = ClosedFormKernel(family=family, sigma=value, d=d)
        if method.startswith("kde"):
            n = train_X.shape[0]
            return ClosedFormRepresenterModel(
                train_X, np.full(n, 1.0 / n), kernel, squared=False
            )
        K = kernel_matrix_closed_form(kernel, train_X, train_X)
        opts = SolverOptions(
            method="natural", lr=config.lr, n_iters=config.n_iters,
            seed=seed, grad_tol=config.grad_tol,
        )
        res = fit(K, opts)
        return ClosedFormRepresenterModel(train_X, res.alpha, kernel, squared=True)

    def fit_fn(value: float):
        if value not in cache:
            cache[value] = build(value)
        return cache[value]

    return candidates, fit_fn, cache


def run_ad(
    ds: Dataset,
    method: str,
    seeds=DEFAULT_SEEDS,
    config: AdConfig = AdConfig(),
) -> ExperimentReport:
    """Full AD protocol for one method: split, standardize, tune, fit, AUC.

    Per-seed failures are recorded as warnings; the report is emitted as long
    as at least one seed succeeds.
    """
    if method not in AD_METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {AD_METHODS}")
    if ds.y is None:
        raise DataError("the AD protocol requires labels")
    seeds = tuple(int(s) for s in seeds)
    aucs: dict[int, float] = {}
    chosen: dict[int, float] = {}
    profiles: dict[int, FdProfile] = {}
    warn_list: list[str] = []
    stats_last: dict = {}
    for seed in seeds:
        try:
            train, test = split(ds, seed, config.train_frac)
            train2, test2, stats = standardize(train, test)
            stats_last = stats
            Y_fd = test2.X
            if config.fd_max_rows is not None and Y_fd.shape[0] > config.fd_max_rows:
                sel = _rng(seed, 1).permutation(Y_fd.shape[0])[: config.fd_max_rows]
                Y_fd = Y_fd[np.sort(sel)]
            candidates, fit_fn, cache = _make_fit_fn(method, train2.X, seed, config)
            fd_opts = FdOptions(
                n_fd_iters=config.n_fd_iters, h=config.h, probe=config.probe, seed=seed
            )
            a_star, profile = tune(candidates, fit_fn, Y_fd, fd_opts)
            model = cache[a_star]
            scores = -np.asarray(model.density(test2.X), dtype=float)
            aucs[seed] = auc_roc(scores, test.y)
            chosen[seed] = float(a_star)
            profiles[seed] = profile
        except SosrepError as exc:
            warn_list.append(f"seed {seed}: {type(exc).__name__}: {exc}")
    if not aucs:
        raise NumericsError(
            f"all seeds failed for method {method}: {'; '.join(warn_list)}"
        )
    mean_auc = float(np.mean(list(aucs.values())))
    return ExperimentReport(
        dataset=ds.name,
        method=method,
        seeds=seeds,
        aucs=aucs,
        mean_auc=mean_auc,
        config=config.snapshot(),
        chosen=chosen,
        standardization=stats_last,
        warnings=tuple(warn_list),
        profiles=profiles,
    )


def duplicate_anomalies(ds: Dataset, k: int) -> Dataset:
    """Each anomaly row appears k times total (1 <= k <= 6); inliers unchanged.

    Applied to the whole dataset so that a later split lands duplicates in
    both parts.
    """
    if ds.y is None:
        raise DataError("duplicate_anomalies requires labels")
    if not (1 <= int(k) <= 6):
        raise ValidationError(f"k must lie in 1..6, got {k}")
    k = int(k)
    counts = np.where(ds.y == 1, k, 1)
    X2 = np.repeat(ds.X, counts, axis=0)
    y2 = np.repeat(ds.y, counts)
    return Dataset(X=X2, y=y2, name=f"{ds.name}#dup{k}")


# ---------------------------------------------------------------------------
# negative-fraction experiment


def negative_fraction_experiment(
    ds: Dataset,
    a: float = 1.0,
    T: int = 2048,
    m: int | None = None,
    n_init: int = 50,
    n_iters: int = 1000,
    lr: float = 0.1,
    seed: int = 0,
    kernel: str = "sdo",
    sigma: float = 1.0,
) -> dict:
    """Fraction of train points with f < 0 after n_iters, per gradient method.

    Runs n_init nonnegative initializations (shared between methods), reports
    the mean of the 5 worst final fractions per method plus the
    initialization-time fractions.  Divergent runs count as fraction 1.
    """
    if n_init < 5:
        raise ValidationError("need at least 5 initializations for a worst-5 mean")
    X = ds.X
    if kernel == "sdo":
        params = SdoParams(a=a, d=ds.d, m=m)
        fs = sample_frequencies(params, T, seed)
        K = add_jitter(kernel_matrix(X, None, fs))
    elif kernel in ("gaussian", "laplacian"):
        K = kernel_matrix_closed_form(ClosedFormKernel(kernel, sigma, ds.d), X, X)
    else:
        raise ValidationError(f"unknown kernel {kernel!r}")
    n = K.shape[0]

    inits = []
    for i in range(n_init):
        rng = _rng(seed, i + 1)
        inits.append(np.abs(rng.standard_normal(n)))

    warn_list: list[str] = []
    init_fracs = np.array([float(np.mean(K @ a0 < 0.0)) for a0 in inits])
    out: dict = {
        "config": {
            "kernel": kernel, "a": a, "sigma": sigma, "T": T, "n_init": n_init,
            "n_iters": n_iters, "lr": lr, "seed": seed,
        },
        "init": {
            "mean_fraction": float(init_fracs.mean()),
            "worst5_mean": float(np.sort(init_fracs)[-5:].mean()),
        },
        "methods": {},
    }
    for method in ("natural", "standard"):
        fracs = np.empty(n_init)
        n_divergent = 0
        for i, a0 in enumerate(inits):
            opts = SolverOptions(
                method=method, lr=lr, n_iters=n_iters, seed=seed,
                init="user", alpha0=a0, grad_tol=0.0,
            )
            try:
                res = fit(K, opts)
                fracs[i] = float(np.mean(K @ res.alpha < 0.0))
            except NumericsError as exc:
                fracs[i] = 1.0
                n_divergent += 1
                warn_list.append(f"{method} init {i}: {exc}")
        out["methods"][method] = {
            "worst5_mean": float(np.sort(fracs)[-5:].mean()),
            "mean_fraction": float(fracs.mean()),
            "n_divergent": n_divergent,
            "fractions": [float(v) for v in fracs],
        }
    out["warnings"] = warn_list
    return out


# ---------------------------------------------------------------------------
# consistency experiment


@dataclass(frozen=True)
class SmoothBumpDensity:
    """Compactly supported C-infinity bump on [center - width, center + width].

    pdf proportional to exp(-1/(1 - u^2)) with u the rescaled coordinate; its
    square root is smooth, so the density qualifies for the a = 1/N trend.
    """

    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValidationError("width must be positive")

    def support(self):
        return self.center - self.width, self.center + self.width

    def _raw(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        with np.errstate(divide="ignore", over="ignore"):
            out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return out

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.width
        return self._raw(u) / (_bump_norm() * self.width)

    def sqrt_pdf(self, x) -> np.ndarray:
        return np.sqrt(self.pdf(x))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF sampling on a fine grid; returns an (n, 1) array."""
        u_grid, cdf = _bump_cdf()
        u = np.interp(rng.random(n), cdf, u_grid)
        return (self.center + self.width * u).reshape(-1, 1)


@lru_cache(maxsize=1)
def _bump_norm() -> float:
    u = np.linspace(-1.0, 1.0, 20001)
    raw = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    raw[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return float(np.trapezoid(raw, u))


@lru_cache(maxsize=1)
def _bump_cdf():
    from scipy.integrate import cumulative_trapezoid

    u = np.linspace(-1.0, 1.0, 20001)
    raw = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    raw[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    cdf = cumulative_trapezoid(raw, u, initial=0.0)
    cdf /= cdf[-1]
    return u, cdf


def consistency_experiment(
    density: SmoothBumpDensity,
    Ns,
    grid,
    n_reps: int = 5,
    T: int = 4096,
    seed: int = 0,
    lr: float = 0.1,
    n_iters: int = 1000,
    grad_tol: float = 1e-8,
) -> list:
    """L2 error of the normalized fitted root-density at a = 1/N, per N.

    For each sample size N and repetition: draw N points, fit with a = 1/N
    and m = 1, rescale |f| to unit L2 mass on the grid, and record the
    trapezoid L2 distance to the true root density.  Reports the median over
    repetitions.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    v = density.sqrt_pdf(grid)
    v = v / math.sqrt(float(np.trapezoid(v * v, grid)))
    results = []
    for i_n, N in enumerate(Ns):
        N = int(N)
        a = 1.0 / N
        errors = []
        for rep in range(n_reps):
            sub = i_n * max(1000, n_reps) + rep + 1
            rng = _rng(seed, sub)
            X = density.sample(N, rng)
            fit_seed = seed * 1_000_003 + sub
            opts = SolverOptions(
                method="natural", lr=lr, n_iters=n_iters, seed=fit_seed, grad_tol=grad_tol
            )
            model = fit_model(X, SdoParams(a=a, d=1, m=1), T, seed=fit_seed, opts=opts)
            fhat = np.abs(model.f_values(grid.reshape(-1, 1)))
            mass = float(np.trapezoid(fhat * fhat, grid))
            if mass <= 0:
                raise NumericsError(f"fitted function has zero mass on the grid (N={N})")
            fhat = fhat / math.sqrt(mass)
            err = math.sqrt(float(np.trapezoid((fhat - v) ** 2, grid)))
            errors.append(err)
        results.append(
            {
                "N": N,
                "a": a,
                "median_l2_error": float(np.median(errors)),
                "errors": [float(e) for e in errors],
            }
        )
    return results


# ---------------------------------------------------------------------------
# rank aggregation


def rank_aggregate(results: dict):
    """Per-dataset ranks (1..M, M best, average on ties) and mean rank per method.

    `results` maps method -> dataset -> AUC; the table must be complete.
    """
    methods = sorted(results)
    if not methods:
        raise DataError("empty results table")
    datasets = sorted(results[methods[0]])
    for m in methods:
        if sorted(results[m]) != datasets:
            raise DataError(f"method {m!r} is missing cells; the table must be complete")
    rank_table: dict = {m: {} for m in methods}
    for d in datasets:
        vals = np.array([results[m][d] for m in methods], dtype=float)
        ranks = rankdata(vals)  # higher AUC -> higher rank
        for m, r in zip(methods, ranks):
            rank_table[m][d] = float(r)
    mean_ranks = {m: float(np.mean(list(rank_table[m].values()))) for m in methods}
    return rank_table, mean_ranks
