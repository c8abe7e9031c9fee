"""Score function, Hutchinson trace estimation, and Fisher-divergence tuning.

The Fisher-divergence statistic of a density model q against test rows Y is
the score-matching objective up to an additive constant:

    FD = mean over rows y of [ trace(J_s(y)) + 0.5 * ||s(y)||^2 ],

where s = grad log q and J_s its Jacobian, whose trace is estimated by
finite-difference Hutchinson probes.  Because scores are invariant to the
density's normalization, the statistic can rank smoothness candidates
without normalizing the fitted pre-density.

Hyperparameter selection follows a stable-local-minimum rule on the profile
of FD values over a descending grid of smoothness candidates: the chosen
point must lie strictly below its three neighbors on each side, ties broken
toward the largest candidate, with a lazy sweep that stops as soon as such a
point is certified.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllCandidatesFailed,
    NumericsError,
    SolverDivergence,
    ValidationError,
    VanishingDensity,
)

_PROBES = ("rademacher", "paper_three_point")
_DENSITY_FLOOR = 1e-12
_THREE_POINT_CORRECTION = 1.5  # probe covariance is (2/3) I


@dataclass(frozen=True)
class FdOptions:
    n_fd_iters: int = 100
    h: float = 1e-4
    probe: str = "rademacher"
    seed: int = 0

    def __post_init__(self):
        if self.n_fd_iters < 1:
            raise ValidationError("n_fd_iters must be at least 1")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValidationError("h must be positive")
        if self.probe not in _PROBES:
            raise ValidationError(f"probe must be one of {_PROBES}, got {self.probe!r}")


@dataclass(frozen=True)
class FdEntry:
    a: float
    fd: float
    retained_rows: int = 0
    skipped_rows: int = 0


@dataclass(frozen=True)
class FdProfile:
    """FD statistics over a strictly descending grid of candidates.

    Failed candidates are recorded with fd = +inf; NaN is rejected.
    """

    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        a_vals = [e.a for e in entries]
        if any(a <= 0 or not np.isfinite(a) for a in a_vals):
            raise ValidationError("candidate values must be positive and finite")
        if any(a_vals[i] <= a_vals[i + 1] for i in range(len(a_vals) - 1)):
            raise ValidationError("candidate values must be strictly decreasing")
        if any(math.isnan(e.fd) for e in entries):
            raise ValidationError("fd values must not be NaN (use +inf for failures)")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def a_values(self):
        return np.array([e.a for e in self.entries])

    def fd_values(self):
        return np.array([e.fd for e in self.entries])


@dataclass(frozen=True)
class FdStat:
    value: float
    retained_rows: int
    skipped_rows: int


def _probe_rng(seed: int, row_index: int) -> np.random.Generator:
    key = np.array([seed, row_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_probes(rng: np.random.Generator, n: int, d: int, probe: str) -> np.ndarray:
    if probe == "rademacher":
        return rng.integers(0, 2, size=(n, d)).astype(float) * 2.0 - 1.0
    return rng.integers(-1, 2, size=(n, d)).astype(float)


def score(model, x) -> np.ndarray:
    """Score 2 * grad f / f of the pre-density f^2 at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    S, f = model.score_batch(x)
    if abs(f[0]) < _DENSITY_FLOOR:
        raise VanishingDensity(f"vanishing density at query (|f| = {abs(f[0]):.3e})")
    return S[0]


def score_jacobian_trace(model, x) -> float:
    """Analytic trace of the score Jacobian: 2 * [Lap f / f - ||grad f||^2 / f^2].

    Available for feature-space models exposing f_and_grad and laplacian_f;
    used as a cross-check oracle for the Hutchinson estimator.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    f, G = model.f_and_grad(x)
    if abs(f[0]) < _DENSITY_FLOOR:
        raise VanishingDensity("vanishing density at query")
    lap = model.laplacian_f(x)[0]
    g2 = float(G[0] @ G[0])
    return 2.0 * (lap / f[0] - g2 / f[0] ** 2)


def hutchinson_trace(score_fn, x, opts: FdOptions, row_index: int = 0) -> float:
    """Finite-difference Hutchinson estimate of trace(Jacobian of score_fn).

    Averages (1/h) * (score_fn(x + h*eps) - score_fn(x)) . eps over
    opts.n_fd_iters probe vectors.  Rademacher probes have identity
    covariance; the three-point probe (coordinates uniform on {-1,0,1}) has
    covariance (2/3) I and the average is corrected by 3/2.  Probe draws are
    keyed by (opts.seed, row_index) so results do not depend on evaluation
    order.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.shape[0]
    rng = _probe_rng(opts.seed, row_index)
    eps = _draw_probes(rng, opts.n_fd_iters, d, opts.probe)
    s0 = np.asarray(score_fn(x), dtype=float)
    total = 0.0
    for j in range(opts.n_fd_iters):
        s1 = np.asarray(score_fn(x + opts.h * eps[j]), dtype=float)
        total += float((s1 - s0) @ eps[j]) / opts.h
    est = total / opts.n_fd_iters
    if opts.probe == "paper_three_point":
        est *= _THREE_POINT_CORRECTION
    return est


def fd_statistic(model, Y, opts: FdOptions = FdOptions()) -> FdStat:
    """Fisher-divergence statistic of the model over test rows Y.

    Rows where the model's underlying f vanishes (at the base point or any
    probe displacement) are skipped and counted; the statistic is the mean
    over retained rows of [Hutchinson trace + 0.5 ||score||^2].
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n_rows, d = Y.shape
    if n_rows < 1:
        raise ValidationError("fd_statistic requires at least one test row")
    S0, f0 = model.score_batch(Y)
    ok = np.abs(f0) >= _DENSITY_FLOOR

    eps = np.empty((n_rows, opts.n_fd_iters, d))
    for i in range(n_rows):
        eps[i] = _draw_probes(_probe_rng(opts.seed, i), opts.n_fd_iters, d, opts.probe)

    trace_acc = np.zeros(n_rows)
    for j in range(opts.n_fd_iters):
        E = eps[:, j, :]
        Sj, fj = model.score_batch(Y + opts.h * E)
        ok &= np.abs(fj) >= _DENSITY_FLOOR
        with np.errstate(invalid="ignore"):
            trace_acc += np.einsum("md,md->m", Sj - S0, E)
    trace = trace_acc / (opts.n_fd_iters * opts.h)
    if opts.probe == "paper_three_point":
        trace *= _THREE_POINT_CORRECTION

    with np.errstate(invalid="ignore"):
        vals = trace + 0.5 * np.einsum("md,md->m", S0, S0)
    ok &= np.isfinite(vals)
    retained = int(ok.sum())
    if retained == 0:
        raise NumericsError("all rows skipped: the density vanishes at every test row")
    return FdStat(
        value=float(np.mean(vals[ok])),
        retained_rows=retained,
        skipped_rows=int(n_rows - retained),
    )


def _is_stable_center(fd: np.ndarray, center: int, window: int) -> bool:
    if not np.isfinite(fd[center]):
        return False
    lo, hi = center - window, center + window
    if lo < 0 or hi >= len(fd):
        return False
    neighbors = np.concatenate([fd[lo:center], fd[center + 1 : hi + 1]])
    return bool(np.all(fd[center] < neighbors))


def stable_minimum(profile: FdProfile, window: int = 3):
    """Largest candidate strictly below its `window` neighbors on each side.

    Entries are in descending candidate order, so the first qualifying index
    is the tie-break winner.  Returns None when no interior entry qualifies.
    """
    n = len(profile)
    if n < 2 * window + 1:
        raise ValidationError(
            f"profile needs at least {2 * window + 1} entries for window={window}, got {n}"
        )
    fd = profile.fd_values()
    for i in range(window, n - window):
        if _is_stable_center(fd, i, window):
            return profile.entries[i].a
    return None


def tune(candidate_as, fit_fn, Y_test, opts: FdOptions = FdOptions(), window: int = 3):
    """Select a smoothness value by the stable-minimum rule, lazily.

    Candidates (strictly descending) are evaluated from the largest down;
    each fit runs at most once.  After index j >= 2*window is evaluated, the
    window around index j - window is complete, so that center is certified
    on the spot and the sweep stops at the first stable minimum — by
    construction the one with the largest candidate value.  A candidate whose
    fit or statistic fails records fd = +inf.  If no stable minimum exists
    after exhausting the grid, the global minimum of the evaluated profile is
    returned (ties toward the larger candidate).

    Returns (a_star, profile of all evaluated candidates).
    """
    cand = [float(a) for a in candidate_as]
    if len(cand) < 2 * window + 1:
        raise ValidationError(f"need at least {2 * window + 1} candidates, got {len(cand)}")
    if any(not np.isfinite(a) or a <= 0 for a in cand):
        raise ValidationError("candidates must be positive and finite")
    if any(cand[i] <= cand[i + 1] for i in range(len(cand) - 1)):
        raise ValidationError("candidates must be strictly decreasing")

    entries: list[FdEntry] = []
    fd_so_far: list[float] = []

    def evaluate(a: float) -> FdEntry:
        try:
            model = fit_fn(a)
            stat = fd_statistic(model, Y_test, opts)
            fd = stat.value
            if math.isnan(fd):
                fd = math.inf
            return FdEntry(a=a, fd=fd, retained_rows=stat.retained_rows,
                           skipped_rows=stat.skipped_rows)
        except (NumericsError, SolverDivergence, FloatingPointError):
            return FdEntry(a=a, fd=math.inf, retained_rows=0,
                           skipped_rows=int(np.atleast_2d(Y_test).shape[0]))

    for j, a in enumerate(cand):
        entry = evaluate(a)
        entries.append(entry)
        fd_so_far.append(entry.fd)
        if j >= 2 * window:
            center = j - window
            if _is_stable_center(np.array(fd_so_far), center, window):
                return cand[center], FdProfile(entries=tuple(entries))

    profile = FdProfile(entries=tuple(entries))
    fd = profile.fd_values()
    if not np.any(np.isfinite(fd)):
        raise AllCandidatesFailed("every candidate recorded a non-finite FD statistic")
    return cand[int(np.argmin(fd))], profile


def profile_to_csv(profile: FdProfile, path=None) -> str:
    """Write the profile as CSV (a, fd, retained_rows, skipped_rows).

    Floats carry 17 significant digits; failed candidates appear as "inf".
    Returns the CSV text; writes atomically when a path is given.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["a", "fd", "retained_rows", "skipped_rows"])
    for e in profile.entries:
        writer.writerow([f"{e.a:.17g}", f"{e.fd:.17g}", e.retained_rows, e.skipped_rows])
    text = buf.getvalue()
    if path is not None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    return text


def profile_from_csv(text: str) -> FdProfile:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["a", "fd", "retained_rows", "skipped_rows"]:
        raise ValidationError(f"unexpected profile header: {header}")
    entries = []
    for row in reader:
        if not row:
            continue
        entries.append(FdEntry(a=float(row[0]), fd=float(row[1]),
                               retained_rows=int(row[2]), skipped_rows=int(row[3])))
    return FdProfile(entries=tuple(entries))
