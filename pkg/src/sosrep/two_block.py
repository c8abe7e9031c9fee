"""Analytic two-cluster block model used as a validation oracle.

The idealized Gram matrix has two internally homogeneous clusters: diagonal
1, within-cluster off-diagonals gamma^2 and gamma_prime^2, and cross entries
beta * gamma * gamma_prime.  At a fixed point of the pre-density objective
the function values are constant on each cluster, equal to (a, b) solving

    a = H11 / a + H12 / b,      b = H21 / a + H22 / b,

for suitable positive coefficients H.  With the large-N approximate system
(H11 = gamma^2, H22 = gamma_prime^2, H12 = H21 = beta*gamma*gamma_prime) the
squared ratio a^2/b^2 equals gamma^2/gamma_prime^2 for every beta, unlike
the KDE ratio which degrades with the cross-correlation.  The exact finite-N
system replaces the diagonals by 1 + (N-1) gamma^2 and scales the cross
terms by the opposite cluster size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericsError, ValidationError
from .solver import SolverOptions, fit, rkhs_norm_sq

_FIXED_POINT_ITERS = 400
_FIXED_POINT_DAMPING = 0.5
_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class BlockSpec:
    N: int
    M: int
    gamma: float
    gamma_prime: float
    beta: float

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValidationError("cluster sizes must be at least 1")
        if not (0.0 < self.gamma_prime <= self.gamma <= 1.0):
            raise ValidationError(
                f"need 0 < gamma_prime <= gamma <= 1, got gamma={self.gamma}, "
                f"gamma_prime={self.gamma_prime}"
            )
        if not (0.0 <= self.beta <= 1.0):
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class TwoBlockSolution:
    """Positive solution of the two-variable system plus closed-form ratios."""

    a: float
    b: float
    ratio: float  # a^2 / b^2
    ratio_by_rho: dict  # closed-form candidate ratios for rho = +1 and -1
    rho: int  # admissible sign
    residual: float


def build_block_kernel(spec: BlockSpec) -> np.ndarray:
    """(N+M) x (N+M) block Gram matrix of the two-cluster model."""
    n, m = spec.N, spec.M
    g, gp, beta = spec.gamma, spec.gamma_prime, spec.beta
    K = np.empty((n + m, n + m))
    K[:n, :n] = g * g
    K[n:, n:] = gp * gp
    K[:n, n:] = beta * g * gp
    K[n:, :n] = beta * g * gp
    np.fill_diagonal(K, 1.0)
    return K


def kde_ratio(spec: BlockSpec) -> float:
    """Cluster density ratio of the plain KDE under the block model (N = M).

    (gamma^2 + beta*gamma*gamma_prime) / (gamma_prime^2 + beta*gamma*gamma_prime)
    """
    if spec.N != spec.M:
        raise ValidationError("the KDE ratio formula assumes equal cluster sizes")
    g, gp, beta = spec.gamma, spec.gamma_prime, spec.beta
    cross = beta * g * gp
    return (g * g + cross) / (gp * gp + cross)


def _system_residual(a: float, b: float, H11, H12, H21, H22) -> float:
    r1 = a - (H11 / a + H12 / b)
    r2 = b - (H21 / a + H22 / b)
    return max(abs(r1), abs(r2))


def solve_two_block(H11: float, H12: float, H21: float, H22: float) -> TwoBlockSolution:
    """Positive solution of a = H11/a + H12/b, b = H21/a + H22/b.

    Runs a damped fixed-point iteration from a = b = 1, then polishes with
    the closed-form quadratic in s = u^2 (u = 1/a) from eliminating v:

        s^2 (H11^2 H22 - H11 H12 H21) + s (H12 H21 - H12^2 - 2 H11 H22) + H22 = 0.

    Also reports the closed-form ratio candidates for both signs rho = +-1;
    the admissible sign is the one consistent with the positive solution.
    """
    H = (H11, H12, H21, H22)
    if any(not np.isfinite(h) for h in H) or H11 <= 0 or H22 <= 0 or H12 < 0 or H21 < 0:
        raise ValidationError(f"H must be positive (cross terms nonnegative), got {H}")

    a, b = 1.0, 1.0
    t = _FIXED_POINT_DAMPING
    for _ in range(_FIXED_POINT_ITERS):
        a_new = (1 - t) * a + t * (H11 / a + H12 / b)
        b_new = (1 - t) * b + t * (H21 / a + H22 / b)
        a, b = a_new, b_new

    # closed-form ratio candidates: t = a/b solves H22 t^2 + (H21 - H12) t - H11 = 0
    disc = math.sqrt((H21 - H12) ** 2 + 4.0 * H11 * H22)
    ratio_by_rho = {}
    for rho in (+1, -1):
        t_rho = ((H12 - H21) + rho * disc) / (2.0 * H22)
        ratio_by_rho[rho] = t_rho * t_rho

    # polish via the quadratic in s = (1/a)^2
    candidates = []
    if H12 == 0.0 and H21 == 0.0:
        candidates.append((math.sqrt(H11), math.sqrt(H22)))
    else:
        c2 = H11 * H11 * H22 - H11 * H12 * H21
        c1 = H12 * H21 - H12 * H12 - 2.0 * H11 * H22
        c0 = H22
        if c2 == 0.0:
            roots = [-c0 / c1] if c1 != 0.0 else []
        else:
            d2 = c1 * c1 - 4.0 * c2 * c0
            if d2 < 0:
                roots = []
            else:
                sq = math.sqrt(d2)
                # numerically stable quadratic roots
                q = -0.5 * (c1 + math.copysign(sq, c1))
                roots = [q / c2]
                if q != 0.0:
                    roots.append(c0 / q)
        for s in roots:
            if s <= 0 or not np.isfinite(s):
                continue
            u = math.sqrt(s)
            # positive root of H22 v^2 + H21 u v = 1, in conjugate form so
            # near-decoupled systems (tiny cross terms) cannot cancel
            v = 2.0 / (H21 * u + math.sqrt((H21 * u) ** 2 + 4.0 * H22))
            if v <= 0 or not np.isfinite(v):
                continue
            candidates.append((1.0 / u, 1.0 / v))
    # the damped iterate itself competes; it carries the solve when the
    # elimination quadratic is too ill-conditioned to yield a candidate
    candidates.append((a, b))

    best = None
    for ca, cb in candidates:
        res = _system_residual(ca, cb, *H)
        rel = res / max(ca, cb)
        if rel <= _RESIDUAL_TOL and (best is None or rel < best[2]):
            best = (ca, cb, rel)
    if best is None:
        fp_res = _system_residual(a, b, *H)
        raise NumericsError(
            f"no positive solution found; fixed-point residual {fp_res:.3e}, "
            f"closed-form candidates {candidates}"
        )
    a, b, rel = best[0], best[1], best[2]
    ratio = (a / b) ** 2
    rho = min(ratio_by_rho, key=lambda r: abs(ratio_by_rho[r] - ratio))
    return TwoBlockSolution(
        a=a, b=b, ratio=ratio, ratio_by_rho=ratio_by_rho, rho=rho,
        residual=_system_residual(a, b, *H),
    )


def exact_system_coefficients(spec: BlockSpec):
    """Finite-N coefficients: diagonal 1 + (N-1) gamma^2, cross scaled by sizes."""
    g, gp, beta = spec.gamma, spec.gamma_prime, spec.beta
    H11 = 1.0 + (spec.N - 1) * g * g
    H22 = 1.0 + (spec.M - 1) * gp * gp
    H12 = spec.M * beta * g * gp
    H21 = spec.N * beta * g * gp
    return H11, H12, H21, H22


def sosrep_block_ratio(spec: BlockSpec) -> float:
    """Cluster pre-density ratio under the large-N approximate system (N = M).

    Equals gamma^2 / gamma_prime^2 regardless of beta; the overall size
    scaling of the coefficients cancels in the ratio.
    """
    if spec.N != spec.M:
        raise ValidationError("the approximate-system ratio assumes equal cluster sizes")
    g, gp, beta = spec.gamma, spec.gamma_prime, spec.beta
    sol = solve_two_block(g * g, beta * g * gp, beta * g * gp, gp * gp)
    return sol.ratio


def verify_against_solver(spec: BlockSpec, opts: SolverOptions | None = None) -> dict:
    """Fit the block kernel numerically and compare cluster ratios to the oracle.

    Returns a JSON-ready report with the KDE ratio (when N = M), the
    approximate-system ratio, the exact finite-N system ratio, the solver's
    empirical ratio, and their deviations.
    """
    if spec.N > 200 or spec.M > 200:
        raise ValidationError("solver verification is desk-scale: cluster sizes <= 200")
    if opts is None:
        opts = SolverOptions(method="natural", lr=0.1, n_iters=20000, seed=0, grad_tol=1e-12)
    K = build_block_kernel(spec)
    res = fit(K, opts)
    f = K @ res.alpha
    n = spec.N
    fa = float(np.mean(f[:n]))
    fb = float(np.mean(f[n:]))
    spread_alpha = max(
        float(np.max(np.abs(res.alpha[:n] - np.mean(res.alpha[:n])))),
        float(np.max(np.abs(res.alpha[n:] - np.mean(res.alpha[n:])))),
    )
    ratio_solver = (fa / fb) ** 2

    exact = solve_two_block(*exact_system_coefficients(spec))
    approx_ratio = (spec.gamma / spec.gamma_prime) ** 2

    report = {
        "spec": asdict(spec),
        "ratio_solver": ratio_solver,
        "ratio_exact_system": exact.ratio,
        "exact_system_solution": {
            "a": exact.a,
            "b": exact.b,
            "rho": exact.rho,
            "residual": exact.residual,
        },
        "ratio_approx_system": approx_ratio,
        "rel_dev_solver_vs_exact": abs(ratio_solver - exact.ratio) / exact.ratio,
        "rel_dev_solver_vs_approx": abs(ratio_solver - approx_ratio) / approx_ratio,
        "finite_n_correction": exact.ratio - approx_ratio,
        "alpha_intra_cluster_spread": spread_alpha,
        "solver": {
            "converged": res.converged,
            "n_iters_run": res.n_iters_run,
            "grad_sup_norm": res.grad_sup_norm,
            "objective": res.objective,
            "rkhs_norm_sq": rkhs_norm_sq(res.alpha, K),
            "clamp_warnings": res.clamp_warnings,
        },
    }
    if spec.N == spec.M:
        report["kde_ratio"] = kde_ratio(spec)
        report["ratio_closed_form"] = sosrep_block_ratio(spec)
    return report
