"""Self-contained verification suite behind ``amsplit verify``.

Each check pits an analytic quantity against an independent route --
recursion vs expansion, solver vs closed form, quadrature vs evaluation,
reconstruction vs Monte Carlo -- and reports expected/actual/tolerance.
``quick`` runs the purely analytic checks in seconds; ``full`` adds the
Monte Carlo cross-validation and the large-n asymptotics.
"""

from __future__ import annotations

import cmath
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import analysis
from .ams import run_ams_batch
from .sampling import exponential
from .stats import empirical_char_function

__all__ = ["CheckResult", "run_checks", "coefficients_agree", "QUICK_CHECKS", "FULL_CHECKS"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    expected: str
    actual: str
    tolerance: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (
            f"[{mark}] {self.name}: actual={self.actual} expected={self.expected} "
            f"tol={self.tolerance} ({self.seconds:.2f}s)"
        )


def coefficients_agree(
    first: tuple[float, list], second: tuple[float, list], rel_tol: float = 1e-12
) -> tuple[bool, float]:
    """Relative agreement of two (mu, r) coefficient sets; returns (ok, worst)."""
    mu1, r1 = first
    mu2, r2 = second
    if len(r1) != len(r2):
        return False, math.inf
    worst = 0.0
    for a, b in zip([mu1, *r1], [mu2, *r2]):
        scale = max(abs(float(a)), abs(float(b)), 1.0)
        worst = max(worst, abs(float(a) - float(b)) / scale)
    return worst <= rel_tol, worst


# ---------------------------------------------------------------------------
# Quick checks


def check_ode_duality() -> CheckResult:
    """Recursion vs polynomial expansion over a grid of (n, k)."""
    worst = 0.0
    grid = [(n, k) for n in (5, 10, 25, 50, 100)
            for k in range(1, min(20, n - 2) + 1)]
    ok_all = True
    for n, k in grid:
        ok, w = coefficients_agree(
            analysis.ode_coefficients_recursion(n, k),
            analysis.ode_coefficients_expansion(n, k),
        )
        ok_all &= ok
        worst = max(worst, w)
    return CheckResult(
        name="ode-coefficient-duality",
        passed=ok_all,
        expected="relative agreement of both routes",
        actual=f"worst rel diff {worst:.2e} over {len(grid)} pairs",
        tolerance="1e-12",
    )


def check_root_residuals() -> CheckResult:
    """Characteristic-equation residual of every returned root."""
    worst = 0.0
    cases = [(n, k, t) for n in (16, 64, 256, 1024)
             for k in (1, 2, 3, 5, 8) for t in (0.0, 0.5, 1.0, 2.0)
             if k <= n - 2]
    for n, k, t in cases:
        roots = analysis.characteristic_roots(n, k, t)
        target = cmath.exp(1j * t * math.sqrt(n) * math.log1p(-k / n))
        for lam in roots:
            val = 1.0 + 0.0j
            for j in range(k):
                val *= (n - j - lam) / (n - j)
            worst = max(worst, abs(val - target))
    return CheckResult(
        name="characteristic-root-residuals",
        passed=worst <= 1e-10,
        expected="<= 1e-10 for every root",
        actual=f"worst residual {worst:.2e} over {len(cases)} cases",
        tolerance="1e-10",
    )


def check_k1_closed_forms() -> CheckResult:
    """k = 1: solver root vs closed form, eta = 1, and the variance limit."""
    worst_root = 0.0
    for n in (10, 100, 1000):
        for t in (0.3, 1.0, 2.5):
            solver = analysis.characteristic_roots(n, 1, t)[0]
            closed = n * (1.0 - cmath.exp(1j * t * math.sqrt(n) * math.log1p(-1 / n)))
            worst_root = max(worst_root, abs(solver - closed) / max(abs(closed), 1.0))
    # chi for k=1 is a single exponential with unit coefficient
    sol = analysis.solve_chi(20, 1, 1.3, 2.0)
    eta_err = abs(sol.coeffs[0] - 1.0)
    # n Var[p_hat] -> -p^2 log p
    a = 2.0
    law = analysis.k1_exact_law(10**6, a)
    var_ratio = 10**6 * law.var_phat / analysis.asymptotic_variance(math.exp(-a))
    ok = worst_root <= 1e-12 and eta_err <= 1e-10 and abs(var_ratio - 1.0) <= 1e-5
    return CheckResult(
        name="k1-closed-forms",
        passed=ok,
        expected="root matches closed form, eta=1, n Var -> -p^2 log p",
        actual=(f"root rel err {worst_root:.2e}, |eta-1| {eta_err:.2e}, "
                f"nVar ratio {var_ratio:.8f}"),
        tolerance="1e-12 / 1e-10 / 1e-5",
    )


def check_derivative_identities() -> CheckResult:
    """Finite differences vs the closed-form density derivative identities."""
    cases = [(5, 1, 1.0, 0.2), (10, 4, 2.0, 0.0), (10, 9, 1.5, 0.3),
             (50, 10, 1.0, 0.5), (25, 2, 3.0, 1.0)]
    worst = 0.0
    ok_all = True
    for n, k, y, x in cases:
        rep = analysis.derivative_identity_check(n, k, y, x)
        ok_all &= rep.passed
        worst = max(worst, rep.rel_error)
    return CheckResult(
        name="derivative-identities",
        passed=ok_all,
        expected="relative agreement of finite difference and identity",
        actual=f"worst rel err {worst:.2e} over {len(cases)} cases",
        tolerance="1e-5",
    )


# ---------------------------------------------------------------------------
# Full checks


def check_chi_vs_monte_carlo(workers: int = 1) -> CheckResult:
    """chi(1, 0) from the ODE reconstruction vs 1e6 simulated runs."""
    n, k, a, t, runs = 20, 3, 2.0, 1.0, 10**6
    sol = analysis.solve_chi(n, k, t, a)
    batch = run_ams_batch(exponential(), n=n, k=k, a=a, x=0.0,
                          num_runs=runs, master_seed=20260314, workers=workers)
    p_hat = batch.successful()[0]
    log_p = -(a - 0.0)
    ratios = math.sqrt(n) * (np.log(p_hat) - log_p)
    mc = cmath.exp(1j * t * math.sqrt(n) * log_p) * empirical_char_function(ratios, t)
    diff = abs(mc - sol.chi(0.0))
    tol = 5.0 / math.sqrt(runs)
    return CheckResult(
        name="chi-vs-monte-carlo",
        passed=diff <= tol and not batch.failures,
        expected=f"|MC - chi(1,0)| <= {tol:.2e}",
        actual=f"|diff| = {diff:.2e} (chi = {sol.chi(0.0):.6f})",
        tolerance=f"5/sqrt(M) = {tol:.2e}",
    )


def check_functional_equation() -> CheckResult:
    """Quadrature residual of the one-step functional equation at (16, 2)."""
    n, k, t, a = 16, 2, 1.0, 2.0
    sol = analysis.solve_chi(n, k, t, a)
    residuals = [
        analysis.functional_equation_residual(sol, x)
        for x in (0.0, a / 4.0, a / 2.0, 3.0 * a / 4.0)
    ]
    worst = max(residuals)
    return CheckResult(
        name="functional-equation-residual",
        passed=worst <= 1e-6,
        expected="chi solves its functional equation",
        actual=f"worst residual {worst:.2e} at (n=16, k=2, t=1)",
        tolerance="1e-6",
    )


def check_root_asymptotics() -> CheckResult:
    """Decay of the root expansions along n = 1e2, 1e4, 1e6."""
    grid = (10**2, 10**4, 10**6)
    rep2 = analysis.asymptotic_root_check(2, 1.0, grid)
    rep3 = analysis.asymptotic_root_check(3, 1.0, grid)
    lead_at_1e6 = rep3.leading_errors[-1]
    ok = rep2.ok and rep3.ok and lead_at_1e6 <= 0.05
    return CheckResult(
        name="asymptotic-root-decay",
        passed=ok,
        expected="errors decrease; leading error at n=1e6 <= 0.05 (k=3, t=1)",
        actual=(f"k=2 lead {['%.2e' % e for e in rep2.leading_errors]}, "
                f"k=3 lead at 1e6 = {lead_at_1e6:.2e}"),
        tolerance="strict decrease, 10/sqrt(n_last), 0.05",
    )


def check_phi_limit_trend() -> CheckResult:
    """|phi - exp(t^2 (x-a)/2)| strictly decreasing over n = 16, 32, 64."""
    k, t, x, a = 2, 1.0, 0.0, 2.0
    limit = cmath.exp(t * t * (x - a) / 2.0)
    errs = []
    for n in (16, 32, 64):
        sol = analysis.solve_chi(n, k, t, a)
        errs.append(abs(analysis.evaluate_phi(sol, x) - limit))
    ok = errs[0] > errs[1] > errs[2]
    return CheckResult(
        name="phi-limit-trend",
        passed=ok,
        expected="strictly decreasing distance to the Gaussian limit",
        actual="errors " + ", ".join(f"{e:.4f}" for e in errs),
        tolerance="monotone over n = 16, 32, 64",
    )


QUICK_CHECKS: list[Callable[[], CheckResult]] = [
    check_ode_duality,
    check_root_residuals,
    check_k1_closed_forms,
    check_derivative_identities,
]

FULL_CHECKS: list[Callable[[], CheckResult]] = [
    check_functional_equation,
    check_root_asymptotics,
    check_phi_limit_trend,
    check_chi_vs_monte_carlo,
]


def run_checks(
    level: str = "quick",
    workers: int = 1,
    report: Optional[Callable[[str], None]] = print,
) -> list[CheckResult]:
    """Run the verification suite; ``level`` is 'quick' or 'full'."""
    if level not in ("quick", "full"):
        raise ValueError(f"verification level must be 'quick' or 'full', got {level!r}")
    checks: list[Callable] = list(QUICK_CHECKS)
    if level == "full":
        checks += FULL_CHECKS
    results = []
    for fn in checks:
        start = time.perf_counter()
        if fn is check_chi_vs_monte_carlo:
            res = fn(workers=workers)
        else:
            res = fn()
        res.seconds = time.perf_counter() - start
        results.append(res)
        if report is not None:
            report(res.line())
    return results
