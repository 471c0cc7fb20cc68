"""Analytic verification engine for the splitting estimator's Gaussian limit.

The estimator's characteristic function can be reconstructed exactly at
finite (n, k) in the exponential case: the auxiliary function

    chi(t, x) = E[exp(i t sqrt(n) log p_hat(x))]

solves a linear constant-coefficient ODE of order k in x.  This module
rebuilds that solution numerically -- ODE coefficients by a double
recursion and by polynomial expansion, characteristic roots by simultaneous
iteration, boundary derivatives at x = a from an exact polynomial
representation of the one-step stopping term Theta, and the expansion
coefficients from a Vandermonde-type linear system -- and exposes the
asymptotic variance, confidence intervals and cost model used to interpret
simulation output.

Everything here is a pure function of its arguments; nothing draws random
numbers.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .sampling import DomainError, order_statistic_pdf

__all__ = [
    "ConvergenceFailure",
    "SingularSystem",
    "asymptotic_variance",
    "confidence_interval",
    "CostComparison",
    "cost_comparison",
    "OdeCoefficients",
    "ode_coefficients",
    "ode_coefficients_recursion",
    "ode_coefficients_expansion",
    "characteristic_roots",
    "RootAsymptoticsReport",
    "asymptotic_root_check",
    "ThetaFunction",
    "theta_function",
    "CharacteristicSolution",
    "solve_chi",
    "evaluate_chi",
    "evaluate_phi",
    "functional_equation_residual",
    "K1ExactLaw",
    "k1_exact_law",
    "DerivativeIdentityReport",
    "derivative_identity_check",
]

_ROOT_RESIDUAL_TOL = 1e-10
_ROOT_SEPARATION_TOL = 1e-8
_MAX_ROOT_ITERATIONS = 200


class ConvergenceFailure(RuntimeError):
    """The simultaneous root iteration failed to reach its residual target."""


class SingularSystem(RuntimeError):
    """Characteristic roots coincide; the expansion coefficients are not
    determined (root distinctness is only guaranteed for n large enough)."""


# ---------------------------------------------------------------------------
# Limit variance, confidence intervals, cost model


def asymptotic_variance(p: float) -> float:
    """Variance of the Gaussian limit of sqrt(n) (p_hat - p): -p^2 log(p).

    Independent of the batch size k.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    return -p * p * math.log(p)


def confidence_interval(
    p_hat: float, n: int, alpha: float, p_true: float | None = None
) -> tuple[float, float]:
    """Asymptotic two-sided confidence interval at level 1 - alpha.

    Centered at ``p_hat`` with half-width r_alpha sqrt(-p^2 log p) / sqrt(n).
    The plug-in variant (default) uses p = p_hat in the width; passing
    ``p_true`` gives the oracle variant with the width evaluated at the
    true probability, as in the asymptotic statement.
    """
    if not 0.0 < p_hat < 1.0:
        raise DomainError(f"p_hat must lie in (0, 1), got {p_hat}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    from .stats import normal_quantile

    p_width = p_hat if p_true is None else p_true
    r = normal_quantile(1.0 - alpha / 2.0)
    half = r * math.sqrt(asymptotic_variance(p_width) / n)
    return p_hat - half, p_hat + half


@dataclass(frozen=True)
class CostComparison:
    """Sample sizes needed for tolerance epsilon: splitting vs crude MC."""

    n_ams: float
    n_mc: float


def cost_comparison(p: float, epsilon: float, alpha: float) -> CostComparison:
    """Replica counts achieving |error| <= epsilon at confidence 1 - alpha.

    n_ams = -p^2 log(p) r^2 / eps^2 for one splitting run, against
    n_mc = p (1 - p) r^2 / eps^2 for crude Monte Carlo.  Since
    p^2 log(p) = o(p) as p -> 0, the ratio n_ams / n_mc vanishes in the
    rare-event regime.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if not epsilon > 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    from .stats import normal_quantile

    r2 = normal_quantile(1.0 - alpha / 2.0) ** 2
    return CostComparison(
        n_ams=asymptotic_variance(p) * r2 / epsilon**2,
        n_mc=p * (1.0 - p) * r2 / epsilon**2,
    )


# ---------------------------------------------------------------------------
# ODE coefficients


@dataclass(frozen=True)
class OdeCoefficients:
    """Coefficients of the order-k ODE satisfied by chi(t, .).

    mu = (-1)^k n (n-1) ... (n-k+1) multiplies the zero-order forcing term;
    r[m] are the lower-order coefficients, tied to the falling factorial by
    lambda^k - sum_m r[m] lambda^m = (lambda - n) ... (lambda - n + k - 1).
    """

    n: int
    k: int
    mu: float
    r: np.ndarray


def _check_ode_range(n: int, k: int) -> None:
    if not 1 <= k <= n - 2:
        raise DomainError(f"ODE coefficients need 1 <= k <= n-2, got k={k}, n={n}")


def ode_coefficients_recursion(n: int, k: int) -> tuple[int, list[int]]:
    """(mu, r) by the level-by-level differentiation recursion, exact integers.

    Level l carries coefficients r_{m,l} (m < l) plus the convention
    r_{l,l} = -1; stepping l -> l+1 applies
    r_{m,l+1} = r_{m-1,l} - (n-k+l+1) r_{m,l} and mu_{l+1} = -(n-k+l+1) mu_l.
    """
    _check_ode_range(n, k)
    mu = 1
    r: list[int] = []

    def r_hat(m: int, level: int) -> int:
        if m == level:
            return -1
        if 0 <= m < level:
            return r[m]
        return 0

    for level in range(k):
        c = n - k + level + 1
        r = [r_hat(m - 1, level) - c * r_hat(m, level) for m in range(level + 1)]
        mu = -c * mu
    return mu, r


def ode_coefficients_expansion(n: int, k: int) -> tuple[int, list[int]]:
    """(mu, r) by direct expansion of (lambda-n)...(lambda-n+k-1), exact integers."""
    _check_ode_range(n, k)
    poly = [1]  # coefficients of the expanded falling factorial, low to high
    for j in range(k):
        root = n - j
        grown = [0] * (len(poly) + 1)
        for i, c in enumerate(poly):
            grown[i + 1] += c
            grown[i] -= c * root
        poly = grown
    mu = (-1) ** k * math.prod(n - j for j in range(k))
    return mu, [-poly[m] for m in range(k)]


def ode_coefficients(n: int, k: int) -> OdeCoefficients:
    """ODE coefficients, cross-checked between the two independent routes.

    Both routes run in exact integer arithmetic and must agree identically;
    a mismatch would indicate a broken recursion and raises.
    """
    mu_rec, r_rec = ode_coefficients_recursion(n, k)
    mu_exp, r_exp = ode_coefficients_expansion(n, k)
    if mu_rec != mu_exp or r_rec != r_exp:
        raise ArithmeticError(
            f"coefficient recursion and polynomial expansion disagree at (n={n}, k={k})"
        )
    return OdeCoefficients(n=n, k=k, mu=float(mu_rec), r=np.array(r_rec, dtype=float))


# ---------------------------------------------------------------------------
# Characteristic roots


def _phase_factor(n: int, k: int, t: float) -> complex:
    return cmath.exp(1j * t * math.sqrt(n) * math.log1p(-k / n))


def _scaled_seed_targets(n: int, k: int, t: float) -> np.ndarray:
    """Limit positions of the scaled roots lambda/n, used as warm starts."""
    seeds = np.empty(k, dtype=complex)
    seeds[0] = (1j * t * math.sqrt(n) + t * t / 2.0) / n
    for l in range(2, k + 1):
        seeds[l - 1] = 1.0 - cmath.exp(2j * math.pi * (l - 1) / k)
    return seeds


def characteristic_roots(n: int, k: int, t: float) -> np.ndarray:
    """All k roots of the characteristic equation of the order-k ODE.

    Solves (n-lambda)...(n-k+1-lambda) / (n...(n-k+1)) = e^{i t sqrt(n)
    log(1-k/n)} by simultaneous (Durand-Kerner) iteration on the scaled
    variable lambda/n, warm-started at the known large-n limits; for k = 1
    the closed form lambda = n (1 - e^{i t sqrt(n) log(1-1/n)}) is returned
    directly.  Roots come back ordered so that index 0 tracks the root with
    vanishing scaled limit and index l-1 tracks n (1 - e^{2 pi i (l-1)/k}).

    Raises :class:`ConvergenceFailure` if some residual still exceeds
    1e-10 after 200 sweeps.
    """
    if n < 3 or not 1 <= k <= n - 2:
        raise DomainError(f"need n >= 3 and 1 <= k <= n-2, got n={n}, k={k}")
    target = _phase_factor(n, k, t)
    if k == 1:
        return np.array([n * (1.0 - target)])

    c = np.array([n / (n - j) for j in range(k)], dtype=complex)
    lead = np.prod(-c)  # leading coefficient of prod_j (1 - z c_j) in z
    targets = _scaled_seed_targets(n, k, t)
    # tiny deterministic jitter breaks symmetric stalls of the iteration
    z = targets * (1.0 + 1e-6) + 1e-8 * (1.0 + 1.0j)

    def residual_poly(v: complex) -> complex:
        out = 1.0 + 0.0j
        for cj in c:
            out *= 1.0 - v * cj
        return out - target

    converged = False
    for _ in range(_MAX_ROOT_ITERATIONS):
        moved = 0.0
        for i in range(k):
            denom = lead
            for j in range(k):
                if j != i:
                    denom *= z[i] - z[j]
            step = residual_poly(z[i]) / denom
            z[i] -= step
            moved = max(moved, abs(step))
        if moved < 1e-15:
            converged = True
            break
    residuals = np.abs([residual_poly(v) for v in z])
    if residuals.max() > _ROOT_RESIDUAL_TOL:
        raise ConvergenceFailure(
            f"root residual {residuals.max():.3e} > {_ROOT_RESIDUAL_TOL} "
            f"at (n={n}, k={k}, t={t}), converged={converged}"
        )

    # relabel the converged roots by their limit targets (greedy best match)
    dist = np.abs(z[None, :] - targets[:, None])
    order = np.full(k, -1)
    taken = np.zeros(k, dtype=bool)
    for _ in range(k):
        flat = np.argmin(np.where(taken[None, :] | (order != -1)[:, None], np.inf, dist))
        li, ri = divmod(int(flat), k)
        order[li] = ri
        taken[ri] = True
    return z[order] * n


@dataclass
class RootAsymptoticsReport:
    """Deviation of computed roots from their large-n expansions.

    ``leading_errors[i]`` is |lambda^1 - i t sqrt(n) - t^2/2| at n_grid[i];
    ``bulk_errors[i]`` is the worst |lambda^l / n - (1 - e^{2 pi i (l-1)/k})|
    over l >= 2 (empty for k = 1).  Both sequences must decrease along the
    grid and end below 10 / sqrt(n_last).
    """

    k: int
    t: float
    n_grid: tuple
    leading_errors: list
    bulk_errors: list
    threshold: float
    leading_decreasing: bool
    bulk_decreasing: bool
    leading_below: bool
    bulk_below: bool

    @property
    def ok(self) -> bool:
        return (self.leading_decreasing and self.bulk_decreasing
                and self.leading_below and self.bulk_below)


def asymptotic_root_check(
    k: int, t: float, n_grid: Sequence[int]
) -> RootAsymptoticsReport:
    """Check the root expansions lambda^1 ~ i t sqrt(n) + t^2/2 and
    lambda^l ~ n (1 - e^{2 pi i (l-1)/k}) along an increasing n grid."""
    n_grid = tuple(int(v) for v in n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise DomainError(f"n_grid must be strictly increasing, got {n_grid}")
    if any(v < k + 2 for v in n_grid):
        raise DomainError(f"every n must be >= k + 2 = {k + 2}, got {n_grid}")

    leading, bulk = [], []
    for n in n_grid:
        roots = characteristic_roots(n, k, t)
        leading.append(abs(roots[0] - (1j * t * math.sqrt(n) + t * t / 2.0)))
        if k >= 2:
            limits = np.array(
                [1.0 - cmath.exp(2j * math.pi * (l - 1) / k) for l in range(2, k + 1)]
            )
            bulk.append(float(np.max(np.abs(roots[1:] / n - limits))))

    def strictly_decreasing(seq):
        return all(b < a for a, b in zip(seq, seq[1:]))

    threshold = 10.0 / math.sqrt(n_grid[-1])
    return RootAsymptoticsReport(
        k=k,
        t=t,
        n_grid=n_grid,
        leading_errors=leading,
        bulk_errors=bulk,
        threshold=threshold,
        leading_decreasing=strictly_decreasing(leading),
        bulk_decreasing=strictly_decreasing(bulk) if bulk else True,
        leading_below=leading[-1] <= threshold,
        bulk_below=(bulk[-1] <= threshold) if bulk else True,
    )


# ---------------------------------------------------------------------------
# The stopping term Theta and the characteristic solution


class ThetaFunction:
    """One-step stopping term of the functional equation, as a polynomial.

    Theta(t, x) = sum_{l=0}^{k-1} e^{i t sqrt(n) log(1-l/n)} C(n,l)
                  (1-u)^l u^{n-l}         with u = e^{-(a-x)};

    the l-th summand is the probability that exactly l replicas of the
    initial conditional sample fall below the threshold.  Expanding the
    powers of (1 - u) gives an exact integer-coefficient polynomial in u
    per l, on which d/dx = u d/du acts exactly: derivatives at x = a reduce
    to integer sums, free of the cancellation that plagues the expanded
    complex polynomial near u = 1.  The guard n <= 64 keeps the binomial
    magnitudes inside the exact verification regime.
    """

    def __init__(self, n: int, k: int, t: float, a: float):
        if n > 64:
            raise DomainError(f"exact polynomial representation needs n <= 64, got {n}")
        if not 1 <= k <= n - 1:
            raise DomainError(f"need 1 <= k <= n-1, got k={k}, n={n}")
        self.n = n
        self.k = k
        self.t = t
        self.a = a
        self.phases = np.array(
            [cmath.exp(1j * t * math.sqrt(n) * math.log1p(-l / n)) for l in range(k)]
        )
        # integer expansions C(n,l) (1-u)^l u^{n-l}, exponent -> coefficient
        self._int_polys: list[dict[int, int]] = []
        for l in range(k):
            cnl = comb(n, l)
            self._int_polys.append(
                {n - l + i: cnl * comb(l, i) * (-1) ** i for i in range(l + 1)}
            )

    @property
    def coefficients(self) -> np.ndarray:
        """Complex coefficients of Theta as a polynomial in u (degree <= n)."""
        coeffs = np.zeros(self.n + 1, dtype=complex)
        for phase, poly in zip(self.phases, self._int_polys):
            for power, c in poly.items():
                coeffs[power] += phase * c
        return coeffs

    def evaluate(self, x: float) -> complex:
        """Theta(t, x) via the cancellation-free factored binomial form."""
        u = math.exp(x - self.a)
        one_minus_u = -math.expm1(x - self.a)
        total = 0.0 + 0.0j
        for l in range(self.k):
            total += (
                self.phases[l] * comb(self.n, l) * one_minus_u**l * u ** (self.n - l)
            )
        return total

    def evaluate_expanded(self, x: float) -> complex:
        """Horner evaluation of the expanded polynomial (for cross-checks;
        loses accuracy near u = 1 at large n, unlike :meth:`evaluate`)."""
        u = math.exp(x - self.a)
        total = 0.0 + 0.0j
        for c in self.coefficients[::-1]:
            total = total * u + c
        return total

    def derivative_at_a(self, m: int) -> complex:
        """Exact m-th derivative d^m Theta / dx^m at x = a.

        (u d/du)^m maps u^p to p^m u^p, so at u = 1 the value per l is the
        integer sum C(n,l) sum_i C(l,i) (-1)^i (n-l+i)^m, evaluated in
        arbitrary precision before attaching the unit-modulus phase.
        """
        if m < 0:
            raise DomainError(f"derivative order must be >= 0, got {m}")
        total = 0.0 + 0.0j
        for phase, poly in zip(self.phases, self._int_polys):
            inner = sum(c * power**m for power, c in poly.items())
            total += phase * inner
        return total


def theta_function(n: int, k: int, t: float, a: float) -> ThetaFunction:
    """Build the stopping term Theta(t, .) in its exact polynomial form."""
    return ThetaFunction(n, k, t, a)


@dataclass
class CharacteristicSolution:
    """chi(t, .) = sum_l eta_l exp(lambda_l (x - a)) at fixed (n, k, t, a).

    ``roots`` solve the characteristic equation (residual <= 1e-10);
    ``coeffs`` solve the boundary-derivative system, so sum(coeffs) = 1.
    """

    n: int
    k: int
    t: float
    a: float
    roots: np.ndarray
    coeffs: np.ndarray

    def chi(self, x: float) -> complex:
        return complex(np.sum(self.coeffs * np.exp(self.roots * (x - self.a))))


def solve_chi(n: int, k: int, t: float, a: float) -> CharacteristicSolution:
    """Reconstruct chi(t, .) from roots and exact boundary derivatives.

    The boundary data at x = a are chi = 1 and, for 1 <= m <= k-1,
    d^m chi/dx^m = d^m Theta/dx^m (exact).  The expansion coefficients
    solve the k x k Vandermonde-type system in the scaled roots lambda/n
    (partial-pivot elimination); nearly coincident roots raise
    :class:`SingularSystem`.
    """
    if not 3 <= n <= 64:
        raise DomainError(f"solve_chi operates in the exact regime 3 <= n <= 64, got {n}")
    if not 1 <= k <= n - 2:
        raise DomainError(f"need 1 <= k <= n-2, got k={k}, n={n}")
    roots = characteristic_roots(n, k, t)
    if k >= 2:
        sep = min(
            abs(roots[i] - roots[j]) for i in range(k) for j in range(i + 1, k)
        )
        if sep < _ROOT_SEPARATION_TOL:
            raise SingularSystem(
                f"characteristic roots within {sep:.3e} at (n={n}, k={k}, t={t})"
            )
    theta = ThetaFunction(n, k, t, a)
    scaled = roots / n
    system = np.vander(scaled, k, increasing=True).T  # row m: scaled^m
    rhs = np.empty(k, dtype=complex)
    rhs[0] = 1.0
    for m in range(1, k):
        rhs[m] = theta.derivative_at_a(m) / float(n) ** m
    coeffs = np.linalg.solve(system, rhs)
    defect = np.max(np.abs(system @ coeffs - rhs))
    if not defect < 1e-6:
        raise SingularSystem(
            f"boundary system solved with defect {defect:.3e} at (n={n}, k={k}, t={t})"
        )
    return CharacteristicSolution(n=n, k=k, t=t, a=a, roots=roots, coeffs=coeffs)


def evaluate_chi(sol: CharacteristicSolution, x: float) -> complex:
    """chi(t, x) = E[exp(i t sqrt(n) log p_hat(x))]."""
    return sol.chi(x)


def evaluate_phi(sol: CharacteristicSolution, x: float) -> complex:
    """phi(t, x) = e^{-i t sqrt(n) (x - a)} chi(t, x).

    The characteristic function of the centred log-estimator; as n grows it
    approaches exp(t^2 (x - a) / 2), which is the Gaussian limit behind
    the central limit theorem.
    """
    if not 0.0 <= x <= sol.a:
        raise DomainError(f"x must lie in [0, a] = [0, {sol.a}], got {x}")
    phase = cmath.exp(-1j * sol.t * math.sqrt(sol.n) * (x - sol.a))
    return phase * sol.chi(x)


def functional_equation_residual(
    sol: CharacteristicSolution, x: float, quad_epsabs: float = 1e-11
) -> float:
    """Residual of the one-step functional equation at ``x``.

    chi(t, x) should equal
        e^{i t sqrt(n) log(1-k/n)} int_x^a chi(t, y) f_{n,k}(y; x) dy
        + Theta(t, x);
    the integral is evaluated by adaptive Gauss-Kronrod quadrature.  The
    returned residual is the modulus of the difference.
    """
    n, k, t, a = sol.n, sol.k, sol.t, sol.a
    if not 0.0 <= x <= a:
        raise DomainError(f"x must lie in [0, a] = [0, {a}], got {x}")
    theta = ThetaFunction(n, k, t, a)
    integral = quad(
        lambda y: sol.chi(y) * order_statistic_pdf(n, k, y, x),
        x,
        a,
        complex_func=True,
        epsabs=quad_epsabs,
        epsrel=quad_epsabs,
        limit=200,
    )[0]
    rhs = _phase_factor(n, k, t) * integral + theta.evaluate(x)
    return abs(sol.chi(x) - rhs)


# ---------------------------------------------------------------------------
# The explicit k = 1 law


@dataclass(frozen=True)
class K1ExactLaw:
    """Exact law of the k = 1 estimator in the exponential case.

    The iteration count J is Poisson with rate n a (the level process is a
    Poisson process of intensity n); the corrector is identically 1, so
    p_hat = (1 - 1/n)^J and its moments follow from the Poisson generating
    function.
    """

    n: int
    a: float
    mean_phat: float
    var_phat: float
    j_rate: float


def k1_exact_law(n: int, a: float) -> K1ExactLaw:
    """Moments of p_hat^{n,1} and the Poisson law of J, in closed form.

    E[p_hat] = e^{-a} = p exactly (unbiasedness);
    Var[p_hat] = p^2 (e^{a/n} - 1), so n Var -> a e^{-2a} = -p^2 log p.
    """
    if not a > 0.0:
        raise DomainError(f"threshold a must be positive, got {a}")
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    p = math.exp(-a)
    return K1ExactLaw(
        n=n,
        a=a,
        mean_phat=p,
        var_phat=p * p * math.expm1(a / n),
        j_rate=n * a,
    )


# ---------------------------------------------------------------------------
# Order-statistic derivative identities


@dataclass(frozen=True)
class DerivativeIdentityReport:
    """Finite-difference check of d/dx f_{n,k}(y; x) against its closed form."""

    n: int
    k: int
    y: float
    x: float
    lhs: float
    rhs: float
    rel_error: float
    passed: bool


def derivative_identity_check(
    n: int, k: int, y: float, x: float, rel_tol: float = 1e-5
) -> DerivativeIdentityReport:
    """Verify the shift-derivative identity of the order-statistic density.

    d/dx f_{n,1}(y; x) = n f_{n,1}(y; x) and, for k >= 2,
    d/dx f_{n,k}(y; x) = (n-k+1) (f_{n,k}(y; x) - f_{n,k-1}(y; x)).
    The left side is a central finite difference with step
    1e-6 max(1, |x|); agreement is measured relatively.
    """
    if not 1 <= k <= n - 1:
        raise DomainError(f"need 1 <= k <= n-1, got k={k}, n={n}")
    if y <= x:
        return DerivativeIdentityReport(n, k, y, x, 0.0, 0.0, 0.0, True)
    h = 1e-6 * max(1.0, abs(x))
    lhs = (order_statistic_pdf(n, k, y, x + h) - order_statistic_pdf(n, k, y, x - h)) / (2 * h)
    if k == 1:
        rhs = n * order_statistic_pdf(n, 1, y, x)
    else:
        rhs = (n - k + 1) * (
            order_statistic_pdf(n, k, y, x) - order_statistic_pdf(n, k - 1, y, x)
        )
    scale = max(abs(lhs), abs(rhs), 1e-300)
    rel = abs(lhs - rhs) / scale
    return DerivativeIdentityReport(n, k, y, x, lhs, rhs, rel, rel <= rel_tol)
