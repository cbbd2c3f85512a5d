"""Lyapunov budgets, per-layer spectral caps and the cascade certificate.

A layer budget ``(delta, nu)`` describes the incremental dissipativity of one
layer: ``du.dy - delta*|dy|^2 - nu*|du|^2 >= 0``. A weight matrix whose
spectral norm stays below ``1/delta^2 + 2|nu|/delta`` realises it, and a
chain of such layers realises a global ``(delta, nu)`` when the cascade
matrix built here is negative quasi-dominant.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import (BudgetError, ComplexSlopesError, DegenerateConeError, NumericError,
                     PlanningError, SizeError)

PRODUCT_LIMIT = 0.25
QD_TOL = 1e-9


@dataclass(frozen=True)
class LayerBudget:
    delta: float
    nu: float

    @property
    def product(self):
        return self.delta * self.nu


@dataclass(frozen=True)
class GlobalBudget:
    delta: float
    nu: float

    @property
    def gain(self):
        if self.delta <= 0:
            raise BudgetError("gain is only finite for delta > 0")
        return 1.0 / self.delta

    @property
    def coefficient(self):
        """``1/delta^2 + 2 nu/delta``: squared output deviation per squared input deviation."""
        return 1.0 / self.delta ** 2 + 2.0 * self.nu / self.delta


def as_budgets(pairs):
    return [b if isinstance(b, LayerBudget) else LayerBudget(float(b[0]), float(b[1])) for b in pairs]


def spectral_cap(b):
    if b.delta <= 0:
        raise BudgetError(f"spectral cap needs delta > 0, got {b.delta}")
    return 1.0 / b.delta ** 2 + 2.0 * abs(b.nu) / b.delta


def build_cascade_matrix(budgets, g):
    """The symmetric (n+1)x(n+1) cascade matrix ``A`` for ``n >= 3`` layers.

    Diagonal ``[nu - nu_1, -delta_1 - nu_2, ..., -delta_{n-1} - nu_n, delta - delta_n]``,
    ``1/2`` on the first off-diagonals and ``-1/2`` in the two corners.
    """
    budgets = as_budgets(budgets)
    n = len(budgets)
    if n <= 2:
        raise SizeError(f"the cascade matrix needs more than 2 layers, got {n}")
    A = np.zeros((n + 1, n + 1))
    A[0, 0] = g.nu - budgets[0].nu
    for i in range(1, n):
        A[i, i] = -budgets[i - 1].delta - budgets[i].nu
    A[n, n] = g.delta - budgets[-1].delta
    idx = np.arange(n)
    A[idx, idx + 1] = A[idx + 1, idx] = 0.5
    A[0, n] = A[n, 0] = -0.5
    return A


def comparison_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SizeError(f"comparison matrix needs a square input, got {M.shape}")
    C = -np.abs(M)
    np.fill_diagonal(C, np.diag(M))
    return C


@dataclass
class QuasiDominance:
    passed: bool
    witness: Optional[np.ndarray] = None
    note: str = ""

    def __bool__(self):
        return self.passed


def is_quasi_dominant(M, tol=QD_TOL):
    """Row quasi-dominance: is there a positive ``p`` with ``m_ii p_i > sum_j |m_ij| p_j``?

    Decided by testing whether the comparison matrix is a nonsingular
    M-matrix; on success the witness is ``p = C^{-1} 1``.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SizeError(f"quasi-dominance needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    d = np.diag(M)
    if np.any(d <= tol):
        i = int(np.argmin(d))
        return QuasiDominance(False, note=f"diagonal entry {i} = {d[i]:.6g} is not positive")
    C = comparison_matrix(M)
    try:
        Cinv = np.linalg.inv(C)
    except np.linalg.LinAlgError:
        return QuasiDominance(False, note="comparison matrix is singular")
    if not np.all(np.isfinite(Cinv)):
        return QuasiDominance(False, note="comparison matrix is numerically singular")
    scale = max(1.0, float(np.abs(Cinv).max()))
    if Cinv.min() < -tol * scale:
        return QuasiDominance(False, note=f"comparison matrix inverse has a negative entry ({Cinv.min():.6g})")
    p = Cinv @ np.ones(len(M))
    if np.any(p <= 0) or np.any(C @ p <= 0):
        return QuasiDominance(False, note="no strictly dominant positive scaling found")
    return QuasiDominance(True, witness=p)


@dataclass(frozen=True)
class Violation:
    constraint: str
    layer: Optional[int]
    detail: str

    def __str__(self):
        where = f" (layer {self.layer})" if self.layer is not None else ""
        return f"{self.constraint}{where}: {self.detail}"


def check_planning_constraints(budgets, g):
    """List every violated planning constraint; an empty list means the plan is admissible.

    Checks ``delta_l > 0``, ``delta_n > delta > 0``, ``nu_1 > nu > 0``,
    ``delta_l + nu_{l+1} > 1`` and ``delta_l * nu_l <= 0.25``. Layers are 1-based.
    """
    budgets = as_budgets(budgets)
    if not budgets:
        raise SizeError("need at least one layer budget")
    out = []
    n = len(budgets)
    for l, b in enumerate(budgets, 1):
        if not b.delta > 0:
            out.append(Violation("delta_l > 0", l, f"delta_{l} = {b.delta:g}"))
        if b.product > PRODUCT_LIMIT:
            out.append(Violation("delta*nu <= 0.25", l, f"delta_{l}*nu_{l} = {b.product:.4g}"))
    if not g.delta > 0:
        out.append(Violation("delta > 0", None, f"global delta = {g.delta:g}"))
    if not budgets[-1].delta > g.delta:
        out.append(Violation("delta_n > delta", n, f"delta_{n} = {budgets[-1].delta:g} <= delta = {g.delta:g}"))
    if not g.nu > 0:
        out.append(Violation("nu > 0", None, f"global nu = {g.nu:g}"))
    if not budgets[0].nu > g.nu:
        out.append(Violation("nu_1 > nu", 1, f"nu_1 = {budgets[0].nu:g} <= nu = {g.nu:g}"))
    for l in range(1, n):
        s = budgets[l - 1].delta + budgets[l].nu
        if not s > 1:
            out.append(Violation("delta_l + nu_{l+1} > 1", l, f"delta_{l} + nu_{l + 1} = {s:.4g}"))
    return out


@dataclass
class CascadeCertificate:
    budgets: List[LayerBudget]
    global_budget: GlobalBudget
    A: np.ndarray
    quasi_dominant: QuasiDominance
    planning_violations: List[Violation]
    caps: List[Optional[float]]
    coefficient: float
    strict: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self):
        if self.planning_violations:
            return False
        return bool(self.quasi_dominant) if self.strict else True

    @property
    def status(self):
        return "pass" if self.passed else "fail"

    def summary(self):
        return {
            "status": self.status,
            "strict": self.strict,
            "budgets": [[b.delta, b.nu] for b in self.budgets],
            "global": {"delta": self.global_budget.delta, "nu": self.global_budget.nu},
            "caps": self.caps,
            "coefficient": self.coefficient,
            "neg_A": (-self.A).tolist(),
            "neg_A_frobenius": float(np.linalg.norm(self.A)),
            "quasi_dominant": self.quasi_dominant.passed,
            "quasi_dominance_witness": (None if self.quasi_dominant.witness is None
                                        else self.quasi_dominant.witness.tolist()),
            "quasi_dominance_note": self.quasi_dominant.note,
            "planning_violations": [str(v) for v in self.planning_violations],
            "notes": list(self.notes),
        }


def is_positive_definite(M):
    """Cholesky test on the symmetric part."""
    S = 0.5 * (np.asarray(M, dtype=np.float64) + np.asarray(M, dtype=np.float64).T)
    try:
        np.linalg.cholesky(S)
        return True
    except np.linalg.LinAlgError:
        return False


def certify(budgets, g, strict=False):
    budgets = as_budgets(budgets)
    A = build_cascade_matrix(budgets, g)
    negA = -A
    qd = is_quasi_dominant(negA)
    violations = check_planning_constraints(budgets, g)
    caps = [spectral_cap(b) if b.delta > 0 else None for b in budgets]
    coeff = g.coefficient if g.delta > 0 else float("nan")

    notes = []
    if not qd:
        pd = is_positive_definite(negA)
        lam = float(np.linalg.eigvalsh(negA).min())
        notes.append(f"-A is not quasi-dominant ({qd.note}); "
                     f"-A is {'' if pd else 'not '}positive definite (min eigenvalue {lam:.4g})")
        if not violations:
            notes.append("planning constraints hold although -A is not quasi-dominant")
    return CascadeCertificate(budgets, g, A, qd, violations, caps, coeff, strict, notes)


def _check_global(g):
    if not g.delta > 0:
        raise BudgetError(f"global delta must be positive, got {g.delta}")
    if not g.nu > 0:
        raise BudgetError(f"global nu must be positive, got {g.nu}")


def corollary_bound(g, eps):
    """Output-deviation bound ``sqrt(1/delta^2 + 2 nu/delta) * eps``."""
    _check_global(g)
    if eps < 0:
        raise BudgetError("eps must be non-negative")
    return math.sqrt(g.coefficient) * eps


def table_bound(g, eps):
    """Empirical-table variant ``sqrt((1/delta^2 + 2 nu/delta) * eps)``."""
    _check_global(g)
    if eps < 0:
        raise BudgetError("eps must be non-negative")
    return math.sqrt(g.coefficient * eps)


def residual_effective_budget(b):
    """Budget of ``u + F(u)`` given the branch budget: ``delta' = nu' = (nu + delta - 1)/(1 - 2 delta)``."""
    if not 0 < b.delta < 0.5:
        raise BudgetError(f"residual branch needs 0 < delta < 1/2, got delta = {b.delta}")
    if b.nu + b.delta < 1:
        raise BudgetError(f"residual branch needs nu + delta >= 1, got {b.nu + b.delta:.6g}")
    if b.product > PRODUCT_LIMIT:
        raise BudgetError(f"residual branch needs delta*nu <= 0.25, got {b.product:.6g}")
    x = (b.nu + b.delta - 1.0) / (1.0 - 2.0 * b.delta)
    return LayerBudget(x, x)


def conic_from_slopes(a, b):
    """Budget of the sector between slopes ``a`` and ``b``."""
    s = a + b
    if s == 0:
        raise DegenerateConeError("sector slopes sum to zero")
    return 1.0 / s, a * b / s


def slopes_from_budget(delta, nu):
    """Sector slopes ``a <= b``: the roots of ``t^2 - t/delta + nu/delta = 0``."""
    if delta == 0:
        raise DegenerateConeError("delta must be non-zero")
    p = delta * nu
    if p > PRODUCT_LIMIT:
        raise ComplexSlopesError(f"delta*nu = {p:.6g} > 0.25 gives complex slopes")
    s = 1.0 / delta
    root = abs(s) * math.sqrt(max(0.0, 1.0 - 4.0 * p))
    # larger-magnitude root first, the other from the product; avoids cancellation
    big = 0.5 * (s + math.copysign(root, s))
    small = (nu / delta) / big if big != 0 else 0.0
    return (small, big) if small <= big else (big, small)


@dataclass
class PlanningPolicy:
    kind: str = "default"
    margin_out: float = 0.08
    margin_in: float = 0.03
    slack: float = 0.005
    step: float = 0.01
    budgets: Optional[Sequence] = None


def plan_parameters(n, g, policy=None):
    """Choose per-layer budgets that satisfy every planning constraint for ``g``.

    The default policy works backward from the output layer: ``delta_n`` sits
    ``margin_out`` above the global delta with ``nu_n`` just under the
    product limit, each interior ``delta_l`` sits ``step`` above
    ``1 - nu_{l+1}``, and the first layer takes ``nu_1 = nu + margin_in``.
    """
    policy = policy or PlanningPolicy()
    if n <= 2:
        raise PlanningError(f"planning needs more than 2 layers, got {n}")
    if not g.delta > 0 or not g.nu > 0:
        raise PlanningError("global budget needs delta > 0 and nu > 0")
    if g.delta * g.nu > PRODUCT_LIMIT:
        raise PlanningError(f"global delta*nu = {g.delta * g.nu:.4g} exceeds 0.25")

    if policy.kind == "explicit":
        budgets = as_budgets(policy.budgets or [])
        if len(budgets) != n:
            raise PlanningError(f"explicit policy has {len(budgets)} budgets for {n} layers")
        bad = check_planning_constraints(budgets, g)
        if bad:
            raise PlanningError("explicit budgets violate: " + "; ".join(map(str, bad)))
        return budgets
    if policy.kind != "default":
        raise PlanningError(f"unknown planning policy {policy.kind!r}")

    deltas = [0.0] * n
    nus = [0.0] * n
    deltas[-1] = g.delta + policy.margin_out
    nus[-1] = PRODUCT_LIMIT / deltas[-1] - policy.slack
    for l in range(n - 2, 0, -1):
        deltas[l] = 1.0 - nus[l + 1] + policy.step
        if deltas[l] <= 0:
            raise PlanningError(f"interior layer {l + 1} would need delta <= 0")
        nus[l] = PRODUCT_LIMIT / deltas[l] - policy.slack
    nus[0] = g.nu + policy.margin_in
    deltas[0] = PRODUCT_LIMIT / nus[0] - policy.slack
    if deltas[0] <= 0:
        raise PlanningError(f"first layer would need delta <= 0 (nu_1 = {nus[0]:.4g})")
    if nus[-1] <= 0:
        raise PlanningError(f"last layer would need nu <= 0 (delta_n = {deltas[-1]:.4g})")

    budgets = [LayerBudget(d, v) for d, v in zip(deltas, nus)]
    bad = check_planning_constraints(budgets, g)
    if bad:
        raise PlanningError("infeasible margins, binding constraint: " + "; ".join(map(str, bad)))
    return budgets
