"""Degree-distribution design by EXIT-chart linear programming.

Two designs are produced:

* the relay code (bin-index code) at snr3: a single LP maximizing the design
  rate subject to an open chart;
* the two-level source code at (snr1, snr2): for fixed rate r and edge
  fraction mu the joint constraints are linear in (lambda1, lambda2'), so the
  largest feasible r is found by bisection on r with a scan over mu.

Rate bookkeeping uses 1 - (sum rho_i/i)/(sum lambda_i/i), which increases with
sum lambda_i/i; maximizing rate therefore maximizes that sum.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import bi_awgn_capacity
from .errors import Infeasible, LpNumericalFailure, Unbounded
from .exitchart import (
    DEFAULT_MARGIN, GRID_DECADES, GRID_POINTS, MAX_VAR_DEGREE, DegreeDistribution,
    ExitChartSet, ProbabilityGrid, combined_chart, exit_chart_set, is_open,
)
from .lp import lp_solve

MU_TOL = 1e-12
# backed-off designs: uncovered degree-2 variables per check
DEG2_LIMIT = 0.9


def design_rate(lam: DegreeDistribution, rho: DegreeDistribution) -> float:
    return 1.0 - rho.inverse_mean() / lam.inverse_mean()


def combine_distributions(d1: DegreeDistribution, d2: DegreeDistribution,
                          mu: float) -> DegreeDistribution:
    """Atomwise mu*d1 + (1 - mu)*d2."""
    if not (0.0 <= mu <= 1.0):
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if mu == 1.0:
        return d1
    if mu == 0.0:
        return d2
    acc: dict[int, float] = {}
    for d, f in d1.atoms:
        acc[d] = acc.get(d, 0.0) + mu * f
    for d, f in d2.atoms:
        acc[d] = acc.get(d, 0.0) + (1.0 - mu) * f
    atoms = [(d, f) for d, f in sorted(acc.items()) if f > 0]
    resid = 1.0 - math.fsum(f for _, f in atoms)
    k = max(range(len(atoms)), key=lambda j: atoms[j][1])
    atoms[k] = (atoms[k][0], atoms[k][1] + resid)
    return DegreeDistribution(tuple(atoms))


@dataclass(frozen=True)
class DesignSpec:
    snr1: float
    snr2: float
    snr3: float
    rho1: DegreeDistribution
    rho2prime: DegreeDistribution
    rho3: DegreeDistribution
    max_var_degree: int = MAX_VAR_DEGREE
    margin: float = DEFAULT_MARGIN
    n_points: int = GRID_POINTS
    decades: float = GRID_DECADES
    method: str = "semi"
    min_var_degree: int = 2
    # h2 must touch at least (1 + h2_excess) variables per bin-index check,
    # otherwise the stacked matrix cannot reach full rank; None disables
    h2_excess: float | None = 0.1

    def __post_init__(self):
        # snr1 == snr2 is the degenerate N2 -> 0 limit, kept for testing
        if not (self.snr1 >= self.snr2 >= 0) or self.snr3 < 0:
            raise ValueError(
                f"need snr1 >= snr2 >= 0 and snr3 >= 0, got {self.snr1}, {self.snr2}, {self.snr3}")
        if not (2 <= self.min_var_degree <= self.max_var_degree <= MAX_VAR_DEGREE):
            raise ValueError(f"variable degree range [{self.min_var_degree}, "
                             f"{self.max_var_degree}] invalid")
        if not (0.0 <= self.margin < 1.0):
            raise ValueError("margin must lie in [0, 1)")

    @property
    def degrees(self) -> list[int]:
        return list(range(self.min_var_degree, self.max_var_degree + 1))

    def grid(self, snr: float) -> ProbabilityGrid:
        return ProbabilityGrid.for_snr(snr, self.n_points, self.decades)

    def grid_descriptor(self) -> dict:
        return {"n_points": self.n_points, "decades": self.decades,
                "spacing": "log", "includes_zero": True}

    def rho2(self, mu: float) -> DegreeDistribution:
        return combine_distributions(self.rho1, self.rho2prime, mu)


class DesignCharts:
    """Lazily built chart sets for one DesignSpec.

    The snr2 charts depend on mu through rho2; they are cached per mu, and a
    single set is shared when rho1 == rho2'.
    """

    def __init__(self, spec: DesignSpec, degrees=None):
        self.spec = spec
        self.degrees = list(degrees) if degrees is not None else spec.degrees
        self._cache: dict = {}

    def _get(self, key, snr, rho):
        if key not in self._cache:
            self._cache[key] = exit_chart_set(snr, rho, self.degrees, self.spec.grid(snr),
                                              self.spec.method)
        return self._cache[key]

    def relay(self) -> ExitChartSet:
        return self._get(("snr3",), self.spec.snr3, self.spec.rho3)

    def first(self) -> ExitChartSet:
        return self._get(("snr1",), self.spec.snr1, self.spec.rho1)

    def second(self, mu: float) -> ExitChartSet:
        if self.spec.rho1 == self.spec.rho2prime:
            key = ("snr2",)
        else:
            key = ("snr2", round(float(mu), 12))
        return self._get(key, self.spec.snr2, self.spec.rho2(mu))


def _openness_rows(charts: ExitChartSet, degrees):
    """Rows sum_i lambda_i f_i(p)/p for grid points p > 0."""
    p = charts.grid.points
    live = p > 0
    return charts.matrix(degrees)[:, live].T / p[live][:, None]


def _clean(degrees, weights) -> DegreeDistribution:
    return DegreeDistribution.from_weights(degrees, weights)


# ---------------------------------------------------------------------------
# relay code

def optimize_single(spec: DesignSpec, charts: DesignCharts | None = None,
                    degrees=None):
    """Rate-maximizing lambda3 with an open chart at snr3.

    Returns ``(lambda3, r0_star)``; raises Infeasible when no distribution on
    the candidate degrees is open with the requested margin.
    """
    charts = charts if charts is not None else DesignCharts(spec)
    degrees = list(degrees) if degrees is not None else charts.degrees
    cs = charts.relay()
    rows = _openness_rows(cs, degrees)
    inv = 1.0 / np.array(degrees, dtype=float)
    try:
        res = lp_solve(-inv, A_ub=rows, b_ub=np.full(rows.shape[0], 1.0 - spec.margin),
                       A_eq=np.ones((1, len(degrees))), b_eq=[1.0])
    except Infeasible as exc:
        raise Infeasible(f"no open relay-code distribution at snr3={spec.snr3:.6g} "
                         f"on degrees {degrees[0]}..{degrees[-1]}: {exc}") from exc
    lam3 = _clean(degrees, res.x)
    r0 = design_rate(lam3, spec.rho3)
    return lam3, r0


def max_margin_single(spec: DesignSpec, rate: float, charts: DesignCharts | None = None,
                      deg2_limit: float | None = None):
    """lambda3 of design rate >= `rate` whose chart sits furthest below the diagonal.

    Maximizes delta subject to sum_i lambda_i f_i(p)/p + delta <= 1. Used for
    backed-off designs. deg2_limit = kappa keeps the degree-2 variables at
    most kappa times the check count.
    """
    charts = charts if charts is not None else DesignCharts(spec)
    degrees = charts.degrees
    cs = charts.relay()
    rows = _openness_rows(cs, degrees)
    inv = 1.0 / np.array(degrees, dtype=float)
    nd = len(degrees)
    if rate >= 1.0:
        raise Infeasible("rate must be below 1")
    # variables: lambda (nd), delta (1)
    A_ub = np.hstack([rows, np.ones((rows.shape[0], 1))])
    b_ub = np.ones(rows.shape[0])
    floor = np.concatenate([-inv, [0.0]])[None, :]
    A_ub = np.vstack([A_ub, floor, np.eye(1, nd + 1, nd)])
    b_ub = np.concatenate([b_ub, [-spec.rho3.inverse_mean() / (1.0 - rate)], [1.0]])
    if deg2_limit is not None and 2 in degrees:
        row = np.zeros((1, nd + 1))
        row[0, degrees.index(2)] = 1.0
        A_ub = np.vstack([A_ub, row])
        b_ub = np.concatenate([b_ub, [2.0 * deg2_limit * spec.rho3.inverse_mean()]])
    A_eq = np.concatenate([np.ones(nd), [0.0]])[None, :]
    c = np.zeros(nd + 1)
    c[-1] = -1.0
    res = lp_solve(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0])
    return _clean(degrees, res.x[:nd]), float(res.x[-1])


# ---------------------------------------------------------------------------
# two-level source code

@dataclass(frozen=True)
class TwoLevelDesign:
    lambda1: DegreeDistribution
    lambda2prime: DegreeDistribution
    lambda2: DegreeDistribution
    lambda3: DegreeDistribution
    mu: float
    r: float
    r0_star: float
    rho1: DegreeDistribution
    rho2prime: DegreeDistribution
    rho3: DegreeDistribution
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def rho2(self) -> DegreeDistribution:
        return combine_distributions(self.rho1, self.rho2prime, self.mu)

    def rate_slacks(self) -> tuple[float, float]:
        """(design rate of h1 - r, design rate of stacked code + r0* - r)."""
        return (design_rate(self.lambda1, self.rho1) - self.r,
                design_rate(self.lambda2, self.rho2) + self.r0_star - self.r)

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1.to_dict(),
            "lambda2prime": self.lambda2prime.to_dict(),
            "lambda2": self.lambda2.to_dict(),
            "lambda3": self.lambda3.to_dict(),
            "rho1": self.rho1.to_dict(),
            "rho2prime": self.rho2prime.to_dict(),
            "rho2": self.rho2.to_dict(),
            "rho3": self.rho3.to_dict(),
            "mu": self.mu,
            "r": self.r,
            "r0_star": self.r0_star,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "TwoLevelDesign":
        dd = DegreeDistribution.from_dict
        return cls(
            lambda1=dd(d["lambda1"]), lambda2prime=dd(d["lambda2prime"]),
            lambda2=dd(d["lambda2"]), lambda3=dd(d["lambda3"]),
            mu=float(d["mu"]), r=float(d["r"]), r0_star=float(d["r0_star"]),
            rho1=dd(d["rho1"]), rho2prime=dd(d["rho2prime"]), rho3=dd(d["rho3"]),
            meta=dict(d.get("meta", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TwoLevelDesign":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        """Hash of the design content, ignoring the metadata block."""
        d = self.to_dict()
        d.pop("meta")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _two_level_lp(spec: DesignSpec, charts: DesignCharts, r: float, mu: float,
                  r0_star: float, maximize_margin: bool = False, deg2_limit: float | None = None):
    """Assemble and solve the joint LP for fixed (r, mu).

    Variables are lambda1 (D), lambda2' (D) and, with maximize_margin, a common
    slack delta added to every openness row. With deg2_limit = kappa, the
    degree-2 variables of h1 not covered by a bin-index check number at most
    kappa k1, so they fit into a spanning forest of h1's checks (per n:
    (1-r) dc1 lambda1_2 / 2 - r0 dc2' sum lambda2'_i / i <= kappa (1-r)).
    """
    degrees = charts.degrees
    nd = len(degrees)
    inv = 1.0 / np.array(degrees, dtype=float)
    nv = 2 * nd + (1 if maximize_margin else 0)
    rows1 = _openness_rows(charts.first(), degrees)
    rows2 = _openness_rows(charts.second(mu), degrees)
    rho2 = spec.rho2(mu)

    blocks, rhs = [], []
    top = 1.0 if maximize_margin else 1.0 - spec.margin
    b1 = np.zeros((rows1.shape[0], nv))
    b1[:, :nd] = rows1
    b2 = np.zeros((rows2.shape[0], nv))
    b2[:, :nd] = mu * rows2
    b2[:, nd:2 * nd] = (1.0 - mu) * rows2
    if maximize_margin:
        b1[:, -1] = 1.0
        b2[:, -1] = 1.0
    blocks += [b1, b2]
    rhs += [np.full(rows1.shape[0], top), np.full(rows2.shape[0], top)]

    f1 = np.zeros((1, nv))
    f1[0, :nd] = -inv
    f2 = np.zeros((1, nv))
    f2[0, :nd] = -mu * inv
    f2[0, nd:2 * nd] = -(1.0 - mu) * inv
    blocks += [f1, f2]
    rhs += [[-spec.rho1.inverse_mean() / (1.0 - r)],
            [-rho2.inverse_mean() / (1.0 - r + r0_star)]]
    if spec.h2_excess is not None and mu < 1.0:
        f3 = np.zeros((1, nv))
        f3[0, nd:2 * nd] = -inv
        blocks.append(f3)
        rhs.append([-(1.0 + spec.h2_excess) * spec.rho2prime.inverse_mean()])
    if deg2_limit is not None and 2 in degrees:
        f4 = np.zeros((1, nv))
        f4[0, degrees.index(2)] = (1.0 - r) / (2.0 * spec.rho1.inverse_mean())
        f4[0, nd:2 * nd] = -r0_star / spec.rho2prime.inverse_mean() * inv
        blocks.append(f4)
        rhs.append([deg2_limit * (1.0 - r)])
    if maximize_margin:
        cap = np.zeros((1, nv))
        cap[0, -1] = 1.0
        blocks.append(cap)
        rhs.append([1.0])

    A_eq = np.zeros((2, nv))
    A_eq[0, :nd] = 1.0
    A_eq[1, nd:2 * nd] = 1.0
    c = np.zeros(nv)
    if maximize_margin:
        c[-1] = -1.0
    res = lp_solve(c, A_ub=np.vstack(blocks), b_ub=np.concatenate(rhs),
                   A_eq=A_eq, b_eq=[1.0, 1.0])
    lam1 = _clean(degrees, res.x[:nd])
    lam2p = _clean(degrees, res.x[nd:2 * nd])
    delta = float(res.x[-1]) if maximize_margin else None
    return lam1, lam2p, delta


def feasibility_check(spec: DesignSpec, r: float, mu: float, r0_star: float,
                      charts: DesignCharts | None = None):
    """Decide whether rate r is achievable with edge fraction mu.

    Returns ``(feasible, lambda1, lambda2prime)``; the distributions are None
    when infeasible. LpNumericalFailure propagates.
    """
    if not (0.0 <= mu <= 1.0):
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if r >= 1.0 or 1.0 - r + r0_star <= 0.0:
        return False, None, None
    charts = charts if charts is not None else DesignCharts(spec)
    try:
        lam1, lam2p, _ = _two_level_lp(spec, charts, r, mu, r0_star)
    except (Infeasible, Unbounded):
        return False, None, None
    return True, lam1, lam2p


def _finish(spec, lam1, lam2p, lam3, mu, r, r0_star, meta) -> TwoLevelDesign:
    return TwoLevelDesign(
        lambda1=lam1, lambda2prime=lam2p,
        lambda2=combine_distributions(lam1, lam2p, mu), lambda3=lam3,
        mu=float(mu), r=float(r), r0_star=float(r0_star),
        rho1=spec.rho1, rho2prime=spec.rho2prime, rho3=spec.rho3, meta=meta)


def optimize_two_level(spec: DesignSpec, r0_star: float, lambda3: DegreeDistribution,
                       mu_grid: int = 21, r_tol: float = 1e-4,
                       charts: DesignCharts | None = None, refine_points: int = 11,
                       closure_samples: int = 3) -> TwoLevelDesign:
    """Largest r, within r_tol, that is feasible for some mu.

    mu is scanned on a uniform grid including both endpoints, starting from
    the last successful value; afterwards the bisection is repeated on a finer
    grid around the best mu.
    """
    if mu_grid < 2:
        raise ValueError("mu_grid needs at least the two endpoints")
    charts = charts if charts is not None else DesignCharts(spec)
    ceiling = min(bi_awgn_capacity(spec.snr1), bi_awgn_capacity(spec.snr2) + r0_star)
    ceiling = min(ceiling, 1.0 - 1e-9)

    def feasible_any(r, mus, prefer):
        order = sorted(mus, key=lambda m: abs(m - prefer))
        for m in order:
            ok, l1, l2 = feasibility_check(spec, r, m, r0_star, charts)
            if ok:
                return m, l1, l2
        return None

    mus = list(np.linspace(0.0, 1.0, mu_grid))
    hit = feasible_any(0.0, mus, 1.0)
    if hit is None:
        raise Infeasible("no (lambda1, lambda2') pair is open at both snr1 and snr2 "
                         "even at rate 0")
    best_mu, best = hit[0], (0.0, hit[1], hit[2])

    def bisect(lo, hi, mus, best_mu, best):
        top = feasible_any(hi, mus, best_mu)
        if top is not None:
            return hi, top[0], (hi, top[1], top[2])
        while hi - lo > r_tol:
            mid = 0.5 * (lo + hi)
            hit = feasible_any(mid, mus, best_mu)
            if hit is None:
                hi = mid
            else:
                lo, best_mu, best = mid, hit[0], (mid, hit[1], hit[2])
        return lo, best_mu, best

    lo, best_mu, best = bisect(0.0, ceiling, mus, best_mu, best)
    step = 1.0 / (mu_grid - 1)
    fine = np.clip(np.linspace(best_mu - step, best_mu + step, refine_points), 0.0, 1.0)
    fine = sorted(set(float(m) for m in fine) | {best_mu})
    lo, best_mu, best = bisect(lo, min(ceiling, lo + 4 * step + 2 * r_tol), fine,
                               best_mu, best)

    r, lam1, lam2p = best
    closure = []
    for frac in np.linspace(0.25, 0.95, closure_samples) if closure_samples else []:
        rr = float(frac * r)
        closure.append([rr, bool(feasibility_check(spec, rr, best_mu, r0_star, charts)[0])])
    meta = {"ceiling": ceiling, "mu_grid": mu_grid, "r_tol": r_tol,
            "downward_closure": closure}
    return _finish(spec, lam1, lam2p, lambda3, best_mu, r, r0_star, meta)


def backoff_design(spec: DesignSpec, design: TwoLevelDesign, factor: float,
                   charts: DesignCharts | None = None,
                   deg2_limit: float | None = DEG2_LIMIT) -> TwoLevelDesign:
    """Design at rates factor*r and factor*r0_star with maximal chart clearance.

    The relay code is re-optimized for margin at the reduced bin-index rate;
    the source code keeps mu and maximizes a common openness slack. These are
    the designs meant for finite-length codes, so by default degree-2
    variables are kept few enough to be placed without cycles.
    """
    if not (0.0 < factor <= 1.0):
        raise ValueError("factor must lie in (0, 1]")
    charts = charts if charts is not None else DesignCharts(spec)
    r0 = factor * design.r0_star
    r = factor * design.r
    lam3, delta3 = max_margin_single(spec, r0, charts, deg2_limit)
    lam1, lam2p, delta = _two_level_lp(spec, charts, r, design.mu, r0, maximize_margin=True,
                                       deg2_limit=deg2_limit)
    meta = dict(design.meta)
    meta.update({"backoff_factor": factor, "deg2_limit": deg2_limit, "relay_clearance": delta3,
                 "source_clearance": delta})
    return _finish(spec, lam1, lam2p, lam3, design.mu, r, r0, meta)


# ---------------------------------------------------------------------------
# verification

def verify_design(spec: DesignSpec, design: TwoLevelDesign, margin: float | None = None,
                  n_points: int | None = None) -> dict:
    """Re-check openness of all three charts on freshly generated chart sets."""
    margin = spec.margin / 2 if margin is None else margin
    n_points = spec.n_points if n_points is None else n_points

    def check(lam, rho, snr):
        grid = ProbabilityGrid.for_snr(snr, n_points, spec.decades)
        cs = exit_chart_set(snr, rho, lam.degrees, grid, spec.method)
        chart = combined_chart(lam, cs)
        live = grid.points > 0
        worst = float(np.max(chart[live] / grid.points[live]))
        return is_open(chart, grid, margin), worst

    out = {}
    out["relay"] = check(design.lambda3, design.rho3, spec.snr3)
    out["first"] = check(design.lambda1, design.rho1, spec.snr1)
    out["second"] = check(design.lambda2, design.rho2, spec.snr2)
    out["ok"] = all(v[0] for v in out.values())
    return out


def run_design(spec: DesignSpec, mu_grid: int = 21, r_tol: float = 1e-4,
               charts: DesignCharts | None = None):
    """optimize_single followed by optimize_two_level."""
    charts = charts if charts is not None else DesignCharts(spec)
    lam3, r0 = optimize_single(spec, charts)
    design = optimize_two_level(spec, r0, lam3, mu_grid=mu_grid, r_tol=r_tol, charts=charts)
    return design, charts


__all__ = [
    "DesignSpec", "DesignCharts", "TwoLevelDesign", "design_rate", "combine_distributions",
    "optimize_single", "max_margin_single", "feasibility_check", "optimize_two_level",
    "backoff_design", "verify_design", "run_design", "LpNumericalFailure",
]
