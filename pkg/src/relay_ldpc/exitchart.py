"""Probability-of-error EXIT charts for LDPC ensembles on the BI-AWGN channel.

Channel convention: unit-energy antipodal inputs (bit 0 -> +1), noise
variance 1/snr, so the channel LLR is N(2 snr, 4 snr) given bit 0 and the raw
hard-decision error probability is Q(sqrt(snr)).

An elementary chart f_i(p) maps the error probability p of the messages a
variable node sends to its checks to the error probability of the same
messages one iteration later, for a variable node of degree i. Incoming
messages are modelled as symmetric Gaussian LLRs N(m, 2m) with Q(sqrt(m/2)) = p.
Two update models are available:

``"semi"`` (default)
    The check-node tanh rule and the variable-node sum are evaluated exactly
    on a quantized LLR grid, so only the message density *between*
    iterations is assumed Gaussian.
``"ga"``
    Check outputs are also collapsed to a symmetric Gaussian through the
    mean map phi(m) = E[1 - tanh(u/2)], u ~ N(m, 2m). Faster, less accurate
    when messages are unreliable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from scipy import fft as sfft
from scipy import integrate, interpolate
from scipy.special import expit, ndtr, ndtri

from .errors import BracketInvalid, DegreeOutOfRange, MissingElementaryChart

MAX_VAR_DEGREE = 30
MAX_CHECK_DEGREE = 12
LLR_STEP = 0.1
LLR_CLIP = 30.0
DEFAULT_MARGIN = 1e-4
GRID_POINTS = 200
GRID_DECADES = 6.0


@dataclass(frozen=True)
class DegreeDistribution:
    """Edge-perspective degree distribution, atoms sorted by degree."""

    atoms: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("empty degree distribution")
        degs = [d for d, _ in self.atoms]
        if len(set(degs)) != len(degs):
            raise ValueError(f"repeated degrees in {degs}")
        for d, f in self.atoms:
            if int(d) != d or d < 2:
                raise DegreeOutOfRange(f"degree {d} must be an integer >= 2")
            if not (f >= 0.0) or not math.isfinite(f):
                raise ValueError(f"fraction for degree {d} is {f}")
        total = math.fsum(f for _, f in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"fractions sum to {total!r}, not 1")
        object.__setattr__(self, "atoms",
                           tuple(sorted((int(d), float(f)) for d, f in self.atoms)))

    @classmethod
    def from_dict(cls, mapping: Mapping) -> "DegreeDistribution":
        return cls(tuple((int(d), float(f)) for d, f in mapping.items() if f > 0))

    @classmethod
    def regular(cls, degree: int) -> "DegreeDistribution":
        return cls(((int(degree), 1.0),))

    @classmethod
    def from_weights(cls, degrees, weights, drop_below: float = 1e-10):
        """Build from raw (e.g. LP) weights: clip noise, drop dust, renormalize."""
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        w[w < drop_below] = 0.0
        if w.sum() <= 0:
            raise ValueError("all weights are zero")
        w = w / w.sum()
        atoms = [(int(d), float(x)) for d, x in zip(degrees, w) if x > 0]
        # absorb the last rounding ulp into the largest atom
        resid = 1.0 - math.fsum(x for _, x in atoms)
        k = max(range(len(atoms)), key=lambda j: atoms[j][1])
        atoms[k] = (atoms[k][0], atoms[k][1] + resid)
        return cls(tuple(atoms))

    @property
    def degrees(self) -> np.ndarray:
        return np.array([d for d, _ in self.atoms], dtype=int)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for _, f in self.atoms])

    @property
    def max_degree(self) -> int:
        return self.atoms[-1][0]

    def inverse_mean(self) -> float:
        """sum_i p_i / i: nodes per edge."""
        return math.fsum(f / d for d, f in self.atoms)

    def weight(self, degree: int) -> float:
        return dict(self.atoms).get(int(degree), 0.0)

    def node_fractions(self) -> dict[int, float]:
        """Node-perspective fractions, proportional to p_i / i."""
        inv = self.inverse_mean()
        return {d: (f / d) / inv for d, f in self.atoms}

    def check_max(self, limit: int) -> "DegreeDistribution":
        if self.max_degree > limit:
            raise DegreeOutOfRange(f"degree {self.max_degree} exceeds limit {limit}")
        return self

    def to_dict(self) -> dict[str, float]:
        return {str(d): f for d, f in self.atoms}

    def __str__(self):
        return "{" + ", ".join(f"{d}: {f:.6g}" for d, f in self.atoms) + "}"


@dataclass(frozen=True)
class ProbabilityGrid:
    """p = 0 plus log-spaced points ending exactly at p0."""

    points: np.ndarray
    p0: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        if pts[0] < 0 or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be nonnegative and strictly ascending")
        if pts[-1] != self.p0 or self.p0 > 0.5:
            raise ValueError("last grid point must equal p0 <= 0.5")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def for_snr(cls, snr: float, n_points: int = GRID_POINTS,
                decades: float = GRID_DECADES) -> "ProbabilityGrid":
        p0 = initial_error_probability(snr)
        if p0 <= 0:
            raise ValueError(f"snr {snr} too large for a probability grid")
        logs = np.linspace(math.log10(p0) - decades, math.log10(p0), n_points)
        pts = np.concatenate([[0.0], 10.0 ** logs])
        pts[-1] = p0
        return cls(pts, p0)

    def __len__(self):
        return self.points.size

    def to_dict(self) -> dict:
        return {"p0": self.p0, "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProbabilityGrid":
        return cls(np.array(d["points"], dtype=float), float(d["p0"]))


@dataclass(frozen=True)
class ExitChartSet:
    snr: float
    check_dist: DegreeDistribution
    grid: ProbabilityGrid
    charts: Mapping[int, np.ndarray] = field(repr=False)
    method: str = "semi"

    def matrix(self, degrees: Iterable[int]) -> np.ndarray:
        degrees = list(degrees)
        missing = [d for d in degrees if d not in self.charts]
        if missing:
            raise MissingElementaryChart(f"no elementary chart for degrees {missing}")
        return np.vstack([self.charts[d] for d in degrees])

    @property
    def degrees(self) -> list[int]:
        return sorted(self.charts)

    def to_json(self) -> str:
        doc = {
            "snr": self.snr,
            "method": self.method,
            "check_dist": self.check_dist.to_dict(),
            "grid": self.grid.to_dict(),
            "charts": {str(d): self.charts[d].tolist() for d in self.degrees},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExitChartSet":
        doc = json.loads(text)
        return cls(
            snr=float(doc["snr"]),
            check_dist=DegreeDistribution.from_dict(doc["check_dist"]),
            grid=ProbabilityGrid.from_dict(doc["grid"]),
            charts={int(d): np.array(v) for d, v in doc["charts"].items()},
            method=doc.get("method", "semi"),
        )


def initial_error_probability(snr: float) -> float:
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    return float(ndtr(-math.sqrt(snr)))


def message_mean(p):
    """Mean m of the symmetric Gaussian LLR N(m, 2m) with error probability p."""
    p = np.asarray(p, dtype=float)
    z = -ndtri(np.clip(p, 1e-300, 0.5))
    return 2.0 * z * z


# ---------------------------------------------------------------------------
# quantized density evolution ("semi")

class _LlrLattice:
    """Uniform LLR grid with a precomputed pairwise check-node table."""

    def __init__(self, step: float, clip: float):
        self.step = step
        self.half = int(round(clip / step))
        self.size = 2 * self.half + 1
        self.x = step * np.arange(-self.half, self.half + 1)
        t = np.tanh(self.x / 2)
        prod = np.clip(np.outer(t, t), -1.0 + 1e-16, 1.0 - 1e-16)
        idx = np.rint(2 * np.arctanh(prod) / step).astype(np.int64) + self.half
        self.table = np.clip(idx, 0, self.size - 1).ravel()
        self.edges = np.concatenate(([-np.inf], self.x[:-1] + step / 2, [np.inf]))
        self.nfft = sfft.next_fast_len((MAX_VAR_DEGREE - 1) * (self.size - 1) + 1, real=True)
        nbins = self.nfft // 2 + 1
        w = np.full(nbins, 2.0)
        w[0] = 1.0
        if self.nfft % 2 == 0:
            w[-1] = 1.0
        self.parseval = w / self.nfft

    def gaussian_pmf(self, m: float) -> np.ndarray:
        if m <= 0:
            pmf = np.zeros(self.size)
            pmf[self.half] = 1.0
            return pmf
        s = math.sqrt(2 * m)
        # use upper/lower tails separately to keep tiny masses accurate
        z = (self.edges - m) / s
        lower = ndtr(z)
        upper = ndtr(-z)
        pmf = np.where(z[1:] <= 0, np.diff(lower), -np.diff(upper))
        return np.clip(pmf, 0.0, None)

    def pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.bincount(self.table, weights=np.outer(a, b).ravel(),
                           minlength=self.size)

    def power(self, pmf: np.ndarray, k: int) -> np.ndarray:
        """Density of the check-node combination of k iid inputs."""
        result, base = None, pmf
        while k:
            if k & 1:
                result = base if result is None else self.pair(result, base)
            k >>= 1
            if k:
                base = self.pair(base, base)
        return result


@lru_cache(maxsize=4)
def _lattice(step: float = LLR_STEP, clip: float = LLR_CLIP) -> _LlrLattice:
    return _LlrLattice(step, clip)


@lru_cache(maxsize=16384)
def _check_pmf(p: float, check_degree: int, step: float, clip: float) -> np.ndarray:
    lat = _lattice(step, clip)
    out = lat.power(lat.gaussian_pmf(float(message_mean(p))), check_degree - 1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def _error_kernel(snr: float, var_degree: int, step: float, clip: float) -> np.ndarray:
    """Transformed P(channel LLR + s < 0) on the lattice of (var_degree-1)-fold sums."""
    lat = _lattice(step, clip)
    s = step * (np.arange(lat.nfft) - (var_degree - 1) * lat.half)
    if snr <= 0:
        g = np.where(s < 0, 1.0, np.where(s == 0, 0.5, 0.0))
    else:
        g = ndtr(-(s + 2 * snr) / (2 * math.sqrt(snr)))
    out = np.conj(sfft.rfft(g)) * lat.parseval
    out.setflags(write=False)
    return out


def _semi_rows(snr, degrees, check_dist, points, step=LLR_STEP, clip=LLR_CLIP):
    lat = _lattice(step, clip)
    kernels = [_error_kernel(float(snr), int(d), step, clip) for d in degrees]
    max_pow = max(degrees) - 1
    rows = np.zeros((len(degrees), len(points)))
    for j, p in enumerate(points):
        if p <= 0:
            continue
        pmf = sum(w * _check_pmf(float(p), d, step, clip) for d, w in check_dist.atoms)
        F = sfft.rfft(pmf, lat.nfft)
        powers = {1: F}
        acc = F
        for k in range(2, max_pow + 1):
            acc = acc * F
            powers[k] = acc
        for i, d in enumerate(degrees):
            if d == 1:
                continue
            rows[i, j] = np.real(np.dot(powers[d - 1], kernels[i]))
    return rows


# ---------------------------------------------------------------------------
# Gaussian approximation with an accurately tabulated phi ("ga")

_PHI_M_MAX = 600.0


@lru_cache(maxsize=1)
def _phi_table():
    def phi(m):
        s = math.sqrt(2 * m)
        centre = -m / s
        f = lambda z: 2.0 * expit(-(m + s * z)) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
        lo = min(-40.0, centre - 40.0)
        val, _ = integrate.quad(f, lo, 40.0, epsabs=0.0, epsrel=1e-11, limit=500,
                                points=[centre] if lo < centre < 40.0 else None)
        return val

    logm = np.linspace(math.log(1e-8), math.log(_PHI_M_MAX), 1200)
    logphi = np.log([phi(math.exp(v)) for v in logm])
    fwd = interpolate.PchipInterpolator(logm, logphi, extrapolate=False)
    inv = interpolate.PchipInterpolator(logphi[::-1], logm[::-1], extrapolate=False)
    return fwd, inv, float(logphi[0]), float(logphi[-1])


def phi_function(m):
    """phi(m) = 1 - E[tanh(u/2)], u ~ N(m, 2m); phi(0) = 1.

    Tabulated by quadrature; beyond the table the log-tail decays like -m/4.
    """
    fwd, _, top, bottom = _phi_table()
    m = np.asarray(m, dtype=float)
    inside = np.clip(m, 1e-8, _PHI_M_MAX)
    logphi = fwd(np.log(inside)) - np.maximum(m - _PHI_M_MAX, 0.0) / 4.0
    return np.where(m <= 0, 1.0, np.exp(logphi))


def phi_inverse(y):
    _, inv, top, bottom = _phi_table()
    y = np.asarray(y, dtype=float)
    ly = np.log(np.clip(y, 1e-300, 1.0))
    m = np.exp(inv(np.clip(ly, bottom, top)))
    m = m + np.maximum(bottom - ly, 0.0) * 4.0
    return np.where(y >= 1.0, 0.0, m)


def _ga_rows(snr, degrees, check_dist, points):
    points = np.asarray(points, dtype=float)
    rows = np.zeros((len(degrees), points.size))
    live = points > 0
    m = message_mean(points[live])
    f = phi_function(m)
    y = sum(w * -np.expm1((d - 1) * np.log1p(-f)) for d, w in check_dist.atoms)
    mu = phi_inverse(y)
    for i, d in enumerate(degrees):
        rows[i, live] = ndtr(-np.sqrt((2 * snr + (d - 1) * mu) / 2))
    return rows


# ---------------------------------------------------------------------------
# public chart operations

def _validate_grid(snr, grid):
    p0 = initial_error_probability(snr)
    if grid.p0 > p0 * (1 + 1e-12) + 1e-300:
        raise ValueError(f"grid extends to {grid.p0}, beyond the channel error {p0}")


def _chart_rows(snr, degrees, check_dist, grid, method):
    for d in degrees:
        if not (2 <= d <= MAX_VAR_DEGREE):
            raise DegreeOutOfRange(f"variable degree {d} outside [2, {MAX_VAR_DEGREE}]")
    if check_dist.max_degree > 64:
        raise DegreeOutOfRange(f"check degree {check_dist.max_degree} too large")
    _validate_grid(snr, grid)
    if method == "semi":
        rows = _semi_rows(snr, degrees, check_dist, grid.points)
    elif method == "ga":
        rows = _ga_rows(snr, degrees, check_dist, grid.points)
    else:
        raise ValueError(f"unknown chart method {method!r}")
    rows = np.clip(rows, 0.0, 0.5)
    rows[:, grid.points == 0] = 0.0
    return rows


def elementary_exit_chart(snr: float, var_degree: int, check_dist: DegreeDistribution,
                          grid: ProbabilityGrid, method: str = "semi") -> np.ndarray:
    return _chart_rows(snr, [int(var_degree)], check_dist, grid, method)[0]


def exit_chart_set(snr: float, check_dist: DegreeDistribution, degrees: Iterable[int],
                   grid: ProbabilityGrid | None = None, method: str = "semi") -> ExitChartSet:
    degrees = sorted({int(d) for d in degrees})
    grid = grid if grid is not None else ProbabilityGrid.for_snr(snr)
    rows = _chart_rows(snr, degrees, check_dist, grid, method)
    charts = {}
    for d, row in zip(degrees, rows):
        row.setflags(write=False)
        charts[d] = row
    return ExitChartSet(snr=float(snr), check_dist=check_dist, grid=grid,
                        charts=charts, method=method)


def combined_chart(lam: DegreeDistribution, charts: ExitChartSet) -> np.ndarray:
    """Pointwise sum_i lambda_i f_i(p)."""
    mat = charts.matrix(lam.degrees)
    return lam.fractions @ mat


def is_open(chart, grid: ProbabilityGrid, margin: float = DEFAULT_MARGIN) -> bool:
    """chart(p) <= (1 - margin) p at every grid point p > 0."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    chart = np.asarray(chart, dtype=float)
    p = grid.points
    live = p > 0
    return bool(np.all(chart[live] <= (1.0 - margin) * p[live]))


def open_at(lam: DegreeDistribution, check_dist: DegreeDistribution, snr: float,
            margin: float = DEFAULT_MARGIN, method: str = "semi",
            n_points: int = GRID_POINTS) -> bool:
    grid = ProbabilityGrid.for_snr(snr, n_points)
    cs = exit_chart_set(snr, check_dist, lam.degrees, grid, method)
    return is_open(combined_chart(lam, cs), grid, margin)


def threshold_search(lam: DegreeDistribution, check_dist: DegreeDistribution,
                     snr_lo: float, snr_hi: float, tol: float = 1e-4,
                     margin: float = DEFAULT_MARGIN, method: str = "semi",
                     n_points: int = GRID_POINTS) -> float:
    """Smallest SNR (within relative `tol`) at which the chart is open.

    Requires the chart closed at snr_lo and open at snr_hi. Bisection runs on
    log(SNR); the returned value is the open end of the final bracket.
    """
    if not (0 < snr_lo < snr_hi):
        raise BracketInvalid(f"need 0 < snr_lo < snr_hi, got {snr_lo}, {snr_hi}")
    check = lambda s: open_at(lam, check_dist, s, margin, method, n_points)
    if check(snr_lo) or not check(snr_hi):
        raise BracketInvalid(
            f"chart must be closed at {snr_lo} and open at {snr_hi}")
    lo, hi = snr_lo, snr_hi
    while hi / lo - 1.0 > tol:
        mid = math.sqrt(lo * hi)
        if check(mid):
            hi = mid
        else:
            lo = mid
    return hi


def db(x: float) -> float:
    return 10.0 * math.log10(x)
