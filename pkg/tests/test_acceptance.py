"""Acceptance suite: each criterion at its stated tolerance and runtime budget.

Run with ``pytest tests/test_acceptance.py``; the terminal summary lists one
PASS/FAIL line per criterion.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from relay_ldpc.channel import (PowerSplit, RelayChannelParams, bi_awgn_capacity,
                                bin_index_rate, composite_destination_rate,
                                destination_conditional_rate, relay_link_rate,
                                solve_optimal_alpha)
from relay_ldpc.cli import design_document, main, parse_config
from relay_ldpc.codegen import TannerGraph, TwoLevelCode, build_two_level_code, \
    compute_bin_index, construct_graph, encode
from relay_ldpc.errors import Infeasible
from relay_ldpc.exitchart import (DegreeDistribution, ProbabilityGrid, exit_chart_set, open_at,
                                  threshold_search)
from relay_ldpc.gf2 import rank
from relay_ldpc.lp import lp_solve
from relay_ldpc.optimizer import DesignCharts, DesignSpec, backoff_design, optimize_single
from relay_ldpc.simulator import BpDecoder, SimConfig, run_block_markov, run_sweep

import oracles

DD = DegreeDistribution
REF = RelayChannelParams(4.0, 1.0, 1.0, 1.0)
REF_CONFIG = {"channel": {"P": 4, "P1": 1, "N1": 1, "N2": 1}}

pytestmark = pytest.mark.slow


def _min_rate(params, alpha):
    s = PowerSplit(min(max(alpha, 0.0), 1.0))
    return min(relay_link_rate(params, s), composite_destination_rate(params, s))


# ---------------------------------------------------------------------------
# 1

def test_c1_optimal_alpha(criterion):
    rng = np.random.default_rng(1)
    worst_resid, worst_gain, interior, boundary, bad = 0.0, math.inf, 0, 0, 0
    t0 = time.perf_counter()
    draws = rng.uniform(0.05, 20.0, (1000, 4))
    for P, P1, N1, N2 in draws.tolist():
        params = RelayChannelParams(P, P1, N1, N2)
        split, targets, _ = solve_optimal_alpha(params)
        a = split.alpha
        if P * N2 > P1 * N1:
            interior += 1
            resid = abs(relay_link_rate(params, split) - composite_destination_rate(params, split))
            worst_resid = max(worst_resid, resid / targets.capacity)
            peak = _min_rate(params, a)
            gain = peak - max(_min_rate(params, a - 0.01), _min_rate(params, a + 0.01))
            worst_gain = min(worst_gain, gain)
            bad += resid >= 1e-9 * targets.capacity or gain <= 0
        else:
            boundary += 1
            bad += a != 1.0
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 1.0
    criterion(1, ok, f"{interior} interior + {boundary} boundary draws, max residual/C "
                     f"{worst_resid:.1e}, min gain over alpha*+-0.01 {worst_gain:.1e}, "
                     f"{elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2

def test_c2_rate_identity(criterion):
    rng = np.random.default_rng(2)
    draws = rng.uniform(0.05, 20.0, (100_000, 4)).tolist()
    alphas = rng.uniform(0.0, 1.0, 100_000).tolist()
    t0 = time.perf_counter()
    worst = 0.0
    for (P, P1, N1, N2), a in zip(draws, alphas):
        params, s = RelayChannelParams(P, P1, N1, N2), PowerSplit(a)
        lhs = composite_destination_rate(params, s)
        rhs = bin_index_rate(params, s) + destination_conditional_rate(params, s)
        worst = max(worst, abs(lhs - rhs) / lhs)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 1.0
    criterion(2, ok, f"1e5 draws, max relative deviation {worst:.1e}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3

CHART_DEGREES = (2, 3, 4, 6, 10)
CHART_SNRS = (0.624, 1.661, 3.323)   # the reference channel's three link SNRs
MC_STRIDE = 10                        # oracle on every 10th grid point


def test_c3_exit_engine_vs_oracle(criterion):
    t0 = time.perf_counter()
    rho = DD.regular(6)
    worst, points = 0.0, 0
    for k, snr in enumerate(CHART_SNRS):
        grid = ProbabilityGrid.for_snr(snr)
        cs = exit_chart_set(snr, rho, CHART_DEGREES, grid)
        for j in range(1, grid.points.size, MC_STRIDE):
            p = float(grid.points[j])
            ref = oracles.mc_chart_point(snr, CHART_DEGREES, 6, p, samples=10**6,
                                         seed=1000 * k + j)
            for d in CHART_DEGREES:
                worst = max(worst, abs(cs.charts[d][j] - ref[d]))
                points += 1
    thr = threshold_search(DD.regular(3), rho, 1.0, 2.0)
    gap_db = abs(10 * math.log10(thr) - oracles.THRESHOLD_36_DB)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.005 and gap_db <= 0.05 and elapsed < 300
    criterion(3, ok, f"{points} chart points, max |engine - MC| {worst:.1e}; (3,6) threshold "
                     f"{10 * math.log10(thr):.4f} dB vs oracle {oracles.THRESHOLD_36_DB:.4f} dB; "
                     f"{elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4

def _random_lp(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 5))
    c = np.round(rng.uniform(-3, 3, n), 3)
    A = np.round(rng.uniform(-3, 3, (m, n)), 3)
    b = np.round(rng.uniform(-1, 3, m), 3)
    if rng.random() < 0.5:
        return c, A, b, np.ones((1, n)), np.array([1.0])
    return c, np.vstack([A, np.ones((1, n))]), np.append(b, 2.0), None, None


def test_c4_lp_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, infeasible, bad = 0.0, 0, 0
    for _ in range(200):
        c, A, b, Ae, be = _random_lp(rng)
        ref = oracles.lp_vertex_enumeration(c, A, b, Ae, be)
        if ref is None:
            infeasible += 1
            try:
                lp_solve(c, A, b, Ae, be)
                bad += 1
            except Infeasible:
                pass
            continue
        err = abs(lp_solve(c, A, b, Ae, be).objective - ref)
        worst = max(worst, err)
        bad += err > 1e-9
    rho = DD.regular(6)
    singleton_ok = True
    t36 = oracles.THRESHOLD_36_SNR
    for snr in (0.75 * t36, 0.95 * t36, 1.05 * t36, 1.3 * t36):
        spec = DesignSpec(snr, snr, snr, rho, rho, rho, n_points=60)
        expect = open_at(DD.regular(3), rho, snr, spec.margin, n_points=60)
        try:
            lam, _ = optimize_single(spec, DesignCharts(spec, degrees=[3]), degrees=[3])
            got = lam == DD.regular(3)
        except Infeasible:
            got = False
        singleton_ok &= got == expect
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and singleton_ok and elapsed < 10
    criterion(4, ok, f"200 LPs ({infeasible} infeasible), max objective error {worst:.1e}; "
                     f"singleton iff open: {singleton_ok}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5 and 8 share the full reference design

@pytest.fixture(scope="module")
def reference_design():
    cfg = parse_config(json.dumps(REF_CONFIG))
    t0 = time.perf_counter()
    design, report = design_document(cfg)
    return cfg, design, report, time.perf_counter() - t0


def test_c5_design_quality(criterion, reference_design):
    _, design, report, elapsed = reference_design
    c1, c2, c3 = (bi_awgn_capacity(s) for s in design.meta["snr"])
    ceiling = min(c1, c2 + design.r0_star)
    ok_r0 = design.r0_star >= 0.90 * c3
    ok_r = design.r >= 0.85 * ceiling
    ok = ok_r0 and ok_r and report["base"]["ok"] and elapsed < 120
    criterion(5, ok, f"R0* {design.r0_star:.5f} = {design.r0_star / c3:.3f} c3, "
                     f"r {design.r:.5f} = {design.r / ceiling:.3f} min(c1, c2+R0*), "
                     f"re-verified at margin/2: {report['base']['ok']}; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6

def test_c6_binning_partition(criterion):
    rng = np.random.default_rng(6)
    while True:
        H = rng.integers(0, 2, (9, 12), dtype=np.uint8)
        if rank(H) == 9 and rank(H[:6]) == 6 and H.sum(1).min() >= 2:
            break
    code = TwoLevelCode(TannerGraph.from_dense(H[:6]), TannerGraph.from_dense(H[6:]))
    words = oracles.gf2_nullspace_enumerate(H[:6])
    msgs = np.array([[(i >> j) & 1 for j in range(6)] for i in range(64)], dtype=np.uint8)
    enc = encode(code, msgs)
    same = {tuple(w) for w in words} == {tuple(c) for c in enc}
    _, counts = np.unique(compute_bin_index(code, enc), axis=0, return_counts=True)
    ok = len(words) == 64 and same and len(counts) == 8 and bool(np.all(counts == 8))
    criterion(6, ok, f"{len(words)} codewords in {len(counts)} bins of sizes "
                     f"{sorted(set(counts.tolist()))}")
    assert ok


# ---------------------------------------------------------------------------
# 7

def test_c7_coset_equivalence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    for inst in range(100):
        g = construct_graph(np.full(256, 3), np.full(128, 6), inst)
        H = g.dense().astype(np.int64)
        x = rng.integers(0, 2, 256).astype(np.uint8)
        s = (H @ x) % 2 == 1
        snr = rng.uniform(0.8, 2.5)
        llr = (2 * snr + 2 * math.sqrt(snr) * rng.standard_normal(256)) * (1 - 2.0 * x)
        llr = llr * (1 - 2.0 * rng.integers(0, 2, 256))
        dec = BpDecoder(g)
        h_s, c_s, i_s = dec.decode(llr, s, 50)
        h_0, c_0, i_0 = dec.decode(llr * (1 - 2.0 * x), None, 50)
        same = (np.array_equal(h_s, h_0 ^ x) and np.array_equal(c_s, c_0)
                and np.array_equal(i_s, i_0))
        mismatches += not same
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    criterion(7, ok, f"100 instances n=256, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8

N_ACCEPT = 4096
TRIALS = 200


@pytest.fixture(scope="module")
def backed_off(reference_design):
    cfg, design, _, _ = reference_design
    params = REF
    split, _, snrs = solve_optimal_alpha(params)
    d = cfg["design"]
    spec = DesignSpec(snrs.snr1, snrs.snr2, snrs.snr3, design.rho1, design.rho2prime,
                      design.rho3, max_var_degree=d["max_var_degree"], margin=d["margin"],
                      n_points=d["n_points"], decades=d["decades"])
    charts = DesignCharts(spec)
    out = {}
    for factor in (0.85, 0.80):
        b = backoff_design(spec, design, factor, charts, deg2_limit=d["deg2_limit"])
        b.meta.update({"channel": params.to_dict(), "alpha": split.alpha})
        code, relay = build_two_level_code(b, N_ACCEPT, cfg["code"]["seed"])
        out[factor] = SimConfig(params, split, code, relay, blocks=4, seed=8, trials=TRIALS,
                                design=b)
    return out


def _clock():
    return time.perf_counter()


def test_c8_end_to_end(criterion, backed_off):
    t0 = _clock()
    parts, ok = [], True

    clean = run_block_markov(replace(backed_off[0.85], blocks=10, trials=5, noise_scale=0.0))
    errs = clean.relay_errors + clean.bin_errors + clean.dest_errors + clean.bit_errors
    ok &= errs == 0
    parts.append(f"noiseless B=10: {errs} errors")

    genie = run_block_markov(replace(backed_off[0.85], genie_relay=True, genie_bin=True))
    ok &= genie.dest_bler < 0.1
    lo, hi = genie.interval()
    parts.append(f"genie 15% backoff dest BLER {genie.dest_bler:.4f} [{lo:.4f}, {hi:.4f}]")

    full = run_block_markov(backed_off[0.80])
    ok &= full.dest_bler < 0.2
    lo, hi = full.interval()
    parts.append(f"full 20% backoff dest BLER {full.dest_bler:.4f} [{lo:.4f}, {hi:.4f}]")

    sweep = run_sweep(backed_off[0.80], [0.9, 1.0, 1.15])
    rates = [r.dest_bler for r in sweep]
    bands = [r.interval() for r in sweep]
    # a less noisy point may not be significantly worse than a noisier one
    mono = all(bands[i][0] <= bands[i + 1][1] for i in range(len(sweep) - 1))
    ok &= mono
    parts.append("sweep dest BLER " + ", ".join(f"{r:.3f}" for r in rates)
                 + f" monotone within bands: {mono}")

    elapsed = _clock() - t0
    ok &= elapsed < 1200
    parts.append(f"{elapsed:.0f}s")
    criterion(8, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 9

def _without_metadata(path):
    doc = json.load(open(path))
    doc.pop("metadata", None)
    return json.dumps(doc, sort_keys=True, indent=1).encode()


def test_c9_reproducibility(criterion, tmp_path):
    cfg = dict(REF_CONFIG, design={"max_var_degree": 12, "n_points": 60, "mu_grid": 6,
                                   "r_tol": 1e-3, "backoff": 0.85},
               code={"n": 1024, "seed": 9}, sim={"trials": 6, "noise_scales": [1.0, 1.3]})
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg, indent=1))
    c = str(cfg_path)
    runs = []
    for k in range(2):
        f = {name: str(tmp_path / f"{name}{k}") for name in
             ("capacity.json", "charts.csv", "design.json", "code.json", "sim.csv")}
        codes = [
            main(["capacity", "--config", c, "--out", f["capacity.json"]]),
            main(["charts", "--config", c, "--out", f["charts.csv"]]),
            main(["design", "--config", c, "--out", f["design.json"]]),
            main(["build", "--config", c, "--design", f["design.json"], "--out", f["code.json"]]),
            main(["simulate", "--config", c, "--code", f["code.json"], "--out", f["sim.csv"]]),
        ]
        assert codes == [0] * 5
        runs.append({name: (_without_metadata(p) if name.endswith(".json")
                            else open(p, "rb").read()) for name, p in f.items()})
    same = {name: runs[0][name] == runs[1][name] for name in runs[0]}
    ok = all(same.values())
    criterion(9, ok, "identical: " + ", ".join(f"{n.split('.')[0]} {v}" for n, v in same.items()))
    assert ok
