import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relay_ldpc.channel import PowerSplit, RelayChannelParams
from relay_ldpc.codegen import RelayCode, TannerGraph, construct_graph
from relay_ldpc.errors import ConfigMismatch
from relay_ldpc.simulator import (CSV_COLUMNS, BpDecoder, SimConfig, binomial_interval,
                                  llr_destination_stage1, llr_destination_stage2, llr_relay,
                                  modulate_superposition, run_block_markov, run_sweep,
                                  transmit, write_csv)

import oracles

PARAMS = RelayChannelParams(4.0, 1.0, 1.0, 1.0)
SPLIT = PowerSplit(0.83072)


@pytest.fixture(scope="module")
def graph256():
    return construct_graph(np.full(256, 3), np.full(128, 6), 11)


@pytest.fixture(scope="module")
def cfg(ref_channel, small_backoff, small_code):
    params, split, _ = ref_channel
    code, relay = small_code
    return SimConfig(params, split, code, relay, blocks=4, seed=5, trials=20,
                     design=small_backoff)


# ---------------------------------------------------------------------------
# LLRs

def _mixture_density_llr(y, params, split):
    """Stage-1 LLR by direct evaluation of the four-point Gaussian mixture."""
    a = math.sqrt(split.alpha * params.P)
    b = math.sqrt(params.P1) + math.sqrt((1 - split.alpha) * params.P)
    var = params.N1 + params.N2

    def g(mu):
        return np.exp(-(y - mu) ** 2 / (2 * var))

    return np.log(g(b + a) + g(b - a)) - np.log(g(-b + a) + g(-b - a))


def test_stage1_mixture_llr_matches_density():
    y = np.linspace(-6, 6, 241)
    ref = _mixture_density_llr(y, PARAMS, SPLIT)
    assert np.allclose(llr_destination_stage1(y, PARAMS, SPLIT), ref, atol=1e-9)


@given(st.floats(-30, 30))
def test_stage1_llr_odd(y):
    a = llr_destination_stage1(np.array([y]), PARAMS, SPLIT)
    b = llr_destination_stage1(np.array([-y]), PARAMS, SPLIT)
    assert a[0] == pytest.approx(-b[0], abs=1e-9)


def test_gaussian_stage1_mode_and_unknown_mode():
    y = np.array([0.3, -1.0])
    a = math.sqrt(SPLIT.alpha * 4.0)
    b = 1.0 + math.sqrt((1 - SPLIT.alpha) * 4.0)
    assert np.allclose(llr_destination_stage1(y, PARAMS, SPLIT, "gaussian"),
                       2 * b * y / (2.0 + a * a))
    with pytest.raises(ValueError):
        llr_destination_stage1(y, PARAMS, SPLIT, "other")


def test_relay_and_stage2_llr_are_exact_gaussian():
    rng = np.random.default_rng(0)
    y = rng.normal(size=50)
    u = rng.integers(0, 2, 50)
    a = math.sqrt(SPLIT.alpha * 4.0)
    cop = math.sqrt((1 - SPLIT.alpha) * 4.0)
    ref = 2 * a * (y - cop * (1 - 2 * u)) / 1.0
    assert np.allclose(llr_relay(y, u, PARAMS, SPLIT), ref)
    ref2 = 2 * a * (y - (1.0 + cop) * (1 - 2 * u)) / 2.0
    assert np.allclose(llr_destination_stage2(y, u, PARAMS, SPLIT), ref2)


def test_llrs_are_clipped_and_finite():
    y = np.array([1e6, -1e6, np.nan])
    for v in (llr_relay(y, np.zeros(3), PARAMS, SPLIT), llr_destination_stage1(y, PARAMS, SPLIT)):
        assert np.all(np.isfinite(v)) and np.all(np.abs(v) <= 50)


def test_modulation_power_and_transmit_shapes():
    rng = np.random.default_rng(1)
    c = rng.integers(0, 2, 200000)
    u = rng.integers(0, 2, 200000)
    x, x1 = modulate_superposition(c, u, PARAMS, SPLIT)
    assert np.mean(x * x) == pytest.approx(4.0, rel=0.01)
    assert np.mean(x1 * x1) == pytest.approx(1.0, abs=1e-12)
    y1, y = transmit(x, x1, PARAMS, rng)
    assert np.var(y1 - x) == pytest.approx(1.0, rel=0.02)
    assert np.var(y - y1 - x1) == pytest.approx(1.0, rel=0.02)
    with pytest.raises(ValueError):
        modulate_superposition(c[:3], u[:4], PARAMS, SPLIT)


# ---------------------------------------------------------------------------
# BP decoder

def test_bp_matches_dense_reference(graph256):
    rng = np.random.default_rng(3)
    H = graph256.dense()
    dec = BpDecoder(graph256)
    snr = 1.6
    llr = 2 * snr + 2 * math.sqrt(snr) * rng.standard_normal((20, 256))
    x = rng.integers(0, 2, 256)
    syn = (H.astype(int) @ x) % 2 == 1
    llr = llr * (1 - 2 * x)
    hard, conv, _ = dec.decode(llr, syn, 60)
    agree = 0
    for row in range(20):
        ref = oracles.tanh_bp(H, llr[row], syn, 60)
        agree += np.array_equal(ref, hard[row])
    assert agree >= 19
    assert conv.sum() >= 15


def test_bp_reports_convergence_and_iterations(graph256):
    dec = BpDecoder(graph256)
    llr = np.full((2, 256), 5.0)
    hard, conv, it = dec.decode(llr)
    assert np.all(hard == 0) and np.all(conv) and np.all(it == 1)


def test_syndrome_coset_equivalence(graph256):
    """Decoding with syndrome s equals zero-syndrome decoding after translating by x, Hx = s."""
    rng = np.random.default_rng(4)
    H = graph256.dense().astype(np.int64)
    dec = BpDecoder(graph256)
    X = rng.integers(0, 2, (100, 256)).astype(np.uint8)
    S = (X @ H.T) % 2 == 1
    snr = rng.uniform(1.0, 2.5, (100, 1))
    llr = 2 * snr + 2 * np.sqrt(snr) * rng.standard_normal((100, 256))
    llr = llr * (1 - 2.0 * rng.integers(0, 2, (100, 256)))
    h_s, c_s, i_s = dec.decode(llr, S, 50)
    h_0, c_0, i_0 = dec.decode(llr * (1 - 2.0 * X), None, 50)
    assert np.array_equal(h_s, h_0 ^ X)
    assert np.array_equal(c_s, c_0) and np.array_equal(i_s, i_0)


# ---------------------------------------------------------------------------
# block-Markov pipeline

@pytest.mark.parametrize("genie", [False, True])
def test_noiseless_pipeline_is_error_free(cfg, genie):
    rep = run_block_markov(replace(cfg, noise_scale=0.0, blocks=10, trials=3,
                                   genie_relay=genie, genie_bin=genie))
    assert rep.relay_errors == rep.bin_errors == rep.dest_errors == rep.bit_errors == 0
    assert rep.message_blocks == 27 and rep.syndrome_violations == 0
    assert rep.snr_db == (math.inf, math.inf, math.inf)


def test_power_accounting(cfg):
    rep = run_block_markov(replace(cfg, trials=10))
    assert rep.source_power == pytest.approx(cfg.params.P, rel=0.02)
    assert rep.relay_power == pytest.approx(cfg.params.P1, rel=1e-12)


def test_genie_ordering_and_syndrome_consistency(cfg):
    sc = 1.6
    plain = run_block_markov(replace(cfg, trials=30, noise_scale=sc))
    genie = run_block_markov(replace(cfg, trials=30, noise_scale=sc, genie_relay=True,
                                     genie_bin=True))
    assert genie.relay_errors == 0 and genie.bin_errors == 0
    assert genie.dest_errors <= plain.dest_errors
    assert plain.syndrome_violations == 0 and genie.syndrome_violations == 0


def test_more_noise_is_not_better(cfg):
    reps = run_sweep(replace(cfg, trials=15), [1.0, 2.0])
    assert reps[0].dest_errors <= reps[1].dest_errors
    assert reps[0].relay_errors <= reps[1].relay_errors


def test_relay_link_is_degraded_relative_to_direct_link(small_code):
    """Same code and noise draws: decoding from y1 beats decoding the same word from y."""
    code, _ = small_code
    dec = BpDecoder(code.h1)
    rng = np.random.default_rng(9)
    a = math.sqrt(SPLIT.alpha * 4.0)
    w = rng.integers(0, 2, (20, code.message_length)).astype(np.uint8)
    c = code.encoder.encode(w)
    s = a * (1 - 2.0 * c)
    z1 = rng.standard_normal(s.shape) * 1.2
    z2 = rng.standard_normal(s.shape) * 1.2
    y1 = s + z1
    y = y1 + z2
    h1, _, _ = dec.decode(2 * a * y1 / 1.44, None, 50)
    h2, _, _ = dec.decode(2 * a * y / 2.88, None, 50)
    assert (h1 != c).mean() <= (h2 != c).mean()


def test_determinism_across_workers_and_chunks(cfg):
    base = run_block_markov(replace(cfg, trials=12, noise_scale=1.5, chunk=12, workers=1))
    other = run_block_markov(replace(cfg, trials=12, noise_scale=1.5, chunk=5, workers=3))
    assert base.csv_row() == other.csv_row()
    assert np.array_equal(base.iters_stage2, other.iters_stage2)


def test_config_mismatch(cfg, small_code):
    code, relay = small_code
    short = RelayCode(TannerGraph.from_adjacency(8, [[0, 1], [2, 3]]))
    with pytest.raises(ConfigMismatch):
        run_block_markov(replace(cfg, relay=short))
    with pytest.raises(ConfigMismatch):
        run_block_markov(replace(cfg, params=RelayChannelParams(5.0, 1.0, 1.0, 1.0)))
    with pytest.raises(ConfigMismatch):
        run_block_markov(replace(cfg, split=PowerSplit(0.5)))


def test_sim_config_validation(cfg):
    for kw in ({"blocks": 1}, {"trials": 0}, {"noise_scale": -1.0}):
        with pytest.raises(ValueError):
            replace(cfg, **kw)


def test_csv_output(tmp_path, cfg):
    reps = run_sweep(replace(cfg, trials=2), [1.0, 0.0])
    path = tmp_path / "out.csv"
    write_csv(path, reps[:1])
    write_csv(path, reps[1:])
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == CSV_COLUMNS and len(rows) == 2
    assert rows[1]["snr1_db"] == "inf"


@settings(max_examples=40)
@given(st.integers(0, 50), st.integers(1, 50))
def test_binomial_interval_contains_estimate(k, n):
    k = min(k, n)
    lo, hi = binomial_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
