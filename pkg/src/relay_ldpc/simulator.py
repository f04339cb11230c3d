"""Monte Carlo simulation of block-Markov decode-and-forward with LDPC codes.

Bit convention: bit 0 -> +1, bit 1 -> -1; LLR = log P(0)/P(1).

Per block i (1..B), with u_i the relay codeword carrying bin index s_{i-1}:

    source   x_i  = a (1 - 2 c_i) + sqrt((1-alpha) P) (1 - 2 u_i),  a = sqrt(alpha P)
    relay    x1_i = sqrt(P1) (1 - 2 u_i)
    y1_i = x_i + z1,   y_i = y1_i + x1_i + z2

The relay decodes c_i from y1_i (its own u_i removed), bins it and sends the
bin index in block i+1. The destination first decodes u_i from y_i (stage 1),
then returns to y_{i-1}, removes b (1 - 2 u_{i-1}) with b = sqrt(P1) +
sqrt((1-alpha) P) and decodes c_{i-1} with the extra checks fixed to s_{i-1}
(stage 2). Block 1 carries the all-zero bin index; the message of block B is
never resolved and is not counted.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.stats import beta as beta_dist

from .channel import PowerSplit, RelayChannelParams, snr_triple
from .codegen import RelayCode, TannerGraph, TwoLevelCode
from .errors import ConfigMismatch

LLR_LIMIT = 50.0
MSG_MIN = 1e-12
MSG_MAX = 40.0
MIN_VARIANCE = 1e-12
NOISELESS_SCALE = 1e-30

CSV_COLUMNS = ["noise_scale", "snr1_db", "snr2_db", "snr3_db", "trials", "relay_bler",
               "bin_bler", "dest_bler", "e2e_ber", "mean_bp_iters_stage1",
               "mean_bp_iters_stage2", "genie_relay", "genie_bin", "seed"]


# ---------------------------------------------------------------------------
# modulation and channel

def modulate_superposition(c_new, c_relay, params: RelayChannelParams, split: PowerSplit):
    """Source samples and the relay's own samples for one block."""
    c_new = np.asarray(c_new)
    c_relay = np.asarray(c_relay)
    if c_new.shape != c_relay.shape:
        raise ValueError("codeword shapes differ")
    a = math.sqrt(split.alpha * params.P)
    cop = math.sqrt((1.0 - split.alpha) * params.P)
    s_new = 1.0 - 2.0 * c_new
    s_rel = 1.0 - 2.0 * c_relay
    return a * s_new + cop * s_rel, math.sqrt(params.P1) * s_rel


def transmit(x, x1, params: RelayChannelParams, rng):
    """Degraded cascade y1 = x + z1, y = y1 + x1 + z2."""
    x = np.asarray(x, dtype=float)
    z1 = rng.standard_normal(x.shape) * math.sqrt(params.N1)
    z2 = rng.standard_normal(x.shape) * math.sqrt(params.N2)
    y1 = x + z1
    return y1, y1 + x1 + z2


def _clip(llr):
    return np.clip(np.nan_to_num(llr, nan=0.0), -LLR_LIMIT, LLR_LIMIT)


def llr_relay(y1, known_relay_bits, params: RelayChannelParams, split: PowerSplit):
    cop = math.sqrt((1.0 - split.alpha) * params.P)
    a = math.sqrt(split.alpha * params.P)
    resid = np.asarray(y1) - cop * (1.0 - 2.0 * np.asarray(known_relay_bits))
    return _clip(2.0 * a * resid / max(params.N1, MIN_VARIANCE))


def _logcosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def llr_destination_stage1(y, params: RelayChannelParams, split: PowerSplit,
                           mode: str = "mixture"):
    """LLR of the relay-codeword bit with the fresh codeword treated as noise.

    "mixture": the fresh codeword is +-a equiprobable (exact);
    "gaussian": it is folded into the noise as extra variance a^2.
    """
    y = np.asarray(y, dtype=float)
    a = math.sqrt(split.alpha * params.P)
    b = math.sqrt(params.P1) + math.sqrt((1.0 - split.alpha) * params.P)
    var = max(params.N1 + params.N2, MIN_VARIANCE)
    if mode == "gaussian":
        return _clip(2.0 * b * y / (var + a * a))
    if mode != "mixture":
        raise ValueError(f"unknown stage-1 mode {mode!r}")
    return _clip(2.0 * b * y / var + _logcosh(a * (y - b) / var) - _logcosh(a * (y + b) / var))


def llr_destination_stage2(y_prev, relay_bits_prev, params, split):
    a = math.sqrt(split.alpha * params.P)
    b = math.sqrt(params.P1) + math.sqrt((1.0 - split.alpha) * params.P)
    resid = np.asarray(y_prev) - b * (1.0 - 2.0 * np.asarray(relay_bits_prev))
    return _clip(2.0 * a * resid / max(params.N1 + params.N2, MIN_VARIANCE))


# ---------------------------------------------------------------------------
# belief propagation with a target syndrome

def _phi(x):
    x = np.clip(x, MSG_MIN, MSG_MAX)
    return -np.log(np.tanh(0.5 * x))


class BpDecoder:
    """Flooding sum-product decoder on a Tanner graph, batched over rows."""

    def __init__(self, graph: TannerGraph):
        self.graph = graph
        chk, var = graph.edge_arrays()
        self.chk, self.var = chk, var
        E = chk.size
        ones = np.ones(E)
        self.to_var = sparse.csr_matrix((ones, (np.arange(E), var)), shape=(E, graph.n))
        self.to_chk = sparse.csr_matrix((ones, (np.arange(E), chk)), shape=(E, graph.m))
        self.H = graph.matrix().astype(np.float64).T.tocsr()  # n x m

    def _var_sums(self, r):
        return np.asarray((self.to_var.T @ r.T).T)

    def _chk_sums(self, x):
        return np.asarray((self.to_chk.T @ x.T).T)

    def decode(self, llr, syndrome=None, max_iters: int = 100):
        """Returns (hard bits, converged flags, iteration counts).

        At least one iteration is always run; rows freeze at the first
        iteration whose hard decisions satisfy the target syndrome.
        """
        llr = np.atleast_2d(np.asarray(llr, dtype=np.float64))
        rows = llr.shape[0]
        m = self.graph.m
        if syndrome is None:
            syn = np.zeros((rows, m), dtype=bool)
        else:
            syn = np.broadcast_to(np.asarray(syndrome, dtype=bool), (rows, m)).copy()
        out = np.zeros((rows, self.graph.n), dtype=np.uint8)
        converged = np.zeros(rows, dtype=bool)
        iters = np.full(rows, max_iters, dtype=np.int64)
        active = np.arange(rows)
        r = np.zeros((rows, self.chk.size))
        L = llr
        tie = np.signbit(llr)
        hard = None
        for it in range(1, max(1, max_iters) + 1):
            tot = L + self._var_sums(r)
            q = tot[:, self.var] - r
            mag = _phi(np.abs(q))
            neg = np.signbit(q)
            S = self._chk_sums(mag)
            parity = (np.rint(self._chk_sums(neg.astype(np.float64))).astype(np.int64) & 1) == 1
            parity ^= syn
            rmag = _phi(S[:, self.chk] - mag)
            flip = parity[:, self.chk] ^ neg
            r = np.where(flip, -rmag, rmag)
            tot = L + self._var_sums(r)
            hard = (tot < 0) | ((tot == 0) & tie)
            check = (np.rint(np.asarray((self.H.T @ hard.T.astype(np.float64)).T))
                     .astype(np.int64) & 1) == 1
            ok = np.all(check == syn, axis=1)
            if ok.any():
                idx = active[ok]
                out[idx] = hard[ok]
                converged[idx] = True
                iters[idx] = it
                keep = ~ok
                active, r, L, tie, syn = active[keep], r[keep], L[keep], tie[keep], syn[keep]
                hard = hard[keep]
            if active.size == 0:
                break
        if active.size:
            out[active] = hard
        return out, converged, iters


def bp_decode_syndrome(graph: TannerGraph, llr, syndrome=None, max_iters: int = 100):
    return BpDecoder(graph).decode(llr, syndrome, max_iters)


# ---------------------------------------------------------------------------
# block-Markov run

@dataclass
class SimConfig:
    params: RelayChannelParams
    split: PowerSplit
    code: TwoLevelCode
    relay: RelayCode
    blocks: int = 4
    max_bp_iters: int = 100
    seed: int = 0
    genie_relay: bool = False
    genie_bin: bool = False
    trials: int = 1
    noise_scale: float = 1.0
    stage1_mode: str = "mixture"
    workers: int = 1
    chunk: int = 50
    design: object = None

    def __post_init__(self):
        if self.blocks < 2:
            raise ValueError("need at least two blocks")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass
class SimReport:
    noise_scale: float
    snr_db: tuple
    trials: int
    blocks: int
    message_blocks: int
    relay_errors: int
    bin_errors: int
    dest_errors: int
    bit_errors: int
    message_bits: int
    iters_relay: np.ndarray = field(repr=False)
    iters_stage1: np.ndarray = field(repr=False)
    iters_stage2: np.ndarray = field(repr=False)
    genie_relay: bool = False
    genie_bin: bool = False
    seed: int = 0
    source_power: float = float("nan")
    relay_power: float = float("nan")
    syndrome_violations: int = 0

    @property
    def relay_bler(self) -> float:
        return self.relay_errors / self.message_blocks

    @property
    def bin_bler(self) -> float:
        return self.bin_errors / self.message_blocks

    @property
    def dest_bler(self) -> float:
        return self.dest_errors / self.message_blocks

    @property
    def e2e_ber(self) -> float:
        return self.bit_errors / self.message_bits if self.message_bits else 0.0

    @property
    def rate_factor(self) -> float:
        return (self.blocks - 1) / self.blocks

    @staticmethod
    def _mean(hist):
        hist = np.asarray(hist)
        return float((np.arange(hist.size) * hist).sum() / hist.sum()) if hist.sum() else 0.0

    @property
    def mean_iters_stage1(self) -> float:
        return self._mean(self.iters_stage1)

    @property
    def mean_iters_stage2(self) -> float:
        return self._mean(self.iters_stage2)

    def interval(self, which: str = "dest", conf: float = 0.95):
        k = {"relay": self.relay_errors, "bin": self.bin_errors,
             "dest": self.dest_errors}[which]
        return binomial_interval(k, self.message_blocks, conf)

    def csv_row(self) -> dict:
        return {
            "noise_scale": repr(float(self.noise_scale)),
            "snr1_db": f"{self.snr_db[0]:.6f}", "snr2_db": f"{self.snr_db[1]:.6f}",
            "snr3_db": f"{self.snr_db[2]:.6f}", "trials": self.trials,
            "relay_bler": f"{self.relay_bler:.6g}", "bin_bler": f"{self.bin_bler:.6g}",
            "dest_bler": f"{self.dest_bler:.6g}", "e2e_ber": f"{self.e2e_ber:.6g}",
            "mean_bp_iters_stage1": f"{self.mean_iters_stage1:.4f}",
            "mean_bp_iters_stage2": f"{self.mean_iters_stage2:.4f}",
            "genie_relay": int(self.genie_relay), "genie_bin": int(self.genie_bin),
            "seed": self.seed,
        }


def binomial_interval(k: int, n: int, conf: float = 0.95):
    """Clopper-Pearson interval for k successes out of n."""
    a = 1.0 - conf
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def _check_consistency(cfg: SimConfig):
    code, relay = cfg.code, cfg.relay
    if code.n != relay.n:
        raise ConfigMismatch(f"block lengths differ: {code.n} vs {relay.n}")
    if relay.message_length != code.k2:
        raise ConfigMismatch(
            f"relay code carries {relay.message_length} bits, bin index has {code.k2}")
    design = cfg.design
    if design is None:
        return
    digest = code.meta.get("design_digest")
    if digest is not None and digest != design.digest():
        raise ConfigMismatch("code was built from a different design")
    chan = design.meta.get("channel")
    if chan is not None and chan != cfg.params.to_dict():
        raise ConfigMismatch(f"design channel {chan} differs from {cfg.params.to_dict()}")
    alpha = design.meta.get("alpha")
    if alpha is not None and abs(alpha - cfg.split.alpha) > 1e-12:
        raise ConfigMismatch(f"design alpha {alpha} differs from {cfg.split.alpha}")


class _Decoders:
    def __init__(self, code: TwoLevelCode, relay: RelayCode):
        self.h1 = BpDecoder(code.h1)
        self.stacked = BpDecoder(code.stacked)
        self.relay = BpDecoder(relay.graph)


def _run_chunk(cfg: SimConfig, dec: _Decoders, trial_ids):
    code, relay = cfg.code, cfg.relay
    # a zero scale stands for the noiseless limit; keep variances positive
    params = cfg.params.scaled(max(cfg.noise_scale, NOISELESS_SCALE))
    split = cfg.split
    n, B, T = code.n, cfg.blocks, len(trial_ids)
    rngs = [np.random.default_rng([cfg.seed, int(t)]) for t in trial_ids]
    k_msg = code.message_length
    iters_hist = [np.zeros(cfg.max_bp_iters + 1, np.int64) for _ in range(3)]
    counts = dict(relay=0, bin=0, dest=0, bits=0, viol=0)
    pw_src = pw_rel = 0.0

    zero_cw = np.zeros((T, n), dtype=np.uint8)
    u_src = zero_cw        # relay codeword as superposed by the source (true s)
    u_rel = zero_cw        # relay codeword actually sent by the relay
    u_dec_prev = zero_cw   # destination's estimate of the previous block's relay codeword
    y_prev = None
    w_prev = None
    for i in range(1, B + 1):
        w = np.stack([g.integers(0, 2, k_msg, dtype=np.uint8) for g in rngs])
        c = code.encoder.encode(w)
        x, _ = modulate_superposition(c, u_src, params, split)
        x1 = math.sqrt(params.P1) * (1.0 - 2.0 * u_rel.astype(float))
        z1 = np.stack([g.standard_normal(n) for g in rngs])
        z2 = np.stack([g.standard_normal(n) for g in rngs])
        y1 = x + z1 * math.sqrt(params.N1)
        y = y1 + x1 + z2 * math.sqrt(params.N2)
        pw_src += float(np.mean(x * x))
        pw_rel += float(np.mean(x1 * x1))

        # relay
        if cfg.genie_relay:
            c_hat = c
        else:
            hard, _, it = dec.h1.decode(llr_relay(y1, u_rel, params, split),
                                        None, cfg.max_bp_iters)
            iters_hist[0] += np.bincount(it, minlength=cfg.max_bp_iters + 1)
            c_hat = code.encoder.encode(code.encoder.extract(hard))
        if i < B:
            counts["relay"] += int(np.any(c_hat != c, axis=1).sum())
        s_hat = code.h2.syndrome(c_hat)
        s_true = code.h2.syndrome(c)
        u_rel_next = relay.encoder.encode(s_hat)
        u_src_next = relay.encoder.encode(s_true)

        # destination
        if i >= 2:
            if cfg.genie_bin:
                u_dec = u_rel
            else:
                l1 = llr_destination_stage1(y, params, split, cfg.stage1_mode)
                hard, _, it = dec.relay.decode(l1, None, cfg.max_bp_iters)
                iters_hist[1] += np.bincount(it, minlength=cfg.max_bp_iters + 1)
                u_dec = relay.encoder.encode(relay.encoder.extract(hard))
            s_dec = relay.encoder.extract(u_dec)
            s_sent = relay.encoder.extract(u_rel)
            counts["bin"] += int(np.any(s_dec != s_sent, axis=1).sum())

            l2 = llr_destination_stage2(y_prev, u_dec_prev, params, split)
            target = np.concatenate([np.zeros((T, code.k1), np.uint8), s_dec], axis=1)
            hard, conv, it = dec.stacked.decode(l2, target, cfg.max_bp_iters)
            iters_hist[2] += np.bincount(it, minlength=cfg.max_bp_iters + 1)
            if conv.any():
                ok1 = ~np.any(code.h1.syndrome(hard[conv]), axis=1)
                ok2 = np.all(code.h2.syndrome(hard[conv]) == s_dec[conv], axis=1)
                counts["viol"] += int((~(ok1 & ok2)).sum())
            w_dec = code.encoder.extract(hard)
            diff = w_dec != w_prev
            counts["dest"] += int(np.any(diff, axis=1).sum())
            counts["bits"] += int(diff.sum())
            u_dec_prev = u_dec
        y_prev, w_prev = y, w
        u_src, u_rel = u_src_next, u_rel_next
    return counts, iters_hist, pw_src / B, pw_rel / B


def _worker_count(requested: int) -> int:
    env = os.environ.get("RELAY_LDPC_THREADS")
    if env is not None and env.strip() != "":
        cap = int(env)
        cap = os.cpu_count() or 1 if cap == 0 else cap
        return max(1, min(requested, cap))
    return max(1, requested)


def run_block_markov(cfg: SimConfig, decoders: _Decoders | None = None) -> SimReport:
    _check_consistency(cfg)
    dec = decoders if decoders is not None else _Decoders(cfg.code, cfg.relay)
    chunks = [list(range(s, min(s + cfg.chunk, cfg.trials)))
              for s in range(0, cfg.trials, cfg.chunk)]
    workers = _worker_count(cfg.workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda ids: _run_chunk(cfg, dec, ids), chunks))
    else:
        results = [_run_chunk(cfg, dec, ids) for ids in chunks]

    tot = dict(relay=0, bin=0, dest=0, bits=0, viol=0)
    hists = [np.zeros(cfg.max_bp_iters + 1, np.int64) for _ in range(3)]
    ps = pr = 0.0
    for (cnt, hist, a, b), ids in zip(results, chunks):
        for k in tot:
            tot[k] += cnt[k]
        for h, g in zip(hists, hist):
            h += g
        ps += a * len(ids)
        pr += b * len(ids)
    scaled = cfg.params.scaled(cfg.noise_scale) if cfg.noise_scale > 0 else None
    snr_db = (snr_triple(scaled, cfg.split).db() if scaled is not None
              else (math.inf, math.inf, math.inf))
    msg_blocks = cfg.trials * (cfg.blocks - 1)
    return SimReport(
        noise_scale=cfg.noise_scale, snr_db=snr_db, trials=cfg.trials, blocks=cfg.blocks,
        message_blocks=msg_blocks, relay_errors=tot["relay"], bin_errors=tot["bin"],
        dest_errors=tot["dest"], bit_errors=tot["bits"],
        message_bits=msg_blocks * cfg.code.message_length,
        iters_relay=hists[0], iters_stage1=hists[1], iters_stage2=hists[2],
        genie_relay=cfg.genie_relay, genie_bin=cfg.genie_bin, seed=cfg.seed,
        source_power=ps / cfg.trials, relay_power=pr / cfg.trials,
        syndrome_violations=tot["viol"])


def run_sweep(cfg: SimConfig, noise_scales) -> list[SimReport]:
    dec = _Decoders(cfg.code, cfg.relay)
    return [run_block_markov(replace(cfg, noise_scale=float(s)), dec) for s in noise_scales]


def write_csv(path, reports, append: bool = True):
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if not (append and exists):
            w.writeheader()
        for rep in reports:
            w.writerow(rep.csv_row())
