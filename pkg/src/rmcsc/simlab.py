"""Channels, a sum-product decoder and a frame-error-rate harness.

Frames carry the all-zero codeword; with a linear code and a symmetric
channel the error statistics are the same for every codeword.  Decoding is
flooding log-domain belief propagation over a batch of frames at a time,
with each frame stopping as soon as its syndrome is zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from .protomatrix import DesignError, QcCode

log = logging.getLogger(__name__)

LLR_CLIP = 50.0
AWGN = "awgn"
BSC = "bsc"


@dataclass(frozen=True)
class ChannelSpec:
    """``kind`` is ``"awgn"`` (parameter Ec/N0 in dB, bipolar signaling) or ``"bsc"`` (crossover)."""

    kind: str
    parameter: float
    seed: int | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind in ("awgnc",):
            kind = AWGN
        object.__setattr__(self, "kind", kind)
        if kind not in (AWGN, BSC):
            raise DesignError(f"unknown channel {self.kind!r}")
        if kind == BSC and not 0 < self.parameter <= 0.5:
            raise DesignError(f"crossover probability must be in (0, 0.5], got {self.parameter}")
        if not math.isfinite(self.parameter):
            raise DesignError("channel parameter must be finite")


@dataclass
class FerPoint:
    parameter: float
    frames: int
    frame_errors: int
    bit_errors: int
    fer: float
    ci_low: float
    ci_high: float
    mean_iterations: float
    unconverged: int

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2

    @property
    def ber(self) -> float:
        return self.bit_errors / self.frames if self.frames else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def wilson_interval(errors: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval of a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    zc = norm.ppf(0.5 + confidence / 2)
    p = errors / n
    den = 1 + zc**2 / n
    centre = (p + zc**2 / (2 * n)) / den
    half = zc * math.sqrt(p * (1 - p) / n + zc**2 / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def channel_llrs(codewords: np.ndarray, spec: ChannelSpec, rng) -> np.ndarray:
    """Channel LLRs (positive favours 0) for a batch of codewords."""
    c = np.asarray(codewords)
    if spec.kind == AWGN:
        snr = 10 ** (spec.parameter / 10)
        y = (1.0 - 2.0 * c) + rng.normal(0.0, math.sqrt(1 / (2 * snr)), c.shape)
        llr = 4.0 * snr * y
    else:
        p = spec.parameter
        flips = rng.random(c.shape) < p
        mag = min(math.log((1 - p) / p), LLR_CLIP)
        llr = np.where(np.logical_xor(c, flips), -mag, mag)
    return np.clip(llr, -LLR_CLIP, LLR_CLIP)


def channel_transmit(codeword, spec: ChannelSpec, rng=None) -> np.ndarray:
    """LLR vector observed for ``codeword`` on the channel ``spec``."""
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    return channel_llrs(np.asarray(codeword)[None, :], spec, rng)[0]


def _phi(x):
    # phi(x) = -log tanh(x/2), its own inverse
    x = np.clip(x, 1e-12, LLR_CLIP)
    return np.log1p(2.0 / np.expm1(x))


class Decoder:
    """Batched flooding sum-product decoder for a fixed parity-check matrix."""

    def __init__(self, H, max_iters: int = 50):
        if max_iters < 1:
            raise DesignError("max_iters must be >= 1")
        H = sp.csr_matrix(H if not isinstance(H, QcCode) else H.H)
        H.sum_duplicates()
        H.data[:] = 1
        self.H = H.astype(np.int8)
        self.m, self.n = H.shape
        coo = H.tocoo()
        order = np.lexsort((coo.col, coo.row))
        self.rows = coo.row[order]
        self.cols = coo.col[order]
        E = len(self.rows)
        e = np.arange(E)
        self.C = sp.csr_matrix((np.ones(E), (self.rows, e)), shape=(self.m, E))
        self.V = sp.csr_matrix((np.ones(E), (self.cols, e)), shape=(self.n, E))
        self.max_iters = max_iters

    def decode_batch(self, llr: np.ndarray, *, early_stop: bool = True, max_iters: int | None = None):
        """Decode rows of ``llr``; returns ``(hard, converged, iterations, posterior)``."""
        llr = np.atleast_2d(np.asarray(llr, dtype=float))
        if not np.all(np.isfinite(llr)):
            raise DesignError("LLRs must be finite")
        iters = self.max_iters if max_iters is None else max_iters
        B = llr.shape[0]
        post = llr.copy()
        hard = post < 0
        converged = self._done(hard, post)
        used = np.zeros(B, dtype=int)
        active = np.flatnonzero(~converged) if early_stop else np.arange(B)
        v2c = llr[active][:, self.cols]
        c2v = np.zeros_like(v2c)
        for it in range(1, iters + 1):
            if not active.size:
                break
            mag = _phi(np.abs(v2c))
            neg = v2c < 0
            S = (self.C @ mag.T).T
            parity = ((self.C @ neg.T.astype(float)).T % 2).astype(bool)
            ext = _phi(np.maximum(S[:, self.rows] - mag, 0.0))
            # an input of exactly 0 comes back from the clipping as ~1e-12; keep it 0
            ext[ext < 1e-9] = 0.0
            c2v = np.where(parity[:, self.rows] ^ neg, -ext, ext)
            tot = llr[active] + (self.V @ c2v.T).T
            post[active] = tot
            used[active] = it
            h = tot < 0
            hard[active] = h
            ok = self._done(h, tot)
            converged[active] = ok
            v2c = np.clip(tot[:, self.cols] - c2v, -LLR_CLIP, LLR_CLIP)
            if early_stop and ok.any():
                keep = ~ok
                active, v2c = active[keep], v2c[keep]
        return hard, converged, used, post

    def _syndrome(self, hard):
        return (self.H @ hard.T.astype(np.int8)).T % 2 == 1

    def _done(self, hard, post):
        # a bit with posterior exactly 0 is undecided, so it blocks convergence
        return ~np.any(self._syndrome(hard), axis=1) & np.all(post != 0, axis=1)


def decode(code, llr, max_iters: int = 50, *, early_stop: bool = True):
    """Decode one frame: ``(estimate, converged, iterations)``."""
    dec = code if isinstance(code, Decoder) else Decoder(code, max_iters)
    hard, conv, used, _ = dec.decode_batch(np.asarray(llr)[None, :], early_stop=early_stop, max_iters=max_iters)
    return hard[0].astype(np.uint8), bool(conv[0]), int(used[0])


def _run_block(dec: Decoder, spec: ChannelSpec, seed: int, point: int, block: int, size: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, point, block]))
    llr = channel_llrs(np.zeros((size, dec.n), dtype=np.uint8), spec, rng)
    hard, conv, used, _ = dec.decode_batch(llr)
    wrong = hard.sum(axis=1)
    failed = (wrong > 0) | ~conv
    return int(failed.sum()), int(wrong.sum()), int(used.sum()), int((~conv).sum())


def simulate_fer(code, grid, *, min_errors: int = 100, max_frames: int = 10_000_000, seed: int = 0,
                 max_iters: int = 50, block: int = 32, workers: int = 1) -> list[FerPoint]:
    """Frame error rate at every channel point of ``grid``.

    Frames go out in blocks of ``block``; block ``b`` of point ``i`` draws
    its noise from ``SeedSequence([seed, i, b])``.  A point stops after the
    first block that brings the error count to ``min_errors`` or the frame
    count to ``max_frames``, so results do not depend on ``workers``.
    """
    grid = list(grid)
    if not grid:
        raise DesignError("empty channel grid")
    dec = code if isinstance(code, Decoder) else Decoder(code, max_iters)
    pool = None
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(workers)
    out = []
    try:
        for i, spec in enumerate(grid):
            fe = be = it = unconv = frames = 0
            b = 0
            while fe < min_errors and frames < max_frames:
                wave = list(range(b, b + max(workers, 1)))
                if pool:
                    res = list(pool.map(lambda k: _run_block(dec, spec, seed, i, k, block), wave))
                else:
                    res = [_run_block(dec, spec, seed, i, wave[0], block)]
                for r in res:
                    if fe >= min_errors or frames >= max_frames:
                        break
                    fe, be, it, unconv = fe + r[0], be + r[1], it + r[2], unconv + r[3]
                    frames += block
                    b += 1
            lo, hi = wilson_interval(fe, frames)
            out.append(FerPoint(spec.parameter, frames, fe, be, fe / frames, lo, hi, it / frames, unconv))
            log.info("%s %.4g: %d/%d frame errors", spec.kind, spec.parameter, fe, frames)
    finally:
        if pool:
            pool.shutdown()
    return out


def fer_csv(points: list[FerPoint]) -> str:
    lines = ["parameter,frames,frame_errors,fer,ci_low,ci_high"]
    for p in points:
        lines.append(f"{p.parameter:.6g},{p.frames},{p.frame_errors},{p.fer:.6g},{p.ci_low:.6g},{p.ci_high:.6g}")
    return "\n".join(lines) + "\n"
