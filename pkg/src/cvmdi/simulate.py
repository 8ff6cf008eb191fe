"""Monte-Carlo simulation of prepare-and-measure rounds.

Each round draws Gaussian displacements for both users, sends the
coherent states through thermal-loss links and records the relay's Bell
outcomes. Rounds are generated in fixed-size blocks, each with its own
Philox stream spawned from the batch seed, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .composable import EstimatedChannel, worst_case_estimators
from .protocol import MdiConfig

BLOCK = 1 << 16
COLUMNS = ("alpha_q", "alpha_p", "beta_q", "beta_p", "gamma_q", "gamma_p")
MAGIC = b"CVMDISIM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQQ4x")
MAX_KEY_BITS = 24


@dataclass(frozen=True)
class SimBatch:
    """Simulated rounds; columns are :data:`COLUMNS`."""

    seed: int
    rounds: int
    sigma2: float
    samples: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def cov(self) -> np.ndarray:
        return np.cov(self.samples, rowvar=False)

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, COLUMNS.index(name)]


def _simulate_block(config: MdiConfig, count: int, seed_seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    la, lb = config.effective_links()
    sd = math.sqrt(config.mu - 1.0)
    mod = rng.standard_normal((count, 4)) * sd
    noise_a = math.sqrt(la.tau + (1.0 - la.tau) * la.omega)
    noise_b = math.sqrt(lb.tau + (1.0 - lb.tau) * lb.omega)
    arrive_a = math.sqrt(la.tau) * mod[:, 0:2] + noise_a * rng.standard_normal((count, 2))
    arrive_b = math.sqrt(lb.tau) * mod[:, 2:4] + noise_b * rng.standard_normal((count, 2))
    det = math.sqrt(config.u_el) * rng.standard_normal((count, 2))
    out = np.empty((count, 6))
    out[:, :4] = mod
    out[:, 4] = (arrive_a[:, 0] - arrive_b[:, 0]) / math.sqrt(2.0) + det[:, 0]
    out[:, 5] = (arrive_a[:, 1] + arrive_b[:, 1]) / math.sqrt(2.0) + det[:, 1]
    return out


def simulate_rounds(config: MdiConfig, rounds: int, seed: int, threads: int = 1) -> SimBatch:
    """Simulate ``rounds`` rounds; bitwise reproducible for a given seed."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if config.attack is not None and config.attack.correlated:
        raise ValueError("the simulator models independent links only")
    n_blocks = -(-rounds // BLOCK)
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)
    sizes = [min(BLOCK, rounds - i * BLOCK) for i in range(n_blocks)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda a: _simulate_block(config, *a), zip(sizes, seqs)))
    else:
        parts = [_simulate_block(config, s, q) for s, q in zip(sizes, seqs)]
    return SimBatch(seed, rounds, config.mu - 1.0, np.concatenate(parts))


def pe_statistics(batch: SimBatch) -> dict:
    """Sufficient statistics for channel estimation, pooled over quadratures.

    Bob's q displacement enters the difference port with a minus sign, so
    its covariance is sign-flipped before pooling.
    """
    c = batch.cov
    aq, ap, bq, bp, gq, gp = range(6)
    return {
        "m": 2 * batch.rounds,
        "sigma2": batch.sigma2,
        "cov_a": 0.5 * (c[aq, gq] + c[ap, gp]),
        "cov_b": 0.5 * (-c[bq, gq] + c[bp, gp]),
        "var_gamma": 0.5 * (c[gq, gq] + c[gp, gp]),
        "resid_var": 0.5 * (_residual(c, [aq, bq], gq) + _residual(c, [ap, bp], gp)),
    }


def _residual(c: np.ndarray, x: list[int], y: int) -> float:
    """Least-squares residual variance of ``y`` regressed on ``x``."""
    cxy = c[x, y]
    return float(c[y, y] - cxy @ np.linalg.solve(c[np.ix_(x, x)], cxy))


def estimate_channel(batch: SimBatch, eps_pe: float = 0.5) -> EstimatedChannel:
    """Point estimates (``eps_pe = 0.5``) or worst-case estimates of the effective channel."""
    if batch.rounds < 100:
        raise ValueError("channel estimation needs at least 100 rounds")
    if batch.sigma2 <= 0.0:
        raise ValueError("channel estimation needs a non-zero modulation")
    return worst_case_estimators(pe_statistics(batch), eps_pe)


def _conditional_mi(samples: np.ndarray) -> float:
    c = np.cov(samples, rowvar=False)
    g = c[4:, 4:]
    x = c[:4, :4] - c[:4, 4:] @ np.linalg.solve(g, c[4:, :4])
    sa, la = np.linalg.slogdet(x[:2, :2])
    sb, lb = np.linalg.slogdet(x[2:, 2:])
    sj, lj = np.linalg.slogdet(x)
    if min(sa, sb, sj) <= 0:
        raise np.linalg.LinAlgError("singular empirical covariance")
    return 0.5 * (la + lb - lj) / math.log(2.0)


def empirical_mutual_information(batch: SimBatch, sub_batches: int = 20) -> tuple[float, float]:
    """Gaussian plug-in ``I(alpha : beta | gamma)`` and its standard error.

    The standard error comes from the spread over ``sub_batches`` disjoint
    slices of the data.
    """
    mi = _conditional_mi(batch.samples)
    parts = np.array_split(batch.samples, sub_batches)
    vals = np.array([_conditional_mi(p) for p in parts])
    return mi, float(vals.std(ddof=1) / math.sqrt(sub_batches))


def discretize(values: np.ndarray, d_bits: int) -> np.ndarray:
    """Bin indices of ``2**d_bits`` uniform bins over mean +/- 6 standard deviations."""
    if d_bits > MAX_KEY_BITS:
        raise ValueError(f"d_bits must be <= {MAX_KEY_BITS}")
    if d_bits < 1:
        raise ValueError("d_bits must be positive")
    values = np.asarray(values, dtype=float)
    mu, sd = values.mean(), values.std()
    if sd == 0.0:
        return np.zeros(len(values), dtype=np.int64)
    edges = np.linspace(mu - 6 * sd, mu + 6 * sd, 2**d_bits + 1)
    return np.clip(np.searchsorted(edges, values, side="right") - 1, 0, 2**d_bits - 1)


def empirical_key_entropy(data, d_bits: int, column: str = "alpha_q") -> float:
    """Plug-in Shannon entropy (bits) of the discretized key variable.

    ``data`` is a :class:`SimBatch` (the encoder's ``column`` is used) or
    a 1-D array.
    """
    values = data.column(column) if isinstance(data, SimBatch) else np.asarray(data, dtype=float)
    bins = discretize(values, d_bits)
    counts = np.bincount(bins, minlength=2**d_bits)
    p = counts[counts > 0] / len(values)
    return float(-(p * np.log2(p)).sum())


def discretized_gaussian_entropy(d_bits: int) -> float:
    """Exact entropy of a standard normal binned on ``2**d_bits`` bins over +/- 6."""
    from scipy.stats import norm

    edges = np.linspace(-6.0, 6.0, 2**d_bits + 1)
    cdf = norm.cdf(edges)
    p = np.diff(cdf)
    p[0] += cdf[0]
    p[-1] += 1.0 - cdf[-1]
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def write_dump(batch: SimBatch, path) -> None:
    """Binary little-endian dump: 32-byte header then 6 float64 per round."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, batch.rounds, batch.seed & (2**64 - 1)))
        fh.write(np.ascontiguousarray(batch.samples, dtype="<f8").tobytes())


def read_dump(path, sigma2: float = float("nan")) -> SimBatch:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for a simulation dump")
    magic, version, rounds, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a simulation dump (bad magic)")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dump version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 6 * rounds:
        raise ValueError("dump length does not match the header")
    return SimBatch(seed, rounds, sigma2, body.reshape(rounds, 6).astype(float))
