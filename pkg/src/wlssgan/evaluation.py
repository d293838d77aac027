"""Synthesis-quality metrics on nearest-neighbour (synthetic, real) pairs.

Each synthetic signal is paired with its L2-nearest real signal; AD, CS and
PCC are computed per pair and averaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Generator
from .nn.tensor import ContractError, Tensor, no_grad

CSV_HEADER = "n_pairs,ad,cs,pcc"


def _batch(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3:
        a = a.reshape(a.shape[0], -1)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ContractError(f"{name} must be a nonempty batch of signals")
    return a


def pair_nearest(synthetic, real, chunk: int = 512) -> np.ndarray:
    """Index of the L2-nearest real signal for every synthetic one; ties go to the lowest index."""
    s, r = _batch(synthetic, "synthetic"), _batch(real, "real")
    if s.shape[1] != r.shape[1]:
        raise ContractError(f"signal lengths differ: {s.shape[1]} vs {r.shape[1]}")
    r_sq = np.einsum("ij,ij->i", r, r)
    out = np.empty(len(s), dtype=np.int64)
    for start in range(0, len(s), chunk):
        blk = s[start : start + chunk]
        d2 = r_sq[None, :] - 2.0 * (blk @ r.T) + np.einsum("ij,ij->i", blk, blk)[:, None]
        best = d2.min(axis=1)
        # the expanded form carries rounding error, so near-ties are settled exactly
        slack = 1e-9 * (1.0 + np.abs(best))
        for i, row in enumerate(d2):
            cand = np.flatnonzero(row <= best[i] + slack[i])
            if len(cand) == 1:
                out[start + i] = cand[0]
            else:
                exact = np.sum((r[cand] - blk[i]) ** 2, axis=1)
                out[start + i] = cand[np.argmin(exact)]
    return out


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def absolute_distance(a, b) -> float:
    """Mean absolute element-wise difference."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def cosine_similarity(a, b) -> float:
    a, b = _pair(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ContractError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def pearson(a, b) -> float:
    """Cosine similarity of the mean-centered signals."""
    a, b = _pair(a, b)
    ac, bc = a - a.mean(), b - b.mean()
    if not np.any(ac) or not np.any(bc):
        raise ContractError("Pearson correlation of a constant signal")
    return cosine_similarity(ac, bc)


@dataclass(frozen=True)
class SynthesisReport:
    ad: float
    cs: float
    pcc: float
    n_pairs: int

    def csv_row(self) -> str:
        return f"{self.n_pairs},{self.ad!r},{self.cs!r},{self.pcc!r}"

    def to_csv(self) -> str:
        return f"{CSV_HEADER}\n{self.csv_row()}\n"


def generate_signals(generator: Generator, n: int, seed: int = 0, batch_size: int = 256) -> np.ndarray:
    """Eval-mode samples from the generator, shaped [n, 512]."""
    if n <= 0:
        raise ContractError("n must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, generator.latent_dim, 1)).astype(generator.dtype)
    out = []
    with no_grad():
        for start in range(0, n, batch_size):
            out.append(generator(Tensor(z[start : start + batch_size]), training=False).data[:, 0, :])
    return np.concatenate(out)


def synthesis_report(generator, real_train, n_synth: int = 2100, seed: int = 0) -> SynthesisReport:
    """Mean AD / CS / PCC between ``n_synth`` generated signals and their nearest real ones.

    ``generator`` is a :class:`Generator` or any callable ``(n, rng) -> [n, 512]``.
    """
    if n_synth <= 0:
        raise ContractError("n_synth must be positive")
    if isinstance(generator, Generator):
        synth = generate_signals(generator, n_synth, seed)
    else:
        synth = np.asarray(generator(n_synth, np.random.default_rng(seed)))
    synth = _batch(synth, "synthetic")
    real = _batch(real_train, "real")
    idx = pair_nearest(synth, real)
    ad = [absolute_distance(s, real[j]) for s, j in zip(synth, idx)]
    cs = [cosine_similarity(s, real[j]) for s, j in zip(synth, idx)]
    pcc = [pearson(s, real[j]) for s, j in zip(synth, idx)]
    return SynthesisReport(float(np.mean(ad)), float(np.mean(cs)), float(np.mean(pcc)), len(synth))
