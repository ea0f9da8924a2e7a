"""Waveform containers plus the mixing, batch-permutation, mixture-consistency
and SNR primitives shared by every other module.

All values are immutable after construction and all operations are pure
functions, so everything here is trivially thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CONSISTENCY_TOL",
    "WaveBatch",
    "SourceEstimates",
    "BatchPermutation",
    "mix",
    "sample_permutation",
    "permute_batch",
    "mixture_consistency",
    "snr_db",
    "rescale_noise_to_snr",
]

# Max deviation allowed between sum-of-sources and the reference mixture.
CONSISTENCY_TOL = 1e-6


def _as_locked_f64(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class WaveBatch:
    """A [B, T] block of time-domain signals.

    ``sample_rate`` is carried as metadata only; nothing in this package ever
    resamples. Entries must be finite and every row shares the same length.
    """

    data: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"WaveBatch.data must be [B, T], got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"WaveBatch needs B >= 1 and T >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("WaveBatch.data contains non-finite entries")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "data", _as_locked_f64(data))

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SourceEstimates:
    """An [M, B, T] stack of estimated sources.

    When ``consistent_with`` is set the sources are guaranteed (checked at
    construction) to sum to that mixture within ``CONSISTENCY_TOL``.
    """

    sources: np.ndarray
    consistent_with: np.ndarray | None = None

    def __post_init__(self) -> None:
        src = np.asarray(self.sources, dtype=np.float64)
        if src.ndim != 3:
            raise ValueError(f"SourceEstimates.sources must be [M, B, T], got {src.shape}")
        if not np.isfinite(src).all():
            raise ValueError("SourceEstimates.sources contains non-finite entries")
        object.__setattr__(self, "sources", _as_locked_f64(src))
        if self.consistent_with is not None:
            ref = np.asarray(self.consistent_with, dtype=np.float64)
            if ref.shape != src.shape[1:]:
                raise ValueError(
                    f"reference mixture shape {ref.shape} does not match sources {src.shape}"
                )
            gap = np.max(np.abs(src.sum(axis=0) - ref))
            if gap > CONSISTENCY_TOL:
                raise ValueError(
                    f"sources do not sum to the reference mixture (max gap {gap:.3e})"
                )
            object.__setattr__(self, "consistent_with", _as_locked_f64(ref))

    @property
    def num_slots(self) -> int:
        return self.sources.shape[0]


@dataclass(frozen=True)
class BatchPermutation:
    """A bijection on batch indices, stored as an index table.

    Row ``b`` of a permuted batch is row ``perm[b]`` of the original.
    """

    perm: np.ndarray

    def __post_init__(self) -> None:
        perm = np.asarray(self.perm, dtype=np.intp)
        if perm.ndim != 1 or perm.size < 1:
            raise ValueError(f"perm must be a 1-D index table, got shape {perm.shape}")
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("perm is not a bijection on {0..B-1}")
        perm = perm.copy()
        perm.flags.writeable = False
        object.__setattr__(self, "perm", perm)

    @property
    def size(self) -> int:
        return self.perm.size

    def inverse(self) -> "BatchPermutation":
        return BatchPermutation(np.argsort(self.perm))

    @classmethod
    def identity(cls, size: int) -> "BatchPermutation":
        return cls(np.arange(size))


def mix(speech: WaveBatch, noise: WaveBatch) -> WaveBatch:
    """Elementwise sum of two equally shaped batches."""
    if speech.data.shape != noise.data.shape:
        raise ValueError(
            f"cannot mix batches of shapes {speech.data.shape} and {noise.data.shape}"
        )
    if speech.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rates differ: {speech.sample_rate} vs {noise.sample_rate}"
        )
    return WaveBatch(speech.data + noise.data, speech.sample_rate)


def sample_permutation(rng: np.random.Generator, batch: int) -> BatchPermutation:
    """Draw a permutation uniformly over all ``batch!`` possibilities."""
    if batch < 1:
        raise ValueError(f"batch size must be >= 1, got {batch}")
    return BatchPermutation(rng.permutation(batch))


def permute_batch(x: WaveBatch, p: BatchPermutation) -> WaveBatch:
    """Reorder batch rows: output row b is input row p.perm[b]."""
    if x.batch != p.size:
        raise ValueError(f"batch size {x.batch} does not match permutation size {p.size}")
    return WaveBatch(x.data[p.perm], x.sample_rate)


def mixture_consistency(est: SourceEstimates, mixture: WaveBatch) -> SourceEstimates:
    """Project source estimates so they sum exactly to the mixture.

    The per-sample residual (mixture minus sum of sources) is split uniformly
    across the M slots, which is the minimal unweighted L2 correction subject
    to the sum constraint. Idempotent.
    """
    src = est.sources
    if src.shape[1:] != mixture.data.shape:
        raise ValueError(
            f"sources shape {src.shape} incompatible with mixture {mixture.data.shape}"
        )
    m_slots = src.shape[0]
    residual = mixture.data - src.sum(axis=0)
    projected = src + residual[None, :, :] / m_slots
    return SourceEstimates(projected, consistent_with=mixture.data)


def snr_db(signal: WaveBatch, noise: WaveBatch) -> np.ndarray:
    """Per-item SNR in dB: 10*log10(|s|^2 / |n|^2)."""
    if signal.data.shape != noise.data.shape:
        raise ValueError(
            f"shapes differ: signal {signal.data.shape}, noise {noise.data.shape}"
        )
    sig_energy = np.sum(signal.data**2, axis=1)
    noise_energy = np.sum(noise.data**2, axis=1)
    if np.any(noise_energy <= 0.0):
        raise ValueError("noise has zero energy in at least one batch item")
    return 10.0 * np.log10(sig_energy / noise_energy)


def rescale_noise_to_snr(
    signal: WaveBatch, noise: WaveBatch, target_db: float | np.ndarray
) -> WaveBatch:
    """Scale each noise row so snr_db(signal, scaled) hits target_db exactly.

    ``target_db`` may be a scalar or a per-item vector.
    """
    current = snr_db(signal, noise)
    target = np.broadcast_to(np.asarray(target_db, dtype=np.float64), current.shape)
    gain = 10.0 ** ((current - target) / 20.0)
    return WaveBatch(noise.data * gain[:, None], noise.sample_rate)
