"""Scale-invariant SDR: the reported metric, its improvement over the raw
mixture, and the differentiable training loss with its analytic gradient.

The reported metric is clamped to +/-100 dB so CSV aggregation never sees an
infinity; the training loss is instead stabilized with a small epsilon inside
the log ratio so it stays smooth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "METRIC_CLAMP_DB",
    "LOSS_EPS",
    "SiSdrResult",
    "si_sdr",
    "si_sdr_improvement",
    "neg_si_sdr_loss_and_grad",
    "si_sdr_rows",
    "neg_si_sdr_loss_and_grad_rows",
]

METRIC_CLAMP_DB = 100.0
LOSS_EPS = 1e-12
_LOG10_SCALE = 10.0 / np.log(10.0)


@dataclass(frozen=True)
class SiSdrResult:
    """Clamped SI-SDR value in dB plus the scale-projection coefficient."""

    value_db: float
    alpha: float


def _check_ref(ref: np.ndarray) -> float:
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("reference signal has zero energy; SI-SDR is undefined")
    return ref_energy


def si_sdr(est: np.ndarray, ref: np.ndarray) -> SiSdrResult:
    """SI-SDR of ``est`` against ``ref``, clamped to +/-100 dB.

    alpha = est.ref / |ref|^2 rescales the reference; the value compares the
    rescaled reference against the estimation error. A zero error returns
    +100 dB, a zero projection (orthogonal estimate) returns -100 dB.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"shapes differ: est {est.shape}, ref {ref.shape}")
    ref_energy = _check_ref(ref)
    alpha = float(np.dot(est, ref) / ref_energy)
    target = alpha * ref
    err_energy = float(np.dot(target - est, target - est))
    if err_energy == 0.0:
        return SiSdrResult(METRIC_CLAMP_DB, alpha)
    if alpha == 0.0:
        return SiSdrResult(-METRIC_CLAMP_DB, alpha)
    value = 10.0 * np.log10(np.dot(target, target) / err_energy)
    return SiSdrResult(float(np.clip(value, -METRIC_CLAMP_DB, METRIC_CLAMP_DB)), alpha)


def si_sdr_improvement(est: np.ndarray, ref: np.ndarray, mixture: np.ndarray) -> float:
    """SI-SDR gain of ``est`` over the unprocessed ``mixture`` (both clamped)."""
    return si_sdr(est, ref).value_db - si_sdr(mixture, ref).value_db


def neg_si_sdr_loss_and_grad(est: np.ndarray, ref: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative SI-SDR training loss and its exact gradient w.r.t. ``est``.

    The loss is the unclamped negative SI-SDR with ``LOSS_EPS`` added to the
    error energy inside the log ratio. With t = alpha*ref and e = t - est:

        loss = -(10/ln 10) * [ln |t|^2 - ln(|e|^2 + eps)]
        grad = -(20/ln 10) * [t / |t|^2 + e / (|e|^2 + eps)]

    using that e is exactly orthogonal to ref.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"shapes differ: est {est.shape}, ref {ref.shape}")
    ref_energy = _check_ref(ref)
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    err = target - est
    target_energy = np.dot(target, target)
    err_energy = np.dot(err, err) + LOSS_EPS
    with np.errstate(divide="ignore"):
        loss = -_LOG10_SCALE * (np.log(target_energy) - np.log(err_energy))
    grad = -2.0 * _LOG10_SCALE * (target / target_energy + err / err_energy)
    return float(loss), grad


def si_sdr_rows(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Row-wise clamped SI-SDR for [N, T] stacks."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 2:
        raise ValueError(f"need matching [N, T] stacks, got {est.shape} and {ref.shape}")
    return np.array([si_sdr(e, r).value_db for e, r in zip(est, ref)])


def neg_si_sdr_loss_and_grad_rows(
    est: np.ndarray, ref: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized loss/gradient over the leading axes of matching stacks.

    Accepts any shape [..., T]; returns per-row losses [...] and the gradient
    with the input's full shape.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"shapes differ: est {est.shape}, ref {ref.shape}")
    ref_energy = np.sum(ref**2, axis=-1)
    if np.any(ref_energy <= 0.0):
        raise ValueError("reference signal has zero energy; SI-SDR is undefined")
    alpha = np.sum(est * ref, axis=-1) / ref_energy
    target = alpha[..., None] * ref
    err = target - est
    target_energy = np.sum(target**2, axis=-1)
    err_energy = np.sum(err**2, axis=-1) + LOSS_EPS
    with np.errstate(divide="ignore"):
        losses = -_LOG10_SCALE * (np.log(target_energy) - np.log(err_energy))
    grads = -2.0 * _LOG10_SCALE * (
        target / target_energy[..., None] + err / err_energy[..., None]
    )
    return losses, grads
