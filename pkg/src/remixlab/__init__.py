"""remixlab: desk-scale self-supervised speech-enhancement laboratory.

Synthetic two-domain audio, a small trainable time-domain separator with
exact gradients, supervised / mixture-of-mixtures / bootstrapped-remixing
training loops, teacher-update protocols, and error-decomposition analysis.
"""

from .signal_core import (
    BatchPermutation,
    SourceEstimates,
    WaveBatch,
    mix,
    mixture_consistency,
    permute_batch,
    rescale_noise_to_snr,
    sample_permutation,
    snr_db,
)
from .metrics import SiSdrResult, neg_si_sdr_loss_and_grad, si_sdr, si_sdr_improvement
from .separator import (
    ModelConfig,
    ModelState,
    backward,
    blend_params,
    forward,
    grad_check,
    grow_depth,
    init_model,
    load_checkpoint,
    param_count,
    save_checkpoint,
    separate,
)

__all__ = [
    "WaveBatch",
    "SourceEstimates",
    "BatchPermutation",
    "mix",
    "sample_permutation",
    "permute_batch",
    "mixture_consistency",
    "snr_db",
    "rescale_noise_to_snr",
    "SiSdrResult",
    "si_sdr",
    "si_sdr_improvement",
    "neg_si_sdr_loss_and_grad",
    "ModelConfig",
    "ModelState",
    "init_model",
    "forward",
    "separate",
    "backward",
    "blend_params",
    "grow_depth",
    "grad_check",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

__version__ = "0.1.0"
