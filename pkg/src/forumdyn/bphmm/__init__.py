"""Joint segmentation of multiple series with a shared-state HMM under a
beta-process prior on the series-to-state assignment matrix."""

from .ibp import sample_ibp, sample_finite_feature_matrix, ibp_log_prior
from .hmm import forward_messages, forward_loglik, ffbs, viterbi, seq_loglik
from .model import (
    McmcConfig,
    TransitionModel,
    StateSequence,
    BPHMMModel,
)
from .sampler import fit_bphmm, decode

__all__ = [
    "sample_ibp",
    "sample_finite_feature_matrix",
    "ibp_log_prior",
    "forward_messages",
    "forward_loglik",
    "ffbs",
    "viterbi",
    "seq_loglik",
    "McmcConfig",
    "TransitionModel",
    "StateSequence",
    "BPHMMModel",
    "fit_bphmm",
    "decode",
]
