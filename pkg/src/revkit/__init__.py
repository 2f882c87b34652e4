"""Reverberant speech recognition toolkit: room responses, contamination,
features, GMM alignment, hybrid MLP acoustic models, decoding and scoring."""

__version__ = "0.1.0"

__all__ = ["signal_io", "ir_lab", "contamination", "frontend", "align_gmm", "acoustic_net", "decode_eval", "bench"]
