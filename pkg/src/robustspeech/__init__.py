"""Noise-robust self-supervised speech representation learning toolkit:
contrastive pre-training with a clean-waveform reconstruction module, SNR-exact
noisy corpus synthesis, continual pre-training, CTC fine-tuning and decoding.
"""

__version__ = "0.1.0"
