"""Text-to-speech from speech corrupted by background music: a music filter,
a GST-conditioned Text2Mel with an auxiliary quality classifier, a spectrogram
super-resolution network, and the experiment harness tying them together."""

__version__ = "0.1.0"
