"""Speech training data synthesis toolkit.

Expands a seed text corpus through rule-based grammar generation and
mask-based augmentation, converts texts to speech through a mock or
external TTS backend, applies audio augmentation (speed distortion, noise
mixing at target SNR), and emits mixed training manifests.
"""

__version__ = "0.1.0"
