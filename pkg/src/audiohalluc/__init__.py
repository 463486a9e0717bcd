"""Audio hallucination detection toolkit.

Classifies (audio, sentence) pairs over a joint embedding space: a
calibrated zero-shot cosine-threshold classifier and a trainable
fusion-head classifier, plus corpus annotation tooling and the
statistics/evaluation pipeline around them.
"""

__version__ = "0.1.0"
