"""Hybrid CTC speech recognition toolkit.

CTC loss, weighted finite-state transducers, wordpiece units, blank-aware
decoding graphs, a beam decoder with blank-frame skipping, chunked
streaming and a small trainable acoustic model.
"""

__version__ = "0.1.0"
