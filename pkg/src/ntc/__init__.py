"""Bi-LSTM with attention pooling for news text classification, plus baselines.

Everything runs on numpy with hand-written backward passes.
"""

__version__ = "0.1.0"
