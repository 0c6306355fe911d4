"""Referential-game pretraining of speaker/listener agents with transfer to
few-shot sequence-to-sequence translation."""

__version__ = "0.1.0"
