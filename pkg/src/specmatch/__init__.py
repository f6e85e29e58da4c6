"""Question-to-specification ranking: encoder, scorer, data pipeline, training, eval, serving."""

__version__ = "0.1.0"
