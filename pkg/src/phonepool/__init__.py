"""phonepool: phoneme-informed variable-length pooling of speech features,
with the surrounding pipeline (log-Mel frontend, alignment ingestion, target
tokenization, archives) and a desk-scale attention seq2seq harness for
frames-vs-phonemes experiments."""

__version__ = "0.1.0"
