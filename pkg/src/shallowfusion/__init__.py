"""Shallow fusion of external language models into attention-based
speech recognition decoding.

Submodules
----------
vocab
    Grapheme and wordpiece unit inventories and tokenization.
ngram
    Katz backoff n-gram estimation with ARPA I/O and pruning.
speller
    Word LM composed with a prefix trie to score unit sequences.
rnnlm
    Numpy LSTM language model with truncated BPTT training.
decoder
    Beam search with LM fusion, coverage penalty and n-best rescoring.
evaluation
    WER, relative WER reduction and weight tuning.
"""

__version__ = "0.1.0"
