"""Sequence-labeling toolkit for Spanish biomedical NER.

BiLSTM-CRF tagger over multi-embedding word representations, with
attention-based embedding selection and noisy-channel training on
distantly supervised data.
"""

__version__ = "0.1.0"

ENTITY_TYPES = ("PROTEINAS", "NORMALIZABLES", "NO_NORMALIZABLES", "UNCLEAR")
