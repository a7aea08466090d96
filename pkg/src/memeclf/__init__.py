"""Multimodal fusion ablation harness for hate/sentiment classification of
text-embedded images: unimodal baselines, early/late fusion, and a hybrid
cross-attention + gating head, with stratified cross-validation and
macro-F1 evaluation."""

__version__ = "0.1.0"
