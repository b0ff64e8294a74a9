"""Explainable knowledge-graph embedding toolkit.

Trains a tensor-factorization embedding over (head, relation, tail) facts,
approximates its classifications locally with decision trees over relation-path
features, renders grounded natural-language explanations, and ingests human
fact corrections to retrain and improve link prediction.
"""

__version__ = "0.1.0"
