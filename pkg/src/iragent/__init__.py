"""Literature-guided infrared spectral analysis with a multi-turn few-shot LLM loop.

Pipeline: knowledge-base retrieval of a method plan, spectral preprocessing,
feature extraction, then few-shot reasoning over the feature vectors with
hard samples fed back between rounds.
"""

__version__ = "0.1.0"
