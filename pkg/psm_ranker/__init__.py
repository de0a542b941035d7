"""
Cost-sensitive ramp-loss kernel ranker for peptide-spectrum-match rescoring.
"""

__version__ = "0.3.0"
