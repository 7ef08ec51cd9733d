# lpf/__init__.py

"""
Latent Posterior Factors: multi-evidence probabilistic aggregation
"""
__version__ = "0.1.0"
