"""Desk-scale laboratory for privacy-preserving, robust federated learning.

The package is organized in layers:

ring / fhe        negacyclic integer polynomial arithmetic and a leveled,
                  two-party threshold homomorphic scheme on top of it
serialize         framed binary encoding for keys, ciphertexts, and shares
transport         in-process message channel with logging, replay, and
                  failure injection
protocols         two-server secure judgement and cosine protocols, plus a
                  deliberately weakened legacy variant kept for analysis
leakage           plaintext reconstruction attack against the legacy variant
defense           robust aggregation scoring (encrypted and mirror backends)
learners / data   small differentiable models and dataset utilities
attacks           poisoning strategies for simulation runs
flsim             federated orchestration tying all of the above together
config / harness  experiment configuration and artifact emission
cli               command line entry points
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
