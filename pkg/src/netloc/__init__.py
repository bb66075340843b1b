"""Cooperative network localization with graph neural networks.

A small self-contained stack: synthetic LOS/NLOS ranging scenarios,
graph construction (hard and learnable soft thresholds), a reverse-mode
autodiff engine, GCN / attention models, training loops, and an
experiment + verification harness.
"""

__version__ = "0.1.0"
