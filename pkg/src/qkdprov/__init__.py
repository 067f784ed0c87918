"""Wavelength provisioning toolkit for QKD networks that secure federated edge learning.

Subpackages cover the network/topology model, demand scenarios, the hardware
cost model, reservation solvers and baselines, a vertical federated-learning
demand simulator, a multi-agent allocation environment, a small dense neural
network engine, federated soft actor-critic training, and an experiment CLI.
"""

__version__ = "0.1.0"
