"""Observer-based differentially private consensus toolkit.

Simulates discrete-time linear multi-agent systems whose agents exchange
observer estimates perturbed by Laplace noise with decaying scales,
checks the mean-square consensus conditions, computes privacy budgets in
series and closed form, solves the decay-rate design problem for a
prescribed budget, and audits privacy on adjacent output trajectories
with a deterministic ledger.
"""

__version__ = "0.1.0"
