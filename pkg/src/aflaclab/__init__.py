"""Domain-generalization lab: adversarial invariant feature learning with
an accuracy constraint, its ablations, and brute-force certification of the
underlying information-theoretic trade-offs."""

__version__ = "0.1.0"
