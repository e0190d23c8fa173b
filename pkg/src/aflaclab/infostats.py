"""Count tables and discrete information measures over (domain, class).

Everything here is exact count arithmetic in float64. Losses elsewhere use
natural log; reported statistics use bits, which is what the benchmark
tables quote.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInputError,
    NotNormalizedError,
    SupportMismatchError,
    ZeroCountClassError,
)

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class JointCounts:
    """Integer tally n[d][y] of examples per (domain, class)."""

    n: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        if n.ndim != 2 or (n < 0).any():
            raise EmptyInputError("counts must be a nonnegative 2-D integer matrix")
        if n.sum() == 0:
            raise EmptyInputError("counts are all zero")
        object.__setattr__(self, "n", n)

    @property
    def total(self) -> int:
        return int(self.n.sum())

    @property
    def n_domains(self) -> int:
        return self.n.shape[0]

    @property
    def n_classes(self) -> int:
        return self.n.shape[1]

    def p_joint(self) -> np.ndarray:
        return self.n.astype(np.float64) / self.total

    def p_domain(self) -> np.ndarray:
        return self.n.sum(axis=1).astype(np.float64) / self.total

    def p_class(self) -> np.ndarray:
        return self.n.sum(axis=0).astype(np.float64) / self.total


@dataclass(frozen=True)
class ConditionalTable:
    """Rows t[y] are probability vectors over domains."""

    t: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.ndim != 2:
            raise NotNormalizedError("conditional table must be 2-D")
        if not np.allclose(t.sum(axis=1), 1.0, atol=1e-12):
            raise NotNormalizedError("conditional table rows must sum to 1")
        object.__setattr__(self, "t", t)

    def row(self, y: int) -> np.ndarray:
        return self.t[y]


def empirical_joint(examples, n_domains: int | None = None,
                    n_classes: int | None = None) -> JointCounts:
    """Tally (d, y) pairs from labeled examples."""
    pairs = [(ex.d, ex.y) for ex in examples]
    if not pairs:
        raise EmptyInputError("no examples to tally")
    ds = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    nd = n_domains if n_domains is not None else int(ds.max()) + 1
    ny = n_classes if n_classes is not None else int(ys.max()) + 1
    n = np.zeros((nd, ny), dtype=np.int64)
    np.add.at(n, (ds, ys), 1)
    return JointCounts(n)


def entropy(p, base: float = 2.0) -> float:
    """-sum p log p with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise NotNormalizedError(f"not a probability vector (sum={p.sum():.12g})")
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return h / LN2 if base == 2 else h


def conditional_entropy_d_given_y(joint: JointCounts, base: float = 2.0) -> float:
    """H(d|y) = sum_y p(y) H(d | Y=y)."""
    p = joint.p_joint()
    py = p.sum(axis=0)
    h = 0.0
    for y in range(joint.n_classes):
        if py[y] > 0:
            h += py[y] * entropy(p[:, y] / py[y], base=base)
    return h


def mutual_information(joint: JointCounts, base: float = 2.0) -> float:
    """I(d;y) = H(d) - H(d|y); nonnegative up to roundoff."""
    return entropy(joint.p_domain(), base=base) - conditional_entropy_d_given_y(joint, base=base)


def estimate_d_given_y(joint: JointCounts, alpha: float = 0.0) -> ConditionalTable:
    """Estimator of p(d|y): plain frequencies at alpha=0, Dirichlet-smoothed
    frequencies at alpha>0."""
    n = joint.n.astype(np.float64)
    col = n.sum(axis=0)
    if alpha == 0.0 and (col == 0).any():
        bad = int(np.where(col == 0)[0][0])
        raise ZeroCountClassError(f"class {bad} has no examples; use alpha > 0")
    t = (n.T + alpha) / (col[:, None] + alpha * joint.n_domains)
    return ConditionalTable(t=t, alpha=alpha)


def marginal_rows(joint: JointCounts) -> ConditionalTable:
    """Every row equal to the domain marginal p(d)."""
    pd = joint.p_domain()
    return ConditionalTable(t=np.tile(pd, (joint.n_classes, 1)))


def kld(p, log_q) -> float:
    """KL(p || q) in nats from a probability vector and log-probabilities."""
    p = np.asarray(p, dtype=np.float64)
    log_q = np.asarray(log_q, dtype=np.float64)
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise NotNormalizedError("p is not a probability vector")
    if abs(np.exp(log_q).sum() - 1.0) > 1e-6:
        raise NotNormalizedError("exp(log_q) is not a probability vector")
    if np.any((p > 0) & np.isneginf(log_q)):
        raise SupportMismatchError("p has mass where q is zero")
    mask = p > 0
    return float((p[mask] * (np.log(p[mask]) - log_q[mask])).sum())


def stats_report_row(dataset: str, target_domain: str, joint: JointCounts) -> str:
    """One comma-separated report line of the domain/class statistics."""
    h_d = entropy(joint.p_domain(), base=2)
    h_dy = conditional_entropy_d_given_y(joint, base=2)
    return (f"{dataset},{target_domain},{h_d:.6f},{h_dy:.6f},{h_d - h_dy:.6f}")


STATS_REPORT_HEADER = "dataset,target_domain,H_d_bits,H_d_given_y_bits,I_dy_bits"
