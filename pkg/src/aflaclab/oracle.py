"""Brute-force certification of the invariance/accuracy trade-off theory.

Everything here works on small finite joints p(x, d, y) and enumerates
every deterministic encoder map X -> H. Three families of facts are
checked exhaustively, in bits, at 1e-9 tolerance:

  * trade-off: when I(d;y) > H(y|x), no encoder is simultaneously
    perfectly domain-invariant (H(d|h) = H(d)) and accuracy-optimal
    (H(y|h) = H(y|x)); and the chain bound
    H(d|h) <= H(d|y) + H(y|h) holds for every encoder.
  * constrained invariance: with noiseless labels the largest H(d|h)
    achievable at optimal accuracy equals H(d|y).
  * alignment equilibrium: minimizers of
    gamma * E[KL(p(d|y) || p~(d|h))] + H(y|h) attain
    (H(d|h), H(y|h)) = (H(d|y), 0) for every gamma > 0.

The per-encoder scan is a hot kernel (numba with numpy fallback); the
single-encoder path `induced_entropies` is an independent plain-numpy
summation used to cross-check the scan.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import backend as K
from .errors import CapExceededError, PreconditionError

TOL_BITS = 1e-9
DEFAULT_CAP = 10**7


@dataclass(frozen=True)
class FiniteJoint:
    """Dense joint distribution p[x, d, y] over finite spaces."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 3 or (p < 0).any():
            raise PreconditionError("joint must be a nonnegative 3-D tensor")
        if abs(p.sum() - 1.0) > 1e-12:
            raise PreconditionError(f"joint sums to {p.sum():.15f}, expected 1")
        object.__setattr__(self, "p", p)

    @property
    def n_x(self) -> int:
        return self.p.shape[0]

    @property
    def n_d(self) -> int:
        return self.p.shape[1]

    @property
    def n_y(self) -> int:
        return self.p.shape[2]

    def checksum(self) -> str:
        return hashlib.sha256(self.p.tobytes()).hexdigest()[:12]


def _h_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def marginal_entropies(joint: FiniteJoint):
    """(H(d), H(d|y), H(y), H(y|x)) in bits."""
    p = joint.p
    p_dy = p.sum(axis=0)
    p_d = p_dy.sum(axis=1)
    p_y = p_dy.sum(axis=0)
    h_d = _h_bits(p_d)
    h_dy = _h_bits(p_dy.ravel()) - _h_bits(p_y)  # H(d,y) - H(y)
    p_xy = p.sum(axis=1)
    h_yx = _h_bits(p_xy.ravel()) - _h_bits(p_xy.sum(axis=1))  # H(x,y) - H(x)
    return h_d, h_dy, _h_bits(p_y), h_yx


def induced_entropies(joint: FiniteJoint, enc: np.ndarray):
    """(H(d|h), H(y|h)) in bits for one encoder map, by direct summation."""
    enc = np.asarray(enc, dtype=np.int64)
    if enc.shape != (joint.n_x,):
        raise PreconditionError(f"encoder map must have length {joint.n_x}")
    n_h = int(enc.max()) + 1 if enc.size else 1
    ph_dy = np.zeros((n_h, joint.n_d, joint.n_y))
    for x in range(joint.n_x):
        ph_dy[enc[x]] += joint.p[x]
    ph_d = ph_dy.sum(axis=2)
    ph_y = ph_dy.sum(axis=1)
    ph = ph_d.sum(axis=1)
    h_d_h = _h_bits(ph_d.ravel()) - _h_bits(ph)
    h_y_h = _h_bits(ph_y.ravel()) - _h_bits(ph)
    return h_d_h, h_y_h


def enumerate_encoders(n_x: int, n_h: int, cap: int = DEFAULT_CAP):
    """Yield every map {0..n_x-1} -> {0..n_h-1} in lexicographic order."""
    total = n_h**n_x
    if total > cap:
        raise CapExceededError(f"{n_h}^{n_x} = {total} encoders exceeds cap {cap}")
    e = np.zeros(n_x, dtype=np.int64)
    for _ in range(total):
        yield e.copy()
        pos = n_x - 1
        while pos >= 0:
            e[pos] += 1
            if e[pos] == n_h:
                e[pos] = 0
                pos -= 1
            else:
                break


def _conditional_target(joint: FiniteJoint):
    """Rows t[y] = p(d|y); zero rows for classes without mass."""
    p_dy = joint.p.sum(axis=0)  # (D, Y)
    p_y = p_dy.sum(axis=0)
    t = np.zeros((joint.n_y, joint.n_d))
    for y in range(joint.n_y):
        if p_y[y] > 0:
            t[y] = p_dy[:, y] / p_y[y]
    with np.errstate(divide="ignore"):
        logt = np.where(t > 0, np.log2(np.where(t > 0, t, 1.0)), 0.0)
    return t, logt


def scan_encoders(joint: FiniteJoint, n_h: int, cap: int = DEFAULT_CAP):
    """Entropies and alignment KL for every encoder, via the active kernel.

    Returns (h_d_given_h, h_y_given_h, kl_term), each of length n_h**|X|,
    in the same lexicographic order as `enumerate_encoders`.
    """
    total = n_h**joint.n_x
    if total > cap:
        raise CapExceededError(f"{n_h}^{joint.n_x} = {total} encoders exceeds cap {cap}")
    t, logt = _conditional_target(joint)
    return K.encoder_scan(np.ascontiguousarray(joint.p), n_h, t, logt)


# -------------------------------------------------------------- theorem 1/2


@dataclass
class TradeoffReport:
    h_d: float
    h_d_given_y: float
    h_y_given_x: float
    i_dy: float
    n_encoders: int
    n_perfect_invariance: int
    n_optimal_accuracy: int
    n_both: int
    disjoint: bool
    chain_ok: bool

    @property
    def tradeoff_predicted(self) -> bool:
        return self.i_dy > self.h_y_given_x + TOL_BITS

    @property
    def theorem_ok(self) -> bool:
        # dependence beyond labeling noise forces the two optima apart
        return self.disjoint if self.tradeoff_predicted else True


def verify_tradeoff(joint: FiniteJoint, cap: int = DEFAULT_CAP) -> TradeoffReport:
    """Exhaustively compare perfect-invariance and optimal-accuracy encoders.

    Enumerates all maps with |H| = |X| so that both optima are attainable,
    and also asserts the chain bound H(d|h) <= H(d|y) + H(y|h) for every
    encoder.
    """
    h_d, h_dy, _, h_yx = marginal_entropies(joint)
    hd_h, hy_h, _ = scan_encoders(joint, joint.n_x, cap=cap)
    s1 = np.abs(hd_h - h_d) <= TOL_BITS
    s2 = np.abs(hy_h - h_yx) <= TOL_BITS
    chain_ok = bool((hd_h <= h_dy + hy_h + TOL_BITS).all())
    return TradeoffReport(
        h_d=h_d,
        h_d_given_y=h_dy,
        h_y_given_x=h_yx,
        i_dy=h_d - h_dy,
        n_encoders=len(hd_h),
        n_perfect_invariance=int(s1.sum()),
        n_optimal_accuracy=int(s2.sum()),
        n_both=int((s1 & s2).sum()),
        disjoint=not bool((s1 & s2).any()),
        chain_ok=chain_ok,
    )


# ---------------------------------------------------------------- theorem 3


def accuracy_constrained_invariance(joint: FiniteJoint, n_h: int,
                                    cap: int = DEFAULT_CAP) -> float:
    """Largest H(d|h) over encoders that keep classification optimal.

    Requires noiseless labels (H(y|x) = 0) and a code space at least as
    large as the label space, so the label map itself is representable.
    """
    h_d, h_dy, _, h_yx = marginal_entropies(joint)
    if h_yx > TOL_BITS:
        raise PreconditionError(f"H(y|x) = {h_yx:.3g} bits; labels must be noiseless")
    if n_h < joint.n_y:
        raise PreconditionError(f"need |H| >= |Y| = {joint.n_y}, got {n_h}")
    hd_h, hy_h, _ = scan_encoders(joint, n_h, cap=cap)
    feasible = hy_h <= h_yx + TOL_BITS
    return float(hd_h[feasible].max())


# ----------------------------------------------------------- equilibrium


@dataclass
class EquilibriumReport:
    gammas: tuple[float, ...]
    h_d_given_y: float
    h_y_given_x: float
    achieved: list[tuple[float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(
            abs(hd - self.h_d_given_y) <= TOL_BITS and abs(hy - self.h_y_given_x) <= TOL_BITS
            for hd, hy in self.achieved
        )

    @property
    def gamma_insensitive(self) -> bool:
        if not self.achieved:
            return True
        hd0, hy0 = self.achieved[0]
        return all(abs(hd - hd0) <= TOL_BITS and abs(hy - hy0) <= TOL_BITS
                   for hd, hy in self.achieved[1:])


def aflac_equilibrium_check(joint: FiniteJoint, n_h: int,
                            gammas=(0.01, 1.0, 100.0),
                            cap: int = DEFAULT_CAP) -> EquilibriumReport:
    """Minimize gamma * E[KL(p(d|y) || p~(d|h))] + H(y|h) exhaustively.

    Every minimizer must attain H(d|h) = H(d|y) and H(y|h) = H(y|x) = 0,
    identically across gammas: the aligned objective has no
    invariance/accuracy knob to tune.
    """
    _, h_dy, _, h_yx = marginal_entropies(joint)
    if h_yx > TOL_BITS:
        raise PreconditionError(f"H(y|x) = {h_yx:.3g} bits; labels must be noiseless")
    if n_h < joint.n_y:
        raise PreconditionError(f"need |H| >= |Y| = {joint.n_y}, got {n_h}")
    hd_h, hy_h, kl = scan_encoders(joint, n_h, cap=cap)
    report = EquilibriumReport(gammas=tuple(gammas), h_d_given_y=h_dy, h_y_given_x=h_yx)
    for gamma in gammas:
        if gamma <= 0:
            raise PreconditionError("gamma must be positive")
        v = gamma * kl + hy_h
        vmin = v.min()
        ties = np.where(v <= vmin + 1e-12)[0]
        # every global minimizer must sit at the constrained-invariance point
        hd_star = float(hd_h[ties[0]])
        hy_star = float(hy_h[ties[0]])
        for i in ties:
            if abs(hd_h[i] - h_dy) > TOL_BITS or abs(hy_h[i] - h_yx) > TOL_BITS:
                hd_star, hy_star = float(hd_h[i]), float(hy_h[i])
                break
        report.achieved.append((hd_star, hy_star))
    return report


# -------------------------------------------------------------- test suite


def canonical_dependent_joint() -> FiniteJoint:
    """Four inputs, noiseless labels, dependent domain: the worked instance
    with p(x) = (0.4, 0.1, 0.1, 0.4), y = x mod 2, d = x div 2."""
    px = np.array([0.4, 0.1, 0.1, 0.4])
    p = np.zeros((4, 2, 2))
    for x in range(4):
        p[x, x // 2, x % 2] = px[x]
    return FiniteJoint(p)


def independent_uniform_joint() -> FiniteJoint:
    """Uniform p(x, d, y) with y independent of (x, d)."""
    p = np.full((4, 2, 2), 1.0 / 16.0)
    return FiniteJoint(p)


def independent_dy_joint() -> FiniteJoint:
    """Noiseless labels with d independent of y (uniform p(x))."""
    p = np.zeros((4, 2, 2))
    for x in range(4):
        p[x, x // 2, x % 2] = 0.25
    return FiniteJoint(p)


def degenerate_dy_joint() -> FiniteJoint:
    """d equals y deterministically; H(d|y) = 0."""
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = 0.5
    p[1, 1, 1] = 0.5
    return FiniteJoint(p)


def random_noiseless_joint(rng: np.random.Generator) -> FiniteJoint:
    """Random joint with H(y|x) = 0: deterministic class map, random p(x)
    and random per-input domain conditionals."""
    n_x = int(rng.integers(2, 7))
    n_d = int(rng.integers(2, 4))
    n_y = int(rng.integers(2, min(3, n_x) + 1))
    px = rng.dirichlet(np.ones(n_x))
    ymap = np.concatenate([
        rng.permutation(n_y),
        rng.integers(0, n_y, size=n_x - n_y),
    ])[:n_x]
    pdx = rng.dirichlet(np.ones(n_d), size=n_x)
    p = np.zeros((n_x, n_d, n_y))
    for x in range(n_x):
        p[x, :, ymap[x]] = px[x] * pdx[x]
    p /= p.sum()
    return FiniteJoint(p)


@dataclass
class InstanceVerdict:
    name: str
    checksum: str
    h_d: float
    h_d_given_y: float
    h_y_given_x: float
    i_dy: float
    tradeoff_ok: bool
    chain_ok: bool
    theorem3_ok: bool | None
    equilibrium_ok: bool | None

    @property
    def ok(self) -> bool:
        checks = [self.tradeoff_ok, self.chain_ok]
        checks += [c for c in (self.theorem3_ok, self.equilibrium_ok) if c is not None]
        return all(checks)


@dataclass
class SuiteResult:
    verdicts: list[InstanceVerdict]
    elapsed_seconds: float

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts)


def default_instances(seed: int = 0, n_random: int = 50):
    """The canonical worked instances plus seeded random noiseless joints."""
    instances = [
        ("independent-uniform", independent_uniform_joint()),
        ("independent-dy", independent_dy_joint()),
        ("degenerate-dy", degenerate_dy_joint()),
        ("dependent-canonical", canonical_dependent_joint()),
    ]
    rng = np.random.default_rng(np.random.SeedSequence([3311, seed]))
    for i in range(n_random):
        instances.append((f"random-{i:02d}", random_noiseless_joint(rng)))
    return instances


def run_suite(seed: int = 0, n_random: int = 50, n_h_constrained: int = 4,
              gammas=(0.01, 1.0, 100.0)) -> SuiteResult:
    """Run every check on the default instances and collect verdicts."""
    start = time.perf_counter()
    verdicts = []
    for name, joint in default_instances(seed=seed, n_random=n_random):
        trade = verify_tradeoff(joint)
        noiseless = trade.h_y_given_x <= TOL_BITS
        theorem3_ok = None
        equilibrium_ok = None
        if noiseless:
            n_h = max(joint.n_y, min(n_h_constrained, joint.n_x))
            got = accuracy_constrained_invariance(joint, n_h)
            theorem3_ok = abs(got - trade.h_d_given_y) <= TOL_BITS
            equilibrium_ok = aflac_equilibrium_check(joint, n_h, gammas=gammas).ok
        verdicts.append(InstanceVerdict(
            name=name,
            checksum=joint.checksum(),
            h_d=trade.h_d,
            h_d_given_y=trade.h_d_given_y,
            h_y_given_x=trade.h_y_given_x,
            i_dy=trade.i_dy,
            tradeoff_ok=trade.theorem_ok,
            chain_ok=trade.chain_ok,
            theorem3_ok=theorem3_ok,
            equilibrium_ok=equilibrium_ok,
        ))
    return SuiteResult(verdicts=verdicts, elapsed_seconds=time.perf_counter() - start)


def certificate_text(result: SuiteResult) -> str:
    """Human-readable certificate: one block per instance plus a summary."""
    lines = ["# invariance/accuracy trade-off certificate", ""]
    for v in result.verdicts:
        lines += [
            f"instance {v.name} checksum={v.checksum}",
            f"  H_d_bits = {v.h_d:.9f}",
            f"  H_d_given_y_bits = {v.h_d_given_y:.9f}",
            f"  H_y_given_x_bits = {v.h_y_given_x:.9f}",
            f"  I_dy_bits = {v.i_dy:.9f}",
            f"  tradeoff_disjointness = {'PASS' if v.tradeoff_ok else 'FAIL'}",
            f"  chain_inequality = {'PASS' if v.chain_ok else 'FAIL'}",
        ]
        if v.theorem3_ok is not None:
            lines.append(f"  constrained_invariance = {'PASS' if v.theorem3_ok else 'FAIL'}")
        if v.equilibrium_ok is not None:
            lines.append(f"  alignment_equilibrium = {'PASS' if v.equilibrium_ok else 'FAIL'}")
        lines.append("")
    lines.append(f"instances = {len(result.verdicts)}")
    lines.append(f"elapsed_seconds = {result.elapsed_seconds:.3f}")
    lines.append(f"overall = {'PASS' if result.ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
