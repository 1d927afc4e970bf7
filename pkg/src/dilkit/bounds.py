"""Exact verification of the risk inequalities on finite instances.

Each instance treats empirical distributions over a small ground set as the
true distributions, so every term (risks, disagreements, the
symmetric-difference divergence) is exactly computable and the
pre-generalization inequalities must hold to floating-point precision.
The concentration radical is checked only as algebraic bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError
from .coeffs import TRIPLE_PRESETS, preset_triple
from .divergence import (
    FiniteHypothesisClass, _pairwise_disagreement, hdh_exact,
)

TOL = 1e-12


@dataclass(frozen=True)
class BoundInstance:
    """Finite ground set with per-domain samples and an explicit class.

    ``domain_samples[i]`` are ground-set indices for domain i+1; the last
    domain is the current one.  ``h_idx``/``hprev_idx`` select the student
    and the frozen teacher from the class.  ``omega`` holds one coefficient
    triple per past domain.
    """

    hclass: FiniteHypothesisClass
    true_labels: np.ndarray
    domain_samples: tuple[np.ndarray, ...]
    h_idx: int
    hprev_idx: int
    omega: np.ndarray

    def __post_init__(self):
        n = self.hclass.n_points
        y = np.asarray(self.true_labels, dtype=np.int8)
        if y.shape != (n,) or not np.isin(y, (0, 1)).all():
            raise ContractError("true_labels must be 0/1 over the ground set")
        samples = tuple(np.asarray(s, dtype=np.int64) for s in self.domain_samples)
        if len(samples) < 2:
            raise ContractError("need at least two domains")
        for s in samples:
            if s.size == 0 or s.min() < 0 or s.max() >= n:
                raise ContractError("each domain sample must be a nonempty "
                                    "index set into the ground set")
        m = self.hclass.n_hypotheses
        if not (0 <= self.h_idx < m and 0 <= self.hprev_idx < m):
            raise ContractError("h and H_prev must be members of the class")
        om = np.asarray(self.omega, dtype=np.float64)
        if om.shape != (len(samples) - 1, 3):
            raise ContractError(
                f"omega must have shape ({len(samples) - 1}, 3)")
        if om.min() < 0 or np.abs(om.sum(axis=1) - 1.0).max() > 1e-9:
            raise ContractError("omega rows must lie on the simplex")
        object.__setattr__(self, "true_labels", y)
        object.__setattr__(self, "domain_samples", samples)
        object.__setattr__(self, "omega", om)

    @property
    def n_domains(self) -> int:
        return len(self.domain_samples)


@dataclass
class CheckReport:
    name: str
    n_checks: int
    n_violations: int
    max_violation: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def _risks(inst: BoundInstance) -> np.ndarray:
    """[m, T] matrix: 0-1 risk of every hypothesis on every domain."""
    lab = inst.hclass.labelings
    cols = []
    for idx in inst.domain_samples:
        cols.append((lab[:, idx] != inst.true_labels[idx]).mean(axis=1))
    return np.stack(cols, axis=1)


def _divergences_to_current(inst: BoundInstance) -> np.ndarray:
    """Exact divergence between each past domain and the current one."""
    t = inst.n_domains
    cur = inst.domain_samples[t - 1]
    return np.array([hdh_exact(inst.hclass, inst.domain_samples[i], cur)
                     for i in range(t - 1)])


def check_intra_bound(inst: BoundInstance) -> CheckReport:
    """For every pair (h, H') and every domain i:
    risk_i(h) <= disagreement_i(h, H') + risk_i(H')."""
    risks = _risks(inst)
    m = inst.hclass.n_hypotheses
    worst = -np.inf
    violations = checks = 0
    for d, idx in enumerate(inst.domain_samples):
        dis = _pairwise_disagreement(inst.hclass.labelings, idx)
        gap = risks[:, d, None] - (dis + risks[None, :, d])
        worst = max(worst, float(gap.max()))
        violations += int((gap > TOL).sum())
        checks += m * m
    return CheckReport("intra_bound", checks, violations, worst)


def check_cross_bound(inst: BoundInstance) -> CheckReport:
    """For every pair (h, H') and every domain i:
    risk_i(h) <= disagreement_cur(h, H') + half-divergence + risk_i(H')."""
    risks = _risks(inst)
    t = inst.n_domains
    cur_idx = inst.domain_samples[t - 1]
    dis_cur = _pairwise_disagreement(inst.hclass.labelings, cur_idx)
    m = inst.hclass.n_hypotheses
    worst = -np.inf
    violations = checks = 0
    for d, idx in enumerate(inst.domain_samples):
        half_div = 0.5 * hdh_exact(inst.hclass, idx, cur_idx)
        gap = risks[:, d, None] - (dis_cur + half_div + risks[None, :, d])
        worst = max(worst, float(gap.max()))
        violations += int((gap > TOL).sum())
        checks += m * m
    return CheckReport("cross_bound", checks, violations, worst)


def _unified_terms(inst: BoundInstance):
    """Per-domain ingredients of the combined inequality for the chosen
    (h, H_prev): student risks, student-teacher disagreements, teacher
    risks, and the current-domain disagreement, all exact."""
    lab = inst.hclass.labelings
    h = lab[inst.h_idx]
    hp = lab[inst.hprev_idx]
    risk_h, risk_hp, dis = [], [], []
    for idx in inst.domain_samples:
        risk_h.append(float((h[idx] != inst.true_labels[idx]).mean()))
        risk_hp.append(float((hp[idx] != inst.true_labels[idx]).mean()))
        dis.append(float((h[idx] != hp[idx]).mean()))
    return np.array(risk_h), np.array(risk_hp), np.array(dis)


def deterministic_bound(inst: BoundInstance,
                        omega: np.ndarray | None = None) -> float:
    """The combined right-hand side evaluated exactly at the given
    coefficients (default: the instance's own)."""
    om = inst.omega if omega is None else np.asarray(omega, dtype=np.float64)
    risk_h, risk_hp, dis = _unified_terms(inst)
    div = _divergences_to_current(inst)
    t = inst.n_domains
    a, b, g = om[:, 0], om[:, 1], om[:, 2]
    past = slice(0, t - 1)
    return float(
        np.sum(g * risk_h[past]) + np.sum(a * dis[past]) + risk_h[t - 1]
        + b.sum() * dis[t - 1] + 0.5 * np.sum(b * div)
        + np.sum((a + b) * risk_hp[past]))


def total_risk(inst: BoundInstance) -> float:
    """Left-hand side: the student's summed risk over all domains."""
    risk_h, _, _ = _unified_terms(inst)
    return float(risk_h.sum())


def check_unified_bound(inst: BoundInstance) -> CheckReport:
    gap = total_risk(inst) - deterministic_bound(inst)
    return CheckReport("unified_bound", 1, int(gap > TOL), float(gap))


def barycentric_grid(resolution: int) -> np.ndarray:
    """All triples (k1, k2, k3)/resolution with nonnegative integer parts."""
    if resolution < 2:
        raise ContractError("grid resolution must be >= 2")
    pts = [(i / resolution, j / resolution, (resolution - i - j) / resolution)
           for i in range(resolution + 1)
           for j in range(resolution + 1 - i)]
    return np.array(pts)


def tightest_bound_grid(inst: BoundInstance, presets=None,
                        grid_resolution: int = 10) -> CheckReport:
    """Minimize the combined bound over per-domain coefficient candidates
    (a barycentric grid joined with every preset's triple) and compare the
    minimum against each full preset."""
    t = inst.n_domains
    if presets is None:
        presets = [m for m in TRIPLE_PRESETS
                   if not (m == "ESM-ER" and t == 2)]
    risk_h, risk_hp, dis = _unified_terms(inst)
    div = _divergences_to_current(inst)
    cands = np.concatenate([barycentric_grid(grid_resolution),
                            np.array([preset_triple(m, t) for m in presets])])

    def per_domain_values(i: int, triples: np.ndarray) -> np.ndarray:
        a, b, g = triples[:, 0], triples[:, 1], triples[:, 2]
        return (g * risk_h[i] + a * dis[i] + b * dis[t - 1]
                + 0.5 * b * div[i] + (a + b) * risk_hp[i])

    # the bound is additive across past domains, so the grid minimization
    # decomposes into independent per-domain minimizations
    argmin = np.zeros((t - 1, 3))
    best_total = risk_h[t - 1]
    for i in range(t - 1):
        vals = per_domain_values(i, cands)
        k = int(np.argmin(vals))
        argmin[i] = cands[k]
        best_total += float(vals[k])

    preset_values = {m: deterministic_bound(
        inst, np.array([preset_triple(m, t) for _ in range(t - 1)]))
        for m in presets}
    violations = sum(best_total > v + 1e-9 for v in preset_values.values())
    worst = max(best_total - v for v in preset_values.values())
    return CheckReport(
        "tightest_bound_grid", len(presets), int(violations), float(worst),
        details={"argmin_omega": argmin.tolist(),
                 "argmin_value": best_total,
                 "preset_values": preset_values})


def radical_argument(omega: np.ndarray, n_current: int,
                     n_memory) -> float:
    """(1 + sum beta)^2 / N_t + sum (gamma_i + alpha_i)^2 / N_i."""
    om = np.asarray(omega, dtype=np.float64)
    n_mem = np.asarray(n_memory, dtype=np.float64)
    a, b, g = om[:, 0], om[:, 1], om[:, 2]
    return float((1 + b.sum()) ** 2 / n_current + np.sum((g + a) ** 2 / n_mem))


def check_erm_bound_shape(inst: BoundInstance, c_gen: float = 1.0) -> CheckReport:
    """Bookkeeping identities of the concentration radical: at the
    pure-replay preset it reduces to the plain per-domain form
    1/N_t + sum 1/N_i, and at the pure-distillation preset all memory terms
    vanish leaving t^2/N_t.  Probabilistic content is out of scope."""
    t = inst.n_domains
    n_cur = int(inst.domain_samples[t - 1].size)
    n_mem = [int(s.size) for s in inst.domain_samples[:-1]]

    er = np.array([preset_triple("ER", t) for _ in range(t - 1)])
    plain = 1.0 / n_cur + float(np.sum(1.0 / np.asarray(n_mem, dtype=float)))
    gap_er = abs(radical_argument(er, n_cur, n_mem) - plain)

    lwf = np.array([preset_triple("LwF", t) for _ in range(t - 1)])
    gap_lwf = abs(radical_argument(lwf, n_cur, n_mem) - t ** 2 / n_cur)

    worst = max(gap_er, gap_lwf) * c_gen
    violations = int(gap_er > TOL) + int(gap_lwf > TOL)
    return CheckReport("erm_bound_shape", 2, violations, float(worst),
                       details={"replay_form": plain,
                                "distill_form": t ** 2 / n_cur})


def random_instance(rng: np.random.Generator, n_domains: int = 3,
                    points_per_domain: int = 6,
                    class_size: int = 64) -> BoundInstance:
    """Randomized exhaustive instance for the verification suites."""
    if not (2 <= n_domains and 1 <= points_per_domain <= 8
            and 2 <= class_size <= 256):
        raise ContractError("instance parameters outside the supported range")
    n = n_domains * points_per_domain
    labelings = rng.integers(0, 2, size=(class_size, n)).astype(np.int8)
    hclass = FiniteHypothesisClass(labelings)
    samples = tuple(
        rng.integers(0, n, size=rng.integers(2, points_per_domain + 1))
        for _ in range(n_domains))
    omega = rng.dirichlet((1.0, 1.0, 1.0), size=n_domains - 1)
    return BoundInstance(
        hclass=hclass,
        true_labels=rng.integers(0, 2, size=n).astype(np.int8),
        domain_samples=samples,
        h_idx=int(rng.integers(class_size)),
        hprev_idx=int(rng.integers(class_size)),
        omega=omega)
