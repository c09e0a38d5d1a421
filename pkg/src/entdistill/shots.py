"""Finite-statistics Monte Carlo of the distillation and quantification protocol.

Every injected copy ends in one of nine joint outcomes ``(D1|D2|D3)_A x
(D1|D2|D3)_B``; ``D3`` is the filter's loss port. Copies ending in neither
``D3`` port are the surviving ``N`` used for all normalized counts.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from entdistill.detection import DetSetting, decompose_q
from entdistill.errors import EstimationError, NoConvergenceError, NotDistillableError
from entdistill.optics import (
    EPS_PURE,
    IDENTITY,
    DistillationRecord,
    LocalOp,
    Step,
    erase_marginal,
)
from entdistill.qstate import check_state, wootters_concurrence

AXES = np.eye(3)
ZHAT = AXES[2]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator fully determined by ``(seed, stream)``."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,)))
    )


@dataclass
class ShotLedger:
    """Outcome tallies; ``counts[i, j]`` for ``D(i+1)A`` and ``D(j+1)B``."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    @property
    def M(self) -> int:
        return int(self.counts.sum())

    @property
    def N(self) -> int:
        return int(self.counts[:2, :2].sum())

    def __add__(self, other: "ShotLedger") -> "ShotLedger":
        return ShotLedger(self.counts + other.counts)

    def survivors(self) -> np.ndarray:
        return self.counts[:2, :2]

    def to_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "counts": self.counts.tolist()}


def merge(ledgers) -> ShotLedger:
    total = ShotLedger()
    for ledger in ledgers:
        total = total + ledger
    return total


@dataclass(frozen=True)
class ShotPlan:
    shots_per_gamma_setting: int = 400
    shots_per_q_setting: int = 100
    shots_per_lambda_setting: int = 200
    distill_threshold: float = 0.1
    target_halfwidth: float = 0.01
    max_iters: int = 60

    def __post_init__(self):
        for name in ("shots_per_gamma_setting", "shots_per_q_setting", "shots_per_lambda_setting"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.distill_threshold <= 0 or self.target_halfwidth <= 0:
            raise ValueError("thresholds must be positive")

    @property
    def quantification_copies(self) -> int:
        return 9 * self.shots_per_q_setting + 3 * self.shots_per_lambda_setting

    def to_dict(self) -> dict:
        return asdict(self)


def _kraus(op: LocalOp, v) -> list[np.ndarray]:
    n = v[0] * np.array([[0, 1], [1, 0]]) + v[1] * np.array([[0, -1j], [1j, 0]]) + v[2] * np.diag([1, -1])
    p1 = (np.eye(2) + n) / 2
    p2 = (np.eye(2) - n) / 2
    d = op.matrix()
    return [p1 @ d, p2 @ d, op.discard_matrix()]


def outcome_probabilities(state, op_a: LocalOp, op_b: LocalOp, setting: DetSetting) -> np.ndarray:
    """Exact 3x3 joint distribution over detector outcomes for one injected copy."""
    rho = np.asarray(state, dtype=complex)
    ka = _kraus(op_a, setting.v_a)
    kb = _kraus(op_b, setting.v_b)
    p = np.empty((3, 3))
    for i, a in enumerate(ka):
        for j, b in enumerate(kb):
            k = np.kron(a, b)
            p[i, j] = np.trace(k @ rho @ k.conj().T).real
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def sample_copies(state, op_a, op_b, setting, n_copies: int, rng) -> ShotLedger:
    if n_copies <= 0:
        raise ValueError("n_copies must be positive")
    p = outcome_probabilities(state, op_a, op_b, setting)
    return ShotLedger(rng.multinomial(n_copies, p.ravel()).reshape(3, 3))


def sample_until(state, op_a, op_b, setting, n_surviving: int, rng) -> ShotLedger:
    """Inject copies until ``n_surviving`` of them pass both filters.

    Equivalent to sequential injection: the number of filtered copies is
    negative binomial, and each class is then split multinomially.
    """
    if n_surviving <= 0:
        raise ValueError("n_surviving must be positive")
    p = outcome_probabilities(state, op_a, op_b, setting)
    survive = np.zeros((3, 3), dtype=bool)
    survive[:2, :2] = True
    ps = p[survive].sum()
    if ps <= 0:
        raise EstimationError("no copy can survive the filters")
    counts = np.zeros((3, 3), dtype=np.int64)
    counts[survive] = rng.multinomial(n_surviving, p[survive] / ps)
    pl = p[~survive].sum()
    if pl > 0:
        lost = rng.negative_binomial(n_surviving, ps / (ps + pl))
        counts[~survive] = rng.multinomial(lost, p[~survive] / pl)
    return ShotLedger(counts)


# --- estimators -----------------------------------------------------------


def covariance_estimate(ledger: ShotLedger) -> tuple[float, float]:
    """Empirical ``<dn_1A dn_1B>`` among survivors and its delta-method variance."""
    n = ledger.N
    if n == 0:
        raise EstimationError("no surviving copies")
    p = ledger.survivors() / n
    pa, pb = p[0].sum(), p[:, 0].sum()
    cov = p[0, 0] - pa * pb
    xa = np.array([1 - pa, -pa])[:, None]
    xb = np.array([1 - pb, -pb])[None, :]
    fourth = float((p * xa**2 * xb**2).sum())
    return float(cov), max(fourth - cov**2, 0.0) / n


@dataclass
class GammaEstimate:
    gamma: np.ndarray
    stderr: np.ndarray
    visibility: float  # bias-corrected |gamma|
    ledger: ShotLedger

    @property
    def copies(self) -> int:
        return self.ledger.M


def estimate_gamma(state, op_a, op_b, side: str, shots_per_setting: int, rng) -> GammaEstimate:
    """Bloch vector of ``side`` from single counts at the three axis settings.

    ``shots_per_setting`` counts surviving coincidences, so the precision
    does not degrade as the filters tighten. Each component inverts
    ``(1 + gamma_l) / 2``; the partner's D1/D2 counts are summed over. The
    reported visibility removes the binomial noise floor from ``|gamma|^2``
    before taking the root.
    """
    if side not in ("A", "B"):
        raise ValueError(f"side must be 'A' or 'B', not {side!r}")
    gamma = np.empty(3)
    stderr = np.empty(3)
    v2 = 0.0
    ledgers = []
    for l in range(3):
        setting = DetSetting(AXES[l], ZHAT) if side == "A" else DetSetting(ZHAT, AXES[l])
        ledger = sample_until(state, op_a, op_b, setting, shots_per_setting, rng)
        ledgers.append(ledger)
        n = ledger.N
        if n < 2:
            raise EstimationError(f"only {n} surviving copies at axis {l}")
        s = ledger.survivors()
        ones = s[0].sum() if side == "A" else s[:, 0].sum()
        p = ones / n
        gamma[l] = 2 * p - 1
        stderr[l] = math.sqrt(4 * p * (1 - p) / n)
        v2 += gamma[l] ** 2 - 4 * p * (1 - p) / (n - 1)
    return GammaEstimate(gamma, stderr, math.sqrt(max(v2, 0.0)), merge(ledgers))


PURITY_SIGMAS = 3.0


def _erase_estimated(est: GammaEstimate) -> LocalOp:
    norm = float(np.linalg.norm(est.gamma))
    if norm > 0:
        sigma = float(np.linalg.norm(est.gamma * est.stderr)) / norm
        if norm >= 1 - max(EPS_PURE, PURITY_SIGMAS * sigma):
            raise NotDistillableError(
                f"estimated marginal is consistent with a pure state (|gamma|={norm:.4f})"
            )
    if est.visibility == 0.0 or norm == 0.0:
        return IDENTITY
    return erase_marginal(est.gamma / norm * est.visibility)


def noisy_distill(state, plan: ShotPlan, rng) -> DistillationRecord:
    """Alternating distillation driven by shot-estimated Bloch vectors.

    Each round first checks both visibilities under the current settings
    (``6 x shots_per_gamma_setting`` copies). If a check fails, the next side
    measures its Bloch vector with its own filter reset to the identity
    (3 more settings, skipped when its setting already is the identity, in
    which case the check data are reused) and installs the erasing filter.
    """
    rho = check_state(state, normalized=True)
    n = plan.shots_per_gamma_setting
    op_a = op_b = IDENTITY
    history: list[Step] = []
    copies = 0
    k = 0
    last_side = last_vis = last_op = None
    while True:
        ga = estimate_gamma(rho, op_a, op_b, "A", n, rng)
        gb = estimate_gamma(rho, op_a, op_b, "B", n, rng)
        copies += ga.copies + gb.copies
        check = ga.ledger + gb.ledger
        survival = check.N / check.M
        history.append(
            Step(
                k=k,
                side=last_side,
                visibility=last_vis,
                f=None if last_op is None else last_op.f,
                theta=None if last_op is None else last_op.theta,
                phi=None if last_op is None else last_op.phi,
                survival=survival,
                v_a=ga.visibility,
                v_b=gb.visibility,
                concurrence=None,
            )
        )
        if ga.visibility < plan.distill_threshold and gb.visibility < plan.distill_threshold:
            converged = True
            break
        if k >= plan.max_iters:
            converged = False
            break
        if k % 2 == 0:
            last_side = "A"
            est = ga if op_a.is_identity else estimate_gamma(rho, IDENTITY, op_b, "A", n, rng)
        else:
            last_side = "B"
            est = gb if op_b.is_identity else estimate_gamma(rho, op_a, IDENTITY, "B", n, rng)
        if est is not ga and est is not gb:
            copies += est.copies
        last_op = _erase_estimated(est)
        last_vis = est.visibility
        if last_side == "A":
            op_a = last_op
        else:
            op_b = last_op
        k += 1

    record = DistillationRecord(
        op_a=op_a,
        op_b=op_b,
        iterations=k,
        survival=history[-1].survival,
        converged=converged,
        history=history,
        copies=copies,
        check_copies=check.M,
    )
    if not converged:
        raise NoConvergenceError(
            f"shot-mode distillation did not pass the V < {plan.distill_threshold} check "
            f"after {k} steps",
            record=record,
        )
    return record


# --- quantification -------------------------------------------------------


def perturb_direction(v, delta: float, rng) -> np.ndarray:
    """Rotate unit vector ``v`` by angle ``delta`` about a random perpendicular axis."""
    v = np.asarray(v, dtype=float)
    w = rng.normal(size=3)
    w -= (w @ v) * v
    w /= np.linalg.norm(w)
    return math.cos(delta) * v + math.sin(delta) * w


@dataclass
class ConcurrenceEstimate:
    concurrence: float  # clipped to [0, 1]
    raw: float  # s0 (-1 + l1 + l2 - q l3) / 2, unclipped
    stderr: float
    lambdas: np.ndarray
    q_sign: int
    s0: float
    survival: float
    copies_distill: int
    copies_quant: int
    record: DistillationRecord
    q_estimate: np.ndarray

    @property
    def copies(self) -> int:
        return self.copies_distill + self.copies_quant

    def to_dict(self) -> dict:
        return {
            "concurrence": self.concurrence,
            "raw": self.raw,
            "stderr": self.stderr,
            "lambdas": self.lambdas.tolist(),
            "q_sign": self.q_sign,
            "s0": self.s0,
            "survival": self.survival,
            "copies_distill": self.copies_distill,
            "copies_quant": self.copies_quant,
            "copies": self.copies,
            "k_dis": self.record.iterations,
            "Q_estimate": self.q_estimate.tolist(),
            "distillation": self.record.to_dict(),
        }


def quantify(
    state,
    record: DistillationRecord,
    plan: ShotPlan,
    rng,
    direction_error: float = 0.0,
    perturb_rng=None,
) -> ConcurrenceEstimate:
    """Nine axis-pair settings for crude directions, then three settings at the extrema.

    ``direction_error`` tilts every measured extremum direction by that angle
    before the second stage (robustness studies); the tilt directions come
    from ``perturb_rng``.
    """
    rho = np.asarray(state, dtype=complex)
    op_a, op_b = record.op_a, record.op_b
    ledgers = []
    q_hat = np.empty((3, 3))
    for l in range(3):
        for m in range(3):
            ledger = sample_copies(
                rho, op_a, op_b, DetSetting(AXES[l], AXES[m]), plan.shots_per_q_setting, rng
            )
            ledgers.append(ledger)
            q_hat[l, m] = 4 * covariance_estimate(ledger)[0]
    dec = decompose_q(q_hat)

    lambdas = np.empty(3)
    lam_var = np.empty(3)
    for l in range(3):
        va, vb = dec.vecs_a[:, l], dec.vecs_b[:, l]
        if direction_error:
            prng = perturb_rng if perturb_rng is not None else rng
            va = perturb_direction(va, direction_error, prng)
            vb = perturb_direction(vb, direction_error, prng)
        ledger = sample_copies(
            rho, op_a, op_b, DetSetting(va, vb), plan.shots_per_lambda_setting, rng
        )
        ledgers.append(ledger)
        cov, var = covariance_estimate(ledger)
        lambdas[l] = 4 * cov
        lam_var[l] = 16 * var

    total = merge(ledgers)
    if total.N == 0:
        raise EstimationError("no surviving copies during quantification")
    survival = total.N / total.M
    s0 = survival / (op_a.f * op_b.f)
    c_dis = 0.5 * (-1 + lambdas[0] + lambdas[1] - dec.q_sign * lambdas[2])
    raw = s0 * c_dis
    var_dis = 0.25 * lam_var.sum()
    var_s0 = s0**2 * (1 - survival) / (survival * total.M)
    stderr = math.sqrt(s0**2 * var_dis + c_dis**2 * var_s0)
    return ConcurrenceEstimate(
        concurrence=float(min(1.0, max(0.0, raw))),
        raw=float(raw),
        stderr=float(stderr),
        lambdas=lambdas,
        q_sign=dec.q_sign,
        s0=float(s0),
        survival=float(survival),
        copies_distill=int(record.copies or 0),
        copies_quant=total.M,
        record=record,
        q_estimate=q_hat,
    )


def estimate_concurrence(state, plan: ShotPlan, rng, **kwargs) -> ConcurrenceEstimate:
    """Shot-mode distillation followed by the 9 + 3 setting quantification."""
    record = noisy_distill(state, plan, rng)
    return quantify(state, record, plan, rng, **kwargs)


# --- copy-budget search ---------------------------------------------------

Q_GRID = (25, 50, 100, 200, 400, 800, 1600)
LAMBDA_GRID = tuple(int(round(50 * 2 ** (i / 2))) for i in range(23))  # 50 .. 102400


@dataclass
class SearchResult:
    plan: ShotPlan
    total: float
    copies_distill: float
    copies_quant: int
    k_dis: int
    k_dis_all: list[int]
    survival: float
    c_mean: float
    c_std: float
    c_exact: float
    replications: int
    budget_exceeded: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plan"] = self.plan.to_dict()
        return d


def _replicate_c(state, plan, records, seed) -> np.ndarray:
    out = np.empty(len(records))
    for r, record in enumerate(records):
        out[r] = quantify(state, record, plan, make_rng(seed, 2 * r + 1)).raw
    return out


def min_copies_search(
    state,
    target_halfwidth: float = 0.01,
    seed: int = 0,
    replications: int = 30,
    base_plan: ShotPlan | None = None,
    q_grid=Q_GRID,
    lambda_grid=LAMBDA_GRID,
) -> SearchResult:
    """Smallest total copy count whose concurrence spread stays within the target.

    Replication ``r`` distills with stream ``2r`` and quantifies with stream
    ``2r + 1``; the distillation runs are shared by every grid point. For each
    nine-setting allocation the three-setting allocation is bisected on
    ``lambda_grid`` (spread assumed nonincreasing in it). The spread is the
    sample standard deviation of the unclipped initial-state concurrence.
    """
    if target_halfwidth <= 0:
        raise ValueError("target_halfwidth must be positive")
    if replications < 30:
        raise ValueError("at least 30 replications are required")
    base = base_plan or ShotPlan(target_halfwidth=target_halfwidth)
    records = [noisy_distill(state, base, make_rng(seed, 2 * r)) for r in range(replications)]
    distill_mean = float(np.mean([rec.copies for rec in records]))
    cache: dict[tuple[int, int], np.ndarray] = {}

    def spread(a, b):
        if (a, b) not in cache:
            plan = replace(base, shots_per_q_setting=a, shots_per_lambda_setting=b)
            cache[(a, b)] = _replicate_c(state, plan, records, seed)
        return float(np.std(cache[(a, b)], ddof=1))

    best = None
    for a in q_grid:
        if best is not None and 9 * a >= best[0]:
            break
        lo, hi = 0, len(lambda_grid) - 1
        if spread(a, lambda_grid[hi]) > target_halfwidth:
            continue
        while lo < hi:
            mid = (lo + hi) // 2
            if spread(a, lambda_grid[mid]) <= target_halfwidth:
                hi = mid
            else:
                lo = mid + 1
        b = lambda_grid[lo]
        cost = 9 * a + 3 * b
        if best is None or cost < best[0]:
            best = (cost, a, b)

    exceeded = best is None
    if exceeded:
        best = (9 * q_grid[-1] + 3 * lambda_grid[-1], q_grid[-1], lambda_grid[-1])
        spread(best[1], best[2])
    _, a, b = best
    values = cache[(a, b)]
    plan = replace(base, shots_per_q_setting=a, shots_per_lambda_setting=b)
    ks = [rec.iterations for rec in records]
    return SearchResult(
        plan=plan,
        total=distill_mean + plan.quantification_copies,
        copies_distill=distill_mean,
        copies_quant=plan.quantification_copies,
        k_dis=int(statistics.median_low(ks)),
        k_dis_all=ks,
        survival=float(np.mean([rec.survival for rec in records])),
        c_mean=float(values.mean()),
        c_std=float(values.std(ddof=1)),
        c_exact=wootters_concurrence(state),
        replications=replications,
        budget_exceeded=exceeded,
    )
