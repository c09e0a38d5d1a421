"""Local beam-splitter operations and the alternating distillation protocol."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from entdistill import detection
from entdistill.errors import NoConvergenceError, NotDistillableError
from entdistill.qstate import check_state, marginal

EPS_PURE = 1e-9
DEFAULT_THRESHOLD = 1e-8
DEFAULT_MAX_ITERS = 200


def rotation(theta: float, phi: float) -> np.ndarray:
    """Beam-splitter rotation; maps Bloch direction (theta, phi) onto +z."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, s * np.exp(-1j * phi)], [-s * np.exp(1j * phi), c]], dtype=complex
    )


def filter_matrix(f: float) -> np.ndarray:
    return np.diag([1.0, f]).astype(complex)


@dataclass(frozen=True)
class LocalOp:
    """One side's distillation setting: filter ``f`` after rotation ``(theta, phi)``."""

    f: float = 1.0
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"filter parameter f={self.f} outside [0, 1]")
        if not 0.0 <= self.theta <= math.pi + 1e-12:
            raise ValueError(f"theta={self.theta} outside [0, pi]")

    def matrix(self) -> np.ndarray:
        return filter_matrix(self.f) @ rotation(self.theta, self.phi)

    def discard_matrix(self) -> np.ndarray:
        """Amplitude of the branch that ends in the filter's loss port."""
        return np.diag([0.0, math.sqrt(1.0 - self.f**2)]).astype(complex) @ rotation(
            self.theta, self.phi
        )

    @property
    def is_identity(self) -> bool:
        return self.f == 1.0 and self.theta == 0.0


IDENTITY = LocalOp()


def apply_local(state, op_a: LocalOp, op_b: LocalOp) -> np.ndarray:
    """Unnormalized ``(D_A x D_B) rho (D_A x D_B)^dagger``; its trace is the survival."""
    k = np.kron(op_a.matrix(), op_b.matrix())
    out = k @ np.asarray(state, dtype=complex) @ k.conj().T
    return (out + out.conj().T) / 2


def erase_marginal(gamma) -> LocalOp:
    """Filter setting that turns a qubit with Bloch vector ``gamma`` maximally mixed.

    The rotation carries ``gamma`` onto ``-z`` and the filter then damps the
    now-overweighted down component by ``sqrt((1-g)/(1+g))``.
    """
    gamma = np.asarray(gamma, dtype=float)
    g = float(np.linalg.norm(gamma))
    if g >= 1.0 - EPS_PURE:
        raise NotDistillableError(
            f"marginal is pure (|gamma| = {g:.12f}); filtering would destroy the state"
        )
    if g == 0.0:
        return IDENTITY
    v = -gamma / g
    theta = math.atan2(math.hypot(v[0], v[1]), v[2])
    if abs(v[0]) < 1e-15 and abs(v[1]) < 1e-15:
        phi = 0.0
    else:
        phi = math.atan2(v[1], v[0]) % (2 * math.pi)
    return LocalOp(f=math.sqrt((1 - g) / (1 + g)), theta=theta, phi=phi)


@dataclass
class Step:
    k: int
    side: str | None
    visibility: float | None  # |gamma| measured before the erase
    f: float | None
    theta: float | None
    phi: float | None
    survival: float
    v_a: float
    v_b: float
    concurrence: float  # initial-state concurrence read off at this step


@dataclass
class DistillationRecord:
    op_a: LocalOp
    op_b: LocalOp
    iterations: int
    survival: float
    converged: bool
    history: list[Step] = field(default_factory=list)
    copies: int | None = None  # shot mode only
    check_copies: int | None = None  # shot mode: copies in the final visibility check

    def rows(self) -> list[dict]:
        return [asdict(s) for s in self.history]

    def to_dict(self) -> dict:
        out = {
            "op_a": asdict(self.op_a),
            "op_b": asdict(self.op_b),
            "iterations": self.iterations,
            "survival": self.survival,
            "converged": self.converged,
            "history": self.rows(),
        }
        if self.copies is not None:
            out["copies"] = self.copies
            out["check_copies"] = self.check_copies
        return out

    def filters(self, side: str) -> list[float]:
        """The filter value chosen at each of ``side``'s own updates."""
        return [s.f for s in self.history if s.side == side]


def _step(k, side, vis, op, current, op_a, op_b) -> Step:
    va = float(np.linalg.norm(marginal(current, "A")))
    vb = float(np.linalg.norm(marginal(current, "B")))
    c = detection.concurrence_estimate(current, op_a.f, op_b.f)
    return Step(
        k=k,
        side=side,
        visibility=vis,
        f=None if op is None else op.f,
        theta=None if op is None else op.theta,
        phi=None if op is None else op.phi,
        survival=float(np.trace(current).real),
        v_a=va,
        v_b=vb,
        concurrence=c,
    )


def distill(
    state,
    threshold: float = DEFAULT_THRESHOLD,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[DistillationRecord, np.ndarray]:
    """Alternately erase A's and B's single-qubit interference.

    Each step resets the acting side to the identity, reads its Bloch vector
    through the partner's current filter, and replaces its operation with
    :func:`erase_marginal` of that vector. Stops once both visibilities of
    the transformed state are below ``threshold``.

    Returns the record and the final unnormalized state. Raises
    :class:`NoConvergenceError` (carrying both) after ``max_iters`` steps.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    rho = check_state(state, normalized=True)
    op_a = op_b = IDENTITY
    current = rho
    history = [_step(0, None, None, None, current, op_a, op_b)]
    k = 0
    while True:
        last = history[-1]
        if last.v_a < threshold and last.v_b < threshold:
            converged = True
            break
        if k >= max_iters:
            converged = False
            break
        if k % 2 == 0:
            side = "A"
            gamma = marginal(apply_local(rho, IDENTITY, op_b), "A")
            op_a = op = erase_marginal(gamma)
        else:
            side = "B"
            gamma = marginal(apply_local(rho, op_a, IDENTITY), "B")
            op_b = op = erase_marginal(gamma)
        k += 1
        current = apply_local(rho, op_a, op_b)
        history.append(
            _step(k, side, float(np.linalg.norm(gamma)), op, current, op_a, op_b)
        )

    record = DistillationRecord(
        op_a=op_a,
        op_b=op_b,
        iterations=k,
        survival=float(np.trace(current).real),
        converged=converged,
        history=history,
    )
    if not converged:
        raise NoConvergenceError(
            f"no convergence after {k} steps "
            f"(V_A={history[-1].v_a:.3e}, V_B={history[-1].v_b:.3e})",
            record=record,
            state=current,
        )
    return record, current
