"""Exact measurement model: counts, visibilities, the Q' matrix and concurrence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from entdistill.errors import ConsistencyError, EntDistillError, ZeroTraceError
from entdistill.qstate import PAULI, marginal, to_r_matrix

TOL_DEGENERATE = 1e-9
NORMAL_FORM_TOL = 1e-6


class NotNormalFormError(EntDistillError, ValueError):
    """Input still shows single-qubit interference above tolerance."""


def unit_vector(theta: float, phi: float) -> np.ndarray:
    return np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"detection direction must be a unit 3-vector, got {v}")
    return v


@dataclass(frozen=True)
class DetSetting:
    """Rotation vectors of the two detection beam splitters."""

    v_a: np.ndarray
    v_b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_a", _unit(self.v_a))
        object.__setattr__(self, "v_b", _unit(self.v_b))

    @classmethod
    def from_angles(cls, theta_a, phi_a, theta_b, phi_b) -> "DetSetting":
        return cls(unit_vector(theta_a, phi_a), unit_vector(theta_b, phi_b))


def detector_projectors(v) -> tuple[np.ndarray, np.ndarray]:
    """Projectors onto the D1 and D2 ports after rotating direction ``v`` onto +z."""
    n = sum(c * s for c, s in zip(v, PAULI[1:]))
    return (PAULI[0] + n) / 2, (PAULI[0] - n) / 2


def _trace(state) -> float:
    tr = float(np.trace(state).real)
    if tr <= 0:
        raise ZeroTraceError("state has zero trace")
    return tr


def single_count(state, side: str, v) -> float:
    """``<n_1j (n_1j' + n_2j')>`` = (1 + gamma_j . v) / 2."""
    return float((1 + marginal(state, side) @ _unit(v)) / 2)


def joint_probabilities(state, setting: DetSetting) -> np.ndarray:
    """``P[i, j]`` for detector ``D_(i+1)A`` and ``D_(j+1)B`` among surviving copies."""
    rho = np.asarray(state, dtype=complex)
    tr = _trace(rho)
    pa = detector_projectors(setting.v_a)
    pb = detector_projectors(setting.v_b)
    return np.array(
        [[np.trace(np.kron(a, b) @ rho).real for b in pb] for a in pa]
    ) / tr


def cross_correlation_raw(state, setting: DetSetting) -> float:
    """``<dn_1A dn_1B>`` straight from the joint detector probabilities."""
    p = joint_probabilities(state, setting)
    return float(p[0, 0] - p[0].sum() * p[:, 0].sum())


def q_matrix(state) -> np.ndarray:
    """``Q'_lm = R_lm / R_00 - R_l0 R_0m / R_00^2`` for l, m = 1..3."""
    r = to_r_matrix(state)
    r00 = r[0, 0]
    if r00 <= 0:
        raise ZeroTraceError("state has zero trace")
    return r[1:, 1:] / r00 - np.outer(r[1:, 0], r[0, 1:]) / r00**2


def cross_correlation(state, setting: DetSetting) -> float:
    """Compact form ``v_A Q' v_B / 4``."""
    return float(setting.v_a @ q_matrix(state) @ setting.v_b / 4)


# --- 3x3 singular value decomposition ------------------------------------

_PAIRS = ((0, 1), (0, 2), (1, 2))


def _embed(m2: np.ndarray, p: int, q: int) -> np.ndarray:
    g = np.eye(3)
    g[np.ix_((p, q), (p, q))] = m2
    return g


def jacobi_svd3(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Two-sided cyclic Jacobi SVD of a real 3x3 matrix.

    Returns ``(u, s, v)`` with ``a = u @ diag(s) @ v.T``, ``s`` sorted
    descending and nonnegative, ``u`` and ``v`` orthogonal. Each 2x2 pivot is
    first symmetrized by a row rotation, then diagonalized by a symmetric
    Jacobi rotation applied on both sides.
    """
    work = np.array(a, dtype=float)
    if work.shape != (3, 3):
        raise ValueError("jacobi_svd3 expects a 3x3 matrix")
    u = np.eye(3)
    v = np.eye(3)
    scale = np.linalg.norm(work)
    if scale == 0.0:
        return u, np.zeros(3), v
    for _ in range(max_sweeps):
        off = np.linalg.norm(work - np.diag(np.diag(work)))
        if off <= tol * scale:
            break
        for p, q in _PAIRS:
            app, apq, aqp, aqq = work[p, p], work[p, q], work[q, p], work[q, q]
            if apq == 0.0 and aqp == 0.0:
                continue
            psi = math.atan2(aqp - apq, app + aqq)
            c, s = math.cos(psi), math.sin(psi)
            sym = np.array([[c, s], [-s, c]])
            b = sym @ np.array([[app, apq], [aqp, aqq]])
            chi = 0.5 * math.atan2(2 * b[0, 1], b[0, 0] - b[1, 1])
            cc, sc = math.cos(chi), math.sin(chi)
            jac = np.array([[cc, -sc], [sc, cc]])
            left = _embed(jac.T @ sym, p, q)
            right = _embed(jac, p, q)
            work = left @ work @ right
            u = u @ left.T
            v = v @ right
    d = np.diag(work).copy()
    neg = d < 0
    d[neg] = -d[neg]
    u[:, neg] = -u[:, neg]
    order = np.argsort(-d, kind="stable")
    return u[:, order], d[order], v[:, order]


@dataclass(frozen=True)
class QDecomposition:
    """Singular structure of Q'.

    ``vecs_a[:, l]`` and ``vecs_b[:, l]`` are the detection directions at which
    the cross-correlation shows its l-th local maximum ``+lambdas[l] / 4``.
    """

    q: np.ndarray
    lambdas: np.ndarray
    vecs_a: np.ndarray
    vecs_b: np.ndarray
    q_sign: int

    def setting(self, l: int) -> DetSetting:
        return DetSetting(self.vecs_a[:, l], self.vecs_b[:, l])

    def reconstruct(self) -> np.ndarray:
        return self.vecs_a @ np.diag(self.lambdas) @ self.vecs_b.T

    def to_dict(self) -> dict:
        return {
            "Q": self.q.tolist(),
            "lambdas": self.lambdas.tolist(),
            "vecs_a": self.vecs_a.T.tolist(),
            "vecs_b": self.vecs_b.T.tolist(),
            "q_sign": self.q_sign,
        }


def decompose_q(q) -> QDecomposition:
    """Ordered extrema ``lambda_1 >= lambda_2 >= lambda_3 >= 0`` of the cross-correlation.

    Sign conventions: each non-degenerate ``v_A,l`` has its largest-magnitude
    component positive and ``v_B,l`` follows so that ``v_A,l Q v_B,l = +lambda_l``.
    Degenerate directions (``lambda < 1e-9``) are completed right-handed on
    both sides, which makes ``q_sign = +1`` in that case.
    """
    q = np.array(q, dtype=float)
    u, s, v = jacobi_svd3(q)
    degenerate = s < TOL_DEGENERATE
    for l in range(3):
        if degenerate[l]:
            continue
        if u[np.argmax(np.abs(u[:, l])), l] < 0:
            u[:, l] = -u[:, l]
            v[:, l] = -v[:, l]
    if degenerate.any():
        last = int(np.flatnonzero(degenerate)[-1])
        if np.linalg.det(u) < 0:
            u[:, last] = -u[:, last]
        if np.linalg.det(v) < 0:
            v[:, last] = -v[:, last]
    q_sign = 1 if np.linalg.det(u) * np.linalg.det(v) > 0 else -1
    return QDecomposition(q=q, lambdas=s, vecs_a=u, vecs_b=v, q_sign=q_sign)


def visibilities(state) -> tuple[float, float, tuple[float, float, float]]:
    """Single-qubit visibilities ``|gamma_A|``, ``|gamma_B|`` and the three two-qubit extrema."""
    va = float(np.linalg.norm(marginal(state, "A")))
    vb = float(np.linalg.norm(marginal(state, "B")))
    lam = decompose_q(q_matrix(state)).lambdas
    return va, vb, (float(lam[0]), float(lam[1]), float(lam[2]))


@dataclass(frozen=True)
class LorentzSingularValues:
    s0: float
    s1: float
    s2: float
    s3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3])

    def to_dict(self) -> dict:
        return {"s0": self.s0, "s1": self.s1, "s2": self.s2, "s3": self.s3}


def _lorentz(state, f_a: float, f_b: float) -> LorentzSingularValues:
    if f_a <= 0 or f_b <= 0:
        raise ValueError("filter parameters must be positive (state not distillable)")
    s0 = _trace(state) / (f_a * f_b)
    dec = decompose_q(q_matrix(state))
    lam = dec.lambdas
    return LorentzSingularValues(
        float(s0), float(s0 * lam[0]), float(s0 * lam[1]), float(dec.q_sign * s0 * lam[2])
    )


def lorentz_singular_values(
    distilled, f_a: float, f_b: float, tol: float = NORMAL_FORM_TOL
) -> LorentzSingularValues:
    """``s_0 = Tr / (f_A f_B)`` and ``s_l = s_0 lambda_l`` (``s_3`` carries ``q``).

    ``distilled`` must be in normal form: both marginal norms below ``tol``.
    """
    va = np.linalg.norm(marginal(distilled, "A"))
    vb = np.linalg.norm(marginal(distilled, "B"))
    if max(va, vb) >= tol:
        raise NotNormalFormError(
            f"state is not in normal form (V_A={va:.3e}, V_B={vb:.3e}, tol={tol:.1e})"
        )
    return _lorentz(distilled, f_a, f_b)


def r_matrix_singular_values(distilled, f_a: float, f_b: float) -> np.ndarray:
    """Singular values of ``R_dis / (f_A f_B)``, descending; independent of Q'."""
    return np.linalg.svd(to_r_matrix(distilled) / (f_a * f_b), compute_uv=False)


def raw_concurrence(s: LorentzSingularValues) -> tuple[float, float]:
    """Unclipped ``(-1 + lambda_1 + lambda_2 - q lambda_3) / 2`` and its initial-state scaling."""
    if s.s0 <= 0:
        raise ValueError("s0 must be positive")
    c_dis = 0.5 * (-1 + (s.s1 + s.s2 - s.s3) / s.s0)
    return c_dis, s.s0 * c_dis


def concurrence_from_visibilities(s: LorentzSingularValues) -> tuple[float, float]:
    """Concurrences of the distilled and the initial state, clipped to [0, 1]."""
    c_dis, c_init = raw_concurrence(s)
    for label, val in (("distilled", c_dis), ("initial", c_init)):
        if val > 1 + 1e-6:
            raise ConsistencyError(f"{label} concurrence {val:.9f} exceeds 1")
    c_dis = min(1.0, max(0.0, c_dis))
    return c_dis, min(1.0, s.s0 * c_dis)


def concurrence_estimate(state, f_a: float, f_b: float) -> float:
    """Initial-state concurrence read from a partially distilled state.

    No normal-form check; exact only once both marginals vanish.
    """
    c_dis, _ = raw_concurrence(_lorentz(state, f_a, f_b))
    s0 = _trace(state) / (f_a * f_b)
    return float(min(1.0, s0 * max(0.0, c_dis)))
