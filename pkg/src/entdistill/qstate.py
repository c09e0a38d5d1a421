"""Two-qubit state algebra.

States are plain ``(4, 4)`` complex numpy arrays in the basis
``|uu>, |ud>, |du>, |dd>`` (``u`` = pseudospin up, ``sigma_z |u> = +|u>``).
Filtered states are allowed to carry trace < 1; the trace is the survival
weight of the filtering that produced them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from entdistill.errors import NonPhysicalStateError, ZeroTraceError

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_0, SIGMA_X, SIGMA_Y, SIGMA_Z)

# PAULI_PRODUCTS[l, m] = sigma_l (x) sigma_m
PAULI_PRODUCTS = np.array([[np.kron(a, b) for b in PAULI] for a in PAULI])

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
# eigenvalues below this are rounding noise of a rank-deficient state
SPECTRUM_FLOOR = 1e-14

UP, DOWN = 0, 1
SIDES = ("A", "B")


def _as_matrix(state) -> np.ndarray:
    m = np.asarray(state, dtype=complex)
    if m.shape != (4, 4):
        raise NonPhysicalStateError(f"expected a 4x4 matrix, got shape {m.shape}", "shape")
    return m


def check_state(state, *, normalized: bool = False) -> np.ndarray:
    """Validate the density-matrix invariants and return the matrix.

    Raises :class:`NonPhysicalStateError` naming the first invariant that fails
    (``hermitian``, ``psd`` or ``trace``).
    """
    m = _as_matrix(state)
    if not np.allclose(m, m.conj().T, atol=HERMITIAN_TOL, rtol=0):
        raise NonPhysicalStateError("matrix is not Hermitian", "hermitian")
    evals = np.linalg.eigvalsh((m + m.conj().T) / 2)
    if evals.min() < -PSD_TOL:
        raise NonPhysicalStateError(
            f"matrix has negative eigenvalue {evals.min():.3e}", "psd"
        )
    tr = np.trace(m).real
    if not (0 < tr <= 1 + TRACE_TOL):
        raise NonPhysicalStateError(f"trace {tr:.6g} outside (0, 1]", "trace")
    if normalized and abs(tr - 1) > TRACE_TOL:
        raise NonPhysicalStateError(f"trace {tr:.6g} != 1", "trace")
    return m


def normalize(state) -> np.ndarray:
    m = _as_matrix(state)
    tr = np.trace(m).real
    if tr <= 0:
        raise ZeroTraceError("state has zero trace")
    return m / tr


def to_r_matrix(state) -> np.ndarray:
    """Real Pauli-basis coefficients ``R[l, m] = Tr(rho sigma_l (x) sigma_m)``."""
    m = _as_matrix(state)
    # Tr(rho P) = sum_ij rho_ij P_ji
    return np.einsum("ij,lmji->lm", m, PAULI_PRODUCTS).real


def from_r_matrix(r, *, check: bool = True) -> np.ndarray:
    """Rebuild ``rho = 1/4 sum R[l, m] sigma_l (x) sigma_m``.

    With ``check`` set, a reconstruction that is not positive semidefinite
    raises :class:`NonPhysicalStateError` (the R-matrix was corrupted).
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (4, 4):
        raise ValueError(f"R-matrix must be 4x4, got {r.shape}")
    rho = np.einsum("lm,lmij->ij", r, PAULI_PRODUCTS) / 4
    if check:
        evals = np.linalg.eigvalsh(rho)
        if evals.min() < -PSD_TOL:
            raise NonPhysicalStateError(
                f"R-matrix reconstructs to a non-physical state "
                f"(eigenvalue {evals.min():.3e})",
                "psd",
            )
    return rho


def reduced(state, side: str) -> np.ndarray:
    """Single-qubit reduced matrix of ``side`` (unnormalized)."""
    t = _as_matrix(state).reshape(2, 2, 2, 2)
    if side == "A":
        return np.einsum("ijkj->ik", t)
    if side == "B":
        return np.einsum("jijk->ik", t)
    raise ValueError(f"side must be 'A' or 'B', not {side!r}")


def marginal(state, side: str) -> np.ndarray:
    """Bloch vector of one qubit, ``(R_10, R_20, R_30) / R_00`` for side A."""
    r = to_r_matrix(state)
    if r[0, 0] <= 0:
        raise ZeroTraceError("marginal undefined: state fully filtered away")
    if side == "A":
        return r[1:, 0] / r[0, 0]
    if side == "B":
        return r[0, 1:] / r[0, 0]
    raise ValueError(f"side must be 'A' or 'B', not {side!r}")


def bloch_vector(qubit) -> np.ndarray:
    q = np.asarray(qubit, dtype=complex)
    tr = np.trace(q).real
    return np.array([np.trace(q @ s).real for s in PAULI[1:]]) / tr


def qubit_from_bloch(vec) -> np.ndarray:
    x, y, z = vec
    return (SIGMA_0 + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z) / 2


def projector(ket) -> np.ndarray:
    v = np.asarray(ket, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def wootters_concurrence(state) -> float:
    """Concurrence via the spin-flip formula.

    The input is normalized first, so filtered (sub-unit trace) states are
    accepted. With ``rho = W W^dagger`` the spin-flip roots are the singular
    values of ``W^T (sigma_y x sigma_y) W``, which avoids square roots of
    rounded eigenvalues near rank deficiency.
    """
    rho = normalize(state)
    w, u = np.linalg.eigh((rho + rho.conj().T) / 2)
    w = np.where(w > SPECTRUM_FLOOR, w, 0.0)
    factor = u * np.sqrt(w)
    yy = np.kron(SIGMA_Y, SIGMA_Y)
    mu = np.linalg.svd(factor.T @ yy @ factor, compute_uv=False)
    return float(min(1.0, max(0.0, mu[0] - mu[1] - mu[2] - mu[3])))


def random_pure_ket(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_state(seed: int, rank: int = 4) -> np.ndarray:
    """Reproducible random density matrix of the given rank.

    A mixture of ``rank`` Haar-random pure states with weights drawn
    uniformly from the simplex.
    """
    if rank not in (1, 2, 3, 4):
        raise ValueError(f"rank must be 1..4, got {rank}")
    rng = np.random.default_rng(seed)
    kets = [random_pure_ket(rng) for _ in range(rank)]
    weights = rng.dirichlet(np.ones(rank)) if rank > 1 else np.ones(1)
    rho = sum(w * np.outer(k, k.conj()) for w, k in zip(weights, kets))
    return (rho + rho.conj().T) / 2


def random_qubit(rng: np.random.Generator, max_norm: float = 1.0) -> np.ndarray:
    """Random single-qubit density matrix with Bloch norm below ``max_norm``."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return qubit_from_bloch(direction * max_norm * rng.uniform() ** (1 / 3))


def random_product_state(seed: int, max_norm: float = 0.95) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.kron(random_qubit(rng, max_norm), random_qubit(rng, max_norm))


# --- named fixtures -------------------------------------------------------

KET_UU = np.array([1, 0, 0, 0], dtype=complex)
KET_UD = np.array([0, 1, 0, 0], dtype=complex)
KET_DU = np.array([0, 0, 1, 0], dtype=complex)
KET_DD = np.array([0, 0, 0, 1], dtype=complex)

PSI_0 = (KET_UU + KET_DD) / np.sqrt(2)
# |Psi_pm> = (|du> +- |ud>)/sqrt(2)
PSI_PLUS = (KET_DU + KET_UD) / np.sqrt(2)
PSI_MINUS = (KET_DU - KET_UD) / np.sqrt(2)


@dataclass(frozen=True)
class StateFixture:
    name: str
    state: np.ndarray
    params: dict = field(default_factory=dict)


def _unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"parameter {name}={value} outside [0, 1]")
    return value


def bell() -> np.ndarray:
    return projector(PSI_0)


def werner(weight: float = 2 / 3) -> np.ndarray:
    return weight * bell() + (1 - weight) * np.eye(4) / 4


def rho_prime(p: float) -> np.ndarray:
    """|Psi_0><Psi_0| with the |uu><dd| coherence scaled down to p/2."""
    coherence = np.outer(KET_UU, KET_DD) + np.outer(KET_DD, KET_UU)
    return bell() + (p - 1) / 2 * coherence


def phi_eps(eps: float) -> np.ndarray:
    return (eps * KET_UU + KET_DD) / np.sqrt(1 + eps**2)


def rho_eps_lambda(eps: float, lam: float) -> np.ndarray:
    anti = projector(KET_UD) + projector(KET_DU)
    return lam * projector(phi_eps(eps)) + (1 - lam) / 2 * anti


def asymptotic_fig2b() -> np.ndarray:
    return (
        0.5 * projector(KET_UU)
        + 0.4 * projector(PSI_PLUS)
        + 0.1 * projector(PSI_MINUS)
    )


FIXTURE_NAMES = (
    "bell",
    "werner",
    "mixed_identity",
    "rho_prime",
    "rho_eps_lambda",
    "asymptotic_fig2b",
)

# parameter names in positional order, with defaults (None = required)
FIXTURE_PARAMS = {
    "bell": (),
    "werner": (),
    "mixed_identity": (),
    "rho_prime": (("p", None),),
    "rho_eps_lambda": (("eps", None), ("lam", None)),
    "asymptotic_fig2b": (),
}


def fixture(name: str, *args: float, **params: float) -> StateFixture:
    """Named test state. Positional params follow ``FIXTURE_PARAMS`` order.

    >>> fixture("rho_eps_lambda", 0.5, 0.8).params
    {'eps': 0.5, 'lam': 0.8}
    """
    if name not in FIXTURE_PARAMS:
        raise ValueError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}")
    spec = FIXTURE_PARAMS[name]
    if len(args) > len(spec):
        raise ValueError(f"fixture {name!r} takes {len(spec)} parameters, got {len(args)}")
    values = dict(zip((p for p, _ in spec), args))
    for key, val in params.items():
        if key not in dict(spec):
            raise ValueError(f"fixture {name!r} has no parameter {key!r}")
        values[key] = val
    for key, default in spec:
        if key not in values:
            if default is None:
                raise ValueError(f"fixture {name!r} requires parameter {key!r}")
            values[key] = default
    values = {k: _unit_interval(k, v) for k, v in values.items()}

    if name == "bell":
        rho = bell()
    elif name == "werner":
        rho = werner()
    elif name == "mixed_identity":
        rho = np.eye(4, dtype=complex) / 4
    elif name == "rho_prime":
        rho = rho_prime(values["p"])
    elif name == "rho_eps_lambda":
        rho = rho_eps_lambda(values["eps"], values["lam"])
    else:
        rho = asymptotic_fig2b()
    return StateFixture(name, check_state(rho, normalized=True), values)


# --- JSON state files -----------------------------------------------------


def state_to_json(state) -> dict:
    m = _as_matrix(state)
    return {"matrix_re": m.real.tolist(), "matrix_im": m.imag.tolist()}


def state_from_json(data: dict) -> np.ndarray:
    try:
        re = np.asarray(data["matrix_re"], dtype=float)
        im = np.asarray(data.get("matrix_im", np.zeros((4, 4))), dtype=float)
    except KeyError as exc:
        raise NonPhysicalStateError(f"state file missing key {exc}", "format") from None
    if re.shape != (4, 4) or im.shape != (4, 4):
        raise NonPhysicalStateError("state file matrices must be 4x4", "shape")
    return check_state(re + 1j * im)


def save_state(state, path) -> None:
    Path(path).write_text(json.dumps(state_to_json(state), indent=2))


def load_state(path) -> np.ndarray:
    return state_from_json(json.loads(Path(path).read_text()))
