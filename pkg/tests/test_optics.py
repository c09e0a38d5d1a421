import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entdistill import qstate
from entdistill.detection import q_matrix
from entdistill.errors import NoConvergenceError, NotDistillableError
from entdistill.optics import (
    IDENTITY,
    LocalOp,
    apply_local,
    distill,
    erase_marginal,
    filter_matrix,
    rotation,
)
from entdistill.qstate import bloch_vector, fixture, marginal, qubit_from_bloch, random_state

bloch_vectors = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.0, 0.99)
).filter(lambda t: np.linalg.norm(t[:3]) > 1e-3)


def _scaled(t):
    v = np.array(t[:3])
    return v / np.linalg.norm(v) * t[3]


# --- elementary operations ---------------------------------------------------


def test_rotation_maps_direction_to_plus_z():
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        n = [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
        u = rotation(theta, phi)
        out = u @ qubit_from_bloch(n) @ u.conj().T
        np.testing.assert_allclose(bloch_vector(out), [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-14)


def test_identity_op():
    np.testing.assert_array_equal(filter_matrix(1.0), np.eye(2))
    np.testing.assert_allclose(rotation(0.0, 1.3), np.eye(2))
    assert IDENTITY.is_identity
    assert not LocalOp(0.5).is_identity


def test_local_op_validation():
    with pytest.raises(ValueError):
        LocalOp(f=1.2)
    with pytest.raises(ValueError):
        LocalOp(f=-0.1)
    with pytest.raises(ValueError):
        LocalOp(theta=4.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
def test_local_op_is_a_contraction(f, theta, phi):
    op = LocalOp(f, theta, phi)
    assert np.linalg.norm(op.matrix(), 2) <= 1 + 1e-12
    # the kept and discarded branches together are trace preserving
    d, e = op.matrix(), op.discard_matrix()
    np.testing.assert_allclose(d.conj().T @ d + e.conj().T @ e, np.eye(2), atol=1e-12)


def test_apply_local_examples():
    bell = qstate.bell()
    np.testing.assert_allclose(apply_local(bell, IDENTITY, IDENTITY), bell)
    mixed = np.eye(4) / 4
    assert np.trace(apply_local(mixed, LocalOp(0.0), IDENTITY)).real == pytest.approx(0.5)
    assert np.trace(apply_local(mixed, LocalOp(0.0), LocalOp(0.0))).real == pytest.approx(0.25)
    # theta = pi swaps up and down
    uu = qstate.projector(qstate.KET_UU)
    out = apply_local(uu, LocalOp(1.0, math.pi, 0.0), IDENTITY)
    np.testing.assert_allclose(out, qstate.projector(qstate.KET_DU), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 10_000),
    st.floats(0, 1),
    st.floats(0, math.pi),
    st.floats(0, 1),
    st.floats(0, math.pi),
)
def test_apply_local_never_increases_trace(seed, fa, ta, fb, tb):
    rho = random_state(seed)
    out = apply_local(rho, LocalOp(fa, ta, 0.3), LocalOp(fb, tb, 1.1))
    assert np.trace(out).real <= 1 + 1e-12
    assert np.linalg.eigvalsh(out).min() > -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1), st.floats(0.01, 1))
def test_trace_multiplicative_on_products(seed, fa, fb):
    rng = np.random.default_rng(seed)
    qa, qb = qstate.random_qubit(rng), qstate.random_qubit(rng)
    oa, ob = LocalOp(fa, 0.4, 0.2), LocalOp(fb, 2.0, 5.0)
    ta = np.trace(oa.matrix() @ qa @ oa.matrix().conj().T).real
    tb = np.trace(ob.matrix() @ qb @ ob.matrix().conj().T).real
    out = apply_local(np.kron(qa, qb), oa, ob)
    assert np.trace(out).real == pytest.approx(ta * tb, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1), st.floats(0.05, 1))
def test_concurrence_scales_under_filters(seed, fa, fb):
    # an unnormalized filtered state has concurrence f_A f_B C(rho)
    rho = random_state(seed)
    out = apply_local(rho, LocalOp(fa, 0.7, 0.1), LocalOp(fb, 1.9, 2.2))
    tr = np.trace(out).real
    assert tr * qstate.wootters_concurrence(out) == pytest.approx(
        fa * fb * qstate.wootters_concurrence(rho), abs=1e-9
    )


# --- erase rule ----------------------------------------------------------------


def test_erase_examples():
    assert erase_marginal([0, 0, 0]) == IDENTITY
    op = erase_marginal([0, 0, 0.6])
    assert op.theta == pytest.approx(math.pi)
    assert op.phi == 0.0
    assert op.f == pytest.approx(0.5)
    op = erase_marginal([0, 0, -0.48])
    assert op.theta == pytest.approx(0.0)
    assert op.f == pytest.approx(math.sqrt(0.52 / 1.48))
    op = erase_marginal([0.5, 0, 0])
    assert op.theta == pytest.approx(math.pi / 2)
    assert op.phi == pytest.approx(math.pi)
    # a direction just off the axis keeps its tilt
    gamma = np.array([0.0, 5e-9, 0.5])
    op = erase_marginal(gamma)
    out = op.matrix() @ qubit_from_bloch(gamma) @ op.matrix().conj().T
    assert np.linalg.norm(bloch_vector(out)) < 1e-15


def test_erase_rejects_pure_marginal():
    with pytest.raises(NotDistillableError):
        erase_marginal([0, 0, 1])
    with pytest.raises(NotDistillableError):
        erase_marginal([0.6, 0.8, 0])


@settings(max_examples=200, deadline=None)
@given(bloch_vectors)
def test_erase_makes_qubit_maximally_mixed(t):
    gamma = _scaled(t)
    op = erase_marginal(gamma)
    d = op.matrix()
    out = d @ qubit_from_bloch(gamma) @ d.conj().T
    assert np.linalg.norm(bloch_vector(out)) < 1e-10
    # (1 - g) / 2 up-weight kept, f^2 (1 + g) / 2 = (1 - g) / 2 down-weight kept
    assert np.trace(out).real == pytest.approx(1 - np.linalg.norm(gamma), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_erase_on_two_qubit_state(seed):
    rho = random_state(seed)
    op = erase_marginal(marginal(rho, "A"))
    assert np.linalg.norm(marginal(apply_local(rho, op, IDENTITY), "A")) < 1e-10


# --- distillation ----------------------------------------------------------------


@pytest.mark.parametrize("name", ["bell", "werner", "mixed_identity"])
def test_unfiltered_fixtures_need_no_steps(name):
    record, out = distill(fixture(name).state)
    assert record.iterations == 0
    assert record.survival == pytest.approx(1.0)
    assert record.op_a == record.op_b == IDENTITY
    assert len(record.history) == 1


def test_rho_prime_needs_no_steps():
    record, _ = distill(fixture("rho_prime", 0.6).state)
    assert record.iterations == 0


def test_pure_states_take_one_step():
    rng = np.random.default_rng(7)
    for _ in range(50):
        rho = qstate.projector(qstate.random_pure_ket(rng))
        record, out = distill(rho)
        assert record.iterations == 1
        for step in record.history:
            assert step.v_a == pytest.approx(step.v_b, abs=1e-9)
        c = qstate.wootters_concurrence(rho)
        assert record.history[-1].concurrence == pytest.approx(c, abs=1e-9)


def test_product_states_take_two_steps():
    for seed in range(50):
        record, out = distill(qstate.random_product_state(seed))
        assert record.iterations == 2
        np.testing.assert_allclose(q_matrix(out), 0, atol=1e-9)


def test_rho_eps_lambda_converges_to_known_survival():
    rho = fixture("rho_eps_lambda", 0.5, 0.8).state
    record, out = distill(rho)
    assert record.converged
    assert record.survival == pytest.approx(0.42, abs=1e-6)
    assert record.history[-1].concurrence == pytest.approx(0.44, abs=1e-7)
    # filters alternate, Alice first
    assert [s.side for s in record.history[1:5]] == ["A", "B", "A", "B"]


def test_asymptotic_case_does_not_converge():
    rho = fixture("asymptotic_fig2b").state
    with pytest.raises(NoConvergenceError) as err:
        distill(rho, max_iters=40)
    record = err.value.record
    assert not record.converged
    assert record.iterations == 40
    for side in "AB":
        f = record.filters(side)
        assert np.all(np.diff(f) < 0)
    assert record.survival < record.history[10].survival


def test_threshold_validation():
    with pytest.raises(ValueError):
        distill(qstate.bell(), threshold=0)


def test_distilled_state_is_normal_form():
    for seed in range(100):
        record, out = distill(random_state(seed), max_iters=5000)
        r = qstate.to_r_matrix(out)
        assert max(np.abs(r[1:, 0]).max(), np.abs(r[0, 1:]).max()) / r[0, 0] < 1e-6


def test_distill_is_deterministic():
    rho = random_state(3)
    a, sa = distill(rho, max_iters=5000)
    b, sb = distill(rho, max_iters=5000)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(sa, sb)


def test_record_rows():
    record, _ = distill(fixture("rho_eps_lambda", 0.5, 0.8).state, threshold=1e-3)
    rows = record.rows()
    assert rows[0]["k"] == 0 and rows[0]["side"] is None
    assert set(rows[0]) == {
        "k", "side", "visibility", "f", "theta", "phi", "survival", "v_a", "v_b", "concurrence"
    }
    d = record.to_dict()
    assert d["iterations"] == len(rows) - 1
    assert "copies" not in d
