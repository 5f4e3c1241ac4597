import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridsentry.state import StateVector
from gridsentry.state_dynamics import (
    NoiseModel,
    RankDeficientError,
    SimulationError,
    StateHistory,
    TransitionMatrix,
    estimate_transition,
    read_trajectory,
    simulate,
    step,
    write_trajectory,
)


def stable_block(n, rng, radius=0.95):
    """A random orthogonal matrix scaled to the given spectral radius."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return radius * Q


def run_linear(F: TransitionMatrix, x0, steps, rng=None, sigma=0.0):
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(steps):
        w = 0 if rng is None else rng.normal(0, sigma, F.dim)
        xs.append(F.apply(xs[-1]) + w)
    return np.vstack(xs)


def test_identity_step_with_negligible_noise(ieee14):
    x0 = StateVector.flat(14, ieee14.slack)
    x1 = step(TransitionMatrix.identity(14), x0, NoiseModel(1e-30, seed=3))
    np.testing.assert_allclose(x1.values, x0.values, atol=1e-12)
    assert x1.t == 1 and x1.clamped == 0


def test_zero_transition_clamps_magnitudes():
    n = 5
    zero = TransitionMatrix(np.zeros((n - 1, n - 1)), np.zeros((n, n)))
    x1 = step(zero, StateVector.flat(n, 0), NoiseModel(1e-30))
    np.testing.assert_allclose(x1.vm, 0.2)
    assert x1.clamped == n


def test_step_is_deterministic_given_seed():
    F = TransitionMatrix.identity(6)
    x0 = StateVector.flat(6, 2)
    a = step(F, x0, NoiseModel(0.5, seed=11))
    b = step(F, x0, NoiseModel(0.5, seed=11))
    assert a == b


def test_step_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        step(TransitionMatrix.identity(4), StateVector.flat(5, 0), NoiseModel())


def test_noise_variance_must_be_positive():
    with pytest.raises(ValueError):
        NoiseModel(0.0)


def test_noise_sample_variance():
    draws = NoiseModel(4.0, seed=1).draw(200_000)
    assert draws.var() == pytest.approx(4.0, rel=0.02)
    assert abs(draws.mean()) < 0.02


def test_transition_matrix_full_roundtrip():
    rng = np.random.default_rng(0)
    F = TransitionMatrix(rng.normal(size=(3, 3)), rng.normal(size=(4, 4)))
    G = TransitionMatrix.from_full(F.F)
    np.testing.assert_array_equal(G.A, F.A)
    np.testing.assert_array_equal(G.B, F.B)
    assert F.F[:3, 3:].any() == False  # noqa: E712
    x = rng.normal(size=7)
    np.testing.assert_allclose(F.apply(x), F.F @ x)


def test_exact_recovery_noiseless():
    n = 14
    rng = np.random.default_rng(5)
    F = TransitionMatrix(stable_block(n - 1, rng), stable_block(n, rng))
    assert max(abs(np.linalg.eigvals(F.F))) == pytest.approx(0.95)
    M = 2 * n - 1
    X = run_linear(F, rng.normal(size=2 * n - 1), M)
    Fh = estimate_transition(X)
    assert np.linalg.norm(Fh.F - F.F) <= 1e-8


def test_history_window_estimate_matches_array_form():
    n = 4
    rng = np.random.default_rng(1)
    F = TransitionMatrix(stable_block(n - 1, rng), stable_block(n, rng))
    X = run_linear(F, rng.normal(size=2 * n - 1), 20, rng, 0.1)
    M = 2 * n - 1
    h = StateHistory(M, n)
    for t, row in enumerate(X):
        h.push(StateVector(row, slack=0, t=t))
    assert h.full and len(h) == M + 1
    np.testing.assert_array_equal(estimate_transition(h).F, estimate_transition(X[-(M + 1):]).F)


def test_history_rules():
    with pytest.raises(ValueError):
        StateHistory(5, n_bus=4)
    h = StateHistory(7, 4)
    h.push(StateVector.flat(4, 0, t=0))
    with pytest.raises(ValueError):
        h.push(StateVector.flat(4, 0, t=2))
    with pytest.raises(ValueError):
        estimate_transition(h)


def test_constant_history_is_rank_deficient():
    X = np.tile(np.arange(1.0, 8.0), (8, 1))
    with pytest.raises(RankDeficientError) as info:
        estimate_transition(X)
    assert info.value.block == "A"
    assert info.value.rank == 1


def test_residuals_orthogonal_to_regressors():
    n = 6
    rng = np.random.default_rng(8)
    F = TransitionMatrix(stable_block(n - 1, rng), stable_block(n, rng))
    X = run_linear(F, rng.normal(size=2 * n - 1), 60, rng, 0.3)
    Fh = estimate_transition(X)
    na = n - 1
    lagged, cur = X[:-1], X[1:]
    for sl, blk in ((slice(0, na), Fh.A), (slice(na, None), Fh.B)):
        R = cur[:, sl] - lagged[:, sl] @ blk.T
        assert np.abs(lagged[:, sl].T @ R).max() <= 1e-8


def test_longer_window_estimates_better_on_average():
    n = 5
    errs = {11: [], 80: []}
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        F = TransitionMatrix(stable_block(n - 1, rng), stable_block(n, rng))
        X = run_linear(F, rng.normal(size=2 * n - 1), 80, rng, 0.2)
        for M in errs:
            errs[M].append(np.linalg.norm(estimate_transition(X[-(M + 1):]).F - F.F))
    assert np.mean(errs[80]) < np.mean(errs[11])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_estimate_is_block_diagonal_and_exact_when_noiseless(n, seed):
    rng = np.random.default_rng(seed)
    F = TransitionMatrix(stable_block(n - 1, rng, 0.9), stable_block(n, rng, 0.9))
    X = run_linear(F, rng.normal(size=2 * n - 1), 2 * n - 1)
    Fh = estimate_transition(X)
    full = Fh.F
    na = n - 1
    assert not full[:na, na:].any() and not full[na:, :na].any()
    np.testing.assert_allclose(full, F.F, atol=1e-7)


def test_simulate_single_step_uses_identity(ieee14):
    (x1, F1), = list(simulate(ieee14, 1, noise=NoiseModel(1e-4, seed=0)))
    np.testing.assert_array_equal(F1.F, np.eye(27))
    assert x1.t == 1 and len(x1) == 27


def test_simulate_ieee14_small_noise(ieee14):
    out = list(simulate(ieee14, 100, noise=NoiseModel(1e-4, seed=0)))
    assert [x.t for x, _ in out] == list(range(1, 101))
    M = 27
    for k, (x, F) in enumerate(out):
        assert np.isfinite(x.values).all()
        assert ((x.vm >= 0.2) & (x.vm <= 2.0)).all()
        if k < M:  # window fills after M transitions
            np.testing.assert_array_equal(F.F, np.eye(27))
        else:
            assert not F.F[:13, 13:].any()
    assert not np.array_equal(out[M][1].F, np.eye(27))


def test_simulate_is_deterministic(ieee14):
    a = [x for x, _ in simulate(ieee14, 40, noise=NoiseModel(1.0, seed=4))]
    b = [x for x, _ in simulate(ieee14, 40, noise=NoiseModel(1.0, seed=4))]
    assert a == b


def test_simulate_flat_start(two_bus):
    x, _ = next(simulate(two_bus, 1, M=3, noise=NoiseModel(1e-30), flat_start=True))
    np.testing.assert_allclose(x.values, [0, 1, 1], atol=1e-12)


def test_simulate_wraps_estimation_failure(two_bus):
    # a zero-noise random walk from a constant state gives a rank-1 regressor
    x0 = StateVector.flat(2, 0)
    gen = simulate(two_bus, 10, M=3, noise=NoiseModel(1e-300), x0=x0)
    with pytest.raises(SimulationError) as info:
        list(gen)
    assert info.value.t == 4
    assert isinstance(info.value.cause, RankDeficientError)


def test_trajectory_roundtrip(tmp_path, ieee14):
    states = [x for x, _ in simulate(ieee14, 5, noise=NoiseModel(0.1, seed=2))]
    path = tmp_path / "traj.csv"
    write_trajectory(path, ieee14, states, {"seed": 2})
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t" and len(header) == 28 and "theta_1" not in header
    back = read_trajectory(path, ieee14.slack)
    assert [s.t for s in back] == [1, 2, 3, 4, 5]
    for s, r in zip(states, back):
        np.testing.assert_allclose(r.values, s.values, rtol=1e-11, atol=1e-12)
    assert '"seed": 2' in path.with_suffix(".json").read_text()
