import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpell import (CostTally, DiffusionMatrix, MlpParams, NonFiniteError, Nonlinearity, Problem,
                    SampleBudgetExceeded, Variant, compiled_available, cost_bound, cost_recursion_exact,
                    derive_stream, empirical_rmse, mlp_estimate, mlp_replicate)
from mlpell.oracle import ManufacturedSpec, manufacture

needs_ext = pytest.mark.skipif(not compiled_available(), reason="compiled kernel not built")

BS = [DiffusionMatrix.scaled_identity(0.8, 2), DiffusionMatrix.diagonal([1.0, -0.5]),
      DiffusionMatrix.dense([[1.0, 0.3], [-0.2, 0.9]])]


def _builtin_problems():
    out = []
    for B in BS:
        out.append(Problem.build(B, Nonlinearity.affine(0.4, 1.0), 2.0))
        out.append(Problem.build(B, Nonlinearity.affine(1.6, 1.0), 2.0, L=0.4, variant=Variant.ELLIPTIC))
        out.append(Problem.build(B, Nonlinearity.linear([1.0, -2.0]), 2.0))
        out.append(Problem.build(B, Nonlinearity.quadratic_x(), 2.0))
        out.append(manufacture(ManufacturedSpec(), B, 5.0))
        out.append(manufacture(ManufacturedSpec("cosine-mean", "arctan", psi_scale=0.5), B, 5.0))
    return out


class TestLevelZero:
    @given(st.integers(1, 10), st.integers(0, 2**63), st.floats(-5, 5))
    @settings(max_examples=50)
    def test_zero_value_and_cost(self, M, seed, x0):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.constant(1.0), 1.0)
        est = mlp_estimate(p, MlpParams(M, 0, seed), [x0])
        assert est.value == 0.0 and est.cost == CostTally() and est.level == 0


class TestExactness:
    @pytest.mark.parametrize("backend", ["python", "auto"])
    def test_constant_sfpe(self, backend):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.constant(2.0), 1.0)
        for n in (1, 2, 3):
            vals = [s.value for s in mlp_replicate(p, 2, n, [0.3], 5, 0, backend=backend)]
            assert vals == [2.0] * 5

    def test_constant_elliptic(self):
        # f(x, v) = lam v - c solves to c / lam
        lam, c = 4.0, 2.0
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 2), Nonlinearity.affine(lam, -c), lam,
                          L=0.0, variant=Variant.ELLIPTIC)
        vals = {s.value for s in mlp_replicate(p, 3, 3, [0.0, 1.0], 10, 0)}
        assert vals == {c / lam}

    def test_v_independent_is_plain_average(self):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.quadratic_x(), 2.0)
        est = mlp_estimate(p, MlpParams(3, 2, 4), [0.5])
        # the k = 0 base average alone; higher levels cancel exactly
        key = derive_stream(4).child(0)
        from mlpell import sample_point
        s = 0.0
        for m in range(1, 10):
            y, _, _ = sample_point([0.5], p.B, 2.0, key.child(m).point_stream())
            s += y[0] * y[0]
        assert est.value == pytest.approx(s / (2.0 * 9.0), rel=1e-13)


class TestBackends:
    @needs_ext
    def test_parity(self):
        for p in _builtin_problems():
            for n in (1, 2, 3):
                a = mlp_estimate(p, MlpParams(3, n, 7), [0.3, -0.4], backend="python")
                b = mlp_estimate(p, MlpParams(3, n, 7), [0.3, -0.4], backend="compiled")
                assert a == b

    def test_unknown_backend(self):
        p = _builtin_problems()[0]
        with pytest.raises(ValueError):
            mlp_estimate(p, MlpParams(2, 1), [0, 0], backend="gpu")

    def test_custom_runs_in_python(self):
        f = Nonlinearity.custom(lambda x, v: 1.0 + 0.2 * math.sin(v), 0.2)
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), f, 2.0)
        a = mlp_estimate(p, MlpParams(2, 2, 1), [0.0])
        assert a.cost.total == cost_recursion_exact(1, 2, 2)


class TestVariant:
    @given(st.integers(0, 2**32), st.integers(1, 3), st.integers(2, 4))
    @settings(max_examples=10, deadline=None)
    def test_elliptic_equals_reduced_sfpe(self, seed, n, M):
        gen = np.random.default_rng(seed)
        d = int(gen.integers(1, 4))
        lam = float(gen.uniform(1.0, 5.0))
        spec = ManufacturedSpec(["gaussian-bump", "cosine-mean"][seed % 2], ["sin", "arctan"][seed % 3 % 2],
                                float(gen.uniform(0.2, 2.0)), float(gen.uniform(0.0, 0.9)) * lam)
        p = manufacture(spec, DiffusionMatrix.diagonal(gen.uniform(-1.5, 1.5, size=d)), lam)
        x = gen.normal(size=d)
        a = mlp_estimate(p, MlpParams(M, n, seed), x)
        b = mlp_estimate(p.as_sfpe(), MlpParams(M, n, seed), x)
        assert a.value == b.value and a.cost == b.cost


class TestCost:
    @pytest.mark.parametrize("d", [1, 3])
    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_identity(self, d, M):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, d), Nonlinearity.constant(1.0), 1.0)
        for n in range(0, 5):
            est = mlp_estimate(p, MlpParams(M, n, 3), np.zeros(d))
            assert est.cost.total == cost_recursion_exact(d, n, M)
            assert est.cost.gaussians == d * est.cost.exponentials
            if n >= 1:
                assert est.cost.total <= cost_bound(d, n, M)

    def test_independent_of_seed_and_point(self):
        p = _builtin_problems()[4]
        costs = {mlp_estimate(p, MlpParams(3, 3, s), [s * 0.1, -s]).cost for s in range(5)}
        assert len(costs) == 1

    def test_python_tally_matches(self):
        p = manufacture(ManufacturedSpec(), DiffusionMatrix.scaled_identity(1.0, 1), 4.0)
        est = mlp_estimate(p, MlpParams(4, 2, 0), [0.0], backend="python")
        assert est.cost.total == 112 == cost_recursion_exact(1, 2, 4)


class TestPointSharing:
    def test_pairs_receive_same_point(self):
        p = manufacture(ManufacturedSpec(), DiffusionMatrix.dense([[1.0, 0.5], [0.0, 1.0]]), 5.0)
        seen = {}

        def obs(path, level, x):
            seen[path] = (level, x)

        mlp_estimate(p, MlpParams(2, 3, 9), [0.1, 0.2], observer=obs)
        pairs = 0
        for path, (level, x) in seen.items():
            if path and path[-1] > 0:
                twin = path[:-1] + (-path[-1],)
                assert seen[twin][1] == x
                assert seen[twin][0] == level - 1
                pairs += 1
        assert pairs > 0

    def test_observer_does_not_change_value(self):
        p = manufacture(ManufacturedSpec(), DiffusionMatrix.scaled_identity(1.0, 1), 5.0)
        a = mlp_estimate(p, MlpParams(3, 2, 2), [0.0])
        b = mlp_estimate(p, MlpParams(3, 2, 2), [0.0], observer=lambda *a: None)
        assert a == b


class TestDeterminism:
    def test_repeatable(self):
        p = _builtin_problems()[5]
        a = mlp_estimate(p, MlpParams(3, 3, 123), [0.1, 0.1], idx=(4, -1))
        b = mlp_estimate(p, MlpParams(3, 3, 123), [0.1, 0.1], idx=(4, -1))
        assert a == b

    def test_threads_do_not_change_results(self):
        p = _builtin_problems()[4]
        a = mlp_replicate(p, 3, 3, [0.0, 0.0], 17, 5, threads=1)
        b = mlp_replicate(p, 3, 3, [0.0, 0.0], 17, 5, threads=8)
        assert a == b

    def test_replicate_matches_single(self):
        p = _builtin_problems()[4]
        reps = mlp_replicate(p, 3, 2, [0.0, 0.0], 3, 40)
        for i, r in enumerate(reps):
            assert r == mlp_estimate(p, MlpParams(3, 2, 40 + i), [0.0, 0.0])


class TestGuards:
    def test_budget(self):
        p = _builtin_problems()[0]
        with pytest.raises(SampleBudgetExceeded):
            mlp_estimate(p, MlpParams(10, 6, 0), [0, 0], budget=10**6)

    def test_budget_env(self, monkeypatch):
        p = _builtin_problems()[0]
        monkeypatch.setenv("MLP_BUDGET", "100")
        with pytest.raises(SampleBudgetExceeded):
            mlp_estimate(p, MlpParams(4, 3, 0), [0, 0])

    def test_overflowing_cost(self):
        p = _builtin_problems()[0]
        with pytest.raises(SampleBudgetExceeded):
            mlp_estimate(p, MlpParams(10, 40, 0), [0, 0])

    @pytest.mark.parametrize("backend", ["python", "auto"])
    def test_non_finite(self, backend):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.constant(float("inf")), 1.0)
        with pytest.raises(NonFiniteError) as info:
            mlp_estimate(p, MlpParams(2, 1, 0), [0.5], backend=backend)
        assert info.value.v == 0.0 and len(info.value.x) == 1

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MlpParams(0, 1)
        with pytest.raises(ValueError):
            MlpParams(2, -1)

    def test_point_dimension(self):
        with pytest.raises(ValueError):
            mlp_estimate(_builtin_problems()[0], MlpParams(2, 1), [0.0])


class TestRmse:
    def test_examples(self):
        assert empirical_rmse([1.0, 1.0, 1.0], 1.0) == (0.0, 0.0)
        rmse, _ = empirical_rmse([0.0, 2.0], 1.0)
        assert rmse == 1.0
        with pytest.raises(ValueError):
            empirical_rmse([1.0], 1.0)

    def test_constant_case(self):
        p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.constant(3.0), 1.5)
        rmse, ci = empirical_rmse(mlp_replicate(p, 2, 3, [0.0], 8, 0), 2.0)
        assert rmse == 0.0 and ci == 0.0


def test_variance_bound_level_one():
    # Var U_1 <= E|f(X, 0)|^2 / (lam^2 M) with X = x + B W_R
    lam, M, x = 2.0, 4, 3.0
    p = Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.linear([1.0]), lam)
    vals = np.array([s.value for s in mlp_replicate(p, M, 1, [x], 4000, 0)])
    gen = derive_stream(99).numpy_generator()
    X = x + np.sqrt(gen.exponential(1 / lam, 100_000)) * gen.standard_normal(100_000)
    ef2 = np.mean(X**2)
    ef2_ci = 3 * np.std(X**2, ddof=1) / math.sqrt(X.size)
    assert ef2 == pytest.approx(x * x + 1 / lam, rel=0.02)
    var = vals.var(ddof=1)
    # chi-square style slack on the sample variance
    var_slack = 3 * var * math.sqrt(2 / (vals.size - 1))
    assert var - var_slack <= (ef2 + ef2_ci) / (lam * lam * M)
