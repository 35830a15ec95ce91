import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from e3cast.ensembler import (
    EgdState,
    FtplState,
    RegretLedger,
    egd_update,
    ftpl_accumulate,
    ftpl_select,
    init_online_scaling,
    online_scale,
    regret_report,
)
from e3cast.errors import ShapeError
from gradcheck import fd_check, os_problem

losses = st.integers(2, 6).flatmap(lambda d: arrays(np.float64, d, elements=st.floats(0, 50)))


def egd_linear_oracle(w, l, eta):
    v = w * np.exp(-eta * l)
    return v / v.sum()


def test_egd_matches_linear_space_update(rng):
    s = EgdState.uniform(4, eta=0.7, scale_free=False)
    w = np.full(4, 0.25)
    for _ in range(20):
        l = rng.random(4) * 3
        s = egd_update(s, l)
        w = egd_linear_oracle(w, l, 0.7)
        np.testing.assert_allclose(s.w, w, rtol=1e-12)


def test_egd_two_expert_example():
    s = egd_update(EgdState.uniform(2, eta=1.0, scale_free=False), [0.0, np.log(3.0)])
    np.testing.assert_allclose(s.w, [0.75, 0.25], rtol=1e-14)


def test_egd_scale_free_is_invariant_to_loss_units(rng):
    a = EgdState.uniform(3)
    b = EgdState.uniform(3)
    for _ in range(10):
        l = rng.random(3)
        a, b = egd_update(a, l), egd_update(b, 1000.0 * l)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-10)


@given(st.lists(losses, min_size=1, max_size=30), st.booleans())
def test_egd_weights_stay_on_simplex(seq, scale_free):
    d = len(seq[0])
    s = EgdState.uniform(d, scale_free=scale_free)
    for l in seq:
        if len(l) != d:
            continue
        s = egd_update(s, l)
        assert np.all(s.w >= 0) and np.all(np.isfinite(s.log_w))
        assert s.w.sum() == pytest.approx(1.0, abs=1e-12)


def test_egd_rejects_bad_losses():
    with pytest.raises(ShapeError):
        egd_update(EgdState.uniform(3), [1.0, 2.0])
    with pytest.raises(ValueError):
        egd_update(EgdState.uniform(2), [1.0, -1.0])


def test_ftpl_without_noise_is_the_leader_with_lowest_index_ties():
    s = FtplState.fresh(4, scale=0.0)
    s = ftpl_accumulate(s, [3.0, 1.0, 1.0, 2.0])
    assert ftpl_select(s) == 1
    assert ftpl_select(FtplState.fresh(3)) == 0  # t = 0 has no perturbation


def test_ftpl_single_expert():
    assert ftpl_select(ftpl_accumulate(FtplState.fresh(1), [5.0])) == 0


def test_ftpl_is_deterministic_per_seed(rng):
    def picks(seed):
        s = FtplState.fresh(3, seed=seed)
        out = []
        for l in np.random.default_rng(1).random((30, 3)):
            out.append(ftpl_select(s))
            s = ftpl_accumulate(s, l)
        return out

    assert picks(7) == picks(7)


def test_ftpl_perturbation_scale():
    s = ftpl_accumulate(ftpl_accumulate(FtplState.fresh(2), [1.0, 3.0]), [1.0, 3.0])
    assert s.perturbation_scale() == pytest.approx(4.0 / np.sqrt(2))


def test_ftpl_follows_a_clearly_better_expert():
    s = FtplState.fresh(3, seed=0)
    for _ in range(200):
        s = ftpl_accumulate(s, [1.0, 0.0, 1.0])
    assert sum(ftpl_select(s) == 1 for _ in range(50)) == 50


def test_untrained_online_scaling_equals_softmax_weights(rng):
    p = init_online_scaling(3, 4, 8, 4, 2, rng)
    F = rng.normal(size=(3, 2, 4))
    w = rng.normal(size=3)
    s, comb, _ = online_scale(F, rng.normal(size=(2, 4)), w, p, ema=rng.normal(size=(3, 2, 8, 4)))
    ref = np.exp(w) / np.exp(w).sum()
    np.testing.assert_allclose(s, np.tile(ref, (2, 1)), rtol=1e-14)
    np.testing.assert_allclose(comb, np.einsum("d,dbh->bh", ref, F), rtol=1e-12)


@pytest.mark.parametrize("adapted", [True, False])
def test_online_scaling_gradients(adapted):
    params, loss, grads = os_problem(seed=1, adapted=adapted)
    errs = fd_check(params, loss, grads)
    assert max(errs.values()) <= 1e-4, errs


def test_online_scaling_combination_is_convex(rng):
    params, _, _ = os_problem(seed=2)
    F = rng.normal(size=(3, 2, 4))
    s, comb, _ = online_scale(F, rng.normal(size=(2, 4)), rng.normal(size=3), params)
    np.testing.assert_allclose(s.sum(axis=1), 1.0)
    assert np.all(comb <= F.max(axis=0) + 1e-12) and np.all(comb >= F.min(axis=0) - 1e-12)


def test_ledger_csv_round_trip(tmp_path, rng):
    led = RegretLedger()
    for _ in range(7):
        led.record(rng.random(), rng.random(3))
    led.to_csv(tmp_path / "r.csv")
    back = RegretLedger.from_csv(tmp_path / "r.csv")
    assert back.combined == led.combined
    np.testing.assert_array_equal(np.array(back.experts), np.array(led.experts))


def test_regret_report_example():
    led = RegretLedger()
    for c, e in [(1.0, [2.0, 0.5]), (1.0, [2.0, 0.5]), (2.0, [0.0, 1.0])]:
        led.record(c, e)
    rep = regret_report(led)
    # cumulative experts at T: [4.0, 2.0] -> expert 1 is best
    assert rep.best_expert == 1
    np.testing.assert_allclose(rep.curve, [0.5, 1.0, 2.0])


def test_regret_slope_of_square_root_growth():
    led = RegretLedger()
    curve = 3.0 * np.sqrt(np.arange(1, 401))
    inc = np.diff(np.concatenate([[0.0], curve]))
    for x in inc:
        led.record(x + 1.0, [1.0, 2.0])
    rep = regret_report(led)
    assert rep.slope == pytest.approx(0.5, abs=1e-6)


def test_regret_slope_is_flat_when_regret_never_turns_positive():
    led = RegretLedger()
    for _ in range(10):
        led.record(0.5, [1.0, 2.0])
    assert regret_report(led).slope == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        regret_report(RegretLedger())


def test_egd_spec_examples(rng):
    s = egd_update(EgdState.uniform(2, eta=1.0, scale_free=False), [0.0, np.log(2.0)])
    np.testing.assert_allclose(s.w, [2 / 3, 1 / 3], rtol=1e-14)
    w0 = EgdState(np.log(np.array([0.2, 0.3, 0.5])), eta=1.0, scale_free=False)
    np.testing.assert_allclose(egd_update(w0, [0.7, 0.7, 0.7]).w, [0.2, 0.3, 0.5], rtol=1e-14)
    frozen = EgdState(np.log(np.array([0.2, 0.3, 0.5])), eta=0.0, scale_free=False)
    np.testing.assert_allclose(egd_update(frozen, rng.random(3)).w, [0.2, 0.3, 0.5], rtol=1e-14)


def test_egd_simplex_over_many_random_updates():
    r = np.random.default_rng(0)
    s = EgdState.uniform(5)
    worst = 0.0
    for l in r.exponential(size=(100_000, 5)) * r.choice([1e-3, 1.0, 1e3], size=(100_000, 1)):
        s = egd_update(s, l)
        worst = max(worst, abs(s.w.sum() - 1.0))
    assert worst <= 1e-12 and np.all(s.w >= 0)


@given(losses, st.integers(0, 2**31 - 1))
def test_egd_best_expert_gains_relative_weight(l, seed):
    r = np.random.default_rng(seed)
    w = r.dirichlet(np.ones(len(l)))
    s = EgdState(np.log(w), eta=1.0, scale_free=False)
    new = egd_update(s, l).w
    i = int(np.argmin(l))
    if np.sum(l == l[i]) > 1:
        return
    for j in range(len(l)):
        if j != i:
            assert new[i] / new[j] >= w[i] / w[j] * (1 - 1e-12)


def test_ftpl_spec_examples():
    s = ftpl_accumulate(FtplState.fresh(3, scale=0.0), [5.0, 3.0, 7.0])
    assert ftpl_select(s) + 1 == 2
    s = ftpl_accumulate(ftpl_accumulate(FtplState.fresh(2), [1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_array_equal(s.cumulative, [2.0, 4.0])
    np.testing.assert_array_equal(ftpl_accumulate(s, [0.0, 0.0]).cumulative, s.cumulative)


def test_ftpl_without_noise_equals_argmin_on_random_states():
    r = np.random.default_rng(0)
    for _ in range(10_000):
        d = int(r.integers(1, 7))
        cum = r.integers(0, 5, size=d).astype(float)  # small integers force frequent ties
        s = FtplState(cum, m=int(r.integers(1, 10)), scale=0.0, rng=np.random.default_rng(int(r.integers(1 << 30))), t=5)
        assert ftpl_select(s) == int(np.argmin(cum))


def test_ftpl_symmetric_experts_are_chosen_evenly():
    s = FtplState(np.zeros(2), m=64, scale=1.0, rng=np.random.default_rng(3), t=1)
    freq = np.mean([ftpl_select(s) for _ in range(10_000)])
    assert abs(freq - 0.5) <= 0.05


def test_both_learners_concentrate_on_the_better_expert():
    r = np.random.default_rng(0)
    egd, ftpl = EgdState.uniform(2), FtplState.fresh(2, seed=0)
    picks = []
    for _ in range(500):
        l = np.array([r.normal(1.0, 0.2), r.normal(0.5, 0.2)]).clip(0)
        picks.append(ftpl_select(ftpl))
        egd, ftpl = egd_update(egd, l), ftpl_accumulate(ftpl, l)
    assert egd.w[1] >= 0.9
    assert np.mean(np.array(picks[-100:]) == 1) >= 0.9


def test_identical_experts_combine_to_the_common_forecast(rng):
    params, _, _ = os_problem(seed=5)
    f = rng.normal(size=(2, 4))
    _, comb, _ = online_scale(np.stack([f] * 3), rng.normal(size=(2, 4)), rng.normal(size=3), params)
    np.testing.assert_allclose(comb, f, rtol=1e-12)


def test_softmax_weight_example(rng):
    p = init_online_scaling(2, 4, 8, 4, 2, rng)
    s, _, _ = online_scale(rng.normal(size=(2, 1, 4)), np.zeros((1, 4)), np.array([0.7, 0.3]), p)
    np.testing.assert_allclose(s[0], [0.5987, 0.4013], atol=5e-5)


def test_regret_of_static_uniform_mixture():
    led = RegretLedger()
    for _ in range(20):
        led.record(0.5, [1.0, 0.0])
    np.testing.assert_allclose(regret_report(led).curve, np.arange(1, 21) / 2)


def test_regret_zero_when_combined_is_best():
    led = RegretLedger()
    for l in np.random.default_rng(0).random((10, 3)):
        led.record(0.1, [0.1, 0.1 + l[1], 0.1 + l[2]])
    np.testing.assert_allclose(regret_report(led).curve, 0.0, atol=1e-15)


def test_egd_regret_per_step_vanishes():
    led, s = RegretLedger(), EgdState.uniform(2)
    for _ in range(2000):
        l = np.array([1.0, 0.0])
        led.record(float(s.w @ l), l)
        s = egd_update(s, l)
    assert regret_report(led).curve[-1] / 2000 < 0.01
