import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_episode, random_sentence
from searchtag.errors import ConfigurationError, ContractViolation
from searchtag.mdp import Episode, EpisodeStep, Sentence, initial_state, transition
from searchtag.neural import (
    AdaGradState,
    LstmParams,
    ModelParams,
    Scorer,
    adagrad_step,
    clip_gradients,
    encode_tags,
    encode_words,
    gradients,
    init_params,
    loss,
    loss_and_gradients,
    lstm_cell_forward,
    one_hot,
    params_equal,
    policy,
    policy_from_repr,
    state_repr,
    value,
)


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_cell(x, h_prev, c_prev, p: LstmParams):
    """Element-by-element transcription of the five cell equations."""
    hsz = p.hidden
    Wf, Uf, bf = p.gate("f")
    Wi, Ui, bi = p.gate("i")
    Wo, Uo, bo = p.gate("o")
    Wc, Uc, bc = p.gate("c")

    def aff(W, U, b, j):
        return sum(W[j, k] * x[k] for k in range(len(x))) + sum(U[j, k] * h_prev[k] for k in range(hsz)) + b[j]

    h, c = [], []
    for j in range(hsz):
        f = _sig(aff(Wf, Uf, bf, j))
        i = _sig(aff(Wi, Ui, bi, j))
        o = _sig(aff(Wo, Uo, bo, j))
        cj = f * c_prev[j] + i * math.tanh(aff(Wc, Uc, bc, j))
        c.append(cj)
        h.append(o * math.tanh(cj))
    return np.array(h), np.array(c)


def random_lstm(rng, d, h):
    return LstmParams(rng.uniform(-1, 1, (4 * h, d)), rng.uniform(-1, 1, (4 * h, h)), rng.uniform(-1, 1, 4 * h))


# -- cell and encoders -------------------------------------------------------

def test_cell_zero_everything():
    p = LstmParams.zeros(3, 2)
    h, c, _ = lstm_cell_forward(np.zeros(3), np.zeros(2), np.zeros(2), p)
    assert np.array_equal(h, np.zeros(2)) and np.array_equal(c, np.zeros(2))


def test_cell_only_forget_path_survives():
    p = LstmParams.zeros(3, 2)
    h, c, _ = lstm_cell_forward(np.zeros(3), np.zeros(2), np.ones(2), p)
    assert np.allclose(c, 0.5)
    assert np.allclose(h, 0.5 * np.tanh(0.5))


def test_cell_matches_scalar_transcription():
    rng = np.random.default_rng(3)
    p = random_lstm(rng, 3, 2)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)
    h, c, _ = lstm_cell_forward(x, h0, c0, p)
    h_ref, c_ref = scalar_cell(x, h0, c0, p)
    assert np.allclose(h, h_ref, rtol=0, atol=1e-13)
    assert np.allclose(c, c_ref, rtol=0, atol=1e-13)


def test_cell_dimension_mismatch():
    p = LstmParams.zeros(3, 2)
    with pytest.raises(ConfigurationError):
        lstm_cell_forward(np.zeros(4), np.zeros(2), np.zeros(2), p)


def test_lstm_params_shape_check():
    with pytest.raises(ConfigurationError):
        LstmParams(np.zeros((8, 3)), np.zeros((8, 3)), np.zeros(8))


def test_encode_words_zero_params():
    out, _ = encode_words([np.ones(3)], LstmParams.zeros(3, 4))
    assert np.array_equal(out, np.zeros(8))


def test_encode_words_two_steps_is_two_cells():
    rng = np.random.default_rng(0)
    p = random_lstm(rng, 3, 2)
    xs = rng.normal(size=(2, 3))
    h, c, _ = lstm_cell_forward(xs[0], np.zeros(2), np.zeros(2), p)
    h, c, _ = lstm_cell_forward(xs[1], h, c, p)
    out, trace = encode_words(xs, p)
    assert np.array_equal(out, np.concatenate([h, c]))
    assert len(trace) == 2


def test_encode_words_unrolled_oracle():
    rng = np.random.default_rng(11)
    p = random_lstm(rng, 5, 3)
    xs = rng.normal(size=(4, 5))
    h, c = np.zeros(3), np.zeros(3)
    for x in xs:
        h, c = scalar_cell(x, h, c, p)
    out, _ = encode_words(xs, p)
    assert np.allclose(out, np.concatenate([h, c]), rtol=0, atol=1e-12)


def test_encode_words_rejects_empty():
    with pytest.raises(ContractViolation):
        encode_words([], LstmParams.zeros(3, 2))


def test_encode_tags_empty_prefix_is_zero():
    rng = np.random.default_rng(1)
    out, trace = encode_tags([], random_lstm(rng, 4, 3))
    assert np.array_equal(out, np.zeros(6)) and len(trace) == 0


def test_encode_tags_zero_params():
    out, _ = encode_tags([2], LstmParams.zeros(4, 3))
    assert np.array_equal(out, np.zeros(6))


def test_encode_tags_unrolled_oracle():
    rng = np.random.default_rng(5)
    p = random_lstm(rng, 4, 3)
    tags = [int(t) for t in rng.integers(0, 4, size=3)]
    h, c = np.zeros(3), np.zeros(3)
    for t in tags:
        h, c = scalar_cell(one_hot(t, 4), h, c, p)
    by_index, _ = encode_tags(tags, p)
    by_vector, _ = encode_tags([one_hot(t, 4) for t in tags], p)
    assert np.allclose(by_index, np.concatenate([h, c]), rtol=0, atol=1e-12)
    assert np.array_equal(by_index, by_vector)


def test_encode_tags_wrong_arity():
    with pytest.raises(ConfigurationError):
        encode_tags([np.ones(5)], LstmParams.zeros(4, 3))
    with pytest.raises(ConfigurationError):
        encode_tags([7], LstmParams.zeros(4, 3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_unrolling_equivalence(length, seed):
    rng = np.random.default_rng(seed)
    p = random_lstm(rng, 3, 2)
    xs = rng.normal(size=(length, 3))
    h, c = np.zeros(2), np.zeros(2)
    for x in xs:
        h, c, _ = lstm_cell_forward(x, h, c, p)
    out, _ = encode_words(xs, p)
    assert np.array_equal(out, np.concatenate([h, c]))


# -- heads -------------------------------------------------------------------

def make_state(rng, length=4, dim=5, num_tags=3, t=3):
    sent = random_sentence(rng, length, dim)
    s = initial_state(sent)
    for _ in range(t - 1):
        s = transition(s, int(rng.integers(num_tags)))
    return s


def test_state_repr_zero_params():
    rng = np.random.default_rng(0)
    s = make_state(rng)
    assert np.array_equal(state_repr(s, ModelParams.zeros(5, 2, 3)), np.zeros(8))


def test_state_repr_first_position_tag_half_is_zero():
    rng = np.random.default_rng(0)
    p = init_params(0, 5, 2, 3)
    s = initial_state(random_sentence(rng, 4, 5))
    g = state_repr(s, p)
    assert np.array_equal(g[4:], np.zeros(4))
    assert np.any(g[:4] != 0)


def test_state_repr_concatenates_oracles():
    rng = np.random.default_rng(8)
    p = init_params(1, 5, 2, 3)
    s = make_state(rng, t=3)
    h, c = np.zeros(2), np.zeros(2)
    for x in s.word_prefix:
        h, c = scalar_cell(x, h, c, p.lstm_x)
    hy, cy = np.zeros(2), np.zeros(2)
    for t in s.prefix:
        hy, cy = scalar_cell(one_hot(t, 3), hy, cy, p.lstm_y)
    assert np.allclose(state_repr(s, p), np.concatenate([h, c, hy, cy]), rtol=0, atol=1e-12)


def test_value_midpoint_and_log3():
    rng = np.random.default_rng(0)
    s = make_state(rng)
    p = init_params(0, 5, 2, 3)
    p.value_w[:] = 0
    p.value_b[...] = 0
    assert value(s, p) == 0.5
    p.value_b[...] = math.log(3)
    assert value(s, p) == pytest.approx(0.75, abs=1e-15)


def test_value_matches_hand_sigmoid():
    rng = np.random.default_rng(2)
    s = make_state(rng)
    p = init_params(4, 5, 2, 3)
    g = state_repr(s, p)
    expected = 1.0 / (1.0 + math.exp(-(sum(w * x for w, x in zip(p.value_w, g)) + float(p.value_b))))
    assert value(s, p) == pytest.approx(expected, rel=1e-14)


def test_policy_uniform_when_bilinear_zero():
    rng = np.random.default_rng(0)
    s = make_state(rng)
    p = init_params(0, 5, 2, 3)
    p.policy_u[:] = 0
    assert np.allclose(policy(s, (0, 1, 2), p), 1 / 3)


def test_policy_two_logits_ln4_apart():
    p = ModelParams.zeros(1, 1, 2)
    p.policy_u[0, 0] = 0.3
    p.policy_u[1, 0] = 0.3 + math.log(4)
    probs = policy_from_repr(np.array([1.0, 0, 0, 0]), (0, 1), p)
    assert np.allclose(probs, [0.2, 0.8], rtol=0, atol=1e-15)


def test_policy_matches_bruteforce_softmax():
    rng = np.random.default_rng(6)
    s = make_state(rng)
    p = init_params(6, 5, 2, 3)
    g = state_repr(s, p)
    logits = [sum(p.policy_u[a, j] * g[j] for j in range(len(g))) for a in range(3)]
    z = sum(math.exp(v) for v in logits)
    assert np.allclose(policy(s, (0, 1, 2), p), [math.exp(v) / z for v in logits], rtol=1e-13)


def test_policy_subset_and_shift_invariance():
    rng = np.random.default_rng(7)
    s = make_state(rng)
    p = init_params(7, 5, 2, 3)
    g = state_repr(s, p)
    base = policy_from_repr(g, (0, 2), p)
    assert base.sum() == pytest.approx(1.0, abs=1e-12) and base.size == 2
    shifted = p.copy()
    # adding a fixed vector to every row shifts all logits by the same constant
    shifted.policy_u += rng.normal(size=shifted.policy_u.shape[1])
    assert np.allclose(policy_from_repr(g, (0, 2), shifted), base, rtol=0, atol=1e-12)


def test_policy_rejects_empty_actions():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractViolation):
        policy(make_state(rng), (), init_params(0, 5, 2, 3))


def test_policy_survives_huge_logits():
    rng = np.random.default_rng(0)
    s = make_state(rng)
    p = init_params(0, 5, 2, 3)
    p.policy_u *= 1e4
    probs = policy(s, (0, 1, 2), p)
    assert np.all(np.isfinite(probs)) and probs.sum() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_heads_ranges(seed, bias):
    rng = np.random.default_rng(seed)
    s = make_state(rng, length=3, t=int(rng.integers(1, 5)))
    p = init_params(seed, 5, 2, 3)
    p.value_b[...] = bias
    v = value(s, p)
    assert 0.0 < v < 1.0 or (v in (0.0, 1.0) and abs(bias) > 30)
    probs = policy(s, (0, 1, 2), p)
    assert np.all(probs > 0) and np.all(probs <= 1)
    assert abs(probs.sum() - 1.0) <= 1e-9


def test_scorer_agrees_with_direct_evaluation():
    rng = np.random.default_rng(12)
    p = init_params(3, 5, 4, 3)
    sc = Scorer(p)
    sent = random_sentence(rng, 5, 5)
    s = initial_state(sent)
    while not s.terminal:
        assert sc.value(s) == pytest.approx(value(s, p), rel=1e-13)
        assert np.allclose(sc.policy(s, (0, 1, 2)), policy(s, (0, 1, 2), p), rtol=1e-12)
        s = transition(s, int(rng.integers(3)))
    assert sc.value(s) == pytest.approx(value(s, p), rel=1e-13)


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    s = make_state(rng)
    p = init_params(0, 5, 3, 3)
    assert value(s, p) == value(s, p)
    assert np.array_equal(policy(s, (0, 1, 2), p), policy(s, (0, 1, 2), p))


# -- loss and gradients ------------------------------------------------------

def _one_step(p, s, actions, pi, r):
    return Episode([EpisodeStep(s, tuple(actions), np.asarray(pi, dtype=float))], r, [0])


def _set_value(p, s, target):
    """Pick value_b so that V(s) == target."""
    g = state_repr(s, p)
    p.value_b[...] = math.log(target / (1 - target)) - float(p.value_w @ g)


def test_loss_is_entropy_when_heads_match_targets():
    rng = np.random.default_rng(1)
    s = make_state(rng)
    p = init_params(1, 5, 2, 3)
    _set_value(p, s, 0.6)
    probs = policy(s, (0, 1, 2), p)
    v = value(s, p)
    entropy = -float(np.sum(probs * np.log(probs)))
    assert loss(_one_step(p, s, (0, 1, 2), probs, v), p) == pytest.approx(entropy, rel=1e-12)


def test_loss_ln2_for_half_probability():
    rng = np.random.default_rng(1)
    s = make_state(rng, num_tags=2)
    p = init_params(1, 5, 2, 2)
    p.policy_u[:] = 0
    _set_value(p, s, 0.3)
    ep = _one_step(p, s, (0, 1), [1.0, 0.0], value(s, p))
    assert loss(ep, p) == pytest.approx(math.log(2), rel=1e-12)


def test_loss_two_step_oracle():
    rng = np.random.default_rng(4)
    p = init_params(4, 5, 3, 3)
    ep = random_episode(rng, random_sentence(rng, 2, 5), 3)
    expected = 0.0
    for step in ep.steps:
        v = value(step.state, p)
        probs = policy(step.state, step.actions, p)
        expected += (v - ep.reward) ** 2 + sum(
            q * math.log(1 / pr) for q, pr in zip(step.pi, probs) if q > 0
        )
    assert loss(ep, p) == pytest.approx(expected, rel=1e-13)


def test_loss_rejects_bad_reward():
    rng = np.random.default_rng(0)
    ep = random_episode(rng, random_sentence(rng, 2, 5), 3, reward=1.5)
    with pytest.raises(ContractViolation):
        loss(ep, init_params(0, 5, 2, 3))


def test_loss_zero_pi_entries_contribute_nothing():
    rng = np.random.default_rng(2)
    s = make_state(rng)
    p = init_params(0, 5, 2, 3)
    g = state_repr(s, p)
    p.policy_u[2] = -1e4 * g / (g @ g)  # logit -1e4: p(2|s) underflows to zero
    ep = _one_step(p, s, (0, 1, 2), [0.5, 0.5, 0.0], 0.5)
    assert np.isfinite(loss(ep, p))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = init_params(seed, 4, 2, 3)
    ep = random_episode(rng, random_sentence(rng, int(rng.integers(1, 4)), 4), 3)
    assert loss(ep, p) >= 0


def finite_difference(ep, p, step=1e-5):
    out = {}
    for name, arr in p.named_arrays():
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx].copy()
            arr[idx] = old + step
            up = loss(ep, p)
            arr[idx] = old - step
            down = loss(ep, p)
            arr[idx] = old
            fd[idx] = (up - down) / (2 * step)
        out[name] = fd
    return out


def max_relative_error(grads, fd, floor=1e-8):
    worst = 0.0
    for name, g in grads.named_arrays():
        num = np.abs(g - fd[name])
        den = np.maximum(np.maximum(np.abs(g), np.abs(fd[name])), floor)
        rel = np.where(num <= floor, 0.0, num / den)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences_small(seed):
    rng = np.random.default_rng(seed)
    p = init_params(seed, 3, 3, 3)
    ep = random_episode(rng, random_sentence(rng, 3, 3), 3)
    assert max_relative_error(gradients(ep, p), finite_difference(ep, p)) < 1e-4


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 4))
def test_gradients_match_finite_differences_random(seed, length, hidden):
    rng = np.random.default_rng(seed)
    p = init_params(seed, 2, hidden, 3, scaled=True)
    ep = random_episode(rng, random_sentence(rng, length, 2), 3)
    assert max_relative_error(gradients(ep, p), finite_difference(ep, p)) < 1e-4


def test_unused_policy_rows_have_zero_gradient():
    rng = np.random.default_rng(3)
    p = init_params(3, 4, 3, 4)
    ep = random_episode(rng, random_sentence(rng, 3, 4), 4, actions=(0, 2))
    g = gradients(ep, p)
    assert np.array_equal(g.policy_u[1], np.zeros(12))
    assert np.array_equal(g.policy_u[3], np.zeros(12))
    assert np.any(g.policy_u[0] != 0)


def test_doubling_episode_doubles_gradient():
    rng = np.random.default_rng(9)
    p = init_params(9, 4, 3, 3)
    ep = random_episode(rng, random_sentence(rng, 3, 4), 3)
    doubled = Episode(ep.steps + ep.steps, ep.reward, ep.predicted)
    l1, g1 = loss_and_gradients(ep, p)
    l2, g2 = loss_and_gradients(doubled, p)
    assert l2 == pytest.approx(2 * l1, rel=1e-14)
    for (_, a), (_, b) in zip(g1.named_arrays(), g2.named_arrays()):
        assert np.allclose(b, 2 * a, rtol=1e-12, atol=1e-15)


def test_gradient_shapes_congruent():
    rng = np.random.default_rng(0)
    p = init_params(0, 4, 3, 3)
    g = gradients(random_episode(rng, random_sentence(rng, 2, 4), 3), p)
    for (n1, a), (n2, b) in zip(p.named_arrays(), g.named_arrays()):
        assert n1 == n2 and a.shape == b.shape and np.all(np.isfinite(b))


# -- optimizer and init ------------------------------------------------------

def _params_with(value):
    p = ModelParams.zeros(2, 1, 2)
    for _, arr in p.named_arrays():
        arr[...] = value
    return p


def test_adagrad_first_step_is_signed_eta():
    p = _params_with(0.0)
    g = _params_with(0.0)
    g.value_w[:] = [3.0, -0.5, 1e-3, 2.0]
    opt = AdaGradState.fresh(p)
    adagrad_step(p, g, opt, 0.01)
    expected = -0.01 * np.sign(g.value_w) * np.abs(g.value_w) / (np.abs(g.value_w) + 1e-8)
    assert np.allclose(p.value_w, expected, rtol=1e-12)
    assert np.array_equal(opt.accum.value_w, g.value_w**2)


def test_adagrad_zero_gradient_is_noop():
    p = init_params(0, 2, 1, 2)
    before = p.copy()
    opt = AdaGradState.fresh(p)
    adagrad_step(p, ModelParams.zeros(*p.dims), opt, 0.1)
    assert params_equal(p, before)
    assert all(np.all(a == 0) for _, a in opt.accum.named_arrays())


def test_adagrad_second_step_shrinks_by_root_two():
    p = _params_with(0.0)
    g = _params_with(0.7)
    opt = AdaGradState.fresh(p)
    adagrad_step(p, g, opt, 0.05)
    first = p.copy()
    adagrad_step(p, g, opt, 0.05)
    delta = first.value_w - p.value_w
    assert np.allclose(delta, 0.05 / math.sqrt(2), rtol=1e-7)


def test_adagrad_accumulator_monotone():
    rng = np.random.default_rng(0)
    p = init_params(0, 2, 1, 2)
    opt = AdaGradState.fresh(p)
    prev = opt.accum.copy()
    for _ in range(5):
        g = ModelParams.from_named({k: rng.normal(size=a.shape) for k, a in p.named_arrays()})
        adagrad_step(p, g, opt, 0.01)
        for (_, a), (_, b) in zip(prev.named_arrays(), opt.accum.named_arrays()):
            assert np.all(b >= a) and np.all(b >= 0)
        prev = opt.accum.copy()


def test_adagrad_rejects_nonpositive_eta():
    p = init_params(0, 2, 1, 2)
    with pytest.raises(ConfigurationError):
        adagrad_step(p, ModelParams.zeros(*p.dims), AdaGradState.fresh(p), 0.0)


def test_clip_gradients_caps_global_norm():
    g = _params_with(10.0)
    clipped = clip_gradients(g, 5.0)
    norm = math.sqrt(sum(float(np.sum(a * a)) for _, a in clipped.named_arrays()))
    assert norm == pytest.approx(5.0)
    assert clip_gradients(_params_with(1e-3), 5.0).value_w[0] == 1e-3


def test_init_deterministic_and_bounded():
    a = init_params(42, 5, 4, 3)
    b = init_params(42, 5, 4, 3)
    assert params_equal(a, b)
    assert not params_equal(a, init_params(43, 5, 4, 3))
    for _, arr in a.named_arrays():
        assert np.all(arr >= -1) and np.all(arr <= 1)
    scaled = init_params(42, 5, 4, 3, scaled=True)
    for _, arr in scaled.named_arrays():
        assert np.all(np.abs(arr) <= 0.5)


def test_init_sampler_mean_near_zero():
    p = init_params(0, 100, 100, 23)
    values = np.concatenate([a.ravel() for _, a in p.named_arrays()])
    assert values.size >= 10**5
    assert abs(values[: 10**5].mean()) < 0.02


def test_model_params_shape_validation():
    p = ModelParams.zeros(3, 2, 4)
    with pytest.raises(ConfigurationError):
        ModelParams(p.lstm_x, p.lstm_y, np.zeros(5), 0.0, p.policy_u)
    with pytest.raises(ConfigurationError):
        ModelParams(p.lstm_x, p.lstm_y, p.value_w, 0.0, np.zeros((3, 8)))
