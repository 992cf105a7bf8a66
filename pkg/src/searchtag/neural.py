"""Small numpy neural toolkit: LSTM encoders, value and policy heads, loss and AdaGrad.

Everything is float64 and written out by hand so the backward passes can be
checked coordinate by coordinate against finite differences.

Gate blocks are stacked in the order forget, input, output, candidate:
``W`` is ``(4h, d)``, ``U`` is ``(4h, h)`` and ``b`` is ``(4h,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from searchtag.errors import ConfigurationError, ContractViolation, NumericError

GATES = ("f", "i", "o", "c")
ADAGRAD_EPSILON = 1e-8


def sigmoid(z):
    # split by sign so neither branch overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4, d = self.W.shape
        if h4 == 0 or h4 % 4 or d == 0:
            raise ConfigurationError(f"bad LSTM input weight shape {self.W.shape}")
        h = h4 // 4
        if self.U.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ConfigurationError(
                f"inconsistent LSTM shapes W={self.W.shape} U={self.U.shape} b={self.b.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_g, U_g, b_g)`` of one gate block."""
        k = GATES.index(name)
        h = self.hidden
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LstmParams":
        return cls(
            np.zeros((4 * hidden, input_dim)),
            np.zeros((4 * hidden, hidden)),
            np.zeros(4 * hidden),
        )


@dataclass
class ModelParams:
    """All trainable weights of the tagger."""

    lstm_x: LstmParams
    lstm_y: LstmParams
    value_w: np.ndarray
    value_b: np.ndarray  # 0-d
    policy_u: np.ndarray

    def __post_init__(self):
        h = self.lstm_x.hidden
        if self.lstm_y.hidden != h:
            raise ConfigurationError("word and tag LSTMs must share the hidden size")
        if self.value_w.shape != (4 * h,):
            raise ConfigurationError(f"value_w must have length {4 * h}")
        if self.policy_u.shape != (self.lstm_y.input_dim, 4 * h):
            raise ConfigurationError(
                f"policy_u must be ({self.lstm_y.input_dim}, {4 * h}), got {self.policy_u.shape}"
            )
        self.value_b = np.asarray(self.value_b, dtype=np.float64).reshape(())

    @property
    def hidden(self) -> int:
        return self.lstm_x.hidden

    @property
    def embedding_dim(self) -> int:
        return self.lstm_x.input_dim

    @property
    def num_tags(self) -> int:
        return self.lstm_y.input_dim

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.embedding_dim, self.hidden, self.num_tags

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every parameter tensor under a flat name, in a fixed order."""
        for prefix, lstm in (("lstm_x", self.lstm_x), ("lstm_y", self.lstm_y)):
            yield f"{prefix}.W", lstm.W
            yield f"{prefix}.U", lstm.U
            yield f"{prefix}.b", lstm.b
        yield "value_w", self.value_w
        yield "value_b", self.value_b
        yield "policy_u", self.policy_u

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(
            lstm_x=LstmParams(arrays["lstm_x.W"], arrays["lstm_x.U"], arrays["lstm_x.b"]),
            lstm_y=LstmParams(arrays["lstm_y.W"], arrays["lstm_y.U"], arrays["lstm_y.b"]),
            value_w=arrays["value_w"],
            value_b=arrays["value_b"],
            policy_u=arrays["policy_u"],
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(
            {k: np.array(v, dtype=np.float64, copy=True) for k, v in self.named_arrays()}
        )

    @classmethod
    def zeros(cls, embedding_dim: int, hidden: int, num_tags: int) -> "ModelParams":
        return cls(
            lstm_x=LstmParams.zeros(embedding_dim, hidden),
            lstm_y=LstmParams.zeros(num_tags, hidden),
            value_w=np.zeros(4 * hidden),
            value_b=np.zeros(()),
            policy_u=np.zeros((num_tags, 4 * hidden)),
        )


# A gradient set has exactly the layout of the parameters it differentiates.
GradientSet = ModelParams


@dataclass
class AdaGradState:
    accum: ModelParams
    epsilon: float = ADAGRAD_EPSILON

    @classmethod
    def fresh(cls, params: ModelParams, epsilon: float = ADAGRAD_EPSILON) -> "AdaGradState":
        return cls(ModelParams.zeros(*params.dims), epsilon)


@dataclass
class TraceStep:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray  # tanh of the candidate pre-activation
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class LstmTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def lstm_cell_forward(x, h_prev, c_prev, params: LstmParams):
    """One LSTM step.

    Returns:
        ``(h, c, step)`` where ``step`` caches the activations for backward.
    """
    x = np.asarray(x, dtype=np.float64)
    hsz = params.hidden
    if x.shape != (params.input_dim,) or np.shape(h_prev) != (hsz,) or np.shape(c_prev) != (hsz,):
        raise ConfigurationError(
            f"cell expects x:{params.input_dim} h,c:{hsz}, got "
            f"{x.shape}, {np.shape(h_prev)}, {np.shape(c_prev)}"
        )
    z = params.W @ x + params.U @ h_prev + params.b
    gates = sigmoid(z[: 3 * hsz])
    f, i, o = gates[:hsz], gates[hsz : 2 * hsz], gates[2 * hsz :]
    g = np.tanh(z[3 * hsz :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, TraceStep(x, h_prev, c_prev, f, i, o, g, c, tanh_c, h)


def _cell_step_onehot(index: int, h_prev, c_prev, params: LstmParams):
    # same arithmetic as lstm_cell_forward with x = one-hot(index); W @ x is a column pick
    hsz = params.hidden
    z = params.W[:, index] + params.U @ h_prev + params.b
    gates = sigmoid(z[: 3 * hsz])
    c = gates[:hsz] * c_prev + gates[hsz : 2 * hsz] * np.tanh(z[3 * hsz :])
    return gates[2 * hsz :] * np.tanh(c), c


def run_lstm(inputs: Sequence[np.ndarray], params: LstmParams):
    """Unroll over ``inputs`` from zero state; returns ``(h, c, trace)``."""
    h = np.zeros(params.hidden)
    c = np.zeros(params.hidden)
    trace = LstmTrace()
    for x in inputs:
        h, c, step = lstm_cell_forward(x, h, c, params)
        trace.steps.append(step)
    return h, c, trace


def encode_words(word_prefix: Sequence[np.ndarray], params: LstmParams):
    """``[h_t; c_t]`` after reading the word prefix. Returns ``(vector, trace)``."""
    if len(word_prefix) == 0:
        raise ContractViolation("word prefix is never empty")
    h, c, trace = run_lstm(word_prefix, params)
    return np.concatenate([h, c]), trace


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise ConfigurationError(f"tag index {index} outside inventory of size {size}")
    v = np.zeros(size)
    v[index] = 1.0
    return v


def encode_tags(tag_prefix: Sequence, params: LstmParams):
    """``[h; c]`` of the tag LSTM. The empty prefix encodes to zeros.

    ``tag_prefix`` may hold tag indices or one-hot vectors.
    """
    vectors = []
    for y in tag_prefix:
        if np.ndim(y) == 0:
            vectors.append(one_hot(int(y), params.input_dim))
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (params.input_dim,):
                raise ConfigurationError(
                    f"one-hot tag of arity {y.shape} for inventory of {params.input_dim}"
                )
            vectors.append(y)
    h, c, trace = run_lstm(vectors, params)
    return np.concatenate([h, c]), trace


def state_repr(state, params: ModelParams) -> np.ndarray:
    """g(s): word encoding followed by tag encoding, length 4h."""
    gx, _ = encode_words(state.word_prefix, params.lstm_x)
    gy, _ = encode_tags(state.prefix, params.lstm_y)
    return np.concatenate([gx, gy])


def value_from_repr(g: np.ndarray, params: ModelParams) -> float:
    return float(_sigmoid_scalar(float(params.value_w @ g + params.value_b)))


def policy_from_repr(g: np.ndarray, actions: Sequence[int], params: ModelParams) -> np.ndarray:
    if len(actions) == 0:
        raise ContractViolation("policy needs at least one action")
    logits = params.policy_u[np.asarray(actions, dtype=np.intp)] @ g
    return softmax(logits)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def value(state, params: ModelParams) -> float:
    return value_from_repr(state_repr(state, params), params)


def policy(state, actions: Sequence[int], params: ModelParams) -> np.ndarray:
    return policy_from_repr(state_repr(state, params), actions, params)


class Scorer:
    """Memoizing evaluator of V and p for one sentence under frozen params.

    Word encodings are cached per position and tag-LSTM states per tag
    prefix, so scoring a child state costs a single tag-LSTM step. Values
    agree with :func:`value` and :func:`policy`.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self._words: dict[tuple[int, int], np.ndarray] = {}
        self._tags: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
        self._repr: dict[tuple, np.ndarray] = {}

    def _word_code(self, sentence, t: int) -> np.ndarray:
        key = (id(sentence), t)
        code = self._words.get(key)
        if code is None:
            lstm = self.params.lstm_x
            if t == 1:
                h = c = np.zeros(lstm.hidden)
            else:
                prev = self._word_code(sentence, t - 1)
                h, c = prev[: lstm.hidden], prev[lstm.hidden :]
            h, c, _ = lstm_cell_forward(sentence.embeddings[t - 1], h, c, lstm)
            code = self._words[key] = np.concatenate([h, c])
        return code

    def _tag_code(self, prefix: tuple[int, ...]):
        hit = self._tags.get(prefix)
        if hit is not None:
            return hit
        lstm = self.params.lstm_y
        if not prefix:
            hit = (np.zeros(lstm.hidden), np.zeros(lstm.hidden))
        else:
            h, c = self._tag_code(prefix[:-1])
            if not 0 <= prefix[-1] < lstm.input_dim:
                raise ConfigurationError(f"tag index {prefix[-1]} outside inventory")
            hit = _cell_step_onehot(prefix[-1], h, c, lstm)
        self._tags[prefix] = hit
        return hit

    def repr(self, state) -> np.ndarray:
        key = (id(state.sentence), state.word_count, state.prefix)
        g = self._repr.get(key)
        if g is None:
            h, c = self._tag_code(state.prefix)
            g = np.concatenate([self._word_code(state.sentence, state.word_count), h, c])
            self._repr[key] = g
        return g

    def value(self, state) -> float:
        return value_from_repr(self.repr(state), self.params)

    def policy(self, state, actions: Sequence[int]) -> np.ndarray:
        return policy_from_repr(self.repr(state), actions, self.params)


def _step_terms(step, params: ModelParams):
    state, actions, pi = step.state, step.actions, np.asarray(step.pi, dtype=np.float64)
    gx, trace_x = encode_words(state.word_prefix, params.lstm_x)
    gy, trace_y = encode_tags(state.prefix, params.lstm_y)
    g = np.concatenate([gx, gy])
    v = value_from_repr(g, params)
    if len(actions) == 0:
        raise ContractViolation("policy needs at least one action")
    logits = params.policy_u[np.asarray(actions, dtype=np.intp)] @ g
    shifted = logits - logits.max()
    log_p = shifted - np.log(np.exp(shifted).sum())
    p = np.exp(log_p)
    if pi.shape != p.shape:
        raise ContractViolation(f"search policy has {pi.size} entries for {p.size} actions")
    mask = pi > 0
    xent = float(-(pi[mask] * log_p[mask]).sum())
    return g, v, p, pi, xent, trace_x, trace_y


def _check_episode(episode):
    if not episode.steps:
        raise ContractViolation("episode has no steps")
    if not 0.0 <= episode.reward <= 1.0:
        raise ContractViolation(f"reward {episode.reward} outside [0, 1]")


def loss(episode, params: ModelParams) -> float:
    """Squared value error plus policy cross-entropy, summed over the steps."""
    _check_episode(episode)
    total = 0.0
    for step in episode.steps:
        _, v, _, _, xent, _, _ = _step_terms(step, params)
        total += (v - episode.reward) ** 2 + xent
    return total


def lstm_backward(trace: LstmTrace, dh_last, dc_last, params: LstmParams, grads: LstmParams):
    """Backpropagate through time, accumulating into ``grads`` in place."""
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.array(dc_last, dtype=np.float64)
    for st in reversed(trace.steps):
        do = dh * st.tanh_c
        dc = dc + dh * st.o * (1.0 - st.tanh_c**2)
        df = dc * st.c_prev
        di = dc * st.g
        dg = dc * st.i
        dz = np.concatenate(
            [
                df * st.f * (1.0 - st.f),
                di * st.i * (1.0 - st.i),
                do * st.o * (1.0 - st.o),
                dg * (1.0 - st.g**2),
            ]
        )
        grads.W += np.outer(dz, st.x)
        grads.U += np.outer(dz, st.h_prev)
        grads.b += dz
        dh = params.U.T @ dz
        dc = dc * st.f


def loss_and_gradients(episode, params: ModelParams) -> tuple[float, GradientSet]:
    """:func:`loss` and its exact gradient from one forward pass.

    The search policy and the reward are constants.
    """
    _check_episode(episode)
    grads = ModelParams.zeros(*params.dims)
    h = params.hidden
    r = episode.reward
    total = 0.0
    for step in episode.steps:
        g, v, p, pi, xent, trace_x, trace_y = _step_terms(step, params)
        total += (v - r) ** 2 + xent
        # d/dz of (sigmoid(z) - r)^2
        dz_v = 2.0 * (v - r) * v * (1.0 - v)
        grads.value_w += dz_v * g
        grads.value_b += dz_v
        dg = dz_v * params.value_w
        # cross-entropy against a constant target: d/dlogits = p * sum(pi) - pi
        dlogits = p * pi.sum() - pi
        rows = np.asarray(step.actions, dtype=np.intp)
        np.add.at(grads.policy_u, rows, np.outer(dlogits, g))
        dg = dg + params.policy_u[rows].T @ dlogits
        lstm_backward(trace_x, dg[:h], dg[h : 2 * h], params.lstm_x, grads.lstm_x)
        if len(trace_y):
            lstm_backward(trace_y, dg[2 * h : 3 * h], dg[3 * h :], params.lstm_y, grads.lstm_y)
    for name, arr in grads.named_arrays():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}")
    return total, grads


def gradients(episode, params: ModelParams) -> GradientSet:
    return loss_and_gradients(episode, params)[1]


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    """Scale the whole gradient set down to global L2 norm ``max_norm``."""
    total = np.sqrt(sum(float(np.sum(a * a)) for _, a in grads.named_arrays()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    named = {k: a * scale for k, a in grads.named_arrays()}
    return ModelParams.from_named(named)


def adagrad_step(params: ModelParams, grads: GradientSet, opt: AdaGradState, eta: float):
    """In-place AdaGrad update of ``params`` and ``opt``; returns both."""
    if eta <= 0:
        raise ConfigurationError("learning rate must be positive")
    for (_, p), (_, g), (_, a) in zip(
        params.named_arrays(), grads.named_arrays(), opt.accum.named_arrays()
    ):
        a += g * g
        p -= eta * g / (np.sqrt(a) + opt.epsilon)
    return params, opt


def init_params(seed: int, embedding_dim: int, hidden: int, num_tags: int, scaled: bool = False):
    """Uniform random parameters in ``[-1, 1]`` (or ``±1/sqrt(h)`` when ``scaled``)."""
    if min(embedding_dim, hidden, num_tags) <= 0:
        raise ConfigurationError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden) if scaled else 1.0
    template = ModelParams.zeros(embedding_dim, hidden, num_tags)
    named = {
        k: rng.uniform(-bound, bound, size=a.shape) for k, a in template.named_arrays()
    }
    return ModelParams.from_named(named)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return all(
        np.array_equal(x, y) for (_, x), (_, y) in zip(a.named_arrays(), b.named_arrays())
    )


__all__ = [
    "AdaGradState",
    "GradientSet",
    "LstmParams",
    "LstmTrace",
    "ModelParams",
    "Scorer",
    "adagrad_step",
    "clip_gradients",
    "encode_tags",
    "encode_words",
    "gradients",
    "init_params",
    "loss",
    "loss_and_gradients",
    "lstm_cell_forward",
    "one_hot",
    "params_equal",
    "policy",
    "run_lstm",
    "sigmoid",
    "softmax",
    "state_repr",
    "value",
]
