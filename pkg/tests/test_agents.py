import numpy as np
import pytest

from emcomm import diffcore as dc
from emcomm.agents import Agent, ArchitectureConfig, EncodedSource, attend, attention_weights
from emcomm.diffcore import Value
from emcomm.errors import ConfigError, DimensionError


def config(kind="biased", vin=6, vout=5, width=8, max_len=3, eos=None):
    return ArchitectureConfig(kind, vin, vout, max_len, hidden_size=width, embedding_size=width, eos=eos)


def zero_agent(cfg):
    agent = Agent(cfg, seed=0)
    for v in agent.params.values():
        v.data[...] = 0.0
    return agent


def source_from(contextual, semantic):
    ctx = [Value(np.atleast_2d(c)) for c in contextual]
    sem = [Value(np.atleast_2d(s)) for s in semantic]
    return EncodedSource(ctx, sem, np.ones((1, len(ctx)), dtype=bool), ctx[-1])


# ------------------------------------------------------------------ encode


@pytest.mark.parametrize("kind", ["baseline", "biased"])
def test_encode_shapes(kind):
    src = Agent(config(kind), seed=1).encode([[1, 2]])
    assert len(src.contextual) == 2 and src.contextual[0].shape == (1, 8)
    if kind == "biased":
        assert len(src.semantic) == 2 and src.semantic[1].shape == (1, 8)
    else:
        assert src.semantic is None


def test_encoder_is_order_sensitive():
    agent = Agent(config(), seed=2)
    a = agent.encode([[1, 4]]).contextual
    b = agent.encode([[4, 1]]).contextual
    assert not np.allclose(a[-1].data, b[-1].data)


def test_encode_is_deterministic():
    agent = Agent(config(), seed=3)
    a, b = agent.encode([[3, 0, 5]]), agent.encode([[3, 0, 5]])
    for x, y in zip(a.contextual + a.semantic, b.contextual + b.semantic):
        assert x.data.tobytes() == y.data.tobytes()


def test_encode_rejects_unknown_symbols():
    with pytest.raises(IndexError):
        Agent(config(vin=4), seed=0).encode([[4]])


def test_masked_positions_carry_state():
    agent = Agent(config(), seed=4)
    padded = agent.encode([[1, 2, 0]], mask=np.array([[True, True, False]]))
    plain = agent.encode([[1, 2]])
    np.testing.assert_array_equal(padded.final.data, plain.final.data)


def test_biased_sizes_must_match():
    with pytest.raises(ConfigError):
        ArchitectureConfig("biased", 4, 4, 2, hidden_size=8, embedding_size=6)


# ------------------------------------------------------------------ attend


def test_attend_single_position_returns_its_semantic_embedding():
    sem = np.array([0.3, -1.2, 2.0])
    out = attend(Value([[1.0, 2.0]]), source_from([[0.5, -0.5]], [sem]))
    np.testing.assert_array_equal(out.data[0], sem)


def test_attend_equal_scores_average():
    sems = [np.array([1.0, 0.0]), np.array([0.0, 3.0]), np.array([2.0, 3.0])]
    out = attend(Value([[0.0, 0.0]]), source_from([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], sems))
    np.testing.assert_allclose(out.data[0], np.mean(sems, axis=0), atol=1e-15)


def test_attention_weights_sum_to_one():
    agent = Agent(config(), seed=5)
    src = agent.encode([[1, 2, 3], [4, 4, 0]])
    w = attention_weights(Value(np.random.default_rng(0).normal(size=(2, 8))), src)
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


def test_attention_ignores_masked_positions():
    agent = Agent(config(), seed=6)
    src = agent.encode([[1, 2, 3]], mask=np.array([[True, True, False]]))
    w = attention_weights(Value(np.ones((1, 8))), src)
    assert w.data[0, 2] == 0.0


def test_attend_width_mismatch():
    with pytest.raises(DimensionError):
        attend(Value([[1.0, 2.0, 3.0]]), source_from([[0.5, -0.5]], [[1.0, 1.0]]))


def test_attention_output_in_convex_hull():
    rng = np.random.default_rng(7)
    for seed in range(20):
        agent = Agent(config(), seed=seed)
        src = agent.encode(rng.integers(0, 6, size=(4, 3)))
        out = attend(Value(rng.normal(size=(4, 8)) * 3), src).data
        sem = np.stack([s.data for s in src.semantic])  # (T, B, H)
        assert np.all(out >= sem.min(axis=0) - 1e-12) and np.all(out <= sem.max(axis=0) + 1e-12)


# ----------------------------------------------------------------- decoding


def test_zero_weights_greedy_repeats_lowest_symbol():
    agent = zero_agent(config(vout=6, max_len=3, eos=5))
    msgs = agent.greedy_messages(agent.encode([[1, 2]]))
    assert msgs[0].symbols == (0, 0, 0) and not msgs[0].eos_terminated


def test_greedy_is_repeatable():
    agent = Agent(config(eos=4), seed=8)
    src = agent.encode([[1, 2], [3, 5]])
    assert agent.greedy_messages(src) == agent.greedy_messages(src)


def test_greedy_stops_at_eos():
    agent = zero_agent(config(vout=6, max_len=3, eos=5))
    agent.params["out.b"].data[0, 5] = 10.0
    agent.params["out.b"].data[0, 2] = 5.0
    msg = agent.greedy_messages(agent.encode([[1]]))[0]
    # EOS is banned at the first step only
    assert msg.symbols == (2,) and msg.eos_terminated


def saturated_agent(symbol):
    agent = zero_agent(config(vout=6, max_len=3, eos=5))
    agent.params["out.b"].data[0, symbol] = 1e3
    return agent


def test_saturated_sampling_equals_greedy():
    agent = saturated_agent(3)
    src = agent.encode([[1, 2], [0, 0]])
    sample = agent.decode_sample(src, np.random.default_rng(0))
    np.testing.assert_array_equal(sample.symbols, agent.decode_greedy(src)[0])


def test_sample_log_probs_nonpositive():
    agent = Agent(config(eos=4), seed=9)
    sample = agent.decode_sample(agent.encode([[1, 2]] * 16), np.random.default_rng(1))
    assert all(np.all(lp.data <= 0) for lp in sample.log_probs)
    assert all(np.all(h.data >= 0) for h in sample.entropies)


def test_sample_frequencies_match_softmax():
    logits = np.array([0.5, -1.0, 2.0, 0.0, 1.0])
    agent = zero_agent(config(vout=5, max_len=1))
    agent.params["out.b"].data[0] = logits
    n = 100_000
    sample = agent.decode_sample(agent.encode(np.ones((n, 1), dtype=int)), np.random.default_rng(2))
    freq = np.bincount(sample.symbols[:, 0], minlength=5) / n
    p = np.exp(logits) / np.exp(logits).sum()
    assert np.max(np.abs(freq - p)) < 0.01


def test_sample_is_seeded():
    agent = Agent(config(eos=4), seed=10)
    src = agent.encode([[1, 2]] * 8)
    a = agent.decode_sample(src, np.random.default_rng(3)).symbols
    b = agent.decode_sample(src, np.random.default_rng(3)).symbols
    np.testing.assert_array_equal(a, b)


def test_sample_live_mask_ends_at_eos():
    agent = zero_agent(config(vout=6, max_len=3, eos=5))
    agent.params["out.b"].data[0, 5] = 1e3
    agent.params["out.b"].data[0, 1] = 999.0
    sample = agent.decode_sample(agent.encode([[1]]), np.random.default_rng(0))
    assert sample.lengths[0] == 1 and sample.eos_terminated[0]
    assert sample.live.tolist() == [[True, True]]
    assert sample.messages()[0].symbols == (1,)


# ------------------------------------------------------------ contracts


@pytest.mark.parametrize("kind", ["baseline", "biased"])
def test_sender_and_receiver_shape_contract(kind):
    n_val, c_voc, c_len = 7, 5, 3
    sender = Agent(ArchitectureConfig(kind, n_val, c_voc + 1, c_len, 8, 8, eos=c_voc), seed=11)
    receiver = Agent(ArchitectureConfig(kind, c_voc + 1, n_val, 2, 8, 8), seed=12)
    x = np.array([[a, b] for a in range(n_val) for b in range(n_val)])
    for msg in sender.greedy_messages(sender.encode(x)):
        assert 1 <= len(msg) <= c_len and all(0 <= s < c_voc for s in msg.symbols)
    src = receiver.encode(np.array([[0, 1, 2]]))
    state = receiver.initial_state(src)
    prev = np.array([receiver.config.sos])
    for t in range(2):
        logits, state = receiver.decode_step(prev, state, src, step=t)
        assert logits.shape == (1, n_val)
        prev = np.argmax(logits.data, axis=1)


def test_decode_step_rejects_bad_previous_symbol():
    agent = Agent(config(vout=5), seed=0)
    src = agent.encode([[1]])
    with pytest.raises(IndexError):
        agent.decode_step([7], agent.initial_state(src), src)


@pytest.mark.parametrize("kind", ["baseline", "biased"])
def test_end_to_end_gradient(kind):
    agent = Agent(config(kind, vin=5, vout=4, width=8, max_len=2), seed=13)
    x = np.array([[1, 3, 2], [4, 0, 0]])
    mask = np.array([[True, True, True], [True, True, False]])
    targets = np.array([[2, 1], [0, 3]])

    def loss():
        return dc.sum(agent.teacher_forced_loss(agent.encode(x, mask), targets))

    assert dc.grad_check(loss, agent.params) < 1e-4
