import numpy as np
import pytest

from spritemotion import diffusion
from spritemotion.core import ShapeError, grad_check, high_precision
from spritemotion.core import tensor as T
from spritemotion.core.random import RandomSource
from spritemotion.core.tensor import Tensor
from spritemotion.generator import Block, GeneratorConfig, GeneratorTrainer, MotionGenerator, timestep_embedding
from spritemotion.motion import ConditionSet

TOY = GeneratorConfig(depth=2, width=16, heads=2, n_frames=6, time_dim=8, speech_dim=8)


def _conditions(rng, b=2, n=6, present=None):
    return ConditionSet(rng.normal((b, n, 8)), rng.normal((b, 20)) * 0.3, rng.uniform(b), present)


def _randomize(model, rng, names=("output", "concat_proj", "modulation")):
    for name, p in model.parameters().items():
        if any(k in name for k in names):
            p.data[...] = rng.normal(p.shape) * 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(width=30, heads=4)


def test_timestep_embedding_layout():
    e = timestep_embedding([0, 5], 8)
    assert e.shape == (2, 8)
    np.testing.assert_array_equal(e[0], [1, 1, 1, 1, 0, 0, 0, 0])
    assert abs(e[1, 0] - np.cos(5.0)) < 1e-15 and abs(e[1, 4] - np.sin(5.0)) < 1e-15


def test_all_dropped_global_embedding_is_time_plus_nulls():
    with high_precision():
        model = MotionGenerator(TOY, RandomSource(0))
        cond = _conditions(RandomSource(1)).null()
        g, frames = model.embed_conditions(cond, np.array([3, 3]))
        expected = model.time_embedding(np.array([3, 3])).data + (
            model.null_mean.data + model.null_std.data + model.null_speech.data)
        np.testing.assert_allclose(g.data, expected, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(frames.data, np.broadcast_to(model.null_speech_frame.data, frames.shape))


def test_embedding_sensitivity_to_sigma_and_time():
    model = MotionGenerator(TOY, RandomSource(0))
    rng = RandomSource(2)
    cond = _conditions(rng)
    other = ConditionSet(cond.speech, cond.mean, 1.0 - cond.std)
    g1, _ = model.embed_conditions(cond, np.array([0, 0]))
    g2, _ = model.embed_conditions(other, np.array([0, 0]))
    assert np.any(g1.data != g2.data)
    with high_precision():
        model = MotionGenerator(TOY, RandomSource(0))
        ga, fa = model.embed_conditions(cond, np.array([0, 0]))
        gb, fb = model.embed_conditions(cond, np.array([999, 999]))
        dt = model.time_embedding(np.array([0, 0])).data - model.time_embedding(np.array([999, 999])).data
        np.testing.assert_allclose(ga.data - gb.data, dt, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(fa.data, fb.data)


def _block_inputs(rng, b=2, n=6, w=16):
    return (Tensor(rng.normal((b, n, w))), Tensor(rng.normal((b, w))), Tensor(rng.normal((b, n, w))),
            Tensor(rng.normal((b, n, 20))))


def test_block_identity_at_zero_init():
    block = Block(TOY, RandomSource(0))
    block.attn.proj.weight.data[...] = 0
    block.attn.proj.bias.data[...] = 0
    block.mlp.fc2.weight.data[...] = 0
    block.mlp.fc2.bias.data[...] = 0
    h, g, s, x = _block_inputs(RandomSource(1))
    np.testing.assert_array_equal(block(h, g, s, x).data, h.data)


def test_block_modulation_shift_of_one():
    block = Block(TOY, RandomSource(0))
    for p in (block.attn.proj, block.mlp.fc2):
        p.weight.data[...] = 0
        p.bias.data[...] = 0
    block.modulation.bias.data[16:] = 1.0  # gamma = 0, delta = 1
    h, g, s, x = _block_inputs(RandomSource(1))
    np.testing.assert_allclose(block(h, g, s, x).data, h.data + 1.0, rtol=0, atol=1e-6)


def test_block_shape_errors():
    block = Block(TOY, RandomSource(0))
    h, g, s, x = _block_inputs(RandomSource(1))
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((2, 6, 8))), g, s, x)
    with pytest.raises(ShapeError):
        block(h, g, Tensor(np.zeros((2, 5, 16))), x)


def test_block_gradients_match_finite_differences():
    with high_precision():
        rng = RandomSource(3)
        block = Block(GeneratorConfig(depth=1, width=8, heads=2, n_frames=4, time_dim=8), rng)
        _randomize(block, rng, ("modulation", "concat_proj"))
        h, g, s, x = _block_inputs(RandomSource(4), b=2, n=4, w=8)
        target = RandomSource(5).normal((2, 4, 8))
        report = grad_check(lambda: T.mse(block(h, g, s, x), target), block.parameters(), tolerance=1e-5)
    assert report.passed, str(report)


def test_full_model_gradients_match_finite_differences():
    with high_precision():
        cfg = GeneratorConfig(depth=1, width=8, heads=2, n_frames=4, time_dim=8)
        rng = RandomSource(6)
        model = MotionGenerator(cfg, rng)
        _randomize(model, rng)
        cond = _conditions(RandomSource(7), n=4, present={"mean": np.array([True, False])})
        x = RandomSource(8).normal((2, 4, 20))
        eps = RandomSource(9).normal((2, 4, 20))
        report = grad_check(lambda: T.mse(model.forward(x, np.array([10, 700]), cond), eps),
                            model.parameters(), tolerance=1e-5)
    assert report.passed, str(report)


def test_fresh_model_predicts_zero_and_depth_agrees():
    cond = _conditions(RandomSource(1))
    x = RandomSource(2).normal((2, 6, 20))
    shallow = MotionGenerator(TOY, RandomSource(0))
    deep = MotionGenerator(GeneratorConfig(depth=5, width=16, heads=2, n_frames=6, time_dim=8), RandomSource(0))
    a = shallow(x, np.array([5, 5]), cond)
    b = deep(x, np.array([5, 5]), cond)
    assert a.shape == (2, 6, 20)
    np.testing.assert_array_equal(a, 0.0)
    np.testing.assert_array_equal(a, b)


def test_speech_order_matters_and_determinism():
    model = MotionGenerator(TOY, RandomSource(0))
    _randomize(model, RandomSource(3))
    cond = _conditions(RandomSource(1))
    x = RandomSource(2).normal((2, 6, 20))
    t = np.array([100, 100])
    out = model(x, t, cond)
    np.testing.assert_array_equal(out, model(x, t, cond))
    flipped = ConditionSet(cond.speech[:, ::-1], cond.mean, cond.std)
    assert np.any(model(x, t, flipped) != out)


def test_dropped_slots_ignore_their_content():
    model = MotionGenerator(TOY, RandomSource(0))
    _randomize(model, RandomSource(3))
    x = RandomSource(2).normal((2, 6, 20))
    t = np.array([40, 900])
    a = _conditions(RandomSource(10)).null()
    b = _conditions(RandomSource(11)).null()
    np.testing.assert_array_equal(model(x, t, a), model(x, t, b))


def test_forward_shape_errors():
    model = MotionGenerator(TOY, RandomSource(0))
    cond = _conditions(RandomSource(1))
    with pytest.raises(ShapeError):
        model(np.zeros((2, 5, 20)), np.array([1, 1]), cond)
    with pytest.raises(ShapeError):
        model(np.zeros((2, 6, 20)), np.array([1, 1]), ConditionSet(np.zeros((2, 6, 7)), cond.mean, cond.std))
    with pytest.raises(ShapeError):
        model(np.zeros((2, 6, 20)), np.array([1, 1]), ConditionSet(cond.speech, np.zeros((2, 19)), cond.std))


def _motion_batch(seed, b=32, n=6):
    rng = RandomSource(seed)
    return np.tanh(np.cumsum(rng.normal((b, n, 20)) * 0.3, axis=1)), rng.normal((b, n, 8))


def test_initial_loss_is_one():
    model = MotionGenerator(TOY, RandomSource(0))
    tr = GeneratorTrainer(model, diffusion.linear_beta_schedule())
    motion, speech = _motion_batch(1, b=128)
    loss = tr.train_step(motion, speech, RandomSource(2))
    assert abs(loss - 1.0) <= 0.05


def test_training_replay_deterministic():
    def run():
        model = MotionGenerator(TOY, RandomSource(0))
        tr = GeneratorTrainer(model, diffusion.linear_beta_schedule())
        rng = RandomSource(5)
        return [tr.train_step(*_motion_batch(i, b=8), rng) for i in range(10)]

    assert run() == run()


def test_train_step_rejects_empty_batch():
    tr = GeneratorTrainer(MotionGenerator(TOY, RandomSource(0)), diffusion.linear_beta_schedule())
    with pytest.raises(ValueError):
        tr.train_step(np.zeros((0, 6, 20)), np.zeros((0, 6, 8)), RandomSource(0))


def test_condition_set_validation_and_masks():
    rng = RandomSource(0)
    with pytest.raises(ValueError):
        ConditionSet(rng.normal((1, 4, 8)), np.zeros((1, 20)), [1.5])
    cond = _conditions(rng)
    masked = cond.masked({"speech"})
    assert masked.present["speech"].all() and not masked.present["mean"].any()
    dropped = cond.with_dropout({"speech": [True, False], "mean": [False, False], "std": [False, True]})
    assert list(dropped.present["speech"]) == [False, True]
    assert list(dropped.present["std"]) == [True, False]
