import numpy as np
import pytest

from spritemotion import diffusion, synth
from spritemotion.core.random import RandomSource
from spritemotion.evaluation import matched_requests
from spritemotion.generator import GeneratorConfig, MotionGenerator
from spritemotion.motion import MotionSequence, compute_motion_stats
from spritemotion.pipeline import (
    AUTO_SIGMA,
    GenerationRequest,
    MeanMode,
    MotionNormalizer,
    TalkingHeadPipeline,
    resolve_mean_mode,
)
from spritemotion.stage1 import Disentangler, Stage1Config
from spritemotion.training import encode_clips

NF = 8


@pytest.fixture(scope="module")
def pipe():
    stage1 = Disentangler(Stage1Config(hidden=(32, 16, 8), motion_hidden=(16,), latent_dim=8), RandomSource(0))
    gen = MotionGenerator(GeneratorConfig(depth=1, width=16, heads=2, n_frames=NF, time_dim=8), RandomSource(1))
    rng = RandomSource(2)
    for name, p in gen.parameters().items():
        if "output" in name or "modulation" in name or "concat_proj" in name:
            p.data[...] = rng.normal(p.shape) * 0.1
    norm = MotionNormalizer(np.full(20, 0.1), np.full(20, 0.5))
    return TalkingHeadPipeline(stage1, gen, norm, diffusion.linear_beta_schedule(100, 1e-3, 0.2))


@pytest.fixture(scope="module")
def identity_image():
    return synth.render_sprite_frame(synth.SpriteIdentity.from_seed(3), (0.0, 0.0, 0.0), 0.0)


def _request(image, L, seed=0, **kw):
    speech = synth.synth_speech_track(RandomSource(seed + 100), max(L, 1)).features[:L]
    kw.setdefault("steps", 10)
    return GenerationRequest(image, speech, seed=seed, **kw)


def test_motion_stats_examples():
    c = RandomSource(0).normal(20)
    mu, sigma = compute_motion_stats(np.tile(c, (5, 1)))
    np.testing.assert_array_equal(mu, c)
    assert sigma == 0.0
    alt = np.zeros((6, 20))
    alt[:, 3] = [0.5, -0.5] * 3
    _, sigma = compute_motion_stats(alt)
    assert abs(sigma - 0.5 / np.sqrt(20)) < 1e-15
    assert compute_motion_stats(np.ones((1, 20)))[1] == 0.0
    with pytest.raises(ValueError):
        compute_motion_stats(np.zeros((0, 20)))
    assert compute_motion_stats(np.tile([[-5.0] * 20, [5.0] * 20], (2, 1)))[1] == 1.0


def test_resolve_mean_mode_examples():
    hint = np.zeros(20)
    prev = np.zeros(20)
    prev[0] = 0.4
    np.testing.assert_array_equal(resolve_mean_mode(MeanMode.interpolate(0.0), hint, prev), hint)
    np.testing.assert_array_equal(resolve_mean_mode(MeanMode.interpolate(1.0), hint, prev), prev)
    mid = resolve_mean_mode(MeanMode.interpolate(0.5), hint, prev)
    assert mid[0] == 0.2 and np.all(mid[1:] == 0)
    np.testing.assert_array_equal(resolve_mean_mode(MeanMode.last_frame(), hint, None), hint)
    np.testing.assert_array_equal(resolve_mean_mode(MeanMode.hint(), hint, prev), hint)
    with pytest.raises(ValueError):
        resolve_mean_mode(MeanMode.hint(), None, prev)


def test_mean_mode_parsing():
    assert MeanMode.parse("hint") == MeanMode.hint()
    assert MeanMode.parse("last") == MeanMode.last_frame()
    assert MeanMode.parse("interp:0.25") == MeanMode.interpolate(0.25)
    for bad in ("interp:1.5", "interp:x", "mean", "interp:-0.1"):
        with pytest.raises(ValueError):
            MeanMode.parse(bad)


def test_request_validation(identity_image):
    speech = np.zeros((4, 8))
    with pytest.raises(ValueError):
        GenerationRequest(identity_image, speech, sigma_target=1.5)
    with pytest.raises(ValueError):
        GenerationRequest(identity_image, speech, guidance_scale=-1.0)
    with pytest.raises(ValueError):
        GenerationRequest(identity_image, np.zeros(4))
    assert GenerationRequest(identity_image, speech).sigma == AUTO_SIGMA == 0.15
    assert GenerationRequest(identity_image, speech, mean_mode="interp:0.5").mean_mode.lam == 0.5


@pytest.mark.parametrize("L,chunks", [(0, 0), (1, 1), (NF, 1), (int(2.5 * NF), 3), (3 * NF, 3)])
def test_output_length_and_chunking(pipe, identity_image, L, chunks):
    seqs, logs = pipe.generate_batch([_request(identity_image, L)])
    assert len(seqs[0]) == L
    assert len(logs[0]) == chunks
    assert sum(c.length for c in logs[0]) == L


def test_last_window_is_padded_with_final_speech_frame(pipe, identity_image):
    # a request whose tail differs only beyond the padding point gives the same output
    req = _request(identity_image, NF + 3)
    seq = pipe.generate_motion_sequence(req)
    padded = np.concatenate([req.speech, np.repeat(req.speech[-1:], NF - 3, axis=0)])
    full = pipe.generate_motion_sequence(GenerationRequest(identity_image, padded, steps=10, seed=0))
    np.testing.assert_array_equal(seq.frames, full.frames[: NF + 3])


def test_generation_is_deterministic(pipe, identity_image):
    a = pipe.generate_motion_sequence(_request(identity_image, 2 * NF, seed=5, mean_mode=MeanMode.last_frame()))
    b = pipe.generate_motion_sequence(_request(identity_image, 2 * NF, seed=5, mean_mode=MeanMode.last_frame()))
    np.testing.assert_array_equal(a.frames, b.frames)
    c = pipe.generate_motion_sequence(_request(identity_image, 2 * NF, seed=6, mean_mode=MeanMode.last_frame()))
    assert np.any(a.frames != c.frames)


def test_interpolate_endpoints_match_modes_bitwise(pipe, identity_image):
    def run(mode):
        return pipe.generate_motion_sequence(_request(identity_image, 3 * NF, seed=2, mean_mode=mode)).frames

    np.testing.assert_array_equal(run(MeanMode.interpolate(0.0)), run(MeanMode.hint()))
    np.testing.assert_array_equal(run(MeanMode.interpolate(1.0)), run(MeanMode.last_frame()))


def test_chunk_log_records_mean_hand_off(pipe, identity_image):
    req = _request(identity_image, 3 * NF, seed=1, mean_mode=MeanMode.last_frame(), sigma_target=0.4)
    seq = pipe.generate_motion_sequence(req)
    chunks = pipe.last_chunks
    hint = pipe.normalizer.apply(pipe.motion_hint(identity_image))
    np.testing.assert_array_equal(chunks[0].mean_condition, hint)
    z = pipe.standardized(seq)
    np.testing.assert_allclose(chunks[1].mean_condition, z[NF - 1], rtol=0, atol=1e-12)
    np.testing.assert_allclose(chunks[2].mean_condition, z[2 * NF - 1], rtol=0, atol=1e-12)
    assert all(c.sigma_condition == 0.4 for c in chunks)


def test_batch_items_use_their_own_seed(pipe, identity_image):
    solo = pipe.generate_motion_sequence(_request(identity_image, NF, seed=9)).frames
    seqs, _ = pipe.generate_batch([_request(identity_image, NF, seed=3), _request(identity_image, NF, seed=9)])
    np.testing.assert_allclose(seqs[1].frames, solo, rtol=0, atol=1e-4)


def test_batch_requests_must_agree(pipe, identity_image):
    with pytest.raises(ValueError):
        pipe.generate_batch([_request(identity_image, NF), _request(identity_image, NF + 1)])
    with pytest.raises(ValueError):
        pipe.generate_batch([_request(identity_image, NF, steps=101)])


def test_render_video_contracts(pipe, identity_image):
    assert pipe.render_video(identity_image, MotionSequence(np.zeros((0, 20)))).shape == (0, 32, 32)
    const = MotionSequence(np.tile(RandomSource(0).uniform(20) - 0.5, (6, 1)))
    video = pipe.render_video(identity_image, const)
    assert video.shape == (6, 32, 32)
    assert all(np.array_equal(video[0], v) for v in video)
    assert np.all((video >= 0) & (video <= 1))
    with pytest.raises(ValueError):
        pipe.render_video(identity_image, np.zeros((3, 19)))


def test_render_encodes_appearance_once(pipe, identity_image, monkeypatch):
    calls = []
    original = pipe.stage1.appearance

    def counting(images):
        calls.append(1)
        return original(images)

    monkeypatch.setattr(pipe.stage1, "appearance", counting)
    pipe.render_video(identity_image, RandomSource(1).uniform((40, 20)) - 0.5)
    assert len(calls) == 1


def test_missing_checkpoints(identity_image):
    empty = TalkingHeadPipeline(None, None, None, diffusion.linear_beta_schedule(10))
    with pytest.raises(RuntimeError):
        empty.generate_motion_sequence(_request(identity_image, 4))
    with pytest.raises(RuntimeError):
        empty.render_video(identity_image, np.zeros((2, 20)))


def test_normalizer_round_trip():
    codes = RandomSource(0).uniform((50, 20)) * 2 - 1
    norm = MotionNormalizer.fit(codes)
    z = norm.apply(codes)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(0), 1, atol=1e-12)
    np.testing.assert_allclose(norm.invert(z), codes, atol=1e-12)


def test_generated_codes_stay_inside_tanh_range(pipe, identity_image):
    # the toy normalizer (std 0.5) lets raw samples wander well past +-1
    seq = pipe.generate_motion_sequence(_request(identity_image, 3 * NF, seed=8,
                                                 mean_mode=MeanMode.last_frame(), guidance_scale=4.0))
    assert np.abs(seq.frames).max() < 1.0


def test_matched_requests_copy_the_clip_conditions(pipe):
    clips = [synth.clip_for(i, 501, NF) for i in (800, 801, 802)]
    codes = encode_clips(pipe.stage1, clips)
    reqs = matched_requests(pipe, clips, codes, steps=7, scale=1.5)
    for k, (r, c, z) in enumerate(zip(reqs, clips, codes)):
        assert np.array_equal(r.identity_image, c.frames[0])
        assert np.array_equal(r.speech, c.track.features)
        # sigma is the clip's own m_sigma in the generator's standardized space
        assert r.sigma_target == compute_motion_stats(pipe.normalizer.apply(z))[1]
        assert (r.steps, r.guidance_scale, r.seed, str(r.mean_mode)) == (7, 1.5, k, "hint")
