import numpy as np
import pytest
import torch

from reactgen.diffusion import cosine_schedule
from reactgen.errors import ConfigError, SessionNotInitialized, ShapeMismatch
from reactgen.generation import (
    OnlineSession,
    generate_features,
    generate_offline,
    measure_latency,
    online_step,
    stream_actor,
)
from reactgen.model import NULL_LABEL, DenoiserConfig, ReactionDenoiser
from reactgen.rotations import default_skeleton
from reactgen.synthetic import SynthConfig, synth_pair_dataset

D = default_skeleton().feature_dim
SCHED = cosine_schedule(100)


def model(mode="online", constrained=False, max_len=64):
    torch.manual_seed(0)
    cfg = DenoiserConfig(feature_dim=D, d=16, layers=1, heads=2, ffn_width=32, mode=mode,
                         constrained=constrained, num_classes=3 if constrained else 0, max_len=max_len)
    return ReactionDenoiser(cfg).eval()


def actor_stream(n=12, seed=0):
    return torch.randn(n, D, generator=torch.Generator().manual_seed(seed))


def test_first_online_call_emits_one_frame():
    sess = OnlineSession(model(), SCHED, ddim_steps=3, window=8)
    frame, ms = online_step(sess, actor_stream(1)[0])
    assert frame.shape == (D,) and ms >= 0
    assert len(sess.emitted) == len(sess.actor_history) == 1


def test_emitted_tracks_history_length():
    sess = OnlineSession(model(), SCHED, ddim_steps=2, window=4)
    for i, f in enumerate(actor_stream(9)):
        sess.step(f)
        assert len(sess.emitted) == len(sess.actor_history) == i + 1


def test_online_replay_is_identical():
    m, y = model(), actor_stream()
    a = stream_actor(m, y, SCHED, 3, window=5, seed=4)
    b = stream_actor(m, y, SCHED, 3, window=5, seed=4)
    assert torch.equal(a, b)
    assert not torch.equal(a, stream_actor(m, y, SCHED, 3, window=5, seed=5))


@pytest.mark.parametrize("window", [3, 64])
def test_online_causality_end_to_end(window):
    m = model()
    clean = actor_stream(14)
    corrupted = clean.clone()
    corrupted[8:] = 50 * torch.randn(6, D, generator=torch.Generator().manual_seed(9))
    a = stream_actor(m, clean, SCHED, 4, window=window, seed=1)
    b = stream_actor(m, corrupted, SCHED, 4, window=window, seed=1)
    prefix = stream_actor(m, clean[:8], SCHED, 4, window=window, seed=1)
    assert (a[:8] - b[:8]).abs().max() < 1e-6
    assert torch.equal(a[:8], prefix)


def test_window_stability():
    m, y = model(), actor_stream(10)
    wide = stream_actor(m, y, SCHED, 3, window=40, seed=2)
    exact = stream_actor(m, y, SCHED, 3, window=10, seed=2)
    assert torch.equal(wide, exact)


def test_session_errors():
    sess = OnlineSession(model(), SCHED, 2, window=4)
    with pytest.raises(ShapeMismatch):
        sess.step(torch.zeros(D + 1))
    sess.close()
    with pytest.raises(SessionNotInitialized):
        sess.step(torch.zeros(D))
    with pytest.raises(SessionNotInitialized):
        online_step(None, torch.zeros(D))
    with pytest.raises(ConfigError):
        OnlineSession(model(max_len=8), SCHED, 2, window=9)


def test_generate_offline_sixty_frames_deterministic():
    pair = synth_pair_dataset(SynthConfig(classes=2, pairs_per_class=1, frames=60))[0]
    m = model("offline")
    a = generate_offline(m, pair.action, SCHED, ddim_steps=5, seed=3)
    b = generate_offline(m, pair.action, SCHED, ddim_steps=5, seed=3)
    assert a.frames == 60 and a.joints == default_skeleton().joint_count
    np.testing.assert_array_equal(a.pose, b.pose)
    np.testing.assert_array_equal(a.transl, b.transl)


def test_guidance_scales():
    m = model("offline", constrained=True)
    y = actor_stream(6)[None].repeat(2, 1, 1)
    cond = generate_features(m, y, SCHED, 3, seed=0, label=torch.tensor([1, 2]))
    same = generate_features(m, y, SCHED, 3, seed=0, label=torch.tensor([1, 2]), guidance=1.0)
    uncond = generate_features(m, y, SCHED, 3, seed=0, label=NULL_LABEL)
    zero = generate_features(m, y, SCHED, 3, seed=0, label=torch.tensor([1, 2]), guidance=0.0)
    assert torch.equal(cond, same)
    assert torch.allclose(zero, uncond, atol=1e-5)
    assert not torch.allclose(cond, uncond)


def test_measure_latency_grows_with_steps():
    tab = measure_latency(model(), SCHED, [1, 20], frames=6, window=4, warmup=1)
    assert set(tab) == {1, 20}
    assert tab[20] > tab[1]
