import numpy as np
import pytest

from ssha.env import Action, AttentionEnv, EnvConfig, EnvState, Transition
from ssha.synthdata import Label, LabeledClip, SynthConfig, generate_clip
from ssha.tensorcore import FULL_BOX, VideoClip, compose, crop_resize, normalize_array, sample_frames

CFG = EnvConfig(t_in=4, h_in=16, w_in=16)


@pytest.fixture(scope="module")
def clip():
    return generate_clip(SynthConfig(frame_size=64, t=6, n_distractors=2), Label.VIOLENT, 3)


def test_reset(clip):
    env = AttentionEnv(CFG)
    state, obs = env.reset(clip)
    assert state.cur_box == FULL_BOX and state.step == 0
    assert obs.step_onehot.tolist() == [1, 0, 0, 0, 0]
    assert obs.flow is None
    # crop+resize, then sample, then normalize; every step is linear so order only moves rounding
    ref = normalize_array(sample_frames(crop_resize(clip.clip, FULL_BOX, 16, 16), 4).frames)
    assert obs.rgb.shape == (4, 16, 16, 3)
    assert np.abs(obs.rgb - ref).max() < 1e-5


def test_reset_deterministic(clip):
    a = AttentionEnv(CFG).reset(clip)[1]
    b = AttentionEnv(CFG).reset(clip)[1]
    assert np.array_equal(a.rgb, b.rgb)


def test_undersized(clip):
    with pytest.raises(ValueError):
        AttentionEnv(EnvConfig(t_in=4, h_in=128, w_in=128)).reset(clip)


def test_classify_rewards(clip):
    env = AttentionEnv(CFG)
    s, _ = env.reset(clip)
    tr, nxt = env.step(s, Action.Classify(Label.VIOLENT))
    assert (tr.reward, tr.done, nxt) == (1.0, True, None)
    tr, _ = env.step(s, Action.Classify("nonviolent"))
    assert tr.reward == -1.0 and tr.done


def test_region_step(clip):
    env = AttentionEnv(CFG)
    s, _ = env.reset(clip)
    tr, nxt = env.step(s, Action.Region(1))
    assert tr.reward == 0.5 and not tr.done
    assert nxt.step == 1 and nxt.cur_box == CFG.priors[1]
    assert env.observe(nxt).step_onehot.tolist() == [0, 1, 0, 0, 0]


def test_observation_reads_source(clip):
    env = AttentionEnv(CFG)
    s, _ = env.reset(clip)
    for a in (0, 3):
        _, s = env.step(s, a)
    box = compose(CFG.priors[0], CFG.priors[3])
    assert s.cur_box == box
    expect = crop_resize(VideoClip(clip.clip.frames[[0, 1, 3, 4]]), box, 16, 16).frames / 127.5 - 1
    assert np.abs(env.observe(s).rgb - expect).max() < 1e-5


def test_mask_and_full_episode(clip):
    env = AttentionEnv(CFG)
    s, _ = env.reset(clip)
    assert env.action_mask(s).all() and len(env.action_mask(s)) == 7
    total = 0.0
    for _ in range(4):
        tr, s = env.step(s, 4)
        total += tr.reward
    assert env.action_mask(s).tolist() == [False] * 5 + [True, True]
    with pytest.raises(ValueError):
        env.step(s, 0)
    tr, _ = env.step(s, 5)
    assert total + tr.reward == 3.0 == CFG.q_max


def test_no_localization(clip):
    env = AttentionEnv(EnvConfig(t_in=4, h_in=16, w_in=16, no_localization=True))
    s, _ = env.reset(clip)
    assert env.action_mask(s).tolist() == [False] * 5 + [True, True]


def test_degenerate_zoom():
    tiny = LabeledClip(VideoClip(np.zeros((4, 16, 16, 3), np.uint8)), Label.NONVIOLENT, None, 0)
    env = AttentionEnv(EnvConfig(t_in=4, h_in=4, w_in=4, n_max_steps=10))
    s, _ = env.reset(tiny)
    with pytest.raises(ValueError, match="degenerate"):
        for _ in range(9):
            _, s = env.step(s, 0)


def test_decay_variant(clip):
    env = AttentionEnv(EnvConfig(t_in=4, h_in=16, w_in=16, region_decay=0.5))
    s, _ = env.reset(clip)
    rewards = []
    for _ in range(3):
        tr, s = env.step(s, 4)
        rewards.append(tr.reward)
    assert rewards == [0.5, 0.25, 0.125]


def test_flow_stream(clip):
    env = AttentionEnv(EnvConfig(t_in=4, h_in=16, w_in=16, use_flow=True))
    s, obs = env.reset(clip)
    assert obs.flow.shape == (4, 16, 16, 2)
    assert np.abs(obs.flow).max() <= 1.0


def test_action_roundtrip():
    for a in range(7):
        assert Action.from_index(a, 5).index(5) == a
    assert Action.from_index(5, 5).describe() == "Cviolent"
    with pytest.raises(ValueError):
        Action.from_index(7, 5)


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        EnvConfig(r_region=1.5)
    with pytest.raises(ValueError):
        EnvConfig(n_max_steps=0)
    c = EnvConfig(r_region=0.25, no_localization=True)
    assert EnvConfig.from_dict(c.to_dict()) == c


def test_terminal_transition_has_no_successor(clip):
    s = EnvState(clip)
    with pytest.raises(ValueError):
        Transition(s, 5, s, 1.0, True, Label.VIOLENT)


def test_random_policy_returns_in_bounds(clip):
    env = AttentionEnv(CFG)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, _ = env.reset(clip)
        ret, n = 0.0, 0
        while True:
            tr, s = env.step(s, int(rng.choice(np.flatnonzero(env.action_mask(s)))))
            ret += tr.reward
            n += 1
            if tr.done:
                break
        assert -1.0 <= ret <= 3.0 and n <= 5
