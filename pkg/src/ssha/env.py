"""Multi-stage hard-attention MDP over video clips.

Actions ``0..K-1`` zoom into prior box ``i`` of the current view; actions
``K`` and ``K+1`` classify the clip as violent / non-violent and end the
episode. Every observation is rendered from the full-resolution source
through the composed box, never from an earlier downsampled view.
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .flow import TvL1Params, clip_flow
from .qnet import Observation, step_onehot
from .synthdata import Label, LabeledClip
from .tensorcore import (FULL_BOX, PriorBoxSet, RegionBox, compose, crop_array,
                         default_prior_boxes, normalize_array, resize_frames, sample_indices)


@dataclass(frozen=True)
class EnvConfig:
    n_max_steps: int = 5
    priors: PriorBoxSet = field(default_factory=default_prior_boxes)
    r_correct: float = 1.0
    r_incorrect: float = -1.0
    r_region: float = 0.5
    # 1.0 gives the flat region reward; d < 1 pays r_region * d**step
    region_decay: float = 1.0
    t_in: int = 16
    h_in: int = 64
    w_in: int = 64
    use_flow: bool = False
    flow_max_displacement: float = 8.0
    no_localization: bool = False
    resize: str = "bilinear"

    def __post_init__(self):
        if self.n_max_steps < 1:
            raise ValueError("n_max_steps must be >= 1")
        if not 0 < self.r_region < self.r_correct:
            raise ValueError("r_region must lie in (0, r_correct)")
        if not 0 < self.region_decay <= 1:
            raise ValueError("region_decay must lie in (0, 1]")

    @property
    def n_regions(self) -> int:
        return len(self.priors)

    @property
    def n_actions(self) -> int:
        return self.n_regions + 2

    @property
    def q_max(self) -> float:
        return self.r_correct + (self.n_max_steps - 1) * self.r_region

    @property
    def q_min(self) -> float:
        return self.r_incorrect

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["priors"] = self.priors.to_lists()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if "priors" in kw and not isinstance(kw["priors"], PriorBoxSet):
            kw["priors"] = PriorBoxSet.from_lists(kw["priors"])
        return cls(**kw)


@dataclass(frozen=True)
class Action:
    """Either ``Region(index)`` or ``Classify(label)``."""

    region: int | None = None
    label: Label | None = None

    @classmethod
    def Region(cls, i: int) -> "Action":
        return cls(region=int(i))

    @classmethod
    def Classify(cls, label) -> "Action":
        return cls(label=Label.parse(label))

    @property
    def is_region(self) -> bool:
        return self.region is not None

    def index(self, n_regions: int) -> int:
        if self.is_region:
            if not 0 <= self.region < n_regions:
                raise ValueError(f"region index {self.region} out of range")
            return self.region
        return n_regions + int(self.label)

    @classmethod
    def from_index(cls, a: int, n_regions: int) -> "Action":
        if 0 <= a < n_regions:
            return cls.Region(a)
        if a in (n_regions, n_regions + 1):
            return cls.Classify(Label(a - n_regions))
        raise ValueError(f"action index {a} out of range")

    def describe(self) -> str:
        return f"R{self.region}" if self.is_region else f"C{self.label.key}"


@dataclass(frozen=True)
class EnvState:
    source: LabeledClip = field(repr=False)
    cur_box: RegionBox = FULL_BOX
    step: int = 0
    clip_id: int | None = None


@dataclass(frozen=True)
class Transition:
    state_before: EnvState
    action: int
    state_after: EnvState | None
    reward: float
    done: bool
    label: Label

    def __post_init__(self):
        if self.done and self.state_after is not None:
            raise ValueError("a terminal transition has no successor state")


class _LRU:
    def __init__(self, maxsize: int):
        self.maxsize = maxsize
        self.data: OrderedDict = OrderedDict()

    def get(self, key):
        hit = self.data.get(key)
        if hit is not None:
            self.data.move_to_end(key)
        return hit

    def put(self, key, value):
        self.data[key] = value
        self.data.move_to_end(key)
        while len(self.data) > self.maxsize:
            self.data.popitem(last=False)


class AttentionEnv:
    """Stateless step/reset over immutable :class:`EnvState` values.

    The instance only holds render caches, so one env can serve many clips.
    """

    def __init__(self, cfg: EnvConfig | None = None, flow_params: TvL1Params | None = None,
                 cache_size: int = 512):
        self.cfg = cfg or EnvConfig()
        self.flow_params = flow_params or TvL1Params()
        self._obs_cache = _LRU(cache_size)
        self._flow_cache = _LRU(64)

    @property
    def n_actions(self) -> int:
        return self.cfg.n_actions

    def reset(self, clip: LabeledClip, clip_id: int | None = None):
        t, h, w, _ = clip.clip.shape
        c = self.cfg
        if t < c.t_in or h < c.h_in or w < c.w_in:
            raise ValueError(f"clip {t}x{h}x{w} is smaller than observation {c.t_in}x{c.h_in}x{c.w_in}")
        state = EnvState(clip, FULL_BOX, 0, clip_id)
        return state, self.observe(state)

    def action_mask(self, state: EnvState) -> np.ndarray:
        k = self.cfg.n_regions
        mask = np.ones(k + 2, dtype=bool)
        if self.cfg.no_localization or state.step >= self.cfg.n_max_steps - 1:
            mask[:k] = False
        return mask

    def step(self, state: EnvState, action):
        c = self.cfg
        a = action.index(c.n_regions) if isinstance(action, Action) else int(action)
        act = Action.from_index(a, c.n_regions)
        label = state.source.label
        if not act.is_region:
            reward = c.r_correct if act.label == label else c.r_incorrect
            return Transition(state, a, None, reward, True, label), None
        if not self.action_mask(state)[a]:
            raise ValueError(f"region action {a} is not allowed at step {state.step}")
        box = compose(state.cur_box, c.priors[act.region])
        nxt = EnvState(state.source, box, state.step + 1, state.clip_id)
        # fail early on degenerate zooms
        crop_array(state.source.clip.frames[:1], box)
        reward = c.r_region * c.region_decay ** state.step
        return Transition(state, a, nxt, reward, False, label), nxt

    def _flow_clip(self, source: LabeledClip) -> np.ndarray:
        key = id(source)
        hit = self._flow_cache.get(key)
        if hit is not None and hit[0] is source:
            return hit[1]
        flow = clip_flow(source.clip, self.flow_params, self.cfg.flow_max_displacement).frames
        self._flow_cache.put(key, (source, flow))
        return flow

    def observe(self, state: EnvState) -> Observation:
        key = (id(state.source), state.cur_box, state.step)
        hit = self._obs_cache.get(key)
        if hit is not None and hit[0] is state.source:
            return hit[1]
        obs = self._render(state)
        self._obs_cache.put(key, (state.source, obs))
        return obs

    def _render(self, state: EnvState) -> Observation:
        c = self.cfg
        src = state.source.clip.frames
        # frame sampling commutes with the per-frame crop, so sample first
        idx = sample_indices(src.shape[0], c.t_in)
        rgb = resize_frames(crop_array(src[idx], state.cur_box), c.h_in, c.w_in, c.resize)
        if src.dtype == np.uint8:
            rgb = normalize_array(rgb)
        flow = None
        if c.use_flow:
            fl = self._flow_clip(state.source)[idx]
            flow = resize_frames(crop_array(fl, state.cur_box), c.h_in, c.w_in, c.resize)
        return Observation(rgb=rgb, step_onehot=step_onehot(state.step, c.n_max_steps), flow=flow)
