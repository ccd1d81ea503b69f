"""Greedy-rollout evaluation: accuracy, per-class P/R/F1, actions per video
and localization IoU against the synthetic ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .env import Action, AttentionEnv, EnvConfig
from .qnet import load_checkpoint, q_values
from .synthdata import Corpus, Label
from .tensorcore import RegionBox
from .trainer import masked_argmax


def iou(a: RegionBox, b: RegionBox) -> float:
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def _prf(tp: int, fp: int, fn: int) -> dict:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f1}


@dataclass
class Metrics:
    """``confusion[true][pred]`` with index 0 = violent, 1 = non-violent."""

    accuracy: float
    classes: dict
    avg_actions: float
    median_loc_iou: float | None
    confusion: list
    config_echo: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, confusion, avg_actions: float, median_loc_iou: float | None = None,
                    config_echo: dict | None = None) -> "Metrics":
        c = [[int(v) for v in row] for row in confusion]
        total = sum(map(sum, c))
        acc = (c[0][0] + c[1][1]) / total if total else 0.0
        classes = {}
        for lab in Label:
            i, j = int(lab), 1 - int(lab)
            classes[lab.key] = _prf(c[i][i], c[j][i], c[i][j])
        return cls(acc, classes, float(avg_actions), median_loc_iou, c, config_echo or {})

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "classes": self.classes,
            "avg_actions": self.avg_actions,
            "median_loc_iou": self.median_loc_iou,
            "confusion": self.confusion,
            "config_echo": self.config_echo,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(d["accuracy"], d["classes"], d["avg_actions"], d["median_loc_iou"],
                   d["confusion"], d.get("config_echo", {}))


def rollout(env: AttentionEnv, net, clip, clip_id=None, episode: int = 0):
    """Greedy episode; returns the per-step trajectory records and the final state.

    Each record's ``box`` is the view the action was taken from, so the last
    record carries the final attention box.
    """
    state, obs = env.reset(clip, clip_id)
    records = []
    while True:
        q = q_values(net, [obs])[0]
        a = masked_argmax(q, env.action_mask(state))
        tr, nxt = env.step(state, a)
        records.append({
            "episode": episode,
            "step": state.step,
            "action": a,
            "action_name": Action.from_index(a, env.cfg.n_regions).describe(),
            "reward": tr.reward,
            "box": list(state.cur_box.as_tuple()),
            "q_values": [float(v) for v in q],
        })
        if tr.done:
            return records, state
        state = nxt
        obs = env.observe(state)


def summarize(rollouts, n_regions: int, config_echo: dict | None = None) -> Metrics:
    """``rollouts`` yields ``(label, gt_box, records)`` per clip."""
    confusion = [[0, 0], [0, 0]]
    n_actions = []
    ious = []
    for label, gt_box, recs in rollouts:
        pred = recs[-1]["action"] - n_regions
        confusion[int(label)][pred] += 1
        n_actions.append(len(recs))
        if label == Label.VIOLENT and pred == int(label) and gt_box is not None:
            ious.append(iou(RegionBox(*recs[-1]["box"]), gt_box))
    avg = float(np.mean(n_actions)) if n_actions else 0.0
    return Metrics.from_counts(confusion, avg, float(median(ious)) if ious else None, config_echo)


def evaluate_net(net, corpus: Corpus, env_cfg: EnvConfig, split: str = "test",
                 trace=None) -> Metrics:
    env = AttentionEnv(env_cfg, cache_size=64)
    nc = net.cfg
    if (nc.t_in, nc.h_in, nc.w_in) != (env_cfg.t_in, env_cfg.h_in, env_cfg.w_in):
        raise ValueError("checkpoint observation dims do not match the environment")
    results = []
    for ep, i in enumerate(corpus.indices(split)):
        lc = corpus.get(i)
        if lc.clip.shape[1] < env_cfg.h_in or lc.clip.shape[2] < env_cfg.w_in:
            raise ValueError(f"clip {lc.name} is smaller than the checkpoint's input size")
        recs, _ = rollout(env, net, lc, i, episode=ep)
        for r in recs:
            r["clip"] = lc.name
        if trace is not None:
            for r in recs:
                trace.write(json.dumps(r, sort_keys=True) + "\n")
        results.append((lc.label, lc.gt_box, recs))
    echo = {"split": split, "n_clips": len(results), "stream": nc.stream,
            "no_localization": env_cfg.no_localization}
    return summarize(results, env_cfg.n_regions, echo)


def evaluate(checkpoint, corpus_dir, split: str = "test", trace=None) -> Metrics:
    net, _, meta = load_checkpoint(checkpoint)
    net.eval()
    env_cfg = EnvConfig.from_dict(meta["env"]) if "env" in meta else EnvConfig()
    if net.cfg.stream != "rgb":
        env_cfg = EnvConfig.from_dict({**env_cfg.to_dict(), "use_flow": True})
    corpus = Corpus(corpus_dir, cache_size=8)
    return evaluate_net(net, corpus, env_cfg, split, trace)
