"""Independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np
import torch

from ssha.qnet import DuelingQNet, NetConfig, Observation, entry_loss, step_onehot

FD_EPS = 1e-4
# relative error denominator floor; coordinates whose gradient is below this
# are compared in absolute terms
REL_FLOOR = 1e-6


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def central_difference(f, x: torch.Tensor, idx: tuple, eps: float = FD_EPS):
    """``(f(x+eps) - f(x-eps)) / 2eps`` along one coordinate, plus the two
    one-sided differences."""
    with torch.no_grad():
        orig = x[idx].item()
        f0 = f()
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
    return (fp - fm) / (2 * eps), (fp - f0) / eps, (f0 - fm) / eps


class ReluPatterns:
    """Records the on/off pattern of every ``nn.ReLU`` in a module, so a
    finite-difference stencil that flips any unit can be detected exactly."""

    def __init__(self, net: torch.nn.Module):
        self.masks = []
        self.handles = [m.register_forward_hook(self._hook)
                        for m in net.modules() if isinstance(m, torch.nn.ReLU)]

    def _hook(self, module, inputs, output):
        self.masks.append(inputs[0] > 0)

    def snapshot(self, f):
        self.masks = []
        f()
        return self.masks

    def remove(self):
        for h in self.handles:
            h.remove()


def stencil_flips_relu(patterns: ReluPatterns, f, x: torch.Tensor, idx: tuple, eps: float = FD_EPS) -> bool:
    with torch.no_grad():
        orig = x[idx].item()
        x[idx] = orig + eps
        hi = patterns.snapshot(f)
        x[idx] = orig - eps
        lo = patterns.snapshot(f)
        x[idx] = orig
    return any(not torch.equal(a, b) for a, b in zip(hi, lo))


def small_net_config(stream: str = "two-stream") -> NetConfig:
    return NetConfig(stream=stream, t_in=4, h_in=12, w_in=12, channels=(3, 4, 5), pool_grid=2,
                     hidden=6, n_steps=5, n_regions=5)


def random_batch(cfg: NetConfig, rng: np.random.Generator, n: int = 3):
    obs = []
    for i in range(n):
        shape = (cfg.t_in, cfg.h_in, cfg.w_in)
        obs.append(Observation(
            rgb=rng.uniform(-1, 1, shape + (3,)),
            flow=rng.uniform(-1, 1, shape + (2,)) if cfg.stream != "rgb" else None,
            step_onehot=step_onehot(i % cfg.n_steps, cfg.n_steps)))
    actions = rng.integers(0, cfg.n_actions, n)
    targets = rng.uniform(-1, 3, n)
    return obs, actions, targets


def param_gradient_check(net: DuelingQNet, obs, actions, targets, n_coords: int,
                         rng: np.random.Generator, analytic: dict) -> dict:
    """Finite-difference check of ``analytic`` on ``n_coords`` coordinates
    spread over every parameter tensor. Returns per-tensor max errors and the
    number of coordinates skipped because the stencil switches some ReLU on or off."""
    params = dict(net.named_parameters())
    names = list(params)
    per = {n: [] for n in names}
    skipped = 0

    def loss():
        return entry_loss(net, obs, range(len(obs)), actions, targets).item()

    # round-robin over tensors so every layer gets coordinates
    k = 0
    attempts = 0
    patterns = ReluPatterns(net)
    try:
        while sum(len(v) for v in per.values()) < n_coords:
            attempts += 1
            if attempts > 20 * n_coords:
                raise RuntimeError("too many kink rejections")
            name = names[k % len(names)]
            k += 1
            p = params[name]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            if stencil_flips_relu(patterns, loss, p.data, idx):
                skipped += 1
                continue
            central, _, _ = central_difference(loss, p.data, idx)
            per[name].append(rel_error(float(analytic[name][idx]), central))
    finally:
        patterns.remove()
    return {"max_rel": {n: max(v) for n, v in per.items() if v},
            "counts": {n: len(v) for n, v in per.items()}, "skipped": skipped}


def bilinear_reference(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered, edge-clamped bilinear resize by explicit gathers."""

    def axis(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        return i0, np.minimum(i0 + 1, n_in - 1), src - i0

    f = np.asarray(frames, dtype=np.float64)
    y0, y1, fy = axis(f.shape[1], out_h)
    x0, x1, fx = axis(f.shape[2], out_w)
    rows = f[:, y0] + (f[:, y1] - f[:, y0]) * fy[None, :, None, None]
    return rows[:, :, x0] + (rows[:, :, x1] - rows[:, :, x0]) * fx[None, None, :, None]


def adam_reference(g_seq, lr, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    """Scalar Adam recurrence written out step by step."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p
