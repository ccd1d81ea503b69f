"""``ssha`` command line: generate, train, eval, infer, flow, trace.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .clipio import read_clip, write_clip
from .env import AttentionEnv, EnvConfig
from .flow import TvL1Params, clip_flow, flow_to_rgb
from .metrics import evaluate, rollout
from .qnet import load_checkpoint
from .synthdata import Corpus, Label, LabeledClip, SynthConfig, generate_corpus, manifest_hash
from .trace import annotate_trace, load_trace, write_ppm
from .trainer import TrainConfig, train

log = logging.getLogger("ssha")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def cmd_generate(args) -> int:
    cfg = SynthConfig.from_dict({**_load_json(args.config), **{
        k: v for k, v in {
            "seed": args.seed, "frame_size": args.frame_size, "t": args.t,
            "n_distractors": args.n_distractors, "event_scale": args.event_scale,
            "noise_std": args.noise_std,
        }.items() if v is not None}})
    generate_corpus(cfg, args.n, args.out)
    print(manifest_hash(args.out))
    return 0


def train_configs(config: dict, seed=None, no_localization=False):
    """Split a config document into ``(TrainConfig, EnvConfig)``.

    The document may hold ``train``, ``env`` and ``net`` sections, or flat
    training keys at the top level.
    """
    tdict = dict(config.get("train", {k: v for k, v in config.items() if k not in ("env", "net")}))
    if "net" in config:
        tdict["net"] = config["net"]
    if seed is not None:
        tdict["seed"] = seed
    edict = dict(config.get("env", {}))
    if no_localization:
        edict["no_localization"] = True
    return TrainConfig.from_dict(tdict), EnvConfig.from_dict(edict)


def cmd_train(args) -> int:
    cfg, env_cfg = train_configs(_load_json(args.config), args.seed, args.no_localization)
    res = train(cfg, Corpus(args.corpus), env_cfg, args.out, stream=args.stream)
    print(json.dumps({"iterations": cfg.num_episodes, "final_log": res.log[-1] if res.log else None,
                      "checkpoint": str(Path(args.out) / "checkpoint.ssha")}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    trace = open(args.trace, "w") if args.trace else None
    try:
        m = evaluate(args.checkpoint, args.corpus, args.split, trace)
    finally:
        if trace:
            trace.close()
    text = m.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_infer(args) -> int:
    net, _, meta = load_checkpoint(args.checkpoint)
    net.eval()
    env_cfg = EnvConfig.from_dict(meta.get("env", {}))
    if net.cfg.stream != "rgb":
        env_cfg = EnvConfig.from_dict({**env_cfg.to_dict(), "use_flow": True})
    env = AttentionEnv(env_cfg)
    lc = LabeledClip(read_clip(args.clip), Label.VIOLENT, None, 0, name=str(args.clip))
    recs, state = rollout(env, net, lc)
    for r in recs:
        r.pop("reward")  # the label is unknown at inference time
    pred = Label(recs[-1]["action"] - env_cfg.n_regions)
    print(json.dumps({"class": pred.key, "final_box": recs[-1]["box"], "trajectory": recs},
                     sort_keys=True))
    return 0


def cmd_flow(args) -> int:
    params = TvL1Params(lam=args.lam, warps=args.warps, max_iters=args.iters)
    clip = read_clip(args.clip)
    fl = clip_flow(clip, params, args.max_displacement)
    write_clip(args.out, fl)
    if args.ppm:
        out = Path(args.ppm)
        out.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(fl.frames):
            write_ppm(out / f"flow{t:04d}.ppm", flow_to_rgb(f[..., 0], f[..., 1], 1.0))
    print(json.dumps({"frames": int(fl.frames.shape[0]),
                      "max_abs": float(np.abs(fl.frames).max()) if fl.frames.size else 0.0}))
    return 0


def cmd_trace(args) -> int:
    paths = annotate_trace(load_trace(args.trace), Corpus(args.corpus), args.out)
    print(json.dumps({"images": len(paths)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssha", description="Hard-attention video classification with a dueling Q-network.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="JSON file with SynthConfig fields")
    g.add_argument("--frame-size", type=int)
    g.add_argument("--t", type=int)
    g.add_argument("--n-distractors", type=int)
    g.add_argument("--event-scale", type=float)
    g.add_argument("--noise-std", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an agent on a corpus")
    t.add_argument("--config", help="JSON file with train/env/net sections")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-localization", action="store_true",
                   help="mask all region actions (classify-only ablation)")
    t.add_argument("--stream", choices=["rgb", "flow", "two-stream"], default="rgb")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation, metrics JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--out", help="also write the metrics JSON here")
    e.add_argument("--trace", help="write the JSON-lines trajectory log here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="classify a single clip file")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--clip", required=True)
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("flow", help="TV-L1 flow of a clip file")
    f.add_argument("--clip", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--ppm", help="directory for color-wheel PPM frames")
    f.add_argument("--max-displacement", type=float, default=8.0)
    f.add_argument("--lam", type=float, default=0.15)
    f.add_argument("--warps", type=int, default=5)
    f.add_argument("--iters", type=int, default=30)
    f.set_defaults(func=cmd_flow)

    tr = sub.add_parser("trace", help="annotate a trajectory log as PPM frames")
    tr.add_argument("--trace", required=True)
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"ssha {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
