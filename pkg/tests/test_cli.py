import json

import numpy as np
import pytest

from ssha.cli import main
from ssha.clipio import read_clip
from ssha.synthdata import Corpus
from ssha.tensorcore import FULL_BOX, compose, default_prior_boxes, pixel_rect
from ssha.trace import BOX_COLOR, STRIP_HEIGHT, action_label, read_ppm

TINY = {
    "train": {"num_episodes": 12, "batch_size": 4, "target_sync_every": 4, "log_every": 4},
    "env": {"t_in": 4, "h_in": 16, "w_in": 16},
    "net": {"channels": [2, 2, 2], "hidden": 8, "pool_grid": 2},
}
GEN = ["--frame-size", "32", "--t", "6", "--n-distractors", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--n", "8", "--seed", "5", "--out", str(d / "corpus"), *GEN]) == 0
    (d / "cfg.json").write_text(json.dumps(TINY))
    assert main(["train", "--config", str(d / "cfg.json"), "--corpus", str(d / "corpus"),
                 "--out", str(d / "run"), "--seed", "0"]) == 0
    return d


class TestExitCodes:
    def test_no_args(self, capsys):
        assert run(capsys)[0] == 1

    def test_unknown_subcommand(self, capsys):
        assert run(capsys, "bogus")[0] == 1

    def test_missing_required(self, capsys):
        assert run(capsys, "generate", "--n", "4")[0] == 1

    def test_help(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0 and "generate" in out

    def test_runtime_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "missing.ssha",
                           "--corpus", tmp_path)
        assert code == 2 and err.startswith("ssha eval:")

    def test_bad_corpus_size(self, capsys, tmp_path):
        assert run(capsys, "generate", "--n", "3", "--out", tmp_path / "c")[0] == 2


def test_generate_is_reproducible(capsys, tmp_path):
    _, h1, _ = run(capsys, "generate", "--n", "4", "--seed", "9", "--out", tmp_path / "a", *GEN)
    _, h2, _ = run(capsys, "generate", "--n", "4", "--seed", "9", "--out", tmp_path / "b", *GEN)
    assert h1 == h2 and len(h1.strip()) == 64
    assert (tmp_path / "a" / "clips" / "00000.ssha").read_bytes() == \
        (tmp_path / "b" / "clips" / "00000.ssha").read_bytes()


def test_train_output(workspace):
    assert (workspace / "run" / "checkpoint.ssha").exists()
    log = (workspace / "run" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 3


def test_eval_schema(capsys, workspace):
    code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "run" / "checkpoint.ssha",
                       "--corpus", workspace / "corpus", "--out", workspace / "m.json")
    assert code == 0
    m = json.loads(out)
    assert json.loads((workspace / "m.json").read_text()) == m
    assert set(m["classes"]) == {"violent", "nonviolent"}
    assert 0.0 <= m["accuracy"] <= 1.0 and 1.0 <= m["avg_actions"] <= 5.0
    assert sum(map(sum, m["confusion"])) == m["config_echo"]["n_clips"]


def test_infer(capsys, workspace):
    clip = workspace / "corpus" / "clips" / "00000.ssha"
    code, out, _ = run(capsys, "infer", "--checkpoint", workspace / "run" / "checkpoint.ssha",
                       "--clip", clip)
    assert code == 0
    res = json.loads(out)
    assert res["class"] in ("violent", "nonviolent")
    assert res["final_box"] == res["trajectory"][-1]["box"]
    assert all("reward" not in r for r in res["trajectory"])


def test_flow(capsys, workspace, tmp_path):
    clip = workspace / "corpus" / "clips" / "00001.ssha"
    code, out, _ = run(capsys, "flow", "--clip", clip, "--out", tmp_path / "f.ssha",
                       "--ppm", tmp_path / "ppm", "--warps", "2", "--iters", "10")
    assert code == 0
    fl = read_clip(tmp_path / "f.ssha")
    src = read_clip(clip)
    assert fl.frames.shape == src.frames.shape[:3] + (2,)
    assert json.loads(out)["max_abs"] <= 8.0
    ppms = sorted((tmp_path / "ppm").glob("*.ppm"))
    assert len(ppms) == src.frames.shape[0]
    assert read_ppm(ppms[0]).shape == (32, 32, 3)


def test_trace(capsys, workspace, tmp_path):
    ck = workspace / "run" / "checkpoint.ssha"
    assert run(capsys, "eval", "--checkpoint", ck, "--corpus", workspace / "corpus",
               "--trace", tmp_path / "t.jsonl")[0] == 0
    recs = [json.loads(x) for x in (tmp_path / "t.jsonl").read_text().splitlines()]
    code, out, _ = run(capsys, "trace", "--trace", tmp_path / "t.jsonl", "--corpus",
                       workspace / "corpus", "--out", tmp_path / "img")
    assert code == 0 and json.loads(out)["images"] == len(recs)
    assert len(list((tmp_path / "img").glob("*.ppm"))) == len(recs)

    priors = default_prior_boxes()
    corpus = Corpus(workspace / "corpus")
    checked = 0
    for ep in {r["episode"] for r in recs}:
        steps = [r for r in recs if r["episode"] == ep]
        assert steps[0]["box"] == list(FULL_BOX.as_tuple())
        box = FULL_BOX
        for r in steps:
            # each record's box is the composition of the region actions before it
            assert r["box"] == pytest.approx(list(box.as_tuple()))
            img = read_ppm(tmp_path / "img" / f"ep{ep:05d}_step{r['step']}.ppm")
            x0, y0, x1, y1 = pixel_rect(box, *img.shape[:2])
            edge = np.zeros(img.shape[:2], bool)
            edge[y0:y1, x0:x1] = True
            edge[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = False
            strip_w = 4 * len(f"S{r['step']} {action_label(r)}") + 3
            edge[:STRIP_HEIGHT, :strip_w] = False
            assert (img[edge] == BOX_COLOR).all()
            checked += int(edge.any())
            if r["action"] < len(priors):
                box = compose(box, priors[r["action"]])
        assert steps[-1]["action"] >= len(priors)
    assert checked >= len(recs) // 2
    test_files = {corpus.entries[i]["file"] for i in corpus.indices("test")}
    assert {r["clip"] for r in recs} == test_files


def test_trace_unknown_clip(capsys, workspace, tmp_path):
    (tmp_path / "t.jsonl").write_text(json.dumps(
        {"clip": "clips/nope.ssha", "episode": 0, "step": 0, "action": 5, "box": [0, 0, 1, 1]}) + "\n")
    assert run(capsys, "trace", "--trace", tmp_path / "t.jsonl", "--corpus", workspace / "corpus",
               "--out", tmp_path / "img")[0] == 2
