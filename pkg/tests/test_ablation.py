import json

import pytest

from adapt.ablation import SUITES, format_table, resolve_suites, run_ablation, split_episodes, write_report
from adapt.data import read_dataset
from adapt.model import TrainConfig

BASE = TrainConfig(frames=4, height=32, width=32, base_channels=2, d_text=16, heads=2, video_depth=1,
                   text_depth=1, motion_depth=1, batch_size=4, epochs=1)


def test_row_sets_match_tables():
    assert [r for r, _ in SUITES["mtl"]] == ["single", "single_plus", "joint"]
    assert [r for r, _ in SUITES["signals"]] == ["speed", "course", "speed+course"]
    assert {r for r, _ in SUITES["mask"]} == {"default", "no_cross", "swapped_cross", "narration_only",
                                              "reasoning_only"}
    assert [o["frames"] for _, o in SUITES["frames"]] == [2, 4, 8, 16, 32]


def test_resolve_suites():
    assert resolve_suites("all") == list(SUITES)
    assert resolve_suites("mask,frames") == ["mask", "frames"]
    with pytest.raises(ValueError):
        resolve_suites("bogus")


def test_split_is_deterministic_and_disjoint(tiny_dataset):
    eps = read_dataset(tiny_dataset)
    tr, ev = split_episodes(eps)
    assert len(ev) == 3 and len(tr) == 9
    assert not {e.clip for e in tr} & {e.clip for e in ev}


def test_mask_suite_twice_identical(tiny_dataset, tmp_path):
    a = run_ablation("mask", tiny_dataset, BASE)
    b = run_ablation("mask", tiny_dataset, BASE)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    rows = {r["name"]: r for r in a["suites"]["mask"]["rows"]}
    assert "reasoning" not in rows["narration_only"]["metrics"]
    assert "narration" not in rows["reasoning_only"]["metrics"]
    assert {c["row"] for c in a["suites"]["mask"]["claims"]} == {"default"}
    write_report(a, tmp_path)
    assert json.loads((tmp_path / "ablation.json").read_text()) == a
    table = (tmp_path / "ablation.md").read_text()
    assert table == format_table(a) and "| swapped_cross |" in table


def test_mtl_suite_rows(tiny_dataset):
    report = run_ablation("mtl", tiny_dataset, BASE)
    rows = {r["name"]: r["metrics"] for r in report["suites"]["mtl"]["rows"]}
    assert "speed" not in rows["single"] and "speed" not in rows["single_plus"]
    assert "speed" in rows["joint"] and "course" in rows["joint"]
