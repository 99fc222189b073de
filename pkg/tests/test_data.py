import json
import shutil

import numpy as np
import pytest

from pcekit.data import (
    DataFormatError,
    Dataset,
    Fixation,
    FixationSequence,
    PceLabel,
    Vocab,
    load_dataset_dir,
    load_metrics,
    normalize_aoi,
    save_dataset,
    save_metrics,
    stratified_split,
)
from pcekit.evaluation import evaluate

from conftest import FIXTURES


@pytest.mark.parametrize("raw,canon", [
    ("wall_vis", "vis_wall"),
    ("wall_text", "txt_wall"),
    ("vis_rock", "vis_rock"),
    ("Rock Text", "txt_rock"),
    ("", "off"),
    ("   ", "off"),
    ("mystery", "off"),
    (None, "off"),
])
def test_normalize_aoi(raw, canon):
    assert normalize_aoi(raw) == canon


def test_label_parse():
    assert PceLabel.parse(" Yes ") is PceLabel.YES
    assert PceLabel.parse("UNCLEAR") is PceLabel.UNCLEAR
    assert PceLabel.NO.text == "no"
    with pytest.raises(ValueError):
        PceLabel.parse("maybe")


def test_fixation_validation():
    with pytest.raises(ValueError):
        Fixation(0, "vis_a", 1, 1, 10)
    with pytest.raises(ValueError):
        Fixation(1, "vis_a", 1, 1, 0)
    with pytest.raises(ValueError):
        Fixation(1, "bogus", 1, 1, 10)
    with pytest.raises(ValueError):
        FixationSequence("P", "S", (Fixation(2, "vis_a", 1, 1, 10),))
    with pytest.raises(ValueError):
        FixationSequence("P", "S", ())


def test_vocab():
    v = Vocab(["off", "vis_a"])
    assert v.add("vis_a") == 1 and v.add("txt_b") == 2
    assert list(v) == ["off", "vis_a", "txt_b"]
    assert v.symbol(2) == "txt_b" and "vis_a" in v
    with pytest.raises(KeyError):
        v.index("vis_zzz")


def test_load_ewcx(ewcx):
    assert len(ewcx) == 1
    s = ewcx.samples[0]
    assert (s.participant_id, s.stimulus_id) == ("EWCX", "2412873")
    assert s.sequence.aois == ["vis_wall", "txt_wall", "off", "txt_rock", "txt_wall"]
    assert s.label is PceLabel.NO
    assert s.sequence.fixations[0].duration_ms > 0


def test_roundtrip_is_byte_identical(tmp_path, small_ds):
    a, b = tmp_path / "a", tmp_path / "b"
    save_dataset(small_ds, a)
    again = load_dataset_dir(a)
    save_dataset(again, b)
    for name in ("fixations.csv", "labels.csv", "stimuli.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert [s.label for s in again.samples] == [s.label for s in small_ds.samples]
    assert again.samples[5].sequence == small_ds.samples[5].sequence


def _copy_fixture(tmp_path):
    d = tmp_path / "ds"
    shutil.copytree(FIXTURES / "ewcx", d)
    return d


def _expect_error(d, match):
    with pytest.raises(DataFormatError, match=match):
        load_dataset_dir(d)


def test_bad_header(tmp_path):
    d = _copy_fixture(tmp_path)
    text = (d / "fixations.csv").read_text().replace("duration_ms", "dur", 1)
    (d / "fixations.csv").write_text(text)
    _expect_error(d, "line 1")


def test_bad_number_reports_line(tmp_path):
    d = _copy_fixture(tmp_path)
    lines = (d / "fixations.csv").read_text().splitlines()
    cells = lines[2].split(",")
    cells[4] = "abc"
    lines[2] = ",".join(cells)
    (d / "fixations.csv").write_text("\n".join(lines) + "\n")
    _expect_error(d, "line 3")


def test_missing_label(tmp_path):
    d = _copy_fixture(tmp_path)
    (d / "labels.csv").write_text("participant_id,stimulus_id,label\n")
    _expect_error(d, "no label")


def test_dangling_stimulus(tmp_path):
    d = _copy_fixture(tmp_path)
    (d / "stimuli.json").write_text("[]")
    _expect_error(d, "dangling")


def test_duplicate_label(tmp_path):
    d = _copy_fixture(tmp_path)
    lines = (d / "labels.csv").read_text().splitlines()
    (d / "labels.csv").write_text("\n".join(lines + [lines[1]]) + "\n")
    _expect_error(d, "duplicate")


def test_bad_json(tmp_path):
    d = _copy_fixture(tmp_path)
    (d / "stimuli.json").write_text("[{")
    _expect_error(d, "line 1")


def test_stratified_split(small_ds):
    tr, va, te = stratified_split(small_ds, seed=0)
    assert len(tr) + len(va) + len(te) == len(small_ds)
    keys = [{(s.participant_id, s.stimulus_id) for s in d.samples} for d in (tr, va, te)]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
    total = np.array(small_ds.class_counts())
    for part, frac in zip((tr, va, te), (0.8, 0.1, 0.1)):
        assert np.all(np.abs(np.array(part.class_counts()) - total * frac) < 1 + 1e-9)
    again = stratified_split(small_ds, seed=0)
    assert [s.stimulus_id for s in again[2].samples] == [s.stimulus_id for s in te.samples]
    other = stratified_split(small_ds, seed=1)
    assert [s.stimulus_id for s in other[2].samples] != [s.stimulus_id for s in te.samples]


def test_split_rejects_bad_fractions(small_ds):
    with pytest.raises(ValueError):
        stratified_split(small_ds, (0.5, 0.6))


def test_subset_keeps_vocab(small_ds):
    sub = small_ds.subset([0, 1])
    assert isinstance(sub, Dataset) and len(sub) == 2
    assert list(sub.aoi_vocab) == list(small_ds.aoi_vocab)


def test_metrics_roundtrip(tmp_path):
    rep = evaluate([0, 1, 2, None], [0, 1, 1, 2])
    p = save_metrics(rep, tmp_path / "m.json", {"seed": 1})
    assert load_metrics(p) == rep
    assert json.loads(p.read_text())["config"] == {"seed": 1}
