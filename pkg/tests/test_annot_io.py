import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artss.annot_io import (
    ManifestRow,
    atomic_write,
    format_boxes,
    format_manifest,
    format_scores,
    infer_side,
    parse_annotations,
    parse_box_text,
    parse_fold_predictions_text,
    parse_manifest,
    parse_manifest_text,
    parse_predictions,
    parse_scores_text,
    quantize_report,
    read_splits,
    report_from_json,
    report_to_csv,
    report_to_json,
    split_side_suffix,
    write_splits,
)
from artss.core import (
    ArtssError,
    BoundingBox,
    DatasetSplit,
    Gender,
    JointClass,
    JointDetection,
    ParseError,
    SchemaError,
    SharpScore,
    Side,
    ValidationError,
    make_splits,
)
from artss.detect_eval import evaluate_detections
from conftest import random_case

ident = st.text(st.characters(whitelist_categories=("Ll", "Lu", "Nd"), max_codepoint=0x2FF), min_size=1, max_size=8)
unit_open = st.floats(0.001, 1.0)
half = st.floats(0.0, 1.0)


@st.composite
def detections(draw, confidence=False):
    side = draw(st.sampled_from([Side.LEFT, Side.RIGHT]))
    n = draw(st.integers(0, 6))
    out = []
    for _ in range(n):
        box = BoundingBox(draw(half), draw(half), draw(unit_open), draw(unit_open))
        conf = draw(half) if confidence else None
        out.append(JointDetection("img", draw(st.sampled_from(list(JointClass))), box, side, conf))
    return side, out


reader = st.integers(0, 576).map(lambda v: v / 2)


@st.composite
def scores(draw):
    ids = draw(st.lists(ident, min_size=1, max_size=8, unique=True))
    if draw(st.booleans()):
        return [SharpScore.from_readers(i, draw(reader), draw(reader)) for i in ids]
    return [SharpScore(i, draw(st.floats(0, 288))) for i in ids]


class TestBoxes:
    @given(detections())
    def test_annotation_roundtrip(self, sd):
        side, dets = sd
        assert parse_box_text(format_boxes(dets), "img", frame_side=side) == dets

    @given(detections(confidence=True))
    def test_prediction_roundtrip(self, sd):
        side, dets = sd
        assert parse_box_text(format_boxes(dets), "img", "required", side) == dets

    def test_field_errors_carry_line(self):
        with pytest.raises(ParseError) as ei:
            parse_box_text("0 0.5 0.5 0.1 0.1\n3 0.5 abc 0.1 0.1\n", "x")
        assert ei.value.line == 2 and "cy" in str(ei.value)

    @pytest.mark.parametrize(
        "line",
        ["11 0.5 0.5 0.1 0.1", "0 1.5 0.5 0.1 0.1", "0 0.5 0.5 0 0.1", "0 0.5 0.5 nan 0.1", "0 0.5 0.5 0.1"],
    )
    def test_bad_ground_truth(self, line):
        with pytest.raises(ArtssError):
            parse_box_text(line, "x")

    def test_confidence_required_for_predictions(self):
        with pytest.raises(ParseError):
            parse_box_text("0 0.5 0.5 0.1 0.1", "x", "required")
        d = parse_box_text("0 0.5 0.5 0.1 0.1", "x", "required", default_confidence=1.0)
        assert d[0].confidence == 1.0

    def test_confidence_forbidden_for_ground_truth(self):
        with pytest.raises(ParseError):
            parse_box_text("0 0.5 0.5 0.1 0.1 0.9", "x")

    def test_empty_file_means_no_joints(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("")
        assert parse_annotations(p) == []

    def test_non_utf8(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_bytes(b"\xff\xfe0 0.5")
        with pytest.raises(ParseError):
            parse_predictions(p)

    def test_side_inference(self):
        b = BoundingBox(0.7, 0.5, 0.1, 0.1)
        assert infer_side("p_R", b, Side.LEFT) is Side.LEFT
        assert infer_side("p_R", b) is Side.RIGHT
        assert infer_side("p", b) is Side.LEFT  # viewer's right half
        assert infer_side("p", BoundingBox(0.2, 0.5, 0.1, 0.1)) is Side.RIGHT
        assert split_side_suffix("p01_L") == ("p01", Side.LEFT)
        assert split_side_suffix("p01") == ("p01", None)


class TestScores:
    @given(scores())
    def test_roundtrip(self, ss):
        assert parse_scores_text(format_scores(ss)) == ss

    def test_readers_averaged(self):
        s = parse_scores_text("id,reader_a,reader_b\na,10,13\n")
        assert s[0].tss == 11.5

    @pytest.mark.parametrize(
        "text,err",
        [
            ("", SchemaError),
            ("x,y\n", SchemaError),
            ("id,tss\na,300\n", ValidationError),
            ("id,tss\na,-1\n", ValidationError),
            ("id,tss\na,1\na,2\n", ParseError),
            ("id,tss\na\n", ParseError),
            ("id,tss\n,4\n", ParseError),
            ("id,reader_a,reader_b\na,1,\n", ParseError),
        ],
    )
    def test_rejects(self, text, err):
        with pytest.raises(err):
            parse_scores_text(text)

    def test_extra_columns_allowed(self):
        assert parse_scores_text("id,tss,note\na,3,x\n")[0].tss == 3.0

    def test_fold_predictions(self):
        g = parse_fold_predictions_text("id,tss,fold\na,1,1\nb,2,2\na,3,2\n")
        assert sorted(g) == [1, 2] and [s.tss for s in g[2]] == [2.0, 3.0]
        assert list(parse_fold_predictions_text("id,tss\na,1\n")) == [None]
        with pytest.raises(ParseError):
            parse_fold_predictions_text("id,tss,fold\na,1,x\n")
        with pytest.raises(ParseError):
            parse_fold_predictions_text("id,tss,fold\na,1,1\na,2,1\n")


class TestManifest:
    @given(
        st.lists(
            st.tuples(
                ident,
                st.one_of(st.none(), st.integers(0, 100).map(float)),
                st.one_of(st.none(), st.sampled_from(list(Gender))),
                st.sampled_from(list(Side)),
                st.one_of(st.none(), st.tuples(reader, reader)),
                st.one_of(st.none(), st.integers(0, 179).map(float)),
            ),
            min_size=1,
            max_size=6,
            unique_by=lambda t: t[0],
        )
    )
    def test_roundtrip(self, spec):
        rows = [
            ManifestRow(i, f"/img/{i}.png", age, g, side, *(r or (None, None)), orient)
            for i, age, g, side, r, orient in spec
        ]
        assert parse_manifest_text(format_manifest(rows)) == rows

    def test_relative_paths(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,path,age,gender,side,reader_a,reader_b\na,img/a.png,50,female,left,1,2\n")
        rows = parse_manifest(p)
        assert rows[0].path == str(tmp_path / "img" / "a.png")
        assert rows[0].score.tss == 1.5

    def test_missing_column(self):
        with pytest.raises(SchemaError):
            parse_manifest_text("id,path\na,b\n")

    def test_bad_orientation(self):
        text = "id,path,age,gender,side,reader_a,reader_b,orientation_deg\na,,,,,,,180\n"
        with pytest.raises(ValidationError):
            parse_manifest_text(text)


def test_splits_roundtrip(tmp_path):
    ids = [f"i{k}" for k in range(40)]
    splits = make_splits(ids, 3)
    write_splits(splits, tmp_path)
    back = read_splits(tmp_path)
    key = lambda s: str(s.fold_id)  # noqa: E731
    assert sorted(back, key=key) == sorted(splits, key=key)


def test_split_rejects_overlap():
    from artss.core import ProtocolError

    with pytest.raises(ProtocolError):
        DatasetSplit(1, ["a"], ["a"], [])


class TestReport:
    def _report(self, seed=0):
        rng = np.random.default_rng(seed)
        preds, gts = [], []
        for jc in (JointClass.PI, JointClass.MCP_3):
            p, g = random_case(rng, joint=jc)
            preds += p
            gts += g
        if not gts:
            gts.append(JointDetection("im0", JointClass.PI, BoundingBox(0.5, 0.5, 0.1, 0.1)))
        return evaluate_detections(preds, gts)

    def test_json_roundtrip_after_quantize(self):
        for seed in range(20):
            r = self._report(seed)
            q = quantize_report(r)
            assert quantize_report(q) == q
            assert report_to_json(q) == report_to_json(r)

    def test_json_is_deterministic(self):
        assert report_to_json(self._report(1)) == report_to_json(self._report(1))
        json.loads(report_to_json(self._report(1)))

    def test_csv_layout(self):
        lines = report_to_csv(self._report(2)).splitlines()
        assert lines[0] == "scope,name,metric,value"
        assert lines[1].startswith("class,PI,AP,")
        assert lines[-3].startswith("summary,all,mAP")

    @pytest.mark.parametrize("text", ["", "[]", "{}", '{"per_class": {"XX": {}}}', "[" * 5000])
    def test_bad_json(self, text):
        with pytest.raises(ParseError):
            report_from_json(text)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "one")
    atomic_write(p, b"two")
    assert p.read_text() == "two"
    assert [x.name for x in p.parent.iterdir()] == ["f.txt"]


def test_scores_from_manifest_file():
    from artss import annot_io
    from conftest import SYNTH12

    rows = annot_io.parse_manifest(SYNTH12 / "manifest.csv")
    scores = annot_io.parse_scores(SYNTH12 / "manifest.csv")
    assert [s.image_id for s in scores] == [r.id for r in rows]
    assert [s.tss for s in scores] == [r.score.tss for r in rows]
