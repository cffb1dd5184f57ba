import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distildoc.enrich import (
    EnrichmentConfig,
    InsertionEvent,
    OcrDocument,
    enrich,
    find_region_spans,
    insert_tags,
    prepare_regions,
    sanitize_label,
    strip_tags,
)
from distildoc.errors import DomainError
from distildoc.geometry import BBox, LayoutRegion
from oracles import brute_spans, fuzz_document


def _doc(tokens, boxes, dims=(100.0, 100.0)):
    return OcrDocument(list(tokens), [BBox(*b) for b in boxes], *dims)


def _regions(raw):
    return [LayoutRegion(BBox(*b), label) for b, label in raw]


def _spans(events):
    starts = {e.region_id: e.token_index for e in events if e.kind == "start"}
    ends = {e.region_id: e.token_index for e in events if e.kind == "end"}
    return sorted((r, starts[r], ends[r]) for r in starts)


class TestInsertTags:
    def test_three_tokens_one_region(self):
        doc = _doc("abc", [(0, 0, 1, 1)] * 3)
        ev = [InsertionEvent(1, "start", 0, "Table"), InsertionEvent(2, "end", 0, "Table")]
        assert insert_tags(doc, ev).tokens == ["a", "<Table>", "b", "c", "</Table>"]

    def test_single_token(self):
        doc = _doc(["a"], [(0, 0, 1, 1)])
        ev = [InsertionEvent(0, "end", 0, "Title"), InsertionEvent(0, "start", 0, "Title")]
        out = insert_tags(doc, ev)
        assert out.tokens == ["<Title>", "a", "</Title>"]
        assert out.tag_spans == [(0, 0, 2)]

    def test_nested_regions(self):
        doc = _doc("abcd", [(0, 0, 1, 1)] * 4)
        ev = [
            InsertionEvent(0, "start", 0, "List"),
            InsertionEvent(3, "end", 0, "List"),
            InsertionEvent(1, "start", 1, "Item"),
            InsertionEvent(2, "end", 1, "Item"),
        ]
        out = insert_tags(doc, ev)
        assert out.tokens == ["<List>", "a", "<Item>", "b", "c", "</Item>", "d", "</List>"]
        for _, s, e in out.tag_spans:
            assert out.tokens[s].startswith("<") and out.tokens[e].startswith("</")

    def test_no_events_is_identity(self):
        doc = _doc("ab", [(0, 0, 1, 1)] * 2)
        assert insert_tags(doc, []).tokens == ["a", "b"]

    @pytest.mark.parametrize("label", ["", "a b", "<x>", "x>"])
    def test_malformed_label(self, label):
        doc = _doc("a", [(0, 0, 1, 1)])
        with pytest.raises(DomainError):
            insert_tags(doc, [InsertionEvent(0, "start", 0, label), InsertionEvent(0, "end", 0, label)])

    def test_index_out_of_range(self):
        doc = _doc("a", [(0, 0, 1, 1)])
        with pytest.raises(DomainError):
            insert_tags(doc, [InsertionEvent(1, "start", 0, "T"), InsertionEvent(1, "end", 0, "T")])

    def test_unpaired_event(self):
        doc = _doc("a", [(0, 0, 1, 1)])
        with pytest.raises(DomainError):
            insert_tags(doc, [InsertionEvent(0, "start", 0, "T")])


class TestSanitize:
    def test_whitespace(self):
        assert sanitize_label("Section  header") == "Section-header"

    def test_brackets(self):
        with pytest.raises(DomainError):
            sanitize_label("a<b")


class TestFindSpans:
    def test_ignored_label(self):
        doc = _doc(["x"], [(10, 10, 20, 20)])
        assert find_region_spans(doc, _regions([((0, 0, 50, 50), "Text")])) == []

    def test_region_without_tokens(self):
        doc = _doc(["x"], [(10, 10, 20, 20)])
        assert find_region_spans(doc, _regions([((60, 60, 90, 90), "Table")])) == []

    def test_iou_threshold_is_strict(self):
        # token (0,0,10,10) vs region (5,0,15,10): IoU exactly 1/3
        doc = _doc(["x"], [(0, 0, 10, 10)])
        reg = _regions([((5, 0, 15, 10), "Table")])
        assert find_region_spans(doc, reg, EnrichmentConfig(iou_threshold=1 / 3)) == []
        assert len(find_region_spans(doc, reg, EnrichmentConfig(iou_threshold=0.33))) == 2

    def test_corner_choice(self):
        doc = _doc(["a", "b", "c"], [(12, 12, 20, 20), (30, 12, 40, 20), (25, 30, 40, 38)])
        assert _spans(find_region_spans(doc, _regions([((10, 10, 42, 40), "Table")]))) == [(0, 0, 2)]

    def test_ties_go_to_lowest_index(self):
        doc = _doc(["a", "b"], [(10, 10, 20, 20), (10, 10, 20, 20)])
        assert _spans(find_region_spans(doc, _regions([((10, 10, 20, 20), "Title")]))) == [(0, 0, 0)]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        tokens, boxes, regions, dims = fuzz_document(rng)
        doc = _doc(tokens, boxes, dims)
        regs = _regions(regions)
        base = {(r.class_label, e.kind, e.token_index) for r, e in
                ((regs[e.region_id], e) for e in find_region_spans(doc, regs))}
        perm = rng.permutation(len(regs))
        shuffled = [regs[i] for i in perm]
        again = {(shuffled[e.region_id].class_label, e.kind, e.token_index)
                 for e in find_region_spans(doc, shuffled)}
        assert base == again


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fuzz_against_brute_force(seed):
    tokens, boxes, regions, dims = fuzz_document(np.random.default_rng(seed))
    doc = _doc(tokens, boxes, dims)
    events = find_region_spans(doc, _regions(regions))
    assert _spans(events) == brute_spans(boxes, regions)
    out = insert_tags(doc, events)
    assert len(out.tokens) - len(tokens) == 2 * len(brute_spans(boxes, regions))
    assert strip_tags(out) == doc


class TestPrepareAndEnrich:
    def test_rescales_to_ocr_page(self):
        reg = _regions([((0, 0, 50, 50), "Table")])
        assert prepare_regions(reg, (100, 100), (200, 400))[0].bbox == BBox(0, 0, 100, 200)

    def test_same_dims_untouched(self):
        reg = _regions([((1, 2, 3, 4), "Table")])
        assert prepare_regions(reg, (10, 10), (10, 10))[0].bbox == BBox(1, 2, 3, 4)

    def test_end_to_end(self):
        doc = _doc(["Annual", "Report", "body"], [(10, 5, 40, 15), (45, 5, 80, 15), (10, 50, 30, 60)])
        out = enrich(doc, _regions([((4, 2, 42, 9), "Title")]), dla_dims=(50, 50))
        assert out.tokens == ["<Title>", "Annual", "Report", "</Title>", "body"]

    def test_ignore_everything(self):
        doc = _doc(["a", "b"], [(1, 1, 5, 5), (6, 1, 9, 5)])
        cfg = EnrichmentConfig(ignore_labels={"Table", "Title"})
        regs = _regions([((0, 0, 10, 10), "Table"), ((0, 0, 10, 10), "Title")])
        assert enrich(doc, regs, cfg).tokens == ["a", "b"]

    def test_bad_config(self):
        with pytest.raises(DomainError):
            EnrichmentConfig(iou_threshold=1.5)
