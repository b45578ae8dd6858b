import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import uniform_filter

from glyphdiff.fonts import FontAttributes, builtin_fonts, glyph_tile_width, scale_bitmap
from glyphdiff.layout import Box, PromptSpec, allocate_boxes, validate_plan
from glyphdiff.masks import (
    CharacterMask,
    PlanContractError,
    apply_incremental_edit,
    build_char_mask,
    build_cond_mask,
    char_index,
    char_mask_from_index_map,
    feather_region,
    NEUTRAL_GRAY,
)
from glyphdiff.evalkit.ocr import template_ocr


def plan_for(spans, sizes, canvas=64, fills=None, backgrounds=None):
    fills = fills or [(255, 0, 0)] * len(spans)
    backgrounds = backgrounds or [None] * len(spans)
    attrs = [
        FontAttributes(size_px=s, fill=f, background=b)
        for s, f, b in zip(sizes, fills, backgrounds)
    ]
    spec = PromptSpec(prose="", spans=tuple(spans), canvas_w=canvas, canvas_h=canvas)
    return allocate_boxes(spec, attrs)


class TestBuildCharMask:
    def test_empty_plan_all_zero(self):
        plan = plan_for([], [])
        mask = build_char_mask(plan)
        assert mask.index_map.max() == 0
        assert not mask.box_support.any()

    def test_single_A_index_and_support(self):
        plan = plan_for(["A"], [7])
        mask = build_char_mask(plan)
        values = set(np.unique(mask.index_map)) - {0}
        assert values == {char_index("A")} == {34}
        font = builtin_fonts()["mono5x7"]
        cb = plan.words[0].char_boxes[0]
        w = glyph_tile_width(font, 7)
        expected = np.zeros((7, 7), dtype=bool)
        expected[:, :w] = scale_bitmap(font.glyph(ord("A")), 7, w)
        region = mask.index_map[cb.y : cb.y2, cb.x : cb.x2]
        assert np.array_equal(region > 0, expected)

    def test_two_boxes_two_distinct_indices(self):
        plan = plan_for(["XY"], [8])
        mask = build_char_mask(plan)
        hist = np.bincount(mask.index_map.ravel())
        nonzero_values = np.nonzero(hist[1:])[0] + 1
        assert len(nonzero_values) == 2

    def test_space_leaves_zeros(self):
        plan = plan_for(["A B"], [8])
        mask = build_char_mask(plan)
        assert set(np.unique(mask.index_map)) == {0, char_index("A"), char_index("B")}

    def test_support_is_union_of_char_boxes(self):
        plan = plan_for(["HI", "OK"], [8, 10])
        mask = build_char_mask(plan)
        expected = np.zeros_like(mask.box_support)
        for wp in plan.words:
            for cb in wp.char_boxes:
                expected[cb.y : cb.y2, cb.x : cb.x2] = True
        assert np.array_equal(mask.box_support, expected)
        # nonzero entries only inside char boxes
        assert not mask.index_map[~expected].any()

    def test_invalid_plan_rejected(self):
        plan = plan_for(["HI"], [8])
        bad = plan.__class__(
            canvas_w=8,
            canvas_h=8,
            span_texts=plan.span_texts,
            attrs_by_span=plan.attrs_by_span,
            words=plan.words,
        )
        with pytest.raises(PlanContractError):
            build_char_mask(bad)


class TestBuildCondMask:
    def test_empty_plan_uniform_gray(self):
        cond = build_cond_mask(plan_for([], []))
        assert np.all(cond.rgb == NEUTRAL_GRAY)

    def test_red_glyphs_gray_elsewhere(self):
        plan = plan_for(["A"], [8])
        cond = build_cond_mask(plan)
        red = np.all(cond.rgb == (255, 0, 0), axis=-1)
        gray = np.all(cond.rgb == NEUTRAL_GRAY, axis=-1)
        assert red.any()
        assert (red | gray).all()

    def test_black_box_background(self):
        plan = plan_for(["A"], [8], backgrounds=[(0, 0, 0)])
        cond = build_cond_mask(plan)
        b = plan.words[0].box
        box_px = cond.rgb[b.y : b.y2, b.x : b.x2]
        red = np.all(box_px == (255, 0, 0), axis=-1)
        black = np.all(box_px == (0, 0, 0), axis=-1)
        assert (red | black).all() and red.any() and black.any()

    def test_non_gray_support_inside_word_boxes(self):
        plan = plan_for(["HI", "YO"], [8, 9])
        cond = build_cond_mask(plan)
        non_gray = ~np.all(cond.rgb == NEUTRAL_GRAY, axis=-1)
        inside = np.zeros_like(non_gray)
        for wp in plan.words:
            b = wp.box
            inside[b.y : b.y2, b.x : b.x2] = True
        assert not non_gray[~inside].any()

    def test_ocr_roundtrip_recovers_spans(self):
        plan = plan_for(["SAVE OUR", "PLANET"], [8, 7])
        cond = build_cond_mask(plan)
        read = [w.text for w in template_ocr(cond.rgb, plan)]
        assert read == [wp.word for wp in plan.words]


class TestIncrementalEdit:
    def test_space_overwrite_zeroes_slot(self):
        plan = plan_for(["HELLO"], [8])
        edited = apply_incremental_edit(plan, 0, "HE LO")
        mask = build_char_mask(edited)
        slot = plan.words[0].char_boxes[2]
        assert mask.index_map[slot.y : slot.y2, slot.x : slot.x2].max() == 0
        # other slots unchanged
        before = build_char_mask(plan).index_map
        others = np.ones_like(before, dtype=bool)
        others[slot.y : slot.y2, slot.x : slot.x2] = False
        assert np.array_equal(mask.index_map[others], before[others])

    def test_append_widens_and_revalidates(self):
        plan = plan_for(["HI"], [8])
        edited = apply_incremental_edit(plan, 0, "HI!!")
        assert edited.words[0].box.w == plan.words[0].box.w + 2 * 8
        assert validate_plan(edited) == []

    def test_identical_text_is_noop(self):
        plan = plan_for(["HELLO"], [8])
        assert apply_incremental_edit(plan, 0, "HELLO") is plan

    def test_same_length_edit_keeps_boxes(self):
        plan = plan_for(["HELLO"], [8])
        edited = apply_incremental_edit(plan, 0, "WORLD")
        assert edited.words[0].box == plan.words[0].box
        assert edited.words[0].word == "WORLD"

    def test_other_spans_untouched_on_width_change(self):
        plan = plan_for(["HI", "OK"], [8, 8])
        edited = apply_incremental_edit(plan, 0, "HI!!")
        before = [w for w in plan.words if w.span_index == 1]
        after = [w for w in edited.words if w.span_index == 1]
        assert before == after

    def test_overflow_propagates(self):
        plan = plan_for(["HI"], [8])
        from glyphdiff.layout import LayoutOverflowError

        with pytest.raises(LayoutOverflowError):
            apply_incremental_edit(plan, 0, "X" * 20)

    def test_multiword_span_inplace_edit(self):
        plan = plan_for(["SAVE OUR"], [8])
        edited = apply_incremental_edit(plan, 0, "SAVE  UR")
        words = [w for w in edited.words if w.span_index == 0]
        assert [w.word for w in words] == ["SAVE", " UR"]
        assert [w.box for w in words] == [w.box for w in plan.words]


def iterated_blur_oracle(indicator, radius):
    """Independent feathering oracle via scipy's uniform filter."""
    soft = indicator.astype(np.float64)
    for _ in range(radius):
        soft = uniform_filter(soft, size=3, mode="constant", cval=0.0)
    return soft


def chebyshev_distance_to(other: np.ndarray) -> np.ndarray:
    """Brute-force Chebyshev distance from each cell to the nearest True."""
    h, w = other.shape
    coords = np.argwhere(other)
    out = np.full((h, w), np.inf)
    for y in range(h):
        for x in range(w):
            if len(coords):
                d = np.max(np.abs(coords - (y, x)), axis=1).min()
                out[y, x] = d
    return out


class TestFeatherRegion:
    def test_radius_zero_is_hard_indicator(self):
        plan = plan_for(["HI"], [8])
        mask = build_char_mask(plan)
        soft = feather_region(mask, 0)
        assert np.array_equal(soft, mask.box_support.astype(float))

    def test_all_zero_mask(self):
        mask = CharacterMask(
            index_map=np.zeros((16, 16), dtype=np.uint8),
            box_support=np.zeros((16, 16), dtype=bool),
        )
        assert feather_region(mask, 3).max() == 0.0

    def test_band_strictly_interior_values(self):
        # single 8x8 box centered on a 24x24 canvas, radius 2: strict
        # in-between values exactly where Chebyshev distance to the other
        # class is <= 2, hard values elsewhere
        support = np.zeros((24, 24), dtype=bool)
        support[8:16, 8:16] = True
        mask = CharacterMask(index_map=np.zeros((24, 24), np.uint8), box_support=support)
        radius = 2
        soft = feather_region(mask, radius)
        d_inside = chebyshev_distance_to(~support)
        d_outside = chebyshev_distance_to(support)
        for y in range(24):
            for x in range(24):
                if support[y, x] and d_inside[y, x] > radius:
                    assert soft[y, x] == 1.0
                elif not support[y, x] and d_outside[y, x] > radius:
                    assert soft[y, x] == 0.0
                else:
                    assert 0.0 < soft[y, x] < 1.0

    def test_matches_independent_blur_oracle(self):
        plan = plan_for(["SAVE OUR", "PLANET"], [8, 7])
        mask = build_char_mask(plan)
        for radius in (1, 2, 4):
            got = feather_region(mask, radius)
            want = iterated_blur_oracle(mask.box_support, radius)
            assert np.allclose(got, want, atol=1e-12)

    @given(st.integers(0, 5))
    @settings(max_examples=6, deadline=None)
    def test_bounded_unit_interval(self, radius):
        plan = plan_for(["HI"], [10])
        soft = feather_region(build_char_mask(plan), radius)
        assert soft.min() >= 0.0 and soft.max() <= 1.0

    def test_negative_radius_rejected(self):
        plan = plan_for(["HI"], [8])
        with pytest.raises(ValueError):
            feather_region(build_char_mask(plan), -1)


class TestMaskReload:
    def test_support_rebuilt_from_plan(self):
        plan = plan_for(["HI"], [8])
        mask = build_char_mask(plan)
        reloaded = char_mask_from_index_map(mask.index_map, plan)
        assert np.array_equal(reloaded.box_support, mask.box_support)
        assert np.array_equal(reloaded.index_map, mask.index_map)

    def test_fallback_support_without_plan(self):
        plan = plan_for(["HI"], [8])
        mask = build_char_mask(plan)
        reloaded = char_mask_from_index_map(mask.index_map)
        assert np.array_equal(reloaded.box_support, mask.index_map != 0)
