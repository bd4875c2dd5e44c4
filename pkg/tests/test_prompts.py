from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from lro.errors import MalformedOutputError
from lro.prompts import (
    ParsedVerdict,
    PromptBuilder,
    PromptOptions,
    RenderStyle,
    Shape,
    build_prompt,
    extract_last_json,
    parse,
    render_element,
    with_repair_reminder,
)
from lro.relation import CellRef, ColumnRef, Granularity, RowRef, TableRef, extract_elements


class TestRenderElement:
    def test_row_as_name_value_pairs(self):
        element = RowRef(0, ("Alley Wok", "Palo Alto"))
        style = RenderStyle(columns=("Name", "Location"))
        assert render_element(element, style) == "Name: Alley Wok; Location: Palo Alto"

    def test_row_null_marker(self):
        element = RowRef(0, ("Clara", None))
        style = RenderStyle(columns=("Name", "Gender"))
        assert render_element(element, style) == "Name: Clara; Gender: NULL"

    def test_column_without_examples(self):
        element = ColumnRef("Description", ("a", "b"))
        assert render_element(element, RenderStyle()) == "Description"

    def test_column_with_examples_first_three_non_null(self):
        element = ColumnRef("City", (None, "Rome", "Oslo", None, "Lima", "Kyiv"))
        opts = PromptOptions(examples=True, example_count=3)
        out = render_element(element, RenderStyle(), opts)
        assert out == 'City (examples: "Rome", "Oslo", "Lima")'

    def test_table_with_examples(self, small_db):
        element = TableRef("Offices")
        opts = PromptOptions(examples=True, example_count=2)
        out = render_element(element, RenderStyle(database=small_db), opts)
        assert out == "Offices (columns: City; sample rows: Seattle | Dublin)"

    def test_table_without_examples(self, small_db):
        out = render_element(TableRef("Offices"), RenderStyle(database=small_db))
        assert out == "Offices"

    def test_cell_is_value(self):
        assert render_element(CellRef(0, 0, "42"), RenderStyle()) == "42"
        assert render_element(CellRef(0, 0, None), RenderStyle()) == "NULL"


class TestBuildPrompt:
    def test_select_one_structure(self, restaurants):
        builder = PromptBuilder()
        element = extract_elements(restaurants, Granularity.ROW)[0]
        style = RenderStyle(columns=restaurants.columns)
        req = builder.select_one(element, style, "Location is in Bay Area.", PromptOptions(), "t")
        assert "Location is in Bay Area." in req.user
        assert "Name: Alley Wok" in req.user
        assert '"keep"' in req.user
        assert req.system

    def test_select_all_numbers_candidates(self, restaurants):
        builder = PromptBuilder()
        elements = extract_elements(restaurants, Granularity.COLUMN)
        req = builder.select_all(
            elements, RenderStyle(), "It is related to the restaurant atmosphere.",
            PromptOptions(), "t",
        )
        assert "0. Name" in req.user
        assert "2. Description" in req.user

    def test_deterministic_byte_identical(self, restaurants):
        builder = PromptBuilder()
        elements = extract_elements(restaurants, Granularity.ROW)
        style = RenderStyle(columns=restaurants.columns)

        def build():
            return builder.select_all(elements, style, "req", PromptOptions(cot=True), "t")

        assert build() == build()

    def test_cot_toggles_instruction_only(self, restaurants):
        builder = PromptBuilder()
        element = extract_elements(restaurants, Granularity.ROW)[0]
        style = RenderStyle(columns=restaurants.columns)
        plain = builder.select_one(element, style, "req", PromptOptions(cot=False), "t")
        cot = builder.select_one(element, style, "req", PromptOptions(cot=True), "t")
        assert plain.user != cot.user
        assert "step by step" in cot.user.lower()
        assert "step by step" not in plain.user.lower()

    def test_match_semi_option_list(self):
        builder = PromptBuilder()
        left = CellRef(0, 2, "Microsoft")
        rights = [CellRef(0, 0, "Microsoft"), CellRef(1, 0, "Google"),
                  CellRef(2, 0, None)]
        req = builder.match_semi(left, rights, RenderStyle(), RenderStyle(),
                                 "company names match", PromptOptions(), "t")
        assert "Microsoft" in req.user.split("Candidates")[0]
        assert "0. Microsoft" in req.user
        assert "1. Google" in req.user
        assert "2. NULL" in req.user

    def test_repair_reminder_appends(self):
        builder = PromptBuilder()
        req = builder.judge("a", "b", "t")
        repaired = with_repair_reminder(req)
        assert repaired.user.startswith(req.user)
        assert "previous answer" in repaired.user

    def test_build_prompt_facade_matches_builder(self, restaurants):
        builder = PromptBuilder()
        opts = PromptOptions()
        elements = extract_elements(restaurants, Granularity.ROW)
        style = RenderStyle(columns=restaurants.columns)
        assert build_prompt(
            "select", "one", {"element": elements[0], "style": style},
            "req", opts, builder, "t",
        ) == builder.select_one(elements[0], style, "req", opts, "t")
        assert build_prompt(
            "select", "all", {"elements": elements, "style": style},
            "req", opts, builder, "t",
        ) == builder.select_all(elements, style, "req", opts, "t")
        assert build_prompt(
            "order", "pair",
            {"first": elements[0], "second": elements[1], "style": style},
            "req", opts, builder, "t",
        ) == builder.order_pair(elements[0], elements[1], style, "req", opts, "t")
        assert build_prompt(
            "impute", "one", {"column": "Stars", "row": "Name: x"},
            "req", opts, builder, "t",
        ) == builder.impute_column_one("Stars", "Name: x", "req", opts, "t")
        assert build_prompt(
            "cluster", "all", {"elements": elements, "style": style},
            "req", opts, builder, "t",
        ) == builder.cluster_all(elements, style, "req", opts, "t")


class TestExtractLastJson:
    def test_plain_object(self):
        assert extract_last_json('{"keep": true}') == {"keep": True}

    def test_cot_preamble_tolerated(self):
        text = 'Reasoning about {"keep": false}... final answer:\n{"keep": true}'
        assert extract_last_json(text) == {"keep": True}

    def test_fenced_output(self):
        text = "Answer:\n```json\n[0, 2]\n```"
        assert extract_last_json(text) == [0, 2]

    def test_no_json_raises(self):
        with pytest.raises(MalformedOutputError):
            extract_last_json("I cannot answer that.")


class TestParse:
    def test_verdict_with_preamble(self):
        parsed = parse(Shape("verdict"), 'Reasoning... {"keep": true}')
        assert parsed == ParsedVerdict(True, 'Reasoning... {"keep": true}')

    def test_index_list(self):
        parsed = parse(Shape("index_list", n=3), "[0, 2]")
        assert parsed.indices == (0, 2)

    def test_index_out_of_bounds(self):
        with pytest.raises(MalformedOutputError):
            parse(Shape("index_list", n=3), "[3]")

    def test_pair_list(self):
        parsed = parse(Shape("pair_list", n=2, m=3), "[[0, 2], [1, 0]]")
        assert parsed.pairs == ((0, 2), (1, 0))

    def test_pair_out_of_bounds(self):
        with pytest.raises(MalformedOutputError):
            parse(Shape("pair_list", n=2, m=3), "[[2, 0]]")

    def test_assignment(self):
        text = json.dumps({"clusters": [
            {"label": "x", "members": [0, 1]}, {"label": "y", "members": [2]},
        ]})
        parsed = parse(Shape("assignment", n=3), text)
        assert parsed.clusters == (("x", (0, 1)), ("y", (2,)))

    def test_label(self):
        parsed = parse(Shape("label"), '{"cluster": "tech"}')
        assert parsed.clusters == (("tech", (0,)),)

    def test_ranking_complete(self):
        parsed = parse(Shape("ranking", n=3), '{"order": [2, 0, 1]}')
        assert parsed.order == (2, 0, 1)
        assert parsed.complete

    def test_ranking_incomplete_flagged(self):
        parsed = parse(Shape("ranking", n=3), '{"order": [2]}')
        assert parsed.order == (2,)
        assert not parsed.complete

    def test_ranking_duplicates_keep_first(self):
        parsed = parse(Shape("ranking", n=3), '{"order": [2, 2, 0, 1]}')
        assert parsed.order == (2, 0, 1)

    def test_score_bounds(self):
        assert parse(Shape("score"), '{"score": 85}').score == 85.0
        with pytest.raises(MalformedOutputError):
            parse(Shape("score"), '{"score": 101}')
        with pytest.raises(MalformedOutputError):
            parse(Shape("score"), '{"score": -1}')

    def test_winner(self):
        assert parse(Shape("winner"), '{"winner": 1}').indices == (1,)
        with pytest.raises(MalformedOutputError):
            parse(Shape("winner"), '{"winner": 2}')

    def test_cells_single(self):
        assert parse(Shape("cell"), '{"value": "Female"}').values == ("Female",)

    def test_cells_arity_checked(self):
        with pytest.raises(MalformedOutputError):
            parse(Shape("cells", n=3), '["a", "b"]')

    def test_cells_coerce_numbers(self):
        assert parse(Shape("cells", n=2), '[1, "b"]').values == ("1", "b")

    def test_null_cell_rejected(self):
        with pytest.raises(MalformedOutputError):
            parse(Shape("cell"), '{"value": null}')


class TestRoundTrip:
    """parse(serialize(payload)) == payload on valid payloads."""

    @given(st.lists(st.integers(0, 7), max_size=8, unique=True))
    def test_index_list(self, indices):
        assert parse(Shape("index_list", n=8), json.dumps(indices)).indices == tuple(indices)

    @given(st.booleans())
    def test_verdict(self, value):
        assert parse(Shape("verdict"), json.dumps({"keep": value})).value is value

    @given(st.permutations(range(6)))
    def test_ranking(self, order):
        parsed = parse(Shape("ranking", n=6), json.dumps({"order": list(order)}))
        assert parsed.order == tuple(order)
        assert parsed.complete

    @given(st.floats(min_value=0, max_value=100, allow_nan=False))
    def test_score(self, value):
        assert parse(Shape("score"), json.dumps({"score": value})).score == value

    @given(st.lists(st.text(
        alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=6
    ), min_size=1, max_size=5))
    def test_cells(self, values):
        parsed = parse(Shape("cells", n=len(values)), json.dumps(values))
        assert parsed.values == tuple(values)
