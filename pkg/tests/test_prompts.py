import pytest

from stnas.arch import ArchSpec, enumerate_space
from stnas.memory import EMPTY_HISTORY
from stnas.prompts import (
    ParseError,
    Stage,
    extract_json_object,
    format_layers,
    parse_arch_response,
    parse_judgment,
    parse_layer_response,
    render_background,
    render_cot,
    render_tot_evaluate,
    render_tot_generate,
    serialize_arch,
)
from stnas.st_ops import CellKind

# layout of the worked round-1 reply: a prefix, then the pretty-printed object
ROUND_ONE_REPLY = """LLM response: {
  "Combination of modules": {
    "Layer_1": "spatial-temporal-parallel",
    "Layer_2": "temporal-then-spatial",
    "Layer_3": "spatial-then-temporal",
    "Layer_4": "spatial-temporal-parallel",
    "Layer_5": "temporal-then-spatial",
    "Layer_6": "spatial-then-temporal"
  },
  "Explanation": "Mixes parallel and sequential cells."
}"""


def test_background_fragments():
    text = render_background(EMPTY_HISTORY)
    for frag in ("This is a traffic forecasting dataset", "four nodes and six layers",
                 "sorted by MAE", "spatial-temporal-parallely", EMPTY_HISTORY):
        assert frag in text
    assert "{" not in text.replace(EMPTY_HISTORY, "")


def test_background_is_stable_apart_from_samples():
    a = render_background("Round 1: x")
    b = render_background("Round 1: x\nRound 2: y")
    assert a.split("(sorted by MAE):")[0] == b.split("(sorted by MAE):")[0]
    assert render_background("h") == render_background("h")


def test_cot_templates():
    explore = render_cot(Stage.EXPLORE, 1, 15)
    assert "You have 15 rounds to try, and this is the 1 round." in explore
    assert "design a new combination that is not existed in historical samples" in explore
    optimize = render_cot(Stage.OPTIMIZE, 12, 15)
    assert "make MSE, MAE and RMSE lower" in optimize
    assert "this is the 12 round" in optimize
    for text in (explore, optimize):
        assert "Format output in JSON as" in text
        assert '{ "Combination of modules": {"Layer_1": "choice for layer_1"' in text
        assert '"Layer_6": "choice for layer_6"}, "Explanation": "explain your choice"}' in text


def test_tot_templates():
    gen = render_tot_generate([CellKind.STT, CellKind.TTS])
    assert gen.startswith("You have chosen 2 layers, they are: {'Layer_1': "
                          "'spatial-then-temporal', 'Layer_2': 'temporal-then-spatial'}.")
    assert '{"New layer": "Your choice for new layer", "Explanation": "explain your choice"}' in gen
    ev = render_tot_evaluate([CellKind.STT])
    assert "possible or impossible" in ev
    assert '{"Judgment": "possible or impossible", "Explanation": "explain your judgment"}' in ev
    assert render_tot_generate([]).startswith("You have chosen 0 layers, they are: {}.")
    with pytest.raises(ValueError):
        render_tot_generate([CellKind.STP] * 6)
    assert render_tot_evaluate([CellKind.STP] * 6).startswith("You have chosen 6 layers")


def test_format_layers_accepts_codes():
    assert format_layers(["STT"]) == "{'Layer_1': 'spatial-then-temporal'}"


def test_parse_round_one_reply():
    spec = parse_arch_response(ROUND_ONE_REPLY)
    assert spec.codes == ("STP", "TTS", "STT", "STP", "TTS", "STT")


def test_parse_with_surrounding_prose():
    bare = serialize_arch(ArchSpec.from_codes("TTS STT STP TTS STT STP"))
    wrapped = "Sure! Here is my answer {not json} then:\n" + bare + "\nHope this helps {x}"
    assert parse_arch_response(wrapped) == parse_arch_response(bare)


def test_parse_errors_name_the_defect():
    with pytest.raises(ParseError, match="Layer_3"):
        parse_arch_response(serialize_arch(ArchSpec.from_codes("STP " * 6)).replace(
            '"Layer_3": "spatial-temporal-parallel"', '"Layer_3": "temporal-only"'))
    with pytest.raises(ParseError, match="no JSON"):
        parse_arch_response("I think STP everywhere")
    with pytest.raises(ParseError, match="Combination of modules"):
        parse_arch_response('{"Layers": {}}')
    with pytest.raises(ParseError, match="Layer_5"):
        parse_arch_response('{"Combination of modules": {"Layer_1": "STP", "Layer_2": "STP", '
                            '"Layer_3": "STP", "Layer_4": "STP", "Layer_6": "STP"}}')


def test_variant_spelling_accepted():
    text = serialize_arch(ArchSpec.from_codes("STP " * 6)).replace(
        "spatial-temporal-parallel", "spatial-temporal-parallely")
    assert parse_arch_response(text).codes == ("STP",) * 6


def test_round_trip_all_specs():
    for spec in enumerate_space():
        assert parse_arch_response(serialize_arch(spec)) == spec


def test_layer_and_judgment_parsers():
    assert parse_layer_response('{"New layer": "spatial-then-temporal", "Explanation": "x"}') \
        is CellKind.STT
    assert parse_judgment('LLM eval: {"Judgment": "possible", "Explanation": "x"}') is True
    assert parse_judgment('{"Judgment": "Impossible"}') is False
    with pytest.raises(ParseError):
        parse_judgment('{"Judgment": "maybe"}')
    with pytest.raises(ParseError):
        parse_layer_response('{"New layer": "graph-only"}')
    with pytest.raises(ParseError):
        parse_layer_response('{"Judgment": "possible"}')


def test_extract_skips_non_objects():
    assert extract_json_object('[1, 2] then {"a": 1}') == {"a": 1}
    with pytest.raises(ParseError):
        extract_json_object("{{{")
