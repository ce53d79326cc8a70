"""Prompt templates, their rendering, and parsers for model replies.

Templates are ``str.format`` strings; the doubled braces in the JSON
format instructions render as single braces.
"""

from __future__ import annotations

import enum
import json

from .arch import LAYER_KEYS, NUM_LAYERS, ArchSpec, SpecError, kind_from_name
from .st_ops import CellKind


class Stage(enum.Enum):
    EXPLORE = "explore"
    OPTIMIZE = "optimize"


class ParseError(ValueError):
    """A reply does not follow the requested response format."""


BACKGROUND_TEMPLATE = "\n".join([
    "Please select appropriate modules for the following deep learning task.",
    "Background description:",
    "The dataset: {dataset}",
    "The options: The deep learning task should properly capture spatial and temporal "
    "information with a certain combination of several layers, and each layer can choose one "
    "of the three kinds of modules, namely spatial-then-temporal, temporal-then-spatial and "
    "spatial-temporal-parallely.",
    "The architecture: The whole deep learning architecture is a directed acyclic graph with "
    "four nodes and six layers, and the preceding nodes are connected to each subsequent nodes "
    "with a layer. e.g. Node 1 connect Nodes 2 with Layer 1, Node 1 connect Nodes 3 with "
    "Layer 2, ...",
    "The metrics: Three metrics to evaluate the results predicted by the model, including MAE "
    "(Mean Absolute Error), MAPE (Mean Absolute Percentage Error), and RMSE (Root Mean Square "
    "Error)",
    "Here are some historical samples obtained in previous rounds to guide you to select more "
    "suitable combination of modules (sorted by MAE): {samples}",
])

DEFAULT_DATASET_DESCRIPTION = (
    "This is a traffic forecasting dataset, consisting of hundreds of sensors monitoring the "
    "traffic indices around the city. The goal is to predict future traffic indices according "
    "to history indices for each sensor."
)

_ARCH_FORMAT = (
    'Provide no additional text in response, Format output in JSON as {{ "Combination of '
    'modules": {{"Layer_1": "choice for layer_1", "Layer_2": "choice for layer_2", "Layer_3": '
    '"choice for layer_3", "Layer_4": "choice for layer_4", "Layer_5": "choice for layer_5", '
    '"Layer_6": "choice for layer_6"}}, "Explanation": "explain your choice"}}'
)

COT_EXPLORE_TEMPLATE = "\n".join([
    "Your task:",
    "First, analyze the background description of this task.",
    "Then, observe the samples from previous rounds, consider the applicability of different "
    "modules in this task.",
    "Next, considering these factors comprehensively, for the six layers, try to design a new "
    "combination that is not existed in historical samples to potentially achieve better "
    "performance and explain your choice. You have {total_epoch} rounds to try, and this is "
    "the {current_epoch} round.",
    _ARCH_FORMAT,
])

COT_OPTIMIZE_TEMPLATE = "\n".join([
    "Your task:",
    "First, analyze the background description of this task.",
    "Then, observe the samples from previous rounds, consider the applicability of different "
    "modules in this task.",
    "Next, considering these factors comprehensively, for the six layers, try to find the best "
    "combination according to previous tried samples to make MSE, MAE and RMSE lower and "
    "explain your choice. You have {total_epoch} rounds to try, and this is the "
    "{current_epoch} round.",
    _ARCH_FORMAT,
])

TOT_GENERATE_TEMPLATE = "\n".join([
    "You have chosen {current_layer_num} layers, they are: {current_layers}.",
    "Your task:",
    "First, analyze the background description of this task.",
    "Then, observe the historical samples and the layers you have chosen.",
    "Next, considering these factors comprehensively, try to choose the next one layer based "
    "on your current chosen layers, that should not be too similar to the history samples to "
    "potentially achieve better performance, and explain the reason.",
    'Provide no additional text in response, Format output in JSON as {{"New layer": "Your '
    'choice for new layer", "Explanation": "explain your choice"}}',
])

TOT_EVALUATE_TEMPLATE = "\n".join([
    "You have chosen {current_layer_num} layers, they are: {current_layers}.",
    "Your task:",
    "First, analyze the background description of this task.",
    "Then, observe the historical samples and the layers you have chosen.",
    "Next, judge if it is possible that the layers you have chosen will lead into a better "
    "result and explain the reason.",
    'Provide no additional text in response, Format output in JSON as {{"Judgment": "possible '
    'or impossible", "Explanation": "explain your judgment"}}',
])


def render_background(history: str, dataset: str = DEFAULT_DATASET_DESCRIPTION) -> str:
    return BACKGROUND_TEMPLATE.format(dataset=dataset, samples=history)


def render_cot(stage: Stage, t: int, T: int) -> str:
    """Whole-architecture instruction for 1-based round ``t`` of ``T``."""
    template = COT_EXPLORE_TEMPLATE if stage is Stage.EXPLORE else COT_OPTIMIZE_TEMPLATE
    return template.format(total_epoch=T, current_epoch=t)


def format_layers(prefix) -> str:
    """Chosen layers as a dict literal, e.g. ``{'Layer_1': 'spatial-then-temporal'}``."""
    kinds = [kind_from_name(k) for k in prefix]
    return repr({key: kind.value for key, kind in zip(LAYER_KEYS, kinds)})


def _check_prefix(prefix, limit: int):
    if len(prefix) > limit:
        raise ValueError(f"prefix of {len(prefix)} layers, at most {limit} allowed here")


def render_tot_generate(prefix) -> str:
    if len(prefix) >= NUM_LAYERS:
        raise ValueError("all six layers are already chosen")
    return TOT_GENERATE_TEMPLATE.format(current_layer_num=len(prefix),
                                        current_layers=format_layers(prefix))


def render_tot_evaluate(prefix) -> str:
    _check_prefix(prefix, NUM_LAYERS)
    return TOT_EVALUATE_TEMPLATE.format(current_layer_num=len(prefix),
                                        current_layers=format_layers(prefix))


# --------------------------------------------------------------------------
# parsing


def extract_json_object(text: str) -> dict:
    """Return the first balanced ``{...}`` in ``text`` that decodes as JSON."""
    if not isinstance(text, str):
        raise ParseError("reply is not text")
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise ParseError("no JSON object found in the reply")


def parse_arch_response(text: str) -> ArchSpec:
    obj = extract_json_object(text)
    combo = obj.get("Combination of modules")
    if combo is None:
        raise ParseError('missing key "Combination of modules"')
    if not isinstance(combo, dict):
        raise ParseError('"Combination of modules" must be a JSON object')
    layers = []
    for key in LAYER_KEYS:
        if key not in combo:
            raise ParseError(f"missing {key}")
        try:
            layers.append(kind_from_name(combo[key]))
        except SpecError:
            raise ParseError(f"{key}: unknown module name {combo[key]!r}") from None
    return ArchSpec(tuple(layers))


def parse_layer_response(text: str) -> CellKind:
    obj = extract_json_object(text)
    if "New layer" not in obj:
        raise ParseError('missing key "New layer"')
    try:
        return kind_from_name(obj["New layer"])
    except SpecError:
        raise ParseError(f"New layer: unknown module name {obj['New layer']!r}") from None


def parse_judgment(text: str) -> bool:
    obj = extract_json_object(text)
    if "Judgment" not in obj:
        raise ParseError('missing key "Judgment"')
    value = obj["Judgment"]
    if isinstance(value, str) and value.strip().lower() in ("possible", "impossible"):
        return value.strip().lower() == "possible"
    raise ParseError(f"Judgment must be possible or impossible, got {value!r}")


def serialize_arch(spec: ArchSpec, explanation: str = "") -> str:
    return json.dumps({"Combination of modules": spec.to_dict(), "Explanation": explanation})
