"""Two-stage schedule and the COT / TOT architecture generators."""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .arch import NUM_LAYERS, ArchSpec, enumerate_space
from .backends import EXPECT_ARCH, EXPECT_JUDGMENT, EXPECT_LAYER, PolicyBackend
from .memory import Bank
from .prompts import (
    DEFAULT_DATASET_DESCRIPTION,
    ParseError,
    Stage,
    parse_arch_response,
    parse_judgment,
    parse_layer_response,
    render_background,
    render_cot,
    render_tot_evaluate,
    render_tot_generate,
)
from .st_ops import ConfigError

log = logging.getLogger(__name__)


class ThoughtMode(enum.Enum):
    COT = "cot"
    TOT = "tot"


@dataclass(frozen=True)
class StagePlan:
    total_rounds: int = 15
    explore_ratio: float = 0.6

    def __post_init__(self):
        if self.total_rounds < 1:
            raise ConfigError("total_rounds must be at least 1")
        if not 0.0 <= self.explore_ratio <= 1.0:
            raise ConfigError("explore_ratio must lie in [0, 1]")

    @property
    def explore_rounds(self) -> int:
        return math.floor(self.explore_ratio * self.total_rounds)


def stage_for_round(t: int, plan: StagePlan) -> Stage:
    if not 1 <= t <= plan.total_rounds:
        raise ValueError(f"round {t} outside 1..{plan.total_rounds}")
    return Stage.EXPLORE if t <= plan.explore_rounds else Stage.OPTIMIZE


@dataclass(frozen=True)
class PolicyConfig:
    parse_retries: int = 3
    novelty_retries: int = 1
    branch_width: int = 3
    call_budget: int = 60
    history_order: str = "worst_first"
    dataset_description: str = DEFAULT_DATASET_DESCRIPTION


@dataclass
class Exchange:
    """One prompt/reply pair plus what is needed to re-render the prompt."""
    kind: str  # cot | tot_generate | tot_evaluate
    prefix: list
    note: str
    system: str
    user: str
    reply: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "prefix": list(self.prefix), "note": self.note,
                "system": self.system, "user": self.user, "reply": self.reply}


@dataclass
class Generation:
    spec: ArchSpec
    transcript: list = field(default_factory=list)
    fallback: bool = False

    @property
    def call_count(self) -> int:
        return len(self.transcript)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def random_spec(seed: int) -> ArchSpec:
    space = enumerate_space()
    return space[int(np.random.default_rng(seed).integers(len(space)))]


def retry_note(defect: str) -> str:
    return (f"Your previous response could not be used ({defect}). "
            "Reply again, strictly in the JSON format above.")


def novelty_note(spec: ArchSpec) -> str:
    return (f"The combination {spec.to_json()} is already among the historical samples. "
            "Choose a combination that is not in the historical samples.")


def user_message(instruction: str, note: str) -> str:
    return instruction if not note else f"{instruction}\n\n{note}"


def _render(kind: str, stage: Stage, t: int, T: int, prefix) -> str:
    if kind == "cot":
        return render_cot(stage, t, T)
    if kind == "tot_generate":
        return render_tot_generate(prefix)
    return render_tot_evaluate(prefix)


def render_exchange(kind: str, stage: Stage, t: int, T: int, prefix, note: str,
                    bank: Bank, pcfg: PolicyConfig) -> tuple:
    """(system, user) text for one exchange; used for generation and replay."""
    system = render_background(bank.render_history(pcfg.history_order), pcfg.dataset_description)
    return system, user_message(_render(kind, stage, t, T, prefix), note)


class _Session:
    def __init__(self, backend, stage, bank, t, T, pcfg, budget=None):
        self.backend = backend
        self.stage, self.bank, self.t, self.T, self.pcfg = stage, bank, t, T, pcfg
        self.budget = budget
        self.transcript: list[Exchange] = []

    def exhausted(self) -> bool:
        return self.budget is not None and len(self.transcript) >= self.budget

    def ask(self, kind: str, prefix, note: str, expect: str) -> str:
        system, user = render_exchange(kind, self.stage, self.t, self.T, prefix, note,
                                       self.bank, self.pcfg)
        reply = self.backend.chat(system, user, expect=expect)
        self.transcript.append(Exchange(kind, [k.name for k in prefix], note, system, user, reply))
        return reply


def _whole_architecture(sess: _Session, fallback_seed: int) -> Generation:
    pcfg = sess.pcfg
    note = ""
    spec = None
    for _ in range(pcfg.parse_retries + 1):
        reply = sess.ask("cot", [], note, EXPECT_ARCH)
        try:
            spec = parse_arch_response(reply)
            break
        except ParseError as exc:
            log.info("round %d: unusable reply (%s)", sess.t, exc)
            note = retry_note(str(exc))
    if spec is None:
        spec = random_spec(fallback_seed)
        log.warning("round %d: no parsable architecture, falling back to %s", sess.t, spec)
        return Generation(spec, sess.transcript, fallback=True)

    novelty_left = pcfg.novelty_retries
    while sess.stage is Stage.EXPLORE and novelty_left > 0 and sess.bank.contains(spec):
        novelty_left -= 1
        reply = sess.ask("cot", [], novelty_note(spec), EXPECT_ARCH)
        try:
            spec = parse_arch_response(reply)
        except ParseError as exc:
            log.info("round %d: novelty reply unusable (%s), keeping %s", sess.t, exc, spec)
    return Generation(spec, sess.transcript)


def generate_cot(backend: PolicyBackend, stage: Stage, bank: Bank, t: int, T: int,
                 pcfg: PolicyConfig = PolicyConfig(), seed: int = 0) -> Generation:
    """One whole architecture per exchange, with bounded re-prompts."""
    sess = _Session(backend, stage, bank, t, T, pcfg)
    return _whole_architecture(sess, derive_seed(seed, t, "fallback"))


class _BudgetSpent(Exception):
    pass


def generate_tot(backend: PolicyBackend, stage: Stage, bank: Bank, t: int, T: int,
                 pcfg: PolicyConfig = PolicyConfig(), seed: int = 0) -> Generation:
    """Layer-by-layer depth-first construction with self-evaluation.

    Explore rounds run the generate/evaluate search. Optimize rounds share
    the whole-architecture instruction with the COT mode.
    """
    fallback_seed = derive_seed(seed, t, "fallback")
    if stage is Stage.OPTIMIZE:
        sess = _Session(backend, stage, bank, t, T, pcfg)
        return _whole_architecture(sess, fallback_seed)

    sess = _Session(backend, stage, bank, t, T, pcfg, budget=pcfg.call_budget)
    rejected = set()

    def ask(kind, prefix, expect):
        if sess.exhausted():
            raise _BudgetSpent
        return sess.ask(kind, prefix, "", expect)

    def dfs(prefix):
        if len(prefix) == NUM_LAYERS:
            return prefix
        for _ in range(pcfg.branch_width):
            try:
                layer = parse_layer_response(ask("tot_generate", prefix, EXPECT_LAYER))
            except ParseError as exc:
                log.info("round %d: unusable layer reply (%s)", t, exc)
                continue
            key = (tuple(prefix), layer)
            if key in rejected:
                continue
            try:
                ok = parse_judgment(ask("tot_evaluate", prefix + [layer], EXPECT_JUDGMENT))
            except ParseError as exc:
                log.info("round %d: unusable judgment (%s), treated as rejection", t, exc)
                ok = False
            if not ok:
                rejected.add(key)
                continue
            found = dfs(prefix + [layer])
            if found is not None:
                return found
        return None

    try:
        while True:
            found = dfs([])
            if found is not None:
                return Generation(ArchSpec(tuple(found)), sess.transcript)
            if sess.exhausted():
                raise _BudgetSpent
    except _BudgetSpent:
        # keep the fallback consistent with every judgment seen so far
        allowed = [sp for sp in enumerate_space()
                   if not any((sp.layers[:i], sp.layers[i]) in rejected for i in range(NUM_LAYERS))]
        rng = np.random.default_rng(fallback_seed)
        spec = allowed[int(rng.integers(len(allowed)))] if allowed else random_spec(fallback_seed)
        log.warning("round %d: exchange budget of %d spent, falling back to %s",
                    t, pcfg.call_budget, spec)
        return Generation(spec, sess.transcript, fallback=True)
