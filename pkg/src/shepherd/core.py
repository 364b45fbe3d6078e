"""Core domain types: token sequences, queries, decoding params, pricing, judges.

Everything in this module is an immutable value type and safe to share
across threads. Token counting is delegated to registered tokenizers; the
built-in tokenizer splits text into whitespace-attached word/punctuation
pieces so that detokenization round-trips exactly.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Protocol

DEFAULT_N_MAX = 4096

_PIECE_RE = re.compile(r"\s*(?:\w+|[^\w\s])|\s+\Z")


class ShepherdError(Exception):
    """Base class for errors raised by this package."""


class BoundsError(ShepherdError):
    """Prefix length outside [0, len(sequence)]."""


class UnknownTokenizerError(ShepherdError):
    """Tokenizer id not present in the registry."""


class SchemaError(ShepherdError):
    """A versioned file does not carry the expected schema tag."""


def _piece_id(piece: str) -> int:
    digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class TokenSequence:
    """An ordered sequence of token pieces with exact text reconstruction.

    ``pieces`` are the surface strings (whitespace attached), so
    ``text == "".join(pieces)`` and slicing the first n pieces yields the
    text of the n-token prefix.
    """

    pieces: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def tokens(self) -> tuple[int, ...]:
        return tuple(_piece_id(p) for p in self.pieces)

    @property
    def text(self) -> str:
        return "".join(self.pieces)

    def __bool__(self) -> bool:
        return bool(self.pieces)


def prefix(x: TokenSequence, n: int) -> TokenSequence:
    """First n tokens of x. n must satisfy 0 <= n <= len(x)."""
    if n < 0 or n > len(x):
        raise BoundsError(f"prefix length {n} outside [0, {len(x)}]")
    return TokenSequence(x.pieces[:n])


def concat(x: TokenSequence, y: TokenSequence) -> TokenSequence:
    return TokenSequence(x.pieces + y.pieces)


class WhitespacePieceTokenizer:
    """Deterministic tokenizer: word or punctuation pieces with attached whitespace.

    "ab ab ab" tokenizes to three pieces ("ab", " ab", " ab"); any trailing
    whitespace becomes one final piece, which makes
    detokenize(tokenize(text)) == text for every input.
    """

    name = "builtin"

    def tokenize(self, text: str) -> TokenSequence:
        return TokenSequence(tuple(_PIECE_RE.findall(text)))

    def detokenize(self, sequence: TokenSequence) -> str:
        return sequence.text

    def count(self, text: str) -> int:
        return len(_PIECE_RE.findall(text))


_TOKENIZERS: dict[str, WhitespacePieceTokenizer] = {"builtin": WhitespacePieceTokenizer()}


def register_tokenizer(name: str, tokenizer) -> None:
    _TOKENIZERS[name] = tokenizer


def get_tokenizer(name: str = "builtin"):
    try:
        return _TOKENIZERS[name]
    except KeyError:
        raise UnknownTokenizerError(f"no tokenizer registered under {name!r}") from None


def token_count(text: str, tokenizer: str = "builtin") -> int:
    return get_tokenizer(tokenizer).count(text)


def tokenize(text: str, tokenizer: str = "builtin") -> TokenSequence:
    return get_tokenizer(tokenizer).tokenize(text)


class TaskKind(str, Enum):
    MATH_NUMERIC = "math_numeric"
    CODE = "code"
    FREEFORM = "freeform"


@dataclass(frozen=True)
class Query:
    id: str
    prompt: TokenSequence
    task_kind: TaskKind = TaskKind.MATH_NUMERIC
    ground_truth: str | None = None

    def __post_init__(self):
        if len(self.prompt) == 0:
            raise ValueError(f"query {self.id!r} has an empty prompt")

    @classmethod
    def from_text(
        cls,
        id: str,
        text: str,
        task_kind: TaskKind = TaskKind.MATH_NUMERIC,
        ground_truth: str | None = None,
        tokenizer: str = "builtin",
    ) -> "Query":
        return cls(id=id, prompt=tokenize(text, tokenizer), task_kind=task_kind, ground_truth=ground_truth)

    @property
    def text(self) -> str:
        return self.prompt.text


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_new_tokens: int = DEFAULT_N_MAX
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be non-negative")


class Role(str, Enum):
    SLM = "slm"
    LLM = "llm"


@dataclass(frozen=True)
class TokenPrices:
    """Dollars per token for one model role."""

    input: Decimal = Decimal(0)
    output: Decimal = Decimal(0)


def per_million(rate: float | str | Decimal) -> Decimal:
    """Dollars-per-token from a dollars-per-million-tokens rate, exactly."""
    return Decimal(str(rate)) / Decimal(1_000_000)


def money(value: float | str | Decimal) -> Decimal:
    return value if isinstance(value, Decimal) else Decimal(str(value))


def money_str(value: Decimal) -> str:
    """Plain decimal rendering (no exponent notation) for ledgers and CSV."""
    return format(value, "f")


@dataclass(frozen=True)
class CostModel:
    llm_in: Decimal = Decimal(0)
    llm_out: Decimal = Decimal(0)
    slm_in: Decimal = Decimal(0)
    slm_out: Decimal = Decimal(0)

    def __post_init__(self):
        for name in ("llm_in", "llm_out", "slm_in", "slm_out"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_per_million(cls, llm_in, llm_out, slm_in=0, slm_out=0) -> "CostModel":
        return cls(per_million(llm_in), per_million(llm_out), per_million(slm_in), per_million(slm_out))

    def prices_for(self, role: Role) -> TokenPrices:
        if role == Role.LLM:
            return TokenPrices(self.llm_in, self.llm_out)
        return TokenPrices(self.slm_in, self.slm_out)

    @property
    def slm_is_free(self) -> bool:
        return self.slm_in == 0 and self.slm_out == 0


# Reference pricing used throughout the docs and reports: $0.59 / $0.79 per
# million LLM input/output tokens, locally hosted SLM at zero cost.
DEFAULT_COST_MODEL = CostModel.from_per_million("0.59", "0.79")


_NUMBER_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?")
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def normalize_number(raw: str) -> str:
    """Strip thousands separators and trailing fractional zeros."""
    s = raw.replace(",", "")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("", "-", "-0"):
        s = "0"
    return s


def extract_answer(text: str, task_kind: TaskKind) -> str:
    """Canonical answer from a raw model response.

    math_numeric: the last number in the text, normalized. code: the body of
    the last fenced code block (whole trimmed text when no fence is present).
    freeform: the trimmed text. Never raises; no parse yields "".
    """
    if task_kind == TaskKind.MATH_NUMERIC:
        found = _NUMBER_RE.findall(text)
        return normalize_number(found[-1]) if found else ""
    if task_kind == TaskKind.CODE:
        blocks = _FENCE_RE.findall(text)
        return blocks[-1].strip() if blocks else text.strip()
    return text.strip()


class QualityJudge(Protocol):
    """Scores a response for a query in [0, 1]; deterministic for fixed inputs."""

    threshold: float

    def judge(self, query: Query, response_text: str) -> float: ...


@dataclass(frozen=True)
class ExactMatchJudge:
    """Binary judge: 1.0 iff the extracted answer equals the ground truth.

    With binary scores any threshold in (0, 1] is equivalent, so it defaults
    to 1.0.
    """

    threshold: float = 1.0

    def judge(self, query: Query, response_text: str) -> float:
        if query.ground_truth is None:
            raise ValueError(f"query {query.id!r} has no ground truth to judge against")
        expected = self._canonical(query.ground_truth, query.task_kind)
        got = extract_answer(response_text, query.task_kind)
        return 1.0 if got == expected else 0.0

    def is_satisfactory(self, query: Query, response_text: str) -> bool:
        return self.judge(query, response_text) >= self.threshold

    @staticmethod
    def _canonical(ground_truth: str, task_kind: TaskKind) -> str:
        if task_kind == TaskKind.MATH_NUMERIC:
            found = _NUMBER_RE.findall(ground_truth)
            return normalize_number(found[-1]) if found else ground_truth.strip()
        return ground_truth.strip()


def slm_succeeds_alone(judge, query: Query, slm_response_text: str) -> bool:
    """Whether the unassisted SLM response is satisfactory for the query."""
    return judge.judge(query, slm_response_text) >= judge.threshold


def render_prompt(query_text: str, hint_text: str | None = None, instruction: str | None = None) -> str:
    """Completion prompt: "Question: {q}" with an optional "Hint:" line.

    The hint line is omitted entirely when no hint is present, so the
    no-hint prompt is identical up to that line.
    """
    lines = []
    if instruction:
        lines.append(f"Instruction: {instruction}")
    lines.append(f"Question: {query_text}")
    if hint_text is not None and hint_text != "":
        lines.append(f"Hint: {hint_text}")
    return "\n".join(lines)
