"""Loop decomposition and the pluggable free-energy observable.

A valid structure decomposes uniquely into loops: each base pair closes
exactly one loop, each unpaired position belongs to exactly one loop, and
one exterior loop collects the top-level region. Three scoring modes share
that decomposition:

* ``nussinov``: -1.0 kcal/mol per base pair (exact optimum independently
  checkable by dynamic programming, so the default for verification).
* ``loop-table``: additive loop terms from a parameter file; the shipped
  example table uses deterministic demonstration values, not measured
  thermodynamics.
* ``external``: delegate whole-structure evaluation to a command-line tool.

The observable of a structure with zero pairs is +inf in every mode: the
unfolded state has no defined free energy and folding must begin somewhere.
"""

from __future__ import annotations

import configparser
import math
import shlex
import subprocess
import threading
from contextlib import nullcontext
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import ClassVar, Mapping

from .structure import BasePair, PrimarySequence, SecondaryStructure, is_admissible_pair

__all__ = [
    "LoopClass",
    "Loop",
    "LoopTableParams",
    "EnergyModel",
    "NussinovModel",
    "LoopTableModel",
    "ExternalModel",
    "ExternalEvaluator",
    "ExternalEvaluationError",
    "ParameterError",
    "decompose_loops",
    "loop_energy_term",
    "energy",
    "observable",
    "parse_parameters",
    "load_parameters",
    "example_parameters",
]

#: Ordered pair types admissible under Watson-Crick + wobble pairing.
PAIR_TYPES = ("AU", "UA", "CG", "GC", "GU", "UG")

# Jacobson-Stockmayer long-loop extrapolation: 1.75 * RT at 37 C (kcal/mol).
_EXTRAPOLATION_COEFF = 1.75 * 0.616


class ParameterError(ValueError):
    """A loop-parameter file is missing data or malformed."""


class LoopClass(Enum):
    HAIRPIN = "hairpin"
    STACK = "stack"
    BULGE = "bulge"
    INTERNAL = "internal"
    MULTI = "multibranch"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class Loop:
    """One loop of a decomposition.

    Attributes:
        kind: Loop class.
        closing: The pair closing this loop; None for the exterior loop.
        branches: Directly enclosed pairs (left to right).
        unpaired: Count of unpaired positions belonging to this loop.
    """

    kind: LoopClass
    closing: BasePair | None
    branches: tuple[BasePair, ...]
    unpaired: int


def decompose_loops(s: SecondaryStructure) -> tuple[Loop, ...]:
    """Partition a valid structure into its loops.

    Each pair (i,j) closes the loop classified by its direct interior:
    no branches -> hairpin; one flush branch -> stack; one branch with a gap
    on one side -> bulge; gaps on both sides -> internal; two or more
    branches -> multibranch. Closed loops come first (by closing pair), the
    exterior loop last.
    """
    children: dict[BasePair, list[BasePair]] = {}
    top_level: list[BasePair] = []
    stack: list[BasePair] = []
    for pair in s.sorted_pairs:
        while stack and stack[-1].j < pair.i:
            stack.pop()
        if stack:
            children.setdefault(stack[-1], []).append(pair)
        else:
            top_level.append(pair)
        stack.append(pair)

    loops: list[Loop] = []
    for pair in s.sorted_pairs:
        kids = tuple(children.get(pair, ()))
        span_inside = pair.j - pair.i - 1
        unpaired = span_inside - sum(k.j - k.i + 1 for k in kids)
        if not kids:
            kind = LoopClass.HAIRPIN
        elif len(kids) == 1:
            gap_l = kids[0].i - pair.i - 1
            gap_r = pair.j - kids[0].j - 1
            if gap_l == 0 and gap_r == 0:
                kind = LoopClass.STACK
            elif gap_l == 0 or gap_r == 0:
                kind = LoopClass.BULGE
            else:
                kind = LoopClass.INTERNAL
        else:
            kind = LoopClass.MULTI
        loops.append(Loop(kind, pair, kids, unpaired))

    exterior_unpaired = s.n - sum(p.j - p.i + 1 for p in top_level)
    loops.append(Loop(LoopClass.EXTERIOR, None, tuple(top_level), exterior_unpaired))
    return tuple(loops)


@dataclass(frozen=True)
class LoopTableParams:
    """Additive loop-energy parameters (kcal/mol).

    ``stack`` is keyed by (outer pair type, inner pair type); the length
    tables are contiguous dicts starting at the structural minimum (hairpin
    and bulge at 1, internal at 2). Lengths past a table's end extrapolate
    logarithmically.
    """

    stack: Mapping[tuple[str, str], float]
    hairpin: Mapping[int, float]
    bulge: Mapping[int, float]
    internal: Mapping[int, float]
    multibranch_offset: float
    multibranch_per_branch: float
    multibranch_per_unpaired: float


def _length_term(table: Mapping[int, float], length: int, label: str) -> float:
    if length in table:
        return table[length]
    longest = max(table)
    if length < min(table):
        raise ParameterError(f"{label} table has no entry for length {length}")
    return table[longest] + _EXTRAPOLATION_COEFF * math.log(length / longest)


def _pair_type(seq: PrimarySequence, pair: BasePair) -> str:
    return seq[pair.i] + seq[pair.j]


def loop_energy_term(loop: Loop, seq: PrimarySequence, params: LoopTableParams) -> float:
    """The loop-table contribution of a single loop."""
    if loop.kind is LoopClass.EXTERIOR:
        return 0.0
    if loop.kind is LoopClass.HAIRPIN:
        return _length_term(params.hairpin, loop.unpaired, "hairpin")
    if loop.kind is LoopClass.STACK:
        assert loop.closing is not None
        key = (_pair_type(seq, loop.closing), _pair_type(seq, loop.branches[0]))
        return params.stack[key]
    if loop.kind is LoopClass.BULGE:
        return _length_term(params.bulge, loop.unpaired, "bulge")
    if loop.kind is LoopClass.INTERNAL:
        return _length_term(params.internal, loop.unpaired, "internal")
    return (
        params.multibranch_offset
        + params.multibranch_per_branch * len(loop.branches)
        + params.multibranch_per_unpaired * loop.unpaired
    )


class EnergyModel:
    """Interface: ``energy(structure) -> kcal/mol``."""

    mode: ClassVar[str] = "abstract"

    def energy(self, s: SecondaryStructure) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class NussinovModel(EnergyModel):
    """-1.0 kcal/mol per base pair; the oracle-friendly default."""

    mode: ClassVar[str] = "nussinov"

    def energy(self, s: SecondaryStructure) -> float:
        return float(-len(s.pairs))


@dataclass(frozen=True)
class LoopTableModel(EnergyModel):
    """Sum of per-loop terms from a parameter table."""

    params: LoopTableParams
    mode: ClassVar[str] = "loop-table"

    def energy(self, s: SecondaryStructure) -> float:
        return sum(loop_energy_term(loop, s.sequence, self.params) for loop in decompose_loops(s))


class ExternalEvaluationError(RuntimeError):
    """An external evaluator failed; ``reason`` tags the failure kind."""

    def __init__(self, reason: str, detail: str):
        super().__init__(f"external evaluator {reason}: {detail}")
        self.reason = reason
        self.detail = detail


@dataclass
class ExternalEvaluator:
    """Adapter around a command that scores (sequence, structure) pairs.

    Protocol: the command receives two lines on stdin (the base string, then
    the dot-bracket string) and must print one decimal kcal/mol value.
    Results are cached per structure key for the lifetime of the adapter.
    Calls are serialized unless ``concurrent_safe`` is set.
    """

    command: str
    timeout: float = 10.0
    concurrent_safe: bool = False
    _cache: dict[tuple[str, str], float] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False, compare=False
    )

    def evaluate(self, seq: PrimarySequence, s: SecondaryStructure) -> float:
        key = (seq.bases, s.key)
        if key in self._cache:
            return self._cache[key]
        guard = nullcontext() if self.concurrent_safe else self._lock
        with guard:
            value = self._invoke(seq.bases, s.key)
        self._cache[key] = value
        return value

    def _invoke(self, bases: str, db: str) -> float:
        argv = shlex.split(self.command)
        try:
            proc = subprocess.run(
                argv,
                input=f"{bases}\n{db}\n",
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except FileNotFoundError:
            raise ExternalEvaluationError("command-not-found", argv[0] if argv else "<empty>")
        except subprocess.TimeoutExpired:
            raise ExternalEvaluationError("timeout", f"no result within {self.timeout}s")
        if proc.returncode != 0:
            raise ExternalEvaluationError(
                "nonzero-exit",
                f"exit {proc.returncode}; stderr: {proc.stderr.strip()!r}",
            )
        text = proc.stdout.strip()
        try:
            return float(text)
        except ValueError:
            raise ExternalEvaluationError("unparsable-output", f"stdout: {text!r}")


@dataclass
class ExternalModel(EnergyModel):
    """Delegates scoring to an :class:`ExternalEvaluator`."""

    evaluator: ExternalEvaluator
    mode: ClassVar[str] = "external"

    def energy(self, s: SecondaryStructure) -> float:
        return self.evaluator.evaluate(s.sequence, s)


def external_evaluate(
    adapter: ExternalEvaluator, seq: PrimarySequence, s: SecondaryStructure
) -> float:
    """Score a structure through an external adapter (cached per key)."""
    return adapter.evaluate(seq, s)


def energy(s: SecondaryStructure, model: EnergyModel) -> float:
    """Free energy of ``s`` in kcal/mol under ``model``."""
    return model.energy(s)


def observable(s: SecondaryStructure, model: EnergyModel) -> float:
    """The controller's observable: +inf for zero pairs, else the energy."""
    if not s.pairs:
        return math.inf
    return model.energy(s)


# ---------------------------------------------------------------------------
# Parameter files
# ---------------------------------------------------------------------------

_SECTIONS = ("stack", "hairpin", "bulge", "internal", "multibranch")
_LENGTH_MINIMA = {"hairpin": 1, "bulge": 1, "internal": 2}
_MULTIBRANCH_KEYS = ("offset", "per_branch", "per_unpaired")


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParameterError(f"[{section}] {key}: malformed number {raw!r}")


def _parse_length_table(parser: configparser.ConfigParser, section: str) -> dict[int, float]:
    table: dict[int, float] = {}
    for key, raw in parser.items(section):
        try:
            length = int(key)
        except ValueError:
            raise ParameterError(f"[{section}] keys must be integer lengths, got {key!r}")
        table[length] = _parse_float(section, key, raw)
    if not table:
        raise ParameterError(f"[{section}] section is empty")
    start = _LENGTH_MINIMA[section]
    lengths = sorted(table)
    if lengths != list(range(start, start + len(lengths))):
        raise ParameterError(
            f"[{section}] lengths must be contiguous starting at {start}, got {lengths}"
        )
    return table


def parse_parameters(text: str) -> LoopTableParams:
    """Parse loop-table parameters from INI-style text.

    Required sections: [stack] with all 36 ordered pair-type combinations
    ("GC/CG = -3.0"), [hairpin], [bulge] and [internal] as contiguous
    length tables, and [multibranch] with offset, per_branch, per_unpaired.

    Raises:
        ParameterError: missing section or entry, malformed number,
            non-contiguous lengths, or an inadmissible pair type.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment]
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"unreadable parameter file: {exc}")

    for section in _SECTIONS:
        if not parser.has_section(section):
            raise ParameterError(f"missing section [{section}]")
    extra = set(parser.sections()) - set(_SECTIONS)
    if extra:
        raise ParameterError(f"unknown section(s) {sorted(extra)}")

    stack: dict[tuple[str, str], float] = {}
    for key, raw in parser.items("stack"):
        parts = key.split("/")
        if len(parts) != 2 or not all(len(p) == 2 for p in parts):
            raise ParameterError(f"[stack] key must look like 'GC/CG', got {key!r}")
        outer, inner = parts
        for ptype in (outer, inner):
            if ptype not in PAIR_TYPES or not is_admissible_pair(ptype[0], ptype[1]):
                raise ParameterError(f"[stack] {key}: {ptype!r} is not an admissible pair type")
        stack[(outer, inner)] = _parse_float("stack", key, raw)
    missing = [f"{o}/{i}" for o in PAIR_TYPES for i in PAIR_TYPES if (o, i) not in stack]
    if missing:
        raise ParameterError(f"[stack] missing {len(missing)} entries, e.g. {missing[0]!r}")

    hairpin = _parse_length_table(parser, "hairpin")
    bulge = _parse_length_table(parser, "bulge")
    internal = _parse_length_table(parser, "internal")

    multi = dict(parser.items("multibranch"))
    for key in _MULTIBRANCH_KEYS:
        if key not in multi:
            raise ParameterError(f"[multibranch] missing key {key!r}")
    unknown = set(multi) - set(_MULTIBRANCH_KEYS)
    if unknown:
        raise ParameterError(f"[multibranch] unknown key(s) {sorted(unknown)}")

    return LoopTableParams(
        stack=stack,
        hairpin=hairpin,
        bulge=bulge,
        internal=internal,
        multibranch_offset=_parse_float("multibranch", "offset", multi["offset"]),
        multibranch_per_branch=_parse_float("multibranch", "per_branch", multi["per_branch"]),
        multibranch_per_unpaired=_parse_float(
            "multibranch", "per_unpaired", multi["per_unpaired"]
        ),
    )


def load_parameters(path: str | Path) -> LoopTableParams:
    """Load and range-check a loop-table parameter file."""
    return parse_parameters(Path(path).read_text())


def example_parameters() -> LoopTableParams:
    """The packaged demonstration table (deterministic, non-thermodynamic)."""
    text = resources.files("grafold").joinpath("data/example_loop_params.ini").read_text()
    return parse_parameters(text)
