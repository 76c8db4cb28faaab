"""Greedy folding driven by a two-level machine: structures below, constraints above.

The lower level is the folding space: structures connected by rule
applications (plus their inverses when backtracking is enabled). The upper
level is a small constraint machine whose states gate how the structure may
evolve. While the current machine state's constraint is satisfiable the run
is *steady* and takes the move the constraint selects; when it is not, an
*adaptation* phase searches the folding space breadth-first for the nearest
structure at which some successor machine state's constraint holds again,
then resumes there.

The built-in greedy constraint ("phi0") requires a successor of minimal
observable not exceeding the current one; with it alone and no backtracking
a run descends monotonically and stops in a local minimum. Every run emits a
trace; the best structure seen anywhere along it is reported in the summary.

Plateau guard: because "phi0" accepts equal-observable moves, a single run
never revisits a structure during steady stepping (a run-scoped visited set
filters candidate successors). Forward-only runs cannot revisit anyway; the
guard matters once inverse moves are enabled.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

from .energy import EnergyModel, NussinovModel, observable
from .grammar import Grammar, Match, _apply_unchecked, enumerate_inverse_matches, enumerate_matches
from .structure import PrimarySequence, SecondaryStructure

__all__ = [
    "Constraint",
    "MachineState",
    "AdaptiveMachine",
    "MachineConfigError",
    "UnknownStrategyError",
    "RunLimits",
    "RunState",
    "TraceRecord",
    "TraceSummary",
    "Trace",
    "StrategyContext",
    "StrategyDecision",
    "register_strategy",
    "phi0_select",
    "check_constraint",
    "Controller",
    "run",
]

GREEDY = "phi0"
UNCONSTRAINED = "true"
STRATEGY = "strategy"


class MachineConfigError(ValueError):
    """A constraint-machine configuration is invalid."""


class UnknownStrategyError(ValueError):
    """A constraint references a strategy that was never registered."""


@dataclass(frozen=True)
class Constraint:
    """A machine-state or transition constraint.

    ``kind`` is "phi0" (greedy descent), "true" (no restriction) or
    "strategy" (a registered pluggable strategy with parameters).
    """

    kind: str
    strategy: str | None = None
    params: tuple[tuple[str, object], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (GREEDY, UNCONSTRAINED, STRATEGY):
            raise MachineConfigError(f"unknown constraint kind {self.kind!r}")
        if (self.kind == STRATEGY) != (self.strategy is not None):
            raise MachineConfigError("strategy constraints need a strategy name, others none")

    @classmethod
    def phi0(cls) -> "Constraint":
        return cls(GREEDY)

    @classmethod
    def true(cls) -> "Constraint":
        return cls(UNCONSTRAINED)

    @classmethod
    def of_strategy(cls, name: str, **params: object) -> "Constraint":
        return cls(STRATEGY, name, tuple(sorted(params.items())))

    @property
    def params_dict(self) -> dict[str, object]:
        return dict(self.params)

    @classmethod
    def from_config(cls, obj: object) -> "Constraint":
        if isinstance(obj, str):
            if obj == GREEDY:
                return cls.phi0()
            if obj == UNCONSTRAINED:
                return cls.true()
            return cls.of_strategy(obj)
        if isinstance(obj, dict) and "strategy" in obj:
            params = obj.get("params", {})
            if not isinstance(params, dict):
                raise MachineConfigError(f"strategy params must be an object: {obj!r}")
            return cls.of_strategy(obj["strategy"], **params)
        raise MachineConfigError(f"cannot parse constraint {obj!r}")

    def describe(self) -> str:
        if self.kind == STRATEGY:
            return f"{self.strategy}({', '.join(f'{k}={v}' for k, v in self.params)})"
        return self.kind


@dataclass(frozen=True)
class MachineState:
    """One upper-level state: its invariant plus outgoing transitions.

    ``transitions`` lists (target state id, transition constraint) pairs; the
    transition constraint must hold at every structure visited during an
    adaptation ending in that target.
    """

    id: str
    constraint: Constraint
    transitions: tuple[tuple[str, Constraint], ...] = ()


@dataclass(frozen=True)
class AdaptiveMachine:
    """The upper-level constraint machine."""

    states: tuple[MachineState, ...]
    initial: str

    def __post_init__(self) -> None:
        ids = [st.id for st in self.states]
        if len(set(ids)) != len(ids):
            raise MachineConfigError("duplicate machine state ids")
        if self.initial not in ids:
            raise MachineConfigError(f"initial state {self.initial!r} is not defined")
        known = set(ids)
        for st in self.states:
            for target, _ in st.transitions:
                if target not in known:
                    raise MachineConfigError(
                        f"transition {st.id!r} -> {target!r} references unknown state"
                    )

    def state(self, sid: str) -> MachineState:
        for st in self.states:
            if st.id == sid:
                return st
        raise KeyError(sid)

    @classmethod
    def default(cls) -> "AdaptiveMachine":
        """Single greedy state with a self-loop: descend, adapt in place, stop."""
        w0 = MachineState("w0", Constraint.phi0(), (("w0", Constraint.true()),))
        return cls((w0,), "w0")

    @classmethod
    def from_config(cls, doc: Mapping) -> "AdaptiveMachine":
        """Build a machine from a decoded JSON configuration.

        Expected shape::

            {"initial": "w0",
             "states": [{"id": "w0", "constraint": "phi0"},
                        {"id": "w1", "constraint": {"strategy": "lookahead",
                                                    "params": {"depth": 2}}}],
             "transitions": [{"from": "w0", "to": "w0", "psi": "true"},
                             {"from": "w0", "to": "w1"}]}

        ``psi`` defaults to "true".
        """
        try:
            raw_states = doc["states"]
            initial = doc["initial"]
        except (KeyError, TypeError):
            raise MachineConfigError("machine config needs 'states' and 'initial'")
        if not isinstance(raw_states, list) or not raw_states:
            raise MachineConfigError("'states' must be a nonempty list")
        outgoing: dict[str, list[tuple[str, Constraint]]] = {}
        for t in doc.get("transitions", []):
            if not isinstance(t, dict) or "from" not in t or "to" not in t:
                raise MachineConfigError(f"bad transition record {t!r}")
            psi = Constraint.from_config(t.get("psi", "true"))
            outgoing.setdefault(t["from"], []).append((t["to"], psi))
        states = []
        for raw in raw_states:
            if not isinstance(raw, dict) or "id" not in raw or "constraint" not in raw:
                raise MachineConfigError(f"bad state record {raw!r}")
            sid = raw["id"]
            states.append(
                MachineState(sid, Constraint.from_config(raw["constraint"]),
                             tuple(outgoing.get(sid, ())))
            )
        return cls(tuple(states), initial)

    @classmethod
    def from_file(cls, path: str | Path) -> "AdaptiveMachine":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise MachineConfigError(f"machine file is not valid JSON: {exc}")
        return cls.from_config(doc)


@dataclass(frozen=True)
class RunLimits:
    """Optional bounds on a single run."""

    max_steps: int | None = None
    max_adaptation_depth: int | None = None
    max_adaptation_states: int | None = None


@dataclass(frozen=True)
class RunState:
    """The coupled configuration: machine state over a structure."""

    s_state: str
    structure: SecondaryStructure
    energy: float
    mode: str = "steady"  # "steady" | "adapting"
    adapting_from: str | None = None
    candidates: tuple[str, ...] = ()


@dataclass(frozen=True)
class TraceRecord:
    step: int
    s_state: str
    db: str
    energy: float
    mode: str
    move: str | None = None
    note: str | None = None

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "s_state": self.s_state,
            "db": self.db,
            "energy": None if math.isinf(self.energy) else self.energy,
            "mode": self.mode,
            "move": self.move,
            "note": self.note,
        }


@dataclass(frozen=True)
class TraceSummary:
    final_s_state: str
    final_db: str
    final_energy: float
    best_energy: float
    best_db: str
    termination: str
    steps: int

    def to_json(self) -> dict:
        return {
            "summary": {
                "final_s_state": self.final_s_state,
                "final_db": self.final_db,
                "final_energy": None if math.isinf(self.final_energy) else self.final_energy,
                "best_energy": None if math.isinf(self.best_energy) else self.best_energy,
                "best_db": self.best_db,
                "termination": self.termination,
                "steps": self.steps,
            }
        }


@dataclass(frozen=True)
class Trace:
    sequence: PrimarySequence
    records: tuple[TraceRecord, ...]
    summary: TraceSummary

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_json()) for r in self.records]
        lines.append(json.dumps(self.summary.to_json()))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Constraints and strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyContext:
    """Everything a constraint or strategy may inspect when evaluated."""

    structure: SecondaryStructure
    energy: float
    s_state: str
    successors: tuple[tuple[Match, SecondaryStructure], ...]
    grammar: Grammar
    model: EnergyModel
    best: tuple[float, SecondaryStructure] | None
    params: dict[str, object]


@dataclass(frozen=True)
class StrategyDecision:
    """Outcome of a constraint check: satisfiable, and optionally a move."""

    satisfied: bool
    target: SecondaryStructure | None = None
    move: str | None = None
    note: str | None = None


StrategyFn = Callable[[StrategyContext], StrategyDecision]

_STRATEGIES: dict[str, StrategyFn] = {}


def register_strategy(name: str, fn: StrategyFn) -> None:
    """Register a pluggable strategy usable from machine configurations."""
    _STRATEGIES[name] = fn


def _get_strategy(name: str) -> StrategyFn:
    try:
        return _STRATEGIES[name]
    except KeyError:
        raise UnknownStrategyError(
            f"strategy {name!r} is not registered (known: {sorted(_STRATEGIES)})"
        )


def phi0_select(
    q: SecondaryStructure,
    succs: list[tuple[Match, SecondaryStructure]] | tuple[tuple[Match, SecondaryStructure], ...],
    em: EnergyModel,
) -> tuple[Match, SecondaryStructure] | None:
    """The greedy choice: the minimal-observable successor, if it does not
    exceed the current observable.

    Ties break on the smallest dot-bracket key. Returns None when no
    successor qualifies (including an empty successor list), which signals
    that adaptation is needed.
    """
    if not succs:
        return None
    best = min(succs, key=lambda ms: (observable(ms[1], em), ms[1].key))
    if observable(best[1], em) <= observable(q, em):
        return best
    return None


def check_constraint(constraint: Constraint, ctx: StrategyContext) -> StrategyDecision:
    """Evaluate a constraint against a configuration.

    "true" is always satisfied (with no preferred move); "phi0" is satisfied
    exactly when :func:`phi0_select` finds a successor, which becomes the
    witness move; strategy constraints delegate to their registered function.

    Raises:
        UnknownStrategyError: for an unregistered strategy name.
    """
    if constraint.kind == UNCONSTRAINED:
        return StrategyDecision(satisfied=True)
    if constraint.kind == GREEDY:
        selected = phi0_select(ctx.structure, ctx.successors, ctx.model)
        if selected is None:
            return StrategyDecision(satisfied=False)
        match, target = selected
        return StrategyDecision(satisfied=True, target=target, move=match.rule.label)
    fn = _get_strategy(constraint.strategy or "")
    ctx = replace(ctx, params=constraint.params_dict)
    return fn(ctx)


def _lookahead_strategy(ctx: StrategyContext) -> StrategyDecision:
    """Escape strategy: accept when a strictly lower observable is reachable
    within ``depth`` forward steps; move one step toward the best such
    structure."""
    depth = int(ctx.params.get("depth", 2))
    if depth < 1:
        return StrategyDecision(satisfied=False)
    best_choice: tuple[float, str, str, SecondaryStructure] | None = None
    for match, first in ctx.successors:
        frontier = [first]
        seen = {first.key}
        level = 1
        local_best = (observable(first, ctx.model), first.key)
        while level < depth and frontier:
            next_frontier = []
            for node in frontier:
                for m2 in enumerate_matches(node, ctx.grammar):
                    child = _apply_unchecked(node, m2)
                    if child.key in seen:
                        continue
                    seen.add(child.key)
                    next_frontier.append(child)
                    local_best = min(local_best, (observable(child, ctx.model), child.key))
            frontier = next_frontier
            level += 1
        candidate = (local_best[0], local_best[1], first.key, first)
        if best_choice is None or candidate[:3] < best_choice[:3]:
            best_choice = candidate
            best_move = match.rule.label
    if best_choice is not None and best_choice[0] < ctx.energy:
        return StrategyDecision(
            satisfied=True,
            target=best_choice[3],
            move=best_move,
            note=f"lookahead(depth={depth})",
        )
    return StrategyDecision(satisfied=False)


def _restart_from_best_strategy(ctx: StrategyContext) -> StrategyDecision:
    """Escape strategy: jump back to the best structure seen in this run."""
    if ctx.best is None:
        return StrategyDecision(satisfied=False)
    best_energy, best_structure = ctx.best
    if not math.isfinite(best_energy) or best_structure.key == ctx.structure.key:
        return StrategyDecision(satisfied=False)
    return StrategyDecision(satisfied=True, target=best_structure, note="restart-from-best")


register_strategy("lookahead", _lookahead_strategy)
register_strategy("restart-from-best", _restart_from_best_strategy)


# ---------------------------------------------------------------------------
# The controller
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptationOutcome:
    resumed: bool
    reason: str | None = None


class Controller:
    """Owns one run: the machine, the grammar, the model and the trace."""

    def __init__(
        self,
        machine: AdaptiveMachine | None = None,
        grammar: Grammar | None = None,
        model: EnergyModel | None = None,
        limits: RunLimits | None = None,
    ):
        self.machine = machine or AdaptiveMachine.default()
        self.grammar = grammar or Grammar()
        self.model = model or NussinovModel()
        self.limits = limits or RunLimits()
        initial = self.machine.state(self.machine.initial)
        if initial.constraint.kind != GREEDY:
            raise MachineConfigError(
                f"initial machine state must use the {GREEDY!r} constraint, "
                f"got {initial.constraint.describe()!r}"
            )
        self._records: list[TraceRecord] = []
        self._visited: set[str] = set()
        self._occupied_since_move: set[tuple[str, str]] = set()
        self._best: tuple[float, SecondaryStructure] | None = None
        self.state: RunState | None = None

    # -- bookkeeping -------------------------------------------------------

    def _record(
        self,
        state: RunState,
        mode: str,
        move: str | None = None,
        note: str | None = None,
    ) -> None:
        rec = TraceRecord(
            step=len(self._records),
            s_state=state.s_state,
            db=state.structure.key,
            energy=state.energy,
            mode=mode,
            move=move,
            note=note,
        )
        self._records.append(rec)
        if math.isfinite(state.energy):
            cand = (state.energy, state.structure)
            if self._best is None or (cand[0], cand[1].key) < (
                self._best[0],
                self._best[1].key,
            ):
                self._best = cand

    def _filtered_successors(
        self, structure: SecondaryStructure
    ) -> tuple[tuple[Match, SecondaryStructure], ...]:
        pairs = [
            (m, _apply_unchecked(structure, m))
            for m in enumerate_matches(structure, self.grammar)
        ]
        return tuple((m, t) for m, t in pairs if t.key not in self._visited)

    def _context(self, structure: SecondaryStructure, s_state: str) -> StrategyContext:
        return StrategyContext(
            structure=structure,
            energy=observable(structure, self.model),
            s_state=s_state,
            successors=self._filtered_successors(structure),
            grammar=self.grammar,
            model=self.model,
            best=self._best,
            params={},
        )

    # -- the two phases ------------------------------------------------------

    def steady_step(self) -> bool:
        """Attempt one steady move; False signals that adaptation is needed."""
        assert self.state is not None
        state = self.state
        machine_state = self.machine.state(state.s_state)
        ctx = self._context(state.structure, state.s_state)
        decision = check_constraint(machine_state.constraint, ctx)
        target, move, note = decision.target, decision.move, decision.note
        unconstrained = machine_state.constraint.kind == UNCONSTRAINED
        if decision.satisfied and target is None and unconstrained:
            if ctx.successors:
                match, target = ctx.successors[0]
                move = match.rule.label
        if not decision.satisfied or target is None:
            return False
        self._move_to(state.s_state, target, mode="steady", move=move, note=note)
        return True

    def _enter(self, s_state: str, structure: SecondaryStructure) -> None:
        """Track occupancy. Entering a structure never seen before is
        progress and clears the occupied set; re-entering a known one only
        accumulates, so repeats can be detected."""
        config = (s_state, structure.key)
        if structure.key not in self._visited:
            self._visited.add(structure.key)
            self._occupied_since_move = {config}
        else:
            self._occupied_since_move.add(config)

    def _move_to(
        self,
        s_state: str,
        structure: SecondaryStructure,
        mode: str,
        move: str | None,
        note: str | None,
    ) -> None:
        self.state = RunState(s_state, structure, observable(structure, self.model))
        self._enter(s_state, structure)
        self._record(self.state, mode, move=move, note=note)

    def _psi_holds(self, psis: tuple[Constraint, ...], structure: SecondaryStructure) -> bool:
        """All transition constraints must hold at every structure of the phase."""
        for psi in psis:
            if psi.kind == UNCONSTRAINED:
                continue
            ctx = self._context(structure, self.state.s_state if self.state else "")
            if not check_constraint(psi, ctx).satisfied:
                return False
        return True

    def adaptation_phase(self) -> AdaptationOutcome:
        """Search the folding space for a structure where some successor
        machine state's constraint is satisfiable again.

        Breadth-first over forward rule applications (plus inverses when the
        grammar allows them), stopping at the first structure, in
        deterministic order, at which a candidate target constraint holds.
        A resume that would visit nothing new and land in a configuration
        already occupied since the last new structure is skipped: the run is
        deterministic, so rerunning it could only repeat itself (livelock).
        """
        assert self.state is not None
        origin = self.state
        machine_state = self.machine.state(origin.s_state)
        candidates = machine_state.transitions
        if not candidates:
            return AdaptationOutcome(False, "no-adaptation-targets")
        self.state = replace(
            origin,
            mode="adapting",
            adapting_from=origin.s_state,
            candidates=tuple(t for t, _ in candidates),
        )
        psis = tuple(psi for _, psi in candidates)

        parent: dict[str, tuple[str | None, str | None, SecondaryStructure]] = {
            origin.structure.key: (None, None, origin.structure)
        }
        queue: deque[tuple[int, SecondaryStructure]] = deque([(0, origin.structure)])
        explored = 0
        limit_hit: str | None = None

        while queue:
            depth, node = queue.popleft()
            explored += 1
            if (
                self.limits.max_adaptation_states is not None
                and explored > self.limits.max_adaptation_states
            ):
                limit_hit = "adaptation-state-limit"
                break
            for target_id, _psi in candidates:
                if (target_id, node.key) in self._occupied_since_move and not (
                    self._path_visits_new(node, parent)
                ):
                    continue
                target_constraint = self.machine.state(target_id).constraint
                ctx = self._context(node, target_id)
                if check_constraint(target_constraint, ctx).satisfied:
                    self._resume(origin, target_id, node, parent)
                    return AdaptationOutcome(True)
            max_depth = self.limits.max_adaptation_depth
            if max_depth is not None and depth >= max_depth:
                limit_hit = limit_hit or "adaptation-depth-limit"
                continue
            moves: list[tuple[str, SecondaryStructure]] = [
                (m.rule.label, _apply_unchecked(node, m))
                for m in enumerate_matches(node, self.grammar)
            ]
            if self.grammar.allow_inverse:
                moves.extend(
                    (f"inverse:{m.rule.label}", source)
                    for m, source in enumerate_inverse_matches(node, self.grammar)
                )
            for label, child in moves:
                if child.key in parent:
                    continue
                if not self._psi_holds(psis, child):
                    continue
                parent[child.key] = (node.key, label, child)
                queue.append((depth + 1, child))

        self.state = origin
        return AdaptationOutcome(False, limit_hit or "exhausted")

    def _path_visits_new(
        self,
        node: SecondaryStructure,
        parent: dict[str, tuple[str | None, str | None, SecondaryStructure]],
    ) -> bool:
        key: str | None = node.key
        while key is not None:
            prev_key, label, structure = parent[key]
            if label is not None and structure.key not in self._visited:
                return True
            key = prev_key
        return False

    def _resume(
        self,
        origin: RunState,
        target_id: str,
        node: SecondaryStructure,
        parent: dict[str, tuple[str | None, str | None, SecondaryStructure]],
    ) -> None:
        path: list[tuple[str, SecondaryStructure]] = []
        key: str | None = node.key
        while key is not None:
            prev_key, label, structure = parent[key]
            if label is not None:
                path.append((label, structure))
            key = prev_key
        path.reverse()
        for label, structure in path:
            state = RunState(
                origin.s_state,
                structure,
                observable(structure, self.model),
                mode="adapting",
                adapting_from=origin.s_state,
            )
            self.state = state
            self._enter(origin.s_state, structure)
            self._record(state, "adapting", move=label)
        resumed = RunState(target_id, node, observable(node, self.model))
        self.state = resumed
        self._enter(target_id, node)
        self._record(
            resumed,
            "steady",
            note=f"adaptation-complete:{origin.s_state}->{target_id}",
        )

    # -- driving -------------------------------------------------------------

    def run(self, seq: PrimarySequence) -> Trace:
        """Alternate steady steps and adaptation phases until termination."""
        s0 = SecondaryStructure(seq)
        self.state = RunState(self.machine.initial, s0, observable(s0, self.model))
        self._records = []
        self._visited = {s0.key}
        self._occupied_since_move = {(self.state.s_state, s0.key)}
        self._best = None
        self._record(self.state, "steady", note="initial")

        termination = "terminated"
        while True:
            max_steps = self.limits.max_steps
            if max_steps is not None and len(self._records) - 1 >= max_steps:
                termination = "max-steps"
                break
            if self.steady_step():
                continue
            outcome = self.adaptation_phase()
            if not outcome.resumed:
                termination = outcome.reason or "exhausted"
                break

        assert self.state is not None
        final = self.state
        if self._best is not None:
            best_energy, best_structure = self._best
            best_db = best_structure.key
        else:
            best_energy, best_db = math.inf, self._records[0].db
        summary = TraceSummary(
            final_s_state=final.s_state,
            final_db=final.structure.key,
            final_energy=final.energy,
            best_energy=best_energy,
            best_db=best_db,
            termination=termination,
            steps=len(self._records) - 1,
        )
        return Trace(seq, tuple(self._records), summary)


def run(
    machine: AdaptiveMachine | None,
    seq: PrimarySequence,
    grammar: Grammar | None = None,
    model: EnergyModel | None = None,
    limits: RunLimits | None = None,
) -> Trace:
    """Run the folding controller on a sequence and return its trace."""
    return Controller(machine, grammar, model, limits).run(seq)
