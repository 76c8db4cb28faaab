import json
import math

import pytest

from grafold.controller import (
    AdaptiveMachine,
    Constraint,
    Controller,
    MachineConfigError,
    MachineState,
    RunLimits,
    StrategyContext,
    StrategyDecision,
    UnknownStrategyError,
    check_constraint,
    phi0_select,
    register_strategy,
    run,
)
from grafold.energy import NussinovModel, observable
from grafold.grammar import Grammar
from grafold.space import successors
from grafold.structure import (
    PrimarySequence,
    SecondaryStructure,
    parse_dot_bracket,
    validate_structure,
)
from conftest import ScriptedModel, trap_model

G3 = Grammar()
NUSSINOV = NussinovModel()


def make_context(structure, model, grammar=G3, best=None, s_state="w0"):
    return StrategyContext(
        structure=structure,
        energy=observable(structure, model),
        s_state=s_state,
        successors=tuple(successors(structure, grammar)),
        grammar=grammar,
        model=model,
        best=best,
        params={},
    )


class TestPhi0Select:
    def test_picks_unique_minimum(self):
        seq = PrimarySequence("GGAAACC")
        empty = SecondaryStructure(seq)
        succs = successors(empty, G3)
        model = ScriptedModel({".(...).": 2.6}, default=lambda s: 4.8)
        chosen = phi0_select(empty, succs, model)
        assert chosen is not None
        assert chosen[1].key == ".(...)."

    def test_absent_when_only_successor_is_higher(self):
        seq = PrimarySequence("GGAAACC")
        s = parse_dot_bracket(seq, ".(...).")
        model = ScriptedModel({".(...).": 2.6, "((...))": 3.9})
        succs = successors(s, G3)
        assert [t.key for _, t in succs] == ["((...))"]
        assert phi0_select(s, succs, model) is None

    def test_absent_on_empty_successors(self):
        s = SecondaryStructure(PrimarySequence("AAAA"))
        assert phi0_select(s, [], NUSSINOV) is None

    def test_tie_breaks_on_smallest_key(self, seq_gggaaaccc):
        empty = SecondaryStructure(seq_gggaaaccc)
        chosen = phi0_select(empty, successors(empty, G3), NUSSINOV)
        assert chosen is not None
        assert chosen[1].key == "((....))."  # smallest among the -2.0 targets

    def test_equal_observable_is_accepted(self):
        seq = PrimarySequence("GAAAC")
        s = SecondaryStructure(seq)
        model = ScriptedModel(default=lambda s: 0.0)
        # successor observable 0.0 vs +inf current
        assert phi0_select(s, successors(s, G3), model) is not None


class TestCheckConstraint:
    def test_true_always_satisfied(self):
        ctx = make_context(SecondaryStructure(PrimarySequence("AAAA")), NUSSINOV)
        decision = check_constraint(Constraint.true(), ctx)
        assert decision.satisfied and decision.target is None

    def test_phi0_unsatisfied_at_local_minimum(self, seq_gggaaaccc):
        trap = parse_dot_bracket(seq_gggaaaccc, "..(...)..")
        ctx = make_context(trap, trap_model())
        assert not check_constraint(Constraint.phi0(), ctx).satisfied

    def test_phi0_witness(self, seq_gggaaaccc):
        empty = SecondaryStructure(seq_gggaaaccc)
        decision = check_constraint(Constraint.phi0(), make_context(empty, NUSSINOV))
        assert decision.satisfied
        assert decision.target.key == "((....))."
        assert decision.move == "Helix-Rule-1"

    def test_unregistered_strategy(self):
        ctx = make_context(SecondaryStructure(PrimarySequence("GAAAC")), NUSSINOV)
        with pytest.raises(UnknownStrategyError):
            check_constraint(Constraint.of_strategy("frobnicate"), ctx)

    def test_registered_strategy_receives_params(self):
        seen = {}

        def probe(ctx):
            seen.update(ctx.params)
            return StrategyDecision(satisfied=False)

        register_strategy("probe-test", probe)
        ctx = make_context(SecondaryStructure(PrimarySequence("GAAAC")), NUSSINOV)
        check_constraint(Constraint.of_strategy("probe-test", knob=7), ctx)
        assert seen == {"knob": 7}


class TestMachineConfig:
    def test_default_machine(self):
        machine = AdaptiveMachine.default()
        w0 = machine.state("w0")
        assert w0.constraint.kind == "phi0"
        assert w0.transitions == (("w0", Constraint.true()),)

    def test_from_config(self):
        machine = AdaptiveMachine.from_config(
            {
                "initial": "w0",
                "states": [
                    {"id": "w0", "constraint": "phi0"},
                    {"id": "w1", "constraint": {"strategy": "lookahead", "params": {"depth": 3}}},
                ],
                "transitions": [
                    {"from": "w0", "to": "w1"},
                    {"from": "w1", "to": "w0", "psi": "true"},
                ],
            }
        )
        w1 = machine.state("w1")
        assert w1.constraint.strategy == "lookahead"
        assert w1.constraint.params_dict == {"depth": 3}
        assert machine.state("w0").transitions[0][0] == "w1"

    def test_from_packaged_example(self):
        from importlib import resources

        with resources.as_file(
            resources.files("grafold").joinpath("data/example_machine.json")
        ) as path:
            machine = AdaptiveMachine.from_file(path)
        assert {st.id for st in machine.states} == {"w0", "w1"}
        assert machine.initial == "w0"

    def test_bad_configs(self):
        with pytest.raises(MachineConfigError):
            AdaptiveMachine.from_config({"states": [], "initial": "w0"})
        with pytest.raises(MachineConfigError):
            AdaptiveMachine.from_config(
                {"initial": "nope", "states": [{"id": "w0", "constraint": "phi0"}]}
            )
        with pytest.raises(MachineConfigError):
            AdaptiveMachine.from_config(
                {
                    "initial": "w0",
                    "states": [{"id": "w0", "constraint": "phi0"}],
                    "transitions": [{"from": "w0", "to": "ghost"}],
                }
            )

    def test_initial_state_must_be_greedy(self):
        machine = AdaptiveMachine(
            (MachineState("w0", Constraint.true()),), "w0"
        )
        with pytest.raises(MachineConfigError, match="phi0"):
            Controller(machine)

    def test_constraint_parsing(self):
        assert Constraint.from_config("phi0") == Constraint.phi0()
        assert Constraint.from_config("true") == Constraint.true()
        assert Constraint.from_config("lookahead") == Constraint.of_strategy("lookahead")
        with pytest.raises(MachineConfigError):
            Constraint.from_config(42)


class TestSteadyStep:
    def test_first_step_on_gggaaaccc(self, seq_gggaaaccc):
        controller = Controller(model=NUSSINOV)
        trace = controller.run(seq_gggaaaccc)
        first_move = trace.records[1]
        assert first_move.db == "((....))."
        assert first_move.energy == -2.0
        assert first_move.mode == "steady"

    def test_terminal_signals_adaptation(self, seq_gggaaaccc):
        controller = Controller(model=NUSSINOV)
        controller.run(seq_gggaaaccc)  # ends exhausted at a terminal structure
        assert controller.steady_step() is False


class TestAdaptationScenario:
    """A one-pair minimum whose sole useful continuation regains greedy
    progress one step later: adaptation must last exactly one move."""

    def test_one_step_adaptation(self, seq_gggaaaccc):
        controller = Controller(model=trap_model())
        trace = controller.run(seq_gggaaaccc)
        adapting = [r for r in trace.records if r.mode == "adapting"]
        assert len(adapting) == 1
        assert adapting[0].db == ".((...))."
        assert adapting[0].move == "Helix-Rule-2"
        # the trace walks: empty -> trap -> (adapt) -> resume -> optimum
        keys = [r.db for r in trace.records]
        assert keys == [
            ".........",
            "..(...)..",
            ".((...)).",
            ".((...)).",
            "(((...)))",
        ]
        resume = trace.records[3]
        assert resume.mode == "steady" and resume.note == "adaptation-complete:w0->w0"
        assert trace.summary.final_db == "(((...)))"
        assert trace.summary.best_energy == -2.0
        assert trace.summary.best_db == "..(...).."

    def test_terminal_without_inverse_terminates(self):
        trace = run(None, PrimarySequence("GAAAC"))
        assert trace.summary.termination == "exhausted"
        assert trace.summary.final_db == "(...)"

    def test_depth_limit_zero_terminates_with_best(self, seq_gggaaaccc):
        limits = RunLimits(max_adaptation_depth=0)
        trace = run(None, seq_gggaaaccc, model=trap_model(), limits=limits)
        assert trace.summary.termination == "adaptation-depth-limit"
        assert trace.summary.final_db == "..(...).."
        assert trace.summary.best_energy == -2.0


class TestRun:
    def test_gggaaaccc_nussinov(self, seq_gggaaaccc):
        trace = run(None, seq_gggaaaccc, model=NUSSINOV)
        # the greedy first move lands in a -2.0 terminal trap
        assert trace.summary.final_db == "((....))."
        assert trace.summary.best_energy == -2.0
        assert trace.summary.termination == "exhausted"

    def test_aaaa_trace_length_one(self):
        trace = run(None, PrimarySequence("AAAA"))
        assert len(trace.records) == 1
        assert math.isinf(trace.summary.best_energy)
        assert trace.summary.final_db == "...."

    def test_gaaac(self, seq_gaaac):
        trace = run(None, seq_gaaac)
        assert [r.db for r in trace.records] == [".....", "(...)"]
        assert trace.summary.best_energy == -1.0

    def test_steady_observables_non_increasing(self, seq_gggaaaccc):
        # adaptation may raise the observable; uninterrupted steady
        # stretches never do
        for model in (NUSSINOV, trap_model()):
            trace = run(None, seq_gggaaaccc, model=model)
            for a, b in zip(trace.records, trace.records[1:]):
                if a.mode == "steady" and b.mode == "steady":
                    assert b.energy <= a.energy or math.isinf(a.energy)

    def test_best_seen_is_min_over_records(self, seq_gggaaaccc):
        trace = run(None, seq_gggaaaccc, model=trap_model())
        finite = [r.energy for r in trace.records if math.isfinite(r.energy)]
        assert trace.summary.best_energy == min(finite)

    def test_determinism(self, seq_gggaaaccc):
        a = run(None, seq_gggaaaccc, model=trap_model())
        b = run(None, seq_gggaaaccc, model=trap_model())
        assert a.to_jsonl() == b.to_jsonl()

    def test_max_steps(self, seq_gggaaaccc):
        trace = run(None, seq_gggaaaccc, limits=RunLimits(max_steps=0))
        assert trace.summary.termination == "max-steps"
        assert len(trace.records) == 1

    def test_trace_jsonl_round_trips(self, seq_gggaaaccc):
        trace = run(None, seq_gggaaaccc, model=trap_model())
        lines = trace.to_jsonl().strip().split("\n")
        records = [json.loads(line) for line in lines]
        assert records[0]["energy"] is None  # +inf encodes as null
        assert records[-1]["summary"]["final_db"] == trace.summary.final_db
        assert len(records) == len(trace.records) + 1


class TestInverseMoves:
    def test_backtracking_reaches_the_optimum(self, seq_gggaaaccc):
        g = Grammar(allow_inverse=True)
        trace = run(None, seq_gggaaaccc, grammar=g, model=NUSSINOV)
        assert trace.summary.best_energy == -3.0
        assert trace.summary.best_db == "(((...)))"
        assert any(
            r.move and r.move.startswith("inverse:") for r in trace.records
        )
        assert trace.summary.termination == "exhausted"

    def test_all_visited_structures_valid(self, seq_gggaaaccc):
        g = Grammar(allow_inverse=True)
        trace = run(None, seq_gggaaaccc, grammar=g, model=NUSSINOV)
        for record in trace.records:
            s = parse_dot_bracket(seq_gggaaaccc, record.db)
            assert validate_structure(s, 3).ok

    def test_plateau_terminates(self, seq_gggaaaccc):
        # constant observable: the visited-set guard must prevent cycling
        model = ScriptedModel(default=lambda s: -1.0)
        g = Grammar(allow_inverse=True)
        trace = run(None, seq_gggaaaccc, grammar=g, model=model)
        assert trace.summary.termination == "exhausted"
        steady_moves = [r for r in trace.records[1:] if r.mode == "steady" and r.move]
        assert len({r.db for r in steady_moves}) == len(steady_moves)


class TestStrategies:
    def test_lookahead_machine_reaches_optimum(self, seq_gggaaaccc):
        machine = AdaptiveMachine.from_config(
            {
                "initial": "w0",
                "states": [
                    {"id": "w0", "constraint": "phi0"},
                    {"id": "w1", "constraint": {"strategy": "lookahead", "params": {"depth": 2}}},
                ],
                "transitions": [
                    {"from": "w0", "to": "w1"},
                    {"from": "w1", "to": "w0"},
                ],
            }
        )
        trace = run(machine, seq_gggaaaccc, model=trap_model())
        assert trace.summary.final_db == "(((...)))"
        assert any(r.s_state == "w1" for r in trace.records)

    def test_restart_from_best(self):
        s = parse_dot_bracket(PrimarySequence("GAAAC"), "(...)")
        best_structure = SecondaryStructure(PrimarySequence("GAAAC"), {(0, 4)})
        worse = SecondaryStructure(PrimarySequence("GAAAC"))
        ctx_at_best = make_context(s, NUSSINOV, best=(-1.0, s))
        decision = check_constraint(Constraint.of_strategy("restart-from-best"), ctx_at_best)
        assert not decision.satisfied  # already at the best structure
        ctx_elsewhere = make_context(worse, NUSSINOV, best=(-1.0, best_structure))
        decision = check_constraint(Constraint.of_strategy("restart-from-best"), ctx_elsewhere)
        assert decision.satisfied
        assert decision.target == best_structure

    def test_restart_unsatisfied_without_best(self):
        ctx = make_context(SecondaryStructure(PrimarySequence("GAAAC")), NUSSINOV, best=None)
        assert not check_constraint(Constraint.of_strategy("restart-from-best"), ctx).satisfied

    def test_restart_self_loop_machine_terminates(self, seq_gggaaaccc):
        # a restart state with a self-loop invites an endless jump-back
        # cycle; the occupied-configuration guard must break it
        machine = AdaptiveMachine.from_config(
            {
                "initial": "w0",
                "states": [
                    {"id": "w0", "constraint": "phi0"},
                    {"id": "w1", "constraint": {"strategy": "restart-from-best"}},
                ],
                "transitions": [
                    {"from": "w0", "to": "w1"},
                    {"from": "w1", "to": "w1"},
                    {"from": "w1", "to": "w0"},
                ],
            }
        )
        trace = run(machine, seq_gggaaaccc, model=trap_model(),
                    limits=RunLimits(max_steps=500))
        assert trace.summary.termination != "max-steps"
        assert trace.summary.best_energy == -2.0

    def test_transition_constraint_filters_adaptation(self, seq_gggaaaccc):
        # forbid the structure adaptation would normally resume at; the
        # search must route around it to the next admissible one
        def forbid(ctx):
            return StrategyDecision(satisfied=ctx.structure.key != ctx.params["key"])

        register_strategy("forbid-key", forbid)

        def machine_with_psi(psi):
            return AdaptiveMachine(
                (MachineState("w0", Constraint.phi0(), (("w0", psi),)),), "w0"
            )

        free = run(machine_with_psi(Constraint.true()), seq_gggaaaccc, model=trap_model())
        resumed_free = [r for r in free.records if r.mode == "adapting"][0]
        assert resumed_free.db == ".((...))."

        fenced = run(
            machine_with_psi(Constraint.of_strategy("forbid-key", key=".((...)).")),
            seq_gggaaaccc,
            model=trap_model(),
        )
        adapting = [r for r in fenced.records if r.mode == "adapting"]
        assert adapting and all(r.db != ".((...))." for r in adapting)
        assert adapting[0].db == "(.(...).)"  # the next structure regaining descent
        assert fenced.summary.final_db == "(((...)))"

    def test_true_state_pingpong_terminates(self):
        # two mutually-reachable unconstrained states at a terminal
        # structure must not bounce forever
        machine = AdaptiveMachine(
            (
                MachineState("w0", Constraint.phi0(), (("wa", Constraint.true()),)),
                MachineState("wa", Constraint.true(), (("wb", Constraint.true()),)),
                MachineState("wb", Constraint.true(), (("wa", Constraint.true()),)),
            ),
            "w0",
        )
        trace = run(machine, PrimarySequence("GAAAC"), limits=RunLimits(max_steps=100))
        assert trace.summary.termination == "exhausted"
        assert trace.summary.final_db == "(...)"
