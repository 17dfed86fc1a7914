import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from builders import build, catalog
from fogafc import model
from fogafc.baselines import make_strategy
from fogafc.lyapunov import (
    AFC,
    ControllerConfig,
    DeficitQueues,
    InfeasibleDecisionError,
    MetricsTrace,
    SlotDecision,
    bound_report,
    run_afc,
    simulate,
    summary_json,
    update_queue,
)
from fogafc.scenario import desk_config, generate_scenario, generate_slot
from fogafc.solver import AnnealSchedule, SlotProblem, cpgs

FAST = AnnealSchedule.fast()


@pytest.mark.parametrize("q, e, budget, expected", [(5, 12, 10, 7), (0, 8, 10, 0), (3, 10, 10, 3)])
def test_update_queue_examples(q, e, budget, expected):
    assert update_queue(q, e, budget) == expected


finite = st.floats(0, 1e6, allow_nan=False)


@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
def test_queue_never_negative(q, e, budget):
    out = update_queue(q, e, budget)
    assert np.all(out >= 0)
    under = e <= budget
    assert np.all(out[under] <= q[under])


def test_deficit_queues_start_empty():
    dq = DeficitQueues(3)
    npt.assert_array_equal(dq.q, 0)
    dq.update(np.array([12.0, 9.0, 10.0]), np.full(3, 10.0))
    npt.assert_array_equal(dq.q, [2, 0, 0])


class TestBound:
    def test_example(self):
        cat = catalog([6e6], [1e8])
        sc = build([(0, 0), (500, 0)], [(10, 0), (510, 0)], [0, 0], cat, energy_cap_factor=1.5)
        rep = bound_report(sc, ControllerConfig(V=10, d_max=100.0), d_ref=40.0, epsilon=2.0)
        assert rep.B == 25
        assert rep.delay_term == 2.5
        assert rep.deficit_term == (25 + 10 * 60) / 2

    def test_zero_slack(self):
        cat = catalog([6e6], [1e8])
        sc = build([(0, 0)], [(10, 0)], [0], cat, energy_cap_factor=1.0)
        assert bound_report(sc, ControllerConfig(d_max=1.0), 0.5, 1.0).B == 0

    def test_doubling_v_halves_delay_term(self):
        sc = generate_scenario(desk_config(), 0)
        a = bound_report(sc, ControllerConfig(V=100, d_max=50.0), 10.0, 1.0)
        b = bound_report(sc, ControllerConfig(V=200, d_max=50.0), 10.0, 1.0)
        npt.assert_allclose(b.delay_term, a.delay_term / 2)

    def test_needs_positive_epsilon(self):
        sc = generate_scenario(desk_config(), 0)
        with pytest.raises(ValueError):
            bound_report(sc, ControllerConfig(d_max=1.0), 0.0, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(V=0)
    with pytest.raises(ValueError):
        ControllerConfig(horizon=0)
    with pytest.raises(ValueError):
        ControllerConfig(d_max=-1.0)


@pytest.fixture(scope="module")
def desk():
    return generate_scenario(desk_config(), 0)


@pytest.fixture(scope="module")
def short_trace(desk):
    return run_afc(desk, ControllerConfig(V=1000, horizon=60), seed=3, schedule=FAST, warm_start=True)


class TestController:
    def test_first_slot_is_pure_delay(self, desk):
        seen = []

        def solver(problem, schedule, rng, init):
            seen.append(problem)
            return cpgs(problem, schedule, rng, init)

        simulate(desk, AFC(solver, FAST), ControllerConfig(V=7.0, horizon=1), 0)
        p = seen[0]
        npt.assert_array_equal(p.queues, 0)
        cost, dly = p.evaluate([0] * desk.n_fns)
        npt.assert_allclose(cost, 7.0 * dly)

    def test_trace_shape_and_queues(self, desk, short_trace):
        tr = short_trace
        assert tr.horizon == 60 and tr.complete
        assert tr.energy.shape == (60, desk.n_fns)
        assert np.all(tr.queue >= 0)
        q = np.zeros(desk.n_fns)
        for t in range(60):
            q = update_queue(q, tr.energy[t], desk.budget)
            npt.assert_allclose(tr.queue[t], q, rtol=1e-12)

    def test_energy_respects_cap(self, desk, short_trace):
        assert np.all(short_trace.energy <= desk.energy_cap)

    def test_unconstrained_queues_stay_empty(self, desk):
        rich = desk.with_budget(1e6)
        ctrl = ControllerConfig(V=10, horizon=8)
        afc = simulate(rich, make_strategy("afc", FAST), ctrl, 1)
        dopt = simulate(rich, make_strategy("dopt", FAST), ctrl, 1)
        npt.assert_array_equal(afc.queue, 0)
        # Queues never charge, so both solve the same delay-only problem.
        npt.assert_allclose(afc.delay, dopt.delay, rtol=1e-12)

    def test_deficit_decays(self, desk):
        tr = run_afc(desk, ControllerConfig(V=100, horizon=400), seed=0, schedule=FAST, warm_start=True)
        avg = tr.running_deficit()
        assert avg[-1] <= avg[99]
        assert avg[-1] < 0.05 * desk.budget.sum()

    def test_infeasible_solver_aborts(self, desk):
        class Greedy:
            name = "greedy"

            def decide(self, scenario, ctx, queues, V, d_max, seed):
                hosting = np.ones((scenario.n_fns, scenario.n_services), dtype=bool)
                a = model.associate(hosting, ctx, scenario)
                return SlotDecision(hosting, np.ones(scenario.n_fns), a)

        with pytest.raises(InfeasibleDecisionError, match="capacity"):
            simulate(desk, Greedy(), ControllerConfig(horizon=3), 0)

    def test_energy_cap_audit(self, desk):
        class Overspend:
            name = "overspend"

            def decide(self, scenario, ctx, queues, V, d_max, seed):
                hosting = np.zeros((scenario.n_fns, scenario.n_services), dtype=bool)
                hosting[:, :2] = True
                a = model.associate(hosting, ctx, scenario)
                return SlotDecision(hosting, np.ones(scenario.n_fns), a)

        tiny = desk.with_budget(3.0, energy_cap=3.0)
        with pytest.raises(InfeasibleDecisionError, match="E_max"):
            simulate(tiny, Overspend(), ControllerConfig(horizon=3), 0)

    def test_interrupt_gives_partial_trace(self, desk):
        def stop(t, dec):
            if t == 4:
                raise KeyboardInterrupt

        tr = simulate(desk, make_strategy("ncop"), ControllerConfig(horizon=50), 0, on_slot=stop)
        assert tr.horizon == 5 and not tr.complete

    def test_predictor_hook(self, desk):
        calls = []

        def predictor(ctx):
            calls.append(ctx.t)
            return ctx

        simulate(desk, make_strategy("ncop"), ControllerConfig(horizon=4), 0, predictor=predictor)
        assert calls == [0, 1, 2, 3]


class TestMetrics:
    def test_csv_round_trip(self, short_trace, tmp_path):
        path = tmp_path / "afc.csv"
        short_trace.write_csv(str(path))
        back = MetricsTrace.read_csv(str(path))
        npt.assert_array_equal(back.delay, short_trace.delay)
        npt.assert_array_equal(back.energy, short_trace.energy)
        npt.assert_array_equal(back.queue, short_trace.queue)
        assert back.to_csv() == short_trace.to_csv()

    def test_columns(self, short_trace):
        header = short_trace.to_csv().splitlines()[2].split(",")
        n = short_trace.n_fns
        assert header[:2] == ["t", "sum_delay_s"]
        assert header[2] == "energy_Wh_0" and header[2 + n] == "q_Wh_0"
        assert header[-2:] == ["fog_demand", "cloud_demand"]

    def test_averages_recomputable(self, short_trace, tmp_path):
        path = tmp_path / "t.csv"
        short_trace.write_csv(str(path))
        rows = np.loadtxt(path, delimiter=",", skiprows=3)
        n = short_trace.n_fns
        delay = np.cumsum(rows[:, 1]) / np.arange(1, len(rows) + 1)
        npt.assert_allclose(short_trace.running_delay(), delay, rtol=1e-12)
        over = rows[:, 2 : 2 + n] - short_trace.budget
        dfc = np.maximum((np.cumsum(over, axis=0) / np.arange(1, len(rows) + 1)[:, None]).sum(axis=1), 0)
        npt.assert_allclose(short_trace.running_deficit(), dfc, rtol=1e-12, atol=1e-12)
        s = short_trace.summary()
        npt.assert_allclose(s["time_avg_delay_s"], delay[-1], rtol=1e-12)

    def test_demand_split(self, short_trace, desk):
        total = [generate_slot(desk, t, 3).demand.sum() for t in range(60)]
        npt.assert_allclose(short_trace.fog_demand + short_trace.cloud_demand, total, rtol=1e-12)
        assert np.all(short_trace.fog_demand >= 0)

    def test_summary_json(self, short_trace, desk):
        rep = bound_report(desk, ControllerConfig(d_max=100.0), 10.0, 1.0)
        text = summary_json(short_trace, rep)
        assert '"B"' in text and "time_avg_deficit_Wh" in text

    def test_deficit_metrics(self):
        tr = MetricsTrace(
            "x", 1.0, np.array([10.0, 10.0]), np.zeros(2),
            np.array([[12.0, 6.0], [12.0, 6.0]]), np.zeros((2, 2)), np.zeros(2), np.zeros(2),
        )
        npt.assert_allclose(tr.running_deficit_per_fn()[-1], [2.0, -4.0])
        assert tr.running_deficit()[-1] == 0.0
        assert tr.running_deficit_positive()[-1] == 2.0
