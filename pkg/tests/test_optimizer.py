import json

import numpy as np
import pytest
from scipy import special, stats

from iago import optimizer as opt
from iago import simulation
from iago.bench import sine_exp
from iago.covariance import CovarianceSpec
from iago.criteria import expected_improvement
from iago.kriging import Design
from iago.optimizer import (
    History,
    RunAborted,
    RunConfig,
    StoppingRule,
    ego_suggest,
    generate_candidates,
    grid_shape,
    iago_suggest,
    prepare_state,
    resample_grid,
    run,
    stopping_probability,
    suggest,
)
from iago.simulation import MinimizerPmf

SPEC = CovarianceSpec(1.0, (0.8,))


def small_config(**kw):
    base = dict(lower=(0.0,), upper=(6.5,), grid_size=60, n_candidates=50, paths=200)
    return RunConfig(**(base | kw))


def _design():
    x = np.array([0.4, 2.0, 3.5, 5.9])
    return Design(x[:, None], sine_exp(x))


def _state(**kw):
    cfg = small_config(**kw)
    grid = generate_candidates(cfg.lower, cfg.upper, cfg.grid_size)
    cand = generate_candidates(cfg.lower, cfg.upper, cfg.n_candidates)
    return prepare_state(_design(), CovarianceSpec(4.0, (1.0,)), grid, cand, cfg)


# -- candidate sets --------------------------------------------------------------

def test_grid_shape_follows_box_proportions():
    assert grid_shape((-5, 0), (10, 15), 1000) in {(31, 32), (32, 31)}
    assert grid_shape((0, 0), (4, 1), 100) == (20, 5)
    assert grid_shape((0,), (1,), 7) == (7,)


def test_regular_grid_includes_the_corners():
    pts = generate_candidates((-5, 0), (10, 15), 400)
    assert pts.shape == (400, 2)
    assert {tuple(p) for p in pts} >= {(-5.0, 0.0), (10.0, 15.0)}


def test_latin_hypercube_has_one_point_per_stratum():
    pts = generate_candidates((0, -1), (1, 1), 25, "latin-hypercube", seed=4)
    u = (pts - [0, -1]) / [1, 2]
    for j in range(2):
        np.testing.assert_array_equal(np.sort(np.floor(u[:, j] * 25)), np.arange(25))


def test_candidate_generation_rejects_bad_input():
    with pytest.raises(ValueError):
        generate_candidates((0,), (0,), 10)
    with pytest.raises(ValueError):
        generate_candidates((0,), (1,), 10, "sobol")


def test_resampled_grid_follows_the_kernel_mixture():
    pmf = MinimizerPmf(np.array([[0.5]]), [1.0])
    bw = 0.05
    pts = resample_grid(pmf, (0.0,), (1.0,), 4000, seed=1, explore=0.2, bandwidth=bw)[:, 0]
    mix = lambda x: 0.8 * special.ndtr((x - 0.5) / bw) + 0.2 * np.clip(x, 0, 1)
    assert stats.kstest(pts, mix).pvalue > 1e-3
    assert np.all((pts >= 0) & (pts <= 1))


# -- config ---------------------------------------------------------------------

def test_stopping_rule_validation():
    with pytest.raises(ValueError):
        StoppingRule(p_stop=1.5)
    with pytest.raises(ValueError):
        StoppingRule(delta=-1.0)
    with pytest.raises(ValueError):
        StoppingRule(max_evaluations=-1)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(lower=(0.0, 0.0), upper=(1.0,))
    with pytest.raises(ValueError):
        RunConfig(lower=(0.0,), upper=(1.0,), refit="sometimes")


# -- suggestions and stopping -----------------------------------------------------

def test_iago_picks_the_entropy_minimizer():
    state = _state()
    x, scores = iago_suggest(state)
    assert scores.shape == (50,)
    assert scores[state.candidate_index(x)] == pytest.approx(scores.min())
    assert not np.any(np.all(state.design.points == x, axis=1))


def test_tie_rule_orders_by_score_then_mean_then_index():
    primary = np.array([1.0, 0.5, 0.5, 0.5])
    means = np.array([0.0, 2.0, 1.0, 1.0])
    assert opt._tie_rule(primary, means) == 2
    assert opt._tie_rule(primary, means, np.array([0, 0, 1, 0])) == 3


def test_ego_maximizes_ei():
    state = _state()
    x, ei = ego_suggest(state, refine=True)
    f_min = np.min(state.system.predict_mean(state.design.points))
    dense = np.linspace(0, 6.5, 20001)[:, None]
    m, v = state.system.predict(dense)
    grid_best = expected_improvement(m, v, f_min).max()
    m, v = state.system.predict(x[None, :])
    assert expected_improvement(m[0], v[0], f_min) >= grid_best - 1e-6 * grid_best
    x0, _ = ego_suggest(state, refine=False)
    assert state.candidate_index(x0) == int(np.argmax(ei))


def test_stopping_probability_is_monotone_and_reaches_one():
    state = _state()
    deltas = [0.0, 0.01, 0.1, 0.5, 2.0, np.inf]
    probs = [stopping_probability(state, d) for d in deltas]
    assert all(a <= b for a, b in zip(probs, probs[1:]))
    assert probs[-1] == 1.0


def test_stopping_probability_draws_no_paths(monkeypatch):
    state = _state()

    def forbidden(*a, **k):
        raise AssertionError("new sampling")

    for mod in (opt, simulation):
        monkeypatch.setattr(mod, "sample_unconditional", forbidden)
        monkeypatch.setattr(mod, "standard_normals", forbidden)
    assert 0.0 <= stopping_probability(state, 0.1) <= 1.0


# -- the loop ---------------------------------------------------------------------

def test_run_records_every_iteration(tmp_path):
    path = tmp_path / "h.jsonl"
    cfg = small_config(history_path=str(path))
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=3), "entropy", cfg)
    assert len(hist) == 4
    assert [r.n_evaluations for r in hist.records] == [4, 5, 6, 7]
    assert all(r.suggested is not None for r in hist.records[:-1])
    assert hist.final.suggested is None and hist.final.value is None
    assert hist.design().n == 7
    assert path.read_text() == hist.to_jsonl()
    for rec in hist.records[:-1]:
        assert rec.value == pytest.approx(sine_exp(np.array(rec.suggested)))
        assert sum(rec.pmf) == pytest.approx(1.0)


def test_zero_budget_gives_a_single_record():
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=0), "entropy", small_config())
    assert len(hist) == 1 and hist.final.suggested is None


def test_probability_threshold_stops_early():
    hist = run(sine_exp, _design(), StoppingRule(p_stop=1.0, max_evaluations=5), "entropy",
               small_config())
    assert len(hist) == 1
    assert hist.final.stop_probability < 1.0


def test_ego_stops_when_ei_is_negligible():
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=5), "ei",
               small_config(ego_threshold=1e6))
    assert len(hist) == 1 and hist.final.scores is not None


def test_failed_evaluation_keeps_the_partial_history():
    calls = []

    def flaky(x):
        calls.append(x)
        if len(calls) == 2:
            raise RuntimeError("simulator crashed")
        return sine_exp(x)

    with pytest.raises(RunAborted) as info:
        run(flaky, _design(), StoppingRule(max_evaluations=5), "entropy", small_config())
    hist = info.value.history
    assert len(hist) == 2
    assert "simulator crashed" in hist.final.error


def test_noisy_evaluations_are_accepted():
    def noisy(x):
        return sine_exp(x) + 0.1, 0.04

    hist = run(noisy, _design(), StoppingRule(max_evaluations=2), "entropy",
               small_config(noise_var=0.04))
    assert hist.design().noise_vars.tolist() == [0.0] * 4 + [0.04, 0.04]


def test_refit_policy():
    fixed = run(sine_exp, _design(), StoppingRule(max_evaluations=2), "entropy", small_config())
    assert len({json.dumps(r.spec) for r in fixed.records}) == 1
    moving = run(sine_exp, _design(), StoppingRule(max_evaluations=2), "entropy",
                 small_config(refit="every-iteration"))
    assert len({json.dumps(r.spec) for r in moving.records}) > 1


def test_a_priori_covariance_is_used_as_given():
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=1), "ei", small_config(spec=SPEC))
    assert hist.spec() == SPEC


def test_grid_resampling_moves_the_grid():
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=2), "entropy",
               small_config(resample_grid=True))
    assert hist[0].grid != hist[1].grid
    assert len(hist[1].grid) == 60


def test_runs_are_reproducible_across_worker_counts():
    a = run(sine_exp, _design(), StoppingRule(max_evaluations=2), "entropy", small_config(workers=1))
    b = run(sine_exp, _design(), StoppingRule(max_evaluations=2), "entropy", small_config())
    assert a.to_jsonl() == b.to_jsonl()


def test_history_round_trip(tmp_path):
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=1), "entropy", small_config())
    hist.save(tmp_path / "h.jsonl")
    again = History.load(tmp_path / "h.jsonl")
    assert again.to_jsonl() == hist.to_jsonl()
    np.testing.assert_allclose(again.pmf().probabilities, hist.pmf().probabilities)
    assert again.system().predict_mean(np.array([[1.0]]))[0] == pytest.approx(
        hist.system().predict_mean(np.array([[1.0]]))[0])


def test_ask_tell_suggest_returns_a_fresh_point():
    design = _design()
    x, state = suggest(design, small_config())
    assert x.shape == (1,)
    assert 0.0 <= x[0] <= 6.5
    assert state.design.n == design.n


def test_unknown_criterion():
    with pytest.raises(ValueError):
        run(sine_exp, _design(), StoppingRule(), "pi", small_config())
    with pytest.raises(ValueError):
        run(sine_exp, _design(), StoppingRule(), "entropy", None)


# -- small worked cases ----------------------------------------------------------

def test_five_point_unit_grid():
    np.testing.assert_array_equal(generate_candidates((0,), (1,), 5)[:, 0], [0, 0.25, 0.5, 0.75, 1])


def test_two_dimensional_latin_hypercube_and_seeding():
    pts = generate_candidates((0, 0), (1, 1), 15, "latin-hypercube", seed=8)
    for j in range(2):
        assert sorted(np.floor(pts[:, j] * 15).astype(int).tolist()) == list(range(15))
    again = generate_candidates((0, 0), (1, 1), 15, "latin-hypercube", seed=8)
    np.testing.assert_array_equal(pts, again)


def _fixed_state(candidates, design=None, paths=200):
    cfg = small_config(paths=paths)
    design = design or _design()
    grid = generate_candidates(cfg.lower, cfg.upper, cfg.grid_size)
    return prepare_state(design, CovarianceSpec(4.0, (1.0,)), grid, np.asarray(candidates, float), cfg)


def test_single_candidate_is_returned():
    x, scores = iago_suggest(_fixed_state([[2.7]]))
    assert x.tolist() == [2.7] and scores.shape == (1,)


def test_candidates_on_design_points_fall_back_to_the_tie_rule():
    design = _design()
    state = _fixed_state(design.points[::-1])
    x, scores = iago_suggest(state)
    np.testing.assert_allclose(scores, state.entropy)
    # equal scores: lowest Kriging mean wins, which is the best observed value
    assert x.tolist() == design.points[np.argmin(design.values)].tolist()
    x, ei = ego_suggest(state)
    np.testing.assert_array_equal(ei, 0.0)
    assert x.tolist() == design.points[np.argmin(design.values)].tolist()


def test_ei_goes_to_the_unexplored_basin():
    # the design covers the left half only; its best point sits near the left minimizer
    x = np.array([0.3, 1.3, 2.4, 3.4])
    design = Design(x[:, None], sine_exp(x))
    cfg = small_config(grid_size=100, n_candidates=100)
    spec = opt.fit_spec(design, cfg)
    state = prepare_state(design, spec, generate_candidates(cfg.lower, cfg.upper, 100),
                          generate_candidates(cfg.lower, cfg.upper, 100), cfg)
    best = x[np.argmin(design.values)]
    xe, _ = ego_suggest(state)
    assert abs(xe[0] - best) > 0.05 * 6.5
    assert xe[0] > 3.4


def test_refinement_stays_in_the_box():
    for edge in ([[0.0]], [[6.5]]):
        state = _fixed_state(edge, Design(np.array([[3.0], [3.5]]), [0.0, 0.1]))
        x, _ = ego_suggest(state)
        assert 0.0 <= x[0] <= 6.5


def test_zero_margin_probability_is_a_direct_scan():
    state = _state()
    grid_paths = state.ensemble.restrict("grid")
    f_min = state.system.predict(state.grid)[0].min()
    direct = np.mean([row.min() < f_min for row in grid_paths])
    assert stopping_probability(state, 0.0) == direct
    assert direct > 0.5


def test_entropy_beats_ei_after_one_evaluation():
    from iago.bench import SINE_EXP, initial_design

    cfg = small_config(grid_size=100, n_candidates=100, paths=500)
    grid = generate_candidates(cfg.lower, cfg.upper, 100)
    cand = generate_candidates(cfg.lower, cfg.upper, 100)
    after = []
    for seed in range(10):
        design = initial_design(SINE_EXP, 3, seed)
        spec = opt.fit_spec(design, cfg)
        state = prepare_state(design, spec, grid, cand, small_config(
            grid_size=100, n_candidates=100, paths=500, seed=seed))
        picks = [iago_suggest(state)[0], ego_suggest(state, refine=False)[0]]
        post = small_config(grid_size=100, n_candidates=100, paths=3000, seed=1000 + seed)
        after.append([prepare_state(design.append(p, sine_exp(p)), spec, grid, cand, post).entropy
                      for p in picks])
    after = np.array(after)
    assert np.sum(after[:, 0] < after[:, 1]) >= 6
    assert np.median(after[:, 0] - after[:, 1]) < 0


def test_entropy_falls_every_two_iterations():
    from iago.bench import SINE_EXP, initial_design

    curves = []
    for seed in range(10):
        hist = run(sine_exp, initial_design(SINE_EXP, 3, seed), StoppingRule(max_evaluations=6),
                   "entropy", small_config(paths=300, seed=seed))
        curves.append([r.entropy for r in hist.records])
    med = np.median(curves, axis=0)
    for k in range(5):
        assert med[k + 2] < med[k]


def test_one_evaluation_per_iteration():
    calls = []

    def counted(x):
        calls.append(np.array(x))
        return sine_exp(x)

    for criterion in ("entropy", "ei"):
        calls.clear()
        hist = run(counted, _design(), StoppingRule(max_evaluations=3), criterion, small_config())
        assert len(calls) == len(hist) - 1
        assert [r.n_evaluations for r in hist.records] == list(range(4, 4 + len(hist)))
        for p in calls:
            assert 0.0 <= p[0] <= 6.5
            assert not np.any(np.all(_design().points == p, axis=1))


def test_resampling_a_point_mass_stays_close():
    pmf = MinimizerPmf(np.array([[0.4, 0.6]]), [1.0])
    bw = np.array([0.02, 0.05])
    pts = resample_grid(pmf, (0, 0), (1, 1), 500, seed=2, explore=0.0, bandwidth=bw)
    inside = np.all(np.abs(pts - [0.4, 0.6]) <= 3 * bw, axis=1)
    # Gaussian kernel: about 0.5% of draws land past three bandwidths on some axis
    assert inside.mean() >= 0.98
    assert np.all(np.abs(pts - [0.4, 0.6]) <= 5 * bw)


def test_resampling_a_uniform_pmf_looks_uniform():
    atoms = np.linspace(0, 1, 50)[:, None]
    pmf = MinimizerPmf(atoms, np.full(50, 1 / 50))
    a = resample_grid(pmf, (0,), (1,), 1000, seed=5)
    assert stats.kstest(a[:, 0], "uniform").statistic < 0.1
    np.testing.assert_array_equal(a, resample_grid(pmf, (0,), (1,), 1000, seed=5))


def test_final_record_carries_a_larger_report_pmf():
    hist = run(sine_exp, _design(), StoppingRule(max_evaluations=1), "entropy",
               small_config(report_paths=2000))
    assert hist[0].report_pmf is None
    report = hist.report_pmf()
    assert sum(report.probabilities) == pytest.approx(1.0)
    # 2000 paths resolve probabilities in steps of 1/2000
    counts = np.asarray(report.probabilities) * 2000
    np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
    assert np.abs(report.probabilities - hist.pmf().probabilities).max() < 0.2
    off = run(sine_exp, _design(), StoppingRule(max_evaluations=0), "entropy",
              small_config(report_paths=0))
    assert off.final.report_pmf is None
