import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hthc import glm
from hthc.baselines import reference_scd
from hthc.coordinator import (TrainConfig, TraceRow, full_duality_gap,
                              select_top_m, suboptimality, train,
                              write_trace_csv, TRACE_FIELDS)
from hthc.data import DataMatrix, ModelState, synth_lasso
from hthc.gap_task import GapTaskConfig
from hthc.solver_task import SolverConfig


def sort_oracle(z, m):
    """Brute-force selection: stable sort by (-score, index)."""
    order = sorted(range(len(z)), key=lambda i: (-z[i], i))
    return order[:m]


# ---------------------------------------------------------------------------
# select_top_m.
# ---------------------------------------------------------------------------

def test_select_top_m_basic():
    got = select_top_m(np.array([0.1, 0.5, 0.3]), 2)
    assert set(got.tolist()) == {1, 2}


def test_select_top_m_all_ties_takes_lowest_indices():
    got = select_top_m(np.full(7, 2.5), 3)
    assert sorted(got.tolist()) == [0, 1, 2]


def test_select_top_m_validation():
    with pytest.raises(ValueError):
        select_top_m(np.zeros(3), 0)
    with pytest.raises(ValueError):
        select_top_m(np.zeros(3), 4)


def test_select_top_m_accepts_gap_memory():
    from hthc.data import GapMemory

    mem = GapMemory.zeros(5)
    mem.z[:] = [0.0, 2.0, 1.0, 2.0, 0.5]
    assert select_top_m(mem, 2).tolist() == [1, 3]


def test_select_top_m_threshold_property(rng):
    z = rng.standard_normal(1000)
    got = select_top_m(z, 137)
    chosen = set(got.tolist())
    rest = [z[j] for j in range(1000) if j not in chosen]
    assert min(z[i] for i in chosen) >= max(rest)
    assert got.tolist() == sort_oracle(z, 137)


@given(st.integers(0, 2**31 - 1), st.integers(1, 50), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_select_top_m_matches_sort_oracle(seed, n, levels):
    gen = np.random.default_rng(seed)
    z = gen.integers(0, levels, size=n).astype(np.float64)  # heavy ties
    m = int(gen.integers(1, n + 1))
    assert select_top_m(z, m).tolist() == sort_oracle(z, m)


# ---------------------------------------------------------------------------
# TrainConfig.
# ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=10, batch_frac=0.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_frac=0.0)
    with pytest.raises(ValueError):
        TrainConfig(tol=0.0)
    with pytest.raises(ValueError):
        TrainConfig(r_tilde=1.5)


def test_resolve_batch_size():
    assert TrainConfig(batch_size=7).resolve_batch_size(100) == 7
    assert TrainConfig(batch_frac=0.25).resolve_batch_size(100) == 25
    assert TrainConfig().resolve_batch_size(100) == 15  # defaults to r_tilde
    assert TrainConfig(batch_size=500).resolve_batch_size(100) == 100


def test_deterministic_autodetect():
    assert TrainConfig().is_deterministic()
    assert not TrainConfig(solver=SolverConfig(t_b=2)).is_deterministic()
    assert not TrainConfig(gap=GapTaskConfig(t_a=2)).is_deterministic()
    assert TrainConfig(gap=GapTaskConfig(t_a=2),
                       deterministic=True).is_deterministic()


# ---------------------------------------------------------------------------
# Certificate evaluation.
# ---------------------------------------------------------------------------

def _lasso_instance(n=30, d=12, seed=2):
    matrix, targets, _ = synth_lasso(n=n, d=d, support_frac=0.3, noise_sd=0.05,
                                     seed=seed, dtype=np.float64)
    problem = glm.with_lipschitz_bound(glm.lasso_problem(0.08, n), targets)
    return matrix, targets, problem


def test_full_gap_zero_when_threshold_dominates():
    gen = np.random.default_rng(5)
    values = gen.standard_normal((6, 4))
    matrix = DataMatrix(values, dtype=np.float64)
    y = gen.standard_normal(6)
    lam = float(np.abs(y @ values).max()) * 1.001
    problem = glm.with_lipschitz_bound(glm.lasso_problem(lam, 4), y)
    state = ModelState.zeros(6, 4, np.float64)
    assert full_duality_gap(matrix, state, problem, y) == 0.0


def test_full_gap_matches_primal_minus_dual(rng):
    matrix, targets, problem = _lasso_instance()
    alpha = rng.uniform(-0.5, 0.5, size=matrix.n)
    state = ModelState(alpha=alpha, v=matrix.values @ alpha, epoch=0)
    gap = full_duality_gap(matrix, state, problem, targets)
    w = glm.w_from_v(problem, state.v, targets)
    dots = w @ matrix.values
    primal = glm.primal_objective(problem, alpha, state.v, targets)
    dual = glm.dual_objective(problem, w, dots, targets)
    assert abs(gap - (primal - dual)) <= 1e-8 * max(1.0, abs(primal))


# ---------------------------------------------------------------------------
# train.
# ---------------------------------------------------------------------------

def test_train_infinite_tol_single_epoch():
    matrix, targets, problem = _lasso_instance()
    cfg = TrainConfig(batch_frac=0.5, tol=1e30, max_epochs=50)
    res = train(matrix, targets, problem, cfg)
    assert res.converged and len(res.trace) == 1
    assert res.stop_reason == "converged"


def test_train_full_batch_no_gap_task_matches_reference():
    matrix, targets, _ = synth_lasso(n=50, d=20, support_frac=0.08,
                                     noise_sd=0.01, seed=7, dtype=np.float64)
    lam = 0.2 * float(np.abs(targets @ matrix.values).max())
    problem = glm.lasso_problem(lam, 50)
    cfg = TrainConfig(batch_size=50, tol=1e-7, max_epochs=400,
                      gap=GapTaskConfig(t_a=0))
    res = train(matrix, targets, problem, cfg)
    assert res.converged
    ref = reference_scd(matrix, targets, problem, tol=1e-10, max_passes=2000)
    assert ref.converged
    assert abs(res.final_objective - ref.f_star) <= 1e-4 * abs(ref.f_star)
    assert all(r.updates_a == 0 for r in res.trace)


def test_train_reaches_tolerance_with_selection():
    matrix, targets, _ = synth_lasso(n=1000, d=200, support_frac=0.05,
                                     noise_sd=0.01, seed=11, dtype=np.float64)
    targets = targets / np.linalg.norm(targets)
    lam = 0.1 * float(np.abs(targets @ matrix.values).max())
    problem = glm.lasso_problem(lam, 1000)
    cfg = TrainConfig(batch_frac=0.15, tol=1e-5, max_epochs=500, seed=1,
                      check_consistency=True)
    res = train(matrix, targets, problem, cfg)
    assert res.converged and res.final_gap <= 1e-5
    ref = reference_scd(matrix, targets, problem, tol=1e-9, max_passes=2000)
    assert ref.converged
    assert abs(res.final_objective - ref.f_star) <= 1e-4 * max(1e-12, abs(ref.f_star))


def test_train_timeout_flags_partial_result():
    matrix, targets, problem = _lasso_instance(n=60, d=24, seed=3)
    cfg = TrainConfig(batch_size=2, tol=1e-300, max_epochs=10_000,
                      timeout_s=0.05)
    res = train(matrix, targets, problem, cfg)
    assert not res.converged
    assert res.stop_reason == "timeout"


def test_train_epoch_limit():
    matrix, targets, problem = _lasso_instance()
    cfg = TrainConfig(batch_size=1, tol=1e-300, max_epochs=3)
    res = train(matrix, targets, problem, cfg)
    assert not res.converged and res.stop_reason == "max_epochs"
    assert len(res.trace) == 3
    assert res.trace[-1].duality_gap is not None


def test_train_never_claims_success_above_tol():
    matrix, targets, problem = _lasso_instance(n=40, d=16, seed=13)
    for tol in (1e-3, 1e-5, 1e-7):
        cfg = TrainConfig(batch_frac=0.3, tol=tol, max_epochs=2000)
        res = train(matrix, targets, problem, cfg)
        if res.converged:
            assert res.final_gap <= tol


def test_train_gap_eval_cadence():
    matrix, targets, problem = _lasso_instance()
    cfg = TrainConfig(batch_frac=0.4, tol=1e-9, max_epochs=7, gap_eval_every=3)
    res = train(matrix, targets, problem, cfg)
    evaluated = [r.epoch for r in res.trace if r.duality_gap is not None]
    assert evaluated == [2, 5, 6]  # every 3rd epoch plus the final one


def test_train_coverage_reported():
    matrix, targets, problem = _lasso_instance(n=40, d=10)
    cfg = TrainConfig(batch_frac=0.5, tol=1e-8, max_epochs=50, r_tilde=0.2)
    res = train(matrix, targets, problem, cfg)
    for row in res.trace:
        assert row.coverage_a == pytest.approx(row.updates_a / 40)
        assert row.updates_a == 8  # deterministic quota: round(0.2 * 40)


def test_train_with_update_groups():
    # Full loop with t_b=2 groups of v_b=2 workers each.
    matrix, targets, _ = synth_lasso(n=120, d=48, support_frac=0.08,
                                     noise_sd=0.01, seed=23, dtype=np.float64)
    targets = targets / np.linalg.norm(targets)
    lam = 0.15 * float(np.abs(targets @ matrix.values).max())
    problem = glm.lasso_problem(lam, 120)
    cfg = TrainConfig(batch_frac=0.4, tol=1e-5, max_epochs=600, seed=3,
                      solver=SolverConfig(t_b=2, v_b=2),
                      gap=GapTaskConfig(t_a=1, seed=3),
                      check_consistency=True)
    res = train(matrix, targets, problem, cfg)
    assert res.converged
    ref = reference_scd(matrix, targets, problem, tol=1e-9, max_passes=3000)
    assert abs(res.final_objective - ref.f_star) <= 1e-4 * max(1e-12,
                                                               abs(ref.f_star))


def test_train_single_precision_end_to_end():
    matrix, targets, _ = synth_lasso(n=300, d=80, support_frac=0.1,
                                     noise_sd=0.01, seed=31, dtype=np.float32)
    targets = (targets / np.linalg.norm(targets)).astype(np.float32)
    lam = 0.15 * float(np.abs(targets @ matrix.values).max())
    problem = glm.lasso_problem(lam, 300)
    cfg = TrainConfig(batch_frac=0.2, tol=1e-4, max_epochs=2000, seed=4,
                      check_consistency=True)
    res = train(matrix, targets, problem, cfg)
    assert res.state.alpha.dtype == np.float32
    assert res.converged and res.final_gap <= 1e-4


def test_train_input_validation():
    matrix, targets, problem = _lasso_instance()
    import dataclasses
    wrong_n = dataclasses.replace(problem, n=matrix.n + 1)
    with pytest.raises(ValueError, match="does not match"):
        train(matrix, targets, wrong_n, TrainConfig())
    with pytest.raises(ValueError, match="targets"):
        train(matrix, targets[:-1], problem, TrainConfig())
    with pytest.raises(ValueError, match="lasso requires targets"):
        train(matrix, None, problem, TrainConfig())


def test_train_overlap_liveness_racing():
    # Whenever the scoring task has workers and the solver epoch is not
    # instantaneous, at least one score is refreshed per epoch.
    matrix, targets, _ = synth_lasso(n=400, d=600, support_frac=0.1,
                                     noise_sd=0.02, seed=19, dtype=np.float64)
    problem = glm.lasso_problem(0.05, 400)
    cfg = TrainConfig(batch_frac=0.5, tol=1e-9, max_epochs=15, seed=2,
                      solver=SolverConfig(t_b=2),
                      gap=GapTaskConfig(t_a=2, seed=2))
    res = train(matrix, targets, problem, cfg)
    assert not cfg.is_deterministic()
    assert all(r.updates_a >= 1 for r in res.trace)


def test_train_wild_mode_certifies_honestly():
    matrix, targets, problem = _lasso_instance(n=60, d=30, seed=21)
    cfg = TrainConfig(batch_frac=0.5, tol=1e-6, max_epochs=800, seed=5,
                      solver=SolverConfig(t_b=2, mode="wild"))
    res = train(matrix, targets, problem, cfg)
    # Certified gap is recomputed from alpha, so the reported value is a
    # true certificate even though v may have drifted.
    state = res.state
    v_true = matrix.values @ state.alpha
    w = glm.w_from_v(problem, v_true, targets)
    dots = w @ matrix.values
    true_gap = float(np.sum(glm.gap_vector(problem, dots, state.alpha)))
    assert res.final_gap == pytest.approx(true_gap, rel=1e-9, abs=1e-12)
    true_obj = glm.primal_objective(problem, state.alpha, v_true, targets)
    assert res.final_objective == pytest.approx(true_obj, rel=1e-12)


# ---------------------------------------------------------------------------
# Suboptimality.
# ---------------------------------------------------------------------------

def _mk_row(epoch, objective):
    return TraceRow(epoch=epoch, wall_s=0.0, duality_gap=None, updates_a=0,
                    coverage_a=0.0, updates_b=0, mode="hthc-atomic",
                    objective=objective)


def test_suboptimality_basic():
    rows = [_mk_row(0, 3.0), _mk_row(1, 1.5), _mk_row(2, None), _mk_row(3, 1.0)]
    out = suboptimality(rows, f_star=1.0)
    assert out == [2.0, 0.5, None, 0.0]
    assert rows[0].suboptimality == 2.0


def test_suboptimality_at_reference_is_tiny():
    rows = [_mk_row(0, 1.0 + 5e-10)]
    out = suboptimality(rows, f_star=1.0)
    assert out[0] <= 1e-9


def test_suboptimality_rejects_bad_reference():
    rows = [_mk_row(0, 1.0)]
    with pytest.raises(ValueError):
        suboptimality(rows, f_star=2.0)


def test_suboptimality_shift_invariance():
    rows_a = [_mk_row(0, 3.0), _mk_row(1, 2.0)]
    rows_b = [_mk_row(0, 3.0 + 10.0), _mk_row(1, 2.0 + 10.0)]
    assert suboptimality(rows_a, 1.5) == suboptimality(rows_b, 11.5)


def test_suboptimality_monotone_for_single_lane_run():
    matrix, targets, problem = _lasso_instance(n=50, d=20, seed=17)
    cfg = TrainConfig(batch_size=50, tol=1e-10, max_epochs=60,
                      gap=GapTaskConfig(t_a=0))
    res = train(matrix, targets, problem, cfg)
    ref = reference_scd(matrix, targets, problem, tol=1e-11, max_passes=3000)
    subs = [s for s in suboptimality(res.trace, ref.f_star) if s is not None]
    assert subs[0] >= subs[-1]


# ---------------------------------------------------------------------------
# Trace CSV.
# ---------------------------------------------------------------------------

def test_trace_csv_schema(tmp_path):
    matrix, targets, problem = _lasso_instance()
    cfg = TrainConfig(batch_frac=0.4, tol=1e-4, max_epochs=20)
    res = train(matrix, targets, problem, cfg)
    path = tmp_path / "trace.csv"
    write_trace_csv(res.trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(TRACE_FIELDS)
    assert len(lines) == len(res.trace) + 1
