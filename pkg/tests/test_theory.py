import numpy as np
import pytest

from mavfl.config import ExperimentConfig
from mavfl.harness import theory_report
from mavfl.simulation import Simulation
from mavfl.tasks import make_task, quadratic_from_matrices
from mavfl.theory import (ConstantEstimates, build_trace, drift_bound_check, estimate_constants,
                          participation_identity_check, rate_bound_check, trace_constants)


def _quadratic_cfg(epochs=3, rounds=20, seed=0, kmh=60.0):
    return (ExperimentConfig(seed=seed, rounds=rounds, record_trace=True)
            .with_section("task", kind="quadratic", samples_per_vehicle=100)
            .with_section("train", learning_rate=0.01, local_epochs=epochs, full_batch=True)
            .with_section("traffic", velocity_kmh=kmh))


def _trace(cfg):
    sim = Simulation(cfg)
    sim.run()
    return sim, build_trace(sim.traces, cfg.train.local_epochs)


def test_trace_has_one_entry_per_local_step():
    sim, tr = _trace(_quadratic_cfg(epochs=3, rounds=7))
    assert len(tr) == 21
    assert tr.round_of_step[:4] == [0, 0, 0, 1]


def test_virtual_model_matches_aggregate_at_round_boundaries():
    sim, tr = _trace(_quadratic_cfg(epochs=2, rounds=5))
    for r, rt in enumerate(sim.traces):
        assert np.allclose(tr.virtual[2 * r] if rt.survivors else rt.global_model, rt.global_model, atol=1e-14)


def test_drift_bound_single_epoch_is_exactly_zero():
    sim, tr = _trace(_quadratic_cfg(epochs=1))
    est = trace_constants(tr, sim.task)
    rep = drift_bound_check(tr, 0.01, 1, est)
    assert all(x == 0.0 for x in rep.lhs) and all(x == 0.0 for x in rep.rhs)
    assert rep.margin == 0.0 and rep.holds


@pytest.mark.parametrize("epochs", [3, 5])
def test_drift_bound_margin_non_negative(epochs):
    sim, tr = _trace(_quadratic_cfg(epochs=epochs))
    rep = drift_bound_check(tr, 0.01, epochs, trace_constants(tr, sim.task))
    assert rep.holds and rep.margin >= 0


def test_drift_bound_detects_violation_with_understated_constant():
    sim, tr = _trace(_quadratic_cfg(epochs=3))
    tiny = ConstantEstimates(1.0, 1e-12, 0.0, 0.0, 0.0)
    assert not drift_bound_check(tr, 0.01, 3, tiny).holds


def test_closed_form_constants_on_quadratic():
    sim, tr = _trace(_quadratic_cfg())
    est = trace_constants(tr, sim.task)
    assert est.source == "closed-form"
    assert est.smoothness == pytest.approx(sim.task.smoothness())
    assert est.f_inf == pytest.approx(sim.task.global_loss(sim.task.optimum()))
    assert est.noise_var == 0.0


def test_rate_bound_bound_holds_and_reports_exclusions():
    sim, tr = _trace(_quadratic_cfg(rounds=30, kmh=80.0))
    est = trace_constants(tr, sim.task)
    rep = rate_bound_check(tr, est, 0.01, 3, sim.task)
    assert rep.holds and rep.lhs <= rep.rhs
    assert rep.excluded_steps == 3 * rep.excluded_rounds


def test_rate_bound_empty_trace_rejected():
    sim, tr = _trace(_quadratic_cfg(rounds=0))
    with pytest.raises(ValueError):
        rate_bound_check(tr, ConstantEstimates(1, 1, 0, 0, 0), 0.01, 3, sim.task)


def test_probe_estimates_grow_with_more_probes():
    task = make_task("logistic", 0, 4, 60, 3)
    small = estimate_constants(task, 100, np.random.default_rng(9))
    large = estimate_constants(task, 300, np.random.default_rng(9))
    for name in ("smoothness", "grad_bound_sq", "noise_var", "divergence_sq"):
        assert getattr(large, name) >= getattr(small, name)


def test_probe_count_floor():
    with pytest.raises(ValueError):
        estimate_constants(make_task("quadratic", 0, 2, 10, 2), 50)


def test_probe_smoothness_below_exact_on_quadratic():
    # finite-difference ratios of a quadratic never exceed the largest Hessian eigenvalue
    task = make_task("quadratic", 0, 4, 50, 5)
    est = estimate_constants(task, 100, np.random.default_rng(0), full_batch=True)
    assert est.smoothness <= task.smoothness() * (1 + 1e-12)
    assert est.noise_var == 0.0


def test_identity_exact_when_everyone_uploads():
    rep = participation_identity_check(10_000, 5, 1.0, np.random.default_rng(0))
    assert rep.max_rel_error == 0.0 and rep.conditioned_bias == 0.0 and rep.empty_fraction == 0.0


def test_identity_single_vehicle():
    g = np.array([[2.0, -1.0]])
    rep = participation_identity_check(40_000, 1, 0.5, np.random.default_rng(1), gradients=g)
    assert rep.max_rel_error < 0.02
    assert rep.empty_fraction == pytest.approx(0.5, abs=0.01)


def test_conditioning_bias_matches_closed_form():
    # E[1_k | some upload] = p / (1 - (1 - p)^K) for every k
    rep = participation_identity_check(100_000, 5, 0.2, np.random.default_rng(2))
    assert rep.conditioned_bias == pytest.approx(0.4873869585911471, abs=0.02)


def test_identity_needs_enough_trials():
    with pytest.raises(ValueError):
        participation_identity_check(100, 5, 0.5)
    with pytest.raises(ValueError):
        participation_identity_check(10_000, 5, 0.0)


def test_theory_report_layout():
    cfg = _quadratic_cfg(rounds=5)
    rep = theory_report(cfg, identity_trials=10_000)
    assert {"constants", "drift_bound", "rate_bound", "identity", "probe_constants"} <= set(rep)
    assert [r["p"] for r in rep["identity"]] == [0.2, 0.6, 1.0]


def test_probe_fallback_for_non_quadratic():
    cfg = _quadratic_cfg(rounds=3).with_section("task", kind="logistic", samples_per_vehicle=50)
    sim, tr = _trace(cfg)
    est = trace_constants(tr, sim.task)
    assert est.source == "visited+probe" and est.smoothness > 0


def test_quadratic_from_matrices_roundtrip():
    # Hessian = mean over blocks of A^T A / n = (I / 2 + 4 I / 2) / 2
    task = quadratic_from_matrices([(np.eye(2), np.ones(2)), (2 * np.eye(2), np.zeros(2))])
    assert task.smoothness() == pytest.approx(1.25)
