import functools

import numpy as np
import pytest

from errors import ConfigurationError
from experiment_cli import ExperimentConfig, _default_config_path, derive_seed, load_config, run_experiment
from experiments import (EXPERIMENTS, STREAM_STRIDE, ExperimentContext, ExperimentOutcome, get_experiment)
from replicate_scheduler import ReplicateScheduler
from stats_verify import allowance_report


def _config(experiment, samples=None, replicates=2, law=None, **params):
    return ExperimentConfig(experiment=experiment, samples=samples, seed=777, workers=1, replicates=replicates,
                            law=law or {"name": "simple"}, params={k: str(v) for k, v in params.items()})


def _names(record, prefix):
    return [r for r in record.reports if r.name.startswith(prefix)]


def test_registry():
    assert len(EXPERIMENTS) == 11
    assert get_experiment("fdd-marginal").id == "fdd-marginal"
    with pytest.raises(ConfigurationError):
        get_experiment("unknown")
    for experiment_id in EXPERIMENTS:
        assert _default_config_path(experiment_id) is not None


def test_context_streams_are_disjoint():
    config = _config("killed-geometric", replicates=3)
    ctx = ExperimentContext(config=config, seed_for=functools.partial(derive_seed, config.seed),
                            scheduler=ReplicateScheduler(workers=1, show_progress=False))
    first, second = ctx.next_stream(), ctx.next_stream()
    seeds_a = [t.seed for t in ctx.tasks(30, first)]
    seeds_b = [t.seed for t in ctx.tasks(30, second)]
    assert seeds_a[0] == derive_seed(777, first * STREAM_STRIDE)
    assert not set(seeds_a) & set(seeds_b)
    assert [t.n_samples for t in ctx.tasks(30, first)] == [10, 10, 10]
    coordinator = ctx.rng(first).random()
    assert coordinator == np.random.default_rng(derive_seed(777, first * STREAM_STRIDE + STREAM_STRIDE - 1)).random()


def test_outcome_tables_and_counts():
    outcome = ExperimentOutcome()
    outcome.add(allowance_report("ok", 1.0, 1.0, 0.0))
    outcome.table("t", ["a", "b"], [[1, 0.5]])
    outcome.count("law", np.array([True, False, False]))
    assert outcome.passed
    assert outcome.render_tables() == {"t.csv": "a,b\n1,0.5\n"}
    assert (outcome.capped["law"], outcome.sampled["law"]) == (1, 3)


def test_hitting_asymptotics_full_config():
    record = run_experiment(load_config("hitting-asymptotics", _default_config_path("hitting-asymptotics"),
                                        workers=1))
    assert record.passed
    assert len(_names(record, "hitting identity")) == 9
    assert "hitting_asymptotics.csv" in record.tables
    assert record.tables["green_simple.csv"].startswith("x,y,green,error_bound,strip_size\n50,50,")
    assert record.tables["renewal_ascending_simple.csv"].count("\n") == 202
    assert record.tables["renewal_descending_simple.csv"].startswith("x,h,H,convention,truncation_error\n")


def test_green_convergence_small():
    record = run_experiment(_config("green-convergence", N=40, u="0.25, 0.5, 1.0"))
    assert len(record.reports) == 9
    assert record.tables["green_simple.csv"].count("\n") == 10
    assert record.passed


def test_quadrature_aform_default_grid():
    record = run_experiment(_config("quadrature-aform"))
    assert record.reports[0].n == 100
    assert record.passed


def test_killed_geometric_small():
    record = run_experiment(_config("killed-geometric", samples=20000, N=10))
    assert record.passed
    assert record.sampled["simple N=10"] == 20000
    assert record.capped["simple N=10"] == 0


def test_killed_geometric_rejects_heavy_tails():
    with pytest.raises(ConfigurationError):
        run_experiment(_config("killed-geometric", samples=100, law={"name": "powertail-1.5"}, N=10))


def test_conditional_exponential_small():
    record = run_experiment(_config("conditional-exponential", samples=20000, law={"name": "simple"}, N=100))
    assert record.passed
    assert "conditional_exponential_simple.csv" in record.tables


def test_kac_prediction_table():
    record = run_experiment(_config("kac-moments", samples=2000, N=20, u="0.5, 1.0", max_order=3))
    lines = record.tables["kac_predictions_simple.csv"].splitlines()
    assert lines[0] == "u_list,m,prediction"
    rows = [line.split(",") for line in lines[1:]]
    assert [(u_list, int(m)) for u_list, m, _ in rows] == [("1", 1), ("1", 1), ("1 1", 2), ("0.5 1", 2),
                                                          ("1 1 1", 3), ("0.333333 0.666667 1", 3)]
    assert float(rows[4][2]) == pytest.approx(48.0)


def test_knight_identity_small():
    record = run_experiment(_config("knight-identity", samples=10000, m=1, n="1, 2"))
    assert len(_names(record, "knight identity")) == 6
    kernel = [r for r in record.reports if r.name.startswith(("kernel", "extinction"))]
    assert len(kernel) == 5 and all(r.passed for r in kernel)
    assert record.tables["knight_pmf_m1_n1.csv"].startswith("state,probability\n0,0.0\n1,0.5\n")
    assert [name for name in record.tables if name.startswith("histogram_")] == ["histogram_01_m_1.csv"]
    assert len(record.samples["samples_01_m_1"]) == 1000
    assert record.notes == {"norming simple": "closed form c(n) = sigma sqrt(n), sigma^2 = 1"}
    assert record.passed


def test_reflected_equivalence_small():
    record = run_experiment(_config("reflected-equivalence", samples=3000, law={"laws": "simple, lazy"},
                                    levels="2, 5", M=10))
    assert len(record.reports) == 4
    assert record.passed


def test_reproducibility_across_workers():
    config = _config("reproducibility", samples=2000, target="killed-geometric", workers_list="2", N=8)
    record = run_experiment(config)
    assert [r.statistic for r in record.reports] == [0.0, 0.0]
    assert record.passed


def test_reproducibility_cannot_target_itself():
    with pytest.raises(ConfigurationError):
        run_experiment(_config("reproducibility", target="reproducibility"))


def test_unknown_engine():
    with pytest.raises(ConfigurationError):
        run_experiment(_config("killed-geometric", samples=10, N=5, engine="teleport"))


@pytest.mark.slow
@pytest.mark.parametrize("experiment_id", sorted(EXPERIMENTS))
def test_acceptance_run(experiment_id, tmp_path):
    config = load_config(experiment_id, _default_config_path(experiment_id), output_dir=str(tmp_path))
    assert run_experiment(config).passed
