import numpy as np
import pytest

from dts_forge.bench import (
    BenchConfig,
    TaskDataset,
    adr,
    evaluate,
    fine_tune,
    generate_tasks,
    pretrain,
    run_suite,
    task_embedding_vector,
)
from dts_forge.errors import InvalidConfig, ShapeMismatch
from dts_forge.prng import Xoshiro256StarStar
from dts_forge.tensor_store import TensorMap

SMALL = dict(train_per_class=40, test_per_class=20, pretrain_steps=60, finetune_steps=80)


def test_prng_reference_stream():
    # first outputs for seed 5, frozen from the canonical C implementation
    rng = Xoshiro256StarStar(5)
    first = [rng.next_u64() for _ in range(5)]
    assert first == [
        5320248114040590185,
        11106458710588138716,
        11982022302389484462,
        15154927347600407493,
        9531689329179025993,
    ]
    rng2 = Xoshiro256StarStar(5)
    assert [rng2.next_u64() for _ in range(5)] == first


def test_generate_tasks_deterministic():
    cfg = BenchConfig(seed=7, **SMALL)
    t1 = generate_tasks(cfg)
    t2 = generate_tasks(cfg)
    for a, b in zip(t1, t2):
        assert a.name == b.name
        assert np.array_equal(a.train_x, b.train_x)
        assert np.array_equal(a.test_y, b.test_y)


def test_generate_tasks_rejects_degenerate_config():
    with pytest.raises(InvalidConfig):
        generate_tasks(BenchConfig(classes_per_task=1))
    with pytest.raises(InvalidConfig):
        BenchConfig(r_sweep=[0.0]).validate()
    with pytest.raises(InvalidConfig):
        BenchConfig(unseen_holdout=9).validate()


def test_similar_pair_is_more_transferable():
    """Model fine-tuned on task0 does much better on its near-twin task1
    than on the rotated tasks; frozen property of the generator."""
    cfg = BenchConfig(seed=1, **SMALL)
    tasks = generate_tasks(cfg)
    theta0 = pretrain(cfg, tasks)
    model0 = fine_tune(theta0, tasks[0], cfg)
    acc_on_twin = evaluate(model0, tasks[1])
    acc_on_rotated = max(evaluate(model0, tasks[2]), evaluate(model0, tasks[3]))
    assert acc_on_twin > acc_on_rotated + 10.0
    # embedding cosine agrees with the construction
    e = [task_embedding_vector(t) for t in tasks]
    assert np.dot(e[0], e[1]) > max(np.dot(e[0], e[2]), np.dot(e[0], e[3]))


def test_finetuned_models_fit_their_task():
    for seed in (1, 2, 3, 4, 5):
        cfg = BenchConfig(seed=seed)
        tasks = generate_tasks(cfg)
        theta0 = pretrain(cfg, tasks)
        for task in tasks:
            assert evaluate(fine_tune(theta0, task, cfg), task) >= 90.0


def test_pretrain_deterministic_and_zero_steps():
    cfg = BenchConfig(seed=3, **SMALL)
    tasks = generate_tasks(cfg)
    assert pretrain(cfg, tasks) == pretrain(cfg, tasks)
    frozen = BenchConfig(seed=3, **{**SMALL, "pretrain_steps": 0})
    init1 = pretrain(frozen, tasks)
    init2 = pretrain(frozen, tasks)
    assert init1 == init2
    trained = pretrain(cfg, tasks)
    assert trained != init1


def test_evaluate_constant_predictor_scores_chance():
    cfg = BenchConfig(seed=4, **SMALL)
    task = generate_tasks(cfg)[0]
    model = TensorMap({
        "dense1.weight": np.zeros((cfg.input_dim, cfg.hidden_dim), np.float32),
        "dense1.bias": np.zeros(cfg.hidden_dim, np.float32),
        "dense2.weight": np.zeros((cfg.hidden_dim, cfg.classes_per_task), np.float32),
        "dense2.bias": np.zeros(cfg.classes_per_task, np.float32),
    })
    # all-zero logits, argmax ties resolve to class 0 on a balanced set
    assert evaluate(model, task) == pytest.approx(25.0)
    assert evaluate(model, task) == evaluate(model, task)


def test_evaluate_shape_mismatch():
    cfg = BenchConfig(seed=5, **SMALL)
    task = generate_tasks(cfg)[0]
    bad = TensorMap({
        "dense1.weight": np.zeros((cfg.input_dim + 1, cfg.hidden_dim), np.float32),
        "dense1.bias": np.zeros(cfg.hidden_dim, np.float32),
        "dense2.weight": np.zeros((cfg.hidden_dim, cfg.classes_per_task), np.float32),
        "dense2.bias": np.zeros(cfg.classes_per_task, np.float32),
    })
    with pytest.raises(ShapeMismatch):
        evaluate(bad, task)


def test_adr_formula():
    assert adr(90.69, 90.32) == pytest.approx(0.41, abs=0.005)
    assert adr(90.69, 90.69) == 0.0


def test_run_suite_structure_and_determinism():
    cfg = BenchConfig(seed=9, unseen_holdout=1, r_sweep=[0.3], **SMALL)
    rep1 = run_suite(cfg)
    rep2 = run_suite(cfg)
    assert rep1.to_json() == rep2.to_json()

    s = rep1.strategies
    assert s["individual"]["adr"] == 0.0
    assert s["individual"]["amr"] is None
    assert s["weight_average"]["amr"] == 0.0
    assert s["task_arithmetic"]["amr"] == 0.0
    for strategy in ("binarize", "dts_t", "dts_d", "dts_t_noscale"):
        assert "0.3" in s[strategy]
        assert s[strategy]["0.3"]["amr"] > 0.0
    assert s["dts_t_budget"]["amr"] <= cfg.budget_amr
    assert len(rep1.pairwise) == cfg.num_tasks * (cfg.num_tasks - 1)
    assert rep1.unseen is not None
    assert rep1.unseen["holdout"] == "task1"
    text = rep1.to_text_table()
    assert "dts_t" in text and "task0" in text
    csv = rep1.to_csv()
    assert csv.splitlines()[0].startswith("strategy,r,task0")


def test_no_merged_strategy_beats_individual_by_much(suite_reports):
    for seed, rep in suite_reports.items():
        cap = rep.strategies["individual"]["average"] + 0.5
        for strategy in ("weight_average", "task_arithmetic", "dts_t_budget", "dts_d_budget"):
            assert rep.strategies[strategy]["average"] <= cap
        for strategy in ("binarize", "dts_t", "dts_d", "dts_t_noscale"):
            for entry in rep.strategies[strategy].values():
                assert entry["average"] <= cap
