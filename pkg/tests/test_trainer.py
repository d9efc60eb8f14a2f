import csv
import json

import numpy as np
import pytest

from narformer.arch_graph import relabel
from narformer.data import (
    DataError,
    Dataset,
    Item,
    SyntheticTarget,
    TargetTransform,
    count_paths,
    load_dataset,
    normalize_targets,
    random_dag,
    synth_benchmark,
    write_dataset,
)
from narformer.model import ModelConfig
from narformer.tokenizer import EncoderSpec
from narformer.trainer import Predictor, TrainConfig, evaluate, fit, write_history

from conftest import chain, diamond

SPEC = EncoderSpec(L_op=4, L_self=4, L_sour=4)
CFG = ModelConfig(D=24, n_stage1_blocks=1, n_heads=2, fusion_stages=(2, 1), head_hidden_sizes=(16,))


@pytest.fixture(scope="module")
def small_ds():
    return synth_benchmark(seed=3, n_graphs=48, max_nodes=6)


class TestTargets:
    def test_minmax(self):
        items = [Item(chain(2), t) for t in (90.0, 95.0, 100.0)]
        normed, tf = normalize_targets(Dataset(items))
        np.testing.assert_allclose(normed.targets(), [0.0, 0.5, 1.0])
        np.testing.assert_allclose(tf.inverse(normed.targets()), [90.0, 95.0, 100.0])

    def test_train_stats_only(self):
        items = [Item(chain(2), 0.0), Item(chain(3), 10.0), Item(diamond(), 20.0, "val")]
        _, tf = normalize_targets(Dataset(items))
        assert (tf.lo, tf.hi) == (0.0, 10.0)
        assert tf.forward(20.0) == 2.0

    def test_log_round_trip(self, rng):
        y = rng.uniform(1, 100, size=10)
        tf = TargetTransform("log")
        np.testing.assert_allclose(tf.inverse(tf.forward(y)), y)

    def test_errors(self):
        with pytest.raises(DataError):
            normalize_targets(Dataset([Item(chain(2), 1.0), Item(chain(3), 1.0)]))
        with pytest.raises(DataError):
            normalize_targets(Dataset([Item(chain(2), -1.0)]), "log")
        with pytest.raises(DataError):
            Dataset([Item(chain(2), float("nan"))])


class TestSynthetic:
    def test_deterministic(self):
        a = synth_benchmark(seed=5, n_graphs=20)
        b = synth_benchmark(seed=5, n_graphs=20)
        assert [(it.graph, it.target, it.split) for it in a.items] == [(it.graph, it.target, it.split) for it in b.items]

    def test_splits_and_variance(self):
        ds = synth_benchmark(seed=0, n_graphs=80)
        assert [len(ds.split(s)) for s in ("train", "val", "test")] == [60, 10, 10]
        assert ds.targets().std() > 0

    def test_target_invariant_under_relabel(self, rng):
        target = SyntheticTarget(0, 5)
        for _ in range(20):
            g = random_dag(rng, 6, 5)
            perm = rng.permutation(6).tolist()
            assert target(relabel(g, perm)) == target(g)

    def test_count_paths(self):
        assert count_paths(diamond()) == 2
        assert count_paths(chain(5)) == 1
        assert count_paths(diamond(), cap=1) == 1

    def test_random_dag_connected_forward(self, rng):
        for n in range(1, 9):
            g = random_dag(rng, n, 5)
            assert all(a < b for a, b in g.edges)
            indeg = {b for _, b in g.edges}
            assert indeg == set(range(1, n))


class TestDatasetIO:
    def test_round_trip(self, tmp_path, small_ds):
        path = tmp_path / "d.jsonl"
        write_dataset(small_ds, path)
        back = load_dataset(path)
        assert [(it.graph, it.target, it.split) for it in back.items] == [
            (it.graph, it.target, it.split) for it in small_ds.items
        ]

    def test_path_referenced_arch(self, tmp_path):
        (tmp_path / "a.json").write_text(diamond().to_json())
        (tmp_path / "d.jsonl").write_text(json.dumps({"arch": "a.json", "target": 0.5, "split": "val"}) + "\n")
        ds = load_dataset(tmp_path / "d.jsonl")
        assert ds.items[0].graph == diamond() and ds.items[0].split == "val"

    @pytest.mark.parametrize(
        "line",
        ['{"target": 1.0}', "not json", '{"arch": {"nodes": [], "edges": []}, "target": 1}', '{"arch": "missing.json", "target": 1}'],
    )
    def test_bad_lines(self, tmp_path, line):
        (tmp_path / "d.jsonl").write_text(line + "\n")
        with pytest.raises(DataError):
            load_dataset(tmp_path / "d.jsonl")


class TestConfig:
    def test_no_aug_forces_lambda2_zero(self):
        assert TrainConfig(aug_mode="none", lambda2=0.5).weights.lambda2 == 0.0
        assert TrainConfig(aug_mode="flow", lambda2=0.5).weights.lambda2 == 0.5

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.epochs, cfg.eval_metric) == (1e-4, 32, 30, "tau")
        assert TrainConfig(task="latency").eval_metric == "mape"
        assert TrainConfig(aug_mode="iso").aug_mode == "isomorphic"

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"lr": 0.0}, {"aug_mode": "x"}, {"task": "energy"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestFit:
    def test_loss_decreases_on_fixed_batch(self, small_ds):
        train = [it for it in small_ds.items if it.split == "train"][:16]
        ds = Dataset(train)
        res = fit(ds, CFG, SPEC, TrainConfig(epochs=10, batch_size=16, lr=1e-4, seed=0))
        losses = [h["loss"] for h in res.history]
        assert len(losses) == 10
        assert losses[-1] < losses[0]

    def test_same_seed_same_result(self, small_ds):
        cfg = TrainConfig(epochs=2, batch_size=8, lr=1e-3, seed=4, aug_mode="flow")
        a = fit(small_ds, CFG, SPEC, cfg)
        b = fit(small_ds, CFG, SPEC, cfg)
        assert a.best_val == b.best_val
        assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]

    def test_aug_adds_consistency_term(self, small_ds):
        res = fit(small_ds, CFG, SPEC, TrainConfig(epochs=1, batch_size=8, lr=1e-3, aug_mode="isomorphic"))
        assert any(h["ac"] > 0 for h in res.history)
        res = fit(small_ds, CFG, SPEC, TrainConfig(epochs=1, batch_size=8, lr=1e-3))
        assert all(h["ac"] == 0 for h in res.history)

    def test_width_mismatch(self, small_ds):
        with pytest.raises(ValueError):
            fit(small_ds, ModelConfig(D=48, n_heads=2), SPEC, TrainConfig(epochs=1))

    def test_empty_train(self):
        with pytest.raises(DataError):
            fit(Dataset([Item(chain(2), 1.0, "val")]), CFG, SPEC, TrainConfig(epochs=1))

    def test_warm_start_copies(self, small_ds):
        first = fit(small_ds, CFG, SPEC, TrainConfig(epochs=1, batch_size=8, lr=1e-3))
        before = {k: v.data.copy() for k, v in first.predictor.params.items()}
        fit(small_ds, CFG, SPEC, TrainConfig(epochs=1, batch_size=8, lr=1e-3), params=first.predictor.params)
        for k, v in first.predictor.params.items():
            np.testing.assert_array_equal(v.data, before[k])


@pytest.fixture(scope="module")
def predictor(small_ds):
    return fit(small_ds, CFG, SPEC, TrainConfig(epochs=1, batch_size=8, lr=1e-3)).predictor


class TestEvaluate:
    def test_tau_on_own_predictions(self, predictor, small_ds):
        graphs = [it.graph for it in small_ds.items]
        own = [Item(g, float(y)) for g, y in zip(graphs, predictor.predict(graphs))]
        assert evaluate(predictor, own, "tau") == pytest.approx(1.0)

    def test_latency_metrics_in_original_units(self, predictor, small_ds):
        p = predictor
        graphs = [it.graph for it in small_ds.items[:8]]
        p = Predictor(p.params, p.model_cfg, p.spec, TargetTransform("log"))
        items = [Item(g, float(y)) for g, y in zip(graphs, p.predict(graphs))]
        assert evaluate(p, items, "mape") == pytest.approx(0.0, abs=1e-9)
        assert evaluate(p, items, "acc", delta=0.01) == 1.0

    def test_constant_targets_raise(self, predictor):
        with pytest.raises(ValueError):
            evaluate(predictor, [Item(chain(3), 1.0), Item(diamond(), 1.0)], "tau")

    def test_empty(self, predictor):
        with pytest.raises(DataError):
            evaluate(predictor, [], "tau")

    def test_save_load(self, predictor, small_ds, tmp_path):
        path = tmp_path / "p.narf"
        predictor.save(path)
        back = Predictor.load(path)
        graphs = [it.graph for it in small_ds.items[:5]]
        np.testing.assert_array_equal(back.predict(graphs), predictor.predict(graphs))
        assert back.transform == predictor.transform


def test_write_history(tmp_path):
    hist = [{"step": 0, "epoch": 1, "loss": 2.0, "mse": 1.5, "sr": 5.0, "ac": 0.0, "val_metric": None}]
    write_history(hist, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert rows == [{"step": "0", "epoch": "1", "loss": "2.0", "mse": "1.5", "sr": "5.0", "ac": "0.0", "val_metric": ""}]
