"""Optimizer, schedules, the training loop, and model/routing artifacts.

The AdamW update rule is pinned against hand-derived single-step values;
the plateau scheduler against an epoch-by-epoch trace; the entropy
reward against its observable effect (a router-only step raises routing
entropy). Loop-level tests run a real toy graph end to end.
"""

import io
import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from catkg import tensor as T
from catkg.config import TrainConfig
from catkg.errors import (IncompatibilityError, NumericsError,
                          UnsupportedVariantError)
from catkg.kg import KgModel, evaluate, routing_entropy, total_loss
from catkg.tensor import Tape, Tensor
from catkg.trainer import (AdamW, EpochRecord, PlateauScheduler,
                           anneal_lambda, clip_gradients, export_routing,
                           load_model, save_model, train)

from conftest import build_toy_store


def small_cfg(**kw):
    base = dict(d=16, heads=2, seed=5, lr=0.01, epochs=8, batch_size=64,
                dropout=0.0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def store():
    return build_toy_store(n_entities=20, n_train=60, n_valid=10, n_test=5)


class TestAdamW:
    def test_no_gradient_means_no_motion_without_decay(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1)
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_decay_shrinks_even_with_zero_gradient(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.zeros(1)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
        opt.step()
        assert_allclose(p.data, [1.0 * (1 - 0.1 * 0.5)], rtol=1e-15)

    def test_first_step_is_normalized_gradient(self):
        # Bias correction makes m-hat = g and v-hat = g^2 on step one, so
        # the move is lr * g / (|g| + eps) regardless of the magnitude.
        p = Tensor(np.array([5.0]), requires_grad=True)
        p.grad = np.array([0.04])
        opt = AdamW({"p": p}, lr=0.1)
        opt.step()
        assert_allclose(p.data, [5.0 - 0.1 * 0.04 / (0.04 + 1e-8)],
                        rtol=1e-12)

    def test_zero_grad_clears(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.ones(1)
        AdamW({"p": p}, lr=0.1).zero_grad()
        assert p.grad is None

    def test_non_finite_gradient_rejects_whole_step(self):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([2.0]), requires_grad=True)
        a.grad = np.array([0.5])
        b.grad = np.array([np.nan])
        opt = AdamW({"a": a, "bad": b}, lr=0.1, weight_decay=0.5)
        with pytest.raises(NumericsError) as info:
            opt.step()
        assert "bad" in str(info.value)
        # atomic: neither parameter moved, no step was counted
        assert np.array_equal(a.data, [1.0])
        assert np.array_equal(b.data, [2.0])
        assert opt.step_count == 0

    def test_quadratic_bowl_converges(self):
        x = Tensor(np.array([8.0]), requires_grad=True)
        opt = AdamW({"x": x}, lr=0.1)
        for _ in range(2000):
            opt.zero_grad()
            with Tape() as tape:
                loss = ((x - 3.0) * (x - 3.0)).sum()
            tape.backward(loss)
            opt.step()
            if abs(float(x.data[0]) - 3.0) < 1e-4:
                break
        assert abs(float(x.data[0]) - 3.0) < 1e-4


class TestClipGradients:
    def test_large_norm_scaled_down_globally(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        b = Tensor(np.zeros(4), requires_grad=True)
        a.grad = np.full(3, 2.0)
        b.grad = np.full(4, -2.0)
        pre = math.sqrt(4.0 * 7)
        returned = clip_gradients({"a": a, "b": b}, max_norm=1.0)
        assert_allclose(returned, pre, rtol=1e-15)
        post = math.sqrt(float((a.grad ** 2).sum() + (b.grad ** 2).sum()))
        assert_allclose(post, 1.0, rtol=1e-12)

    def test_small_norm_untouched(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([0.3, 0.4])
        clip_gradients({"a": a}, max_norm=1.0)
        assert np.array_equal(a.grad, [0.3, 0.4])

    def test_zero_max_norm_disables_clipping(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([30.0, 40.0])
        assert clip_gradients({"a": a}, max_norm=0.0) == 50.0
        assert np.array_equal(a.grad, [30.0, 40.0])

    def test_missing_gradients_skipped(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        assert clip_gradients({"a": a}, max_norm=1.0) == 0.0


class TestPlateauScheduler:
    def test_flat_metric_reduces_on_schedule(self):
        opt = AdamW({}, lr=0.001)
        sched = PlateauScheduler(opt, factor=0.5, patience=10)
        reduced_at = [epoch for epoch in range(1, 22)
                      if sched.step(0.5)]
        # epoch 1 sets the best; 10 stale epochs trip at 11, then at 21
        assert reduced_at == [11, 21]
        assert opt.lr == 0.001 * 0.5 * 0.5
        assert_allclose(opt.lr, 0.00025, rtol=1e-12)

    def test_improving_metric_never_reduces(self):
        opt = AdamW({}, lr=0.001)
        sched = PlateauScheduler(opt, factor=0.5, patience=3)
        assert not any(sched.step(m) for m in np.linspace(0.1, 0.9, 30))
        assert opt.lr == 0.001

    def test_improvement_resets_the_stale_counter(self):
        opt = AdamW({}, lr=1.0)
        sched = PlateauScheduler(opt, factor=0.5, patience=3)
        for metric in (0.5, 0.4, 0.4, 0.6, 0.4, 0.4):
            assert not sched.step(metric)
        assert sched.step(0.4)  # third stale epoch after the 0.6 best

    def test_matching_the_best_counts_as_stale(self):
        opt = AdamW({}, lr=1.0)
        sched = PlateauScheduler(opt, factor=0.5, patience=2)
        sched.step(0.5)
        assert not sched.step(0.5)
        assert sched.step(0.5)  # strict > means two equal epochs trip it


class TestAnnealLambda:
    def test_matches_closed_form_for_200_steps(self):
        lam = 0.01
        for k in range(1, 201):
            lam = anneal_lambda(lam, decay=0.95, floor=0.001)
            assert abs(lam - max(0.001, 0.01 * 0.95 ** k)) < 1e-15

    def test_floor_is_absorbing(self):
        lam = 0.0011
        seen = []
        for _ in range(10):
            lam = anneal_lambda(lam)
            seen.append(lam)
        assert seen[1:] == [0.001] * 9

    def test_never_increases(self):
        lam, prev = 0.01, 0.01
        for _ in range(300):
            lam = anneal_lambda(lam)
            assert lam <= prev
            prev = lam


class TestEpochRecordFormat:
    def test_line_uses_reprs_and_optional_alpha(self):
        rec = EpochRecord(epoch=3, train_loss=1.5, valid_mrr=0.25,
                          valid_hits10=0.5, lr=0.001, lambda_ent=0.0095,
                          mean_alpha=(0.2, 0.3, 0.5))
        line = rec.line()
        assert line.startswith("epoch=3 train_loss=1.5 valid_mrr=0.25 ")
        assert "lr=0.001" in line and "lambda=0.0095" in line
        assert line.endswith("alpha_e=0.2 alpha_h=0.3 alpha_s=0.5")

    def test_alpha_fields_absent_for_fixed_variants(self):
        rec = EpochRecord(epoch=1, train_loss=1.0, valid_mrr=0.1,
                          valid_hits10=0.2, lr=0.01, lambda_ent=0.0,
                          mean_alpha=None)
        assert "alpha" not in rec.line()


class TestTrainLoop:
    def test_loss_decreases_on_toy_graph(self, store):
        result = train(store, small_cfg(epochs=15))
        assert result.records[-1].train_loss < result.records[0].train_loss

    def test_record_bookkeeping(self, store):
        cfg = small_cfg(epochs=6)
        result = train(store, cfg)
        assert [r.epoch for r in result.records] == list(range(1, 7))
        assert result.records[0].lr == cfg.lr
        assert result.best_valid_mrr == max(r.valid_mrr for r in result.records)
        assert (result.records[result.best_epoch - 1].valid_mrr
                == result.best_valid_mrr)

    def test_lambda_column_follows_the_annealing_recurrence(self, store):
        cfg = small_cfg(epochs=10)
        result = train(store, cfg)
        for k, rec in enumerate(result.records):
            expected = max(cfg.lambda_ent_min,
                           cfg.lambda_ent_init * cfg.lambda_ent_decay ** k)
            assert abs(rec.lambda_ent - expected) < 1e-15

    def test_fixed_variant_pins_lambda_to_zero(self, store):
        result = train(store, small_cfg(variant="euclidean", epochs=3))
        assert all(r.lambda_ent == 0.0 for r in result.records)
        assert all(r.mean_alpha is None for r in result.records)

    def test_mixture_records_alpha_means(self, store):
        result = train(store, small_cfg(epochs=3))
        for rec in result.records:
            assert len(rec.mean_alpha) == 3
            assert abs(sum(rec.mean_alpha) - 1.0) < 1e-12

    def test_best_epoch_parameters_are_restored(self, store):
        result = train(store, small_cfg(epochs=12))
        metrics = evaluate(store, result.model, "valid")
        assert metrics.mrr == result.records[result.best_epoch - 1].valid_mrr

    def test_two_runs_produce_bit_identical_logs(self, store):
        cfg = small_cfg(epochs=6, dropout=0.2)
        assert train(store, cfg).log_text() == train(store, cfg).log_text()

    def test_seed_changes_the_run(self, store):
        a = train(store, small_cfg(epochs=3))
        b = train(store, small_cfg(epochs=3, seed=6))
        assert a.log_text() != b.log_text()

    def test_log_stream_receives_the_same_lines(self, store):
        stream = io.StringIO()
        result = train(store, small_cfg(epochs=4), log_stream=stream)
        assert stream.getvalue() == result.log_text()

    def test_divergence_raises_with_location(self, store):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(NumericsError) as info:
                train(store, small_cfg(lr=1e30, epochs=3, batch_size=32))
        assert "epoch" in str(info.value)

    def test_entropy_reward_steers_the_router_toward_uniform(self, store):
        # Isolate the entropy term: with CE frozen at 0 and the subtract
        # convention, optimizing total_loss on the router alone must raise
        # the mean routing entropy.
        cfg = small_cfg(seed=1)
        model = KgModel(store.n_entities, store.n_relations, cfg)
        router = {f"router.{k}": v
                  for k, v in model.block.router.parameters().items()}
        opt = AdamW(router, lr=0.05)
        heads, rels = store.train[:, 0], store.train[:, 1]

        def entropy_now():
            _, alpha = model.score(heads, rels)
            return float(routing_entropy(alpha).data)

        before = entropy_now()
        for _ in range(3):
            opt.zero_grad()
            with Tape() as tape:
                _, alpha = model.score(heads, rels)
                loss = total_loss(Tensor(np.array(0.0)),
                                  routing_entropy(alpha), 0.1, "subtract")
            tape.backward(loss)
            opt.step()
        assert entropy_now() > before


class TestModelCheckpointIO:
    def test_roundtrip_restores_every_parameter(self, store, tmp_path):
        cfg = small_cfg(epochs=2)
        result = train(store, cfg)
        path = tmp_path / "model.catw"
        save_model(path, result.model)
        fresh = KgModel(store.n_entities, store.n_relations,
                        small_cfg(seed=99))
        load_model(path, fresh)
        for name, p in result.model.parameters().items():
            assert np.array_equal(fresh.parameters()[name].data, p.data), name
        assert (evaluate(store, fresh, "valid")
                == evaluate(store, result.model, "valid"))

    def test_variant_mismatch_is_incompatible(self, store, tmp_path):
        cat = KgModel(store.n_entities, store.n_relations, small_cfg())
        path = tmp_path / "cat.catw"
        save_model(path, cat)
        euclid = KgModel(store.n_entities, store.n_relations,
                         small_cfg(variant="euclidean"))
        with pytest.raises(IncompatibilityError) as info:
            load_model(path, euclid)
        assert "missing" in str(info.value) or "unexpected" in str(info.value)

    def test_vocabulary_mismatch_is_incompatible(self, store, tmp_path):
        model = KgModel(store.n_entities, store.n_relations, small_cfg())
        path = tmp_path / "model.catw"
        save_model(path, model)
        bigger = KgModel(store.n_entities + 5, store.n_relations, small_cfg())
        with pytest.raises(IncompatibilityError) as info:
            load_model(path, bigger)
        assert "entity_emb" in str(info.value)


class TestExportRouting:
    def test_rejects_fixed_variants(self, store, tmp_path):
        model = KgModel(store.n_entities, store.n_relations,
                        small_cfg(variant="hyperbolic"))
        with pytest.raises(UnsupportedVariantError):
            export_routing(model, store, "test", tmp_path / "r.tsv")

    def test_table_layout_and_row_simplex(self, store, tmp_path):
        model = KgModel(store.n_entities, store.n_relations, small_cfg())
        out = tmp_path / "routing.tsv"
        means = export_routing(model, store, "test", out)
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "head\trelation\talpha_e\talpha_h\talpha_s"
        body = [l for l in lines[1:] if not l.startswith("#")]
        trailer = [l for l in lines[1:] if l.startswith("#")]
        assert len(body) == store.test.shape[0]
        assert len(trailer) == 3
        parsed = []
        for line, (h, r, _) in zip(body, store.test):
            cols = line.split("\t")
            assert cols[0] == f"e{h}" and cols[1] == f"r{r}"
            weights = np.array([float(c) for c in cols[2:]])
            assert abs(weights.sum() - 1.0) < 1e-12
            parsed.append(weights)
        assert_allclose(np.mean(parsed, axis=0), means, rtol=0, atol=1e-15)

    def test_trailer_lines_carry_the_returned_means(self, store, tmp_path):
        model = KgModel(store.n_entities, store.n_relations, small_cfg())
        out = tmp_path / "routing.tsv"
        means = export_routing(model, store, "valid", out)
        trailer = [l for l in out.read_text(encoding="utf-8").splitlines()
                   if l.startswith("#")]
        for line, key, value in zip(trailer, ("alpha_e", "alpha_h", "alpha_s"),
                                    means):
            assert line == f"# mean {key} {float(value)!r}"

    def test_forced_one_hot_rows_are_exact(self, store, tmp_path):
        model = KgModel(store.n_entities, store.n_relations, small_cfg())
        model.block.router.force_one_hot(1)
        out = tmp_path / "routing.tsv"
        means = export_routing(model, store, "test", out)
        assert np.array_equal(means, [0.0, 1.0, 0.0])
        for line in out.read_text(encoding="utf-8").splitlines()[1:]:
            if not line.startswith("#"):
                assert line.endswith("0.0\t1.0\t0.0")

    def test_means_match_best_epoch_record_exactly(self, store, tmp_path):
        # Two bookkeeping paths to the same number: the per-epoch record of
        # the best epoch (written during training) and a fresh export from
        # the restored model must agree bitwise on the valid split.
        result = train(store, small_cfg(epochs=10))
        means = export_routing(result.model, store, "valid",
                               tmp_path / "r.tsv")
        assert tuple(float(m) for m in means) == \
            result.records[result.best_epoch - 1].mean_alpha
