import numpy as np
import pytest

from altrec.compare_graph import TrainingTriple
from altrec.errors import DataError
from altrec.neural import RmsPropState, TrainConfig, init_model, train
from altrec.neural.training import EarlyStopper
from tests.conftest import random_encoded


class TestEarlyStopper:
    def test_patience_rule_from_loss_sequence(self):
        # losses [1.0, 0.8, 0.9, 0.95] with patience=2: stop after epoch 4,
        # best snapshot is epoch 2
        stopper = EarlyStopper(patience=2)
        stops = []
        for epoch, loss in enumerate([1.0, 0.8, 0.9, 0.95], start=1):
            stopper.update(epoch, loss)
            stops.append(stopper.should_stop)
        assert stops == [False, False, False, True]
        assert stopper.best_epoch == 2
        assert stopper.best_loss == 0.8

    def test_improvement_resets_counter(self):
        stopper = EarlyStopper(patience=2)
        for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.85], start=1):
            stopper.update(epoch, loss)
        assert not stopper.should_stop
        assert stopper.best_epoch == 4

    def test_ties_do_not_count_as_improvement(self):
        stopper = EarlyStopper(patience=1)
        stopper.update(1, 0.5)
        assert not stopper.update(2, 0.5)
        assert stopper.should_stop


def two_cluster_fixture(seed=0):
    """Two token-disjoint clusters: positives within, negatives across."""
    rng = np.random.default_rng(seed)
    cluster_a = [random_encoded(rng, f"a{i}", vocab_size=12, l_title=4, l_desc=6) for i in range(6)]
    cluster_b = []
    for i in range(6):
        p = random_encoded(rng, f"b{i}", vocab_size=12, l_title=4, l_desc=6)
        # shift tokens into a disjoint range [12, 24)
        shift = lambda seq, ln: tuple(v + 12 if j < ln else 0 for j, v in enumerate(seq))
        cluster_b.append(
            type(p)(p.product_id, shift(p.title_seq, p.title_len), p.title_len,
                    shift(p.desc_seq, p.desc_len), p.desc_len)
        )
    catalog = {p.product_id: p for p in cluster_a + cluster_b}
    triples = []
    for i in range(6):
        triples.append(TrainingTriple(f"a{i}", f"a{(i + 1) % 6}", 1))
        triples.append(TrainingTriple(f"b{i}", f"b{(i + 1) % 6}", 1))
        triples.append(TrainingTriple(f"a{i}", f"b{(i + 2) % 6}", 0))
        triples.append(TrainingTriple(f"b{i}", f"a{(i + 3) % 6}", 0))
    return catalog, triples


class TestTrain:
    def config(self, **overrides):
        defaults = dict(batch_size=8, max_epochs=6, patience=3, seed=1)
        defaults.update(overrides)
        return TrainConfig(**defaults)

    def test_loss_decreases_on_separable_clusters(self):
        catalog, triples = two_cluster_fixture()
        model = init_model(24, 6, 4, seed=2)
        model, history = train(model, triples[4:], triples[:4], catalog, self.config())
        assert history[-1].val_loss <= history[0].val_loss
        assert len(history) <= 6

    def test_same_seed_identical_history(self):
        catalog, triples = two_cluster_fixture()
        histories = []
        for _ in range(2):
            model = init_model(24, 6, 4, seed=2)
            _, history = train(model, triples[4:], triples[:4], catalog, self.config())
            histories.append([(s.epoch, s.train_loss, s.val_loss) for s in history])
        assert histories[0] == histories[1]

    def test_returns_best_snapshot(self):
        catalog, triples = two_cluster_fixture()
        model = init_model(24, 6, 4, seed=2)
        model, history = train(model, triples[4:], triples[:4], catalog, self.config())
        from altrec.neural import batch_loss

        val_pairs = [(catalog[t.anchor_id], catalog[t.other_id], t.label) for t in triples[:4]]
        restored_loss = batch_loss(val_pairs, model) / len(val_pairs)
        assert restored_loss == pytest.approx(min(s.val_loss for s in history), rel=1e-12)

    def test_unknown_product_id_rejected_before_training(self):
        catalog, triples = two_cluster_fixture()
        bad = triples + [TrainingTriple("missing", "a0", 0)]
        model = init_model(24, 6, 4, seed=2)
        with pytest.raises(DataError, match="missing"):
            train(model, bad, triples[:4], catalog, self.config())

    def test_empty_sets_rejected(self):
        catalog, triples = two_cluster_fixture()
        model = init_model(24, 6, 4, seed=2)
        with pytest.raises(DataError):
            train(model, [], triples[:4], catalog, self.config())

    def test_custom_optimizer_is_used(self):
        catalog, triples = two_cluster_fixture()
        model = init_model(24, 6, 4, seed=2)
        optimizer = RmsPropState(learning_rate=0.0)  # freeze parameters
        before = model.snapshot()
        model, history = train(
            model, triples[4:], triples[:4], catalog, self.config(max_epochs=2), optimizer
        )
        for name, array in model.parameters().items():
            assert np.array_equal(array, before[name]), name


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)
        with pytest.raises(ValueError):
            TrainConfig(loss_kind="hinge")
