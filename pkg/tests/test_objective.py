import logging
import math

import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from mifair import model as Mdl
from mifair import objective as O
from mifair import tensor as T
from mifair.data import DatasetSchema, RawTable, SplitSpec, encode, split
from mifair.model import GumbelConfig, ModelConfig
from mifair.objective import Batch, EarlyStopping, Optimizers, TrainConfig, Variant
from mifair.tensor import Tensor


def toy_dataset(n=400, seed=0, sep=3.0, n_groups=3):
    """Two Gaussian blobs; the group is random and slightly correlated with the label."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2)) + sep * (y[:, None] - 0.5)
    g = np.where(rng.random(n) < 0.7, y % n_groups, rng.integers(0, n_groups, n))
    cats = [f"g{i}" for i in range(n_groups)]
    schema = DatasetSchema.from_dict(
        {
            "features": [{"name": "x0", "kind": "continuous"}, {"name": "x1", "kind": "continuous"}],
            "label": "y",
            "label_values": ["0", "1"],
            "sensitive": [{"name": "grp", "categories": cats}],
        }
    )
    cols = {"x0": x[:, 0].tolist(), "x1": x[:, 1].tolist(), "grp": [cats[i] for i in g], "y": [str(v) for v in y]}
    return encode(RawTable(cols, n), schema)


def small_bundle(ds, seed=0, hidden=(8,), embed_dim=4):
    return Mdl.init_bundle(ModelConfig(ds.input_dim, ds.n_classes, ds.group_card, hidden, embed_dim), seed)


def randomise(bundle, seed=1, scale=0.3):
    rng = np.random.default_rng(seed)
    for p in bundle.parameters():
        p.values[...] = rng.normal(scale=scale, size=p.shape)


def snapshot(params):
    return [p.values.copy() for p in params]


class TestLossT:
    def test_perfect_predictor(self):
        ds = toy_dataset(20)
        b = small_bundle(ds)
        b.head[0].values[...] = 0.0
        # a huge bias on the true class of a single-class batch
        for cls in (0, 1):
            b.head[1].values[...] = np.where(np.arange(2) == cls, 800.0, 0.0)
            assert O.loss_T(Batch.from_dataset(ds, np.flatnonzero(ds.y == cls)), b).item() == 0.0

    def test_uniform_predictor(self):
        ds = toy_dataset(30)
        b = small_bundle(ds)
        b.head[0].values[...] = 0.0
        assert O.loss_T(Batch.from_dataset(ds), b).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_halves_on_separable_data(self):
        ds = toy_dataset(400, sep=4.0)
        b = small_bundle(ds, hidden=(16,), embed_dim=8)
        cfg = TrainConfig(variant="vanilla", learning_rate=1e-3, batch_size=16)
        opt = Optimizers.for_config(cfg)
        g = GumbelConfig(seed=0)
        first = O.loss_T(Batch.from_dataset(ds), b).item()
        for epoch in range(50):
            O.train_epoch(ds, b, cfg, epoch, 0, opt, g)
        assert O.loss_T(Batch.from_dataset(ds), b).item() < first / 2


class TestLossS:
    def test_alpha_zero(self):
        ds = toy_dataset(20)
        assert O.loss_S(Batch.from_dataset(ds), small_bundle(ds), 0.0).item() == 0.0

    def test_uniform_decoder_six_groups(self):
        ds = toy_dataset(60, n_groups=6)
        b = small_bundle(ds)
        b.decoder[0].values[...] = 0.0
        val = O.loss_S(Batch.from_dataset(ds), b, 0.1).item()
        assert val == pytest.approx(0.1 * math.log(1 / 6), abs=1e-15)
        assert val == pytest.approx(-0.1792, abs=1e-4)

    def test_nonpositive(self):
        ds = toy_dataset(50)
        for seed in range(10):
            b = small_bundle(ds, seed=seed)
            randomise(b, seed, scale=2.0)
            assert O.loss_S(Batch.from_dataset(ds), b, 0.5).item() <= 0.0


class TestLossD:
    def test_zero_estimator_and_alpha(self):
        ds = toy_dataset(20)
        b = small_bundle(ds)
        batch = Batch.from_dataset(ds)
        assert O.loss_D(batch, b, GumbelConfig(), 0.1).item() == 0.0
        randomise(b)
        assert O.loss_D(batch, b, GumbelConfig(), 0.0).item() == 0.0

    def test_hand_example(self):
        # one sample, w_embed.y = 1, w_group.onehot = 2, w_group.fake = 0
        ds = toy_dataset(20, n_groups=2)
        b = small_bundle(ds, embed_dim=2)
        row = int(np.flatnonzero(ds.group == 1)[0])
        batch = Batch.from_dataset(ds, [row])
        emb = Mdl.extract(batch.x, b).values[0]
        b.w_embed.values[...] = emb / float(emb @ emb)
        b.w_group.values[...] = [0.0, 2.0]
        # push the decoder so the sample lands on group 0 at a very low temperature
        b.decoder[0].values[...] = 0.0
        b.decoder[1].values[...] = [50.0, -50.0]
        val = O.loss_D(batch, b, GumbelConfig(temperature=0.01), 0.1, noise=np.zeros((1, 2))).item()
        assert val == pytest.approx(0.1 * ((1 + 2) + (1 + 0)) / 2, abs=1e-12)

    def test_matches_manual_union(self):
        ds = toy_dataset(30)
        b = small_bundle(ds)
        randomise(b, 4)
        batch = Batch.from_dataset(ds)
        noise = GumbelConfig(seed=2).noise((30, 3))
        got = O.loss_D(batch, b, GumbelConfig(temperature=0.5), 0.3, noise).item()
        emb = Mdl.extract(batch.x, b).values
        logits = emb @ b.decoder[0].values + b.decoder[1].values
        log_o = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        z = (log_o + noise) / 0.5
        fake = np.exp(z - z.max(axis=1, keepdims=True))
        fake /= fake.sum(axis=1, keepdims=True)
        real = np.eye(3)[ds.group]
        w1, w2 = b.w_embed.values, b.w_group.values
        manual = 0.3 * np.mean(np.concatenate([emb @ w1 + real @ w2, emb @ w1 + fake @ w2]))
        assert got == pytest.approx(manual, abs=1e-12)


class TestEstimatorLoss:
    def test_zero_estimator(self):
        ds = toy_dataset(20)
        val = O.estimator_loss(Batch.from_dataset(ds), small_bundle(ds), GumbelConfig()).item()
        assert val == pytest.approx(math.log(2), abs=1e-15)

    def test_separated_scores(self):
        assert T.logistic_loss(Tensor([10.0, 10.0, -10.0, -10.0]), [1, 1, -1, -1]).item() < 1e-4

    def test_training_lowers_loss(self):
        ds = toy_dataset(200)
        b = small_bundle(ds)
        randomise(b, 5, scale=1.0)
        batch = Batch.from_dataset(ds)
        noise = GumbelConfig(seed=1).noise((200, 3))
        g = GumbelConfig(temperature=0.2)
        state = T.AdamState(learning_rate=1e-2)
        theta_before = snapshot(b.theta + b.decoder_params)
        with O.trainable(b, estimator=True):
            for _ in range(200):
                O._step(O.estimator_loss(batch, b, g, noise), b.estimator_params, state)
            final = O.estimator_loss(batch, b, g, noise).item()
        assert final < math.log(2)
        for before, p in zip(theta_before, b.theta + b.decoder_params):
            np.testing.assert_array_equal(before, p.values)


class TestDecoderLoss:
    def test_uniform_four_groups(self):
        ds = toy_dataset(40, n_groups=4)
        b = small_bundle(ds)
        b.decoder[0].values[...] = 0.0
        assert O.decoder_loss(Batch.from_dataset(ds), b).item() == pytest.approx(math.log(4), abs=1e-15)

    def test_perfect_decoder(self):
        ds = toy_dataset(40, n_groups=2)
        b = small_bundle(ds)
        b.decoder[0].values[...] = 0.0
        rows = np.flatnonzero(ds.group == 1)
        b.decoder[1].values[...] = [-800.0, 0.0]
        assert O.decoder_loss(Batch.from_dataset(ds, rows), b).item() == 0.0

    def test_training_lowers_loss(self):
        ds = toy_dataset(300)
        b = small_bundle(ds, hidden=(16,), embed_dim=8)
        batch = Batch.from_dataset(ds)
        state = T.AdamState(learning_rate=1e-2)
        start = O.decoder_loss(batch, b).item()
        with O.trainable(b, decoder=True):
            for _ in range(100):
                O._step(O.decoder_loss(batch, b), b.decoder_params, state)
        assert O.decoder_loss(batch, b).item() < start - 0.05


class TestAnneal:
    def test_values(self):
        cfg = TrainConfig()
        assert O.anneal(0, cfg) == 1.0
        assert O.anneal(49, cfg) == 1.0
        assert O.anneal(50, cfg) == 0.5
        assert O.anneal(149, cfg) == 0.25

    def test_closed_form(self):
        cfg = TrainConfig(tau0=3.0, anneal_period=7, anneal_factor=1.5)
        for e in range(1001):
            assert O.anneal(e, cfg) == 3.0 / 1.5 ** (e // 7)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            O.anneal(-1, TrainConfig())

    def test_train_epoch_sets_temperature(self):
        ds = toy_dataset(40)
        b = small_bundle(ds)
        cfg = TrainConfig(anneal_period=1, batch_size=64)
        g = GumbelConfig()
        O.train_epoch(ds, b, cfg, 2, 0, Optimizers.for_config(cfg), g)
        assert g.temperature == 0.25


class TestObjectiveTerms:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_decomposition(self, variant):
        ds = toy_dataset(64)
        b = small_bundle(ds)
        randomise(b, 6)
        batch = Batch.from_dataset(ds)
        n_rows = int((ds.y == 1).sum()) if variant == Variant.EO_TSD else 64
        noise = GumbelConfig(seed=3).noise((n_rows, 3))
        t = O.objective_terms(batch, b, variant, 0.1, GumbelConfig(), noise)
        expect = t.T.item()
        expect += t.S.item() if t.S is not None else 0.0
        expect += t.D.item() if t.D is not None else 0.0
        assert abs(t.J.item() - expect) < 1e-12
        assert (t.S is not None) == variant.uses_s and (t.D is not None) == variant.uses_d
        assert abs(t.T.item() - O.loss_T(batch, b).item()) < 1e-12
        if variant in (Variant.TSD, Variant.TS):
            assert abs(t.S.item() - O.loss_S(batch, b, 0.1).item()) < 1e-12
        if variant in (Variant.TSD, Variant.TD):
            assert abs(t.D.item() - O.loss_D(batch, b, GumbelConfig(), 0.1, noise).item()) < 1e-12

    def test_gradients_of_every_group(self):
        ds = toy_dataset(16)
        b = small_bundle(ds, hidden=(5,), embed_dim=3)
        randomise(b, 7, scale=0.5)
        batch = Batch.from_dataset(ds)
        noise = GumbelConfig(seed=4).noise((16, 3))
        g = GumbelConfig(temperature=0.8)
        b.set_trainable(True, True, True)
        params = b.parameters()

        def J():
            return O.objective_terms(batch, b, Variant.TSD, 0.7, g, noise).J

        T.zero_grads(params)
        T.backward(J())
        numeric = numeric_grad(lambda: J().item(), [p.values for p in params])
        for name, p, n in zip(b.parameter_names(), params, numeric):
            assert p.grad is not None, name
            assert rel_error(p.grad, n) < 1e-4, name


class TestEqualOpportunity:
    def test_no_positives(self, caplog):
        ds = toy_dataset(40)
        batch = Batch.from_dataset(ds, np.flatnonzero(ds.y == 0))
        with caplog.at_level(logging.WARNING):
            s, d = O.eo_losses(batch, small_bundle(ds), GumbelConfig(), 0.1)
        assert s.item() == 0.0 and d.item() == 0.0
        assert "no positive" in caplog.text

    def test_all_positive(self):
        ds = toy_dataset(40)
        b = small_bundle(ds)
        randomise(b, 8)
        batch = Batch.from_dataset(ds, np.flatnonzero(ds.y == 1))
        noise = GumbelConfig(seed=5).noise((len(batch), 3))
        s, d = O.eo_losses(batch, b, GumbelConfig(), 0.1, noise)
        assert s.item() == O.loss_S(batch, b, 0.1).item()
        assert d.item() == O.loss_D(batch, b, GumbelConfig(), 0.1, noise).item()

    def test_mixed_batch_equals_subset(self):
        ds = toy_dataset(60)
        b = small_bundle(ds)
        randomise(b, 9)
        batch = Batch.from_dataset(ds)
        pos = np.flatnonzero(ds.y == 1)
        noise = GumbelConfig(seed=6).noise((pos.size, 3))
        s, d = O.eo_losses(batch, b, GumbelConfig(), 0.1, noise)
        sub = Batch.from_dataset(ds, pos)
        assert abs(s.item() - O.loss_S(sub, b, 0.1).item()) < 1e-12
        assert abs(d.item() - O.loss_D(sub, b, GumbelConfig(), 0.1, noise).item()) < 1e-12
        terms = O.objective_terms(batch, b, Variant.EO_TSD, 0.1, GumbelConfig(), noise)
        assert abs(terms.S.item() - s.item()) < 1e-12 and abs(terms.D.item() - d.item()) < 1e-12

    def test_multiclass_rejected(self):
        ds = toy_dataset(60)
        bad = ds.__class__(**{**ds.__dict__, "n_classes": 3})
        with pytest.raises(ValueError, match="binary"):
            O.fit(bad, bad, TrainConfig(variant="eo", epochs=1))


class TestTrainBatch:
    def _setup(self, variant, alpha=0.1):
        ds = toy_dataset(64)
        b = small_bundle(ds)
        cfg = TrainConfig(variant=variant, alpha=alpha, learning_rate=1e-2)
        return ds, b, cfg, Optimizers.for_config(cfg)

    def test_step_c_leaves_adversaries_alone(self, monkeypatch):
        ds, b, cfg, opt = self._setup("tsd")
        seen = {}
        real_step = O._step

        def spy(loss, params, state):
            frozen = [p for p in b.parameters() if not any(p is q for q in params)]
            before = snapshot(frozen)
            real_step(loss, params, state)
            seen.setdefault(id(state), []).append(all(np.array_equal(x, p.values) for x, p in zip(before, frozen)))

        monkeypatch.setattr(O, "_step", spy)
        O.train_batch(Batch.from_dataset(ds), b, cfg, opt, GumbelConfig())
        assert set(seen) == {id(opt.decoder), id(opt.estimator), id(opt.theta)}
        assert all(all(v) for v in seen.values())

    def test_ts_never_touches_estimator_in_step_c(self):
        ds, b, cfg, opt = self._setup("ts")
        w_before = snapshot(b.estimator_params)
        batch = Batch.from_dataset(ds)
        # run steps (a) and (b) manually, then only step (c)
        with O.trainable(b, theta=True):
            terms = O.objective_terms(batch, b, Variant.TS, 0.1, GumbelConfig())
            O._step(terms.J, b.theta, opt.theta)
        for x, p in zip(w_before, b.estimator_params):
            np.testing.assert_array_equal(x, p.values)
        assert all(p.grad is None for p in b.estimator_params)

    def test_optimizer_states_are_separate(self):
        ds, b, cfg, opt = self._setup("tsd")
        O.train_batch(Batch.from_dataset(ds), b, cfg, opt, GumbelConfig())
        assert opt.theta.t == opt.decoder.t == opt.estimator.t == 1
        assert opt.theta is not opt.decoder

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts(self):
        ds, b, cfg, opt = self._setup("tsd")
        b.head[0].values[...] = 1e308
        with pytest.raises(O.TrainingDiverged, match="epoch 0"):
            O.train_epoch(ds, b, cfg, 0, 0, opt, GumbelConfig())


class TestTrajectories:
    def _theta_after(self, variant, alpha, epochs=3):
        ds = toy_dataset(120)
        b = small_bundle(ds, seed=3)
        cfg = TrainConfig(variant=variant, alpha=alpha, learning_rate=1e-2, batch_size=32)
        opt = Optimizers.for_config(cfg)
        g = GumbelConfig(seed=11)
        for e in range(epochs):
            O.train_epoch(ds, b, cfg, e, 0, opt, g)
        return snapshot(b.theta)

    def test_vanilla_equals_pure_t_loop(self):
        ds = toy_dataset(120)
        b = small_bundle(ds, seed=3)
        cfg = TrainConfig(variant="vanilla", learning_rate=1e-2, batch_size=32)
        state = T.AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
        from mifair.data import batches

        for e in range(3):
            for rows in batches(ds.n, 32, 0, e):
                with O.trainable(b, theta=True):
                    O._step(O.loss_T(Batch.from_dataset(ds, rows), b), b.theta, state)
        for x, y in zip(snapshot(b.theta), self._theta_after("vanilla", 0.1)):
            assert x.tobytes() == y.tobytes()

    @pytest.mark.parametrize("variant", ["tsd", "ts", "td"])
    def test_alpha_zero_matches_vanilla(self, variant):
        vanilla = self._theta_after("vanilla", 0.0)
        for x, y in zip(vanilla, self._theta_after(variant, 0.0)):
            assert x.tobytes() == y.tobytes()

    def test_positive_alpha_differs(self):
        a, b = self._theta_after("vanilla", 0.0), self._theta_after("tsd", 1.0)
        assert any(not np.array_equal(x, y) for x, y in zip(a, b))

    def test_epoch_determinism(self):
        for x, y in zip(self._theta_after("tsd", 0.1, 2), self._theta_after("tsd", 0.1, 2)):
            assert x.tobytes() == y.tobytes()


class TestEarlyStopping:
    def test_worsening_sequence_stops_after_six_epochs(self):
        es = EarlyStopping(5, "min")
        ran = 0
        for v in np.arange(0.1, 2.0, 0.1):
            es.update(v)
            ran += 1
            if es.should_stop:
                break
        assert ran == 6 and es.best_index == 0

    def test_ties_are_not_improvements(self):
        es = EarlyStopping(2, "max")
        assert es.update(0.5)
        assert not es.update(0.5)
        assert not es.update(0.4)
        assert es.should_stop

    def test_fit_with_scripted_metric(self, monkeypatch):
        ds = toy_dataset(80)
        tr, va, _ = split(ds, SplitSpec(seed=0))
        seq = iter([0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65])
        monkeypatch.setattr(O, "validation_scores", lambda *a: (next(seq), 0.5))
        res = O.fit(tr, va, TrainConfig(epochs=20, batch_size=64), seed=0, hidden=(4,), embed_dim=2)
        assert len(res.reports) == 6 and res.stopped_early and res.best_epoch == 0

    def test_fit_selects_argmin(self):
        ds = toy_dataset(300)
        tr, va, _ = split(ds, SplitSpec(seed=1))
        cfg = TrainConfig(epochs=12, patience=4, learning_rate=1e-2, batch_size=32)
        res = O.fit(tr, va, cfg, seed=2, hidden=(8,), embed_dim=4)
        best = res.best_report.val_fairness
        assert all(best <= r.val_fairness for r in res.reports)
        # the returned bundle really is the selected checkpoint
        gap, _ = O.validation_scores(res.bundle, va, Variant.TSD)
        assert gap == best

    def test_vanilla_selects_max_f1(self):
        ds = toy_dataset(300)
        tr, va, _ = split(ds, SplitSpec(seed=1))
        cfg = TrainConfig(variant="vanilla", epochs=8, learning_rate=1e-2, batch_size=32)
        res = O.fit(tr, va, cfg, seed=2, hidden=(8,), embed_dim=4)
        assert all(res.best_report.val_micro_f1 >= r.val_micro_f1 for r in res.reports)

    def test_fit_determinism(self):
        ds = toy_dataset(200)
        tr, va, _ = split(ds, SplitSpec(seed=1))
        cfg = TrainConfig(epochs=4, learning_rate=1e-2, batch_size=32)
        a = O.fit(tr, va, cfg, seed=5, hidden=(8,), embed_dim=4)
        b = O.fit(tr, va, cfg, seed=5, hidden=(8,), embed_dim=4)
        assert a.best_epoch == b.best_epoch
        for p, q in zip(a.bundle.parameters(), b.bundle.parameters()):
            assert p.values.tobytes() == q.values.tobytes()
        assert [r.log_line() for r in a.reports] == [r.log_line() for r in b.reports]


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.alpha, cfg.epochs, cfg.patience, cfg.learning_rate, cfg.weight_decay) == (0.1, 100, 5, 1e-4, 0.01)
        assert (cfg.tau0, cfg.anneal_period, cfg.anneal_factor, cfg.seeds) == (1.0, 50, 2.0, (0, 1, 2, 3, 4))

    @pytest.mark.parametrize("kw", [{"alpha": -0.1}, {"epochs": 0}, {"patience": 0}, {"tau0": 0.0}, {"variant": "xyz"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_report_line(self):
        rep = O.EpochReport(3, 0.5, None, -0.25, 1.0, 0.1, 0.8)
        assert rep.log_line() == "3\t0.5\t\t-0.25\t1\t0.1\t0.8"
        assert len(O.EpochReport.LOG_HEADER.split("\t")) == 7
