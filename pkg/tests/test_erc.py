"""Target-task model: forward causality, losses, prediction, training."""
import math

import numpy as np
import pytest

import oracles
from tlerc.checkpoint import load_checkpoint, save_checkpoint
from tlerc.corpus import Conversation, Corpus, Utterance
from tlerc.erc import (EarlyStopper, ErcConfig, ExternalVectorPlugin,
                       TrainErcConfig, build_erc_model,
                       checkpoint_from_erc, erc_forward, erc_from_checkpoint,
                       erc_loss, evaluate_loss, load_vector_file, predict,
                       save_vector_file, train_erc)
from tlerc.errors import ContractError, FormatError
from tlerc.tensor import Tape, backward


def _conv(cid, specs):
    return Conversation(cid, [Utterance(s, list(t), lab) for s, t, lab in specs])


def _vector_plugin(conv_ids, n_turns, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    table = {(cid, i): rng.uniform(-1, 1, size=dim)
             for cid in conv_ids for i in range(n_turns)}
    return ExternalVectorPlugin(dim=dim, table=table)


def _labeled_conv(cid, labels):
    return _conv(cid, [("A" if i % 2 == 0 else "B", ["w"], lab)
                       for i, lab in enumerate(labels)])


def _external_model(conv_ids, n_turns, labels=("e0", "e1", "e2"), hidden=3,
                    dim=3, seed=0, dropout=0.0):
    plugin = _vector_plugin(conv_ids, n_turns, dim=dim, seed=seed)
    config = ErcConfig(hidden=hidden, labels=tuple(labels), dropout=dropout)
    return build_erc_model(config, plugin, seed=seed)


class TestForward:
    def test_causality_under_suffix_perturbation(self):
        model = _external_model(["c"], 4)
        base = _labeled_conv("c", ["e0", "e1", "e0", "e2"])
        outs = [o.data.copy() for o in erc_forward(model, base)]
        # perturb the last utterance's vector only
        model.plugin.table[("c", 3)] = model.plugin.table[("c", 3)] + 5.0
        outs2 = [o.data.copy() for o in erc_forward(model, base)]
        for t in range(3):
            np.testing.assert_array_equal(outs[t], outs2[t])
        assert not np.array_equal(outs[3], outs2[3])

    def test_zero_params_give_identical_uniform_logits(self):
        model = _external_model(["c"], 3)
        for t in model.params.tensors():
            t.data = np.zeros_like(t.data)
        conv = _labeled_conv("c", ["e0", "e1", "e2"])
        outs = erc_forward(model, conv)
        for o in outs:
            np.testing.assert_array_equal(o.data, np.zeros(3))

    def test_matches_unroll_oracle(self):
        model = _external_model(["c"], 2, hidden=2, dim=2, seed=4)
        conv = _labeled_conv("c", ["e0", "e1"])
        got = [o.data for o in erc_forward(model, conv)]
        p = model.params
        ctx = {k: p[f"context/{n}"].data.tolist()
               for n, k in [("V_z", "Vz"), ("V_r", "Vr"), ("V_h", "Vh"),
                            ("W_z", "Wz"), ("W_r", "Wr"), ("W_h", "Wh"),
                            ("b_z", "bz"), ("b_r", "br"), ("b_h", "bh")]}
        ctx["Wp"] = p["context/W_p"].data.tolist()
        ctx["bp"] = p["context/b_p"].data.tolist()
        vecs = [model.plugin.table[("c", 0)].tolist(),
                model.plugin.table[("c", 1)].tolist()]
        want = oracles.erc_forward(vecs, ctx, p["head/W"].data.tolist(),
                                   p["head/b"].data.tolist())
        for g, w in zip(got, want):
            np.testing.assert_allclose(g, w, atol=1e-12)

    def test_missing_external_vector_names_key(self):
        model = _external_model(["c"], 2)
        conv = _labeled_conv("c", ["e0", "e1", "e2"])  # 3 turns, table has 2
        with pytest.raises(KeyError, match="'c' utterance 2"):
            erc_forward(model, conv)

    def test_empty_conversation_rejected(self):
        model = _external_model(["c"], 1)
        with pytest.raises(ContractError):
            erc_forward(model, Conversation("c", []))


class TestLoss:
    def test_saturated_correct_predictions(self):
        model = _external_model(["c"], 3, labels=("e0", "e1"))
        for t in model.params.tensors():
            t.data = np.zeros_like(t.data)
        model.params["head/b"].data = np.array([40.0, -40.0])
        conv = _labeled_conv("c", ["e0", "e0", "e0"])
        assert erc_loss(model, conv).item() < 1e-6

    def test_zero_params_uniform_loss(self):
        model = _external_model(["c"], 4, labels=("e0", "e1", "e2"))
        for t in model.params.tensors():
            t.data = np.zeros_like(t.data)
        conv = _labeled_conv("c", ["e0", "e1", "e2", "e0"])
        assert erc_loss(model, conv).item() == pytest.approx(4 * math.log(3), abs=1e-12)

    def test_equals_per_turn_oracle_sum(self):
        model = _external_model(["c"], 3, seed=6)
        conv = _labeled_conv("c", ["e0", "e2", "e1"])
        outs = erc_forward(model, conv)
        idx = model.label_index
        want = sum(oracles.cross_entropy(o.data.tolist(), idx[u.label])
                   for o, u in zip(outs, conv.utterances))
        assert erc_loss(model, conv).item() == pytest.approx(want, abs=1e-12)

    def test_unlabeled_turns_shape_context_but_add_no_loss(self):
        model = _external_model(["c"], 3, seed=7)
        conv = _conv("c", [("A", ["w"], "e0"), ("B", ["w"], None), ("A", ["w"], "e1")])
        outs = erc_forward(model, conv)
        idx = model.label_index
        want = (oracles.cross_entropy(outs[0].data.tolist(), idx["e0"])
                + oracles.cross_entropy(outs[2].data.tolist(), idx["e1"]))
        assert erc_loss(model, conv).item() == pytest.approx(want, abs=1e-12)

    def test_no_scored_turns_rejected(self):
        model = _external_model(["c"], 2)
        conv = _conv("c", [("A", ["w"], None), ("B", ["w"], None)])
        with pytest.raises(ContractError):
            erc_loss(model, conv)

    def test_unknown_label_rejected(self):
        model = _external_model(["c"], 1, labels=("e0",))
        with pytest.raises(ContractError, match="zzz"):
            erc_loss(model, _labeled_conv("c", ["zzz"]))


class TestRegression:
    def _reg_model(self, cid="c", turns=3, dims=("valence", "arousal")):
        plugin = _vector_plugin([cid], turns, dim=3, seed=1)
        config = ErcConfig(hidden=3, task="regression", dims=tuple(dims))
        return build_erc_model(config, plugin, seed=1)

    def test_forward_width_is_dimension_count(self):
        model = self._reg_model()
        conv = _conv("c", [("A", ["w"], None)] * 3)
        outs = erc_forward(model, conv)
        assert all(o.shape == (2,) for o in outs)

    def test_loss_sums_per_turn_mse(self):
        model = self._reg_model()
        conv = _conv("c", [("A", ["w"], None), ("B", ["w"], None)])
        conv.utterances[0].targets = {"valence": 0.5, "arousal": -0.5}
        conv.utterances[1].targets = {"valence": 0.0, "arousal": 1.0}
        outs = erc_forward(model, conv)
        want = 0.0
        for o, u in zip(outs, conv.utterances):
            target = [u.targets["valence"], u.targets["arousal"]]
            want += sum((a - b) ** 2 for a, b in zip(o.data, target)) / 2
        assert erc_loss(model, conv).item() == pytest.approx(want, abs=1e-12)

    def test_partial_targets_skip_turn(self):
        model = self._reg_model()
        conv = _conv("c", [("A", ["w"], None), ("B", ["w"], None)])
        conv.utterances[0].targets = {"valence": 0.5}  # arousal missing
        conv.utterances[1].targets = {"valence": 0.0, "arousal": 1.0}
        outs = erc_forward(model, conv)
        want = sum((a - b) ** 2 for a, b in
                   zip(outs[1].data, [0.0, 1.0])) / 2
        assert erc_loss(model, conv).item() == pytest.approx(want, abs=1e-12)


class TestPredict:
    def test_tie_breaks_to_lowest_index(self):
        model = _external_model(["c"], 1, labels=("e0", "e1", "e2"))
        for t in model.params.tensors():
            t.data = np.zeros_like(t.data)
        model.params["head/b"].data = np.array([1.0, 1.0, 0.0])
        assert predict(model, _labeled_conv("c", ["e2"])) == ["e0"]

    def test_argmax_shift_invariance(self):
        model = _external_model(["c"], 3, seed=8)
        conv = _labeled_conv("c", ["e0", "e1", "e2"])
        before = predict(model, conv)
        model.params["head/b"].data = model.params["head/b"].data + 7.5
        assert predict(model, conv) == before

    def test_positive_affine_logit_invariance(self):
        # scaling the head by a > 0 and shifting the bias transforms every
        # logit vector affinely; predictions (and hence metrics) must not move
        model = _external_model(["c"], 4, seed=15)
        conv = _labeled_conv("c", ["e0", "e1", "e2", "e0"])
        before = predict(model, conv)
        a, c = 3.25, -1.5
        model.params["head/W"].data = a * model.params["head/W"].data
        model.params["head/b"].data = a * model.params["head/b"].data + c
        assert predict(model, conv) == before

    def test_round_trip_checkpoint_preserves_predictions(self, tmp_path):
        vec_path = tmp_path / "vectors.tsv"
        plugin = _vector_plugin(["c", "d"], 4, dim=3, seed=9)
        save_vector_file(plugin.table, 3, vec_path)
        plugin = load_vector_file(vec_path)
        config = ErcConfig(hidden=3, labels=("e0", "e1"))
        model = build_erc_model(config, plugin, seed=9)
        convs = [_labeled_conv("c", ["e0", "e1", "e0", "e1"]),
                 _labeled_conv("d", ["e1", "e1", "e0", "e0"])]
        # quantize to float32 so the file round trip is value-exact
        for t in model.params.tensors():
            t.data = t.data.astype("<f4").astype(np.float64)
        before = [predict(model, c) for c in convs]
        path = tmp_path / "erc.ckpt"
        save_checkpoint(checkpoint_from_erc(model), path)
        again = erc_from_checkpoint(load_checkpoint(path))
        assert [predict(again, c) for c in convs] == before


class TestDropout:
    def test_rate_zero_is_identity(self):
        model = _external_model(["c"], 3, seed=10, dropout=0.0)
        conv = _labeled_conv("c", ["e0", "e1", "e0"])
        rng = np.random.default_rng(0)
        a = [o.data for o in erc_forward(model, conv, train=True, rng=rng)]
        b = [o.data for o in erc_forward(model, conv, train=False)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_training_applies_mask_inference_does_not(self):
        model = _external_model(["c"], 3, seed=11, dropout=0.5)
        conv = _labeled_conv("c", ["e0", "e1", "e0"])
        inf1 = [o.data for o in erc_forward(model, conv)]
        inf2 = [o.data for o in erc_forward(model, conv)]
        for x, y in zip(inf1, inf2):
            np.testing.assert_array_equal(x, y)
        tr = [o.data for o in erc_forward(model, conv, train=True,
                                          rng=np.random.default_rng(1))]
        assert any(not np.array_equal(x, y) for x, y in zip(inf1, tr))

    def test_dropout_needs_rng(self):
        model = _external_model(["c"], 1, seed=12, dropout=0.5)
        with pytest.raises(ContractError):
            erc_forward(model, _labeled_conv("c", ["e0"]), train=True)


class TestExternalVectorIsolation:
    def test_gradients_never_touch_vector_storage(self):
        model = _external_model(["c"], 3, seed=13)
        conv = _labeled_conv("c", ["e0", "e1", "e2"])
        stored = {k: v.copy() for k, v in model.plugin.table.items()}
        with Tape():
            loss = erc_loss(model, conv)
        grads = backward(loss, model.params)
        assert all(not k.startswith("encoder/") for k in grads)
        for k, v in model.plugin.table.items():
            np.testing.assert_array_equal(v, stored[k])

    def test_vector_file_format_errors(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("conv\t0\t1 2 3\n", encoding="utf-8")
        with pytest.raises(FormatError, match="header"):
            load_vector_file(bad)
        bad.write_text("dim\t3\nconv\t0\t1 2\n", encoding="utf-8")
        with pytest.raises(FormatError, match="header says 3"):
            load_vector_file(bad)


class TestEarlyStopping:
    def test_patience_trace_stops_at_thirteen(self):
        stopper = EarlyStopper(patience=10)
        losses = [5.0, 4.0, 3.0] + [3.0] * 10
        stopped_at = None
        for epoch, loss in enumerate(losses, start=1):
            if stopper.update(loss):
                stopped_at = epoch
                break
        assert stopped_at == 13
        assert stopper.best_epoch == 3

    def test_monotone_improvement_never_stops(self):
        stopper = EarlyStopper(patience=10)
        for epoch in range(1, 31):
            assert not stopper.update(100.0 - epoch)
        assert stopper.best_epoch == 30


class TestTrainErc:
    def _data(self, n=8, turns=4, seed=0):
        rng = np.random.default_rng(seed)
        ids = [f"t{i}" for i in range(n)]
        convs = []
        for cid in ids:
            labels = [f"e{int(rng.integers(2))}" for _ in range(turns)]
            convs.append(_labeled_conv(cid, labels))
        return ids, Corpus(convs)

    def _model(self, ids, turns=4, seed=0):
        plugin = _vector_plugin(ids, turns, dim=3, seed=seed)
        # correlate vectors with labels so the task is learnable
        return build_erc_model(ErcConfig(hidden=4, labels=("e0", "e1")),
                               plugin, seed=seed)

    def test_best_snapshot_reproduces_recorded_val_loss(self):
        ids, corpus = self._data(8)
        model = self._model(ids)
        train = Corpus(corpus.conversations[:6])
        val = Corpus(corpus.conversations[6:])
        result = train_erc(model, train, val,
                           TrainErcConfig(lr=5e-3, max_epochs=12, patience=5, seed=0))
        assert result.best_epoch >= 1
        assert evaluate_loss(model, val) == pytest.approx(result.best_val_loss,
                                                          abs=1e-9)
        assert result.val_trace[result.best_epoch - 1] == pytest.approx(
            result.best_val_loss, abs=1e-12)

    def test_deterministic_given_seed(self):
        ids, corpus = self._data(8, seed=3)
        train = Corpus(corpus.conversations[:6])
        val = Corpus(corpus.conversations[6:])
        traces = []
        for _ in range(2):
            model = self._model(ids, seed=3)
            result = train_erc(model, train, val,
                               TrainErcConfig(lr=5e-3, max_epochs=8, patience=4,
                                              seed=11))
            traces.append((result.val_trace, result.best_epoch))
        assert traces[0] == traces[1]

    def test_test_metric_attached(self):
        ids, corpus = self._data(9, seed=4)
        train = Corpus(corpus.conversations[:6])
        val = Corpus(corpus.conversations[6:8])
        test = Corpus(corpus.conversations[8:])
        model = self._model(ids, seed=4)
        result = train_erc(model, train, val,
                           TrainErcConfig(lr=5e-3, max_epochs=6, patience=3, seed=2,
                                          test=test))
        assert result.metric_value is not None
        assert 0.0 <= result.metric_value <= 1.0
        assert result.eval_detail["metric"] == "weighted_f"
