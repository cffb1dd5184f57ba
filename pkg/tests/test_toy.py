import numpy as np
import pytest

from distildoc.errors import ConfigurationError, DomainError
from distildoc.io import mlp_from_dict, mlp_to_dict
from distildoc.losses import KDHyperparams
from distildoc.metrics import accuracy
from distildoc.projector import make_projector
from distildoc.toy import (
    METHODS,
    Mlp,
    SimkdReuse,
    TrainConfig,
    blob_centers,
    distill_experiment,
    distill_sweep,
    evaluate,
    gen_gaussian_blobs,
    train,
)


@pytest.fixture(scope="module")
def blobs():
    return gen_gaussian_blobs(3, 100, 0.15, seed=0)


@pytest.fixture(scope="module")
def teacher(blobs):
    return train(Mlp.init((2, 32, 32, 3), 0), blobs, TrainConfig("ce", epochs=15)).model


class TestBlobs:
    def test_balanced_counts(self):
        d = gen_gaussian_blobs(3, 10, 0.2, seed=1)
        assert len(d) == 30
        assert np.bincount(d.labels).tolist() == [10, 10, 10]

    def test_zero_spread_rejected(self):
        with pytest.raises(DomainError):
            gen_gaussian_blobs(3, 10, 0.0, seed=1)

    def test_bit_identical_regeneration(self):
        a, b = gen_gaussian_blobs(4, 20, 0.3, 5), gen_gaussian_blobs(4, 20, 0.3, 5)
        assert a.points.tobytes() == b.points.tobytes()

    def test_nearest_centroid_oracle(self):
        d = gen_gaussian_blobs(3, 500, 0.1, seed=2)
        c = blob_centers(3)
        dists = ((d.points[:, None, :] - c[None, :, :]) ** 2).sum(-1)
        assert np.mean(dists.argmin(1) == d.labels) >= 0.99


class TestTrain:
    def test_zero_lr_keeps_weights(self, blobs):
        m = Mlp.init((2, 8, 8, 3), 3)
        r = train(m, blobs, TrainConfig("ce", learning_rate=0.0, epochs=1))
        assert r.model.checksum() == m.checksum()

    def test_vanilla_descends(self, blobs, teacher):
        r = train(Mlp.init((2, 8, 8, 3), 4), blobs, TrainConfig("vanilla", epochs=10), teacher)
        assert r.loss_trace[-1] < r.loss_trace[0]

    def test_kd_needs_teacher(self, blobs):
        with pytest.raises(ConfigurationError):
            train(Mlp.init((2, 8, 8, 3), 0), blobs, TrainConfig("nkd"))

    def test_conv_reshape_rejected_for_vectors(self, blobs, teacher):
        cfg = TrainConfig("simkd", projector_kind="conv-reshape", epochs=1)
        with pytest.raises(ConfigurationError):
            train(Mlp.init((2, 8, 8, 3), 0), blobs, cfg, teacher)

    @pytest.mark.parametrize("method", METHODS[1:])
    def test_teacher_untouched_and_trace_finite(self, blobs, teacher, method):
        before = teacher.checksum()
        r = train(Mlp.init((2, 8, 8, 3), 1), blobs, TrainConfig(method, epochs=3), teacher)
        assert teacher.checksum() == before
        assert np.all(np.isfinite(r.loss_trace))

    def test_deterministic(self, blobs, teacher):
        cfg = TrainConfig("nkd", hyperparams=KDHyperparams(tau=1.0, gamma=1.5), epochs=3, seed=9)
        a = train(Mlp.init((2, 8, 8, 3), 1), blobs, cfg, teacher)
        b = train(Mlp.init((2, 8, 8, 3), 1), blobs, cfg, teacher)
        assert a.model.checksum() == b.model.checksum()
        assert a.loss_trace == b.loss_trace

    def test_simkd_agrees_with_teacher(self, blobs, teacher):
        held_out = gen_gaussian_blobs(3, 100, 0.15, seed=77)
        r = train(Mlp.init((2, 8, 8, 3), 2), blobs, TrainConfig("simkd", epochs=15), teacher)
        rec = evaluate(r.model, held_out, SimkdReuse(r.projector, teacher.head))
        ref = evaluate(teacher, held_out)
        agree = np.mean([a.prediction == b.prediction for a, b in zip(rec, ref)])
        assert agree >= 0.9


class TestEvaluate:
    def test_trained_beats_random(self, blobs, teacher):
        assert accuracy(evaluate(teacher, blobs)) >= accuracy(evaluate(Mlp.init((2, 32, 32, 3), 5), blobs))

    def test_simkd_reuse_degenerate_equality(self, blobs, teacher):
        proj = make_projector("identity", (32,), (32,))
        own = evaluate(teacher, blobs)
        reused = evaluate(teacher, blobs, SimkdReuse(proj, teacher.head))
        assert own == reused

    def test_records_are_distributions(self, blobs, teacher):
        for r in evaluate(teacher, blobs):
            assert 0 < r.confidence <= 1
            assert sum(r.probabilities) == pytest.approx(1.0, abs=1e-12)
            assert r.confidence == max(r.probabilities)


def test_mlp_json_round_trip(teacher):
    clone = mlp_from_dict(mlp_to_dict(teacher, 0))
    assert clone.checksum() == teacher.checksum()
    assert mlp_to_dict(clone, 0) == mlp_to_dict(teacher, 0)


def test_sweep_matches_single_runs():
    cfgs = [TrainConfig(m, epochs=2, seed=4) for m in ("vanilla", "simkd")]
    kw = dict(n_per_class=30, teacher_width=8)
    sweep = distill_sweep(cfgs, **kw)
    for cfg, run in zip(cfgs, sweep):
        single = distill_experiment(cfg, **kw)
        assert run.kd_student.model.checksum() == single.kd_student.model.checksum()
        assert run.teacher.model.checksum() == single.teacher.model.checksum()


def test_sweep_rejects_mixed_seeds():
    with pytest.raises(ConfigurationError):
        distill_sweep([TrainConfig("ce", seed=0), TrainConfig("vanilla", seed=1)])
