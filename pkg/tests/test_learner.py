import copy

import numpy as np
import pytest

from srcis.backbone import LowRankAdapter, backbone_init, forward
from srcis.detector import DetectorConfig, OnlineExperience
from srcis.errors import InvariantError
from srcis.learner import (TrainConfig, learn_task, new_adapter, seen_confidence, tpa_arrays,
                           tpa_loss, train_step)
from srcis.memory import MemoryStore, PrototypeEntry, allocate_prototypes
from srcis.numkit import finite_diff_grad, seeded_rng
from srcis.oracles import MockDescriber
from srcis.stream import gen_stream


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-12, np.max(np.abs(b)))


def random_problem(seed, n=6, d=5, k=4):
    rng = seeded_rng(seed)
    xi = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    w = rng.normal(size=(k, d))
    b = rng.normal(size=k)
    tau = rng.uniform(0.6, 1.2, size=k)
    return xi, y, w, b, tau


def test_tpa_uniform_scores():
    # all scores equal: loss is log(k) regardless of temperatures
    xi = np.zeros((3, 4))
    loss, *_ = tpa_arrays(xi, np.array([0, 1, 2]), np.ones((3, 4)), np.zeros(3), np.array([0.5, 1, 2]))
    assert loss == pytest.approx(np.log(3), abs=1e-14)


def test_tpa_single_class_zero_loss():
    loss, d_xi, d_w, d_b = tpa_arrays(np.ones((2, 3)), np.array([0, 0]), np.ones((1, 3)), np.zeros(1),
                                      np.ones(1))
    assert loss == 0.0 and not d_xi.any() and not d_w.any() and not d_b.any()


@pytest.mark.parametrize("seed", range(5))
def test_tpa_gradients_finite_diff(seed):
    xi, y, w, b, tau = random_problem(seed)
    _, d_xi, d_w, d_b = tpa_arrays(xi, y, w, b, tau)
    assert rel_err(d_xi, finite_diff_grad(lambda v: tpa_arrays(v, y, w, b, tau)[0], xi)) < 1e-6
    assert rel_err(d_w, finite_diff_grad(lambda v: tpa_arrays(xi, y, v, b, tau)[0], w)) < 1e-6
    assert rel_err(d_b, finite_diff_grad(lambda v: tpa_arrays(xi, y, w, v, tau)[0], b)) < 1e-6


def test_tpa_loss_dict_interface():
    xi, y, w, b, tau = random_problem(1, k=3)
    labels = [10 + int(v) for v in y]
    protos = {10 + i: PrototypeEntry(10 + i, w[i], b[i], tau[i]) for i in range(3)}
    loss, grads = tpa_loss(xi, labels, protos, [10, 11, 12])
    ref = tpa_arrays(xi, y, w, b, tau)
    assert loss == ref[0]
    assert np.array_equal(grads["p_w"][11], ref[2][1])
    with pytest.raises(InvariantError):
        tpa_loss(xi, labels, protos, [10, 11])
    with pytest.raises(InvariantError):
        tpa_loss(xi, [99], protos)


def test_adapter_gradient_end_to_end():
    bk = backbone_init(5, 4, depth=2, seed=2)
    rng = seeded_rng(3)
    ad = LowRankAdapter(0, rng.normal(size=(2, 5)) * 0.3, rng.normal(size=(4, 2)) * 0.3)
    store = MemoryStore()
    allocate_prototypes(store, [0, 1, 2], 4, init_seed=1)
    x = rng.normal(size=(6, 5))
    y = np.array([0, 1, 2, 0, 1, 2])

    def loss_of(a, b):
        return tpa_loss(forward(bk, LowRankAdapter(0, a, b), x), y, store.prototypes)[0]

    # one SGD step with lr=h moves the parameters by -h * grad; recover the grads from it
    h = 1e-3
    ad2 = LowRankAdapter(0, ad.a.copy(), ad.b.copy())
    train_step(ad2, copy.deepcopy(store), bk, x, y, OnlineExperience(), DetectorConfig(),
               TrainConfig(lr=h))
    g_a = (ad.a - ad2.a) / h
    g_b = (ad.b - ad2.b) / h
    assert rel_err(g_a, finite_diff_grad(lambda v: loss_of(v, ad.b), ad.a)) < 1e-6
    assert rel_err(g_b, finite_diff_grad(lambda v: loss_of(ad.a, v), ad.b)) < 1e-6


def test_new_adapter_zero_delta():
    ad = new_adapter(0, (8, 6), 3, seed=1)
    assert ad.rank == 3 and not ad.delta().any()


def test_train_step_updates_experience_and_tau():
    bk = backbone_init(4, 6, seed=0)
    store = MemoryStore()
    allocate_prototypes(store, [0, 1], 6, init_seed=0)
    exp = OnlineExperience()
    ad = new_adapter(0, bk.target_shape, 2, seed=0)
    rng = seeded_rng(0)
    x, y = rng.normal(size=(8, 4)), np.array([0, 1] * 4)
    s1 = train_step(ad, store, bk, x, y, exp, DetectorConfig(), TrainConfig(lr=0.1))
    assert exp.warm and s1.counts == {}  # no feedback before the first EMA update
    assert store.prototypes[0].tau == 1.0
    s2 = train_step(ad, store, bk, x, y, exp, DetectorConfig(), TrainConfig(lr=0.1))
    assert set(s2.counts) == {"hp", "hn", "lp", "ln"}
    assert store.prototypes[0].tau != 1.0
    assert exp.n_batches == 2


def test_lr_zero_leaves_parameters():
    bk = backbone_init(4, 6, seed=0)
    store = MemoryStore()
    allocate_prototypes(store, [0, 1], 6, init_seed=0)
    ad = new_adapter(0, bk.target_shape, 2, seed=0)
    a0, pw0 = ad.a.copy(), store.prototypes[0].p_w.copy()
    train_step(ad, store, bk, np.ones((2, 4)), [0, 1], OnlineExperience(), DetectorConfig(),
               TrainConfig(lr=0.0))
    assert np.array_equal(ad.a, a0) and np.array_equal(store.prototypes[0].p_w, pw0)


def test_seen_confidence_shape():
    store = MemoryStore()
    allocate_prototypes(store, [3, 5, 7], 4, init_seed=0)
    conf, pred, probs = seen_confidence(np.ones((2, 4)), store)
    assert probs.shape == (2, 3) and set(pred.tolist()) <= {3, 5, 7}
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_learn_task_single_task_learns():
    stream = gen_stream("gaussian-clusters", n_classes=4, n_tasks=1, input_dim=8, train_per_class=100,
                        test_per_class=50, seed=1, cluster_std=0.5)
    task = stream.tasks[0]
    bk = backbone_init(8, 16, seed=0)
    store = MemoryStore()
    exp = OnlineExperience()
    cfg = TrainConfig(lr=0.05, epochs_per_task=3, m_scenarios_per_class=5)
    ad = learn_task(task, store, bk, exp, DetectorConfig(), MockDescriber(), cfg)
    assert store.stm_adapters == [ad]
    assert len(store.scenario_pool) == 4 * 5
    _, pred, _ = seen_confidence(forward(bk, ad, task.x_test), store)
    assert np.mean(pred == task.y_test) > 0.8
    for c in task.classes:
        assert 0 < store.prototypes[c].tau


def test_learn_task_skips_failing_describer():
    class Broken:
        def describe(self, x, y):
            return "   "

    stream = gen_stream("gaussian-clusters", n_classes=2, n_tasks=1, input_dim=4, train_per_class=10,
                        test_per_class=5, seed=0)
    store = MemoryStore()
    events = []
    learn_task(stream.tasks[0], store, backbone_init(4, 6), OnlineExperience(), DetectorConfig(),
               Broken(), TrainConfig(lr=0.01), log=events.append)
    assert store.scenario_pool == []
    assert events[-1] == {"event": "describe_failures", "task": 0, "count": 10}
