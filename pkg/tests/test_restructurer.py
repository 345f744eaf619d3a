import numpy as np
import pytest

from srcis.backbone import LowRankAdapter, backbone_init, compose
from srcis.detector import DetectorConfig, OnlineExperience
from srcis.errors import ValidationError
from srcis.learner import TrainConfig, learn_task
from srcis.memory import MemoryStore, ScenarioRecord, allocate_prototypes, push_stm, record_scenario
from srcis.numkit import seeded_rng
from srcis.oracles import MockDescriber, MockReproducer
from srcis.restructurer import (ReplaySet, RestructureConfig, optimize_alpha, replay, replay_loss,
                                restructure)
from srcis.stream import gen_stream


@pytest.fixture(scope="module")
def trained():
    stream = gen_stream("gaussian-clusters", n_classes=6, n_tasks=3, input_dim=6, train_per_class=40,
                        test_per_class=10, seed=2, cluster_std=0.5)
    bk = backbone_init(6, 12, seed=0)
    store = MemoryStore(period_e=3)
    exp = OnlineExperience()
    cfg = TrainConfig(lr=0.05, m_scenarios_per_class=4, rank=2)
    for task in stream.tasks[:2]:
        learn_task(task, store, bk, exp, DetectorConfig(), MockDescriber(), cfg)
    return stream, bk, store, exp, cfg


def test_replay_sampling():
    store = MemoryStore()
    for i in range(5):
        record_scenario(store, ScenarioRecord(0, i % 2, f"class=c; v=[{i}.00]"))
    rs = replay(store, MockReproducer(sigma=0.0), 5, seed=0)
    assert sorted(rs.source) == [0, 1, 2, 3, 4]  # no repeats while n <= pool
    assert sorted(rs.x[:, 0].tolist()) == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert len(replay(store, MockReproducer(), 12, seed=0)) == 12
    a, b = replay(store, MockReproducer(), 3, seed=9), replay(store, MockReproducer(), 3, seed=9)
    assert np.array_equal(a.x, b.x)
    with pytest.raises(ValidationError):
        replay(MemoryStore(), MockReproducer(), 3, seed=0)


def test_replay_skips_unparseable():
    store = MemoryStore()
    record_scenario(store, ScenarioRecord(0, 0, "garbage"))
    record_scenario(store, ScenarioRecord(0, 1, "class=c; v=[1.00]"))
    rs = replay(store, MockReproducer(), 2, seed=0)
    assert rs.y.tolist() == [1]


def test_optimize_never_worse_and_bounded(trained):
    _, bk, store, _, _ = trained
    rs = replay(store, MockReproducer(seed=1), len(store.scenario_pool), seed=3)
    cfg = RestructureConfig(max_evals=60)
    res = optimize_alpha(store.stm_adapters, store, bk, rs, cfg)
    assert res.replay_loss_after <= res.replay_loss_before
    assert np.all(np.abs(res.alpha) <= cfg.alpha_bound)
    assert res.n_evals <= cfg.max_evals + 5
    assert np.array_equal(res.w_sigma, compose(store.stm_adapters, res.alpha))
    assert replay_loss(res.w_sigma, bk, store, rs) == pytest.approx(res.replay_loss_after, abs=1e-12)
    with pytest.raises(ValidationError):
        optimize_alpha([], store, bk, rs)
    with pytest.raises(ValidationError):
        optimize_alpha(store.stm_adapters, store, bk, ReplaySet(np.empty((0, 6)), np.empty(0, int)))


def test_single_adapter_starts_at_unit_weight(trained):
    _, bk, store, _, _ = trained
    rs = replay(store, MockReproducer(seed=1), 8, seed=3)
    ad = store.stm_adapters[0]
    res = optimize_alpha([ad], store, bk, rs, RestructureConfig(max_evals=1))
    # one evaluation: the starting point alpha = 1/t = 1
    assert res.alpha.tolist() == [1.0]
    assert np.array_equal(res.w_sigma, ad.delta())


def test_restructure_period_reset():
    rng = seeded_rng(0)
    bk = backbone_init(4, 6, seed=0)
    store = MemoryStore(period_e=3)
    allocate_prototypes(store, [0, 1], 6, init_seed=0)
    record_scenario(store, ScenarioRecord(0, 0, "class=c; v=[0.10,0.20,0.30,0.40]"))
    record_scenario(store, ScenarioRecord(0, 1, "class=c; v=[-0.10,0.20,-0.30,0.40]"))
    sizes = []
    protos_before = {c: p.p_w.copy() for c, p in store.prototypes.items()}
    for t in range(6):
        push_stm(store, LowRankAdapter(t, rng.normal(size=(2, 4)), rng.normal(size=(6, 2)) * 0.1))
        rep = restructure(store, bk, MockReproducer(), RestructureConfig(max_evals=30), round_idx=t)
        assert not rep.skipped and rep.loss_after <= rep.loss_before
        sizes.append(len(store.stm_adapters))
        assert len(store.stm_adapters) <= store.period_e
        assert store.ltm_adapter.shape == (6, 4)
    assert sizes == [1, 2, 1, 2, 1, 2]
    assert store.stm_adapters[0].composite and store.stm_adapters[0].task_id == 4
    for c, p in store.prototypes.items():
        assert np.array_equal(p.p_w, protos_before[c])


def test_restructure_empty_pool_is_noop():
    store = MemoryStore()
    allocate_prototypes(store, [0], 6, init_seed=0)
    push_stm(store, LowRankAdapter(0, np.ones((1, 4)), np.ones((6, 1))))
    rep = restructure(store, backbone_init(4, 6), MockReproducer())
    assert rep.skipped and store.ltm_adapter is None and len(store.stm_adapters) == 1
    with pytest.raises(ValidationError):
        restructure(MemoryStore(), backbone_init(4, 6), MockReproducer())
