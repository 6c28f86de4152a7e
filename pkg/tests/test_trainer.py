import csv
import math

import numpy as np
import pytest

from mvsubspace import autoencoder as ae
from mvsubspace.dataset import MultiViewDataset, SyntheticSpec, generate_synthetic
from mvsubspace.selfexpr import Lambdas, SelfExprState, total_loss
from mvsubspace.trainer import (
    AdamState,
    NonFiniteLossError,
    TrainConfig,
    _seeds,
    adam_step,
    default_lambda1,
    finetune,
    objective_and_grads,
    pretrain,
    train,
)
from oracles import numeric_grad, rel_err


def _small(seed=0, views=2, per_cluster=4):
    return generate_synthetic(SyntheticSpec(k=2, per_cluster=per_cluster, views=views,
                                            ambient_dims=[6, 7, 5][:views], seed=seed))


def _quick(**kw):
    base = dict(widths=[5, 4, 3], pretrain_epochs=30, finetune_epochs=20, kmeans_restarts=5)
    base.update(kw)
    return TrainConfig(**base)


def test_default_lambda1_values():
    assert default_lambda1(40) == pytest.approx(10.0)
    assert default_lambda1(30) == pytest.approx(1.0)
    assert default_lambda1(15) == pytest.approx(10 ** -1.5)
    with pytest.raises(ValueError):
        default_lambda1(0)


def test_config_lambda_modes_and_validation():
    assert TrainConfig().lambdas(3) == Lambdas(10.0, 1.0, 0.1, 0.1)
    assert TrainConfig(lambda1_mode="auto").lambdas(40).lambda1 == pytest.approx(10.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda1_mode="auto").lambdas(None)
    for bad in (dict(learning_rate=0.0), dict(pretrain_epochs=-1), dict(adam_beta1=1.0),
                dict(adam_beta2=-0.1), dict(lambda3=-1.0), dict(lambda1_mode="other")):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


def test_config_dict_round_trip():
    cfg = TrainConfig(lambda2=0.5, widths=[[4, 3, 2], [5, 3, 2]], seed=7)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lambda5": 1.0})


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    before = [x.copy() for x in p]
    adam_step(p, [np.zeros(2), np.zeros((2, 2))], AdamState.zeros_like(p))
    for a, b in zip(p, before):
        np.testing.assert_array_equal(a, b)


def test_adam_constant_gradient_unit_step():
    p = [np.array([0.0, 0.0, 0.0])]
    state = AdamState.zeros_like(p)
    g = np.array([0.3, -2.0, 7.0])
    for _ in range(500):
        before = p[0].copy()
        adam_step(p, [g], state, lr=1e-3)
    np.testing.assert_allclose(np.abs(p[0] - before), 1e-3, atol=1e-6)
    assert state.t == 500


def test_adam_first_step_matches_closed_form():
    p = [np.array([1.0])]
    adam_step(p, [np.array([4.0])], AdamState.zeros_like(p), lr=0.1, eps=1e-8)
    assert p[0][0] == pytest.approx(1.0 - 0.1 * 4.0 / (4.0 + 1e-8), abs=1e-15)


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(3)], AdamState.zeros_like(p))


def test_pretrain_zero_epochs_returns_init():
    ds = _small()
    nets, hist = pretrain(ds, _quick(pretrain_epochs=0))
    again, _ = pretrain(ds, _quick(pretrain_epochs=0))
    assert hist == [[], []]
    for a, b in zip(nets, again):
        for x, y in zip(a.weights(), b.weights()):
            assert x.tobytes() == y.tobytes()


def test_pretrain_reduces_reconstruction_loss():
    # ten samples on a random line in R^16; narrower bias-free ReLU nets often die at init
    ratios = []
    for seed in range(8):
        rng = np.random.default_rng(seed)
        basis = np.linalg.qr(rng.normal(size=(16, 1)))[0]
        x = rng.uniform(-1, 1, size=(10, 1)) @ basis.T
        _, hist = pretrain(MultiViewDataset("line", [x]), TrainConfig(pretrain_epochs=200, seed=seed))
        assert all(math.isfinite(v) for v in hist[0])
        assert hist[0][-1] < hist[0][0]
        ratios.append(hist[0][-1] / hist[0][0])
    assert np.median(ratios) < 0.1


def test_pretrain_aborts_on_non_finite_loss():
    ds = MultiViewDataset("big", [np.full((4, 3), 1e200)])
    with pytest.raises(NonFiniteLossError, match="reconstruction loss"):
        pretrain(ds, _quick(pretrain_epochs=2))


def test_finetune_aborts_naming_the_term():
    ds = _small()
    nets, _ = pretrain(ds, _quick(pretrain_epochs=0))
    huge = MultiViewDataset("huge", [x * 1e200 for x in ds.views], ds.labels)
    with pytest.raises(NonFiniteLossError) as info:
        finetune(huge, nets, _quick(), 2)
    assert info.value.term == "ae_loss"
    assert info.value.epoch == 1


def test_finetune_all_lambdas_zero_keeps_z():
    ds = _small()
    cfg = _quick(lambda1=0.0, lambda2=0.0, lambda3=0.0, lambda4=0.0)
    nets, _ = pretrain(ds, cfg)
    state, _, _, log = finetune(ds, nets, cfg, 2)
    init = SelfExprState.initial(ds.n_samples, 2, _seeds(cfg, 2)["z"], cfg.z_init_scale)
    np.testing.assert_array_equal(state.Z, init.Z)
    for a, b in zip(state.Z_views, init.Z_views):
        np.testing.assert_array_equal(a, b)
    assert len(log.losses) == cfg.finetune_epochs


def test_finetune_keeps_invariants_every_epoch():
    ds = _small(per_cluster=5)
    cfg = _quick(finetune_epochs=1)
    nets, _ = pretrain(ds, cfg)
    for epochs in (1, 3, 6):
        state, dnet, unet, _ = finetune(ds, nets, _quick(finetune_epochs=epochs), 2)
        assert state.diag_is_zero()
        for M in [state.Z, *state.Z_views, *(w for n in dnet + unet for w in n.weights())]:
            assert np.all(np.isfinite(M))


def test_finetune_does_not_touch_pretrained():
    ds = _small()
    nets, _ = pretrain(ds, _quick())
    snapshot = [w.copy() for n in nets for w in n.weights()]
    finetune(ds, nets, _quick(), 2)
    for a, b in zip(snapshot, (w for n in nets for w in n.weights())):
        np.testing.assert_array_equal(a, b)


def test_strong_universality_pulls_views_together():
    ds = _small(per_cluster=5)
    cfg = _quick(lambda3=1e3, finetune_epochs=300)
    nets, _ = pretrain(ds, cfg)
    state, _, _, _ = finetune(ds, nets, cfg, 2)
    gap = max(np.linalg.norm(state.Z - M) for M in state.Z_views)
    assert gap < np.linalg.norm(state.Z) / 10


def test_loss_moving_average_decreases_on_synthetic_instance():
    ds = generate_synthetic(SyntheticSpec(seed=0))
    res = train(ds, TrainConfig(widths=[8, 6, 4], pretrain_epochs=200, finetune_epochs=200,
                                kmeans_restarts=5))
    ma = np.convolve(res.log.totals(), np.ones(10) / 10, mode="valid")
    assert np.all(ma[1:] <= ma[:-1] * 1.01)


@pytest.mark.parametrize("through_z", [False, True])
@pytest.mark.parametrize("image", [False, True])
def test_objective_gradients_match_finite_differences(through_z, image):
    rng = np.random.default_rng(3)
    n, v = 5, 2
    if image:
        X = [rng.normal(size=(n, 1, 4, 4)), rng.normal(size=(n, 2, 4, 2))]
        widths = [2, 2, 1]
    else:
        X = [rng.normal(size=(n, 5)), rng.normal(size=(n, 6))]
        widths = [4, 3, 2]
    dnet = [ae.init_params(x.shape[1:], widths, seed=i) for i, x in enumerate(X)]
    unet = [ae.init_params(x.shape[1:], widths, seed=10 + i) for i, x in enumerate(X)]
    state = SelfExprState.initial(n, v, rng, 0.5)
    lam = Lambdas(0.8, 0.6, 0.4, 0.9)
    _, grads = objective_and_grads(X, dnet, unet, state, lam, through_z)
    params = [w for net in dnet + unet for w in net.weights()] + state.Z_views + [state.Z]

    def f():
        return objective_and_grads(X, dnet, unet, state, lam, through_z)[0].total

    for P, G in zip(params, grads):
        square = P.ndim == 2 and P.shape == (n, n)
        assert rel_err(G, numeric_grad(f, P, skip_diag=square)) < 1e-5


def test_lambda_gating_matches_term_deletion():
    # zeroing a weight gives the same gradients as deleting the term from the objective
    rng = np.random.default_rng(4)
    X = [rng.normal(size=(5, 4)), rng.normal(size=(5, 3))]
    dnet = [ae.init_params(x.shape[1:], [3, 3, 2], seed=i) for i, x in enumerate(X)]
    unet = [n.copy() for n in dnet]
    state = SelfExprState.initial(5, 2, rng, 0.5)
    _, g0 = objective_and_grads(X, dnet, unet, state, Lambdas(1.0, 0.5, 0.0, 0.0))
    params = [w for net in dnet + unet for w in net.weights()] + state.Z_views + [state.Z]

    def reduced():
        F = [ae.encode(net, x)[0] for net, x in zip(dnet + unet, X + X)]
        rec = [ae.forward(net, x)[1] for net, x in zip(dnet + unet, X + X)]
        out = total_loss(X, rec[:2], rec[2:], F[:2], F[2:], state, Lambdas(1.0, 0.5, 0.0, 0.0))
        return out.ae_loss + 1.0 * out.selfexpr_loss + 0.5 * out.lp_loss

    for P, G in zip(params, g0):
        assert rel_err(G, numeric_grad(reduced, P, skip_diag=P.shape == (5, 5))) < 1e-5


def test_train_is_deterministic_and_logs(tmp_path):
    ds = _small(per_cluster=5)
    a = train(ds, _quick(eval_every=5))
    b = train(ds, _quick(eval_every=5))
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.log.totals().tobytes() == b.log.totals().tobytes()
    assert a.labels.shape == (10,) and set(a.labels) <= {0, 1}
    path = tmp_path / "log.csv"
    a.log.write_csv(str(path))
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 20
    assert [r["nmi"] != "" for r in rows] == [(e + 1) % 5 == 0 for e in range(20)]
    assert float(rows[0]["total"]) == a.log.losses[0].total


def test_single_view_run_has_no_diversity():
    ds = _small(views=1, per_cluster=5)
    res = train(ds, _quick())
    assert all(b.diversity_loss == 0.0 for b in res.log.losses)
    assert res.labels.shape == (10,)


def test_train_needs_cluster_count():
    ds = MultiViewDataset("x", [np.random.default_rng(0).normal(size=(6, 4))])
    with pytest.raises(ValueError, match="cluster count"):
        train(ds, _quick())
    assert train(ds, _quick(n_clusters=2)).n_clusters == 2


def test_per_view_widths():
    ds = _small()
    nets, _ = pretrain(ds, _quick(widths=[[5, 4, 3], [4, 3, 2]], pretrain_epochs=0))
    assert [n.latent_dim for n in nets] == [3, 2]
