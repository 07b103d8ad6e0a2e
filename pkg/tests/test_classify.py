import copy

import numpy as np
import pytest

from zcrid import classify as clf
from zcrid.classify import (Classifier, Dataset, ModelConfig, Prediction, PwaEnsemble, TrainConfig,
                            fuse_fva, fuse_fvc, fuse_pwa, grad_check, load_model, save_model,
                            softmax_xent, train)
from zcrid.nn import Dense, Flatten, Sequential

FVC = ModelConfig(branches=(("tfi", (1, 16, 16)), ("zc", (8, 40))), mode="FVC", seed=3)


def _inputs(cfg, n=2, seed=0):
    r = np.random.default_rng(seed)
    return {k: r.standard_normal((n, *s)).astype(np.float32) for k, s in cfg.branches}


def _zero_inputs(cfg, n=1):
    return {k: np.zeros((n, *s), np.float32) for k, s in cfg.branches}


# ---------------------------------------------------------------- encoders

def test_zero_input_zero_features():
    m = Classifier(FVC)
    feats = m.encode(_zero_inputs(FVC))
    for f in feats.values():
        assert f.shape == (1, 64) and not f.any()


def test_encoding_deterministic():
    x = _inputs(FVC)
    a = Classifier(FVC).encode(x)
    b = Classifier(FVC).encode(x)
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_linear_homogeneity():
    cfg = ModelConfig(branches=FVC.branches, mode="FVC", activation="linear", seed=1)
    m = Classifier(cfg, dtype=np.float64)
    x = {k: v.astype(np.float64) for k, v in _inputs(cfg).items()}
    f1 = m.encode(x)
    f2 = m.encode({k: 2 * v for k, v in x.items()})
    for k in f1:
        assert np.allclose(f2[k], 2 * f1[k], rtol=1e-12, atol=1e-12)


def test_zc_column_permutation_changes_output():
    cfg = ModelConfig(branches=(("zc", (8, 1000)),), seed=0)
    m = Classifier(cfg, dtype=np.float64)
    x = np.random.default_rng(0).random((1, 8, 1000))
    perm = np.random.default_rng(1).permutation(1000)
    a = m.encode({"zc": x})["zc"]
    b = m.encode({"zc": x[:, :, perm]})["zc"]
    assert not np.allclose(a, b)


def test_shape_mismatch():
    m = Classifier(FVC)
    x = _inputs(FVC)
    x["zc"] = x["zc"][:, :, :30]
    with pytest.raises(ValueError):
        m.forward(x)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(branches=(("tfi", (1, 8, 8)), ("zc", (8, 8))), mode="single")
    with pytest.raises(ValueError):
        ModelConfig(branches=(("tfi", (1, 8, 8)),), mode="FVC")
    with pytest.raises(ValueError):
        ModelConfig(branches=(("audio", (1, 8)),))


# ---------------------------------------------------------------- fusion

def _dist(seed, n=9):
    p = np.random.default_rng(seed).random(n)
    return p / p.sum()


def test_pwa_example():
    a = np.zeros(9)
    b = np.zeros(9)
    a[:2] = [0.8, 0.2]
    b[:2] = [0.4, 0.6]
    assert np.allclose(fuse_pwa(a, b, 0.5)[:2], [0.6, 0.4])


def test_pwa_endpoints_exact():
    a, b = _dist(1), _dist(2)
    assert np.array_equal(fuse_pwa(a, b, 1.0), a)
    assert np.array_equal(fuse_pwa(a, b, 0.0), b)


@pytest.mark.parametrize("alpha", [0, 0.25, 0.5, 0.75, 1])
def test_pwa_is_distribution(alpha):
    for s in range(20):
        out = fuse_pwa(_dist(s), _dist(s + 100), alpha)
        assert np.all(out >= 0) and abs(out.sum() - 1) <= 1e-12


def test_pwa_prediction_wrapper():
    p = fuse_pwa(Prediction.of(_dist(3)), Prediction.of(_dist(4)), 0.5)
    assert isinstance(p, Prediction) and p.predicted_class == int(np.argmax(p.probabilities))


def test_pwa_alpha_range():
    with pytest.raises(ValueError):
        fuse_pwa(_dist(1), _dist(2), 1.5)
    with pytest.raises(ValueError):
        clf.FusionConfig("PWA", -0.1)


def test_pwa_rejects_non_distribution():
    with pytest.raises(ValueError):
        fuse_pwa(np.ones(9), _dist(1))


def test_fva():
    f = np.random.default_rng(0).standard_normal(64)
    g = np.random.default_rng(1).standard_normal(64)
    assert np.array_equal(fuse_fva(f, np.zeros(64)), f)
    assert np.array_equal(fuse_fva(f, g), fuse_fva(g, f))
    assert list(fuse_fva([1, 2], [3, 4])) == [4, 6]
    assert fuse_fva(f, g).shape == (64,)
    with pytest.raises(ValueError):
        fuse_fva(np.ones(3), np.ones(4))


def test_fvc():
    f = np.random.default_rng(0).standard_normal(64)
    g = np.random.default_rng(1).standard_normal(64)
    out = fuse_fvc(f, g)
    assert out.shape == (128,)
    assert np.array_equal(out[:64], f)
    assert not fuse_fvc(np.zeros(64), np.zeros(64)).any()


def test_pwa_endpoint_argmax_matches_branch():
    cfg_t = ModelConfig(branches=(("tfi", (1, 16, 16)),), seed=1)
    cfg_z = ModelConfig(branches=(("zc", (8, 40)),), seed=2)
    mt, mz = Classifier(cfg_t), Classifier(cfg_z)
    x = _inputs(FVC, n=6)
    pt, pz = mt.predict_proba(x), mz.predict_proba(x)
    assert np.array_equal(PwaEnsemble(mt, mz, 0.0).predict_proba(x).argmax(1), pz.argmax(1))
    assert np.array_equal(PwaEnsemble(mt, mz, 1.0).predict_proba(x).argmax(1), pt.argmax(1))


def test_modes_share_branch_outputs():
    fvc = Classifier(FVC)
    fva = Classifier(ModelConfig(branches=FVC.branches, mode="FVA", seed=3))
    before = {n: l.params[k].copy() for n, l, k in fvc.named_params() if not n.startswith("head")}
    x = _inputs(FVC)
    a, b = fvc.encode(x), fva.encode(x)
    fvc.forward(x)
    for k in a:
        assert np.array_equal(a[k], b[k])
    for n, l, k in fvc.named_params():
        if not n.startswith("head"):
            assert np.array_equal(l.params[k], before[n])
    assert np.array_equal(fvc.fuse(a), fuse_fvc(a["tfi"], a["zc"]))
    assert np.array_equal(fva.fuse(a), fuse_fva(a["tfi"], a["zc"]))


# ---------------------------------------------------------------- loss

def test_confident_loss_vanishes():
    z = np.zeros(9)
    z[4] = 20.0
    y = np.eye(9)[4]
    assert softmax_xent(z, y)[1] <= 1e-6


def test_uniform_loss():
    p, loss = softmax_xent(np.zeros(9), np.eye(9)[0])
    assert np.allclose(p, 1 / 9) and abs(loss - np.log(9)) <= 1e-9


def test_shift_invariance():
    z = np.random.default_rng(0).standard_normal(9)
    y = np.eye(9)[2]
    p1, l1 = softmax_xent(z, y)
    p2, l2 = softmax_xent(z + 123.0, y)
    assert np.allclose(p1, p2, atol=1e-9) and abs(l1 - l2) <= 1e-9


def test_prediction_is_distribution():
    p, _ = softmax_xent(np.random.default_rng(1).standard_normal(9) * 30, np.eye(9)[0])
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9


@pytest.mark.parametrize("label", [np.zeros(9), np.full(9, 1 / 9), np.eye(9)[0] * 2])
def test_non_one_hot(label):
    with pytest.raises(ValueError, match="one-hot"):
        softmax_xent(np.zeros(9), label)


# ---------------------------------------------------------------- training

def _toy(n=80, seed=0):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n)
    x = r.standard_normal((n, 1, 16)) * 0.3
    x[:, 0, 8] += np.where(y == 1, 2.0, -2.0)
    return Dataset({"zc": x.astype(np.float32)}, y)


def test_separable_toy_reaches_full_accuracy():
    data = _toy()
    m = Classifier(ModelConfig(branches=(("zc", (1, 16)),), n_classes=2, seed=0))
    res = train(m, data, TrainConfig(learning_rate=1e-2, batch_size=16, epochs=200, seed=0))
    assert clf.accuracy(m, data) == 1.0
    assert len(res.losses) == 200


def test_same_seed_same_weights():
    data = _toy(seed=2)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=16, epochs=5, seed=4)
    mods = []
    for _ in range(2):
        m = Classifier(ModelConfig(branches=(("zc", (1, 16)),), n_classes=2, seed=1))
        r = train(m, data, cfg)
        mods.append((m, r.losses))
    assert mods[0][1] == mods[1][1]
    for (n, l, k), (_, l2, k2) in zip(mods[0][0].named_params(), mods[1][0].named_params()):
        assert np.array_equal(l.params[k], l2.params[k2])


def test_divergence_reported():
    data = _toy()
    data.inputs["zc"][0, 0, 0] = np.nan
    m = Classifier(ModelConfig(branches=(("zc", (1, 16)),), n_classes=2))
    with pytest.raises(FloatingPointError, match="divergence"):
        train(m, data, TrainConfig(batch_size=80, epochs=1))


def test_train_rejects_bad_inputs():
    m = Classifier(ModelConfig(branches=(("tfi", (1, 8, 8)),), n_classes=2))
    with pytest.raises(ValueError):
        train(m, _toy(), TrainConfig())
    with pytest.raises(ValueError):
        train(m, Dataset({"tfi": np.zeros((0, 1, 8, 8))}, np.zeros(0)), TrainConfig())


def test_best_validation_epoch_restored():
    data = _toy(seed=5)
    m = Classifier(ModelConfig(branches=(("zc", (1, 16)),), n_classes=2, seed=2))
    res = train(m, data, TrainConfig(learning_rate=1e-2, batch_size=16, epochs=10), val=_toy(40, 6))
    assert res.best_epoch == int(np.argmax(res.val_accuracy))
    assert clf.accuracy(m, _toy(40, 6)) == max(res.val_accuracy)


def test_train_config_defaults():
    assert TrainConfig.defaults("sequence").batch_size == 512
    assert TrainConfig.defaults("sequence").epochs == 300
    assert TrainConfig.defaults("tfi").batch_size == 256
    assert TrainConfig.defaults("fusion").batch_size == 128
    assert TrainConfig().learning_rate == 1e-4
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


# ---------------------------------------------------------------- gradient check

def _dense_only(seed=0):
    m = Classifier(ModelConfig(branches=(("zc", (2, 8)),), seed=seed))
    r = np.random.default_rng(seed)
    m.encoders["zc"] = Sequential([Flatten(), Dense(16, 64, r)])
    return m


def test_dense_only_grad_check():
    m = _dense_only()
    x = {"zc": np.random.default_rng(1).standard_normal((1, 2, 8))}
    assert grad_check(m, x, [3], eps=1e-5) < 1e-6


def test_fusion_grad_check():
    m = Classifier(FVC)
    assert grad_check(m, _inputs(FVC), [1, 5], eps=1e-5) < 1e-4


def test_grad_check_eps_range():
    with pytest.raises(ValueError):
        grad_check(_dense_only(), {"zc": np.zeros((1, 2, 8))}, [0], eps=1e-2)


def test_tied_parameters_symmetric():
    m = _dense_only()
    for _, layer, key in m.named_params():
        layer.params[key][...] = 0
    m.astype(np.float64)
    x = np.ones((1, 2, 8))
    m.loss_and_grad({"zc": x}, [2])
    g = m.encoders["zc"].layers[1].grads["W"]
    # identical inputs feed every row of the first dense layer the same way
    assert np.max(np.abs(g - g[0])) <= 1e-10


def test_checkpoint_round_trip(tmp_path):
    m = Classifier(FVC)
    path = save_model(tmp_path / "m.npz", m, extra={"note": "x"})
    m2, extra = load_model(path)
    x = _inputs(FVC)
    assert np.array_equal(m.forward(x), m2.forward(x))
    assert extra == {"note": "x"} and m2.cfg == m.cfg


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "bad.npz"
    np.savez(p, __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_model(p)


def test_grad_check_holds_during_desk_training():
    from zcrid import harness as hn

    man = hn.plan_dataset(count=2, snrs=(10.0,), interference=False)
    bundle = hn.extract_features(man, kinds=("tfi", "zc"))
    data = bundle.dataset("train", ("tfi", "zc"))
    cfg = ModelConfig(branches=(("tfi", (1, 64, 64)), ("zc", (8, 1000))), mode="FVC", seed=1)
    m = Classifier(cfg)
    probe = data.subset(np.arange(2))
    errs = {}

    def check(epoch, model, loss):
        if epoch % 10 == 0:
            errs[epoch] = grad_check(model, probe.inputs, probe.labels, eps=1e-5, seed=epoch)

    res = train(m, data, TrainConfig(learning_rate=1e-3, batch_size=8, epochs=21), on_epoch=check)
    assert sorted(errs) == [0, 10, 20]
    assert max(errs.values()) < 1e-4
    assert res.losses[-1] < res.losses[0]
