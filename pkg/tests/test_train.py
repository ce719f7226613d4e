import dataclasses
import hashlib
import json

import numpy as np
import pytest

from egopnr import evaluate, model, train as train_mod
from egopnr.annotations import SynthConfig, generate_synthetic
from egopnr.errors import ConfigError
from egopnr.labels import MixConfig
from egopnr.model import ModelConfig
from egopnr.optim import OptimConfig, lr_at
from egopnr.train import TrainConfig, TrainHistory, select_best, train


def _data(count=40, val=20, snr=8.0, seed=0, dim=8):
    base = SynthConfig(feature_dim=dim, snr=snr, world_seed=seed)
    mt, st = generate_synthetic(dataclasses.replace(base, count=count), seed + 1)
    mv, sv = generate_synthetic(dataclasses.replace(base, count=val, split="val", id_prefix="v"),
                                seed + 2)
    return mt, mv, st, sv


def _cfg(**kw):
    base = dict(model=ModelConfig(hidden_dim=16), optim=OptimConfig(batch_size=8), epochs=3)
    base.update(kw)
    return TrainConfig(**base)


def _digest(params):
    h = hashlib.sha256()
    for k, v in params.items():
        h.update(k.encode() + v.tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def data():
    return _data()


def _rec(acc, err):
    return {"val_oscc_accuracy": acc, "val_abs_temporal_error_s": err, "val_clip_duration_s": 8.0}


def test_select_best_examples():
    assert select_best([0.5]) == 0
    assert select_best([0.7, 0.9, 0.9], "oscc_accuracy") == 1
    assert select_best([0.8, 0.5, 0.6], "temporal_error") == 1
    recs = [_rec(0.9, 1.0), _rec(0.9, 0.5), _rec(0.95, 4.0)]
    assert select_best(recs, "combined") == 1
    assert select_best(recs, "oscc_accuracy") == 2
    assert select_best(recs, "temporal_error") == 1


def test_select_best_skips_unevaluated_and_errors():
    assert select_best([_rec(None, None), _rec(0.6, None)]) == 1
    with pytest.raises(ConfigError):
        select_best([])
    with pytest.raises(ConfigError):
        select_best([_rec(0.5, 1.0)], "loss")


def test_zero_weights_is_pure_decay(data):
    cfg = _cfg(lambda1=0.0, lambda2=0.0)
    res = train(*data, cfg)
    mcfg = res.model_config
    init_ss, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    params = model.init(mcfg, int(init_ss.generate_state(1)[0]))
    ocfg = dataclasses.replace(cfg.optim, total_epochs=3, warmup_epochs=3)
    spe = 5
    for step in range(3 * spe):
        lr = lr_at(step, spe, ocfg)
        for k, p in params.items():
            if model.decays(k):
                scale = 0.75 ** (mcfg.depth - model.layer_index(k, mcfg.depth))
                p -= lr * scale * ocfg.weight_decay * p
    for k in params:
        np.testing.assert_allclose(res.final_params[k], params[k], rtol=1e-12, atol=1e-15)
    assert not res.final_params["embed.b"].any()


def test_deterministic(data, tmp_path):
    a = train(*data, _cfg(), out_dir=tmp_path / "a")
    b = train(*data, _cfg(), out_dir=tmp_path / "b")
    for name in ("history.jsonl", "steps.jsonl", "best.ckpt", "last.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _digest(a.final_params) == _digest(b.final_params)
    c = train(*data, _cfg(seed=1))
    assert _digest(c.final_params) != _digest(a.final_params)


def test_validation_does_not_mutate(data):
    mt, mv, st, sv = data
    params = model.init(ModelConfig(feature_dim=8, hidden_dim=16), 0)
    before = _digest(params)
    evaluate.evaluate_model(params, ModelConfig(feature_dim=8, hidden_dim=16), mv, sv, 3)
    assert _digest(params) == before


def test_lr_log_and_eq1_identity(data):
    cfg = _cfg(epochs=4, lambda1=0.7, lambda2=1.3)
    res = train(*data, cfg)
    spe = 5
    ocfg = dataclasses.replace(cfg.optim, total_epochs=4, warmup_epochs=4)
    assert len(res.history.steps) == 4 * spe
    for s in res.history.steps:
        assert s["lr"] == lr_at(s["step"], spe, ocfg)
        loss = s["loss"]
        assert abs(loss["total"] - (0.7 * loss["l_oscc"] + 1.3 * loss["l_tl"])) < 1e-12
    for r in res.history.records:
        assert abs(r["train_total"] - (0.7 * r["train_l_oscc"] + 1.3 * r["train_l_tl"])) < 1e-12


def test_best_epoch_is_argmax(data):
    res = train(*data, _cfg(epochs=4))
    assert res.history.best_epoch == select_best(res.history, "combined")


def test_eval_every(data):
    res = train(*data, _cfg(epochs=4, eval_every=3))
    evaluated = [r["epoch"] for r in res.history.records if r["val_oscc_accuracy"] is not None]
    assert evaluated == [2, 3]


def test_pure_noise_matches_prior():
    mt, mv, st, sv = _data(count=300, val=400, snr=0.0, seed=3)
    res = train(mt, mv, st, sv, _cfg(epochs=6, model=ModelConfig(hidden_dim=16),
                                     optim=OptimConfig(batch_size=32)))
    acc = res.history.records[-1]["val_oscc_accuracy"]
    assert abs(acc - 0.523) <= 0.05


def test_history_jsonl(data, tmp_path):
    train(*data, _cfg(), out_dir=tmp_path)
    lines = (tmp_path / "history.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in lines] == [0, 1, 2]
    cfg, _ = model.load_checkpoint(tmp_path / "best.ckpt")
    assert cfg.hidden_dim == 16


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(mix=MixConfig(mixup_alpha=0.2), lambda2=0.5, seed=9)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert TrainConfig.load(path) == cfg
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_template_matches_recipe():
    d = TrainConfig().to_dict()
    assert d["base_lr"] == 5e-4 and d["weight_decay"] == 0.05
    assert d["betas"] == [0.9, 0.999] and d["warmup_lr"] == 1e-6
    assert d["warmup_epochs"] == 5 and d["epochs"] == 100 and d["layer_decay"] == 0.75
    assert d["drop_path"] == 0.1 and d["label_smoothing"] == 0.1
    assert d["mixup"] == 0.8 and d["cutmix"] == 1.0 and d["loss_weight"] == [1.0, 1.0]


@pytest.mark.parametrize("doc, match", [
    ({"learning_rate": 1}, "unknown"),
    ({"patch_size": 8}, "not supported"),
    ({"loss_weight": [1]}, "two entries"),
    ({"epochs": 0}, "epochs"),
    ({"sampler": "diagonal"}, "sampler"),
    ({"batch_size": "many"}, "bad training config"),
])
def test_config_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        TrainConfig.from_dict(doc)


def test_malformed_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{\n  \"seed\": ,\n}")
    with pytest.raises(ConfigError, match="line 2"):
        TrainConfig.load(p)


def test_history_container():
    h = TrainHistory(records=[{"epoch": 0}])
    assert h.to_jsonl() == '{"epoch": 0}\n'
    assert train_mod.SELECTION_METRICS == ("oscc_accuracy", "temporal_error", "combined")
