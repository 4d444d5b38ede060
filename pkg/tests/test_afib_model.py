import json

import numpy as np
import pytest

from afibshift.afib_model import (ArchConfig, ConvSpec, DenseSpec, build_model, feature_map_sparsity,
                                  load_arch_config, model_size_bytes, parameter_count, weight_sparsity)
from afibshift.errors import ArchitectureError
from conftest import desk_arch, tiny_arch


def test_default_config_shape():
    cfg = ArchConfig()
    assert cfg.input_length == 18000
    assert [c.channels for c in cfg.conv_layers] == [128] * 4
    assert [c.pool_after for c in cfg.conv_layers] == [True, True, False, False]
    assert all(c.pool_window == 5 for c in cfg.conv_layers)
    assert [d.units for d in cfg.dense_layers] == [64, 4]


def test_forward_is_probability_vector():
    m = build_model(desk_arch(length=100, channels=4), 1)
    x = np.random.default_rng(0).normal(size=(3, 1, 100))
    p = m.predict_proba(x)
    assert p.shape == (3, 4)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


def test_build_deterministic():
    a = build_model(desk_arch(length=100, channels=4), 11)
    b = build_model(desk_arch(length=100, channels=4), 11)
    for k in a.params.values:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_glorot_bounds():
    m = build_model(desk_arch(length=100, channels=4), 2)
    w = m.params["conv1.weight"]
    bound = np.sqrt(6.0 / (4 * 7 + 4 * 7))
    assert np.abs(w).max() <= bound
    assert np.all(m.params["conv1.bias"] == 0)


def test_parameter_count_closed_form():
    cfg = ArchConfig(input_length=100,
                     conv_layers=(ConvSpec(4, 5, True, 5), ConvSpec(4, 5, True, 5)),
                     dense_layers=(DenseSpec(8), DenseSpec(4)))
    # 100 -> pool 20 -> pool 4; flatten 4 ch * 4 = 16
    closed = (4 * 1 * 5 + 4) + (4 * 4 * 5 + 4) + (8 * 16 + 8) + (4 * 8 + 4)
    m = build_model(cfg, 0)
    assert sum(v.size for v in m.params.values.values()) == closed == parameter_count(cfg)


def test_architecture_errors():
    with pytest.raises(ArchitectureError):
        ArchConfig(dense_layers=(DenseSpec(3),))
    with pytest.raises(ArchitectureError):
        build_model(ArchConfig(input_length=10, conv_layers=(ConvSpec(2, 3, True, 20), ConvSpec(2, 3)),
                               dense_layers=(DenseSpec(4),)))
    with pytest.raises(ArchitectureError):
        ArchConfig(conv_layers=())


def test_config_json_round_trip(tmp_path):
    cfg = desk_arch()
    p = tmp_path / "arch.json"
    p.write_text(cfg.to_json())
    assert load_arch_config(p) == cfg
    assert json.loads(cfg.to_json())["conv_layers"][0]["pool_window"] == 5


def test_size_bytes():
    cfg = ArchConfig(input_length=10, conv_layers=(ConvSpec(10, 9),), dense_layers=(DenseSpec(4),))
    m = build_model(cfg, 0)
    n = m.params.n_elements()
    assert model_size_bytes(m, 32).total_bytes == 4 * n
    assert model_size_bytes(m, 4).total_bytes == -(-n // 2)


def test_size_bytes_thousand_params():
    # conv 1->10, K=9: 100 params; dense 100 -> 9? pick shapes giving exactly 1000 elements
    cfg = ArchConfig(input_length=10, conv_layers=(ConvSpec(9, 9),), dense_layers=(DenseSpec(8), DenseSpec(4)))
    m = build_model(cfg, 0)
    total = m.params.n_elements()
    assert total == 9 * 9 + 9 + 8 * 90 + 8 + 4 * 8 + 4 == 854
    assert model_size_bytes(m, 32).total_bytes == 3416
    assert model_size_bytes(m, 4).total_bytes == 427


def test_weight_sparsity():
    m = build_model(desk_arch(length=100, channels=4), 0)
    for v in m.params.values.values():
        v[...] = 1.0
    assert weight_sparsity(m) == 0.0
    flat = [v.reshape(-1) for v in m.params.values.values()]
    total = sum(f.size for f in flat)
    zeroed = 0
    for f in flat:
        take = min(f.size, total // 2 - zeroed)
        f[:take] = 0
        zeroed += take
    assert weight_sparsity(m) == 0.5
    for v in m.params.values.values():
        v[...] = 0
    assert weight_sparsity(m) == 1.0


def test_feature_map_sparsity_dead_layer():
    cfg = tiny_arch(length=6, channels=2, k=1, dense=(3, 4))
    m = build_model(cfg, 0)
    for v in m.params.values.values():
        v[...] = 0
    m.params.values["conv0.bias"][...] = -1.0  # every conv0 pre-activation negative
    assert feature_map_sparsity(m, np.ones((2, 1, 6))) == 1.0


def test_feature_map_sparsity_hand_trace():
    # conv0: k=1, two filters with weight +1 / -1; conv1: identity on ch0, zero on ch1
    cfg = tiny_arch(length=4, channels=2, k=1, dense=(2, 4))
    m = build_model(cfg, 0)
    p = m.params.values
    for v in p.values():
        v[...] = 0
    p["conv0.weight"][:, 0, 0] = [1.0, -1.0]
    p["conv1.weight"][0, 0, 0] = 1.0
    p["dense0.weight"][0, 0] = 1.0
    x = np.array([[[1.0, -2.0, 3.0, 0.0]]])
    # conv0 relu: ch0 [1,0,3,0], ch1 [0,2,0,0] -> zeros 5/8
    # conv1 relu: ch0 [1,0,3,0], ch1 zeros      -> zeros 6/8
    # dense0 relu: unit0 = 1 (x[ch0,t0]), unit1 = 0 -> zeros 1/2
    expected = (5 / 8 + 6 / 8 + 1 / 2) / 3
    assert feature_map_sparsity(m, x) == pytest.approx(expected)
