import json

import numpy as np
import pytest

from lyapnet import experiment as E
from lyapnet.attacks import AttackConfig
from lyapnet.errors import ConfigError, InputError
from lyapnet.linalg import materialize_conv_matrix
from lyapnet.nn import Conv2d, Dense, LeakyReLU, Model


def test_deviation_zero_eps_is_exactly_zero():
    m = Model([Dense(4, 3), LeakyReLU()], (4,), seed=0)
    x = np.random.default_rng(0).standard_normal((20, 4))
    assert E.measure_deviation(m, x, np.zeros(20, dtype=int), AttackConfig("pgd", 0.0)) == 0.0


def test_deviation_of_identity_model_equals_eps():
    m = Model([], (5,), dtype=np.float64)
    x = np.random.default_rng(1).standard_normal((30, 5))
    y = np.random.default_rng(2).integers(0, 5, 30)
    assert E.measure_deviation(m, x, y, AttackConfig("fgm", 0.25)) == pytest.approx(0.25, rel=1e-12)


def test_deviation_of_half_identity_layer():
    m = Model([Dense(4, 4), LeakyReLU(1.0)], (4,), dtype=np.float64)
    m.layers[0].params["W"][...] = 0.5 * np.eye(4)
    x = np.random.default_rng(3).standard_normal((25, 4))
    y = np.random.default_rng(4).integers(0, 4, 25)
    x_adv = E.attack(m, x, y, AttackConfig("fgm", 0.3))
    np.testing.assert_allclose(E.output_deviation(m, x, x_adv), 0.15, rtol=1e-12)


def test_deviation_empty_raises():
    with pytest.raises(InputError):
        E.measure_deviation(Model([], (2,)), np.zeros((0, 2)), np.zeros(0, dtype=int), AttackConfig("fgm", 0.1))


def test_presets_resolve():
    names = E.preset_names()
    assert {"mnist_forward", "ci_synth", "residual_toy", "conv_toy", "mnist_baseline",
            "mnist_weight_decay", "mnist_uniform_beta", "digits_forward"} <= set(names)
    for n in names:
        E.load_config(n)


def test_level_above_cap_is_rejected():
    with pytest.raises(ConfigError, match="layer 3: regularization level 1.3 exceeds its cap 1.2833"):
        E.load_config("mnist_forward", {"regularizer": {"levels": [1.76, 2.46, 1.3]}})


@pytest.mark.parametrize("eps", [[0.2, 0.1], [-0.1, 0.1]])
def test_eps_list_must_be_nonnegative_ascending(eps):
    with pytest.raises(ConfigError, match="ascending"):
        E.load_config("ci_synth", {"attack": {"eps": eps}})


def test_schema_violations_named():
    with pytest.raises(ConfigError, match="optimizer"):
        E.load_config("ci_synth", {"optimizer": {"kind": "lbfgs"}})
    with pytest.raises(ConfigError, match="no config file or preset"):
        E.load_config("no_such_preset")


def test_default_policy_plans_budgets():
    cfg = E.load_config("ci_synth", {"budgets": {"policy": "default", "layers": None},
                                     "regularizer": {"levels": None}})
    assert len(cfg["budgets"]["layers"]) == 3 and cfg["budgets"]["policy"] == "explicit"
    # with no chosen levels, every layer is held at its full cap
    caps = [1 / d ** 2 + 2 * abs(v) / d for d, v in cfg["budgets"]["layers"]]
    assert cfg["regularizer"]["levels"] == caps


def test_chosen_levels_checked_against_planned_caps():
    with pytest.raises(ConfigError, match="layer 2"):
        E.load_config("ci_synth", {"budgets": {"policy": "default", "layers": None}})


def test_invalid_explicit_budgets_become_config_errors():
    with pytest.raises(ConfigError, match="delta_n > delta"):
        E.load_config("ci_synth", {"budgets": {"global": {"delta": 1.2, "nu": 0.2}}})


def _exact(layer):
    W = layer.params["W"].astype(np.float64)
    if isinstance(layer, Conv2d):
        W = materialize_conv_matrix(W, layer.in_shape, layer.stride, layer.pad)
    return float(np.linalg.norm(W, 2))


@pytest.mark.parametrize("preset", ["ci_synth", "conv_toy", "residual_toy"])
def test_constraint_holds_after_every_epoch(preset):
    cfg = E.load_config(preset)
    train, _ = E.load_datasets(cfg)
    model, history = E.train(cfg, train)
    assert len(history) == cfg["epochs"]
    for rec in history:
        for sigma, thr in zip(rec["sigma"], rec["threshold"]):
            assert sigma <= thr * 1.001
    for layer, thr in zip(model.param_layers(), history[-1]["threshold"]):
        assert _exact(layer) <= thr * 1.001


def test_training_is_deterministic():
    cfg = E.load_config("ci_synth", {"epochs": 2})
    train, _ = E.load_datasets(cfg)
    a, _ = E.train(cfg, train)
    b, _ = E.train(cfg, train)
    for (la, n), (lb, _) in zip(a.parameters(), b.parameters()):
        assert la.params[n].tobytes() == lb.params[n].tobytes()


def test_ci_training_learns():
    cfg = E.load_config("ci_synth", {"epochs": 15})
    train, test = E.load_datasets(cfg)
    model, history = E.train(cfg, train)
    assert history[-1]["loss"] < history[0]["loss"]
    assert E.accuracy(model, test.x, test.y) > 0.9


def test_report_is_self_describing():
    cfg = E.load_config("ci_synth", {"epochs": 1, "attack": {"kinds": ["fgm", "pgd"], "k": 5}})
    train, test = E.load_datasets(cfg)
    model, history = E.train(cfg, train)
    rows = E.sweep(model, cfg, test)
    report = E.build_report(model, cfg, test, rows, history)
    assert report["config"] == cfg and report["seed"] == cfg["seed"]
    assert [(r["attack"], r["eps"]) for r in rows] == [(k, e) for k in ("fgm", "pgd") for e in (0.1, 0.2, 0.3)]
    assert E.recheck_flags(report) == [r["bound_satisfied"] for r in rows]
    assert E.rows_to_csv(rows).splitlines()[0] == ",".join(E.CSV_COLUMNS)
    json.dumps(report, default=E._json_default)


def test_baseline_has_no_threshold_but_bounds():
    cfg = E.load_config("ci_synth", {"epochs": 1, "regularizer": {"mode": "off"}})
    train, test = E.load_datasets(cfg)
    model, history = E.train(cfg, train)
    assert history[0]["threshold"] is None
    row = E.sweep(model, cfg, test, ["fgm"], [0.1])[0]
    assert row["table_bound"] is not None


def test_digits_proxy_protocol_bound_holds():
    pytest.importorskip("sklearn")
    cfg = E.load_config("digits_forward", {"attack": {"k": 50}})
    train, test = E.load_datasets(cfg)
    model, _ = E.train(cfg, train)
    rows = E.sweep(model, cfg, test)
    assert E.accuracy(model, test.x, test.y) > 0.5  # ten classes; chance is 0.1
    assert all(r["bound_satisfied"] for r in rows)
