import numpy as np
import pytest

from lyapnet.checkpoint import config_digest, dumps, load_checkpoint, loads, save_checkpoint
from lyapnet.errors import FormatError
from lyapnet.nn import Model, forward

SPEC = [
    {"kind": "conv", "out_ch": 4, "in_ch": 1, "kh": 3, "kw": 3, "stride": 1, "pad": 1},
    {"kind": "leaky_relu", "slope": 0.05},
    {"kind": "residual", "branch": [
        {"kind": "conv", "out_ch": 4, "in_ch": 4, "kh": 3, "kw": 3, "stride": 1, "pad": 1},
        {"kind": "leaky_relu", "slope": 0.05},
        {"kind": "conv", "out_ch": 4, "in_ch": 4, "kh": 3, "kw": 3, "stride": 1, "pad": 1}]},
    {"kind": "avgpool", "window": 2},
    {"kind": "maxpool", "window": 2},
    {"kind": "flatten"},
    {"kind": "dense", "in": 16, "out": 3},
]


def model():
    m = Model.from_spec(SPEC, (1, 8, 8), seed=5)
    for layer in m.param_layers():
        layer.params["b"][...] = np.random.default_rng(1).standard_normal(layer.params["b"].shape)
    return m


def test_round_trip_bit_exact(tmp_path):
    m = model()
    digest = save_checkpoint(tmp_path / "m.lyap", m, {"seed": 1})
    back, d2 = load_checkpoint(tmp_path / "m.lyap")
    assert d2 == digest == config_digest({"seed": 1})
    assert back.to_spec() == m.to_spec() and back.input_shape == m.input_shape
    for (a, n), (b, _) in zip(m.parameters(), back.parameters()):
        assert a.params[n].tobytes() == b.params[n].tobytes()
    x = np.random.default_rng(0).standard_normal((2, 1, 8, 8))
    assert np.array_equal(forward(m, x)[0], forward(back, x)[0])
    assert dumps(back, d2) == (tmp_path / "m.lyap").read_bytes()


def test_version_mismatch_rejected():
    raw = bytearray(dumps(model()))
    raw[4] = 2
    with pytest.raises(FormatError, match="version 2"):
        loads(bytes(raw))


def test_bad_magic_truncation_and_trailing_bytes():
    raw = dumps(model())
    with pytest.raises(FormatError, match="magic"):
        loads(b"LYAQ" + raw[4:])
    for cut in (6, 40, len(raw) - 33, len(raw) - 1):
        with pytest.raises(FormatError):
            loads(raw[:cut])
    with pytest.raises(FormatError, match="trailing"):
        loads(raw + b"\0")


def test_digest_is_canonical():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})
