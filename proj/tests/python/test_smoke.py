import json
from pathlib import Path

import numpy as np
import pytest

import vibefuse

ROOT = Path(__file__).resolve().parents[2]
ONE_ELEMENT = ROOT / "configs" / "one_element.json"


@pytest.fixture(scope="module")
def config():
    return vibefuse.Config.load(str(ONE_ELEMENT))


def test_config_hash_ignores_out_dir(config):
    text = json.loads(ONE_ELEMENT.read_text())
    text["io"]["out_dir"] = "elsewhere"
    other = vibefuse.Config.parse(json.dumps(text))
    assert other.hash == config.hash
    assert len(config.hash) == 16


def test_unknown_key_is_rejected():
    text = json.loads(ONE_ELEMENT.read_text())
    text["model"]["bogus"] = 1
    with pytest.raises(vibefuse.VibefuseError, match="/model/bogus"):
        vibefuse.Config.parse(json.dumps(text))


def test_single_element_model(config):
    model = vibefuse.StructuralModel(config)
    assert model.dof_count == 24
    assert model.parameter_count == 12
    theta = np.full(12, 0.05)
    high = model.high_fidelity(theta)
    low = model.low_fidelity(theta)
    assert high.shape == (model.response_length,)
    assert np.array_equal(high, low)


def test_normal_quantile():
    assert vibefuse.normal_quantile(0.5) == 0.0
    assert vibefuse.normal_quantile(0.975) == pytest.approx(1.959963984540054, rel=1e-12)


def test_lhs_is_seeded_and_stratified():
    a = vibefuse.lhs_normal(3, 0.1, 50, 7)
    b = vibefuse.lhs_normal(3, 0.1, 50, 7)
    assert a.shape == (50, 3)
    assert np.array_equal(a, b)
    cdf = 0.5 * (1.0 + np.vectorize(__import__("math").erf)(a / 0.1 / np.sqrt(2.0)))
    for col in cdf.T:
        assert sorted(np.floor(col * 50).astype(int)) == list(range(50))


def test_cli_round_trip(tmp_path):
    out = str(tmp_path)
    for args in (["simulate"], ["split"], ["train", "mlmrgp"]):
        code, _, err = vibefuse.run_cli(["-c", str(ONE_ELEMENT), "-o", out] + args)
        assert code == 0, err
    theta, high, freqs = vibefuse.load_dataset(str(tmp_path / "high"))
    assert theta.shape == (20, 12)
    assert len(freqs) == 4
    mean, var = vibefuse.predict_mlmrgp(str(tmp_path / "model_mlmrgp.json"), theta[:3])
    assert mean.shape == (3, 4)
    assert np.all(np.isfinite(mean)) and np.all(var >= 0)


def test_cli_error_is_reported():
    code, _, err = vibefuse.run_cli(["-c", "/nonexistent.json", "mesh"])
    assert code != 0
    assert err.startswith("error [")
