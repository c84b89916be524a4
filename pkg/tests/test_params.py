import json

import pytest
from pydantic import ValidationError

from app.params import (
    MatchParams,
    ParameterError,
    ParameterSet,
    WlsParams,
    load_parameter_set,
    save_parameter_set,
)


def test_defaults_are_consistent():
    p = ParameterSet()
    assert p.match.alpha < p.match.beta
    assert p.match.d_max == p.match.num_disparities - 1


def test_alpha_must_be_below_beta():
    with pytest.raises(ValidationError):
        MatchParams(alpha=20, beta=20)


def test_sigma_range():
    with pytest.raises(ValidationError):
        WlsParams(sigma=1.0)
    assert WlsParams(sigma=0.0).sigma == 0.0


def test_file_is_sorted_and_stable(tmp_path):
    path = tmp_path / "p.json"
    save_parameter_set(ParameterSet(), path)
    text = path.read_text()
    keys = list(json.loads(text))
    assert keys == sorted(keys)
    assert text.endswith("}\n")
    assert load_parameter_set(path) == ParameterSet()


def test_penalty_repair_logs_warning(tmp_path, caplog):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"alpha": 50, "beta": 10}))
    with caplog.at_level("WARNING"):
        p = load_parameter_set(path)
    assert p.match.beta == 51
    assert "beta repaired" in caplog.text


def test_repair_with_alpha_only(caplog):
    with caplog.at_level("WARNING"):
        p = ParameterSet.from_flat_dict({"alpha": 500})
    assert p.match.alpha == 500
    assert p.match.beta == 501
    assert "beta repaired" in caplog.text


def test_repair_with_beta_only(caplog):
    with caplog.at_level("WARNING"):
        p = ParameterSet.from_flat_dict({"beta": 5})
    assert p.match.alpha == ParameterSet().match.alpha
    assert p.match.beta == p.match.alpha + 1
    assert "beta repaired" in caplog.text


def test_no_repair_when_defaults_already_ordered(caplog):
    with caplog.at_level("WARNING"):
        p = ParameterSet.from_flat_dict({"alpha": 20})
    assert p.match.beta == ParameterSet().match.beta
    assert "beta repaired" not in caplog.text


@pytest.mark.parametrize("content", [
    "not json",
    "[1, 2]",
    json.dumps({"alpha": 0}),
    json.dumps({"smoothness": 3}),
])
def test_bad_files(tmp_path, content):
    path = tmp_path / "p.json"
    path.write_text(content)
    with pytest.raises(ParameterError):
        load_parameter_set(path)


def test_with_num_disparities():
    p = ParameterSet().with_num_disparities(16)
    assert p.match.num_disparities == 16 and p.match.d_max == 15
