import json

import numpy as np
import pytest

from scorefusion_python_sdk.scripts.core import SimplexWeights
from scorefusion_python_sdk.scripts.diffusion.ou_process import analytic_score
from scorefusion_python_sdk.scripts.diffusion.sampler import fused_score
from scorefusion_python_sdk.scripts.diffusion.score_net import MlpScoreNet
from scorefusion_python_sdk.scripts.errors import SchemaMismatchError
from scorefusion_python_sdk.scripts.experiment.field_store import (
    FIELD_SCHEMA_VERSION, check_schema_version, field_from_descriptor, load_field, save_field
)
from scorefusion_python_sdk.scripts.fusion_utils import make_stream

X = np.linspace(-6.0, 6.0, 25).reshape(-1, 1)


def test_analytic_field_round_trip(tmp_path, schedule, p1):
    field = analytic_score(p1, schedule)
    path = save_field(field, str(tmp_path / "aux.json"))
    again = load_field(path, dim=1)
    for t in (0.01, 1.0, 5.0):
        np.testing.assert_array_equal(again.evaluate(t, X), field.evaluate(t, X))


def test_mlp_field_round_trip(tmp_path, schedule):
    net = MlpScoreNet.initialize(1, schedule, make_stream(3))
    again = load_field(save_field(net, str(tmp_path / "net.json")))
    np.testing.assert_array_equal(again.params, net.params)
    np.testing.assert_array_equal(again.evaluate(0.5, X), net.evaluate(0.5, X))


def test_fused_field_round_trip(tmp_path, schedule, p1, p2):
    net = MlpScoreNet.initialize(1, schedule, make_stream(4))
    fused = fused_score([analytic_score(p1, schedule), net, analytic_score(p2, schedule)],
                        SimplexWeights([0.2, 0.3, 0.5]))
    again = load_field(save_field(fused, str(tmp_path / "nested" / "fused.json")))
    assert again.weights == fused.weights
    np.testing.assert_array_equal(again.evaluate(1.0, X), fused.evaluate(1.0, X))


def test_document_layout(tmp_path, schedule, p2):
    path = save_field(analytic_score(p2, schedule), str(tmp_path / "aux.json"))
    with open(path) as f:
        document = json.load(f)
    assert document["schema_version"] == FIELD_SCHEMA_VERSION
    assert document["field"]["kind"] == "analytic"


def test_dimension_mismatch_rejected(tmp_path, schedule, p1):
    path = save_field(analytic_score(p1, schedule), str(tmp_path / "aux.json"))
    with pytest.raises(SchemaMismatchError):
        load_field(path, dim=2)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(SchemaMismatchError):
        load_field(str(tmp_path / "absent.json"))


def test_unknown_kind_rejected():
    with pytest.raises(SchemaMismatchError):
        field_from_descriptor({"kind": "transformer"})


def test_malformed_descriptor_rejected(schedule, p1):
    descriptor = analytic_score(p1, schedule).descriptor()
    del descriptor["mixture"]
    with pytest.raises(SchemaMismatchError):
        field_from_descriptor(descriptor)


@pytest.mark.parametrize("found", ["1.0", "1"])
def test_supported_versions_accepted(found):
    check_schema_version(found, "1.0")


@pytest.mark.parametrize("found", ["2.0", "1.1", "0.9", None, "not-a-version"])
def test_unsupported_versions_rejected(found):
    with pytest.raises(SchemaMismatchError):
        check_schema_version(found, "1.0")
