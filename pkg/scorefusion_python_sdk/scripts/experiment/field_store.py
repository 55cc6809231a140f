import logging
import os

from packaging import version

from ..core import GaussianMixture, OuSchedule, ScoreField, SimplexWeights
from ..diffusion.ou_process import AnalyticScoreField
from ..diffusion.sampler import FusedScoreField
from ..diffusion.score_net import MlpScoreNet
from ..errors import RejectedInputError, SchemaMismatchError
from ..fusion_utils import load_json_file, save_json_file

FIELD_SCHEMA_VERSION = "1.0"
FIELD_KINDS = ("analytic", "mlp", "fused")


def field_from_descriptor(descriptor: dict) -> ScoreField:
    """
    Rebuild a score field from its descriptor

    Parameters
    ----------
    descriptor : dict
        output of ScoreField.descriptor().

    Returns
    -------
    ScoreField

    """
    kind = descriptor.get("kind")
    if kind not in FIELD_KINDS:
        raise SchemaMismatchError("Unknown score field kind {}, expected one of {}".format(kind, FIELD_KINDS))
    try:
        if kind == "analytic":
            return AnalyticScoreField(
                GaussianMixture.from_dict(descriptor["mixture"]),
                OuSchedule.from_dict(descriptor["schedule"]),
            )
        if kind == "mlp":
            return MlpScoreNet.from_descriptor(descriptor)
        return FusedScoreField(
            [field_from_descriptor(d) for d in descriptor["fields"]],
            SimplexWeights(descriptor["weights"]),
        )
    except (KeyError, TypeError, RejectedInputError) as e:
        raise SchemaMismatchError("Malformed {} field document: {}".format(kind, e))


def save_field(field: ScoreField, filepath: str):
    """
    Persist a score field (analytic oracle, trained net or fused combination)
    as a versioned json document
    """
    directory = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(directory, exist_ok=True)
    save_json_file(filepath, {
        "schema_version": FIELD_SCHEMA_VERSION,
        "field": field.descriptor(),
    })
    logging.getLogger(__name__).info("Saved {} field to {}".format(field.descriptor()["kind"], filepath))
    return filepath


def load_field(filepath: str, dim: int = None) -> ScoreField:
    """
    Load a field written by save_field

    Parameters
    ----------
    filepath : str
        json document.
    dim : int, optional
        expected dimension, checked when given.

    Returns
    -------
    ScoreField

    """
    try:
        document = load_json_file(filepath)
    except FileNotFoundError:
        raise SchemaMismatchError("Score field file not found: {}".format(filepath))
    if not isinstance(document, dict) or "field" not in document:
        raise SchemaMismatchError("{} is not a score field document".format(filepath))

    check_schema_version(document.get("schema_version"), FIELD_SCHEMA_VERSION, filepath)
    field = field_from_descriptor(document["field"])
    if dim is not None and field.dim != int(dim):
        raise SchemaMismatchError(
            "Score field {} has dim {}, expected dim {}".format(filepath, field.dim, dim)
        )
    return field


def check_schema_version(found, supported: str, source: str = "document"):
    """
    Accept documents of the supported major version written no later than
    the supported version
    """
    try:
        found_version = version.parse(str(found))
    except version.InvalidVersion:
        raise SchemaMismatchError("{} has an unreadable schema version {}".format(source, found))
    supported_version = version.parse(supported)
    if found is None or found_version.major != supported_version.major or found_version > supported_version:
        raise SchemaMismatchError(
            "{} has schema version {}, this package reads {}".format(source, found, supported)
        )
