import hashlib
import struct

import numpy as np
import pytest

from tripdrift.clusterer import build_family_model
from tripdrift.dataio import SyntheticSpec, generate_synthetic
from tripdrift.exceptions import (
    ModelCorruptError,
    ModelFormatError,
    ModelHashMismatchError,
    ModelVersionError,
)
from tripdrift.metric import TrainConfig, embed, train_triplet
from tripdrift.serialization import (
    deserialize_model,
    family_model_from_bytes,
    family_model_to_bytes,
    load_family_model,
    load_network,
    model_digest,
    network_from_bytes,
    network_to_bytes,
    save_family_model,
    save_network,
    serialize_model,
)


@pytest.fixture(scope="module")
def trained():
    ds = generate_synthetic(SyntheticSpec(3, 5, 30, 8.0), seed=0)
    model = train_triplet(ds, TrainConfig(layer_dims=(5, 4, 2), epochs=2, seed=0))
    fm = build_family_model(embed(model, ds), ds.labels, 2, network_hash=model_digest(model))
    return model, fm


def test_network_round_trip(tmp_path, trained):
    model, _ = trained
    save_network(model, tmp_path / "n.model")
    back = load_network(tmp_path / "n.model")
    np.testing.assert_array_equal(back.network.flatten(), model.network.flatten())
    np.testing.assert_array_equal(back.loss_curve, model.loss_curve)
    assert back.config == model.config and back.mode == "triplet"
    assert back.feature_mask == model.feature_mask
    save_network(back, tmp_path / "again.model")
    assert (tmp_path / "n.model").read_bytes() == (tmp_path / "again.model").read_bytes()


def test_family_round_trip(tmp_path, trained):
    model, fm = trained
    save_family_model(fm, tmp_path / "f.family")
    back = load_family_model(tmp_path / "f.family", network=model)
    assert len(back.clusters) == len(fm.clusters)
    assert all(a.same_as(b) for a, b in zip(back.clusters, fm.clusters))
    assert family_model_to_bytes(back) == family_model_to_bytes(fm)


def test_digest_is_file_trailer(tmp_path, trained):
    model, _ = trained
    blob = network_to_bytes(model)
    assert blob[-32:] == hashlib.sha256(blob[:-32]).digest()
    assert model_digest(model) == blob[-32:].hex()


def test_layout_header(trained):
    blob = network_to_bytes(trained[0])
    assert blob[:4] == b"TDAE"
    assert struct.unpack_from("<I", blob, 4) == (1,)


def test_truncated_file_is_corrupt(tmp_path, trained):
    blob = network_to_bytes(trained[0])
    for cut in (3, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(ModelCorruptError):
            network_from_bytes(blob[:cut])


def test_flipped_byte_is_corrupt(trained):
    blob = bytearray(network_to_bytes(trained[0]))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(ModelCorruptError, match="checksum"):
        network_from_bytes(bytes(blob))


def test_version_mismatch(trained):
    blob = bytearray(network_to_bytes(trained[0]))
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(ModelVersionError):
        network_from_bytes(bytes(blob))


def test_wrong_network_rejected(trained):
    model, fm = trained
    other = train_triplet(
        generate_synthetic(SyntheticSpec(3, 5, 30, 8.0), seed=1),
        TrainConfig(layer_dims=(5, 4, 2), epochs=1, seed=0),
    )
    with pytest.raises(ModelHashMismatchError):
        family_model_from_bytes(family_model_to_bytes(fm), network=other)
    with pytest.raises(ModelHashMismatchError):
        family_model_from_bytes(family_model_to_bytes(fm), network="0" * 64)
    family_model_from_bytes(family_model_to_bytes(fm), network=model)


def test_error_kinds_are_distinct():
    kinds = {ModelVersionError, ModelCorruptError, ModelHashMismatchError}
    assert all(issubclass(k, ModelFormatError) for k in kinds)
    assert len({k.__mro__[0] for k in kinds}) == 3


def test_generic_dispatch(tmp_path, trained):
    model, fm = trained
    serialize_model(model, tmp_path / "a")
    serialize_model(fm, tmp_path / "b")
    assert deserialize_model(tmp_path / "a").mode == "triplet"
    assert len(deserialize_model(tmp_path / "b", network=model).clusters) == len(fm.clusters)
    (tmp_path / "c").write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(ModelCorruptError):
        deserialize_model(tmp_path / "c")
    with pytest.raises(TypeError):
        serialize_model(object(), tmp_path / "d")


def test_magic_mismatch(trained):
    model, fm = trained
    with pytest.raises(ModelCorruptError, match="magic"):
        network_from_bytes(family_model_to_bytes(fm))
