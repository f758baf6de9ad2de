"""Binary containers for trained networks and family models.

Layout (all integers little-endian)::

    magic          4 bytes   b"TDAE" (network) or b"TDFM" (family model)
    format_version uint32
    header_len     uint64
    header         header_len bytes, UTF-8 JSON with sorted keys
    payload_len    uint64    number of float64 values
    payload        payload_len * 8 bytes, float64 little-endian
    digest         32 bytes  SHA-256 of every preceding byte

The digest doubles as the model's identity: a family model records the
digest of the network file it was built from and refuses to load against
any other network.

Network payload: parameters as W0, b0, W1, b1, ... (row-major ``W`` of
shape ``(out, in)``), then the loss curve as ``epochs x 3`` rows of
``(epoch, recon_loss, triplet_loss)``.

Family-model payload: for each cluster in header order, ``centroid``
(``latent_dim`` values), ``threshold`` (1 value), then ``member_count``
member-to-centroid distances.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .clusterer import ClusterSummary, FamilyModel
from .dataio import FeatureMask
from .exceptions import ModelCorruptError, ModelHashMismatchError, ModelVersionError
from .metric import TrainConfig, TrainedModel
from .neuralnet import NetworkParams

FORMAT_VERSION = 1
NETWORK_MAGIC = b"TDAE"
FAMILY_MAGIC = b"TDFM"
_DIGEST_LEN = 32


def _pack(magic, header, payload):
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    values = np.ascontiguousarray(payload, dtype="<f8")
    body = b"".join(
        [
            magic,
            struct.pack("<I", FORMAT_VERSION),
            struct.pack("<Q", len(head)),
            head,
            struct.pack("<Q", values.size),
            values.tobytes(),
        ]
    )
    return body + hashlib.sha256(body).digest()


def _unpack(blob, magic):
    if len(blob) < 8 + _DIGEST_LEN:
        raise ModelCorruptError("file too short to be a model container")
    if blob[:4] != magic:
        raise ModelCorruptError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"format version {version} is not supported (expected {FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelCorruptError("checksum mismatch; file is truncated or damaged")
    try:
        pos = 8
        (hlen,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        header = json.loads(body[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + 8 * count != len(body):
            raise ValueError("payload length mismatch")
        payload = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
    except (ValueError, struct.error, UnicodeDecodeError) as exc:
        raise ModelCorruptError(f"malformed container: {exc}") from None
    return header, payload, digest.hex()


def _write_atomic(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def network_to_bytes(model):
    net = model.network
    header = {
        "kind": "network",
        "format_version": FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activations": ["relu" if net.is_relu(i) else "identity" for i in range(net.n_layers)],
        "mode": model.mode,
        "feature_mask": {
            "kept_indices": list(model.feature_mask.kept_indices),
            "min_variance": model.feature_mask.min_variance,
        },
        "config": model.config.to_dict(),
        "loss_curve_rows": int(model.loss_curve.shape[0]),
    }
    payload = np.concatenate([net.flatten(), model.loss_curve.reshape(-1)])
    return _pack(NETWORK_MAGIC, header, payload)


def model_digest(model):
    """Hex SHA-256 identity of a trained network (same as its file digest)."""
    return network_to_bytes(model)[-_DIGEST_LEN:].hex()


def network_from_bytes(blob):
    header, payload, _ = _unpack(blob, NETWORK_MAGIC)
    try:
        dims = tuple(header["layer_dims"])
        rows = int(header["loss_curve_rows"])
        split = payload.size - 3 * rows
        net = NetworkParams.from_flat(dims, payload[:split])
        curve = payload[split:].reshape(rows, 3)
        mask = FeatureMask(
            tuple(header["feature_mask"]["kept_indices"]),
            header["feature_mask"]["min_variance"],
        )
        cfg = TrainConfig.from_dict(header["config"])
        return TrainedModel(net, mask, cfg, header["mode"], curve)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelCorruptError(f"invalid network header or payload: {exc}") from None


def save_network(model, path):
    _write_atomic(path, network_to_bytes(model))


def load_network(path):
    return network_from_bytes(_read(path))


def family_model_to_bytes(fm):
    header = {
        "kind": "family",
        "format_version": FORMAT_VERSION,
        "latent_dim": fm.latent_dim,
        "network_sha256": fm.network_hash,
        "config": fm.config,
        "warnings": list(fm.warnings),
        "clusters": [
            {
                "family": c.family,
                "cluster_id": c.cluster_id,
                "member_count": c.member_count,
                "noise_excluded": c.noise_excluded,
                "eps": c.eps,
                "min_pts": c.min_pts,
                "fallback": c.fallback,
            }
            for c in fm.clusters
        ],
    }
    parts = []
    for c in fm.clusters:
        parts += [c.centroid, [c.threshold], c.member_distances]
    payload = np.concatenate(parts) if parts else np.zeros(0)
    return _pack(FAMILY_MAGIC, header, payload)


def _expected_hash(network):
    if network is None:
        return None
    if isinstance(network, str):
        return network
    return model_digest(network)


def family_model_from_bytes(blob, network=None):
    header, payload, _ = _unpack(blob, FAMILY_MAGIC)
    try:
        dim = int(header["latent_dim"])
        clusters, pos = [], 0
        for rec in header["clusters"]:
            m = int(rec["member_count"])
            centroid = payload[pos : pos + dim].copy()
            threshold = float(payload[pos + dim])
            dists = payload[pos + dim + 1 : pos + dim + 1 + m].copy()
            if dists.size != m:
                raise ValueError("payload too short for cluster records")
            pos += dim + 1 + m
            clusters.append(
                ClusterSummary(
                    family=rec["family"],
                    cluster_id=int(rec["cluster_id"]),
                    centroid=centroid,
                    threshold=threshold,
                    member_count=m,
                    noise_excluded=int(rec["noise_excluded"]),
                    eps=float(rec["eps"]),
                    min_pts=int(rec["min_pts"]),
                    member_distances=dists,
                    fallback=bool(rec["fallback"]),
                )
            )
        if pos != payload.size:
            raise ValueError("trailing payload values")
        fm = FamilyModel(
            tuple(clusters),
            dim,
            header["network_sha256"],
            header["config"],
            tuple(header["warnings"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelCorruptError(f"invalid family model: {exc}") from None
    expected = _expected_hash(network)
    if expected is not None and fm.network_hash != expected:
        raise ModelHashMismatchError(
            f"family model was built from network {fm.network_hash[:12]}..., "
            f"not {expected[:12]}..."
        )
    return fm


def save_family_model(fm, path):
    _write_atomic(path, family_model_to_bytes(fm))


def load_family_model(path, network=None):
    """Load a family model; with ``network`` (a TrainedModel or hex digest)
    the recorded provenance must match."""
    return family_model_from_bytes(_read(path), network)


def serialize_model(model, path):
    if isinstance(model, TrainedModel):
        save_network(model, path)
    elif isinstance(model, FamilyModel):
        save_family_model(model, path)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")


def deserialize_model(path, network=None):
    """Load either container type, dispatching on the magic bytes."""
    blob = _read(path)
    if blob[:4] == NETWORK_MAGIC:
        return network_from_bytes(blob)
    if blob[:4] == FAMILY_MAGIC:
        return family_model_from_bytes(blob, network)
    raise ModelCorruptError(f"unrecognised container magic {blob[:4]!r}")
