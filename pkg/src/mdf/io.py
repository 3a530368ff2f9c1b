"""On-disk formats: the dataset file pair and the model checkpoint.

Dataset: a binary payload ``MDFD`` + uint32 version + little-endian float32
samples in pair-id order (EO view then SAR view for each pair), and a JSON
manifest next to it (``<payload>.json``) holding the generator settings, split
layout, labels and the payload's SHA-256.

Checkpoint: ``MDFC`` + uint32 version + uint32 header length + JSON header,
then every parameter array as little-endian float32 in the order eo_encoder
layers (weight, bias), eo_head, sar_encoder layers, sar_head.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import ClassProfile, DatasetBundle, LabeledSplit, ShiftParams, UnlabeledPool
from .model import ClassifierParams, Dense, EncoderParams, TwinModel

DATASET_MAGIC = b"MDFD"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"MDFC"
CHECKPOINT_VERSION = 1
SPLITS = ("train", "unlabeled", "val", "test")


class FormatError(ValueError):
    pass


class IntegrityError(FormatError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# dataset

def _split_arrays(bundle: DatasetBundle):
    for name in SPLITS:
        s = getattr(bundle, name)
        yield name, s


def save_dataset(bundle: DatasetBundle, path) -> dict:
    """Write payload and manifest; returns the manifest dict."""
    path = Path(path)
    d = bundle.dim
    chunks, splits, expected_id = [], {}, 0
    for name, s in _split_arrays(bundle):
        ids = np.asarray(s.pair_ids)
        if isinstance(s, LabeledSplit) and s.ops is not None:
            raise FormatError("curated splits are not persisted; save the generated bundle")
        if len(ids) and not np.array_equal(ids, np.arange(expected_id, expected_id + len(ids))):
            raise FormatError(f"split {name!r} is not contiguous in pair-id order")
        entry = {"start": int(expected_id), "count": int(len(ids))}
        if isinstance(s, LabeledSplit):
            entry["labels"] = [int(v) for v in s.labels]
        splits[name] = entry
        expected_id += len(ids)
        inter = np.empty((len(ids), 2, d), dtype="<f4")
        inter[:, 0], inter[:, 1] = s.eo, s.sar
        chunks.append(inter.tobytes())
    payload = DATASET_MAGIC + struct.pack("<I", DATASET_VERSION) + b"".join(chunks)
    path.write_bytes(payload)
    manifest = {
        "format": "mdf-dataset",
        "format_version": DATASET_VERSION,
        "seed": int(bundle.seed),
        "profile": {"proportions": list(bundle.profile.proportions),
                    "total": bundle.profile.total, "names": list(bundle.profile.names)},
        "shift": asdict(bundle.shift),
        "split_sizes": dict(bundle.split_sizes),
        "n_pairs": int(expected_id),
        "dim": int(d),
        "splits": splits,
        "withheld_labels": ([int(v) for v in bundle.withheld_labels]
                            if bundle.withheld_labels is not None else None),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    dump_json(manifest, manifest_path(path))
    return manifest


def read_dataset_manifest(path) -> dict:
    mpath = manifest_path(path)
    if not mpath.exists():
        raise FormatError(f"dataset manifest {mpath} not found")
    return json.loads(mpath.read_text())


def load_dataset(path, verify: bool = True) -> DatasetBundle:
    path = Path(path)
    manifest = read_dataset_manifest(path)
    raw = path.read_bytes()
    if verify and hashlib.sha256(raw).hexdigest() != manifest["payload_sha256"]:
        raise IntegrityError(f"{path}: payload hash does not match manifest; file is corrupted")
    if raw[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != DATASET_VERSION or manifest.get("format_version") != DATASET_VERSION:
        raise FormatError(f"{path}: dataset version {version} "
                          f"(manifest {manifest.get('format_version')}) unsupported; "
                          f"this build reads version {DATASET_VERSION}")
    d, n = manifest["dim"], manifest["n_pairs"]
    body = np.frombuffer(raw, dtype="<f4", offset=8)
    if body.size != n * 2 * d:
        raise FormatError(f"{path}: payload has {body.size} floats, expected {n * 2 * d}")
    body = body.reshape(n, 2, d).astype(np.float32)
    parts = {}
    for name in SPLITS:
        e = manifest["splits"][name]
        sl = slice(e["start"], e["start"] + e["count"])
        ids = np.arange(sl.start, sl.stop, dtype=np.int64)
        eo, sar = body[sl, 0].copy(), body[sl, 1].copy()
        if name == "unlabeled":
            parts[name] = UnlabeledPool(eo, sar, ids)
        else:
            parts[name] = LabeledSplit(eo, sar, np.asarray(e["labels"], dtype=np.int64), ids)
    prof = manifest["profile"]
    withheld = manifest.get("withheld_labels")
    return DatasetBundle(
        **parts,
        profile=ClassProfile(tuple(prof["proportions"]), prof["total"], tuple(prof["names"])),
        shift=ShiftParams(**manifest["shift"]), seed=manifest["seed"],
        split_sizes=manifest["split_sizes"],
        withheld_labels=np.asarray(withheld, dtype=np.int64) if withheld is not None else None)


# checkpoint

def _ordered_arrays(model: TwinModel) -> list:
    return (model.eo_encoder.arrays() + model.eo_head.arrays()
            + model.sar_encoder.arrays() + model.sar_head.arrays())


def save_checkpoint(model: TwinModel, path, extra: dict | None = None) -> None:
    arrays = [np.asarray(a) for a in _ordered_arrays(model)]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dataset_format_version": DATASET_VERSION,
        "arch": {"encoder_layers": [list(l.weight.shape) for l in model.eo_encoder.layers],
                 "latent_dim": model.latent_dim, "n_classes": model.n_classes,
                 "shared_head": model.shared_head, "unit_norm": model.eo_encoder.unit_norm},
        "input_norm": {k: list(v) for k, v in sorted(model.input_norm.items())},
        "shapes": [list(a.shape) for a in arrays],
        **(extra or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version} unsupported; "
                          f"this build reads version {CHECKPOINT_VERSION}")
    try:
        header = json.loads(raw[12:12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from None
    offset = 12 + hlen
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays.append(a.astype(np.float32))
        offset += 4 * count
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    arch = header["arch"]
    n_layers = len(arch["encoder_layers"])
    it = iter(arrays)
    unit_norm = arch.get("unit_norm", True)
    enc = lambda: EncoderParams([Dense(next(it), next(it)) for _ in range(n_layers)], unit_norm)
    eo_enc, eo_head = enc(), ClassifierParams(next(it), next(it))
    sar_enc, sar_head = enc(), ClassifierParams(next(it), next(it))
    if arch["shared_head"]:
        sar_head = eo_head
    model = TwinModel(eo_enc, eo_head, sar_enc, sar_head, arch["latent_dim"], arch["shared_head"],
                      input_norm={k: tuple(v) for k, v in header["input_norm"].items()})
    return model, header
