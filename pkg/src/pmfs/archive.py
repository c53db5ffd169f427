"""Binary container for datasets, models and ensembles.

Layout (all integers little-endian)::

    b"PMFS" | u32 version | u64 meta_len | meta (UTF-8 JSON, sorted keys)
    u32 n_blocks | n_blocks x (u16 name_len | name | u8 ndim | u64 dims[ndim] | u64 offset | u64 nbytes)
    payload: little-endian IEEE-754 float64 arrays, row-major, at the given offsets
    u32 crc32 of every preceding byte

Offsets are absolute. Saving is atomic (temporary file + rename), and the
same object always serializes to the same bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .data import MultiFidelityDataset, ScalerStats
from .nn import DenseLayer, LstmLayer, Net, NetSpec
from .pod import PODBasis
from .progressive import Ensemble, Level, LevelSpec, ProgressiveModel

MAGIC = b"PMFS"
VERSION = 1
F64 = np.dtype("<f8")


class ArchiveError(ValueError):
    pass


class FormatError(ArchiveError):
    pass


class VersionError(ArchiveError):
    pass


class IntegrityError(ArchiveError):
    pass


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(meta: dict, blocks: dict[str, np.ndarray]) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    names = sorted(blocks)
    arrays = [np.array(blocks[n], dtype=F64, order="C") for n in names]
    head = [MAGIC, struct.pack("<IQ", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(names))]
    table_size = sum(2 + len(n.encode()) + 1 + 8 * a.ndim + 16 for n, a in zip(names, arrays))
    offset = sum(len(h) for h in head) + table_size
    table = []
    for n, a in zip(names, arrays):
        nb = n.encode()
        table.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
                     + struct.pack(f"<{a.ndim}Q", *a.shape) + struct.pack("<QQ", offset, a.nbytes))
        offset += a.nbytes
    body = b"".join(head + table + [a.tobytes() for a in arrays])
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise FormatError(f"not a PMFS archive (magic {data[:4]!r})")
    if len(data) < 16:
        raise IntegrityError("archive truncated inside the header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise VersionError(f"archive format version {version} is not supported by this reader (version {VERSION})")
    try:
        (meta_len,) = struct.unpack_from("<Q", data, 8)
        pos = 16
        meta = json.loads(data[pos:pos + meta_len].decode())
        pos += meta_len
        (n_blocks,) = struct.unpack_from("<I", data, pos)
        pos += 4
        entries = []
        for _ in range(n_blocks):
            (nl,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + nl].decode()
            pos += 2 + nl
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}Q", data, pos + 1)
            off, nbytes = struct.unpack_from("<QQ", data, pos + 1 + 8 * ndim)
            pos += 1 + 8 * ndim + 16
            entries.append((name, shape, off, nbytes))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"archive header is corrupt or truncated: {exc}") from exc
    end = max([pos] + [off + nb for _, _, off, nb in entries])
    if len(data) != end + 4:
        raise IntegrityError(f"archive is {len(data)} bytes, expected {end + 4}")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise IntegrityError("archive checksum mismatch")
    blocks = {}
    for name, shape, off, nbytes in entries:
        if nbytes != int(np.prod(shape, dtype=np.int64)) * 8:
            raise IntegrityError(f"block {name!r} length does not match its shape")
        blocks[name] = np.frombuffer(data, dtype=F64, count=nbytes // 8, offset=off).reshape(shape).astype(np.float64)
    return meta, blocks


def write_archive(path, meta: dict, blocks: dict[str, np.ndarray]):
    _atomic_write(Path(path), encode(meta, blocks))


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


# -- models -----------------------------------------------------------------

def _net_blocks(net: Net, prefix: str, blocks: dict):
    for i, layer in enumerate(net.layers):
        blocks[f"{prefix}/{i}/W"] = layer.weights
        blocks[f"{prefix}/{i}/b"] = layer.bias


def _net_from_blocks(spec: NetSpec, prefix: str, blocks: dict) -> Net:
    layers = []
    d = spec.d_in
    for i, ls in enumerate(spec.layers):
        w, b = blocks[f"{prefix}/{i}/W"], blocks[f"{prefix}/{i}/b"]
        layers.append(DenseLayer(w, b, ls.activation) if ls.kind == "dense" else LstmLayer(w, b, d))
        d = ls.size
    return Net(layers, spec)


def _scaler_blocks(s: ScalerStats, prefix: str, blocks: dict) -> str:
    blocks[f"{prefix}/lo"] = s.lo
    blocks[f"{prefix}/hi"] = s.hi
    return s.mode


def _pod_blocks(p: PODBasis | None, prefix: str, blocks: dict) -> bool:
    if p is None:
        return False
    blocks[f"{prefix}/mean"] = p.mean_field
    blocks[f"{prefix}/modes"] = p.modes
    blocks[f"{prefix}/sv"] = p.singular_values
    return True


def _pod_from(prefix: str, blocks: dict) -> PODBasis:
    return PODBasis(blocks[f"{prefix}/mean"], blocks[f"{prefix}/modes"], blocks[f"{prefix}/sv"])


def model_to_blocks(model: ProgressiveModel, prefix: str = "") -> tuple[dict, dict]:
    blocks: dict[str, np.ndarray] = {}
    meta = {
        "d_out": model.d_out,
        "output_scaler": _scaler_blocks(model.output_scaler, f"{prefix}out/scaler", blocks),
        "output_pod": _pod_blocks(model.output_pod, f"{prefix}out/pod", blocks),
        "levels": [],
    }
    for l, lv in enumerate(model.levels):
        p = f"{prefix}L{l}"
        _net_blocks(lv.encoder, f"{p}/enc", blocks)
        _net_blocks(lv.decoder, f"{p}/dec", blocks)
        if lv.history is not None:
            blocks[f"{p}/history"] = lv.history
        meta["levels"].append({
            "spec": lv.spec.to_dict(),
            "encoder": lv.encoder.spec.to_dict(),
            "decoder": lv.decoder.spec.to_dict(),
            "scaler": _scaler_blocks(lv.input_scaler, f"{p}/scaler", blocks),
            "pod": _pod_blocks(lv.input_pod, f"{p}/pod", blocks),
            "frozen": lv.frozen,
        })
    return meta, blocks


def model_from_blocks(meta: dict, blocks: dict, prefix: str = "") -> ProgressiveModel:
    out_scaler = ScalerStats(blocks[f"{prefix}out/scaler/lo"], blocks[f"{prefix}out/scaler/hi"], meta["output_scaler"])
    out_pod = _pod_from(f"{prefix}out/pod", blocks) if meta["output_pod"] else None
    model = ProgressiveModel(meta["d_out"], out_scaler, out_pod)
    for l, lm in enumerate(meta["levels"]):
        p = f"{prefix}L{l}"
        level = Level(
            spec=LevelSpec.from_dict(lm["spec"]),
            encoder=_net_from_blocks(NetSpec.from_dict(lm["encoder"]), f"{p}/enc", blocks),
            decoder=_net_from_blocks(NetSpec.from_dict(lm["decoder"]), f"{p}/dec", blocks),
            input_scaler=ScalerStats(blocks[f"{p}/scaler/lo"], blocks[f"{p}/scaler/hi"], lm["scaler"]),
            input_pod=_pod_from(f"{p}/pod", blocks) if lm["pod"] else None,
            history=blocks.get(f"{p}/history"),
        )
        if lm["frozen"]:
            level.freeze()
        model.levels.append(level)
    return model


def save_model(obj: ProgressiveModel | Ensemble, path, extra_meta: dict | None = None):
    """Write a model or an ensemble to ``path``."""
    if isinstance(obj, Ensemble):
        blocks: dict[str, np.ndarray] = {}
        members = []
        for k, mdl in enumerate(obj.members):
            m_meta, m_blocks = model_to_blocks(mdl, prefix=f"M{k}/")
            members.append(m_meta)
            blocks.update(m_blocks)
        meta = {"kind": "ensemble", "seeds": list(obj.seeds), "members": members}
    else:
        meta, blocks = model_to_blocks(obj)
        meta["kind"] = "model"
    if extra_meta:
        meta["extra"] = extra_meta
    write_archive(path, meta, blocks)


def load_model(path, with_meta: bool = False):
    meta, blocks = read_archive(path)
    kind = meta.get("kind")
    if kind == "model":
        obj = model_from_blocks(meta, blocks)
    elif kind == "ensemble":
        obj = Ensemble(
            members=[model_from_blocks(mm, blocks, prefix=f"M{k}/") for k, mm in enumerate(meta["members"])],
            seeds=list(meta["seeds"]),
        )
    else:
        raise FormatError(f"archive holds a {kind!r}, not a model")
    return (obj, meta.get("extra", {})) if with_meta else obj


# -- datasets ---------------------------------------------------------------

TARGETS_FILE = "targets.pmfs"


def level_file(level: int) -> str:
    return f"level{level}.pmfs"


def save_dataset(ds: MultiFidelityDataset, directory):
    """One file for targets/coordinates plus one file per level input, so a
    reader can load only the levels it needs."""
    directory = Path(directory)
    blocks = {
        "times": ds.times,
        "sample_ids": ds.sample_ids,
        "train_mask": ds.train_mask.astype(np.float64),
        "test_mask": ds.test_mask.astype(np.float64),
        "lengths": ds.lengths.astype(np.float64),
    }
    if ds.targets is not None:
        blocks["targets"] = ds.targets
    for name, arr in ds.extras.items():
        blocks[f"extra/{name}"] = arr
    meta = {"kind": "dataset", "n_levels": ds.n_levels, "meta": ds.meta}
    write_archive(directory / TARGETS_FILE, meta, blocks)
    for l, x in enumerate(ds.inputs):
        if x is not None:
            write_archive(directory / level_file(l), {"kind": "level_input", "level": l}, {"x": x})


def load_dataset(directory, levels=None, targets: bool = True) -> MultiFidelityDataset:
    """Load a dataset directory. ``levels`` restricts which input files are read."""
    directory = Path(directory)
    meta, blocks = read_archive(directory / TARGETS_FILE)
    if meta.get("kind") != "dataset":
        raise FormatError(f"{directory / TARGETS_FILE} is not a dataset archive")
    n_levels = meta["n_levels"]
    wanted = range(n_levels) if levels is None else levels
    inputs: list[np.ndarray | None] = [None] * n_levels
    for l in wanted:
        if l >= n_levels:
            raise LookupError(f"dataset has {n_levels} levels, level {l} requested")
        path = directory / level_file(l)
        if not path.exists():
            raise FileNotFoundError(f"input file for level {l} not found: {path}")
        inputs[l] = read_archive(path)[1]["x"]
    return MultiFidelityDataset(
        inputs=inputs,
        targets=blocks.get("targets") if targets else None,
        times=blocks["times"],
        sample_ids=blocks["sample_ids"],
        train_mask=blocks["train_mask"] != 0,
        test_mask=blocks["test_mask"] != 0,
        meta=meta["meta"],
        lengths=blocks["lengths"].astype(np.int64),
        extras={k[len("extra/"):]: v for k, v in blocks.items() if k.startswith("extra/")},
    )
