"""On-disk formats: windowed dataset container and model checkpoints.

Dataset file (little-endian)::

    magic   4s   b"ATXW"
    version u16
    winlen  u32
    count   u32
    then per window:
        id_len u16, subject id (utf-8, id_len bytes),
        label  u8,
        start  u32,
        ecg    winlen x f64,
        eda    winlen x f64

Checkpoint directory::

    manifest.json   {"format", "spec", "params": [{"name", "shape", "offset", "count"}], ...}
    params.bin      flat f64 little-endian, params then batch-norm buffers
"""
import json
import os
import struct
import tempfile

import numpy as np

from .preprocess import WINDOW_LEN, WindowPair

MAGIC = b"ATXW"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_F64 = np.dtype("<f8")

CHECKPOINT_FORMAT = "attx-checkpoint-v1"


class FormatError(ValueError):
    pass


def atomic_write(path, data, mode="wb"):
    """Write to a temp file in the same directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_dataset(windows, window_len=WINDOW_LEN):
    parts = [_HEADER.pack(MAGIC, VERSION, window_len, len(windows))]
    for w in windows:
        sid = str(w.subject_id).encode("utf-8")
        ecg = np.asarray(w.ecg, dtype=_F64)
        eda = np.asarray(w.eda, dtype=_F64)
        if ecg.shape != (window_len,) or eda.shape != (window_len,):
            raise FormatError(f"window for {w.subject_id} is not {window_len} samples long")
        parts.append(struct.pack("<H", len(sid)) + sid + struct.pack("<BI", int(w.label), int(w.start)))
        parts.append(ecg.tobytes())
        parts.append(eda.tobytes())
    return b"".join(parts)


def decode_dataset(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("dataset file truncated (no header)")
    magic, version, wl, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    pos = _HEADER.size
    block = wl * 8
    out = []
    for i in range(count):
        try:
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            sid = bytes(buf[pos:pos + n]).decode("utf-8")
            if len(sid.encode("utf-8")) != n:
                raise struct.error("short subject id")
            pos += n
            label, start = struct.unpack_from("<BI", buf, pos)
            pos += 5
        except struct.error as exc:
            raise FormatError(f"dataset file truncated in record {i}") from exc
        if pos + 2 * block > len(buf):
            raise FormatError(f"dataset file truncated in record {i}")
        ecg = np.frombuffer(buf, dtype=_F64, count=wl, offset=pos).astype(np.float64)
        eda = np.frombuffer(buf, dtype=_F64, count=wl, offset=pos + block).astype(np.float64)
        pos += 2 * block
        out.append(WindowPair(sid, ecg, eda, label, start))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after {count} records")
    return out


def write_dataset(path, windows):
    atomic_write(path, encode_dataset(windows))


def read_dataset(path):
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())


# ---------------------------------------------------------------------------
# checkpoints

def _state_arrays(model):
    for name, t in model.named_parameters():
        yield name, t.data
    for name, st in model.named_buffers():
        yield name + ".running_mean", st.running_mean
        yield name + ".running_var", st.running_var


def save_checkpoint(path, model, extra=None):
    """Write ``manifest.json`` + ``params.bin`` into directory ``path``."""
    entries, blobs, offset = [], [], 0
    for name, arr in _state_arrays(model):
        a = np.ascontiguousarray(arr, dtype=_F64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": CHECKPOINT_FORMAT, "byte_order": "little", "dtype": "float64",
                "spec": model.spec.to_dict(), "params": entries, "total_bytes": offset}
    if extra:
        manifest.update(extra)
    os.makedirs(path, exist_ok=True)
    atomic_write(os.path.join(path, "params.bin"), b"".join(blobs))
    atomic_write(os.path.join(path, "manifest.json"),
                 json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))


def read_checkpoint(path):
    with open(os.path.join(path, "manifest.json"), "rb") as fh:
        manifest = json.loads(fh.read())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not an attx checkpoint: {path}")
    with open(os.path.join(path, "params.bin"), "rb") as fh:
        buf = fh.read()
    if len(buf) != manifest["total_bytes"]:
        raise FormatError("params.bin size does not match manifest")
    arrays = {}
    for e in manifest["params"]:
        a = np.frombuffer(buf, dtype=_F64, count=e["count"], offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return manifest, arrays


def load_checkpoint(path):
    """Rebuild the model stored at ``path``."""
    from .model import AttXNet, ModelSpec

    manifest, arrays = read_checkpoint(path)
    model = AttXNet(ModelSpec.from_dict(manifest["spec"]))
    load_state(model, arrays)
    return model, manifest


def load_state(model, arrays):
    for name, t in model.named_parameters():
        if name not in arrays:
            raise FormatError(f"checkpoint lacks parameter {name}")
        if arrays[name].shape != t.shape:
            raise FormatError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {t.shape}")
        t.data = arrays[name].copy()
        t.name = name
    for name, st in model.named_buffers():
        st.running_mean = arrays[name + ".running_mean"].copy()
        st.running_var = arrays[name + ".running_var"].copy()
    return model
