"""Binary file formats (dataset container, checkpoints), CSV ingestion for
externally prepared feature matrices, and run configuration."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .simgen import SimDataset

DATASET_MAGIC = b"TSD1"
CHECKPOINT_MAGIC = b"CKP1"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated file")
    return buf


def save_dataset(path, dataset):
    """TSD1: header, per-subject split tags, float32 LE payload, labels."""
    data = np.asarray(dataset.data, dtype="<f4")
    n, c, t = data.shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIIIB", FORMAT_VERSION, n, c, t, 1))
        f.write(np.asarray(dataset.splits, dtype=np.uint8).tobytes())
        f.write(data.tobytes())
        f.write(np.asarray(dataset.labels, dtype=np.uint8).tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != DATASET_MAGIC:
            raise FormatError(f"{path}: bad magic, not a TSD1 dataset")
        version, n, c, t, has_labels = struct.unpack("<IIIIB", _read_exact(f, 17))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        splits = np.frombuffer(_read_exact(f, n), dtype=np.uint8).astype(np.int64)
        if np.any(splits > 2):
            raise FormatError(f"{path}: invalid split tag")
        payload = np.frombuffer(_read_exact(f, n * c * t * 4), dtype="<f4")
        data = payload.reshape(n, c, t).astype(np.float64)
        if has_labels:
            labels = np.frombuffer(_read_exact(f, n), dtype=np.uint8).astype(np.int64)
        else:
            labels = np.zeros(n, dtype=np.int64)
    return SimDataset(data=data, labels=labels, splits=splits)


def import_csv(directory, labels_file):
    """One CSV per subject (rows=channels, columns=timepoints) plus a labels
    file of `name,label` lines; all subjects must share one shape."""
    directory = Path(directory)
    labels = {}
    for line in Path(labels_file).read_text().splitlines():
        if not line.strip():
            continue
        name, lab = line.rsplit(",", 1)
        labels[name.strip()] = int(lab)
    files = sorted(p for p in directory.iterdir() if p.suffix == ".csv")
    if not files:
        raise FormatError(f"no CSV files in {directory}")
    mats, labs = [], []
    for p in files:
        mat = np.loadtxt(p, delimiter=",", ndmin=2)
        if mats and mat.shape != mats[0].shape:
            raise FormatError(
                f"{p.name}: shape {mat.shape} differs from {mats[0].shape}")
        if p.stem not in labels:
            raise FormatError(f"no label for subject {p.stem}")
        mats.append(mat)
        labs.append(labels[p.stem])
    data = np.stack(mats)
    return SimDataset(
        data=data,
        labels=np.asarray(labs, dtype=np.int64),
        splits=np.zeros(len(mats), dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, values, config=None):
    """CKP1: JSON config blob then named float32 LE tensors.

    `values` is a name -> ndarray map (ParamStore.copy_values())."""
    blob = json.dumps(config or {}).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(values)))
        for name, arr in values.items():
            arr32 = np.asarray(arr, dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr32.ndim))
            f.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
            f.write(arr32.tobytes())


def load_checkpoint(path):
    """Returns (values dict, config dict)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic, not a CKP1 checkpoint")
        (blen,) = struct.unpack("<I", _read_exact(f, 4))
        config = json.loads(_read_exact(f, blen).decode())
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        values = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode()
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            size = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(_read_exact(f, size * 4), dtype="<f4")
            values[name] = arr.reshape(dims).astype(np.float64)
    return values, config


def load_checkpoint_into(path, store):
    """Load a checkpoint into an existing ParamStore; the first offending
    tensor is named on any mismatch."""
    values, config = load_checkpoint(path)
    for name in store.names():
        if name not in values:
            raise FormatError(f"checkpoint missing tensor {name}")
        have = store[name].data.shape
        got = values[name].shape
        if have != got:
            raise FormatError(f"shape mismatch at {name}: expected {have}, got {got}")
    store.load_values(values)
    return config


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    """Hyperparameter defaults for both experiment families."""
    train_batch_sim: int = 16
    train_batch_real: int = 32      # effective batch is min(32, n_subjects)
    val_batch: int = 200
    lr: float = 3e-4
    scheduler_sim: bool = False
    scheduler_real: bool = True
    max_epochs_sim: int = 500
    max_epochs_real: int = 3000
    # simulation spec
    n_nodes: int = 10
    n_pretrain_series: int = 50
    pretrain_T: int = 20000
    n_graphs: int = 400
    series_per_graph: int = 5
    downstream_T: int = 4000
    noise_std: float = 1.0
    spectral_target: float = 0.995
    density: float = 1.0
    master_seed: int = 0
    # grid
    n_train: tuple = (8, 16, 32, 64, 128)
    trials: int = 10
    gain: float = 0.5
    overlap: float = 0.0

    @classmethod
    def load(cls, path):
        raw = json.loads(Path(path).read_text())
        cfg = cls()
        for key, value in raw.items():
            if not hasattr(cfg, key):
                raise FormatError(f"unknown config key {key!r}")
            setattr(cfg, key, tuple(value) if isinstance(value, list) else value)
        return cfg

    def dump(self):
        return json.dumps(asdict(self), indent=2, default=list)
