"""EEG ingestion, normalization, cropping, splits and mini-batching.

Supported layouts
-----------------
Bonn: one plain-text file per segment holding 4097 integer samples, one per
line.  The five sets live in sub-directories named after either the set
letter (``A``..``E``) or the archive letter (``Z``, ``O``, ``N``, ``F``,
``S``), case-insensitively.  Files sitting directly in ``root`` are grouped by
their first letter.  A ``manifest.json`` in ``root`` of the form
``{"A": ["rel/path", ...], ...}`` overrides discovery.

Bern-Barcelona: one text file per segment holding 10240 lines ``v1,v2``.
Focal files either sit below a directory whose name starts with ``focal`` or
carry ``_F_`` in their name (``Data_F_Ind0001.txt``); non-focal files use
``nonfocal`` / ``non_focal`` / ``non-focal`` directories or ``_N_``.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DatasetError
from .tensor import Rng, Tensor

BONN_LENGTH = 4097
BONN_FS = 173.61
BERN_LENGTH = 10240
BERN_FS = 512.0

BONN_SETS = ("A", "B", "C", "D", "E")
BONN_ALIASES = {"A": "Z", "B": "O", "C": "N", "D": "F", "E": "S"}
BONN_LABELS = {"A": 0, "B": 0, "C": 1, "D": 1, "E": 2}
BERN_LABELS = {"nonfocal": 0, "focal": 1}

SOURCES = tuple(f"bonn_{s}" for s in BONN_SETS) + ("bern_focal", "bern_nonfocal", "synthetic")


@dataclass
class EegSegment:
    samples: Tensor  # L x ch
    label: int
    source: str
    segment_id: str

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError(f"segment samples must be L x ch, got {self.samples.shape}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def length(self):
        return self.samples.shape[0]

    @property
    def channels(self):
        return self.samples.shape[1]


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    dataset: str = ""

    def parts(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    def digest(self):
        h = hashlib.sha256()
        for part, segs in self.parts().items():
            h.update(part.encode())
            for s in segs:
                h.update(b"\0" + s.segment_id.encode())
        return h.hexdigest()


@dataclass
class Batch:
    x: Tensor        # b x crop x ch
    y: np.ndarray    # int labels
    ids: list = field(default_factory=list)


# --------------------------------------------------------------------------
# text parsing
# --------------------------------------------------------------------------

def _parse_columns(path: Path, n_cols: int, integer: bool) -> np.ndarray:
    """Parse a whitespace/comma separated numeric text file, reporting the first bad line."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read file: {exc}", path) from None
    rows = []
    lineno = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        fields = [f for f in re.split(r"[,\s]+", stripped) if f]
        if len(fields) != n_cols:
            raise DatasetError(f"expected {n_cols} value(s), found {len(fields)}", path, lineno)
        try:
            vals = [int(f) if integer else float(f) for f in fields]
        except ValueError:
            raise DatasetError(f"non-numeric value in {stripped!r}", path, lineno) from None
        rows.append(vals)
    return np.asarray(rows, dtype=np.float64).reshape(-1, n_cols)


def _fast_parse(path: Path, n_cols: int, integer: bool) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter="," if n_cols > 1 else None, dtype=np.float64, ndmin=2)
        if arr.shape[1] == n_cols and (not integer or np.all(arr == np.round(arr))):
            return arr
    except (ValueError, OSError):
        pass
    return _parse_columns(path, n_cols, integer)


# --------------------------------------------------------------------------
# Bonn
# --------------------------------------------------------------------------

def _bonn_files(root: Path) -> dict:
    manifest = root / "manifest.json"
    if manifest.is_file():
        listing = json.loads(manifest.read_text())
        return {s: [root / p for p in listing.get(s, [])] for s in BONN_SETS}

    found = {s: [] for s in BONN_SETS}
    lookup = {}
    for s in BONN_SETS:
        lookup[s.lower()] = s
        lookup[BONN_ALIASES[s].lower()] = s
    for child in sorted(root.iterdir()):
        if child.is_dir():
            key = child.name.lower()
            if key in lookup:
                found[lookup[key]].extend(sorted(p for p in child.iterdir() if p.is_file() and not p.name.startswith(".")))
        elif child.is_file() and child.suffix.lower() == ".txt":
            key = child.name[0].lower()
            if key in lookup:
                found[lookup[key]].append(child)
    return found


def load_bonn(root_dir, expected_length: int = BONN_LENGTH) -> list:
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError("Bonn dataset not found", root)
    files = _bonn_files(root)
    if not any(files.values()):
        raise DatasetError("Bonn dataset not found: no set directories or segment files", root)
    missing = [s for s in BONN_SETS if not files[s]]
    if missing:
        raise DatasetError(f"Bonn dataset is missing set(s) {', '.join(missing)}", root)

    segments = []
    for s in BONN_SETS:
        for path in files[s]:
            samples = _fast_parse(path, 1, integer=True)
            if samples.shape[0] != expected_length:
                raise DatasetError(f"expected {expected_length} samples, found {samples.shape[0]}", path)
            segments.append(EegSegment(samples, BONN_LABELS[s], f"bonn_{s}", f"{s}/{path.stem}"))
    return segments


# --------------------------------------------------------------------------
# Bern-Barcelona
# --------------------------------------------------------------------------

_NONFOCAL_DIR = re.compile(r"^non[-_ ]?focal", re.I)
_FOCAL_DIR = re.compile(r"^focal", re.I)


def _bern_class(path: Path, root: Path) -> Optional[str]:
    for part in path.relative_to(root).parts[:-1]:
        if _NONFOCAL_DIR.match(part):
            return "nonfocal"
        if _FOCAL_DIR.match(part):
            return "focal"
    name = path.name
    if "_N_" in name or name.upper().startswith("N"):
        return "nonfocal"
    if "_F_" in name or name.upper().startswith("F"):
        return "focal"
    return None


def load_bern(root_dir, expected_length: int = BERN_LENGTH) -> list:
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError("Bern-Barcelona dataset not found", root)
    segments = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() != ".txt":
            continue
        cls = _bern_class(path, root)
        if cls is None:
            continue
        samples = _fast_parse(path, 2, integer=False)
        if samples.shape[0] != expected_length:
            raise DatasetError(f"expected {expected_length} rows, found {samples.shape[0]}", path)
        segments.append(EegSegment(samples, BERN_LABELS[cls], f"bern_{cls}", f"{cls}/{path.stem}"))
    if not segments:
        raise DatasetError("Bern-Barcelona dataset not found: no focal/non-focal files", root)
    return segments


def write_bonn_file(samples, path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(samples).ravel()))


def write_bern_file(samples, path) -> None:
    Path(path).write_text("".join(f"{float(a)!r},{float(b)!r}\n" for a, b in np.asarray(samples, dtype=float)))


# --------------------------------------------------------------------------
# windowing
# --------------------------------------------------------------------------

def zscore(window: Tensor, sigma_floor: float = 1e-12) -> Tensor:
    """Per-channel (x - mean) / population std; channels with std < floor become zeros."""
    if window.shape[0] < 2:
        raise ValueError("z-score needs at least two samples")
    mean = window.mean(axis=0)
    centered = window - mean
    # second pass removes the rounding residue of a large offset
    centered -= centered.mean(axis=0)
    sigma = np.sqrt((centered * centered).mean(axis=0))
    degenerate = sigma < sigma_floor
    out = centered / np.where(degenerate, 1.0, sigma)
    out[:, degenerate] = 0.0
    return out


def crop_offsets(length: int, crop_len: int) -> int:
    """Number of distinct crop positions."""
    return length - crop_len + 1


def _check_crop(seg, crop_len):
    if crop_len < 1 or crop_len > seg.length:
        raise ValueError(f"crop length {crop_len} does not fit segment {seg.segment_id} of length {seg.length}")


def random_crop(seg: EegSegment, crop_len: int, rng: Rng, return_offset: bool = False):
    _check_crop(seg, crop_len)
    offset = int(rng.integers(0, seg.length - crop_len + 1))
    window = seg.samples[offset:offset + crop_len]
    return (window, offset) if return_offset else window


def center_crop(seg, crop_len: int) -> Tensor:
    """Accepts an ``EegSegment`` or a bare L x ch array."""
    samples = seg.samples if isinstance(seg, EegSegment) else seg
    if crop_len < 1 or crop_len > samples.shape[0]:
        raise ValueError(f"crop length {crop_len} exceeds length {samples.shape[0]}")
    start = (samples.shape[0] - crop_len) // 2
    return samples[start:start + crop_len]


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def _take(group, order, a, b):
    return [group[i] for i in order[a:b]]


def split_bonn(segments, seed: int) -> DatasetSplit:
    """60/20/20 of every set A..E, shuffled with ``seed``."""
    if len(segments) != 500:
        raise ValueError(f"Bonn split expects 500 segments, got {len(segments)}")
    return stratified_split(segments, seed, key=lambda s: s.source, fractions=(0.6, 0.2), dataset="bonn")


def stratified_split(segments, seed, key, fractions=(0.6, 0.2), dataset=""):
    """Per-group train/test/val split; the remainder after train and test goes to val."""
    rng = Rng(seed)
    groups = {}
    for s in segments:
        groups.setdefault(key(s), []).append(s)
    train, val, test = [], [], []
    for name in sorted(groups):
        group = sorted(groups[name], key=lambda s: s.segment_id)
        order = rng.permutation(len(group))
        n_train = round(fractions[0] * len(group))
        n_test = round(fractions[1] * len(group))
        train += _take(group, order, 0, n_train)
        test += _take(group, order, n_train, n_train + n_test)
        val += _take(group, order, n_train + n_test, len(group))
    return DatasetSplit(train, val, test, seed, dataset)


def split_bern(segments, seed: int, n_test_pairs: int = 500, n_val_pairs: int = 250) -> DatasetSplit:
    """Class-paired split: per class ``n_test_pairs`` test, ``n_val_pairs`` val, rest train."""
    by_class = {0: [], 1: []}
    for s in segments:
        by_class[s.label].append(s)
    if len(by_class[0]) != len(by_class[1]):
        raise ValueError(f"Bern split needs equal class counts, got {len(by_class[0])} / {len(by_class[1])}")
    n = len(by_class[0])
    if n != 3750:
        raise ValueError(f"Bern split expects 3750 segments per class, got {n}")
    rng = Rng(seed)
    train, val, test = [], [], []
    for label in (0, 1):
        group = sorted(by_class[label], key=lambda s: s.segment_id)
        order = rng.permutation(n)
        test += _take(group, order, 0, n_test_pairs)
        val += _take(group, order, n_test_pairs, n_test_pairs + n_val_pairs)
        train += _take(group, order, n_test_pairs + n_val_pairs, n)
    return DatasetSplit(train, val, test, seed, "bern")


def export_manifest(split: DatasetSplit, path, extra: Optional[dict] = None) -> None:
    doc = {
        "dataset": split.dataset,
        "seed": split.seed,
        "digest": split.digest(),
        **{part: [s.segment_id for s in segs] for part, segs in split.parts().items()},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unreadable split manifest: {exc}", path) from None


def split_from_manifest(segments, manifest: dict) -> DatasetSplit:
    index = {s.segment_id: s for s in segments}
    parts = {}
    for part in ("train", "val", "test"):
        ids = manifest.get(part, [])
        unknown = [i for i in ids if i not in index]
        if unknown:
            raise DatasetError(f"manifest {part} part names {len(unknown)} unknown segment(s), e.g. {unknown[0]!r}")
        parts[part] = [index[i] for i in ids]
    split = DatasetSplit(parts["train"], parts["val"], parts["test"], manifest.get("seed", 0), manifest.get("dataset", ""))
    if "digest" in manifest and manifest["digest"] != split.digest():
        raise DatasetError("split manifest digest does not match its segment lists")
    return split


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------

def make_batches(part, crop_len: int, batch_size: int, mode: str, rng: Optional[Rng] = None) -> Iterator[Batch]:
    """Yield z-scored mini-batches.

    Train mode shuffles and draws a fresh random crop per segment; eval mode
    keeps the given order and uses the centre crop.  The last batch may be
    short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if not part:
        raise ValueError("cannot batch an empty split part")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode batching needs an Rng")
        order = rng.permutation(len(part))
    else:
        order = np.arange(len(part))
    for start in range(0, len(order), batch_size):
        segs = [part[i] for i in order[start:start + batch_size]]
        if mode == "train":
            windows = [zscore(random_crop(s, crop_len, rng)) for s in segs]
        else:
            windows = [zscore(center_crop(s, crop_len)) for s in segs]
        yield Batch(np.stack(windows), np.array([s.label for s in segs], dtype=np.int64), [s.segment_id for s in segs])


# --------------------------------------------------------------------------
# synthetic desk-scale task
# --------------------------------------------------------------------------

SYNTH_FS = BONN_FS
SYNTH_BANDS = ((4.0, 6.0), (23.0, 27.0))


def synthetic_segment(label: int, length: int, rng: Rng, fs: float = SYNTH_FS, noise: float = 1.0) -> np.ndarray:
    """One L x 1 signal: 5 Hz-band tone (0), 25 Hz-band tone (1) or loud white noise (2)."""
    t = np.arange(length) / fs
    if label in (0, 1):
        lo, hi = SYNTH_BANDS[label]
        freq = lo + (hi - lo) * rng.random()
        phase = 2 * np.pi * rng.random()
        amp = 1.0 + 0.5 * rng.random()
        x = amp * np.sin(2 * np.pi * freq * t + phase) + noise * rng.normal(0.0, 1.0, length)
    elif label == 2:
        x = 5.0 * noise * rng.normal(0.0, 1.0, length)
    else:
        raise ValueError(f"synthetic labels are 0, 1, 2; got {label}")
    return x[:, None]


def make_synthetic(seed: int, length: int = 512, n_train: int = 300, n_val: int = 100, n_test: int = 100) -> DatasetSplit:
    """Three-class stand-in for the Bonn task, balanced by cycling labels."""
    rng = Rng(seed)
    parts = {}
    for part, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        segs = []
        for i in range(n):
            label = i % 3
            segs.append(EegSegment(synthetic_segment(label, length, rng), label, "synthetic", f"{part}/{i:04d}"))
        parts[part] = segs
    return DatasetSplit(parts["train"], parts["val"], parts["test"], seed, "synthetic")
