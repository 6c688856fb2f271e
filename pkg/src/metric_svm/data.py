"""Datasets: parsing, standardization, stratified folds and the benchmark fetcher."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import tempfile
import time
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CACHE_ENV = "METRIC_SVM_CACHE"
REGISTRY_ENV = "METRIC_SVM_REGISTRY"
COMMENT_PREFIXES = ("@", "#", "%")
CONSTANT_STD = 1e-12


class DataError(ValueError):
    """Unreadable or inconsistent data."""


class ChecksumError(DataError):
    pass


class FetchError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    feature_names: tuple | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=int).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError(f"features must be a matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[0] < 2:
            raise DataError("a dataset needs at least two instances")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("labels must be +1 or -1")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match the feature count")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def require_both_classes(self):
        if not ((self.labels > 0).any() and (self.labels < 0).any()):
            raise DataError(f"{self.name}: both classes must be present")


def _label_map(raw: list[str]) -> dict:
    distinct = sorted(set(raw))
    if len(distinct) > 2:
        shown = ", ".join(distinct[:5])
        raise DataError(f"more than two classes ({len(distinct)} distinct labels: {shown})")
    if len(distinct) < 2:
        raise DataError(f"need two distinct labels, found only {distinct}")
    try:
        ordered = sorted(distinct, key=lambda t: float(t.replace("\u2212", "-")))
    except ValueError:
        ordered = distinct
    return {ordered[0]: -1, ordered[1]: 1}


def _to_dataset(rows_x, raw_labels, name, feature_names, extra_meta=None) -> Dataset:
    mapping = _label_map(raw_labels)
    y = np.array([mapping[r] for r in raw_labels], dtype=int)
    meta = {"label_map": mapping}
    if extra_meta:
        meta.update(extra_meta)
    return Dataset(np.asarray(rows_x, dtype=float), y, name, feature_names, meta)


def parse_csv(text: str, label_col: int = -1, header: bool | None = None, drop_cols=(),
              name: str = "dataset", missing: str = "error") -> Dataset:
    """Parse comma-separated text; lines starting with ``@ # %`` are skipped.

    ``header=None`` detects a header row: the first row is a header when any
    of its feature cells fails to parse as a number.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith(COMMENT_PREFIXES)]
    if not lines:
        raise DataError("no data rows")
    rows = [[c.strip() for c in ln.split(",")] for ln in lines]
    width = len(rows[0])
    if width < 2:
        raise DataError("need at least one feature column and a label column")
    lab = label_col % width
    drop = {c % width for c in drop_cols} | {lab}
    keep = [c for c in range(width) if c not in drop]

    def numeric(row):
        try:
            [float(row[c]) for c in keep]
            return True
        except ValueError:
            return False

    feature_names = None
    if header is None:
        header = not numeric(rows[0])
    if header:
        feature_names = tuple(rows[0][c] for c in keep)
        rows = rows[1:]
    X, raw, dropped = [], [], 0
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if len(row) != width:
            raise DataError(f"ragged row {lineno}: {len(row)} fields, expected {width}")
        if missing == "drop_rows" and any(row[c] in ("?", "") for c in keep):
            dropped += 1
            continue
        try:
            X.append([float(row[c]) for c in keep])
        except ValueError:
            bad = next(row[c] for c in keep if not _is_float(row[c]))
            raise DataError(f"non-numeric feature {bad!r} on row {lineno}") from None
        raw.append(row[lab])
    meta = {"dropped_rows": dropped} if dropped else None
    return _to_dataset(X, raw, name, feature_names, meta)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def parse_sparse(text: str, name: str = "dataset", n_features: int | None = None) -> Dataset:
    """Parse ``label idx:val idx:val ...`` lines with 1-based indices."""
    entries, raw = [], []
    dim = 0
    for lineno, ln in enumerate(text.splitlines(), start=1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        tok = ln.split()
        row = {}
        for t in tok[1:]:
            idx, sep, val = t.partition(":")
            try:
                i = int(idx)
                v = float(val)
            except ValueError:
                raise DataError(f"bad sparse entry {t!r} on line {lineno}") from None
            if not sep or i < 1:
                raise DataError(f"bad sparse entry {t!r} on line {lineno}")
            row[i - 1] = v
            dim = max(dim, i)
        raw.append(tok[0])
        entries.append(row)
    if not entries:
        raise DataError("no data rows")
    if n_features is not None:
        if dim > n_features:
            raise DataError(f"feature index {dim} exceeds n_features={n_features}")
        dim = n_features
    X = np.zeros((len(entries), dim))
    for r, row in enumerate(entries):
        for i, v in row.items():
            X[r, i] = v
    return _to_dataset(X, raw, name, None)


SPARSE_SUFFIXES = (".svm", ".libsvm", ".sparse", ".svmlight")


def load_dataset(path, format: str | None = None, label_col: int = -1, header: bool | None = None,
                 drop_cols=(), name: str | None = None, missing: str = "error") -> Dataset:
    """Read a dataset file.

    ``format`` is ``"csv"`` or ``"sparse"``; ``None`` picks sparse for the
    usual svmlight suffixes and csv otherwise. Raw labels are mapped to
    +1/-1 with the larger raw label (numerically when possible) as +1; the
    mapping is kept in ``metadata["label_map"]``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if format is None:
        format = "sparse" if path.suffix.lower() in SPARSE_SUFFIXES else "csv"
    name = name or path.stem
    if format == "csv":
        return parse_csv(text, label_col, header, drop_cols, name, missing)
    if format in ("sparse", "sparse-index-value", "libsvm"):
        return parse_sparse(text, name)
    raise DataError(f"unknown format {format!r}")


def save_csv(data: Dataset, path) -> None:
    """Write features and +1/-1 labels (label last) as CSV."""
    buf = io.StringIO()
    if data.feature_names:
        buf.write(",".join(data.feature_names) + ",label\n")
    for x, y in zip(data.features, data.labels):
        buf.write(",".join(repr(float(v)) for v in x) + f",{int(y):+d}\n")
    Path(path).write_text(buf.getvalue())


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise DataError(f"standardizer expects {self.d} features, got {X.shape[1]}")
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "constant": self.constant.astype(bool).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float),
                   np.asarray(d.get("constant", [False] * len(d["mean"])), bool))


def fit_standardizer(train: Dataset) -> Standardizer:
    """Per-feature mean and population standard deviation."""
    X = train.features
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std < CONSTANT_STD
    std = np.where(constant, 1.0, std)
    return Standardizer(mean, std, constant)


def apply_standardizer(s: Standardizer, data: Dataset) -> Dataset:
    return replace(data, features=s.transform(data.features))


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def splits(self):
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)


def make_folds(data, k: int, seed: int) -> FoldAssignment:
    """Seeded stratified k-fold assignment.

    Each class is shuffled and dealt round-robin into the folds, continuing
    where the previous class stopped, so fold sizes differ by at most one and
    every fold holds floor or ceil of its share of each class.
    """
    labels = np.asarray(getattr(data, "labels", data)).ravel()
    n = labels.size
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    if k > n:
        raise DataError(f"cannot make {k} folds from {n} instances")
    classes = np.unique(labels)
    for c in classes:
        count = int((labels == c).sum())
        if count < k / 2:
            raise DataError(f"class {c} has {count} members, too few to stratify {k} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    offset = 0
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        assignment[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    assignment.setflags(write=False)
    return FoldAssignment(k, assignment, seed)


# --- fetching -------------------------------------------------------------

def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "metric_svm"


def load_registry(extra=None) -> dict:
    """Bundled registry, updated with entries from ``$METRIC_SVM_REGISTRY`` and ``extra``.

    ``extra`` may be a mapping or a path to a JSON file of the same shape:
    ``{name: {url, checksum, format, label_col, ...}}``.
    """
    reg = json.loads(resources.files("metric_svm").joinpath("registry.json").read_text())
    reg.pop("_comment", None)
    sources = [os.environ.get(REGISTRY_ENV), extra]
    for src in sources:
        if not src:
            continue
        if isinstance(src, dict):
            reg.update(src)
        else:
            try:
                reg.update(json.loads(Path(src).read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read registry {src}: {exc}") from None
    return reg


def _sha256(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".part-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _download(url: str, retries: int, timeout: float, target: Path) -> bytes:
    last = None
    for attempt in range(retries):
        try:
            req = urllib.request.Request(url, headers={"User-Agent": "metric-svm"})
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, OSError) as exc:
            last = exc
            log.warning("download of %s failed (attempt %d/%d): %s", url, attempt + 1, retries, exc)
            if attempt + 1 < retries:
                time.sleep(min(2.0 ** attempt, 10.0))
    raise FetchError(
        f"could not download {url} after {retries} attempts ({last}). "
        f"Place a copy at {target} or set ${CACHE_ENV} to a directory that has it.")


def _strip_prefix(checksum: str | None) -> str | None:
    if checksum is None:
        return None
    return checksum.split(":", 1)[1] if ":" in checksum else checksum


def _parse_entry(payload: bytes, name: str, entry: dict) -> Dataset:
    text = payload.decode("utf-8", errors="replace")
    fmt = entry.get("format", "csv")
    if fmt == "csv":
        data = parse_csv(text, entry.get("label_col", -1), entry.get("header"),
                         entry.get("drop_cols", ()), name, entry.get("missing", "error"))
    else:
        data = parse_sparse(text, name)
    data.metadata["source"] = entry.get("url")
    return data


def fetch_dataset(name: str, cache_dir=None, registry=None, retries: int = 3,
                  timeout: float = 60.0) -> Dataset:
    """Return a registry dataset, downloading and verifying it on first use.

    The verified payload is cached under ``cache_dir`` (default
    ``$METRIC_SVM_CACHE`` or ``~/.cache/metric_svm``); later calls parse the
    cached copy without touching the network. Entries may point at a zip
    archive through ``archive_member``; the archive is cached too so sibling
    datasets share one download.
    """
    reg = load_registry(registry)
    if name not in reg:
        raise DataError(f"unknown dataset {name!r}; supported: {', '.join(sorted(reg))}")
    entry = reg[name]
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    target = cache / f"{name}.data"
    want = _strip_prefix(entry.get("checksum"))

    if target.exists():
        payload = target.read_bytes()
        if want is None or _sha256(payload) == want:
            return _parse_entry(payload, name, entry)
        log.warning("cached %s fails its checksum; downloading again", target)

    member = entry.get("archive_member")
    if member:
        archive_path = cache / "_downloads" / Path(entry["url"].split("?")[0]).name
        archive = archive_path.read_bytes() if archive_path.exists() else None
        archive_sum = _strip_prefix(entry.get("archive_checksum"))
        if archive is None or (archive_sum and _sha256(archive) != archive_sum):
            archive = _download(entry["url"], retries, timeout, target)
            if archive_sum and _sha256(archive) != archive_sum:
                raise ChecksumError(f"{name}: archive checksum mismatch for {entry['url']}")
            _atomic_write(archive_path, archive)
        try:
            payload = zipfile.ZipFile(io.BytesIO(archive)).read(member)
        except (zipfile.BadZipFile, KeyError) as exc:
            raise FetchError(f"{name}: cannot extract {member}: {exc}") from None
    else:
        payload = _download(entry["url"], retries, timeout, target)

    got = _sha256(payload)
    if want is None:
        log.warning("%s has no recorded checksum; trusting first download (sha256 %s)", name, got)
    elif got != want:
        raise ChecksumError(f"{name}: checksum mismatch (expected {want}, got {got})")
    _atomic_write(target, payload)
    return _parse_entry(payload, name, entry)
