"""Bit-exact reading/writing of TCK streamline files, JSON manifests, and shape CSVs.

TCK layout: a text header whose first line begins with ``mrtrix tracks``,
``key: value`` lines (must include ``datatype: Float32LE`` and
``file: . <byte-offset>``), a terminating ``END`` line, then a binary payload
of little-endian float32 triplets at the byte offset. A NaN triplet separates
streamlines; a +Inf triplet terminates the stream. All binary I/O is
explicitly little-endian regardless of host.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyFile,
    IoFailure,
    MissingMagic,
    SchemaError,
    TruncatedPayload,
    UnsupportedDatatype,
)
from .geometry import MEASURE_NAMES, FiberCluster, ShapeVector

log = logging.getLogger(__name__)

TCK_MAGIC = "mrtrix tracks"


def read_tck(path, cluster_id: str | None = None, subject_id: str = "") -> FiberCluster:
    """Parse a TCK file into a FiberCluster.

    Raises MissingMagic, UnsupportedDatatype, TruncatedPayload, or EmptyFile
    on the corresponding malformed inputs; IoFailure on OS-level errors.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e

    first_line = raw.split(b"\n", 1)[0].decode("ascii", errors="replace")
    if not first_line.startswith(TCK_MAGIC):
        raise MissingMagic(f"{path}: first line must begin with {TCK_MAGIC!r}")
    header_end = raw.find(b"\nEND\n")
    if header_end < 0:
        header_end = raw.find(b"\nEND")
    if header_end < 0:
        raise TruncatedPayload(f"{path}: no TCK header terminator found")
    header_text = raw[:header_end].decode("ascii", errors="replace")
    lines = header_text.split("\n")

    fields = {}
    for line in lines[1:]:
        if ":" in line:
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()

    datatype = fields.get("datatype", "")
    if datatype != "Float32LE":
        raise UnsupportedDatatype(f"{path}: datatype {datatype!r} (need Float32LE)")

    file_field = fields.get("file", "")
    try:
        offset = int(file_field.split()[-1])
    except (ValueError, IndexError) as e:
        raise SchemaError(f"{path}: malformed 'file' header field {file_field!r}") from e

    payload = np.frombuffer(raw, dtype="<f4", count=(len(raw) - offset) // 4, offset=offset)
    triplets = payload[: (payload.size // 3) * 3].reshape(-1, 3)

    streamlines = []
    current: list[np.ndarray] = []
    terminated = False
    n_used = 0
    for i in range(triplets.shape[0]):
        t = triplets[i]
        n_used = i + 1
        if np.all(np.isinf(t) & (t > 0)):
            terminated = True
            break
        if np.all(np.isnan(t)):
            if current:
                streamlines.append(np.array(current, dtype=np.float64))
                current = []
            continue
        current.append(t.astype(np.float64))
    if not terminated:
        raise TruncatedPayload(f"{path}: EOF before Inf terminator")
    if current:
        streamlines.append(np.array(current, dtype=np.float64))
    if not streamlines:
        raise EmptyFile(f"{path}: zero streamlines")

    trailing = len(raw) - offset - n_used * 12
    if trailing > 0:
        log.warning("%s: %d trailing bytes after Inf terminator ignored", path, trailing)

    if cluster_id is None:
        cluster_id = os.path.splitext(os.path.basename(str(path)))[0]
    return FiberCluster(id=cluster_id, subject_id=subject_id, streamlines=streamlines)


def write_tck(cluster: FiberCluster, path) -> None:
    """Write a FiberCluster as a TCK file readable bit-exactly by read_tck.

    Coordinates are quantized once to float32; read_tck(write_tck(c))
    reproduces that quantization exactly.
    """
    body_parts = []
    for s in cluster.streamlines:
        body_parts.append(s.astype("<f4"))
        body_parts.append(np.full((1, 3), np.nan, dtype="<f4"))
    body_parts[-1] = np.full((1, 3), np.inf, dtype="<f4")  # replace final NaN separator
    body = np.vstack(body_parts).tobytes()

    def make_header(offset: int) -> bytes:
        return (
            f"{TCK_MAGIC}\n"
            f"datatype: Float32LE\n"
            f"count: {cluster.n_streamlines}\n"
            f"file: . {offset}\n"
            f"END\n"
        ).encode("ascii")

    # Header length depends on the offset digits; iterate until stable.
    offset = 0
    for _ in range(8):
        header = make_header(offset)
        if len(header) == offset:
            break
        offset = len(header)
    else:
        raise IoFailure(f"{path}: header offset did not stabilize")

    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(body)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --- dataset manifest ---------------------------------------------------------


@dataclass
class ClusterEntry:
    cluster_id: str
    file_path: str
    ground_truth: ShapeVector | None = None


@dataclass
class SubjectEntry:
    subject_id: str
    clusters: list = field(default_factory=list)
    score: float | None = None


@dataclass
class DatasetManifest:
    subjects: list = field(default_factory=list)
    root: str = "."

    def cluster_path(self, entry: ClusterEntry) -> str:
        return os.path.join(self.root, entry.file_path)

    def iter_clusters(self):
        for subj in self.subjects:
            for cl in subj.clusters:
                yield subj, cl

    @property
    def n_clusters(self) -> int:
        return sum(len(s.clusters) for s in self.subjects)


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a JSON dataset manifest."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e

    if not isinstance(doc, dict) or "subjects" not in doc:
        raise SchemaError(f"{path}: top level must be an object with 'subjects'")

    root = os.path.dirname(os.path.abspath(str(path)))
    manifest = DatasetManifest(root=root)
    seen_subjects = set()
    for si, subj in enumerate(doc["subjects"]):
        sid = subj.get("subject_id")
        if not sid:
            raise SchemaError(f"{path}: subjects[{si}] missing subject_id")
        if sid in seen_subjects:
            raise SchemaError(f"{path}: duplicate subject_id {sid!r}")
        seen_subjects.add(sid)
        entry = SubjectEntry(subject_id=sid, score=subj.get("score"))
        seen_clusters = set()
        for ci, cl in enumerate(subj.get("clusters", [])):
            cid = cl.get("cluster_id")
            fp = cl.get("file_path")
            if not cid or not fp:
                raise SchemaError(
                    f"{path}: subjects[{si}].clusters[{ci}] missing cluster_id/file_path"
                )
            if cid in seen_clusters:
                raise SchemaError(f"{path}: duplicate cluster_id {cid!r} in subject {sid!r}")
            seen_clusters.add(cid)
            gt = None
            if cl.get("ground_truth") is not None:
                g = cl["ground_truth"]
                try:
                    gt = ShapeVector(**{k: float(g[k]) for k in MEASURE_NAMES})
                except (KeyError, TypeError, ValueError) as e:
                    raise SchemaError(
                        f"{path}: bad ground_truth for {sid}/{cid}: {e}"
                    ) from e
            full = os.path.join(root, fp)
            if check_files and not os.path.exists(full):
                raise SchemaError(f"{path}: referenced file missing: {fp}")
            entry.clusters.append(ClusterEntry(cluster_id=cid, file_path=fp, ground_truth=gt))
        manifest.subjects.append(entry)
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest deterministically (stable key order, stable floats)."""
    doc = {"subjects": []}
    for subj in manifest.subjects:
        s = {"subject_id": subj.subject_id}
        if subj.score is not None:
            s["score"] = subj.score
        s["clusters"] = []
        for cl in subj.clusters:
            c = {"cluster_id": cl.cluster_id, "file_path": cl.file_path}
            if cl.ground_truth is not None:
                c["ground_truth"] = {
                    k: getattr(cl.ground_truth, k) for k in MEASURE_NAMES
                }
            s["clusters"].append(c)
        doc["subjects"].append(s)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --- shape CSV ----------------------------------------------------------------

SHAPE_CSV_HEADER = ["subject_id", "cluster_id", *MEASURE_NAMES]


def write_shape_csv(rows, path) -> None:
    """Write (subject_id, cluster_id, ShapeVector) rows; 6 significant digits."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(SHAPE_CSV_HEADER)
            for subject_id, cluster_id, sv in rows:
                w.writerow(
                    [subject_id, cluster_id]
                    + [f"{v:.6g}" for v in sv.as_array()]
                )
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_shape_csv(path) -> dict:
    """Read a shape CSV into {(subject_id, cluster_id): ShapeVector}."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            r = csv.reader(f)
            header = next(r, None)
            if header != SHAPE_CSV_HEADER:
                raise SchemaError(f"{path}: bad header {header!r}")
            for ln, row in enumerate(r, start=2):
                if len(row) != len(SHAPE_CSV_HEADER):
                    raise SchemaError(f"{path}: line {ln}: expected {len(SHAPE_CSV_HEADER)} fields")
                try:
                    sv = ShapeVector(*(float(v) for v in row[2:]))
                except ValueError as e:
                    raise SchemaError(f"{path}: line {ln}: {e}") from e
                key = (row[0], row[1])
                if key in out:
                    raise SchemaError(f"{path}: line {ln}: duplicate row for {key}")
                out[key] = sv
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return out
