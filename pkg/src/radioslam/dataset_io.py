"""Dataset file formats, model persistence, and atomic writers.

Formats (all line-delimited text; lines starting with '#' are comments):

* odometry / ground truth / trajectories: CSV ``t,x,y,theta`` (seconds,
  meters, radians), one header row after the comments.
* fingerprints: one JSON object per line
  ``{"t": ..., "readings": [{"id": ..., "rss": ...}]}``; duplicate ids within
  one record are averaged at ingestion.
* scans: one JSON object per line ``{"t": ..., "ranges": [...]}`` where a
  missing echo is ``null``; beam geometry lives in the manifest.
* manifest.json: file paths plus ``rss_offset`` and LiDAR metadata.

All writers go through write-temp-then-rename, and every output embeds the
config/seed that produced it in a reproducibility header.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distance_model import DistanceModel
from .fingerprint import Fingerprint
from .geometry import Pose2D
from .mapping import OccupancyGrid
from .pipeline import Dataset, TimedPose
from .scan_matching import Scan
from .simulator import DatasetRecords, LidarSpec

__all__ = [
    "DatasetFormatError",
    "DatasetManifest",
    "atomic_write_text",
    "atomic_write_bytes",
    "build_dataset",
    "load_manifest",
    "load_dataset",
    "save_dataset",
    "save_model",
    "load_model",
    "save_trajectory",
    "load_trajectory",
    "save_report",
    "save_grid",
    "load_grid",
]

MANIFEST_NAME = "manifest.json"
MODEL_FORMAT = "radioslam-distance-model"
CSV_HEADER = "t,x,y,theta"


class DatasetFormatError(ValueError):
    """Malformed dataset content; the message carries file and line."""


@dataclass
class DatasetManifest:
    root: Path
    odometry: str
    fingerprints: str
    scans: str | None
    ground_truth: str | None
    rss_offset: float
    lidar: LidarSpec | None
    meta: dict

    def path(self, name: str) -> Path:
        return self.root / name


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _meta_comment(meta: dict | None) -> str:
    return "# meta " + json.dumps(meta or {}, sort_keys=True)


def _json_dumps(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# record-stream ingestion (shared by the simulator and the file loaders)


def _check_monotone(times: list[float], what: str, source: str) -> None:
    prev = -math.inf
    for k, t in enumerate(times):
        if t <= prev:
            raise DatasetFormatError(
                f"{source}: {what} timestamps must strictly increase "
                f"(record {k + 1} has t={t!r} after {prev!r})"
            )
        prev = t


def build_dataset(records: DatasetRecords, rss_offset: float = 100.0) -> Dataset:
    """Turn raw record streams into an in-memory dataset."""
    _check_monotone([r[0] for r in records.odometry], "odometry", "records")
    odometry = [(t, Pose2D(x, y, th)) for t, x, y, th in records.odometry]
    ground_truth = None
    if records.ground_truth:
        _check_monotone([r[0] for r in records.ground_truth], "ground truth", "records")
        ground_truth = [(t, Pose2D(x, y, th)) for t, x, y, th in records.ground_truth]
    _check_monotone([r[0] for r in records.fingerprints], "fingerprint", "records")
    fingerprints = [_fingerprint_from_pairs(t, pairs, "records", k + 1)
                    for k, (t, pairs) in enumerate(records.fingerprints)]
    scans = None
    if records.scans:
        _check_monotone([r[0] for r in records.scans], "scan", "records")
        lidar = records.lidar
        scans = [
            Scan.from_ranges(t, lidar.angle_min, lidar.angle_increment, ranges, lidar.max_range)
            for t, ranges in records.scans
        ]
    return Dataset(
        odometry=odometry,
        fingerprints=fingerprints,
        scans=scans,
        ground_truth=ground_truth,
        rss_offset=rss_offset,
    )


def _fingerprint_from_pairs(t: float, pairs, source: str, lineno: int) -> Fingerprint:
    if not pairs:
        raise DatasetFormatError(f"{source}:{lineno}: fingerprint has no readings")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for tx_id, rss in pairs:
        sums[tx_id] = sums.get(tx_id, 0.0) + float(rss)
        counts[tx_id] = counts.get(tx_id, 0) + 1
    readings = {tx_id: sums[tx_id] / counts[tx_id] for tx_id in sums}
    return Fingerprint(timestamp=t, readings=readings)


# ---------------------------------------------------------------------------
# loaders


def _iter_data_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def load_trajectory(path: str | Path) -> list[TimedPose]:
    """Read a ``t,x,y,theta`` CSV (odometry, ground truth, or SLAM output)."""
    path = Path(path)
    rows: list[TimedPose] = []
    prev_t = -math.inf
    for lineno, line in _iter_data_lines(path):
        if line == CSV_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DatasetFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, x, y, th = (float(v) for v in parts)
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        if t <= prev_t:
            raise DatasetFormatError(
                f"{path}:{lineno}: timestamps must strictly increase (t={t!r} after {prev_t!r})"
            )
        prev_t = t
        rows.append((t, Pose2D(x, y, th)))
    if not rows:
        raise DatasetFormatError(f"{path}: no trajectory records found")
    return rows


def _load_fingerprints(path: Path) -> list[Fingerprint]:
    out: list[Fingerprint] = []
    prev_t = -math.inf
    for lineno, line in _iter_data_lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or "t" not in obj or "readings" not in obj:
            raise DatasetFormatError(f"{path}:{lineno}: expected object with 't' and 'readings'")
        t = float(obj["t"])
        if t <= prev_t:
            raise DatasetFormatError(
                f"{path}:{lineno}: timestamps must strictly increase (t={t!r} after {prev_t!r})"
            )
        prev_t = t
        try:
            pairs = [(str(r["id"]), float(r["rss"])) for r in obj["readings"]]
        except (TypeError, KeyError, ValueError):
            raise DatasetFormatError(
                f"{path}:{lineno}: readings must be objects with 'id' and 'rss'"
            ) from None
        out.append(_fingerprint_from_pairs(t, pairs, str(path), lineno))
    return out


def _load_scans(path: Path, lidar: LidarSpec) -> list[Scan]:
    out: list[Scan] = []
    prev_t = -math.inf
    for lineno, line in _iter_data_lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or "t" not in obj or "ranges" not in obj:
            raise DatasetFormatError(f"{path}:{lineno}: expected object with 't' and 'ranges'")
        t = float(obj["t"])
        if t <= prev_t:
            raise DatasetFormatError(
                f"{path}:{lineno}: timestamps must strictly increase (t={t!r} after {prev_t!r})"
            )
        prev_t = t
        out.append(
            Scan.from_ranges(t, lidar.angle_min, lidar.angle_increment, obj["ranges"], lidar.max_range)
        )
    return out


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest; ``path`` may be the file or a directory containing it."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetFormatError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    for key in ("odometry", "fingerprints", "rss_offset"):
        if key not in data:
            raise DatasetFormatError(f"{path}: manifest missing required key {key!r}")
    lidar = LidarSpec(**data["lidar"]) if data.get("lidar") else None
    if data.get("scans") and lidar is None:
        raise DatasetFormatError(f"{path}: manifest lists scans but no lidar metadata")
    return DatasetManifest(
        root=path.parent,
        odometry=data["odometry"],
        fingerprints=data["fingerprints"],
        scans=data.get("scans"),
        ground_truth=data.get("ground_truth"),
        rss_offset=float(data["rss_offset"]),
        lidar=lidar,
        meta=data.get("meta", {}),
    )


def load_dataset(path: str | Path) -> Dataset:
    """Load the dataset a manifest points to, validating every stream."""
    manifest = load_manifest(path)
    for name in (manifest.odometry, manifest.fingerprints, manifest.scans, manifest.ground_truth):
        if name is not None and not manifest.path(name).exists():
            raise DatasetFormatError(f"dataset file missing: {manifest.path(name)}")
    odometry = load_trajectory(manifest.path(manifest.odometry))
    fingerprints = _load_fingerprints(manifest.path(manifest.fingerprints))
    scans = None
    if manifest.scans:
        scans = _load_scans(manifest.path(manifest.scans), manifest.lidar)
    ground_truth = None
    if manifest.ground_truth:
        ground_truth = load_trajectory(manifest.path(manifest.ground_truth))
    return Dataset(
        odometry=odometry,
        fingerprints=fingerprints,
        scans=scans,
        ground_truth=ground_truth,
        rss_offset=manifest.rss_offset,
    )


# ---------------------------------------------------------------------------
# writers


def _trajectory_text(rows: list[tuple[float, float, float, float]], meta: dict | None) -> str:
    lines = ["# radioslam trajectory v1", _meta_comment(meta), CSV_HEADER]
    for t, x, y, th in rows:
        lines.append(f"{float(t)!r},{float(x)!r},{float(y)!r},{float(th)!r}")
    return "\n".join(lines) + "\n"


def save_trajectory(path: str | Path, trajectory: list[TimedPose], meta: dict | None = None) -> None:
    rows = [(t, p.x, p.y, p.theta) for t, p in trajectory]
    atomic_write_text(path, _trajectory_text(rows, meta))


def save_dataset(out_dir: str | Path, records: DatasetRecords, rss_offset: float, meta: dict | None = None) -> Path:
    """Write a full dataset directory (manifest plus streams); returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(out / "odometry.csv", [(t, Pose2D(x, y, th)) for t, x, y, th in records.odometry], meta)
    manifest = {
        "odometry": "odometry.csv",
        "fingerprints": "fingerprints.jsonl",
        "rss_offset": rss_offset,
        "meta": meta or {},
    }
    if records.ground_truth:
        save_trajectory(
            out / "ground_truth.csv",
            [(t, Pose2D(x, y, th)) for t, x, y, th in records.ground_truth],
            meta,
        )
        manifest["ground_truth"] = "ground_truth.csv"

    fp_lines = [_meta_comment(meta)]
    for t, pairs in records.fingerprints:
        obj = {"t": t, "readings": [{"id": tx, "rss": rss} for tx, rss in pairs]}
        fp_lines.append(json.dumps(obj, sort_keys=True))
    atomic_write_text(out / "fingerprints.jsonl", "\n".join(fp_lines) + "\n")

    if records.scans:
        scan_lines = [_meta_comment(meta)]
        for t, ranges in records.scans:
            scan_lines.append(json.dumps({"t": t, "ranges": ranges}, sort_keys=True))
        atomic_write_text(out / "scans.jsonl", "\n".join(scan_lines) + "\n")
        manifest["scans"] = "scans.jsonl"
        manifest["lidar"] = {
            "max_range": records.lidar.max_range,
            "beam_count": records.lidar.beam_count,
            "range_noise_sigma": records.lidar.range_noise_sigma,
            "period": records.lidar.period,
            "angle_min": records.lidar.angle_min,
        }

    manifest_path = out / MANIFEST_NAME
    atomic_write_text(manifest_path, _json_dumps(manifest))
    return manifest_path


def save_model(path: str | Path, model: DistanceModel, meta: dict | None = None) -> None:
    data = {"format": MODEL_FORMAT, "version": 1, "meta": meta or {}}
    data.update(model.to_dict())
    atomic_write_text(path, _json_dumps(data))


def load_model(path: str | Path) -> DistanceModel:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    if data.get("format") != MODEL_FORMAT:
        raise DatasetFormatError(f"{path}: not a distance model file")
    return DistanceModel.from_dict(data)


def save_report(path: str | Path, report: dict) -> None:
    atomic_write_text(path, _json_dumps(report))


def save_grid(
    out_dir: str | Path,
    basename: str,
    grid: OccupancyGrid,
    pgm_bytes: bytes,
    metadata: dict,
    meta: dict | None = None,
) -> dict[str, Path]:
    """Write map artifacts: PGM image, raw log-odds array, JSON sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pgm_path = out / f"{basename}.pgm"
    npy_path = out / f"{basename}_grid.npy"
    sidecar_path = out / f"{basename}.json"
    atomic_write_bytes(pgm_path, pgm_bytes)

    import io

    buf = io.BytesIO()
    np.save(buf, grid.cells)
    atomic_write_bytes(npy_path, buf.getvalue())

    sidecar = dict(metadata)
    sidecar["image"] = pgm_path.name
    sidecar["log_odds"] = npy_path.name
    if meta:
        sidecar["meta"] = meta
    atomic_write_text(sidecar_path, _json_dumps(sidecar))
    return {"pgm": pgm_path, "npy": npy_path, "sidecar": sidecar_path}


def load_grid(sidecar_path: str | Path) -> OccupancyGrid:
    """Rebuild an occupancy grid from its JSON sidecar and log-odds array."""
    sidecar_path = Path(sidecar_path)
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    cells = np.load(sidecar_path.parent / data["log_odds"])
    origin = data["origin"]
    return OccupancyGrid(
        resolution=float(data["resolution"]),
        origin=Pose2D(float(origin["x"]), float(origin["y"]), float(origin["theta"])),
        width=int(data["width"]),
        height=int(data["height"]),
        cells=cells,
    )
