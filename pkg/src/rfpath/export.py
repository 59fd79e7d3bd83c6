"""Result serializers: CSV, JSONL, binary array, stats, heatmaps, metadata.

Every writer is a pure function of the result set, so repeated export yields
byte-identical files (the per-scene stats file is the one exception: it
records the measured wall time).

File formats are documented in the README; the binary array follows the NPY
v1.0 container exactly so any NumPy build, or 30 lines of any language, can
read it.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np

from .config import TraceConfig, config_to_dict
from .pipeline import ResultSet
from .scene import Scene, scene_id

CSV_COLUMNS = (
    "rx_index", "x_m", "y_m", "z_m", "path_rank", "path_type",
    "gain_db", "phase_rad", "toa_s",
    "aod_az_deg", "aod_el_deg", "aoa_az_deg", "aoa_el_deg",
    "n_interactions",
)

PATH_TYPE_CODES = {"los": 0, "reflection": 1, "diffraction": 2, "scattering": 3}

HEATMAP_FILES = {
    "gain_db": "channel_gain_heatmap.pgm",
    "toa_s": "ToA_heatmap.pgm",
    "aoa_el_deg": "elevation_heatmap.pgm",
    "aoa_az_deg": "azimuth_heatmap.pgm",
}

RESULTS_FORMAT_VERSION = "1.0"


def receiver_rows(rs: ResultSet) -> list[dict]:
    """Canonical flat view of a result set; all exporters derive from this."""
    rows = []
    for rec in rs.records:
        p = rec.point
        paths = []
        for path in rec.paths:
            mag = abs(path.gain)
            paths.append({
                "path_type": path.path_type.label,
                "gain_db": 20.0 * math.log10(mag),
                "phase_rad": float(np.angle(path.gain)),
                "toa_s": float(path.toa_s),
                "aod_az_deg": float(path.aod.azimuth_deg),
                "aod_el_deg": float(path.aod.elevation_deg),
                "aoa_az_deg": float(path.aoa.azimuth_deg),
                "aoa_el_deg": float(path.aoa.elevation_deg),
                "n_interactions": int(path.order),
            })
        rows.append({
            "rx_index": int(p.index),
            "x_m": float(p.position[0]),
            "y_m": float(p.position[1]),
            "z_m": float(p.position[2]),
            "outdoor": bool(p.outdoor),
            "paths": paths,
        })
    return rows


def _sci(x: float) -> str:
    return format(x, ".9e")


def write_csv(rs: ResultSet, path) -> None:
    """One row per retained path, sorted by (rx_index, path_rank), LF endings."""
    _write_csv_rows(receiver_rows(rs), path)


def _write_csv_rows(rows, path) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        prefix = (
            f"{row['rx_index']},{_sci(row['x_m'])},{_sci(row['y_m'])},{_sci(row['z_m'])}"
        )
        for rank, p in enumerate(row["paths"]):
            lines.append(
                f"{prefix},{rank},{p['path_type']},"
                f"{_sci(p['gain_db'])},{_sci(p['phase_rad'])},{_sci(p['toa_s'])},"
                f"{_sci(p['aod_az_deg'])},{_sci(p['aod_el_deg'])},"
                f"{_sci(p['aoa_az_deg'])},{_sci(p['aoa_el_deg'])},"
                f"{p['n_interactions']}"
            )
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_jsonl(rs: ResultSet, path) -> None:
    """One receiver object per line; floats round-trip exactly via repr."""
    rows = receiver_rows(rs)
    text = "\n".join(json.dumps(row, separators=(", ", ": ")) for row in rows)
    Path(path).write_bytes((text + "\n").encode("ascii"))


def read_results_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["rx_index"])
    return rows


# ---------------------------------------------------------------------------
# NPY array


def _npy_preamble(shape: tuple[int, ...]) -> bytes:
    header = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % (repr(shape),)
    # magic(6) + version(2) + length field(2) + header + newline, padded to 64
    base = 10 + len(header) + 1
    header = header + " " * ((64 - base % 64) % 64) + "\n"
    return b"\x93NUMPY\x01\x00" + struct.pack("<H", len(header)) + header.encode("ascii")


def write_array(rs: ResultSet, path) -> None:
    """(R, N, 8) float64 array, NaN-padded; see README for the slot layout."""
    _write_array_rows(receiver_rows(rs), rs.config_echo.n_paths_retained, path)


def _write_array_rows(rows, n_paths: int, path) -> None:
    r = len(rows)
    data = np.full((r, n_paths, 8), np.nan)
    for row in rows:
        i = row["rx_index"]
        for rank, p in enumerate(row["paths"][:n_paths]):
            data[i, rank] = (
                p["gain_db"], p["phase_rad"], p["toa_s"],
                p["aod_az_deg"], p["aod_el_deg"],
                p["aoa_az_deg"], p["aoa_el_deg"],
                float(PATH_TYPE_CODES[p["path_type"]]),
            )
    payload = data.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(_npy_preamble((r, n_paths, 8)) + payload)


# ---------------------------------------------------------------------------
# statistics


def _histogram_csv(values: np.ndarray, path) -> None:
    lines = ["bin_start,bin_end,count"]
    values = values[np.isfinite(values)]
    if values.size:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(values, bins=50, range=(lo, hi))
        for k in range(50):
            lines.append(f"{_sci(edges[k])},{_sci(edges[k + 1])},{counts[k]}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_histograms(rows, out_dir) -> None:
    """Gain/ToA histograms (50 uniform bins over the observed range) + type counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gains = np.array([p["gain_db"] for r in rows for p in r["paths"]])
    toas = np.array([p["toa_s"] for r in rows for p in r["paths"]])
    _histogram_csv(gains, out / "channel_gain_distribution.csv")
    _histogram_csv(toas, out / "ToA_distribution.csv")
    counts = {name: 0 for name in PATH_TYPE_CODES}
    for r in rows:
        for p in r["paths"]:
            counts[p["path_type"]] += 1
    lines = ["path_type,count"]
    lines.extend(f"{name},{counts[name]}" for name in PATH_TYPE_CODES)
    (out / "path_type_distribution.csv").write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def path_type_counts(rs: ResultSet) -> dict[str, int]:
    counts = {name: 0 for name in PATH_TYPE_CODES}
    for rec in rs.records:
        for path in rec.paths:
            counts[path.path_type.label] += 1
    return counts


def write_stats(rs: ResultSet, out_dir, scene_label: str | None = None) -> None:
    """Histogram CSVs plus generation_stats.txt (counts, QC, degradation, wall time)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = receiver_rows(rs)
    write_histograms(rows, out)

    total = len(rs.records)
    outdoor = sum(1 for r in rs.records if r.point.outdoor)
    fraction = outdoor / total if total else 0.0
    counts = path_type_counts(rs)
    lines = [
        f"scene_id: {scene_label if scene_label is not None else 'unknown'}",
        f"receivers_total: {total}",
        f"receivers_outdoor: {outdoor}",
        f"outdoor_fraction: {fraction!r}",
        f"paths_total: {sum(counts.values())}",
    ]
    lines.extend(f"paths_{name}: {counts[name]}" for name in PATH_TYPE_CODES)
    if rs.degradation_log:
        events = "; ".join(
            f"batch {e.batch_index}: depth {e.old_depth}->{e.new_depth}"
            for e in rs.degradation_log
        )
        lines.append(f"degradation: {events}")
    else:
        lines.append("degradation: none")
    lines.append(f"wall_time_s: {rs.wall_time_s:.3f}")
    (out / "generation_stats.txt").write_bytes(("\n".join(lines) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# heatmaps


def _first_path_grid(rows, nx: int, ny: int, key: str) -> np.ndarray:
    grid = np.full(nx * ny, np.nan)
    for row in rows:
        if row["paths"]:
            grid[row["rx_index"]] = row["paths"][0][key]
    return grid.reshape(ny, nx)


def _scale_to_pixels(grid: np.ndarray) -> np.ndarray:
    """Map the 1st..99th percentile linearly onto [1, 255]; no data stays 0."""
    valid = np.isfinite(grid)
    out = np.zeros(grid.shape, dtype=np.uint8)
    if not valid.any():
        return out
    p1, p99 = np.percentile(grid[valid], [1.0, 99.0])
    if p99 <= p1:
        out[valid] = 255
        return out
    t = np.clip((grid[valid] - p1) / (p99 - p1), 0.0, 1.0)
    out[valid] = (1.0 + np.floor(254.0 * t + 0.5)).astype(np.uint8)
    return out


def _write_pgm(path, image: np.ndarray) -> None:
    ny, nx = image.shape
    header = f"P5\n{nx} {ny}\n255\n".encode("ascii")
    # file row 0 is the northernmost grid row (j = ny - 1)
    Path(path).write_bytes(header + np.flipud(image).tobytes())


def render_heatmaps(rs: ResultSet, out_dir) -> None:
    """First-path gain/ToA/AoA-elevation/AoA-azimuth rasters as 8-bit PGM."""
    grid = rs.config_echo.rx_grid
    render_heatmaps_rows(receiver_rows(rs), grid.nx, grid.ny, out_dir)


def render_heatmaps_rows(rows, nx: int, ny: int, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, filename in HEATMAP_FILES.items():
        _write_pgm(out / filename, _scale_to_pixels(_first_path_grid(rows, nx, ny, key)))


# ---------------------------------------------------------------------------
# metadata


def write_metadata(rs: ResultSet, scene: Scene, out_dir) -> None:
    """JSON run provenance: config echo, seed, QC, degradation, geo origin."""
    meta = {
        "format_version": RESULTS_FORMAT_VERSION,
        "scene_id": scene_id(scene),
        "geo_origin": list(scene.geo_origin) if scene.geo_origin is not None else None,
        "seed": scene.seed,
        "config": config_to_dict(rs.config_echo),
        "degradation_log": [
            {
                "batch_index": e.batch_index,
                "old_depth": e.old_depth,
                "new_depth": e.new_depth,
                "elapsed_s": e.elapsed_s,
            }
            for e in rs.degradation_log
        ],
        "qc": (
            {"outdoor_fraction": rs.qc.outdoor_fraction, "passed": rs.qc.passed}
            if rs.qc is not None
            else None
        ),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )


def read_metadata(results_dir) -> dict:
    return json.loads((Path(results_dir) / "metadata.json").read_text(encoding="ascii"))


# ---------------------------------------------------------------------------
# region-level index files


def write_region_index(region_dir) -> None:
    """Rebuild generated_scenes.txt and the region stats from what is on disk."""
    region = Path(region_dir)
    scenes_dir = region / "scenes"
    names = sorted(p.name for p in scenes_dir.iterdir() if p.is_dir()) if scenes_dir.is_dir() else []
    ids = [n.removeprefix("scene_") for n in names]
    (region / "generated_scenes.txt").write_bytes(("\n".join(ids) + "\n" if ids else "").encode("ascii"))

    total_paths = 0
    total_outdoor = 0
    traced = 0
    results_dir = region / "raytracing_results"
    if results_dir.is_dir():
        for sub in sorted(results_dir.iterdir()):
            stats = sub / "generation_stats.txt"
            if not stats.is_file():
                continue
            traced += 1
            for line in stats.read_text(encoding="ascii").splitlines():
                key, _, value = line.partition(":")
                if key == "paths_total":
                    total_paths += int(value)
                elif key == "receivers_outdoor":
                    total_outdoor += int(value)
    lines = [
        f"scenes: {len(ids)}",
        f"scenes_traced: {traced}",
        f"receivers_outdoor: {total_outdoor}",
        f"paths_total: {total_paths}",
    ]
    (region / "generation_stats.txt").write_bytes(("\n".join(lines) + "\n").encode("ascii"))
