"""Command-line entry point tying scenes, tracing, and export together.

Subcommands mirror the pipeline stages: ``genscene`` and ``import`` produce
scene directories, ``trace`` runs the simulation against a stored scene,
``analyze`` regenerates statistics and heatmaps from stored results, and
``run`` chains all of it. Exit codes: 0 ok, 1 configuration error, 2 I/O or
input error, 3 quality control failed (outputs are still written).
"""

import argparse
import sys
from pathlib import Path

from . import export
from .config import (
    ConfigError,
    TraceConfig,
    apply_overrides,
    config_to_yaml,
    default_config,
    load_config,
)
from .pipeline import qc_check, run_trace
from .scene import (
    Scene,
    SceneError,
    export_scene,
    generate_procedural_scene,
    import_footprints,
    import_scene,
    scene_id,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_QC = 3


def _load_cfg(args) -> TraceConfig:
    if getattr(args, "config", None):
        cfg = load_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = default_config()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _scene_dir(region: Path, scene: Scene) -> Path:
    return region / "scenes" / f"scene_{scene_id(scene)}"


def _results_dir(region: Path, scene_name: str) -> Path:
    return region / "raytracing_results" / scene_name


def _write_scene(scene: Scene, region: Path) -> Path:
    target = _scene_dir(region, scene)
    export_scene(scene, target)
    export.write_region_index(region)
    return target


def _trace_and_export(scene: Scene, cfg: TraceConfig, region: Path,
                      scene_name: str, threads: int) -> int:
    rs = qc_check(run_trace(scene, cfg, threads=threads), cfg)
    out = _results_dir(region, scene_name)
    out.mkdir(parents=True, exist_ok=True)
    export.write_csv(rs, out / "raytracing_results.csv")
    export.write_jsonl(rs, out / "raytracing_results.jsonl")
    export.write_array(rs, out / "deepmimo_format.npy")
    export.write_metadata(rs, scene, out)
    export.write_stats(rs, out, scene_label=scene_id(scene))
    export.render_heatmaps(rs, out / "heatmaps")
    export.write_region_index(region)
    return EXIT_OK if rs.qc.passed else EXIT_QC


def cmd_genscene(args) -> int:
    cfg = _load_cfg(args)
    scene = generate_procedural_scene(cfg.procgen, cfg.seed)
    target = _write_scene(scene, Path(args.out))
    print(scene_id(scene))
    print(f"scene written to {target}", file=sys.stderr)
    return EXIT_OK


def cmd_import(args) -> int:
    _ = _load_cfg(args)  # validates overrides even though import needs no tracing knobs
    doc = Path(args.input).read_text(encoding="utf-8")
    scene = import_footprints(doc)
    target = _write_scene(scene, Path(args.out))
    print(scene_id(scene))
    print(f"scene written to {target}", file=sys.stderr)
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = _load_cfg(args)
    scene_dir = Path(args.scene_dir)
    scene = import_scene(scene_dir)
    region = Path(args.out)
    return _trace_and_export(scene, cfg, region, scene_dir.name, args.threads)


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    region = Path(args.out)
    if args.geojson:
        scene = import_footprints(Path(args.geojson).read_text(encoding="utf-8"))
    else:
        scene = generate_procedural_scene(cfg.procgen, cfg.seed)
    target = _write_scene(scene, region)
    code = _trace_and_export(scene, cfg, region, target.name, args.threads)
    analyze_args = argparse.Namespace(input=str(_results_dir(region, target.name)))
    analyze_code = cmd_analyze(analyze_args)
    return max(code, analyze_code) if analyze_code != EXIT_OK else code


def cmd_analyze(args) -> int:
    results = Path(args.input)
    jsonl = results / "raytracing_results.jsonl"
    meta_file = results / "metadata.json"
    if not jsonl.is_file() or not meta_file.is_file():
        print(f"missing results under {results}", file=sys.stderr)
        return EXIT_IO
    try:
        rows = export.read_results_jsonl(jsonl)
        meta = export.read_metadata(results)
        grid = meta["config"]["rx_grid"]
        export.write_histograms(rows, results)
        export.render_heatmaps_rows(rows, grid["nx"], grid["ny"], results / "heatmaps")
    except (ValueError, KeyError, OSError) as exc:
        print(f"corrupt results under {results}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_print_defaults(_args) -> int:
    sys.stdout.write(config_to_yaml(default_config()))
    return EXIT_OK


def _add_common(parser, config=True, out=True, threads=False):
    if config:
        parser.add_argument("-c", "--config", help="YAML configuration file")
        parser.add_argument("--seed", type=int, help="override the configured seed")
        parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="dotted config override, repeatable")
    if out:
        parser.add_argument("-o", "--out", required=True,
                            help="region output directory (data/<region>)")
    if threads:
        parser.add_argument("--threads", type=int, default=0,
                            help="worker thread cap, 0 = auto")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfpath",
        description="Urban RF multipath dataset generator: scenes, tracing, exports.",
    )
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("genscene", help="generate a procedural scene")
    _add_common(p)
    p.set_defaults(func=cmd_genscene)

    p = sub.add_parser("import", help="import GeoJSON building footprints")
    _add_common(p)
    p.add_argument("-i", "--input", required=True, help="GeoJSON FeatureCollection file")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("trace", help="trace a stored scene")
    _add_common(p, threads=True)
    p.add_argument("--scene-dir", required=True, help="directory containing scene.xml")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("run", help="generate/import, trace, and analyze in one go")
    _add_common(p, threads=True)
    p.add_argument("--geojson", help="import this GeoJSON instead of generating")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="regenerate stats and heatmaps from results")
    p.add_argument("-i", "--input", required=True,
                   help="results directory containing raytracing_results.jsonl")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("print-defaults", help="print the default configuration")
    p.set_defaults(func=cmd_print_defaults)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        return cmd_print_defaults(args)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SceneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
