"""Batch command-line interface.

Subcommands: ``synth`` generates a scene (frames plus ground-truth flow
files), ``compute`` runs one solver over an image sequence and writes a
flow file per frame pair, ``bench`` evaluates a set of solvers against
ground truth and writes the report table, ``plot`` renders figures from
flow files. Parameters may come from a JSON config file with one section
per parameter block; command-line flags override config values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import _kernels
from .baselines import CCParams, HSParams, cc_dense_flow, horn_schunck
from .errors import ConfigError, PivflowError
from .flowio import (
    read_flow,
    read_sequence,
    write_flow,
    write_frames,
    write_report,
)
from .lk import LKParams, dense_flow
from .metrics import benchmark
from .plots import PLOT_STYLES, render_plot
from .synth import (
    GroundTruth,
    FlowModel,
    PRESET_NAMES,
    SceneSpec,
    generate_sequence,
    preset,
)

USAGE_EXIT = 2
ERROR_EXIT = 1


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _section(config: dict, name: str) -> dict:
    block = config.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(block)


def _merge(block: dict, overrides: dict) -> dict:
    merged = dict(block)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _build(cls, block: dict, section: str):
    try:
        return cls(**block)
    except TypeError as exc:
        raise ConfigError(f"bad {section} parameter: {exc}")
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad {section} parameter: {exc}")


def build_lk_params(config: dict, args) -> LKParams:
    block = _merge(
        _section(config, "lk"),
        {
            "pyramid_depth": args.depth,
            "window_radius": args.window_radius,
            "weight_mode": args.weight_mode,
            "max_iterations": args.max_iterations,
            "convergence_threshold": args.convergence_threshold,
            "min_eigenvalue_threshold": args.min_eigenvalue,
        },
    )
    return _build(LKParams, block, "lk")


def build_cc_params(config: dict, args) -> CCParams:
    block = _merge(
        _section(config, "cc"),
        {
            "template_size": args.template,
            "search_radius": args.search_radius,
            "grid_step": args.grid_step,
            "subpixel_mode": args.subpixel,
        },
    )
    block.pop("engine", None)
    return _build(CCParams, block, "cc")


def _cc_engine(config: dict, args) -> str:
    engine = args.cc_engine or _section(config, "cc").get("engine") or "fft"
    if engine not in ("direct", "fft"):
        raise ConfigError(f"cc engine must be 'direct' or 'fft', got {engine!r}")
    return engine


def build_hs_params(config: dict, args) -> HSParams:
    block = _merge(
        _section(config, "hs"),
        {"alpha": args.alpha, "iterations": args.hs_iterations},
    )
    return _build(HSParams, block, "hs")


def build_scene(config: dict, args):
    """SceneSpec + FlowModel from preset and/or config with flag overrides."""
    scene_block = _section(config, "scene")
    model_block = scene_block.pop("model", None)
    if args.preset is not None:
        spec, model = preset(args.preset, seed=args.seed if args.seed is not None else 0)
        spec_block = _merge(
            {
                "width": spec.width,
                "height": spec.height,
                "particle_density": spec.particle_density,
                "particle_radius": spec.particle_radius,
                "out_of_plane_rate": spec.out_of_plane_rate,
                "noise_sigma": spec.noise_sigma,
                "frames": spec.frames,
                "seed": spec.seed,
            },
            scene_block,
        )
    else:
        spec_block = dict(scene_block)
        model = None
    spec_block = _merge(
        spec_block,
        {
            "width": args.width,
            "height": args.height,
            "particle_density": args.density,
            "particle_radius": args.particle_radius,
            "out_of_plane_rate": args.out_of_plane_rate,
            "noise_sigma": args.noise_sigma,
            "frames": args.frames,
            "seed": args.seed,
        },
    )
    spec = _build(SceneSpec, spec_block, "scene")

    if args.model is not None or model_block is not None:
        block = dict(model_block or {})
        if args.model is not None:
            block["kind"] = args.model
        overrides = {
            "u0": args.u0,
            "v0": args.v0,
            "shear_rate": args.shear_rate,
            "peak_speed": args.peak_speed,
            "core_radius": args.core_radius,
        }
        block = _merge(block, overrides)
        if block.get("kind") == "vortex" and "center" not in block:
            block["center"] = (spec.width / 2.0 - 0.5, spec.height / 2.0 - 0.5)
        if "center" in block:
            block["center"] = tuple(block["center"])
        if block.get("kind") == "shear" and "shear_center" not in block:
            block["shear_center"] = (spec.height - 1) / 2.0
        model = _build(FlowModel, block, "scene.model")
    if model is None:
        raise ConfigError("synth needs --preset or a flow model (--model / config)")
    return spec, model


def _cmd_synth(args, config) -> int:
    spec, model = build_scene(config, args)
    frames, truth = generate_sequence(spec, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_frames(frames, out, bit_depth=args.bit_depth)
    for i, field in enumerate(truth.fields):
        write_flow(field, out / f"truth_{i:04d}.flo")
    manifest = {
        "generator": "numpy-PCG64",
        "scene": {
            "width": spec.width,
            "height": spec.height,
            "particle_density": spec.particle_density,
            "particle_radius": spec.particle_radius,
            "out_of_plane_rate": spec.out_of_plane_rate,
            "noise_sigma": spec.noise_sigma,
            "frames": spec.frames,
            "seed": spec.seed,
        },
        "model": _model_dict(model),
    }
    (out / "scene.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(frames)} frames and {len(truth.fields)} truth fields to {out}")
    return 0


def _model_dict(model: FlowModel) -> dict:
    if model.kind == "uniform":
        return {"kind": "uniform", "u0": model.u0, "v0": model.v0}
    if model.kind == "shear":
        return {
            "kind": "shear",
            "shear_rate": model.shear_rate,
            "shear_center": model.shear_center,
        }
    if model.kind == "vortex":
        return {
            "kind": "vortex",
            "center": list(model.center),
            "peak_speed": model.peak_speed,
            "core_radius": model.core_radius,
        }
    return {"kind": "composite", "parts": [_model_dict(p) for p in model.parts]}


def _make_algorithm(algo, config, args):
    if algo == "lk":
        params = build_lk_params(config, args)
        return lambda a, b: dense_flow(a, b, params, workers=args.workers)[0]
    if algo == "cc":
        params = build_cc_params(config, args)
        engine = _cc_engine(config, args)
        return lambda a, b: cc_dense_flow(a, b, params, engine=engine, workers=args.workers)
    if algo == "hs":
        params = build_hs_params(config, args)
        return lambda a, b: horn_schunck(a, b, params)
    raise ConfigError(f"unknown algorithm {algo!r}; choose lk, cc, or hs")


def _cmd_compute(args, config) -> int:
    algorithm = _make_algorithm(args.algo, config, args)
    frames = read_sequence(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(frames) - 1):
        field = algorithm(frames[i], frames[i + 1])
        write_flow(field, out / f"flow_{i:04d}.flo")
    print(f"wrote {len(frames) - 1} flow fields to {out}")
    return 0


def _default_bench_rows(config, args):
    """The comparison table: pyramid depths, smoothing factors, templates."""
    rows = {}
    for depth in (1, 2, 3, 4):
        base = build_lk_params(config, args)
        params = LKParams(
            window_radius=base.window_radius,
            weight_mode=base.weight_mode,
            pyramid_depth=depth,
            max_iterations=base.max_iterations,
            convergence_threshold=base.convergence_threshold,
            min_eigenvalue_threshold=base.min_eigenvalue_threshold,
        )
        rows[f"lk-depth{depth}"] = (
            lambda a, b, p=params: dense_flow(a, b, p, workers=args.workers)[0]
        )
    for alpha in (0.25, 0.5, 0.75):
        params = HSParams(alpha=alpha, iterations=args.hs_iterations or 200)
        rows[f"hs-alpha{alpha}"] = (
            lambda a, b, p=params: horn_schunck(a, b, p)
        )
    engine = _cc_engine(config, args)
    for template in (32, 48, 64):
        base = build_cc_params(config, args)
        params = CCParams(
            template_size=template,
            search_radius=base.search_radius,
            grid_step=base.grid_step,
            subpixel_mode=base.subpixel_mode,
        )
        rows[f"cc-template{template}"] = (
            lambda a, b, p=params: cc_dense_flow(
                a, b, p, engine=engine, workers=args.workers
            )
        )
    return rows


def _cmd_bench(args, config) -> int:
    frames = read_sequence(args.input)
    truth_paths = sorted(Path(args.input).glob(f"{args.truth_prefix}_*.flo"))
    if len(truth_paths) != len(frames) - 1:
        raise PivflowError(
            f"{args.input}: found {len(truth_paths)} truth fields for "
            f"{len(frames) - 1} frame pairs"
        )
    truth = GroundTruth(fields=tuple(read_flow(p) for p in truth_paths))

    if args.algo:
        algorithms = {
            name: _make_algorithm(name, config, args) for name in args.algo
        }
    else:
        algorithms = _default_bench_rows(config, args)

    rows = benchmark(
        algorithms,
        frames,
        truth,
        repeats=args.repeats,
        sort_by=args.sort_by,
    )
    csv_path, json_path = write_report(rows, args.out)
    for row in rows:
        if row.report is not None:
            print(
                f"{row.name}: AAE={row.report.aae:.3f} deg  SAD={row.report.sad:.3f} deg  "
                f"EPE={row.report.epe:.3f} px  t={row.report.runtime:.3f} s"
            )
        else:
            print(f"{row.name}: FAILED ({row.error})")
    print(f"report written to {csv_path} and {json_path}")
    return 0


def _cmd_plot(args, config) -> int:
    flow = read_flow(args.flow)
    render_plot(
        flow,
        args.style,
        args.out,
        step=args.step,
        arrow_scale=args.arrow_scale,
        cmap=args.cmap,
        vmax=args.vmax,
    )
    print(f"wrote {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="pivflow",
        description=(
            "Dense optical-flow velocimetry: pyramidal Lucas-Kanade plus "
            "cross-correlation and Horn-Schunck baselines."
        ),
    )
    parser.add_argument(
        "--config", help="JSON config file with lk/cc/hs/scene sections"
    )
    parser.add_argument(
        "--workers", type=int, help="parallel worker threads for dense solvers"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    synth.add_argument("--preset", choices=PRESET_NAMES, help="named scene preset")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--width", type=int)
    synth.add_argument("--height", type=int)
    synth.add_argument("--density", type=float, dest="density")
    synth.add_argument("--particle-radius", type=float)
    synth.add_argument("--out-of-plane-rate", type=float)
    synth.add_argument("--noise-sigma", type=float)
    synth.add_argument("--frames", type=int)
    synth.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    synth.add_argument("--model", choices=("uniform", "shear", "vortex"))
    synth.add_argument("--u0", type=float)
    synth.add_argument("--v0", type=float)
    synth.add_argument("--shear-rate", type=float)
    synth.add_argument("--peak-speed", type=float)
    synth.add_argument("--core-radius", type=float)
    synth.set_defaults(func=_cmd_synth)

    compute = sub.add_parser("compute", help="run one solver over a sequence")
    compute.add_argument("--input", required=True, help="image sequence directory or .txt list")
    compute.add_argument("--out", required=True, help="flow output directory")
    compute.add_argument("--algo", required=True, choices=("lk", "cc", "hs"))
    bench = sub.add_parser("bench", help="benchmark solvers against ground truth")
    bench.add_argument("--input", required=True, help="directory with frames + truth flows")
    bench.add_argument("--out", required=True, help="report path prefix (.csv/.json)")
    bench.add_argument("--truth-prefix", default="truth")
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--sort-by", choices=("aae", "runtime", "name"))
    bench.add_argument(
        "--algo",
        action="append",
        choices=("lk", "cc", "hs"),
        help="benchmark only these algorithms (repeatable); default is the full sweep",
    )

    for p in (compute, bench):
        p.add_argument("--depth", type=int, help="lk pyramid depth")
        p.add_argument("--window-radius", type=int)
        p.add_argument("--weight-mode", choices=("uniform", "gaussian"))
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--convergence-threshold", type=float)
        p.add_argument("--min-eigenvalue", type=float)
        p.add_argument("--template", type=int, help="cc template size")
        p.add_argument("--search-radius", type=int)
        p.add_argument("--grid-step", type=int)
        p.add_argument("--subpixel", choices=("none", "parabolic"))
        p.add_argument("--cc-engine", choices=("direct", "fft"))
        p.add_argument("--alpha", type=float, help="hs smoothing factor")
        p.add_argument("--hs-iterations", type=int)
    compute.set_defaults(func=_cmd_compute)
    bench.set_defaults(func=_cmd_bench)

    plot = sub.add_parser("plot", help="render figures from a flow file")
    plot.add_argument("--flow", required=True, help="input .flo file")
    plot.add_argument("--style", required=True, choices=PLOT_STYLES)
    plot.add_argument("--out", required=True, help="output PNG")
    plot.add_argument("--step", type=int, default=16, help="quiver grid spacing")
    plot.add_argument("--arrow-scale", type=float)
    plot.add_argument("--cmap", default="viridis")
    plot.add_argument("--vmax", type=float)
    plot.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"pivflow: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    try:
        config = _load_config(args.config)
        if args.workers is not None and args.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {args.workers}")
        return args.func(args, config)
    except ConfigError as exc:
        print(f"pivflow: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except PivflowError as exc:
        print(f"pivflow: {exc}", file=sys.stderr)
        return ERROR_EXIT
    except OSError as exc:
        print(f"pivflow: {exc}", file=sys.stderr)
        return ERROR_EXIT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
