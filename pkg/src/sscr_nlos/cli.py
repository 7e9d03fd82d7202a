"""Batch command-line interface.

Subcommands
-----------
simulate     scene + measurement layout -> photon histogram file
reconstruct  histogram -> volume, surface, trace CSV and manifest
metrics      reconstructed vs truth surface -> JSON metrics
render       volume/surface file -> 16-bit PGM projection

Configuration files are JSON; see the README for the schemas. Exit code
2 flags an input/validation problem (the message names the offending
field), exit 1 a runtime failure (the message names the stage).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from ._accel import BACKEND
from .baselines import back_projection, log_bp, ls_cg_reconstruct, metrics as surface_metrics
from .errors import SscrError, FormatError
from .forward import ForwardOperator, forward
from .geometry import (
    MeasurementGeometry,
    VoxelGrid,
    make_plane_scene,
    make_pyramid_scene,
    surface_to_volume,
)
from .io_formats import (
    HIST_MAGIC,
    SURFACE_MAGIC,
    VOLUME_MAGIC,
    read_histogram,
    read_surface,
    read_volume,
    render_view,
    write_histogram,
    write_pgm,
    write_surface,
    write_volume,
)
from .photon import NoiseModel, sample_histogram
from .pipeline import SscrConfig, sscr_reconstruct
from .patches import BlockConfig
from .surface_fit import surfaciate


class UsageError(Exception):
    """Input/validation failure; maps to exit code 2."""


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}")


def _require(doc, field, what, kind=None):
    if field not in doc:
        raise UsageError(f"{what}: missing field '{field}'")
    value = doc[field]
    if kind is not None and not isinstance(value, kind):
        raise UsageError(f"{what}: field '{field}' has the wrong type")
    return value


def _grid_from(doc, what):
    gdoc = _require(doc, "grid", what, dict)
    try:
        return VoxelGrid(
            tuple(_require(gdoc, "dims", f"{what}.grid", list)),
            _require(gdoc, "origin", f"{what}.grid", list),
            _require(gdoc, "voxel_size", f"{what}.grid", list),
        )
    except SscrError as exc:
        raise UsageError(f"{what}.grid: {exc}")


def _scene_from(doc, grid):
    kind = _require(doc, "type", "scene")
    try:
        if kind == "pyramid":
            return make_pyramid_scene(
                grid,
                _require(doc, "base", "scene"),
                _require(doc, "height", "scene"),
                _require(doc, "standoff", "scene"),
                doc.get("albedo", 1.0),
            )
        if kind == "plane":
            extent = _require(doc, "extent", "scene", list)
            return make_plane_scene(
                grid, extent, _require(doc, "depth", "scene"), doc.get("albedo", 1.0)
            )
    except SscrError as exc:
        raise UsageError(f"scene: {exc}")
    raise UsageError(f"scene: unknown type '{kind}', expected 'pyramid' or 'plane'")


def _geometry_from(doc):
    bin_width = _require(doc, "bin_width", "geometry")
    num_bins = _require(doc, "num_bins", "geometry")
    time_origin = doc.get("time_origin", 0.0)
    try:
        if "confocal_grid" in doc:
            cg = doc["confocal_grid"]
            return MeasurementGeometry.confocal_grid(
                _require(cg, "xs", "geometry.confocal_grid", list),
                _require(cg, "ys", "geometry.confocal_grid", list),
                bin_width,
                num_bins,
                time_origin,
                cg.get("z", 0.0),
            )
        pairs = np.asarray(_require(doc, "pairs", "geometry", list), float)
        if pairs.ndim != 2 or pairs.shape[1] != 6:
            raise UsageError("geometry: 'pairs' must be rows of 6 coordinates")
        shape = doc.get("scan_shape")
        return MeasurementGeometry(
            pairs[:, :3], pairs[:, 3:], bin_width, num_bins, time_origin,
            scan_shape=tuple(shape) if shape else None,
        )
    except SscrError as exc:
        raise UsageError(f"geometry: {exc}")


def _sscr_config_from(doc):
    sdoc = dict(doc.get("sscr", {}))
    block = sdoc.pop("block", None)
    try:
        if block is not None:
            sdoc["block"] = BlockConfig(**block)
        return SscrConfig(**sdoc)
    except (TypeError, ValueError, SscrError) as exc:
        raise UsageError(f"config.sscr: {exc}")


def _write_manifest(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args):
    scene_doc = _load_json(args.scene, "scene")
    geo_doc = _load_json(args.geometry, "geometry")
    grid = _grid_from(scene_doc, "scene")
    surface = _scene_from(scene_doc, grid)
    geometry = _geometry_from(geo_doc)
    if args.pulses < 1:
        raise UsageError("--pulses must be a positive integer")

    op = ForwardOperator(grid, geometry, cosine_factor=args.cosine)
    tau = forward(surface_to_volume(surface), op)
    eta = args.eta
    if args.peak_count is not None:
        peak = float(tau.values.max())
        if peak <= 0:
            raise UsageError("--peak-count: the clean signal is identically zero")
        eta = args.peak_count / (args.pulses * peak)
    model = NoiseModel(eta=eta, dark_rate=args.dark_rate)
    hist = sample_histogram(tau, args.pulses, model, args.seed)
    write_histogram(args.output, hist)
    _write_manifest(
        args.output + ".manifest.json",
        {
            "command": "simulate",
            "version": __version__,
            "kernel_backend": BACKEND,
            "seed": args.seed,
            "rng_id": hist.rng_id,
            "pulses": args.pulses,
            "eta": eta,
            "dark_rate": args.dark_rate,
            "cosine_factor": args.cosine,
            "scene": scene_doc,
            "peak_probability": float(eta * tau.values.max()),
        },
    )
    print(f"wrote {args.output} ({hist.counts.sum()} events over "
          f"{geometry.num_pairs} pairs)")
    return 0


def _reconstruct_stage(method, hist, grid, cfg, args):
    op = ForwardOperator(grid, hist.geometry)
    resolved = {}
    trace_rows = []
    if method == "sscr":
        u, g, state = sscr_reconstruct(hist, grid, cfg)
        resolved = {k: v for k, v in state.params.items()}
        trace_rows = state.trace
        return u, g, trace_rows, resolved
    if method == "bp":
        u = back_projection(hist, op)
    elif method == "logbp":
        u = log_bp(hist, op, sigma=args.sigma)
        resolved["sigma"] = args.sigma
    elif method == "ls":
        u, curves = ls_cg_reconstruct(hist, op, iters=args.iters)
        resolved["iters"] = args.iters
        trace_rows = [
            {"iteration": i, "normal_residual": nr, "data_misfit": dm}
            for i, (nr, dm) in enumerate(zip(curves["normal_residual"],
                                             curves["data_misfit"]))
        ]
    g = surfaciate(u)
    return u, g, trace_rows, resolved


def cmd_reconstruct(args):
    methods = ("sscr", "bp", "logbp", "ls")
    if args.method not in methods:
        raise UsageError(f"unknown method '{args.method}', expected one of: "
                         + ", ".join(methods))
    cfg_doc = _load_json(args.config, "config")
    grid = _grid_from(cfg_doc, "config")
    cfg = _sscr_config_from(cfg_doc)
    try:
        hist = read_histogram(args.input)
    except FormatError as exc:
        raise UsageError(str(exc))

    stage = "reconstruction"
    try:
        u, g, trace_rows, resolved = _reconstruct_stage(
            args.method, hist, grid, cfg, args
        )
    except SscrError as exc:
        raise RuntimeError(f"stage '{stage}' ({args.method}) failed: {exc}") from exc

    write_volume(args.output + ".vol", u)
    write_surface(args.output + ".surf", g)
    trace_path = args.output + "_trace.csv"
    with open(trace_path, "w", newline="") as fh:
        if trace_rows:
            writer = csv.DictWriter(fh, fieldnames=list(trace_rows[0]))
            writer.writeheader()
            writer.writerows(trace_rows)
        else:
            fh.write("iteration\n")
    _write_manifest(
        args.output + "_manifest.json",
        {
            "command": "reconstruct",
            "version": __version__,
            "kernel_backend": BACKEND,
            "method": args.method,
            "input": args.input,
            "seed": hist.seed,
            "rng_id": hist.rng_id,
            "config": cfg.to_dict(),
            "resolved_parameters": resolved,
            "grid": {
                "dims": list(grid.dims),
                "origin": grid.origin.tolist(),
                "voxel_size": grid.voxel_size.tolist(),
            },
        },
    )
    print(f"wrote {args.output}.vol, {args.output}.surf, {trace_path}")
    return 0


def cmd_metrics(args):
    try:
        recon = read_surface(args.recon)
        truth = read_surface(args.truth)
    except FormatError as exc:
        raise UsageError(str(exc))
    try:
        result = surface_metrics(recon, truth)
    except ValueError as exc:
        raise UsageError(str(exc))
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(args):
    with open(args.input, "rb") as fh:
        head = fh.readline().strip()
    try:
        if head == VOLUME_MAGIC:
            obj = read_volume(args.input)
        elif head == SURFACE_MAGIC:
            obj = read_surface(args.input)
        elif head == HIST_MAGIC:
            raise UsageError("render expects a volume or surface file, got a histogram")
        else:
            raise UsageError(f"{args.input}: unrecognized file magic {head!r}")
    except FormatError as exc:
        raise UsageError(str(exc))
    try:
        img = render_view(obj, args.view)
    except ValueError as exc:
        raise UsageError(str(exc))
    write_pgm(args.output, img)
    print(f"wrote {args.output} ({img.shape[1]}x{img.shape[0]})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sscr-nlos",
        description="Few-shot non-line-of-sight reconstruction toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="sample a photon histogram from a scene")
    sim.add_argument("--scene", required=True, help="scene JSON (grid + shape)")
    sim.add_argument("--geometry", required=True, help="measurement layout JSON")
    sim.add_argument("--pulses", type=int, required=True, help="pulses per pair (N)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--eta", type=float, default=1.0, help="detection efficiency")
    sim.add_argument("--peak-count", type=float, default=None,
                     help="rescale eta so the peak expected count is this value")
    sim.add_argument("--dark-rate", type=float, default=0.0)
    sim.add_argument("--cosine", action="store_true",
                     help="enable the wall-foreshortening factor in the simulator")
    sim.add_argument("-o", "--output", required=True)
    sim.set_defaults(func=cmd_simulate)

    rec = sub.add_parser("reconstruct", help="reconstruct a histogram file")
    rec.add_argument("--method", required=True, help="sscr | bp | logbp | ls")
    rec.add_argument("--config", required=True, help="config JSON (grid + options)")
    rec.add_argument("-i", "--input", required=True, help="histogram file")
    rec.add_argument("-o", "--output", required=True, help="output prefix")
    rec.add_argument("--sigma", type=float, default=1.0, help="logbp blur (voxels)")
    rec.add_argument("--iters", type=int, default=1000, help="ls CG iterations")
    rec.set_defaults(func=cmd_reconstruct)

    met = sub.add_parser("metrics", help="compare two surface files")
    met.add_argument("--recon", required=True)
    met.add_argument("--truth", required=True)
    met.add_argument("-o", "--output", default=None, help="JSON output (default stdout)")
    met.set_defaults(func=cmd_metrics)

    ren = sub.add_parser("render", help="project a volume/surface to 16-bit PGM")
    ren.add_argument("--input", required=True)
    ren.add_argument("--view", required=True, help="front | top | side")
    ren.add_argument("-o", "--output", required=True)
    ren.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, SscrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
