"""Command-line interface.

Subcommands wrap the library over the on-disk formats: ``compress`` /
``decompress`` / ``info`` move between VOL3 grids and TT3F trains,
``sdf-build`` turns occupancy or TSDF grids into signed distance grids,
``register`` aligns a cloud file to a map file, and ``sweep`` /
``rank-sweep`` / ``mem-report`` drive the experiment pipeline. Data goes
to stdout (or ``--out`` files); diagnostics go to stderr; the exit
status is nonzero exactly when an error fired.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as ttio
from .geometry import Pose, pose_error
from .pipeline import (
    METHODS,
    SceneSpec,
    SweepSpec,
    memory_report,
    run_rank_sweep,
    run_sweep,
)
from .registration import (
    CompressedSDF,
    RegistrationConfig,
    RegistrationError,
    register,
    register_dense,
)
from .tensor_train import (
    MemoryBudgetError,
    TTBuildSpec,
    tt_memory_bytes,
    tt_reconstruct,
    tt_svd,
)
from .volume import DenseVolume, OccupancyGrid, sdf_from_occupancy, truncate

__all__ = ["main"]


def _fmt_ints(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _fmt_floats(values) -> str:
    return ",".join(f"{float(v):.10g}" for v in values)


def _vec3(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p)


def _add_scene_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", default="sphere", help="sphere, box or two-spheres")
    p.add_argument("--dims", type=int, default=64, help="grid resolution per axis")
    p.add_argument("--points", type=int, default=2000, help="observation size")
    p.add_argument("--rank", type=int, default=20, help="compression rank cap")
    p.add_argument(
        "--mu-voxels", type=float, default=5.0, help="TSDF band width in voxels"
    )


def _scene_spec(args) -> SceneSpec:
    return SceneSpec(
        name=args.scene,
        dims=args.dims,
        n_points=args.points,
        tt_rank=args.rank,
        truncation_voxels=args.mu_voxels,
    )


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--step-scale", type=float, default=1.0)
    p.add_argument("--eps-stop", type=float, default=1e-4, help="step-norm stop threshold")
    p.add_argument("--damping", type=float, default=1e-6, help="relative Levenberg damping")
    p.add_argument("--oob", choices=["drop", "clamp"], default="drop")


def _config(args) -> RegistrationConfig:
    return RegistrationConfig(
        max_iterations=args.max_iters,
        step_scale=args.step_scale,
        convergence_threshold=args.eps_stop,
        levenberg_damping=args.damping,
        oob_policy=args.oob,
    )


def _sniff_magic(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read(4)


def _cmd_compress(args) -> int:
    vol = ttio.read_volume(args.input)
    spec = TTBuildSpec(
        max_rank=args.max_rank,
        rel_tolerance=args.tol,
        rank_cap_wins=not args.tolerance_wins,
    )
    tt = tt_svd(vol, spec)
    ttio.write_tensor_train(args.output, tt)
    dense_bytes = int(np.prod(vol.dims)) * 4
    tt_bytes = tt_memory_bytes(tt, 4)
    line = (
        f"dims={_fmt_ints(vol.dims)} ranks={_fmt_ints(tt.ranks)} "
        f"ratio={dense_bytes / tt_bytes:.6g}"
    )
    try:
        recon = tt_reconstruct(tt).values
        denom = np.linalg.norm(vol.values)
        rel = np.linalg.norm(vol.values - recon) / denom if denom > 0 else 0.0
        line += f" rel_error={rel:.6g}"
    except MemoryBudgetError:
        print("dense reconstruction over memory budget; skipping error", file=sys.stderr)
    print(line)
    return 0


def _cmd_decompress(args) -> int:
    tt = ttio.read_tensor_train(args.input)
    vol = tt_reconstruct(tt, origin=args.grid_origin, spacing=args.grid_spacing)
    ttio.write_volume(args.output, vol)
    print(
        f"dims={_fmt_ints(vol.dims)} origin={_fmt_floats(vol.origin)} "
        f"spacing={_fmt_floats(vol.spacing)}"
    )
    return 0


def _cmd_info(args) -> int:
    magic = _sniff_magic(args.input)
    if magic == ttio.MAGIC_TT3F:
        tt = ttio.read_tensor_train(args.input)
        core_bytes = tt_memory_bytes(tt, 4)
        total = core_bytes + ttio.TT3F_HEADER_BYTES + ttio.CRC_BYTES
        print(
            f"tt3f dims={_fmt_ints(tt.dims)} ranks={_fmt_ints(tt.ranks)} "
            f"core_bytes={core_bytes} file_bytes={total}"
        )
    elif magic == ttio.MAGIC_VOL3:
        vol = ttio.read_volume(args.input)
        value_bytes = int(np.prod(vol.dims)) * 4
        total = value_bytes + ttio.VOL3_HEADER_BYTES + ttio.CRC_BYTES
        print(
            f"vol3 dims={_fmt_ints(vol.dims)} origin={_fmt_floats(vol.origin)} "
            f"spacing={_fmt_floats(vol.spacing)} value_bytes={value_bytes} file_bytes={total}"
        )
    else:
        raise ttio.FileFormatError(f"{args.input}: unrecognized magic {magic!r}")
    return 0


def _cmd_sdf_build(args) -> int:
    src = ttio.read_volume(args.input)
    if args.mode == "occupancy":
        occupied = src.values >= 0.5
    else:  # tsdf isocontour: inside-band voxels at or below the surface
        occupied = src.values <= 0.0
    occ = OccupancyGrid(occupancy=occupied, origin=src.origin, spacing=src.spacing)
    sdf = sdf_from_occupancy(occ)
    if args.mu is not None:
        sdf = truncate(sdf, args.mu)
    ttio.write_volume(args.output, sdf)
    n_occ = int(np.count_nonzero(occupied))
    print(f"dims={_fmt_ints(sdf.dims)} occupied={n_occ} mu={args.mu}")
    return 0


def _load_map(path: str, origin, spacing):
    magic = _sniff_magic(path)
    if magic == ttio.MAGIC_TT3F:
        tt = ttio.read_tensor_train(path)
        return CompressedSDF.from_value_tt(tt, origin, spacing)
    if magic == ttio.MAGIC_VOL3:
        return ttio.read_volume(path)
    raise ttio.FileFormatError(f"{path}: unrecognized magic {magic!r}")


def _cmd_register(args) -> int:
    sdf_map = _load_map(args.map, args.grid_origin, args.grid_spacing)
    points = ttio.read_points(args.cloud)
    initial = ttio.parse_pose(args.init) if args.init else Pose.identity()
    config = _config(args)
    if isinstance(sdf_map, CompressedSDF):
        result = register(points, sdf_map, initial, config)
    else:
        result = register_dense(points, sdf_map, initial, config)
    truth = ttio.parse_pose(args.gt) if args.gt else None
    if args.trace:
        ttio.write_trace_csv(args.trace, result, truth)
    print(f"pose: {ttio.format_pose(result.pose)}")
    print(
        f"converged: {str(result.converged).lower()} "
        f"iterations: {result.iterations} cost: {result.final_cost:.9g}"
    )
    if truth is not None:
        rot_err, trans_err = pose_error(result.pose, truth)
        print(f"rot_err: {rot_err:.9g} trans_err: {trans_err:.9g}")
    if args.strict and not result.converged:
        print("did not converge (--strict)", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args) -> int:
    spec = SweepSpec(
        translation_magnitudes=args.trans_mags,
        rotation_magnitudes=args.rot_mags,
        samples_per_magnitude=args.samples,
        seed=args.seed,
        scene=_scene_spec(args),
        methods=tuple(args.methods.split(",")),
        config=_config(args),
    )
    report = run_sweep(spec, jobs=args.jobs)
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    print(report.summary())
    return 0


def _cmd_rank_sweep(args) -> int:
    result = run_rank_sweep(
        _scene_spec(args),
        args.ranks,
        trans_mag=args.trans_mag,
        rot_mag=args.rot_mag,
        seed=args.seed,
        config=_config(args),
    )
    if args.out:
        result.to_csv(args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    for rank, rot_err, trans_err in zip(result.ranks, result.rot_errs, result.trans_errs):
        print(f"rank={rank} rot_err={rot_err:.6g} trans_err={trans_err:.6g}")
    print(
        f"rank=dense rot_err={result.dense_rot_err:.6g} "
        f"trans_err={result.dense_trans_err:.6g}"
    )
    return 0


def _cmd_mem_report(args) -> int:
    rows = memory_report(
        args.dims,
        args.points,
        args.rank,
        feature_count=args.features,
        feature_dim=args.feature_dim,
    )
    lines = [f"{name},{nbytes}" for name, nbytes in rows]
    if args.out:
        Path(args.out).write_text(
            "# ttreg memory report, schema 1\nrepresentation,bytes\n"
            + "\n".join(lines)
            + "\n"
        )
        print(f"wrote {args.out}", file=sys.stderr)
    for name, nbytes in rows:
        print(f"{name:<14} {nbytes:>14} B ({nbytes / 1e6:.3g} MB)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttreg",
        description="Tensor-train compressed SDF maps and point-cloud registration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="VOL3 grid -> TT3F train")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--max-rank", type=int, default=None)
    p.add_argument("--tol", type=float, default=None, help="relative Frobenius tolerance")
    p.add_argument(
        "--tolerance-wins",
        action="store_true",
        help="let --tol exceed --max-rank instead of capping",
    )
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="TT3F train -> dense VOL3 grid")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--grid-origin", type=_vec3, default=(0.0, 0.0, 0.0))
    p.add_argument("--grid-spacing", type=_vec3, default=(1.0, 1.0, 1.0))
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("info", help="describe a VOL3 or TT3F file")
    p.add_argument("input")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("sdf-build", help="occupancy/TSDF VOL3 -> signed distance VOL3")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument(
        "--mode",
        choices=["occupancy", "tsdf"],
        default="occupancy",
        help="occupied voxels: values >= 0.5 (occupancy) or <= 0 (tsdf)",
    )
    p.add_argument("--mu", type=float, default=None, help="truncate the result to [-mu, mu]")
    p.set_defaults(func=_cmd_sdf_build)

    p = sub.add_parser("register", help="align a cloud file to a map file")
    p.add_argument("map", help="TT3F or VOL3 path")
    p.add_argument("cloud", help="XYZ or PLY path")
    p.add_argument(
        "--init",
        default=None,
        help="initial pose: 12 numbers (row-major rotation, translation) or a 6-number twist",
    )
    p.add_argument("--gt", default=None, help="ground-truth pose (same formats)")
    p.add_argument("--trace", default=None, help="write per-iteration CSV here")
    p.add_argument("--strict", action="store_true", help="nonzero exit if not converged")
    p.add_argument(
        "--grid-origin",
        type=_vec3,
        default=(0.0, 0.0, 0.0),
        help="world origin of a TT3F map (trains carry no grid metadata)",
    )
    p.add_argument("--grid-spacing", type=_vec3, default=(1.0, 1.0, 1.0))
    _add_config_args(p)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("sweep", help="perturbation sweep on an analytic scene")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--trans-mags", type=_float_list, default=(0.05, 0.1, 0.2, 0.5, 1.0))
    p.add_argument("--rot-mags", type=_float_list, default=(0.01, 0.02, 0.05, 0.1, 0.25))
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("rank-sweep", help="registration error vs compression rank")
    _add_scene_args(p)
    _add_config_args(p)
    p.add_argument("--ranks", type=_int_list, default=(2, 4, 8, 16, 32))
    p.add_argument("--trans-mag", type=float, default=0.1)
    p.add_argument("--rot-mag", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_rank_sweep)

    p = sub.add_parser("mem-report", help="map storage comparison table")
    p.add_argument("--dims", type=_vec3, required=True, help="W,H,L")
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--features", type=int, default=5000)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_mem_report)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        OSError,
        ValueError,
        RegistrationError,
        MemoryBudgetError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
