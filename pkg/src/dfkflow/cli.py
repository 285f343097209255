"""Command-line interface: ``dfkflow <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fieldgen
from .formats import FormatError, read_field, read_model, write_field, write_model
from .grids import GridField, grid_points
from .kernel_field import evaluate_divergence, evaluate_velocity
from .losses import BoundarySet, LossConfig, ScalarSequence
from .matrix_kernels import Kind, KernelKind
from .metrics import metrics_report
from .optimizer import write_history_csv
from .render import render_hsv, render_vorticity
from .tasks import TaskSpec, run_task, vorticity_on_grid

logger = logging.getLogger("dfkflow")

CASES = ("analytic-vortices", "taylor-green", "projection-pair", "laminar-stitch", "advected-blob")


class CliError(Exception):
    pass


def _sibling(out, suffix):
    p = Path(out)
    return p.with_name(p.stem + suffix)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_slice(text):
    """``axis[:index]``, e.g. ``z`` or ``2:10``."""
    if text is None:
        return 2, None
    axis, _, index = text.partition(":")
    axes = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}
    if axis not in axes:
        raise CliError(f"invalid slice {text!r}; use axis[:index] with axis in x, y, z")
    return axes[axis], int(index) if index else None


def _kind(args) -> KernelKind:
    try:
        return KernelKind(Kind.parse(args.kind), args.family)
    except ValueError as exc:
        raise CliError(str(exc)) from None


# ---- commands ------------------------------------------------------------------


def cmd_gen(args):
    res = args.res
    manifest = {"command": "gen", "case": args.case, "res": res, "seed": args.seed}
    if args.case == "analytic-vortices":
        write_field(args.out, fieldgen.gen_analytic_vortices(res))
    elif args.case == "taylor-green":
        write_field(args.out, fieldgen.taylor_green_2d().sample(res))
    elif args.case == "projection-pair":
        clean, dirty = fieldgen.gen_projection_pair(res, args.noise, args.seed, d=args.dim)
        write_field(args.out, dirty)
        write_field(_sibling(args.out, ".clean.vfld"), clean)
        manifest["clean"] = str(_sibling(args.out, ".clean.vfld"))
    elif args.case == "laminar-stitch":
        case = fieldgen.gen_laminar_stitch(args.angle, resolution=res)
        write_field(args.out, case.grid)
        write_field(_sibling(args.out, ".mask.sfld"), case.mask, scalar=True)
        manifest["mask"] = str(_sibling(args.out, ".mask.sfld"))
    elif args.case == "advected-blob":
        u = np.array(args.velocity, dtype=float)
        lo, hi = (-1.0,) * len(u), (1.0,) * len(u)
        blob = fieldgen.GaussianBlob(-0.5 * (args.frames - 1) * args.dt * u, args.width, args.amplitude)
        seq = fieldgen.gen_advected_scalar(u, blob, args.frames, args.dt, res, lo, hi)
        write_field(args.out, GridField(np.moveaxis(seq.grids, 0, -1), lo, hi), scalar=True)
        manifest.update(dt=args.dt, frames=args.frames, velocity=list(u))
    _write_json(_sibling(args.out, ".manifest.json"), manifest)
    return 0


def _loss_config(args, task, divergence_free, has_boundary):
    given = {k: getattr(args, k) for k in ("lambda_div", "lambda_bou", "lambda_reg", "lambda_con")}
    if all(v is None for v in given.values()):
        return None
    if task == "infer":
        base = {"lambda_div": 0.1, "lambda_bou": 1.0, "lambda_reg": 0.1, "lambda_con": 0.1}
    else:
        base = {"lambda_div": 0.0 if divergence_free or task == "project" else 0.5,
                "lambda_bou": 1.0 if has_boundary else 0.0, "lambda_reg": 0.0, "lambda_con": 0.0}
    base.update({k: v for k, v in given.items() if v is not None})
    return LossConfig(**base)


def _boundary(path, velocity_grid=None):
    if path is None:
        return None
    solid = read_field(path, b"SFLD")
    if velocity_grid is not None and solid.shape != velocity_grid.shape:
        raise CliError("boundary grid does not match the velocity grid")
    pts = solid.points()[solid.values()[:, 0] > 0.5]
    return BoundarySet(pts)


def _spec(args, task, **extra):
    kind = _kind(args)
    if task == "project" and kind.kind is Kind.DIVFREE:
        kind = KernelKind(Kind.NEGLAP, kind.base)
    boundary = _boundary(args.boundary, extra.get("velocity"))
    loss = _loss_config(args, task, kind.divergence_free, boundary is not None)
    return TaskSpec(task, kind=kind, n_kernels=args.kernels, eta=args.eta, seed=args.seed,
                    epochs=args.epochs, batch_size=args.batch, mode=args.mode, lr=args.lr,
                    deterministic=args.deterministic, loss=loss, boundary=boundary, **extra)


def _finish(args, result, extra_manifest=None):
    write_model(args.out, result.field)
    write_history_csv(result.history, _sibling(args.out, ".history.csv"))
    manifest = dict(result.manifest)
    manifest["command"] = args.command
    manifest["model"] = str(args.out)
    manifest["history"] = str(_sibling(args.out, ".history.csv"))
    manifest.update(extra_manifest or {})
    _write_json(_sibling(args.out, ".manifest.json"), manifest)
    return 0


def _require_input(args):
    if not args.input:
        raise CliError(f"{args.command} requires --input")


def cmd_fit(args):
    _require_input(args)
    vel = read_field(args.input, b"VFLD")
    mask = read_field(args.mask, b"SFLD") if args.mask else None
    task = "inpaint" if args.command == "inpaint" else "fit"
    if task == "inpaint" and mask is None:
        raise CliError("inpaint requires --mask")
    return _finish(args, run_task(_spec(args, task, velocity=vel, mask=mask)))


def cmd_project(args):
    _require_input(args)
    vel = read_field(args.input, b"VFLD")
    res = run_task(_spec(args, "project", velocity=vel))
    fitted = _sibling(args.out, ".fitted.dfkm")
    curlfree = _sibling(args.out, ".curlfree.dfkm")
    write_model(fitted, res.outputs["fitted"])
    write_model(curlfree, res.outputs["curlfree"])
    return _finish(args, res, {"fitted": str(fitted), "curlfree": str(curlfree)})


def cmd_superres(args):
    _require_input(args)
    vel = read_field(args.input, b"VFLD")
    ref = read_field(args.reference, b"VFLD") if args.reference else None
    shape = None
    if args.res:
        shape = (args.res,) * vel.dim
    elif ref is None:
        shape = tuple((n - 1) * args.factor + 1 for n in vel.shape)
    res = run_task(_spec(args, "superres", velocity=vel, reference=ref, target_shape=shape))
    dense = _sibling(args.out, ".dense.vfld")
    write_field(dense, res.outputs["dense"])
    return _finish(args, res, {"dense": str(dense)})


def cmd_infer(args):
    _require_input(args)
    if args.dt is None or args.dt <= 0:
        raise CliError("infer requires a positive --dt (frame spacing of the scalar file)")
    sc = read_field(args.input, b"SFLD")
    seq = ScalarSequence(np.moveaxis(sc.data, -1, 0), args.dt, sc.lo, sc.hi)
    return _finish(args, run_task(_spec(args, "infer", scalars=seq)))


def cmd_eval(args):
    _require_input(args)
    field = read_model(args.input)
    if args.res is None:
        raise CliError("eval requires --res")
    lo = tuple(args.lo) * field.dim if len(args.lo) == 1 else tuple(args.lo)
    hi = tuple(args.hi) * field.dim if len(args.hi) == 1 else tuple(args.hi)
    shape = (args.res,) * field.dim
    pts = grid_points(lo, hi, shape)
    u = evaluate_velocity(field, args.frame, pts)
    grid = GridField.from_values(u, shape, lo, hi)
    write_field(args.out, grid)
    summary = {"command": "eval", "model": args.input, "frame": args.frame, "res": args.res,
               "divergence_max_abs": float(np.abs(evaluate_divergence(field, args.frame, pts)).max())}
    if args.reference:
        summary["metrics"] = metrics_report(grid.data, read_field(args.reference, b"VFLD").data)
    _write_json(_sibling(args.out, ".manifest.json"), summary)
    return 0


def cmd_metrics(args):
    _require_input(args)
    if not args.reference:
        raise CliError("metrics requires --reference")
    a = read_field(args.input, b"VFLD")
    b = read_field(args.reference, b"VFLD")
    report = metrics_report(a.data, b.data)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_render(args):
    _require_input(args)
    axis, index = _parse_slice(args.slice)
    src = Path(args.input)
    with open(src, "rb") as fh:
        magic = fh.read(4)
    if magic == b"DFKM":
        field = read_model(src)
        lo = tuple(args.lo) * field.dim if len(args.lo) == 1 else tuple(args.lo)
        hi = tuple(args.hi) * field.dim if len(args.hi) == 1 else tuple(args.hi)
        shape = (args.res or 64,) * field.dim
        if args.view == "vorticity":
            render_vorticity(vorticity_on_grid(field, lo, hi, shape, args.frame), args.out, axis, index)
        else:
            u = evaluate_velocity(field, args.frame, grid_points(lo, hi, shape))
            render_hsv(u.reshape(shape + (field.dim,)), args.out, axis, index)
        return 0
    grid = read_field(src, b"VFLD")
    if args.view == "vorticity":
        render_vorticity(fieldgen.grid_vorticity(grid), args.out, axis, index)
    else:
        render_hsv(grid.data, args.out, axis, index)
    return 0


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "inpaint": cmd_fit, "project": cmd_project,
            "superres": cmd_superres, "infer": cmd_infer, "eval": cmd_eval,
            "metrics": cmd_metrics, "render": cmd_render}


def build_parser():
    p = argparse.ArgumentParser(prog="dfkflow", description="Divergence-free kernel flow reconstruction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--input")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--deterministic", action="store_true")

    def training(sp):
        sp.add_argument("--family", default="wen4")
        sp.add_argument("--kind", default="divfree")
        sp.add_argument("--kernels", type=int, default=1000)
        sp.add_argument("--eta", type=float, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--batch", type=int, default=256)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--mode", choices=("minibatch", "fullbatch"), default=None)
        for name in ("div", "bou", "reg", "con"):
            sp.add_argument(f"--lambda-{name}", type=float, default=None)
        sp.add_argument("--mask")
        sp.add_argument("--boundary")

    g = sub.add_parser("gen", help="write an analytic ground-truth case")
    common(g)
    g.add_argument("--case", choices=CASES, required=True)
    g.add_argument("--res", type=int, default=48)
    g.add_argument("--dim", type=int, choices=(2, 3), default=2)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--angle", type=float, default=0.0)
    g.add_argument("--frames", type=int, default=21)
    g.add_argument("--dt", type=float, default=0.05)
    g.add_argument("--width", type=float, default=0.25)
    g.add_argument("--amplitude", type=float, default=100.0)
    g.add_argument("--velocity", type=float, nargs="+", default=[0.3, 0.15])

    for name in ("fit", "inpaint", "project", "superres", "infer"):
        sp = sub.add_parser(name, help=f"run the {name} task")
        common(sp)
        training(sp)
        if name == "superres":
            sp.add_argument("--factor", type=int, default=4)
            sp.add_argument("--res", type=int, default=None)
            sp.add_argument("--reference")
        if name == "infer":
            sp.add_argument("--dt", type=float, default=None)

    e = sub.add_parser("eval", help="sample a model on a grid")
    common(e)
    e.add_argument("--res", type=int, default=None)
    e.add_argument("--frame", type=int, default=0)
    e.add_argument("--lo", type=float, nargs="+", default=[-1.0])
    e.add_argument("--hi", type=float, nargs="+", default=[1.0])
    e.add_argument("--reference")

    m = sub.add_parser("metrics", help="PSNR/SSIM/error report of two velocity grids")
    common(m, out_required=False)
    m.add_argument("--reference")

    r = sub.add_parser("render", help="render a 2D slice to PPM")
    common(r)
    r.add_argument("--slice", default=None)
    r.add_argument("--view", choices=("hsv", "vorticity"), default="hsv")
    r.add_argument("--res", type=int, default=None)
    r.add_argument("--frame", type=int, default=0)
    r.add_argument("--lo", type=float, nargs="+", default=[-1.0])
    r.add_argument("--hi", type=float, nargs="+", default=[1.0])
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, FormatError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dfkflow {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())
