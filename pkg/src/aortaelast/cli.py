"""Command-line entry point exposing the pipeline as subcommands.

Configuration precedence: explicit flags > JSON config file (--config) >
built-in defaults.  Every command persists the effective configuration
next to its outputs, and identical (config, seed) pairs produce
bit-identical data artifacts.

Exit codes: 0 success, 1 usage error, 2 runtime error (with a JSON
diagnostic object on standard error).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datagen, fem, itr, metrics, ussim
from .errors import AortaElastError
from .meshing import build_mesh, circular_spec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_effective_config(out_dir, command, args):
    os.makedirs(out_dir, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    path = os.path.join(out_dir, f"{command}_config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    return path


def _cmd_gen_dataset(args):
    _write_effective_config(args.out, "gen-dataset", args)
    manifest = datagen.generate_dataset(
        global_seed=args.seed, n_train=args.train, n_val=args.val,
        n_test=args.test, out_path=args.out, target_h=args.target_h,
        workers=args.workers)
    print(json.dumps({"status": "ok", "out": args.out,
                      "counts": manifest["counts"]}))


def _cmd_digital_phantom(args):
    _write_effective_config(args.out, "digital-phantom", args)
    sample, mesh, u = datagen.make_digital_phantom(
        args.contrast, target_h=args.target_h)
    sample.save(os.path.join(args.out, "truth.egrid"))
    fem.save_mesh(mesh, os.path.join(args.out, "mesh.json"))
    fem.save_field(u, os.path.join(args.out, "displacement.field"))
    print(json.dumps({"status": "ok", "out": args.out,
                      "contrast": args.contrast,
                      "pressure_pa": sample.pressure}))


def _cmd_simulate_us(args):
    _write_effective_config(args.out, "simulate-us", args)
    mesh = fem.load_mesh(args.mesh)
    u = fem.load_field(args.displacement, mesh)
    grid = datagen.GridSpec.centered_on(mesh.center)
    pitch = grid.pixel_pitch
    margin = 3e-3
    ext_l = (grid.origin[0] - margin,
             grid.origin[0] + (grid.width - 1) * pitch + margin)
    ext_d = (grid.origin[1] - margin,
             grid.origin[1] + (grid.height - 1) * pitch + margin)
    psf = ussim.PSFParams()
    rf_grid = ussim.RFGrid.covering(ext_l, ext_d, psf)
    pad = 5e-3   # scatterers beyond the frame so motion does not expose gaps
    scatterers = ussim.sample_scatterers(
        (ext_l[0] - pad, ext_l[1] + pad), (ext_d[0] - pad, ext_d[1] + pad),
        seed=args.seed)
    frame1 = ussim.render_rf(scatterers, rf_grid, psf)
    moved = ussim.deform_scatterers(scatterers, mesh, u)
    frame2 = ussim.render_rf(moved, rf_grid, psf)
    frame1.save(os.path.join(args.out, "frame1.egrid"))
    frame2.save(os.path.join(args.out, "frame2.egrid"))
    print(json.dumps({"status": "ok", "out": args.out,
                      "rf_shape": [rf_grid.n_axial, rf_grid.n_lateral]}))


def _cmd_register(args):
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_effective_config(out_dir, "register", args)
    mesh = fem.load_mesh(args.mesh)
    fixed = ussim.RFImage.load(args.fixed)
    moving = ussim.RFImage.load(args.moving)
    cfg = ussim.RegistrationConfig()
    if args.alpha is not None:
        cfg.alpha = args.alpha
    u, report = ussim.register_pair(fixed, moving, mesh, cfg)
    fem.save_field(u, args.out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
    print(json.dumps({"status": "ok", "out": args.out,
                      "max_displacement_m": float(np.abs(u.values).max())}))


def _cmd_reconstruct(args):
    _write_effective_config(args.out, "reconstruct", args)
    mesh = fem.load_mesh(args.mesh)
    u = fem.load_field(args.displacement, mesh)
    cfg = itr.ItrConfig()
    if args.alpha is not None:
        cfg.alpha_mu = args.alpha
    if args.outer_iterations is not None:
        cfg.outer_iterations = args.outer_iterations
    sample, report = itr.reconstruct(mesh, u, PP=args.pulse_pressure, cfg=cfg)
    sample.save(os.path.join(args.out, "modulus.egrid"))
    with open(os.path.join(args.out, "convergence.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps({"status": "ok", "out": args.out,
                      "P_it": report["P_it"],
                      "elapsed_seconds": report["elapsed_seconds"]}))


def _cmd_metrics(args):
    truth = datagen.GridSample.load(args.truth)
    pred = datagen.GridSample.load(args.pred)
    report = metrics.compare_samples(truth, pred)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _cmd_render_report(args):
    from .report import render_report
    truth = datagen.GridSample.load(args.truth)
    itr_s = datagen.GridSample.load(args.itr) if args.itr else None
    dl_s = datagen.GridSample.load(args.dl) if args.dl else None
    render_report(truth, args.out, itr=itr_s, dl=dl_s)
    print(json.dumps({"status": "ok", "out": args.out}))


def build_parser():
    parser = _Parser(prog="aortaelast",
                     description="Vascular elastography simulation and "
                                 "reconstruction pipeline")
    parser.add_argument("--config", help="JSON file with default values for "
                                         "the chosen subcommand's flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate a seeded training dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=1800)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--target-h", type=float, default=datagen.DEFAULT_TARGET_H)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("digital-phantom", help="two-sector benchmark phantom")
    p.add_argument("--contrast", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-h", type=float, default=2e-3)
    p.set_defaults(func=_cmd_digital_phantom)

    p = sub.add_parser("simulate-us", help="render an RF frame pair from a "
                                           "mesh and displacement field")
    p.add_argument("--mesh", required=True)
    p.add_argument("--displacement", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate_us)

    p = sub.add_parser("register", help="estimate displacement between frames")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("reconstruct", help="iterative modulus reconstruction")
    p.add_argument("--mesh", required=True)
    p.add_argument("--displacement", required=True)
    p.add_argument("--pulse-pressure", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--outer-iterations", type=int, default=None)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("metrics", help="compare two grid samples")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("render-report", help="side-by-side PNG figure")
    p.add_argument("--truth", required=True)
    p.add_argument("--itr", default=None)
    p.add_argument("--dl", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render_report)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    # Two-pass parse so --config supplies defaults that flags still override.
    try:
        probe, _ = parser.parse_known_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    if getattr(probe, "config", None):
        try:
            with open(probe.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(json.dumps({"error": f"bad config file: {exc}"}),
                  file=sys.stderr)
            return 1
        parser_with_defaults = build_parser()
        for action in parser_with_defaults._subparsers._group_actions[0] \
                .choices.values():
            known = {a.dest for a in action._actions}
            action.set_defaults(**{k.replace("-", "_"): v
                                   for k, v in file_cfg.items()
                                   if k.replace("-", "_") in known})
        parser = parser_with_defaults

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        args.func(args)
        return 0
    except AortaElastError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
