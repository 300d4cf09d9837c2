"""Command-line interface for the face-cloaking toolkit.

Exit codes: 0 success (for `detect`: at least one face; for `verify`: human
view detected and machine view evaded), 1 usage error, 2 I/O or model error,
3 no face found, and for `verify` 4 when both views are detected, 5 when
neither view is detected, 6 when only the machine view is detected.

With --format json, stdout carries exactly one JSON document (including the
config echo needed to reproduce the run); diagnostics go to stderr. A
--config JSON file supplies defaults; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import campaign as camp
from . import cascade
from . import cloak as clk
from . import image as im
from . import shapes as shp
from .rng import SeededRng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NO_FACE = 3
EXIT_BOTH_DETECTED = 4
EXIT_NEITHER_DETECTED = 5
EXIT_MACHINE_ONLY = 6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> _Parser:
    p = _Parser(prog="facecloak",
                description="Face-detector evasion research toolkit")
    p.add_argument("--version", action="version", version=f"facecloak {__version__}")
    p.add_argument("--cascade", help="cascade XML path (default: vendored frontal-face model)")
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--format", choices=("json", "text"), default="text",
                   help="stdout format (default text)")
    p.add_argument("--out", default=".", help="output directory (default .)")
    p.add_argument("--seed", type=int, help="campaign/perturbation seed (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for campaigns")

    sub = p.add_subparsers(dest="command", required=True)

    def add_detector_flags(sp):
        sp.add_argument("--scale-factor", type=float, dest="scale_factor")
        sp.add_argument("--min-neighbors", type=int, dest="min_neighbors")
        sp.add_argument("--min-size", type=int, dest="min_size")

    def add_seed_flag(sp):
        # also accepted after the subcommand; SUPPRESS keeps the global value
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    sp = sub.add_parser("detect", help="detect faces and print boxes")
    sp.add_argument("image")
    add_detector_flags(sp)

    sp = sub.add_parser("perturb", help="draw one randomized disguise over the detected face")
    sp.add_argument("image")
    add_detector_flags(sp)
    add_seed_flag(sp)
    sp.add_argument("--shapes", type=int, dest="shapes", help="shapes per disguise (default 15)")
    sp.add_argument("--opacity", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--size-frac", type=float, nargs=2, metavar=("LO", "HI"), dest="size_frac")
    sp.add_argument("--color-mode", choices=("uniform_random_rgb", "grayscale_tones"),
                    dest="color_mode")
    sp.add_argument("--out-image", dest="out_image", help="perturbed PNG (default OUT/perturbed.png)")
    sp.add_argument("--out-shapes", dest="out_shapes", help="shape sidecar JSON")

    sp = sub.add_parser("campaign", help="run the perturb/re-detect search loop")
    sp.add_argument("image")
    add_detector_flags(sp)
    add_seed_flag(sp)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--shapes", type=int, dest="shapes")
    sp.add_argument("--opacity", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--success-iou", type=float, dest="success_iou")
    sp.add_argument("--sweep-opacity", type=float, nargs="+", dest="sweep_levels",
                    metavar="LEVEL", help="run a paired-seed opacity sweep instead")

    sp = sub.add_parser("cloak", help="build a dual-layer transparency cloak PNG")
    sp.add_argument("target", help="image the human should see")
    sp.add_argument("background", help="disguised image the machine should see")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--learning-rate", type=float, dest="learning_rate")
    sp.add_argument("--size", type=int, dest="size", help="square working size (default 256)")
    sp.add_argument("--background-scale", type=float, dest="background_scale")
    sp.add_argument("--out-png", dest="out_png", help="cloak PNG (default OUT/cloak.png)")
    sp.add_argument("--trace", dest="trace", help="loss trace file (default OUT/cloak_trace.txt)")

    sp = sub.add_parser("verify", help="check both views of a cloak PNG with the local detector")
    sp.add_argument("cloak_png")
    add_detector_flags(sp)

    sp = sub.add_parser("flatten", help="render a composited or alpha-dropped view of a PNG")
    sp.add_argument("image")
    sp.add_argument("--machine", action="store_true", help="drop alpha instead of compositing")
    sp.add_argument("--background", type=float, nargs=3, metavar=("R", "G", "B"),
                    default=(1.0, 1.0, 1.0))
    sp.add_argument("--out-image", dest="out_image", help="output PNG (default OUT/view.png)")
    return p


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(_fail(f"cannot read config file: {exc}", EXIT_IO))
    if not isinstance(doc, dict):
        raise SystemExit(_fail("config file must hold a JSON object", EXIT_IO))
    return doc


def _opt(args, config, name, default):
    """Explicit flag > config file > hard default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return config.get(name, default)


def _fail(message: str, code: int) -> int:
    print(f"facecloak: {message}", file=sys.stderr)
    return code


def _emit(args, doc: dict, text_lines: list[str]) -> None:
    if args.format == "json":
        print(json.dumps(doc, indent=1))
    else:
        for line in text_lines:
            print(line)


def _load_model(args, config):
    path = _opt(args, config, "cascade", None) or cascade.default_cascade_path()
    return cascade.load_cascade(path), str(path)


def _detector_params(args, config) -> camp.DetectorParams:
    return camp.DetectorParams(
        scale_factor=_opt(args, config, "scale_factor", 1.1),
        min_neighbors=_opt(args, config, "min_neighbors", 3),
        min_size=_opt(args, config, "min_size", 30),
    )


def _det_dicts(dets):
    return [{"rect": [d.rect.x, d.rect.y, d.rect.w, d.rect.h],
             "neighbors": d.neighbors, "weight": d.weight} for d in dets]


def cmd_detect(args, config) -> int:
    model, cascade_path = _load_model(args, config)
    params = _detector_params(args, config)
    img = im.load_image(args.image)
    dets = cascade.detect_multiscale(model, img, params.scale_factor,
                                     params.min_neighbors, params.min_size)
    echo = {"command": "detect", "image": args.image, "cascade": cascade_path,
            "detector": vars(params) | {}}
    doc = {"config": echo, "detections": _det_dicts(dets)}
    lines = [f"config: {json.dumps(echo)}"]
    lines += [f"face x={d.rect.x} y={d.rect.y} w={d.rect.w} h={d.rect.h} "
              f"neighbors={d.neighbors} weight={d.weight:.3f}" for d in dets]
    if not dets:
        lines.append("no face detected")
    _emit(args, doc, lines)
    return EXIT_OK if dets else EXIT_NO_FACE


def _perturbation_config(args, config) -> shp.PerturbationConfig:
    return shp.PerturbationConfig(
        shapes_per_iteration=_opt(args, config, "shapes", 15),
        size_range=tuple(_opt(args, config, "size_frac", (0.05, 0.60))),
        thickness_range=tuple(config.get("thickness_range", (1.0, 8.0))),
        opacity_range=tuple(_opt(args, config, "opacity", (1.0, 1.0))),
        color_mode=_opt(args, config, "color_mode", "uniform_random_rgb"),
    )


def cmd_perturb(args, config) -> int:
    model, cascade_path = _load_model(args, config)
    params = _detector_params(args, config)
    pert = _perturbation_config(args, config)
    seed = _opt(args, config, "seed", 0)
    img = im.load_image(args.image)
    dets = cascade.detect_multiscale(model, img, params.scale_factor,
                                     params.min_neighbors, params.min_size)
    if not dets:
        return _fail("no face detected; nothing to perturb", EXIT_NO_FACE)
    face = dets[0].rect
    out_image = Path(_opt(args, config, "out_image", None) or Path(args.out) / "perturbed.png")
    out_shapes = Path(_opt(args, config, "out_shapes", None) or Path(args.out) / "shapes.json")
    perturbed, drawn = shp.apply_disguise(img, face, pert, SeededRng(seed, stream=0))
    out_image.parent.mkdir(parents=True, exist_ok=True)
    im.save_png(perturbed, out_image)
    echo = {"command": "perturb", "image": args.image, "cascade": cascade_path,
            "seed": seed, "detector": vars(params) | {},
            "perturbation": {"shapes_per_iteration": pert.shapes_per_iteration,
                             "size_range": list(pert.size_range),
                             "thickness_range": list(pert.thickness_range),
                             "opacity_range": list(pert.opacity_range),
                             "color_mode": pert.color_mode}}
    sidecar = {"config": echo,
               "face": [face.x, face.y, face.w, face.h],
               "shapes": [shp.shape_to_dict(s) for s in drawn]}
    out_shapes.parent.mkdir(parents=True, exist_ok=True)
    with open(out_shapes, "w") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")
    doc = {"config": echo, "face": sidecar["face"], "shape_count": len(drawn),
           "perturbed_png": str(out_image), "shape_record": str(out_shapes)}
    _emit(args, doc, [f"config: {json.dumps(echo)}",
                      f"drew {len(drawn)} shapes over face {sidecar['face']}",
                      f"wrote {out_image} and {out_shapes}"])
    return EXIT_OK


def cmd_campaign(args, config) -> int:
    model, cascade_path = _load_model(args, config)
    cfg = camp.CampaignConfig(
        iterations=_opt(args, config, "iterations", 200),
        perturbation=_perturbation_config(args, config),
        detector=_detector_params(args, config),
        success_iou=_opt(args, config, "success_iou", 0.3),
        seed=_opt(args, config, "seed", 0),
    )
    img = im.load_image(args.image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": "campaign", "image": args.image, "cascade": cascade_path,
            "jobs": args.jobs}

    levels = getattr(args, "sweep_levels", None) or config.get("sweep_levels")
    if levels:
        rates = camp.sweep_opacity(img, model, cfg, list(levels))
        doc = {"config": echo, "sweep": [{"opacity": k, "evasion_rate": v}
                                         for k, v in rates.items()]}
        path = out_dir / "opacity_sweep.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        lines = [f"config: {json.dumps(echo)}"]
        lines += [f"opacity {k:.3f}: evasion rate {v:.4f}" for k, v in rates.items()]
        lines.append(f"wrote {path}")
        _emit(args, doc, lines)
        return EXIT_OK

    try:
        report = camp.run_campaign(img, model, cfg, jobs=args.jobs)
    except camp.NoBaselineFaceError as exc:
        return _fail(str(exc), EXIT_NO_FACE)
    doc = camp.report_to_dict(report)
    camp.verify_report(doc)  # aggregates must be recomputable from the trials
    report_path = out_dir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    camp.render_heatmap_png(report.success_heatmap, out_dir / "success_heatmap.png")
    camp.render_heatmap_png(report.failure_heatmap, out_dir / "failure_heatmap.png")
    summary = {"config": echo, "baseline": doc["baseline"],
               "evasion_rate": report.evasion_rate,
               "evading_trials": sum(1 for t in report.trials if t.evaded),
               "iterations": cfg.iterations,
               "region_contrast": report.region_contrast,
               "report": str(report_path)}
    _emit(args, summary, [
        f"config: {json.dumps(echo)}",
        f"baseline face {doc['baseline']['rect']} neighbors={report.baseline.neighbors}",
        f"evasion rate {report.evasion_rate:.4f} "
        f"({summary['evading_trials']}/{cfg.iterations} trials)",
        f"region contrast (dense - sparse, evading): {report.region_contrast}",
        f"wrote {report_path} and heatmap PNGs",
    ])
    return EXIT_OK


def cmd_cloak(args, config) -> int:
    cfg = clk.CloakConfig(
        steps=_opt(args, config, "steps", 1000),
        learning_rate=_opt(args, config, "learning_rate", 0.05),
        background_scale=_opt(args, config, "background_scale", 0.5),
        working_size=_opt(args, config, "size", 256),
    )
    target = im.load_image(args.target)
    background = im.load_image(args.background)
    result = clk.optimize_alpha(target, background, cfg)
    out_png = Path(_opt(args, config, "out_png", None) or Path(args.out) / "cloak.png")
    trace_path = Path(_opt(args, config, "trace", None) or Path(args.out) / "cloak_trace.txt")
    out_png.parent.mkdir(parents=True, exist_ok=True)
    clk.export_cloak(result.background_scaled, result.alpha, out_png)
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    with open(trace_path, "w") as fh:
        for step, loss in result.loss_trace:
            fh.write(f"{step} {loss:.10e}\n")
    echo = {"command": "cloak", "target": args.target, "background": args.background,
            "steps": cfg.steps, "learning_rate": cfg.learning_rate,
            "background_scale": cfg.background_scale, "working_size": cfg.working_size}
    doc = {"config": echo, "final_mse": result.final_mse,
           "cloak_png": str(out_png), "trace": str(trace_path)}
    _emit(args, doc, [f"config: {json.dumps(echo)}",
                      f"final mse {result.final_mse:.6e}",
                      f"wrote {out_png} and {trace_path}"])
    return EXIT_OK


def cmd_verify(args, config) -> int:
    model, cascade_path = _load_model(args, config)
    params = _detector_params(args, config)
    ver = clk.verify_cloak(args.cloak_png, model, params.scale_factor,
                           params.min_neighbors, params.min_size)
    human, machine = ver.human_detections, ver.machine_detections
    if human and not machine:
        verdict, code = "cloak holds: human view detected, machine view evaded", EXIT_OK
    elif human and machine:
        verdict, code = "both views detected: machine view not disguised", EXIT_BOTH_DETECTED
    elif not human and not machine:
        verdict, code = "neither view detected: no face survives compositing", EXIT_NEITHER_DETECTED
    else:
        verdict, code = "only the machine view is detected (inverted cloak)", EXIT_MACHINE_ONLY
    echo = {"command": "verify", "cloak_png": args.cloak_png, "cascade": cascade_path,
            "detector": vars(params) | {}}
    doc = {"config": echo, "human_detections": _det_dicts(human),
           "machine_detections": _det_dicts(machine), "verdict": verdict,
           "exit_code": code}
    _emit(args, doc, [f"config: {json.dumps(echo)}",
                      f"human view: {len(human)} detection(s)",
                      f"machine view: {len(machine)} detection(s)",
                      verdict])
    return code


def cmd_flatten(args, config) -> int:
    img = im.load_image(args.image)
    if img.layout is not im.Layout.RGBA:
        return _fail("flatten expects an RGBA PNG", EXIT_IO)
    view = im.drop_alpha(img) if args.machine else im.flatten_alpha(img, tuple(args.background))
    out_image = Path(_opt(args, config, "out_image", None) or Path(args.out) / "view.png")
    out_image.parent.mkdir(parents=True, exist_ok=True)
    im.save_png(view, out_image)
    mode = "machine (alpha dropped)" if args.machine else "human (composited)"
    echo = {"command": "flatten", "image": args.image, "machine": bool(args.machine),
            "background": list(args.background)}
    _emit(args, {"config": echo, "view_png": str(out_image), "mode": mode},
          [f"config: {json.dumps(echo)}", f"wrote {mode} view to {out_image}"])
    return EXIT_OK


_COMMANDS = {
    "detect": cmd_detect,
    "perturb": cmd_perturb,
    "campaign": cmd_campaign,
    "cloak": cmd_cloak,
    "verify": cmd_verify,
    "flatten": cmd_flatten,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = _load_config(args)
    try:
        code = _COMMANDS[args.command](args, config)
    except (im.ImageError, cascade.CascadeError, OSError) as exc:
        return _fail(str(exc), EXIT_IO)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    return code


if __name__ == "__main__":
    sys.exit(main())
