"""
Command-line interface: scene generation, field generation, axis inference,
planning, single rollouts and evaluation sweeps.

Exit codes: 0 success, 1 usage or invalid value, 2 degenerate estimation,
3 I/O or file-format error. Results are printed as JSON on stdout; logs go
to stderr.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

import config
import data_handler
from errors import DegenerateGeometryError, FieldsFormatError, NoContactError, SceneParseError
from estimation import ClassifierMode, aggregate_axis, axis_errors, classify_articulation
from predictors import NoiseModel, ReplayPredictor, build_predictor
from rollout import (
    PolicyKind, PolicyParams, evaluate, h_sweep_grid, run_policy, select_contact, summarize, trace_frame,
)
from scene import JointType, OcclusionModel, generate_scenes, render_observation
from trajectory import TrajectoryParams, default_goal, part_deviation, plan_full_pose
import visualization

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEGENERATE = 2
EXIT_IO = 3

POLICY_CHOICES = [str(k) for k in PolicyKind] + ["ap_only"]


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(payload):
    print(json.dumps(payload, indent=2))


# ---------------------------------------------------------------------------
# Parameter bundles built from flags; the dataclasses validate every value


def _occlusion(args, seed, reference=False):
    base = args.base_dropout
    opening = args.opening_dropout
    if reference:
        base = config.REFERENCE_BASE_DROPOUT if base is None else base
        opening = config.REFERENCE_OPENING_DROPOUT if opening is None else opening
    return OcclusionModel(base_dropout=base or 0.0, opening_coupled_dropout=opening or 0.0, seed=seed)


def _noise(args, seed, reference=False):
    """Preset name when no override flag is given, otherwise an explicit NoiseModel."""
    name = args.noise or ("reference" if reference else "exact")
    overrides = {
        "flow_sigma": args.flow_sigma,
        "proj_sigma": args.proj_sigma,
        "proj_shrink_sigma": args.proj_shrink_sigma,
        "proj_bias_deg": args.proj_bias,
        "occlusion_flip_gain": args.flip_gain,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return name
    return replace(NoiseModel.from_preset(name, seed=seed), **overrides)


def _policy(args, kind):
    use_gs = args.gs and kind != "ap_only"
    kind = PolicyKind.MPC if kind == "ap_only" else PolicyKind(kind)
    if kind is PolicyKind.MPC:
        H = config.DEFAULT_H if args.H is None else args.H
    else:
        # af_only replans every step; no_mpc runs the whole plan
        H = 1
    return PolicyParams(
        H=H,
        K=args.K,
        phi_goal=args.phi_goal,
        l_goal=args.l_goal,
        max_steps=args.max_steps,
        use_gs=use_gs,
        use_mask=args.mask,
        classifier_mode=args.classifier,
        policy_kind=kind,
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_make_scenes(args):
    if args.count < 1:
        raise ValueError(f"--count must be >= 1, got {args.count}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for scene in generate_scenes(args.count, args.seed, sample_count=args.sample_count):
        path = out_dir / f"{scene.name}{data_handler.SCENE_SUFFIX}"
        data_handler.save_scene(path, scene)
        written.append(str(path))
    logger.info("wrote %d scenes to %s", len(written), out_dir)
    _emit({"scenes": written})
    return EXIT_OK


def cmd_gen(args):
    scene = data_handler.load_scene(args.scene, strict=not args.lenient)
    joint = scene.target_joint
    q = joint.limit_lower if args.q is None else args.q
    joint.check(q)
    obs = render_observation(scene, q, _occlusion(args, args.seed))
    fields = build_predictor(_noise(args, args.seed), seed=args.seed)(scene, obs, 0)
    data_handler.write_fields_csv(args.out, obs, fields)
    _emit({"out": str(args.out), "points": len(obs), "masked": obs.masked_count, "q": q})
    return EXIT_OK


def cmd_infer(args):
    obs, fields = data_handler.read_fields_csv(args.fields)
    if args.type == "auto":
        articulation = classify_articulation(obs, fields, ClassifierMode.HEURISTIC)
    else:
        articulation = JointType(args.type)
    estimate = aggregate_axis(obs, fields, articulation, use_gs=args.gs, use_mask=args.mask)
    payload = data_handler.axis_to_dict(estimate)
    if args.out:
        data_handler.write_axis_json(args.out, estimate)
    if args.scene:
        scene = data_handler.load_scene(args.scene, strict=not args.lenient)
        angle, distance = axis_errors(estimate, scene.target_joint)
        payload["angle_error"] = angle
        payload["distance_error"] = distance
        if args.deviation_angle is not None:
            payload["deviation"] = part_deviation(
                obs.points[fields.mask], estimate, scene.target_joint, args.deviation_angle
            )
    elif args.deviation_angle is not None:
        raise ValueError("--deviation-angle needs --scene")
    _emit(payload)
    return EXIT_OK


def cmd_plan(args):
    estimate = data_handler.read_axis_json(args.axis)
    if args.contact is not None:
        contact = np.array(args.contact, dtype=float)
    elif args.fields is not None:
        obs, fields = data_handler.read_fields_csv(args.fields)
        contact = obs.points[select_contact(obs, fields.flow)]
    else:
        raise ValueError("plan needs --contact X Y Z or --fields")

    phi_goal, l_goal = args.phi_goal, args.l_goal
    if phi_goal is None or l_goal is None:
        if not args.scene:
            raise ValueError("plan needs --phi-goal/--l-goal or --scene for the default goal")
        joint = data_handler.load_scene(args.scene, strict=not args.lenient).target_joint
        q = joint.limit_lower if args.q is None else args.q
        joint.check(q)
        phi_goal = default_goal(joint, q) if phi_goal is None else phi_goal
        l_goal = default_goal(joint, q) if l_goal is None else l_goal

    params = TrajectoryParams(K=args.K, phi_goal=phi_goal, l_goal=l_goal)
    plan = plan_full_pose(contact, np.eye(3), estimate, params)
    data_handler.write_trajectory_csv(args.out, plan)
    _emit({"out": str(args.out), "kind": str(plan.kind), "waypoints": len(plan.waypoints)})
    return EXIT_OK


def cmd_rollout(args):
    scene = data_handler.load_scene(args.scene, strict=not args.lenient)
    params = _policy(args, args.policy)
    occ = _occlusion(args, args.seed, reference=args.reference)
    if args.replay:
        predictor = ReplayPredictor(args.replay)
    else:
        predictor = build_predictor(_noise(args, args.seed, reference=args.reference), seed=args.seed)
    result = run_policy(scene, predictor, occ, params)

    trace = trace_frame(result)
    if args.trace_out:
        data_handler.write_trace_csv(args.trace_out, trace)
    if args.plan_out:
        if result.first_plan is None:
            raise DegenerateGeometryError("rollout produced no plan")
        data_handler.write_trajectory_csv(args.plan_out, result.first_plan)
    if args.html:
        visualization.write_report_html(args.html, [visualization.create_contact_scatter(trace)], title=scene.name)

    _emit({
        "scene": scene.name,
        "policy": params.label,
        "predictor": predictor.label,
        "H": params.H,
        "normalized_distance": result.normalized_distance,
        "success": result.success,
        "steps": result.steps_executed,
        "replans": result.replan_count,
        "contact_index": result.contact_index,
        "q_init": result.q_init,
        "q_goal": result.q_goal,
        "q_end": result.q_end,
        "dq_var": result.dq_variance,
    })
    return EXIT_OK


def _eval_grid(args):
    policies = [p.strip() for p in args.policy.split(",") if p.strip()]
    for p in policies:
        if p not in POLICY_CHOICES:
            raise ValueError(f"unknown policy '{p}', choose from {POLICY_CHOICES}")
    if args.H_sweep:
        grid = h_sweep_grid(args.H_sweep, base=_policy(args, PolicyKind.MPC))
        grid += [_policy(args, p) for p in policies if p not in (PolicyKind.MPC, PolicyKind.OPEN_LOOP)]
    else:
        grid = [_policy(args, p) for p in policies]
    if args.ablate_gs:
        grid += [replace(g, use_gs=False) for g in grid if g.policy_kind is PolicyKind.MPC and g.use_gs]
    if args.ablate_mask:
        grid += [replace(g, use_mask=False) for g in grid if g.policy_kind is not PolicyKind.FLOW_FOLLOWING]
    unique = []
    for g in grid:
        if g not in unique:
            unique.append(g)
    return unique


def cmd_eval(args):
    scenes = data_handler.load_scene_dir(args.scene_dir, strict=not args.lenient)
    if args.trials < 1:
        raise ValueError(f"--trials must be >= 1, got {args.trials}")
    if args.workers < 1:
        raise ValueError(f"--workers must be >= 1, got {args.workers}")
    grid = _eval_grid(args)
    noise = _noise(args, args.base_seed, reference=args.reference)
    occ = _occlusion(args, args.base_seed, reference=args.reference)
    result = evaluate(
        scenes, noise, occ, grid, args.trials, args.base_seed, workers=args.workers, progress=args.progress,
    )
    out = Path(args.out)
    data_handler.write_metrics_csv(out, result.metrics)
    summary_path = out.with_name(out.stem + "_summary.csv")
    result.summary.to_csv(summary_path, index=False, float_format=config.FLOAT_FORMAT)
    if args.profile_out:
        result.profile.to_csv(args.profile_out, index=False, float_format=config.FLOAT_FORMAT)
    if args.xlsx:
        data_handler.save_workbook(
            {
                "metrics": result.metrics,
                "summary": result.summary,
                "by_type": summarize(result.metrics, by_type=True),
                "profile": result.profile,
            },
            path=args.xlsx,
        )
    if args.html:
        visualization.write_report_html(args.html, visualization.build_report_figures(result))
    if args.emit_gnuplot:
        visualization.write_gnuplot_script(out.with_suffix(".gp"), summary_path)

    _emit({"metrics": str(out), "summary": result.summary.to_dict(orient="records")})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_noise_flags(parser):
    parser.add_argument("--noise", default=None, choices=sorted(config.NOISE_PRESETS),
                        help="Predictor noise preset, default exact")
    parser.add_argument("--flow-sigma", type=float, default=None, help="Override: flow rotation scale (rad)")
    parser.add_argument("--proj-sigma", type=float, default=None, help="Override: relative projection noise")
    parser.add_argument("--proj-bias", type=float, default=None, help="Override: projection tilt (deg)")
    parser.add_argument("--proj-shrink-sigma", type=float, default=None,
                        help="Override: per-prediction projection shrink scale")
    parser.add_argument("--flip-gain", type=float, default=None, help="Override: occlusion-coupled flow flips")


def _add_lenient_flag(parser):
    parser.add_argument("--lenient", action="store_true",
                        help="Skip unknown scene elements with a warning instead of failing")


def _add_occlusion_flags(parser):
    parser.add_argument("--base-dropout", type=float, default=None)
    parser.add_argument("--opening-dropout", type=float, default=None)


def _add_policy_flags(parser):
    parser.add_argument("--H", type=int, default=None, help="Waypoints executed per replan")
    parser.add_argument("--K", type=int, default=config.DEFAULT_K, help="Waypoints per plan")
    parser.add_argument("--phi-goal", type=float, default=None)
    parser.add_argument("--l-goal", type=float, default=None)
    parser.add_argument("--max-steps", type=int, default=config.DEFAULT_MAX_STEPS)
    parser.add_argument("--gs", action=argparse.BooleanOptionalAction, default=True,
                        help="Gram-Schmidt correction of projections")
    parser.add_argument("--mask", action=argparse.BooleanOptionalAction, default=True,
                        help="Aggregate over the segmentation mask only")
    parser.add_argument("--classifier", choices=[str(m) for m in ClassifierMode], default="oracle")
    parser.add_argument("--reference", action="store_true",
                        help="Reference occlusion and noise unless set explicitly")


def build_parser():
    parser = _Parser(prog="articulation-tracker", description="Articulated object axis estimation and opening policies.")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-scenes", help="Generate door and drawer scene files")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sample-count", type=int, default=config.DEFAULT_SAMPLE_COUNT)
    p.set_defaults(func=cmd_make_scenes)

    p = sub.add_parser("gen", help="Render an observation and write its fields CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--q", type=float, default=None, help="Joint value, default closed")
    p.add_argument("--seed", type=int, default=0, help="Occlusion and noise seed")
    p.add_argument("--out", required=True)
    _add_lenient_flag(p)
    _add_occlusion_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("infer", help="Estimate the articulation axis from a fields CSV")
    p.add_argument("--fields", required=True)
    p.add_argument("--type", choices=["revolute", "prismatic", "auto"], default="revolute")
    p.add_argument("--gs", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--mask", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", default=None, help="Also write the axis JSON here")
    p.add_argument("--scene", default=None, help="Report errors against this scene's joint")
    p.add_argument("--deviation-angle", type=float, default=None,
                   help="Report part deviation for this joint motion (needs --scene)")
    _add_lenient_flag(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plan", help="Plan a trajectory from an axis JSON")
    p.add_argument("--axis", required=True)
    p.add_argument("--contact", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"))
    p.add_argument("--fields", default=None, help="Grasp the max-flow point of this fields CSV")
    p.add_argument("--K", type=int, default=config.DEFAULT_K)
    p.add_argument("--phi-goal", type=float, default=None)
    p.add_argument("--l-goal", type=float, default=None)
    p.add_argument("--scene", default=None, help="Scene for the default goal")
    p.add_argument("--q", type=float, default=None, help="Joint value for the default goal")
    p.add_argument("--out", required=True)
    _add_lenient_flag(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("rollout", help="Run one policy rollout")
    p.add_argument("--scene", required=True)
    p.add_argument("--policy", choices=POLICY_CHOICES, default=str(PolicyKind.MPC))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--plan-out", default=None, help="Write the first plan as a trajectory CSV")
    p.add_argument("--html", default=None, help="Write a contact path chart")
    p.add_argument("--replay", default=None, metavar="FIELDS",
                   help="Serve this recorded fields CSV at every replan instead of a noise model")
    _add_lenient_flag(p)
    _add_policy_flags(p)
    _add_occlusion_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="Evaluate policies over a scene directory")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out", required=True, help="Metrics CSV")
    p.add_argument("--policy", default=str(PolicyKind.MPC), help="Comma-separated policies")
    p.add_argument("--H-sweep", default=None, help='Horizons such as "1,3,5,7,9,nompc"')
    p.add_argument("--ablate-gs", action="store_true")
    p.add_argument("--ablate-mask", action="store_true")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--profile-out", default=None)
    p.add_argument("--xlsx", default=None)
    p.add_argument("--html", default=None)
    p.add_argument("--emit-gnuplot", action="store_true")
    p.add_argument("--progress", action="store_true")
    _add_lenient_flag(p)
    _add_policy_flags(p)
    _add_occlusion_flags(p)
    _add_noise_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code or EXIT_OK

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="[%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DegenerateGeometryError, NoContactError) as e:
        logger.error("degenerate estimation: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, SceneParseError, FieldsFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
