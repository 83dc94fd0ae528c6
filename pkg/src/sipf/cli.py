"""Command-line surface.

Commands: ``features``, ``verify-invariance``, ``bingham sample|entropy|mode``,
``demo-wingtip``, ``train-toy``.  Exit codes: 0 success, 1 validation
failure, 2 invariance-check failure, 3 numeric failure.

Every command is deterministic given (input bytes, config, seed); files are
written atomically and floats are formatted with 17 significant digits so
output re-parses to bitwise-identical doubles.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bingham
from .cloudio import format_float, load_cloud, write_text_atomic
from .descriptors import (
    B1_SCORE_THRESHOLD,
    B2_DISTANCE_THRESHOLD_RAD,
    COINCIDENT_DISTANCE_FLOOR,
    DESCRIPTOR_MASKS,
    MASK_PPF,
    MASK_SIPF,
    ShadowCloud,
    shadow_of,
    sipf_field,
)
from .errors import (
    InvalidArgumentError,
    InvalidInputError,
    NumericError,
    SamplerStallError,
    SipfError,
)
from .geometry import PointCloud, UnitQuaternion, knn_graph, quat_to_matrix, random_rotation
from .lrf import FRAME_MODE_BARYCENTER, FRAME_MODE_NORMAL, try_build_all_lrfs
from .training import (
    DEFAULT_N_CLOUDS,
    DEFAULT_POINTS_PER_CLOUD,
    ToyTaskConfig,
    make_wingtip_dataset,
    metrics_to_jsonl,
    train_toy,
)

__all__ = ["main", "RunConfig", "load_config"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INVARIANCE = 2
EXIT_NUMERIC = 3

INVARIANCE_THRESHOLD = 1e-8
DEMO_SIPF_TARGET = 0.95
DEMO_PPF_CEILING = 0.60
_DATASET_SEED_OFFSET = 1000


@dataclass
class RunConfig:
    k: int = 20
    delta: float = 0.8
    descriptor_mask: str = MASK_SIPF
    seed: int = 0
    epochs: int = 200
    learning_rate: float = 0.15
    quadrature_order: int = bingham.DEFAULT_QUADRATURE_ORDER
    bingham_loss_kind: str = bingham.LOSS_ENTROPY


_CONFIG_FIELDS = {
    "k": (int, lambda v: v >= 1, ">= 1"),
    "delta": ((int, float), lambda v: v >= 0, ">= 0"),
    "descriptor_mask": (str, lambda v: v in DESCRIPTOR_MASKS, f"one of {DESCRIPTOR_MASKS}"),
    "seed": (int, lambda v: True, "an integer"),
    "epochs": (int, lambda v: v >= 1, ">= 1"),
    "learning_rate": ((int, float), lambda v: v > 0, "> 0"),
    "quadrature_order": (
        int,
        lambda v: v >= bingham.MIN_QUADRATURE_ORDER,
        f">= {bingham.MIN_QUADRATURE_ORDER}",
    ),
    "bingham_loss_kind": (
        str,
        lambda v: v in bingham.BINGHAM_LOSS_KINDS,
        f"one of {bingham.BINGHAM_LOSS_KINDS}",
    ),
}


def load_config(path: str | None) -> RunConfig:
    """Parse and validate a config file; unknown keys and bad values fail fast."""
    config = RunConfig()
    if path is None:
        return config
    try:
        with open(path, "r") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidInputError("config root must be a JSON object")
    for key, value in raw.items():
        if key not in _CONFIG_FIELDS:
            raise InvalidInputError(f"unknown config key {key!r}")
        types, check, hint = _CONFIG_FIELDS[key]
        if isinstance(value, bool) or not isinstance(value, types):
            raise InvalidInputError(f"config field {key!r} has wrong type {type(value).__name__}")
        if not check(value):
            raise InvalidInputError(f"config field {key!r} must be {hint}, got {value!r}")
        setattr(config, key, value)
    return config


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "k", None) is not None:
        if args.k < 1:
            raise InvalidArgumentError("--k must be >= 1")
        config.k = args.k
    if getattr(args, "mask", None) is not None:
        config.descriptor_mask = args.mask
    return config


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        write_text_atomic(out_path, text)


def _parse_quaternion(text: str) -> UnitQuaternion:
    parts = text.split(",")
    if len(parts) != 4:
        raise InvalidArgumentError("--rotation expects w,x,y,z")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise InvalidArgumentError(f"--rotation has a non-numeric component: {exc}") from exc
    return UnitQuaternion.from_array(values)


def _seeded_shadow_rotation(seed: int):
    """Mode of a Bingham distribution built from a seeded random 7-dim seed."""
    rng = np.random.default_rng(seed)
    params = bingham.BinghamParams(
        V=bingham.birdal_V(rng.standard_normal(4)),
        lambdas=bingham.lambda_from(rng.standard_normal(3)),
    )
    return quat_to_matrix(bingham.mode(params))


def _prepare_geometry(cloud: PointCloud, k: int):
    graph = knn_graph(cloud, k)
    mode_name = FRAME_MODE_NORMAL if cloud.normals is not None else FRAME_MODE_BARYCENTER
    frames, valid = try_build_all_lrfs(cloud, graph, mode_name)
    return graph, frames, valid


def cmd_features(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    cloud = load_cloud(args.input)
    graph, frames, valid = _prepare_geometry(cloud, config.k)
    if args.rotation is not None:
        rot = quat_to_matrix(_parse_quaternion(args.rotation))
    else:
        rot = _seeded_shadow_rotation(config.seed)
    shadow = shadow_of(cloud, frames, rot)
    # Points on the rotation axis coincide with their own shadow (the world
    # origin does so for every rotation); drop them like degenerate frames.
    moved = np.linalg.norm(shadow.points - cloud.points, axis=1) >= COINCIDENT_DISTANCE_FLOOR
    for i in np.nonzero(~valid)[0]:
        sys.stderr.write(f"warning: degenerate frame at point {int(i)}; rows omitted\n")
    for i in np.nonzero(valid & ~moved)[0]:
        sys.stderr.write(f"warning: shadow coincides with point {int(i)}; rows omitted\n")
    valid = valid & moved
    field = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF, valid=valid)
    n_bad = int((~valid).sum())
    if n_bad:
        sys.stderr.write(f"warning: {n_bad} point(s) omitted\n")
    lines = ["ref_index,nbr_index,ppf1,ppf2,ppf3,ppf4,sippf1,sippf2,sippf3,sippf4"]
    for r in range(len(cloud)):
        if not valid[r]:
            continue
        for col, j in enumerate(graph.indices[r]):
            if not valid[j]:
                continue
            row = field[r, col]
            lines.append(
                f"{r},{int(j)}," + ",".join(format_float(v) for v in row)
            )
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _rotate_field_inputs(cloud, frames, shadow, rotation):
    m = rotation.matrix
    cloud_r = PointCloud(
        points=cloud.points @ m,
        normals=None if cloud.normals is None else cloud.normals @ m,
    )
    frames_r = frames @ m
    shadow_r = ShadowCloud(points=shadow.points @ m, frames=shadow.frames @ m, rotation=shadow.rotation)
    return cloud_r, frames_r, shadow_r


def cmd_verify_invariance(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if args.trials < 1:
        raise InvalidArgumentError("--trials must be >= 1")
    cloud = load_cloud(args.input)
    graph, frames, valid = _prepare_geometry(cloud, config.k)
    if not valid.all():
        sys.stderr.write(f"warning: {int((~valid).sum())} degenerate frame(s); rows ignored\n")
    if args.rotation is not None:
        rot = quat_to_matrix(_parse_quaternion(args.rotation))
    else:
        rot = _seeded_shadow_rotation(config.seed)
    shadow = shadow_of(cloud, frames, rot)
    # Shadow-coincident points stay coincident under every joint rotation.
    moved = np.linalg.norm(shadow.points - cloud.points, axis=1) >= COINCIDENT_DISTANCE_FLOOR
    if not moved.all():
        sys.stderr.write(f"warning: {int((~moved).sum())} shadow-coincident point(s); rows ignored\n")
    valid = valid & moved
    keep = valid[graph.indices] & valid[:, None]
    base = sipf_field(cloud, frames, graph, shadow, mask=MASK_SIPF, valid=valid)[keep]
    # Trial rotations draw from a stream decoupled from the shadow seed: the
    # seed-derived mode is the raw seed quaternion composed with a fixed
    # half-turn, so a shared stream can make trial and shadow rotations agree
    # on axis points and produce exact coincidences.
    rng = np.random.default_rng([config.seed, 1])
    worst = 0.0
    for _ in range(args.trials):
        rnd = random_rotation(rng)
        cloud_r, frames_r, shadow_r = _rotate_field_inputs(cloud, frames, shadow, rnd)
        if args.break_shadow:
            shadow_r = shadow  # negative control: shadow left out of the joint rotation
        rotated = sipf_field(cloud_r, frames_r, graph, shadow_r, mask=MASK_SIPF, valid=valid)[keep]
        worst = max(worst, float(np.abs(rotated - base).max()))
    passed = worst <= INVARIANCE_THRESHOLD
    report = {
        "trials": args.trials,
        "max_abs_deviation": worst,
        "threshold": INVARIANCE_THRESHOLD,
        "break_shadow": bool(args.break_shadow),
        "pass": passed,
    }
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK if passed else EXIT_INVARIANCE


def _bingham_seed_from_args(args, config: RunConfig):
    if (args.z1 is None) != (args.z2 is None):
        raise InvalidArgumentError("--z1 and --z2 must be given together")
    if args.z1 is not None:
        try:
            z1 = [float(v) for v in args.z1.split(",")]
            z2 = [float(v) for v in args.z2.split(",")]
        except ValueError as exc:
            raise InvalidArgumentError(f"--z1/--z2 have a non-numeric component: {exc}") from exc
        if len(z1) != 4 or len(z2) != 3:
            raise InvalidArgumentError("--z1 needs 4 components and --z2 needs 3")
        return bingham.BinghamSeed(np.array(z1), np.array(z2)), None
    rng = np.random.default_rng(config.seed)
    seed = bingham.BinghamSeed(rng.standard_normal(4), rng.standard_normal(3))
    return seed, rng


def cmd_bingham(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    seed, rng = _bingham_seed_from_args(args, config)
    params = bingham.params_from_seed(seed)
    if args.bingham_cmd == "sample":
        if args.n < 1:
            raise InvalidArgumentError("-n must be >= 1")
        if rng is None:
            rng = np.random.default_rng(config.seed)
        samples = bingham.sample(params, rng, args.n)
        lines = ["w,x,y,z"]
        lines.extend(",".join(format_float(v) for v in q) for q in samples)
        _emit("\n".join(lines) + "\n", args.out)
    elif args.bingham_cmd == "entropy":
        res = bingham.normalization(params, config.quadrature_order)
        report = {
            "lambda": params.lambdas.tolist(),
            "F": res.F,
            "gradF": res.gradF.tolist(),
            "entropy": bingham.entropy(params, config.quadrature_order),
        }
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        q = bingham.mode(params)
        report = {
            "quaternion": [q.w, q.x, q.y, q.z],
            "matrix": quat_to_matrix(q).matrix.tolist(),
        }
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


def _run_toy(config: RunConfig, mask: str):
    dataset = make_wingtip_dataset(
        n_clouds=DEFAULT_N_CLOUDS,
        points_per_cloud=DEFAULT_POINTS_PER_CLOUD,
        noise_sigma=0.0,
        seed=config.seed + _DATASET_SEED_OFFSET,
    )
    toy = ToyTaskConfig(
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        k=config.k,
        delta=config.delta,
        descriptor_mask=mask,
        seed=config.seed,
        bingham_loss_kind=config.bingham_loss_kind,
        quadrature_order=config.quadrature_order,
    )
    return train_toy(dataset, toy)


def cmd_demo_wingtip(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    runs = [("sipf", MASK_SIPF), ("ppf", MASK_PPF)]
    extra = getattr(args, "mask", None)
    if extra is not None and extra not in (MASK_SIPF, MASK_PPF):
        runs.append((extra.replace("-", "_"), extra))
    summary = {}
    for name, mask in runs:
        result = _run_toy(config, mask)
        accs = [m["accuracy"] for m in result.metrics]
        write_text_atomic(
            os.path.join(out_dir, f"metrics-{mask}.jsonl"), metrics_to_jsonl(result.metrics)
        )
        summary[f"{name}_accuracy"] = max(accs)
        summary[f"{name}_final_accuracy"] = accs[-1]
        if name == "sipf":
            reached = [m["epoch"] for m in result.metrics if m["accuracy"] >= DEMO_SIPF_TARGET]
            summary["sipf_first_epoch_at_target"] = reached[0] if reached else None
            summary["b1_max_score"] = result.b1_max_score
            summary["b2_min_distance_rad"] = result.b2_min_distance_rad
    summary["collapse_confirmed"] = bool(
        summary["ppf_accuracy"] <= DEMO_PPF_CEILING
        and summary["sipf_accuracy"] >= DEMO_SIPF_TARGET
    )
    summary["degeneracy_flagged"] = bool(
        summary["b1_max_score"] > B1_SCORE_THRESHOLD
        or summary["b2_min_distance_rad"] < B2_DISTANCE_THRESHOLD_RAD
    )
    write_text_atomic(
        os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n"
    )
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    result = _run_toy(config, config.descriptor_mask)
    _emit(metrics_to_jsonl(result.metrics), args.out)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sipf",
        description="Rotation-invariant point-cloud descriptors with a learned shadow reference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_input):
        if needs_input:
            p.add_argument("--input", required=True, help="point-cloud file (.xyz or ascii .ply)")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--k", type=int, default=None, help="override neighborhood size")
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("features", help="export per-edge descriptors as CSV")
    add_common(p, needs_input=True)
    p.add_argument("--rotation", default=None, help="shadow rotation quaternion w,x,y,z")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("verify-invariance", help="check descriptor invariance under joint rotations")
    add_common(p, needs_input=True)
    p.add_argument("--rotation", default=None, help="shadow rotation quaternion w,x,y,z")
    p.add_argument("--trials", type=int, required=True, help="number of random rotations")
    p.add_argument(
        "--break-shadow",
        action="store_true",
        help="test-only: skip shadow co-rotation (negative control)",
    )
    p.set_defaults(func=cmd_verify_invariance)

    p = sub.add_parser("bingham", help="rotation-distribution utilities")
    bsub = p.add_subparsers(dest="bingham_cmd", required=True)
    for name, help_text in (
        ("sample", "draw quaternions as CSV"),
        ("entropy", "normalization constant, gradient, and entropy as JSON"),
        ("mode", "mode quaternion and rotation matrix as JSON"),
    ):
        bp = bsub.add_parser(name, help=help_text)
        bp.add_argument("--config", default=None)
        bp.add_argument("--seed", type=int, default=None)
        bp.add_argument("--k", type=int, default=None, help=argparse.SUPPRESS)
        bp.add_argument("--z1", default=None, help="explicit 4-dim seed a,b,c,d")
        bp.add_argument("--z2", default=None, help="explicit 3-dim seed a,b,c")
        bp.add_argument("--out", default=None)
        if name == "sample":
            bp.add_argument("-n", type=int, required=True, help="number of samples")
        bp.set_defaults(func=cmd_bingham)

    p = sub.add_parser("demo-wingtip", help="run the wing-tip collapse/rescue experiment")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mask", choices=DESCRIPTOR_MASKS, default=None, help="additional mask to run")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_demo_wingtip)

    p = sub.add_parser("train-toy", help="train once with the configured descriptor mask")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--mask", choices=DESCRIPTOR_MASKS, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train_toy)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericError, SamplerStallError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC
    except SipfError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
