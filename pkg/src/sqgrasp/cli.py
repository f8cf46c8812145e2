"""Command-line front end: one subcommand per pipeline stage.

Every subcommand reads a JSON run configuration (``--config``), applies flag
overrides, writes its artifact under ``--out`` with a stable file name and
echoes the resolved configuration to ``config.resolved.json``.

Exit status: 0 on success, 2 on configuration or input errors (including
unknown flags), 3 when planning finds no valid grasp, 1 on other failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .decompose import DecompositionConfig, marching_primitives, report_json
from .errors import ConfigurationError, MeshFormatError, SqGraspError
from .geometry import procedural
from .geometry.mesh import load_mesh
from .geometry.pose import Pose
from .graspgen import GripperModel, SamplingConfig, candidates_on_sq, dumps_candidates, \
    loads_candidates
from .planner import EvaluationConfig, PlanRequest, evaluate_object, plan_grasps, report_csv, \
    report_rows
from .sdfgrid import RESOLUTION_RANGE, build_sdf, dump_grid, load_grid
from .superquadric import dumps_sq_set, loads_sq_set
from .validate import GraspValidator, ValidationConfig, dumps_validated

log = logging.getLogger("sqgrasp")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_EMPTY_PLAN = 3

SDF_FILE = "sdf.bin"
SQS_FILE = "sqs.json"
DECOMPOSITION_FILE = "decomposition.json"
CANDIDATES_FILE = "candidates.json"
VALIDATED_FILE = "validated.json"
PLAN_FILE = "plan.json"
REPORT_FILE = "report.csv"
VIEWPOINTS_FILE = "viewpoints.json"
CONFIG_ECHO_FILE = "config.resolved.json"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


@dataclass
class RunConfig:
    """Everything one CLI invocation needs.

    ``mesh_path`` names a mesh file; alternatively ``fixture`` names one of
    the built-in procedural objects (used by tests and demos).
    """

    mesh_path: str | None = None
    fixture: str | None = None
    name: str | None = None
    scale: float = 1.0
    resolution: int = 100
    seed: int = 0
    candidate_budget: int = 50
    decomposition: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    validation: dict = field(default_factory=dict)
    gripper: dict = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64 or int(self.seed) != self.seed:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive")
        lo, hi = RESOLUTION_RANGE
        if int(self.resolution) != self.resolution or not lo <= self.resolution <= hi:
            raise ConfigurationError(f"resolution must be an integer in [{lo}, {hi}]")
        if int(self.candidate_budget) != self.candidate_budget or self.candidate_budget < 1:
            raise ConfigurationError("candidate_budget must be a positive integer")
        if self.fixture is not None and self.fixture not in procedural.CORPUS:
            raise ConfigurationError(
                f"unknown fixture {self.fixture!r}; choose from {sorted(procedural.CORPUS)}")
        if self.mesh_path is not None and self.fixture is not None:
            raise ConfigurationError("give either mesh_path or fixture, not both")
        self.seed = int(self.seed)
        # build the typed blocks once so bad values surface as configuration errors
        self.decomposition_config()
        self.sampling_config()
        self.validation_config()
        self.gripper_model()

    @property
    def object_name(self):
        if self.name:
            return self.name
        if self.fixture:
            return self.fixture
        if self.mesh_path:
            return Path(self.mesh_path).stem
        return "object"

    def _typed(self, cls, block, label):
        try:
            return cls(**block)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid {label} block: {exc}") from exc

    def decomposition_config(self):
        d = dict(self.decomposition)
        for k in ("exponent_bounds", "axis_bounds"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return self._typed(DecompositionConfig, d, "decomposition")

    def sampling_config(self):
        return self._typed(SamplingConfig, self.sampling, "sampling")

    def validation_config(self):
        return self._typed(ValidationConfig, self.validation, "validation")

    def gripper_model(self):
        return self._typed(GripperModel, self.gripper, "gripper")

    def evaluation_config(self):
        return EvaluationConfig(self.resolution, self.candidate_budget,
                                self.decomposition_config(), self.sampling_config(),
                                self.validation_config())

    def resolved_dict(self):
        return {
            "mesh_path": self.mesh_path, "fixture": self.fixture, "name": self.object_name,
            "scale": self.scale, "resolution": self.resolution, "seed": self.seed,
            "candidate_budget": self.candidate_budget,
            "decomposition": self.decomposition_config().to_dict(),
            "sampling": self.sampling_config().to_dict(),
            "validation": self.validation_config().to_dict(),
            "gripper": self.gripper_model().to_dict(),
            "out": self.out,
        }


def load_run_config(path, overrides):
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a single JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


# --------------------------------------------------------------------------- stage helpers


def _load_object(cfg):
    if cfg.fixture is not None:
        mesh = procedural.CORPUS[cfg.fixture]()
        if cfg.scale != 1.0:
            mesh = mesh.transformed(Pose.identity(), cfg.scale)
        return mesh
    if cfg.mesh_path is None:
        raise ConfigurationError("no mesh: set mesh_path (or fixture) in the config or flags")
    if not Path(cfg.mesh_path).exists():
        raise ConfigurationError(f"mesh file not found: {cfg.mesh_path}")
    return load_mesh(cfg.mesh_path, scale=cfg.scale)


def _input_path(explicit, out, default_name, what):
    p = Path(explicit) if explicit else out / default_name
    if not p.exists():
        raise ConfigurationError(f"{what} not found at {p}; run the earlier stage or pass it")
    return p


def _write(out, name, text):
    p = out / name
    p.write_text(text)
    log.info("wrote %s", p)
    return p


def _grid_for(cfg, args, out):
    if args.sdf or (out / SDF_FILE).exists():
        return load_grid(_input_path(args.sdf, out, SDF_FILE, "SDF grid"))
    grid = build_sdf(_load_object(cfg), cfg.resolution)
    dump_grid(grid, out / SDF_FILE)
    return grid


def cmd_sdf(cfg, args, out):
    grid = build_sdf(_load_object(cfg), cfg.resolution)
    dump_grid(grid, out / SDF_FILE)
    log.info("grid dims %s spacing %.6g", grid.dims, grid.spacing)
    return EXIT_OK


def cmd_decompose(cfg, args, out):
    grid = _grid_for(cfg, args, out)
    dcfg = cfg.decomposition_config()
    dec = marching_primitives(grid, dcfg)
    _write(out, SQS_FILE, dumps_sq_set(dec.primitives))
    _write(out, DECOMPOSITION_FILE, report_json(dec, grid))
    args.echo["decomposition"] = dcfg.resolved(grid).to_dict()
    return EXIT_OK


def cmd_sample(cfg, args, out):
    sqs = loads_sq_set(_input_path(args.sqs, out, SQS_FILE, "superquadric set").read_text())
    gripper, scfg = cfg.gripper_model(), cfg.sampling_config()
    cands, rejected = [], 0
    for i, sq in enumerate(sqs):
        c = candidates_on_sq(sq, gripper, scfg, i)
        rejected += c.rejected_width
        cands.extend(c)
    log.info("%d candidates, %d rejected for width", len(cands), rejected)
    _write(out, CANDIDATES_FILE, dumps_candidates(cands))
    return EXIT_OK


def cmd_validate(cfg, args, out):
    cands = loads_candidates(
        _input_path(args.candidates, out, CANDIDATES_FILE, "candidate set").read_text())
    v = GraspValidator(_load_object(cfg), cfg.gripper_model(), cfg.validation_config(), cfg.seed)
    res = [v.validate(c) for c in cands]
    log.info("%d of %d candidates valid", sum(r.valid for r in res), len(res))
    _write(out, VALIDATED_FILE, dumps_validated(res))
    return EXIT_OK


def cmd_plan(cfg, args, out):
    if args.gripper_pose is None:
        raise ConfigurationError("plan needs --gripper-pose (12 values)")
    try:
        pose = Pose.from_list(args.gripper_pose)
    except ValueError as exc:
        raise ConfigurationError(f"bad --gripper-pose: {exc}") from exc
    sqs = loads_sq_set(_input_path(args.sqs, out, SQS_FILE, "superquadric set").read_text())
    if not sqs:
        raise ConfigurationError("superquadric set is empty")
    mesh = _load_object(cfg)
    req = PlanRequest(pose, cfg.candidate_budget, cfg.sampling_config(), cfg.validation_config())
    v = GraspValidator(mesh, cfg.gripper_model(), cfg.validation_config(), cfg.seed)
    result = plan_grasps(sqs, mesh, cfg.gripper_model(), req, v)
    _write(out, VALIDATED_FILE, dumps_validated(result.grasps))
    _write(out, PLAN_FILE, result.tally_json())
    if not result.valid:
        print(result.tally_json())
        return EXIT_EMPTY_PLAN
    return EXIT_OK


def cmd_evaluate(cfg, args, out):
    from .plotting import plot_scene, plot_viewpoint_counts

    mesh = _load_object(cfg)
    ecfg = cfg.evaluation_config()
    result = evaluate_object(mesh, cfg.gripper_model(), ecfg, cfg.seed, cfg.object_name)
    _write(out, REPORT_FILE, report_csv(report_rows(result)))
    _write(out, VIEWPOINTS_FILE, json.dumps(result.detail(), indent=2))
    _write(out, SQS_FILE, dumps_sq_set(result.decomposition.primitives))
    if not args.no_figures:
        plot_viewpoint_counts(result, out / "report_counts.png", cfg.candidate_budget)
        plot_scene(result, mesh, out / "report_scene.png")
    return EXIT_OK


COMMANDS = {"sdf": cmd_sdf, "decompose": cmd_decompose, "sample": cmd_sample,
            "validate": cmd_validate, "plan": cmd_plan, "evaluate": cmd_evaluate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="sqgrasp", description="Superquadric grasp planning pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--mesh", dest="mesh_path", help="mesh file (OBJ, PLY or STL)")
        s.add_argument("--fixture", help="built-in procedural object instead of a mesh")
        s.add_argument("--scale", type=float)
        s.add_argument("--resolution", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        s.add_argument("--budget", dest="candidate_budget", type=int)
        if name in ("decompose",):
            s.add_argument("--sdf", help=f"grid file (default: OUT/{SDF_FILE})")
        if name in ("sample", "plan"):
            s.add_argument("--sqs", help=f"superquadric set (default: OUT/{SQS_FILE})")
        if name == "validate":
            s.add_argument("--candidates", help=f"candidate set (default: OUT/{CANDIDATES_FILE})")
        if name == "plan":
            s.add_argument("--gripper-pose", type=float, nargs=12, metavar="V",
                           help="row-major rotation (9) then translation (3)")
        if name == "evaluate":
            s.add_argument("--no-figures", action="store_true")
    return p


def _setup_logging():
    level = os.environ.get("SUPERQ_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f"SUPERQ_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigurationError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        _set_threads(args.threads)
        overrides = {k: getattr(args, k, None) for k in
                     ("mesh_path", "fixture", "scale", "resolution", "seed", "candidate_budget",
                      "out")}
        cfg = load_run_config(args.config, overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        args.echo = {}
        status = COMMANDS[args.command](cfg, args, out)
        echo = cfg.resolved_dict()
        echo.update(args.echo)
        echo["command"] = args.command
        _write(out, CONFIG_ECHO_FILE, json.dumps(echo, indent=2))
        return status
    except (ConfigurationError, MeshFormatError) as exc:
        print(f"sqgrasp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SqGraspError as exc:
        print(f"sqgrasp: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
