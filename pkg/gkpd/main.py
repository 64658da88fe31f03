"""
Command-line entry point.

    python -m gkpd.main pipeline --input points.csv --output-dir run/

Every subcommand wraps one module; ``pipeline`` chains them and writes the
fixed artifact layout below. Exit codes: 0 success (certificate passed),
1 error, 2 certificate failed.
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, get_args

from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import (
    compare_service,
    filtration_service,
    harness_service,
    persistence_service,
    rff_service,
)
from .kernel_service import KernelConfig, WeightedPointCloud
from .services import (
    DEFAULT_CONSTANT,
    DEFAULT_D_MAX,
    DEFAULT_DELTA,
    DEFAULT_EPSILON,
    DEFAULT_SEED,
    DEFAULT_SIGMA,
    DEFAULT_SLACK,
    DEFAULT_THREADS,
    LOG_LEVEL,
    InputError,
    derive_seed,
    get_array_hash,
    load_config_file,
    read_points_csv,
    write_json,
    write_points_csv,
    write_vector_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERTIFICATE_FAILED = 2

# Pipeline artifacts, relative to the output directory
WEIGHTS_FILE = "weights.csv"
RFF_MAP_FILE = "rff_map.json"
EMBEDDED_FILE = "embedded.csv"
EMBEDDED_WEIGHTS_FILE = "embedded_weights.csv"
COMPLEX_GKPD_FILE = "complex_gkpd.txt"
COMPLEX_IMAGE_FILE = "complex_image.txt"
DIAGRAM_GKPD_FILE = "diagram_gkpd.json"
DIAGRAM_GKPD_CSV = "diagram_gkpd.csv"
DIAGRAM_IMAGE_FILE = "diagram_image.json"
DIAGRAM_IMAGE_CSV = "diagram_image.csv"
REPORT_FILE = "distortion_report.json"
CERTIFICATE_FILE = "certificate.json"

EMBED_FILES = [RFF_MAP_FILE, EMBEDDED_FILE, EMBEDDED_WEIGHTS_FILE]
PIPELINE_FILES = [
    WEIGHTS_FILE, *EMBED_FILES,
    COMPLEX_GKPD_FILE, COMPLEX_IMAGE_FILE,
    DIAGRAM_GKPD_FILE, DIAGRAM_GKPD_CSV, DIAGRAM_IMAGE_FILE, DIAGRAM_IMAGE_CSV,
    REPORT_FILE, CERTIFICATE_FILE,
]

# Lowest-precedence values; the config file and then flags override them
ENV_DEFAULTS: Dict[str, Any] = {
    "sigma": DEFAULT_SIGMA,
    "epsilon": DEFAULT_EPSILON,
    "delta": DEFAULT_DELTA,
    "constant": DEFAULT_CONSTANT,
    "d_max": DEFAULT_D_MAX,
    "value_cap": None,
    "t_override": None,
    "mode": "point-count",
    "diameter_ratio": None,
    "seed": DEFAULT_SEED,
    "slack": DEFAULT_SLACK,
    "threads": DEFAULT_THREADS,
}


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., gt=0)
    epsilon: float = Field(..., gt=0, lt=1)
    delta: float = Field(..., gt=0, lt=1)
    constant: float = Field(..., gt=0)
    d_max: int = Field(..., ge=0)
    value_cap: Optional[float] = None
    t_override: Optional[int] = Field(None, ge=2)
    mode: rff_service.DimensionMode = "point-count"
    diameter_ratio: Optional[float] = Field(None, gt=0)
    seed: int = Field(..., ge=0)
    slack: float = Field(..., ge=0)
    threads: int = Field(1, ge=1)
    input_path: Path
    output_dir: Path

    @model_validator(mode="after")
    def _check_dimension_settings(self):
        if self.t_override is not None and self.t_override % 2:
            raise ValueError(f"t_override must be even, got {self.t_override}")
        if self.t_override is None and self.mode == "diameter" and self.diameter_ratio is None:
            raise ValueError("diameter mode requires diameter_ratio")
        return self


def _settings(args: argparse.Namespace, keys: Iterable[str]) -> Dict[str, Any]:
    """Merge environment defaults, the config file and command-line flags, in that order."""
    keys = list(keys)
    merged = {key: ENV_DEFAULTS.get(key) for key in keys}
    file_values = load_config_file(args.config)
    unused = sorted(set(file_values) - set(keys))
    if unused:
        logger.debug(f"CONFIG_KEYS_IGNORED | COMMAND: {args.command} | KEYS: {unused}")
    merged.update({key: value for key, value in file_values.items() if key in merged})
    merged.update({
        key: getattr(args, key) for key in keys if getattr(args, key, None) is not None
    })
    return merged


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    settings = _settings(args, ENV_DEFAULTS)
    return PipelineConfig(**settings, input_path=args.input, output_dir=args.output_dir)


def _guard_outputs(paths: List[Path], force: bool) -> None:
    """Refuse to overwrite existing artifacts unless forced."""
    if not force:
        existing = [str(p) for p in paths if p.exists()]
        if existing:
            raise InputError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    for path in paths:
        path.parent.mkdir(parents=True, exist_ok=True)


def _load_cloud(path: Path, sigma: float) -> WeightedPointCloud:
    points = read_points_csv(path)
    return WeightedPointCloud.from_points(points, KernelConfig(sigma=sigma))


def _target_dimension(config: PipelineConfig, n: int, dimension: int) -> int:
    if config.t_override is not None:
        logger.info(f"TARGET_DIMENSION | MODE: override | T: {config.t_override}")
        return config.t_override
    request = rff_service.TargetDimensionRequest(
        mode=config.mode,
        n=n,
        diameter_ratio=config.diameter_ratio,
        dimension=dimension,
        epsilon=config.epsilon,
        delta=config.delta,
        constant=config.constant,
    )
    return rff_service.target_dimension(request)


def _embed(config: PipelineConfig, cloud: WeightedPointCloud, output_dir: Path):
    t = _target_dimension(config, cloud.n, cloud.dimension)
    rff_map = rff_service.sample_rff(
        cloud.dimension, t, cloud.config, derive_seed(config.seed, "rff")
    )
    image = rff_service.embed_cloud(cloud, rff_map)
    rff_service.save_rff_map(output_dir / RFF_MAP_FILE, rff_map)
    write_points_csv(output_dir / EMBEDDED_FILE, image.points)
    write_vector_csv(output_dir / EMBEDDED_WEIGHTS_FILE, image.weights)
    return rff_map, image


def _write_diagram(json_path: Path, csv_path: Optional[Path], diagram) -> None:
    persistence_service.write_diagram(json_path, diagram)
    if csv_path is not None:
        persistence_service.write_diagram_csv(csv_path, diagram)


def cmd_generate(args: argparse.Namespace) -> int:
    settings = _settings(args, ["seed"])
    output = Path(args.output)
    _guard_outputs([output], args.force)
    spec = harness_service.DatasetSpec(
        kind=args.kind,
        n=args.n,
        dim=args.dim,
        noise=args.noise,
        outliers=args.outliers,
        radius=args.radius,
        clusters=args.clusters,
        seed=derive_seed(int(settings["seed"]), "dataset"),
    )
    write_points_csv(output, harness_service.generate(spec))
    return EXIT_OK


def cmd_weights(args: argparse.Namespace) -> int:
    settings = _settings(args, ["sigma"])
    output = Path(args.output)
    _guard_outputs([output], args.force)
    cloud = _load_cloud(Path(args.input), float(settings["sigma"]))
    write_vector_csv(output, cloud.weights)
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    _guard_outputs([config.output_dir / name for name in EMBED_FILES], args.force)
    cloud = _load_cloud(config.input_path, config.sigma)
    _embed(config, cloud, config.output_dir)
    return EXIT_OK


def cmd_filtration(args: argparse.Namespace) -> int:
    settings = _settings(args, ["sigma", "d_max", "value_cap", "threads"])
    output = Path(args.output)
    _guard_outputs([output], args.force)
    if args.filtration_mode == "gkpd":
        cloud = _load_cloud(Path(args.input), float(settings["sigma"]))
    else:
        cloud = rff_service.WeightedImageCloud.from_images(read_points_csv(Path(args.input)))
    cap = settings["value_cap"]
    complex_ = filtration_service.build_filtration(
        cloud,
        d_max=int(settings["d_max"]),
        value_cap=None if cap is None else float(cap),
        mode=args.filtration_mode,
        threads=int(settings["threads"]),
    )
    filtration_service.write_complex(output, complex_)
    return EXIT_OK


def cmd_persistence(args: argparse.Namespace) -> int:
    output = Path(args.output)
    csv_path = Path(args.csv) if args.csv else None
    _guard_outputs([output] + ([csv_path] if csv_path else []), args.force)
    complex_ = filtration_service.read_complex(Path(args.input))
    diagram = persistence_service.compute_persistence(
        complex_, keep_zero=args.keep_zero, clearing=args.clearing
    )
    _write_diagram(output, csv_path, diagram)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    settings = _settings(args, ["epsilon", "slack"])
    output = Path(args.output)
    _guard_outputs([output], args.force)
    certificate = compare_service.certify_interleaving(
        persistence_service.read_diagram(Path(args.reference)),
        persistence_service.read_diagram(Path(args.candidate)),
        epsilon=float(settings["epsilon"]),
        slack=float(settings["slack"]),
    )
    write_json(output, certificate.to_document())
    return EXIT_OK if certificate.passed else EXIT_CERTIFICATE_FAILED


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    out = config.output_dir
    _guard_outputs([out / name for name in PIPELINE_FILES], args.force)
    start_time = time.time()

    cloud = _load_cloud(config.input_path, config.sigma)
    logger.info(
        f"PIPELINE_START | INPUT_HASH: {get_array_hash(cloud.points)} | N: {cloud.n} | "
        f"D: {cloud.dimension} | SIGMA: {config.sigma} | EPSILON: {config.epsilon} | "
        f"SEED: {config.seed}"
    )
    write_vector_csv(out / WEIGHTS_FILE, cloud.weights)
    rff_map, image = _embed(config, cloud, out)

    complexes = [
        filtration_service.build_filtration(
            source, d_max=config.d_max, value_cap=config.value_cap, threads=config.threads
        )
        for source in (cloud, image)
    ]
    filtration_service.write_complex(out / COMPLEX_GKPD_FILE, complexes[0])
    filtration_service.write_complex(out / COMPLEX_IMAGE_FILE, complexes[1])

    diagram_gkpd, diagram_image = Parallel(n_jobs=min(config.threads, 2), prefer="threads")(
        delayed(persistence_service.compute_persistence)(c) for c in complexes
    )
    _write_diagram(out / DIAGRAM_GKPD_FILE, out / DIAGRAM_GKPD_CSV, diagram_gkpd)
    _write_diagram(out / DIAGRAM_IMAGE_FILE, out / DIAGRAM_IMAGE_CSV, diagram_image)

    report = rff_service.distortion_report(cloud, rff_map, epsilon=config.epsilon)
    write_json(out / REPORT_FILE, report.model_dump())

    certificate = compare_service.certify_interleaving(
        diagram_gkpd, diagram_image, epsilon=config.epsilon, slack=config.slack
    )
    write_json(out / CERTIFICATE_FILE, certificate.to_document())

    elapsed_ms = (time.time() - start_time) * 1000
    logger.info(
        f"PIPELINE_DONE | T: {rff_map.t} | FACTOR: {certificate.factor_measured:.6f} | "
        f"PASS: {certificate.passed} | TIME: {elapsed_ms:.2f}ms"
    )
    return EXIT_OK if certificate.passed else EXIT_CERTIFICATE_FAILED


def _add_kernel_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=float, help="kernel bandwidth")


def _add_embedding_flags(parser: argparse.ArgumentParser) -> None:
    _add_kernel_flags(parser)
    parser.add_argument("--epsilon", type=float, help="target distortion in (0, 1)")
    parser.add_argument("--delta", type=float, help="failure probability in (0, 1)")
    parser.add_argument("--constant", type=float, help="constant of the dimension bound")
    parser.add_argument("--mode", choices=["point-count", "diameter"])
    parser.add_argument("--diameter-ratio", dest="diameter_ratio", type=float)
    parser.add_argument("--t", "--t-override", dest="t_override", type=int, help="even target dimension")
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file; flags take precedence")
    common.add_argument(
        "--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    common.add_argument("--threads", type=int, help="parallel workers for radius computations")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = argparse.ArgumentParser(
        prog="gkpd", description="Weighted Cech persistence under the Gaussian kernel power distance"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", parents=[common], help="write a synthetic dataset")
    generate.add_argument("--kind", required=True, choices=list(get_args(harness_service.DatasetKind)))
    generate.add_argument("--n", type=int, required=True)
    generate.add_argument("--dim", type=int, default=2)
    generate.add_argument("--noise", type=float, default=0.0)
    generate.add_argument("--outliers", type=int, default=0)
    generate.add_argument("--radius", type=float, default=1.0)
    generate.add_argument("--clusters", type=int, default=3)
    generate.add_argument("--seed", type=int)
    generate.add_argument("--output", required=True)

    weights = commands.add_parser("weights", parents=[common], help="kernel weights of a point set")
    weights.add_argument("--input", required=True)
    _add_kernel_flags(weights)
    weights.add_argument("--output", required=True)

    embed = commands.add_parser("embed", parents=[common], help="sample a feature map and embed")
    embed.add_argument("--input", type=Path, required=True)
    _add_embedding_flags(embed)
    embed.add_argument("--output-dir", dest="output_dir", type=Path, required=True)

    filtration = commands.add_parser("filtration", parents=[common], help="build a filtered complex")
    filtration.add_argument("--input", required=True)
    filtration.add_argument(
        "--mode", dest="filtration_mode", choices=["gkpd", "euclidean"], default="gkpd",
        help="gkpd: original points; euclidean: embedded points"
    )
    _add_kernel_flags(filtration)
    filtration.add_argument("--d-max", dest="d_max", type=int)
    filtration.add_argument("--value-cap", dest="value_cap", type=float)
    filtration.add_argument("--output", required=True)

    persistence = commands.add_parser("persistence", parents=[common], help="persistence diagram")
    persistence.add_argument("--input", required=True)
    persistence.add_argument("--output", required=True, help="diagram JSON")
    persistence.add_argument("--csv", help="also write the diagram as CSV")
    persistence.add_argument("--keep-zero", dest="keep_zero", action="store_true")
    persistence.add_argument("--clearing", action="store_true")

    compare = commands.add_parser("compare", parents=[common], help="certify the interleaving")
    compare.add_argument("--reference", required=True, help="diagram of the original cloud")
    compare.add_argument("--candidate", required=True, help="diagram of the embedded cloud")
    compare.add_argument("--epsilon", type=float)
    compare.add_argument("--slack", type=float)
    compare.add_argument("--output", required=True)

    pipeline = commands.add_parser("pipeline", parents=[common], help="run every stage")
    pipeline.add_argument("--input", type=Path, required=True)
    pipeline.add_argument("--output-dir", dest="output_dir", type=Path, required=True)
    _add_embedding_flags(pipeline)
    pipeline.add_argument("--d-max", dest="d_max", type=int)
    pipeline.add_argument("--value-cap", dest="value_cap", type=float)
    pipeline.add_argument("--slack", type=float)

    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "generate": cmd_generate,
    "weights": cmd_weights,
    "embed": cmd_embed,
    "filtration": cmd_filtration,
    "persistence": cmd_persistence,
    "compare": cmd_compare,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ValueError as e:
        logger.warning(f"COMMAND_REJECTED | COMMAND: {args.command} | ERROR: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        logger.warning(f"COMMAND_IO_ERROR | COMMAND: {args.command} | ERROR: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"COMMAND_EXCEPTION | COMMAND: {args.command} | ERROR: {str(e)}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
