"""
Command-line entry point: ``hydrosplit {mesh,run,converge,infsup}``.

Every subcommand reads one RunConfig (defaults when ``--config`` is not
given) and writes its results under the output directory. Library errors
are reported on a single stderr line and mapped to exit codes: 2 for
invalid input, 3 for numerical failures.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .config import RunConfig, load_config
from .exceptions import exit_code_for
from .hydrostatic_stokes import compute_infsup
from .io import dump_mesh, write_field, write_json, write_rate_table, write_rows
from .mesh import refine_uniform
from .stepper import CheckpointWriter, DiscreteSpaces, LedgerWriter, ProblemData, Stepper
from .utils import resolve_seed
from .verification import convergence_study, manufactured_default, thresholds_for

logger = logging.getLogger("hydrosplit")

INFSUP_COLUMNS = ["h", "dim_Xh", "dim_Qh", "beta_h", "iterations"]


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _output_dir(cfg: RunConfig, override: Optional[str]) -> Path:
    out = Path(override or cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mesh_for(cfg: RunConfig, level: Optional[int] = None):
    return refine_uniform(
        cfg.domain_spec(),
        cfg.mesh.target_h,
        cfg.mesh.layers,
        cfg.mesh.level if level is None else level,
    )


def _problem_data(cfg: RunConfig) -> ProblemData:
    """Forcing and initial data of the manufactured solution on the configured rectangle."""
    return manufactured_default(cfg.domain_spec(), cfg.scheme.nu, cfg.scheme.f_cor).problem_data()


# -- subcommands ------------------------------------------------------------


def cmd_mesh(cfg: RunConfig, out: Path, workers: int = 1) -> Dict[str, Path]:
    """Generate the column mesh and write ``mesh.txt``."""
    mesh = _mesh_for(cfg)
    path = out / "mesh.txt"
    dump_mesh(mesh, path)
    h_max, h_min, ratio = mesh.quality()
    logger.info(
        "mesh: %d nodes, %d tets, h=%.4g (min %.4g, ratio %.3g)",
        mesh.node_count, mesh.tet_count, h_max, h_min, ratio,
    )
    return {"mesh": path}


def cmd_run(cfg: RunConfig, out: Path, workers: int = 1) -> Dict[str, Path]:
    """Run the scheme to t = T, writing the ledger, final fields and checkpoints.

    The forcing, surface traction and initial velocity are those of the
    manufactured solution on the configured rectangle, so ``run`` needs a
    rectangular surface with linear bathymetry and draws no random numbers.
    """
    spaces = DiscreteSpaces.build(_mesh_for(cfg), cfg.spaces.element)
    scheme = cfg.scheme_config()
    stepper = Stepper(scheme, spaces, _problem_data(cfg), workers)

    written: Dict[str, Path] = {}
    hooks: List[Callable] = []
    ledger = None
    if cfg.outputs.ledger:
        written["ledger"] = out / "ledger.csv"
        ledger = LedgerWriter(stepper, written["ledger"])
        hooks.append(ledger)
    if cfg.outputs.checkpoints:
        written["checkpoints"] = out / "checkpoints"
        hooks.append(CheckpointWriter(written["checkpoints"], cfg.outputs.checkpoints))

    try:
        history = stepper.run(hooks=hooks, keep_states=False)
    finally:
        if ledger is not None:
            ledger.close()

    if cfg.outputs.fields:
        fields = out / "fields"
        fields.mkdir(exist_ok=True)
        final = history.final
        write_field(final.u, fields / "u.csv")
        write_field(final.p, fields / "p.csv")
        written["fields"] = fields
    logger.info("run: %d step(s), final residual %.3e", scheme.M, history.final.energy.residual)
    return written


def cmd_converge(cfg: RunConfig, out: Path, workers: int = 1) -> Dict[str, Path]:
    """Convergence study over the configured levels: ``rates.csv`` and ``summary.json``."""
    template = cfg.study_template()
    table = convergence_study(template, cfg.study.levels, cfg.study.coupling, workers)
    rates = out / "rates.csv"
    write_rate_table(table, rates)
    summary = table.summary(thresholds_for(template.pair, template.scheme.variant))
    summary["element"] = template.pair.value
    summary["variant"] = template.scheme.variant.value
    write_json(summary, out / "summary.json")
    for norm, check in summary["checks"].items():
        log = logger.info if check["passed"] else logger.warning
        log("%s: fitted order %.3f (threshold %.2f)", norm, check["fitted_order"], check["threshold"])
    return {"rates": rates, "summary": out / "summary.json"}


def cmd_infsup(cfg: RunConfig, out: Path, workers: int = 1, seed: int = 0) -> Dict[str, Path]:
    """β_h on every study level, written to ``infsup.csv``."""
    rows: List[List] = [INFSUP_COLUMNS]
    for level in cfg.study.levels:
        spaces = DiscreteSpaces.build(_mesh_for(cfg, level), cfg.spaces.element)
        res = compute_infsup(spaces.Xh, spaces.Qh, seed=seed, workers=workers)
        rows.append([res.h, res.velocity_dofs, res.pressure_dofs, res.beta, res.iterations])
    path = out / "infsup.csv"
    write_rows(path, rows)
    return {"infsup": path}


COMMANDS = {
    "mesh": cmd_mesh,
    "run": cmd_run,
    "converge": cmd_converge,
    "infsup": cmd_infsup,
}

# Commands that draw random numbers and take the resolved seed.
SEEDED = frozenset({"infsup"})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrosplit",
        description="Viscosity-splitting finite elements for the hydrostatic Primitive Equations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", metavar="PATH", help="JSON run configuration")
    parser.add_argument(
        "--print-config", action="store_true", help="print the complete configuration and exit"
    )
    parser.add_argument("--workers", type=int, default=1, metavar="N", help="worker threads")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides outputs.dir)")
    parser.add_argument("--seed", type=int, help="random seed (overrides config and HYDROSPLIT_SEED)")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    noise.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    parser.add_argument("command", nargs="?", choices=sorted(COMMANDS), help="what to do")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.quiet)

    try:
        cfg = load_config(args.config)
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return 0
        if args.command is None:
            parser.error("a command is required unless --print-config is given")
        if args.workers < 1:
            parser.error("--workers must be at least 1")
        seed = resolve_seed(args.seed if args.seed is not None else cfg.seed)
        out = _output_dir(cfg, args.out)
        kwargs = {"seed": seed} if args.command in SEEDED else {}
        written = COMMANDS[args.command](cfg, out, workers=args.workers, **kwargs)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 1:
            logger.exception("unexpected failure")
        print(f"hydrosplit: error: {exc}", file=sys.stderr)
        return code

    for name, path in written.items():
        logger.info("wrote %s: %s", name, path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
