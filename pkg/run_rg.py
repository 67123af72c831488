import argparse
import json
import os
import sys

from config.loader import load_settings
from domain.errors import ConfigError, RGError
from domain.flow_runner_service import cmd_flow, cmd_oracle, cmd_sweep, cmd_verify
from domain.run_config import SWEEP_AXES, RunConfig, parse_overrides
from domain.verification import SUITES
from utils.logger_config import get_logger, setup_logging

logger = get_logger(__name__)

EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Feshbach renormalization flow for the truncated spin-boson model.")
    parser.add_argument("--config", help="TOML or JSON file layered over config/settings.toml")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one setting; the value is parsed as JSON when possible")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("flow", help="tower limit, flow observables and certificate")
    verify = commands.add_parser("verify", help="property suites")
    verify.add_argument("which", nargs="?", default="all", choices=SUITES + ("all",))
    sweep = commands.add_parser("sweep", help="independent flow runs along one parameter axis")
    sweep.add_argument("axis", choices=sorted(SWEEP_AXES))
    sweep.add_argument("values", nargs="+", type=json.loads, help="values as JSON scalars")
    oracle = commands.add_parser("oracle", help="dense diagonalization of the truncated model")
    oracle.add_argument("-k", type=int, default=6, help="number of lowest eigenvalues to report")
    return parser


def open_ledger(config: RunConfig):
    if not config.ledger.enabled:
        return None
    from data.repositories import RunRepository

    path = config.ledger.path
    if not os.path.isabs(path):
        os.makedirs(config.output.directory, exist_ok=True)
        path = os.path.join(config.output.directory, path)
    return RunRepository(path)


def load_config(args) -> RunConfig:
    if args.config and not os.path.isfile(args.config):
        raise ConfigError("--config", f"file not found: {args.config}")
    overrides = parse_overrides(args.overrides)
    try:
        return RunConfig.from_settings(load_settings(args.config, overrides))
    except ConfigError:
        raise
    except Exception as exc:
        # unreadable TOML/JSON surfaces from dynaconf on first access
        raise ConfigError("--config", str(exc)) from exc


def report_config_error(exc: ConfigError) -> int:
    logger.error("Invalid configuration: %s", exc)
    print(json.dumps({"error": "ConfigError", "field": exc.field, "message": exc.message}))
    return EXIT_USAGE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
    except ConfigError as exc:
        setup_logging()
        return report_config_error(exc)
    setup_logging(config.log_level)
    repository = open_ledger(config)
    try:
        if args.command == "flow":
            return cmd_flow(config, repository)
        if args.command == "verify":
            return cmd_verify(config, args.which, repository)
        if args.command == "sweep":
            return cmd_sweep(config, args.axis, args.values, repository)
        return cmd_oracle(config, args.k, repository)
    except ConfigError as exc:
        return report_config_error(exc)
    except RGError as exc:
        logger.error("Numerical breakdown: %s", exc, exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return exc.exit_code
    finally:
        if repository is not None:
            repository.close()


if __name__ == "__main__":
    sys.exit(main())
