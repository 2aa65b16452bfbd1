import argparse
import io
import logging
import os
import sys
import time
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from config import Settings, settings
from config_injector import config_injector
from concurrent_objects import check_event_log
from corpus import program_path
from desugar import desugar, reset_generated_names
from errors import DiagnosticError, InternalFault, RuntimeFault, UsageError
from models import BenchResult, Invocation, SyncEvent
from pretty_printer import pretty_print
from repl import run_repl
from session import Session
from syntax_parser import parse_source

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_CHECK = 2
EXIT_USAGE = 3

_logging_ready = False


def setup_logging(config: Settings = settings):
    """Rotating file log plus a quiet console handler on stderr"""
    global _logging_ready
    if _logging_ready:
        return
    os.makedirs(config.log_dir, exist_ok=True)

    log_formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    log_file = os.path.join(config.log_dir, config.log_file)

    # File Handler (Rotating: 10MB, keep 5 backups)
    file_handler = RotatingFileHandler(log_file, maxBytes=10*1024*1024, backupCount=5, encoding='utf-8')
    file_handler.setFormatter(log_formatter)
    file_handler.setLevel(config.log_level.upper())

    # Console Handler
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(log_formatter)
    console_handler.setLevel(config.console_log_level.upper())

    root = logging.getLogger()
    root.setLevel(logging.DEBUG if config.log_level.upper() == "DEBUG" else logging.INFO)
    root.addHandler(file_handler)
    root.addHandler(console_handler)
    _logging_ready = True


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="psl", description="Interpreter for a parallel-by-default pointer-free language")
    sub = parser.add_subparsers(dest="subcommand")

    def common(p: argparse.ArgumentParser):
        p.add_argument("--seq", dest="sequential", action="store_true", help="run on a single server")
        p.add_argument("--servers", type=int, default=None, help="number of server threads")
        p.add_argument("--seed", type=int, default=None, help="victim-selection seed")
        p.add_argument("--stats", action="store_true", help="print scheduler and region statistics to stderr")
        p.add_argument("--debug-sync", action="store_true", help="record and check concurrent-object events")
        p.add_argument("--lock-timeout-ms", type=int, default=None, help="fail a lock wait after this long")

    run = sub.add_parser("run", help="run main() of the given files")
    run.add_argument("files", nargs="+")
    common(run)

    check = sub.add_parser("check", help="check the given files without running them")
    check.add_argument("files", nargs="+")

    dump = sub.add_parser("dump", help="print the parsed or desugared tree")
    dump.add_argument("files", nargs=1)
    dump.add_argument("--dump", choices=["ast", "desugar"], default="desugar")

    repl = sub.add_parser("repl", help="interactive session")
    repl.add_argument("files", nargs="*")
    common(repl)

    bench = sub.add_parser("bench", help="time repeated runs of a program")
    bench.add_argument("files", nargs="+")
    bench.add_argument("--runs", type=int, default=3)
    common(bench)
    return parser


def parse_invocation(argv: List[str]) -> Invocation:
    args = build_parser().parse_args(argv)
    if args.subcommand is None:
        raise UsageError("a subcommand is required: run, check, dump, repl or bench")
    return Invocation(
        subcommand=args.subcommand,
        files=list(args.files),
        sequential=getattr(args, "sequential", False),
        servers=getattr(args, "servers", None),
        seed=getattr(args, "seed", None),
        stats=getattr(args, "stats", False),
        dump=getattr(args, "dump", None),
        debug_sync=getattr(args, "debug_sync", False),
        lock_timeout_ms=getattr(args, "lock_timeout_ms", None),
        runs=getattr(args, "runs", 3),
    )


# Subcommands


def _report_stats(session: Session, err):
    for key, value in session.stats().items():
        err.write(f"{key}={value}\n")


def _report_sync(session: Session, err) -> bool:
    lines = session.sync_events()
    for line in lines:
        err.write(f"sync: {line}\n")
    problems = check_event_log([SyncEvent.parse(line) for line in lines])
    for problem in problems:
        err.write(f"sync violation: {problem}\n")
    return not problems


def cmd_run(invocation: Invocation, config: Settings, out, err) -> int:
    session = Session(config, out=out)
    try:
        for path in invocation.files:
            session.load_file(path)
        session.run_main()
        if config.debug_sync and not _report_sync(session, err):
            return EXIT_FAULT
        return EXIT_OK
    finally:
        session.close()
        if config.stats and session.started:
            _report_stats(session, err)


def cmd_check(invocation: Invocation, config: Settings, out, err) -> int:
    session = Session(config, out=out)
    diagnostics = session.check_files(invocation.files)
    for diag in diagnostics:
        err.write(diag.render() + "\n")
    logger.info(f"Checked {len(invocation.files)} files: {len(diagnostics)} diagnostics")
    return EXIT_CHECK if any(d.is_error for d in diagnostics) else EXIT_OK


def cmd_dump(invocation: Invocation, config: Settings, out, err) -> int:
    path = invocation.files[0]
    with open(path, encoding="utf-8") as f:
        unit = parse_source(f.read(), path)
    if invocation.dump != "ast":
        reset_generated_names()
        unit = desugar(unit)
    text = pretty_print(unit)
    out.write(text if text.endswith("\n") else text + "\n")
    return EXIT_OK


def cmd_bench(invocation: Invocation, config: Settings, out, err) -> int:
    for name in invocation.files:
        path = name if os.path.exists(name) else program_path(name)
        times = []
        for i in range(invocation.runs):
            session = Session(config, out=io.StringIO())
            try:
                session.load_file(path)
                start = time.perf_counter()
                session.run_main()
                times.append(time.perf_counter() - start)
            finally:
                session.close()
            logger.info(f"Bench {path} run {i + 1}: {times[-1]:.3f}s")
        result = BenchResult(program=path, runs=times, servers=1 if config.sequential else config.servers,
                             sequential=config.sequential)
        out.write(f"program={result.program}\n")
        for i, seconds in enumerate(result.runs, 1):
            out.write(f"run_{i}_seconds={seconds:.3f}\n")
        out.write(f"mean_seconds={result.mean_seconds:.3f}\n")
    return EXIT_OK


def cmd_repl(invocation: Invocation, config: Settings, out, err) -> int:
    session = Session(config, out=out)
    try:
        for path in invocation.files:
            session.load_file(path)
        run_repl(session, sys.stdin, out, err)
    finally:
        session.close()
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "check": cmd_check,
    "dump": cmd_dump,
    "repl": cmd_repl,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None, out=None, err=None) -> int:
    """
    Command-line entry point

    Returns:
        0 on success, 1 on a runtime fault, 2 on check errors, 3 on bad usage
    """
    out = out or sys.stdout
    err = err or sys.stderr
    setup_logging()
    try:
        invocation = parse_invocation(sys.argv[1:] if argv is None else argv)
        is_valid, error_message = config_injector.validate_invocation(invocation)
        if not is_valid:
            raise UsageError(error_message)
        config = config_injector.apply_invocation(invocation, settings)
        logger.info(f"Starting {invocation.subcommand} on {', '.join(invocation.files) or 'no files'}")
        return COMMANDS[invocation.subcommand](invocation, config, out, err)
    except UsageError as e:
        err.write(f"usage error: {e}\n")
        return EXIT_USAGE
    except DiagnosticError as e:
        for diag in e.diagnostics:
            err.write(diag.render() + "\n")
        return EXIT_CHECK
    except InternalFault as e:
        logger.error(f"Internal fault: {e}", exc_info=True)
        err.write(f"internal: {e.render()}\n")
        return EXIT_FAULT
    except RuntimeFault as e:
        logger.info(f"Runtime fault: {e}")
        err.write(e.render() + "\n")
        return EXIT_FAULT
    except OSError as e:
        err.write(f"usage error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
