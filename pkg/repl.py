"""
Interactive Read-Eval-Print Loop over a persistent session
"""
import logging
import re
from typing import TextIO

from builtin_catalog import format_value
from errors import DiagnosticError, PslError, RuntimeFault

logger = logging.getLogger(__name__)

PROMPT = "psl> "
CONTINUATION = "...> "
HELP = ":quit  leave\n:stats  scheduler and region statistics\n:load <file>  check and add a source file\n"

MODULE_OPEN = re.compile(r"(concurrent\s+|abstract\s+)?(interface|class)\b")
MODULE_CLOSE = re.compile(r"end\s+(interface|class)\b")


def _needs_more(text: str) -> bool:
    """A declaration is still open: its matching `end` line has not arrived"""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    words = lines[0].split()
    kind = words[1] if words[0] in ("concurrent", "abstract") and len(words) > 1 else words[0]
    if kind in ("func", "op"):
        if not re.search(r"\bis\b", text):
            return False
        if re.search(r"\bis\s*\(", lines[0]):
            return text.count("(") > text.count(")")
        return not any(line.startswith(f"end {kind}") for line in lines[1:])
    if kind not in ("interface", "class"):
        return False
    opened = sum(1 for line in lines if MODULE_OPEN.match(line))
    closed = sum(1 for line in lines if MODULE_CLOSE.match(line))
    return closed < opened


def handle_meta(session, line: str, out: TextIO, err: TextIO) -> bool:
    """
    Run a `:command`

    Returns:
        False when the loop should stop
    """
    command, _, argument = line[1:].partition(" ")
    if command in ("quit", "q"):
        return False
    if command == "stats":
        for key, value in session.stats().items():
            out.write(f"{key}={value}\n")
    elif command == "load":
        path = argument.strip()
        if not path:
            err.write("usage: :load <file>\n")
        else:
            try:
                session.load_file(path)
                out.write(f"loaded {path}\n")
            except DiagnosticError as e:
                for diag in e.diagnostics:
                    err.write(diag.render() + "\n")
            except OSError as e:
                err.write(f"cannot load {path}: {e}\n")
    elif command == "help":
        out.write(HELP)
    else:
        err.write(f"unknown command :{command}\n")
    return True


def run_repl(session, stdin: TextIO, out: TextIO, err: TextIO, prompt: bool = True):
    """
    Read lines until end of input or `:quit`

    Multi-line module and operation declarations are gathered until their
    `end` line. Each expression's value is printed.
    """
    pending = []
    while True:
        if prompt:
            out.write(CONTINUATION if pending else PROMPT)
            out.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.rstrip("\n")
        if not pending and line.strip().startswith(":"):
            if not handle_meta(session, line.strip(), out, err):
                break
            continue
        pending.append(line)
        text = "\n".join(pending)
        if not text.strip():
            pending = []
            continue
        if _needs_more(text):
            continue
        pending = []
        try:
            value = session.evaluate_line(text)
            if value is not None:
                out.write(format_value(value) + "\n")
        except DiagnosticError as e:
            for diag in e.diagnostics:
                err.write(diag.render() + "\n")
        except RuntimeFault as e:
            err.write(e.render() + "\n")
        except PslError as e:
            err.write(f"error: {e}\n")
    logger.info("REPL finished")
