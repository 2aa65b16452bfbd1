import io
import os
import sys
from unittest.mock import MagicMock

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Settings
from config_injector import ConfigInjector, config_injector
from conftest import CORPUS_DIR, make_settings
from corpus import program_path
from main import EXIT_CHECK, EXIT_FAULT, EXIT_OK, EXIT_USAGE, main, parse_invocation
from models import Invocation
from repl import handle_meta, run_repl
from session import Session

ABSENT_KEY = """
type Int_Map is Map<Univ_Integer, Univ_Integer>

func main() is
    const M : Int_Map := []
    Println("value " | M[1])
end func main
"""

ONE_BOX = """
type Int_Box is Locked_Box<Univ_Integer>

func main() is
    var B : Int_Box := Create(null)
    var Got := 0
    block
        Put(B, 7)
      ||
        Got := Get(B)
    end block
    Println("got " | Got)
end func main
"""


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def source_file(tmp_path):
    def write(text: str, name: str = "prog.psl") -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


# Subcommands

def test_run_prints_program_output():
    code, out, err = run_cli("run", program_path("racing_return"))
    assert code == EXIT_OK
    assert out == "race winners in range: 200\npaired winners valid: 200\n"


def test_run_sequential():
    code, out, _ = run_cli("run", "--seq", program_path("search"))
    assert code == EXIT_OK
    assert "Search(" in out


def test_check_reports_diagnostics_on_stderr():
    path = os.path.join(CORPUS_DIR, "negative", "handoff_call.psl")
    code, out, err = run_cli("check", path)
    assert code == EXIT_CHECK
    assert out == ""
    assert "error[HANDOFF_ALIAS]" in err
    assert err.startswith(path + ":")


def test_check_accepts_a_clean_file():
    code, out, err = run_cli("check", os.path.join(CORPUS_DIR, "positive", "while_loop.psl"))
    assert code == EXIT_OK
    assert out == ""


def test_run_of_a_rejected_file_is_a_check_failure():
    code, out, err = run_cli("run", os.path.join(CORPUS_DIR, "negative", "global_var.psl"))
    assert code == EXIT_CHECK
    assert "GLOBAL_VAR" in err


def test_runtime_fault_exit_code(source_file):
    code, out, err = run_cli("run", source_file(ABSENT_KEY))
    assert code == EXIT_FAULT
    assert "fault[PRECONDITION]" in err


def test_dump_desugared_tree(source_file):
    path = source_file("func main() is\n    const A := [1, 2]\n    Println(\"n \" | A[1])\nend func main\n")
    code, out, _ = run_cli("dump", path)
    assert code == EXIT_OK
    assert '"indexing"(A, 1)' in out
    assert '"[]"()' in out
    code, out, _ = run_cli("dump", "--dump", "ast", path)
    assert code == EXIT_OK
    assert "A[1]" in out


def test_stats_go_to_stderr():
    code, out, err = run_cli("run", "--stats", "--servers", "2", program_path("quicksort"))
    assert code == EXIT_OK
    assert "picothreads_spawned=" in err
    assert "servers=2" in err
    assert "picothreads_spawned" not in out


def test_debug_sync_log(source_file):
    code, out, err = run_cli("run", "--debug-sync", source_file(ONE_BOX))
    assert code == EXIT_OK
    assert out == "got 7\n"
    assert "sync: " in err
    assert "sync violation" not in err


def test_bench_reports_timings():
    code, out, _ = run_cli("bench", "--runs", "2", "--servers", "1", "search")
    assert code == EXIT_OK
    assert "run_1_seconds=" in out and "run_2_seconds=" in out
    assert "mean_seconds=" in out


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate", "x.psl"],
    ["run"],
    ["run", "--seq", "--servers", "4", "x.psl"],
    ["run", "--servers", "0", "x.psl"],
    ["run", "--lock-timeout-ms", "0", "x.psl"],
    ["bench", "--runs", "0", "search"],
    ["run", "does_not_exist.psl"],
])
def test_usage_errors(argv):
    code, _, err = run_cli(*argv)
    assert code == EXIT_USAGE
    assert err.startswith("usage error:")


# Command line to settings

def test_parse_invocation_fields():
    invocation = parse_invocation(["run", "--servers", "3", "--seed", "9", "--stats", "a.psl", "b.psl"])
    assert invocation.subcommand == "run"
    assert invocation.files == ["a.psl", "b.psl"]
    assert (invocation.servers, invocation.seed, invocation.stats) == (3, 9, True)


def test_seq_forces_one_server():
    overrides = ConfigInjector.extract_overrides(Invocation(subcommand="run", files=["a"], sequential=True))
    assert overrides == {"sequential": True, "servers": 1}


def test_debug_sync_enables_checks():
    overrides = ConfigInjector.extract_overrides(Invocation(subcommand="run", files=["a"], debug_sync=True))
    assert overrides["debug_sync"] and overrides["debug_checks"]


def test_apply_invocation_copies_settings():
    base = make_settings(servers=8)
    applied = config_injector.apply_invocation(Invocation(subcommand="run", files=["a"], servers=2), base)
    assert applied.servers == 2
    assert base.servers == 8
    assert config_injector.apply_invocation(Invocation(subcommand="run", files=["a"]), base) is base


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("PSL_SERVERS", "6")
    monkeypatch.setenv("PSL_LOCK_TIMEOUT_MS", "250")
    config = Settings()
    assert config.servers == 6
    assert config.lock_timeout_ms == 250


def test_validate_invocation():
    assert config_injector.validate_invocation(Invocation(subcommand="repl")) == (True, "")
    ok, message = config_injector.validate_invocation(Invocation(subcommand="run", files=["a"], runs=0))
    assert not ok and "--runs" in message


# REPL

def test_repl_session():
    session = Session(make_settings(), out=io.StringIO())
    lines = "\n".join([
        "var X := 40",
        "X + 2",
        "func Twice(N : Univ_Integer) -> Univ_Integer is",
        "    return 2 * N",
        "end func Twice",
        "Twice(X)",
        "Y + 1",
        ":bogus",
        ":quit",
        "X",
    ]) + "\n"
    out, err = io.StringIO(), io.StringIO()
    try:
        run_repl(session, io.StringIO(lines), out, err, prompt=False)
    finally:
        session.close()
    assert out.getvalue().splitlines() == ["42", "80"]
    assert "unknown command :bogus" in err.getvalue()
    assert err.getvalue().count("\n") >= 2


def test_repl_meta_commands_with_mock_session():
    session = MagicMock()
    session.stats.return_value = {"steals": 0, "servers": 2}
    out, err = io.StringIO(), io.StringIO()
    assert handle_meta(session, ":stats", out, err)
    assert out.getvalue() == "steals=0\nservers=2\n"

    session.load_file.side_effect = OSError("no such file")
    assert handle_meta(session, ":load missing.psl", out, err)
    assert "cannot load missing.psl" in err.getvalue()

    assert handle_meta(session, ":help", out, err)
    assert ":quit" in out.getvalue()
    assert not handle_meta(session, ":q", out, err)
