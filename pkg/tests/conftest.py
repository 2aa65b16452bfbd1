import io
import logging
import os
import sys

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Settings
from errors import DiagnosticError
from session import Session

# Setup logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
CORPUS_DIR = os.path.join(TESTS_DIR, "corpus")
GOLDEN_DIR = os.path.join(TESTS_DIR, "golden")


def make_settings(**overrides) -> Settings:
    """Settings for a test run: small server pool, fixed seed, logs kept out of the tree"""
    base = {"servers": 2, "seed": 1, "log_dir": os.path.join(TESTS_DIR, ".logs")}
    base.update(overrides)
    return Settings(**base)


@pytest.fixture
def settings_factory():
    return make_settings


@pytest.fixture
def session():
    out = io.StringIO()
    s = Session(make_settings(), out=out)
    yield s
    s.close()


@pytest.fixture
def run_source():
    """Load a source text, run main() and return its printed output"""
    def run(source: str, file: str = "<test>", **overrides) -> str:
        out = io.StringIO()
        s = Session(make_settings(**overrides), out=out)
        try:
            s.load_source(source, file)
            s.run_main()
        finally:
            s.close()
        return out.getvalue()
    return run


@pytest.fixture
def check_source():
    """Check a source text and return its diagnostics (errors do not raise)"""
    def check(source: str, file: str = "<test>"):
        s = Session(make_settings())
        try:
            return s.load_source(source, file)
        except DiagnosticError as e:
            return e.diagnostics
        finally:
            s.close()
    return check
