"""
Pipeline coordinator: loads sources through syntax, desugar, sema and the
safety checks, then hands the program to the interpreter
"""
import io
import logging
from typing import Any, Dict, List, Optional, Tuple

from ast_nodes import Node
from builtin_catalog import BUILTIN_FILE, BUILTIN_SOURCE, bind_builtins
from config import Settings, settings as default_settings
from corpus import library_paths
from desugar import desugar
from errors import DiagnosticError, RuntimeFault
from interpreter import Interpreter
from lexer import tokenize
from models import Diagnostic, RuntimeCheck
from safety_checks import check_safety
from sema import Resolver
from store import ArrayValue, Char, Composite, EnumLit, RangeValue, SliceView
from syntax_parser import parse_expression, parse_source, parse_statements
from type_system import TypeEnv

DECLARATION_STARTS = frozenset({"interface", "class", "concurrent", "abstract", "func", "op", "type"})


class Session:
    """
    One loaded program and the interpreter that runs it

    Sources are checked as they are loaded; a file with check errors raises
    DiagnosticError and the diagnostics stay available on the session.
    """

    def __init__(self, config: Optional[Settings] = None, out=None, with_library: bool = True):
        self.logger = logging.getLogger(__name__)
        self.settings = config or default_settings
        self.out = out
        self.resolver = Resolver()
        self.program = self.resolver.program
        self.diagnostics: List[Diagnostic] = []
        self.runtime_checks: List[RuntimeCheck] = []
        self.files: List[str] = []
        self._bodies_checked = 0
        self._interpreter: Optional[Interpreter] = None
        self._scope = None

        self.load_source(BUILTIN_SOURCE, BUILTIN_FILE, builtin=True)
        bind_builtins(self.program)
        if with_library:
            self.load_library()

    # Loading

    def load_source(self, source: str, file: str = "<input>", builtin: bool = False) -> List[Diagnostic]:
        """
        Check one source text and add its declarations to the program

        Args:
            source: Source text of a compilation unit
            file: Name used in diagnostics
            builtin: The unit declares primitive modules

        Returns:
            Diagnostics found (warnings only; errors raise)

        Raises:
            DiagnosticError: Lexical, syntax, name, type or safety errors
        """
        return self.load_sources([(source, file)], builtin=builtin)

    def load_sources(self, sources: List[Tuple[str, str]], builtin: bool = False) -> List[Diagnostic]:
        """
        Check several units as one group

        Every unit is registered before any is resolved, so the units may
        refer to each other in any order.
        """
        label = ", ".join(file for _, file in sources)
        declarations = 0
        for source, file in sources:
            try:
                unit = desugar(parse_source(source, file))
            except DiagnosticError as e:
                self.diagnostics.extend(e.diagnostics)
                raise
            self.resolver.add_unit(unit, builtin=builtin)
            declarations += len(unit.children)
        found = self.resolver.finish()
        bodies = self.resolver.bodies[self._bodies_checked:]
        self._bodies_checked = len(self.resolver.bodies)
        safety, checks = check_safety(bodies)
        found = found + safety
        self.diagnostics.extend(found)
        self.runtime_checks.extend(checks)
        if any(d.is_error for d in found):
            self.logger.info(f"Check of {label} failed with {len(found)} diagnostics")
            raise DiagnosticError(found)
        self.logger.info(f"Loaded {label}: {declarations} declarations, {len(checks)} run-time checks")
        return found

    def load_file(self, path: str) -> List[Diagnostic]:
        self.files.append(path)
        return self.load_source(_read(path), path)

    def load_library(self):
        paths = library_paths(self.settings.lib_dir)
        self.files.extend(paths)
        return self.load_sources([(_read(path), path) for path in paths])

    def check_files(self, paths: List[str]) -> List[Diagnostic]:
        """Check every file, collecting diagnostics instead of stopping at the first failing file"""
        found: List[Diagnostic] = []
        for path in paths:
            try:
                found.extend(self.load_file(path))
            except DiagnosticError as e:
                found.extend(e.diagnostics)
        return found

    # Execution

    @property
    def interpreter(self) -> Interpreter:
        if self._interpreter is None:
            self._interpreter = Interpreter(self.program, self.settings, out=self.out)
        return self._interpreter

    @property
    def started(self) -> bool:
        return self._interpreter is not None

    def run_main(self):
        """Run the stand-alone main(); program output goes to the session's out stream"""
        return self.interpreter.run_main()

    def call(self, name: str, *args) -> Any:
        """
        Call a stand-alone operation with host arguments

        Arguments are converted with from_host (lists need to already be
        interpreter arrays); the result is converted with to_host.
        """
        candidates = [op for op in self.program.funcs_named(name) if op.arity == len(args)]
        if not candidates:
            raise RuntimeFault("UNRESOLVED_CALL", f"no stand-alone {name} taking {len(args)} arguments")
        values = [self.from_host(a) for a in args]
        result = self.interpreter.call(candidates[0], values)
        return self.to_host(result)

    def type_desc(self, type_name: str):
        """Descriptor of a declared type name, e.g. an alias like Array_Type"""
        return self.program.lookup_type_name(type_name, TypeEnv(self.program))

    def from_host(self, value, type_name: Optional[str] = None):
        """
        Build an interpreter value from a host value

        Args:
            value: None, bool, int, float, str, or a list of those
            type_name: Declared array type for lists

        Returns:
            Scalars unchanged; lists as arrays allocated in the root region
        """
        if isinstance(value, list):
            if type_name is None:
                raise RuntimeFault("UNRESOLVED_CALL", "a host list needs an array type name")
            desc = self.type_desc(type_name)
            interp = self.interpreter
            slots = [self.from_host(v) for v in value]
            return interp.store.new_array(desc, slots, 1, interp.root_region)
        return value

    def to_host(self, value) -> Any:
        """Convert an interpreter value tree into plain host data"""
        if value is None or isinstance(value, (bool, int, float, str)):
            return value
        if isinstance(value, Char):
            return chr(value.code)
        if isinstance(value, EnumLit):
            return value.sym
        if isinstance(value, RangeValue):
            return range(value.lo, value.hi + 1)
        if isinstance(value, (ArrayValue, SliceView)):
            return [self.to_host(s) for s in value.slots]
        if isinstance(value, Composite):
            return {c.name: self.to_host(s) for c, s in zip(value.desc.components, value.slots)}
        if getattr(value, "is_concurrent", False):
            return value.read_state(self.to_host)
        return value

    # REPL support

    @property
    def scope(self):
        if self._scope is None:
            self._scope = self.interpreter.new_scope()
        return self._scope

    def evaluate_line(self, line: str) -> Optional[Any]:
        """
        Handle one line of interactive input

        Declarations are checked and added to the program; statements run in
        the persistent session scope; a bare expression is evaluated and its
        value returned.

        Returns:
            The expression's value, or None for declarations and statements
        """
        tokens = tokenize(line, "<repl>")
        if not tokens or tokens[0].is_eof:
            return None
        if tokens[0].text in DECLARATION_STARTS:
            self.load_source(line, "<repl>")
            return None
        try:
            expr: Optional[Node] = parse_expression(tokens)
        except DiagnosticError:
            expr = None
        if expr is not None:
            return self.interpreter.evaluate(desugar(expr), self.scope)
        body = desugar(parse_statements(tokens))
        # Statements bind in the session scope itself, not a nested block
        stmts = body.children if body.kind == "block" else [body]
        for stmt in stmts:
            self.interpreter.execute(stmt, self.scope)
        return None

    # Reporting

    def stats(self) -> Dict[str, Any]:
        return self.interpreter.stats()

    def sync_events(self) -> List[str]:
        log = self.interpreter.sync_log
        return log.lines() if log is not None else []

    def close(self):
        if self._scope is not None:
            self.interpreter.store.region_exit(self._scope.region)
            self._scope = None
        if self._interpreter is not None:
            self._interpreter.close()


def run_source(source: str, config: Optional[Settings] = None, file: str = "<input>") -> str:
    """Load a program text, run its main() and return what it printed"""
    out = io.StringIO()
    session = Session(config, out=out)
    try:
        session.load_source(source, file)
        session.run_main()
    finally:
        session.close()
    return out.getvalue()


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()
