"""
Parallel evaluator over checked core trees

Every statement and expression evaluator is a generator so that a picothread
can suspend at an await or a queued call. Pure scalar expressions take a
non-generator fast path.
"""
import logging
import sys
import threading
from typing import Any, Dict, List, Optional, Tuple

from ast_nodes import Node, is_path
from builtin_catalog import (BOOLEAN_LITERALS, BuiltinCall, compare_scalars, format_value, int_binary, real_binary,
                             scalar_module_name)
from concurrent_objects import ConcurrentObject, SyncLog
from config import Settings, settings as default_settings
from desugar import comprehension_container
from errors import InternalFault, RuntimeFault
from pretty_printer import pretty_print
from sema import concrete, is_contextual
from store import (EQUAL, ArrayValue, Cell, Char, Composite, ConstLoc, EnumLit, RangeValue, SliceView, Store,
                   SlotLoc, check_int, is_allocated)
from type_system import FormalType, OperationSig, Program, TypeDescriptor, TypeEnv, TypeResolutionError
from work_stealing import TERMINATED, Await, Master, Park, Scheduler, Terminated, run_sync

logger = logging.getLogger(__name__)

INT_OPS = frozenset({"+", "-", "*", "/", "mod", "rem", "**"})
REAL_OPS = frozenset({"+", "-", "*", "/"})
FRESH_KINDS = frozenset({"binary-op", "unary-op", "record", "seq-expr", "literal", "in-set", "is-null", "not-null"})


# Control signals


class ReturnSignal(Exception):
    """`return` unwinding to the enclosing operation"""

    def __init__(self, value=None, loc=None, bare: bool = False):
        super().__init__("return")
        self.value = value
        self.loc = loc
        self.bare = bare


class ExitSignal(Exception):
    """`exit loop` unwinding to its loop"""

    def __init__(self, loop: Node):
        super().__init__("exit loop")
        self.loop = loop


class ContinueWith(Exception):
    """`continue loop` of a sequential loop, carrying the next binding"""

    def __init__(self, loop: Node, loc=None):
        super().__init__("continue loop")
        self.loop = loop
        self.loc = loc


class ContinueDone(Exception):
    """The iteration added its successor to the bag and is finished"""


class _Slow(Exception):
    """The fast path met a value it does not handle"""


_SLOW = _Slow()


# Run-time environments


class Scope:
    __slots__ = ("names", "parent", "region")

    def __init__(self, names: Dict[str, Any], parent: Optional["Scope"], region):
        self.names = names
        self.parent = parent
        self.region = region

    def lookup(self, name: str):
        scope = self
        while scope is not None:
            loc = scope.names.get(name)
            if loc is not None:
                return loc
            scope = scope.parent
        return None


class Frame:
    """One operation activation: its instance, implicit generic bindings and result region"""

    __slots__ = ("op", "desc", "extra", "depth", "result_desc", "result_region", "type_env")

    def __init__(self, program: Program, op: Optional[OperationSig], desc: Optional[TypeDescriptor],
                 extra: Optional[Dict[str, Any]], depth: int, result_region):
        self.op = op
        self.desc = desc
        self.extra = extra
        self.depth = depth
        self.result_desc = None
        self.result_region = result_region
        self.type_env = TypeEnv(program, desc, extra)


class LoopState:
    """A loop run as a bag of iterations"""

    __slots__ = ("node", "master", "region", "env", "pending")

    def __init__(self, node: Node, master: Master, region, env: "Env"):
        self.node = node
        self.master = master
        self.region = region
        self.env = env
        self.pending: List[Any] = []


class Env:
    __slots__ = ("frame", "scope", "ctx", "loops")

    def __init__(self, frame: Frame, scope: Scope, ctx: Master, loops: Dict[int, Optional[LoopState]]):
        self.frame = frame
        self.scope = scope
        self.ctx = ctx
        self.loops = loops

    def nested(self, region) -> "Env":
        return Env(self.frame, Scope({}, self.scope, region), self.ctx, self.loops)

    def with_ctx(self, ctx: Master) -> "Env":
        return Env(self.frame, self.scope, ctx, self.loops)


def _is_fresh(node: Node) -> bool:
    """Whether an expression yields a temporary nobody else owns"""
    kind = node.kind
    if kind == "call":
        return not (node.ann.get("path_call") or node.ann.get("ref_result"))
    return kind in FRESH_KINDS


def _is_pure(node: Node) -> bool:
    kind = node.kind
    if kind == "literal":
        return node.ann.get("from_univ") is None
    if kind == "name":
        return not node.get("quoted")
    if kind in ("selected", "attribute", "is-null", "not-null", "unary-op", "binary-op", "in-set"):
        return all(_pure(c) for c in node.children)
    if kind == "call":
        callee = node.children[0]
        if callee.kind != "name" or callee.get("qual") is not None or len(node.children) != (
                3 if callee.text == "indexing" else 2):
            return False
        if callee.text == "indexing" and node.ann.get("path_call"):
            return all(_pure(c) for c in node.children[1:])
        if callee.text == "magnitude":
            return _pure(node.children[1])
    return False


def _pure(node: Node) -> bool:
    pure = node.ann.get("pure")
    if pure is None:
        pure = node.ann["pure"] = _is_pure(node)
    return pure


def _spawnable(node: Node) -> bool:
    """Cost gate: only operands containing a call, aggregate or loop run as their own picothread"""
    found = node.ann.get("spawnable")
    if found is None:
        found = False
        for sub in node.walk():
            if sub.kind == "seq-expr" or (sub.kind == "call" and not sub.ann.get("path_call")
                                          and not _pure(sub)):
                found = True
                break
        node.ann["spawnable"] = found
    return found


def _literal_value(node: Node):
    lit = node.get("lit")
    value = node.get("value")
    if lit == "char":
        return Char(value)
    if lit == "enum":
        if value in BOOLEAN_LITERALS:
            return value == "#true"
        return EnumLit(value)
    if lit == "null":
        return None
    return value


def scalar_binary(op: str, left, right, span=None):
    """Builtin meaning of a binary operator on scalars, or _SLOW when a user op applies"""
    tl, tr = type(left), type(right)
    if tl is int and tr is int:
        if op in INT_OPS:
            return int_binary(op, left, right, span)
        if op == "=?":
            return compare_scalars(left, right)
        if op == "..":
            return RangeValue(left, right)
    if op == "in" or op == "not in":
        if tr is RangeValue:
            found = left in right
            return found if op == "in" else not found
        raise _SLOW
    if op == "|" and (tl is str or tr is str) and not is_allocated(left) and not is_allocated(right) \
            and tl is not SliceView and tr is not SliceView:
        return format_value(left) + format_value(right)
    if (tl is float or tr is float) and tl in (int, float) and tr in (int, float):
        if op in REAL_OPS:
            return real_binary(op, float(left), float(right), span)
        if op == "=?":
            return compare_scalars(left, right)
    if op == "=?" and left is not None and right is not None and not is_allocated(left) \
            and not is_allocated(right) and tl is not SliceView and tr is not SliceView:
        return compare_scalars(left, right)
    raise _SLOW


def scalar_unary(op: str, value, span=None):
    t = type(value)
    if op == "not" and t is bool:
        return not value
    if t is int:
        if op == "-":
            return check_int(-value, span)
        if op == "+":
            return value
    if t is float:
        if op == "-":
            return -value
        if op == "+":
            return value
    raise _SLOW


class Interpreter:
    """
    Executes a resolved program on a work-stealing scheduler

    Attributes:
        program: Resolved program with builtins bound
        store: Region accounting
        scheduler: Servers running the picothreads
        sync_log: Event log of concurrent-object operations (debug-sync only)
    """

    def __init__(self, program: Program, config: Optional[Settings] = None, out=None,
                 store: Optional[Store] = None, scheduler: Optional[Scheduler] = None):
        self.logger = logging.getLogger(__name__)
        self.program = program
        self.settings = config or default_settings
        self.store = store or Store()
        self.scheduler = scheduler or Scheduler(servers=self.settings.servers, sequential=self.settings.sequential,
                                                seed=self.settings.seed,
                                                deadlock_grace_ms=self.settings.deadlock_grace_ms)
        self.sync_log = SyncLog() if self.settings.debug_sync else None
        self.out = out if out is not None else sys.stdout
        self._out_lock = threading.Lock()
        self._tls = threading.local()
        self._dispatch_cache: Dict[Tuple, Tuple[OperationSig, Any]] = {}
        self._scalar_descs: Dict[str, TypeDescriptor] = {}
        self._globals: Dict[str, Any] = {}
        self._globals_lock = threading.RLock()
        self.global_region = self.store.region_enter(None)
        self.root_region = self.store.region_enter(None)

    # Host entry points

    def run_main(self):
        """Run the stand-alone `func main()`"""
        mains = [op for op in self.program.funcs_named("main") if op.arity == 0]
        if not mains:
            raise RuntimeFault("NO_MAIN", "no stand-alone func main() declared")
        return self.call(mains[0], [])

    def call(self, op: OperationSig, args: List[Any], inst: Optional[TypeDescriptor] = None):
        """Call an operation from the host with already-built argument values"""
        self.logger.info(f"Calling {op.name} with {len(args)} arguments")
        return self.scheduler.run(self._host_call(op, inst, list(args)), label=op.name)

    def evaluate(self, expr: Node, scope: Optional[Scope] = None, ctx=None):
        """Evaluate one expression in a host-held scope (REPL)"""
        return self.scheduler.run(self._host_eval(expr, scope, ctx), label="eval")

    def execute(self, stmt: Node, scope: Scope):
        """Execute one statement in a host-held scope (REPL)"""
        return self.scheduler.run(self._host_exec(stmt, scope), label="exec")

    def new_scope(self) -> Scope:
        return Scope({}, None, self.store.region_enter(self.root_region))

    def _root_env(self, scope: Optional[Scope] = None) -> Env:
        frame = Frame(self.program, None, None, None, 0, self.root_region)
        return Env(frame, scope or Scope({}, None, self.root_region), Master(kind="root"), {})

    def _host_call(self, op: OperationSig, inst, args: List[Any]):
        env = self._root_env()
        locs = [Cell(a, self.root_region) for a in args]
        span = op.decl.span if op.decl is not None else None
        node = op.decl if op.decl is not None else Node("call", span=span)
        result, _ = yield from self._invoke_any(op, inst, locs, args, node, env, self.root_region, None)
        return result

    def _host_eval(self, expr: Node, scope: Optional[Scope], ctx):
        env = self._root_env(scope)
        value = yield from self.eval(expr, env, env.scope.region, ctx)
        if not _is_fresh(expr):
            value = self.store.copy(value, env.scope.region)
        return value

    def _host_exec(self, stmt: Node, scope: Scope):
        yield from self.exec(stmt, self._root_env(scope))

    def close(self):
        """Release the global and root regions"""
        for region in (self.root_region, self.global_region):
            try:
                self.store.region_exit(region)
            except InternalFault as e:
                self.logger.warning(f"Region left open at shutdown: {e}")

    def emit(self, text: str):
        with self._out_lock:
            self.out.write(text + "\n")

    # Helpers

    def _locked(self) -> bool:
        return getattr(self._tls, "depth", 0) > 0

    def _run_locked(self, gen):
        tls = self._tls
        tls.depth = getattr(tls, "depth", 0) + 1
        try:
            return run_sync(gen)
        finally:
            tls.depth -= 1

    def _poll(self, env: Env):
        if env.ctx.is_cancelled and not self._locked():
            raise Terminated()

    def _resolve(self, tnode: Optional[Node], frame: Frame):
        if tnode is None:
            return None
        return self.program.resolve_type(tnode, frame.type_env)

    def _component_types(self, desc: TypeDescriptor) -> List[Any]:
        try:
            return self.program.component_types(desc)
        except TypeResolutionError:
            return [None] * len(desc.components)

    def _scalar_desc(self, name: str) -> TypeDescriptor:
        desc = self._scalar_descs.get(name)
        if desc is None:
            sig = self.program.modules[name]
            if name == "Countable_Range":
                desc = self.program.instantiate(sig, [self._scalar_desc("Univ_Integer")])
            else:
                desc = self.program.instantiate(sig, [])
            self._scalar_descs[name] = desc
        return desc

    def desc_of(self, value, static=None):
        """Run-time type descriptor of a value, preferring the static one for builtin scalars"""
        if value is None:
            return static if isinstance(static, TypeDescriptor) else None
        t = type(value)
        if t is Composite or t is ArrayValue:
            return value.desc
        if t is SliceView:
            return value.base.desc
        if getattr(value, "is_concurrent", False):
            return value.desc
        if isinstance(static, TypeDescriptor) and static.module.builtin:
            if static.kind == "int" and t is int:
                return static
        name = scalar_module_name(value)
        if name is None:
            raise InternalFault(f"value of unknown kind {t.__name__}")
        return self._scalar_desc(name)

    def _own(self, value, node: Node, region):
        """Make a value owned by region: keep a fresh temporary, copy anything else"""
        if value is None or not (is_allocated(value) or type(value) is SliceView):
            return value
        if _is_fresh(node):
            return self.store.owned_in(value, region)
        return self.store.copy(value, region)

    def _range_check(self, desc, value, span):
        if type(value) is int and isinstance(desc, TypeDescriptor) and desc.kind == "int":
            bounds = desc.range
            if isinstance(bounds, RangeValue) and value not in bounds:
                raise RuntimeFault("PRECONDITION", f"{value} not in {desc.display()}", span)

    def _spawn(self, env: Env, master: Master, gen, label: str):
        if env.ctx.is_cancelled:
            gen.close()
            raise Terminated()
        self.scheduler.spawn(master, gen, label)

    def _claim(self, master: Master, signal: Exception):
        if master.claim(signal):
            self.scheduler.note_claim()
        elif isinstance(signal, ReturnSignal) and signal.value is not None:
            self.store.release(signal.value)

    # Names

    def lookup(self, name: str, env: Env, span=None):
        loc = env.scope.lookup(name)
        if loc is not None:
            return loc
        desc = env.frame.desc
        while desc is not None:
            if name in desc.bindings:
                value = desc.bindings[name]
                if not isinstance(value, (TypeDescriptor, FormalType)):
                    return ConstLoc(value)
            desc = desc.enclosing
        program = self.program
        if name in program.consts or name in program.globals:
            return self._global_loc(name)
        raise RuntimeFault("UNBOUND_NAME", f"no object named {name} is visible here", span)

    def _global_loc(self, name: str):
        loc = self._globals.get(name)
        if loc is not None:
            return loc
        with self._globals_lock:
            loc = self._globals.get(name)
            if loc is None:
                decl = self.program.consts.get(name) or self.program.globals[name]
                env = self._root_env(Scope({}, None, self.global_region))
                desc = self._resolve(decl.get("type"), env.frame)
                init = decl.get("init")
                value = None
                if init is not None:
                    value = self._run_locked(self.eval(init, env, self.global_region, desc))
                    value = self._own(value, init, self.global_region)
                if self.program.consts.get(name) is decl:
                    loc = ConstLoc(value, self.global_region, desc)
                else:
                    loc = Cell(value, self.global_region, True, desc, name)
                self._globals[name] = loc
                self.logger.debug(f"Initialized module-level {name}")
        return loc

    # Fast path

    def quick(self, node: Node, env: Env):
        kind = node.kind
        if kind == "name":
            return self.lookup(node.text, env, node.span).get()
        if kind == "literal":
            try:
                return node.ann["value"]
            except KeyError:
                value = node.ann["value"] = _literal_value(node)
                return value
        if kind == "binary-op":
            op = node.text
            left = self.quick(node.children[0], env)
            if op == "and" or op == "or" or op == "xor":
                if type(left) is not bool:
                    raise _SLOW
                if op == "and" and not left:
                    return False
                if op == "or" and left:
                    return True
                right = self.quick(node.children[1], env)
                if type(right) is not bool:
                    raise _SLOW
                return (left != right) if op == "xor" else right
            return scalar_binary(op, left, self.quick(node.children[1], env), node.span)
        if kind == "in-set":
            value = self.quick(node.children[0], env)
            found = False
            for member in node.children[1:]:
                m = self.quick(member, env)
                if type(value) is EnumLit or type(m) is EnumLit:
                    if value is m:
                        found = True
                        break
                elif value is None or m is None or is_allocated(value) or is_allocated(m):
                    raise _SLOW
                elif compare_scalars(value, m) is EQUAL:
                    found = True
                    break
            return not found if node.get("negated") else found
        if kind == "selected":
            return self._select(self.quick(node.children[0], env), node)
        if kind == "attribute":
            return self._attribute(self.quick(node.children[0], env), node)
        if kind == "is-null":
            return self.quick(node.children[0], env) is None
        if kind == "not-null":
            return self.quick(node.children[0], env) is not None
        if kind == "unary-op":
            return scalar_unary(node.text, self.quick(node.children[0], env), node.span)
        if kind == "call":
            name = node.children[0].text
            base = self.quick(node.children[1], env)
            t = type(base)
            if name == "magnitude":
                if t is ArrayValue or t is SliceView or t is RangeValue:
                    return base.length
                if t is str:
                    return len(base)
                raise _SLOW
            if t is not ArrayValue and t is not SliceView:
                raise _SLOW
            index = self.quick(node.children[2], env)
            if type(index) is not int or index < base.first or index > base.last:
                raise RuntimeFault("INDEX_RANGE", f"index {index} outside {base.first} .. {base.last}", node.span)
            if t is SliceView:
                array = base.base
                return array.slots[index - array.first]
            return base.slots[index - base.first]
        raise _SLOW

    def _select(self, obj, node: Node):
        if obj is None:
            raise RuntimeFault("NULL_DEREF", f"{pretty_print(node.children[0])} is null", node.span)
        if getattr(obj, "is_concurrent", False):
            return obj.read_component(self._component_index(obj.state.desc, node))
        return obj.slots[self._component_index(obj.desc, node)]

    @staticmethod
    def _component_index(desc, node: Node) -> int:
        idx = desc.component_index.get(node.text)
        if idx is None:
            raise InternalFault(f"{desc.display()} has no component {node.text}", node.span)
        return idx

    def _attribute(self, value, node: Node):
        t = type(value)
        if t is ArrayValue or t is SliceView:
            return value.first if node.text == "First" else value.last
        if t is RangeValue:
            return value.lo if node.text == "First" else value.hi
        if value is None:
            raise RuntimeFault("NULL_DEREF", f"{pretty_print(node.children[0])} is null", node.span)
        raise InternalFault(f"no {node.text} attribute for {type(value).__name__}", node.span)

    # Expressions

    def eval(self, node: Node, env: Env, region, ctx=None):
        """
        Evaluate an expression

        Args:
            node: Core expression
            env: Current environment
            region: Region receiving any value the expression allocates
            ctx: Descriptor the context expects (aggregates, records, null)
        """
        if _pure(node):
            try:
                return self.quick(node, env)
            except _Slow:
                pass
        kind = node.kind
        if kind == "call":
            op, result = yield from self._call(node, env, region, ctx)
            if op.result is not None and op.result.ref:
                if result is None:
                    return None
                value = result.get()
                if not node.ann.get("ref_result") and not node.ann.get("path_call"):
                    value = self.store.copy(value, region)
                return value
            return result
        if kind == "binary-op":
            return (yield from self._eval_binary(node, env, region, ctx))
        if kind == "seq-expr":
            return (yield from self._eval_seq(node, env, region, ctx))
        if kind == "record":
            return (yield from self._eval_record(node, env, region, ctx))
        if kind == "literal":
            conversion = node.ann.get("from_univ")
            if conversion is not None:
                return (yield from self.eval(conversion, env, region, node.ann.get("from_univ_type")))
            return _literal_value(node)
        if kind == "name":
            return self.lookup(node.text, env, node.span).get()
        if kind == "selected":
            obj = yield from self.eval(node.children[0], env, region)
            return self._select(obj, node)
        if kind == "attribute":
            value = yield from self.eval(node.children[0], env, region)
            return self._attribute(value, node)
        if kind == "is-null" or kind == "not-null":
            value = yield from self.eval(node.children[0], env, region)
            return (value is None) == (kind == "is-null")
        if kind == "unary-op":
            value = yield from self.eval(node.children[0], env, region)
            try:
                return scalar_unary(node.text, value, node.span)
            except _Slow:
                return (yield from self._apply_op(node, node.text, [value], env, region, ctx))
        if kind == "in-set":
            return (yield from self._eval_in_set(node, env, region))
        raise InternalFault(f"cannot evaluate {kind}", node.span)

    def eval_loc(self, node: Node, env: Env, region):
        """Evaluate a path to the location it denotes"""
        kind = node.kind
        if kind == "name":
            return self.lookup(node.text, env, node.span)
        if kind == "selected":
            base = yield from self.eval_loc(node.children[0], env, region)
            obj = base.get()
            if obj is None:
                raise RuntimeFault("NULL_DEREF", f"{pretty_print(node.children[0])} is null", node.span)
            if getattr(obj, "is_concurrent", False):
                obj = obj.locked_state(node.span)
            desc = obj.desc
            idx = self._component_index(desc, node)
            return SlotLoc(obj, idx, desc.components[idx].optional, self._component_types(desc)[idx])
        if kind == "call" and (node.ann.get("path_call") or node.ann.get("ref_result")):
            op, result = yield from self._call(node, env, region, None)
            if op.result is not None and op.result.ref:
                return result
            return ConstLoc(result, region)
        value = yield from self.eval(node, env, region)
        return ConstLoc(value, region)

    def _eval_in_set(self, node: Node, env: Env, region):
        value = yield from self.eval(node.children[0], env, region)
        found = False
        for member in node.children[1:]:
            m = yield from self.eval(member, env, region, self.desc_of(value))
            if type(value) is EnumLit or type(m) is EnumLit:
                same = value is m
            elif value is None or m is None:
                same = value is m
            elif is_allocated(value) or is_allocated(m):
                same = (yield from self._apply_op(node, "=?", [value, m], env, region, None)) is EQUAL
            else:
                same = compare_scalars(value, m) is EQUAL
            if same:
                found = True
                break
        return not found if node.get("negated") else found

    def _eval_binary(self, node: Node, env: Env, region, ctx):
        op = node.text
        left_node, right_node = node.children
        if op in ("and", "or", "xor"):
            left = yield from self.eval(left_node, env, region)
            if op == "and" and not left:
                return False
            if op == "or" and left:
                return True
            right = yield from self.eval(right_node, env, region)
            return (left != right) if op == "xor" else bool(right)
        left_ctx, right_ctx = is_contextual(left_node), is_contextual(right_node)
        if left_ctx and not right_ctx:
            right = yield from self.eval(right_node, env, region)
            left = yield from self.eval(left_node, env, region, self.desc_of(right))
        elif (node.ann.get("par_ok") and not node.ann.get("sequential_operands") and not right_ctx
              and _spawnable(left_node) and _spawnable(right_node) and not self._locked()):
            values = [None, None]
            yield from self._parallel_values([left_node, right_node], [0, 1], values, env, region)
            left, right = values
        else:
            left = yield from self.eval(left_node, env, region)
            right = yield from self.eval(right_node, env, region, self.desc_of(left) if right_ctx else None)
        try:
            return scalar_binary(op, left, right, node.span)
        except _Slow:
            pass
        if op == "not in":
            found = yield from self._apply_op(node, "in", [left, right], env, region, None)
            return not found
        return (yield from self._apply_op(node, op, [left, right], env, region, ctx))

    def _parallel_values(self, nodes: List[Node], indexes: List[int], values: List[Any], env: Env, region):
        """Evaluate operands as sibling picothreads, the first one inline"""
        master = Master(parent=env.ctx, kind="operands")
        child_env = env.with_ctx(master)
        for i in reversed(indexes[1:]):
            self._spawn(env, master, self._operand(nodes[i], child_env, region, values, i), "operand")
        first = indexes[0]
        try:
            values[first] = yield from self.eval(nodes[first], env, region)
        except Exception:
            master.cancel()
            yield Await(master)
            raise
        yield Await(master)
        if master.fault is not None:
            raise master.fault
        self._poll(env)

    def _operand(self, node: Node, env: Env, region, values: List[Any], index: int):
        try:
            if env.ctx.is_cancelled:
                return TERMINATED
            values[index] = yield from self.eval(node, env, region)
        except Terminated:
            return TERMINATED
        return None

    def _apply_op(self, node: Node, name: str, values: List[Any], env: Env, region, ctx):
        """Dispatch an operator on already-evaluated operands"""
        descs = [self.desc_of(v) for v in values]
        op, inst = self._resolve_op(node, name, None, len(values), descs, env, ctx)
        locs = [None] * len(values)
        result, _ = yield from self._invoke_any(op, inst, locs, values, node, env, region, self._implicit(op, descs))
        if op.result is not None and op.result.ref and result is not None:
            return self.store.copy(result.get(), region)
        return result

    def _eval_record(self, node: Node, env: Env, region, ctx):
        qual = node.get("qual")
        desc = self._resolve(qual, env.frame) if qual is not None else ctx
        if not isinstance(desc, TypeDescriptor) or desc.module.builtin:
            raise RuntimeFault("UNRESOLVED_CALL", "cannot determine the type of a record construction", node.span)
        comps = desc.components
        ctypes = self._component_types(desc)
        slots: List[Any] = [None] * len(comps)
        given = set()
        for pair in node.children:
            idx = desc.component_index.get(pair.text)
            if idx is None:
                raise InternalFault(f"{desc.display()} has no component {pair.text}", pair.span)
            value_node = pair.children[0]
            if pair.get("move"):
                src = yield from self.eval_loc(value_node, env, region)
                holder = Cell(None, region)
                self.store.move_into(holder, src)
                value = holder.value
            else:
                value = yield from self.eval(value_node, env, region, ctypes[idx])
                self._range_check(ctypes[idx], value, pair.span)
                value = self._own(value, value_node, region)
            slots[idx] = value
            given.add(idx)
        for i, comp in enumerate(comps):
            if i in given:
                continue
            if comp.init is not None:
                frame = Frame(self.program, None, desc, None, env.frame.depth, region)
                init_env = Env(frame, Scope({}, None, region), env.ctx, {})
                value = yield from self.eval(comp.init, init_env, region, ctypes[i])
                slots[i] = self._own(value, comp.init, region)
            if slots[i] is None and not comp.optional:
                raise RuntimeFault("NULL_INTO_REQUIRED", f"component {comp.name} of {desc.display()} is null",
                                   node.span)
        if desc.is_concurrent:
            state = self.store.new_composite(desc, slots, region)
            obj = ConcurrentObject(desc, state, None, self.scheduler, self.sync_log, self.settings.lock_timeout_ms,
                                   self.settings.debug_checks)
            return self.store.adopt(obj, region)
        return self.store.new_composite(desc, slots, region)

    def _eval_seq(self, node: Node, env: Env, region, ctx):
        """Expanded aggregate: build the container in region, then hand it out"""
        desc = None
        container = comprehension_container(node)
        if container is not None:
            value = yield from self.eval(container, env, region)
            desc = self.desc_of(value)
        if desc is None and isinstance(ctx, TypeDescriptor):
            desc = ctx
        if desc is None:
            static = node.ann.get("ctx")
            if isinstance(static, TypeDescriptor) and concrete(static):
                desc = static
        inner = env.nested(region)
        first = node.children[0]
        init = yield from self.eval(first.get("init"), inner, region, desc)
        cell = Cell(init, region, True, desc or self.desc_of(init), first.text)
        inner.scope.names[first.text] = cell
        for stmt in node.children[1:-1]:
            yield from self.exec(stmt, inner)
        value, cell.value = cell.value, None
        return value

    # Calls

    def _call(self, node: Node, env: Env, region, ctx):
        """
        Evaluate a call node

        Returns:
            (operation, result) where result is a location for ref operations
        """
        callee = node.children[0]
        name = callee.text
        qual = callee.get("qual")
        arg_nodes = self._ordered_args(node)
        count = len(arg_nodes)
        tmp = self.store.region_enter(region)
        try:
            locs: List[Any] = [None] * count
            values: List[Any] = [None] * count
            deferred = []
            heavy = []
            parallel = node.ann.get("par_ok") and not node.ann.get("sequential_operands") and not self._locked()
            for i, arg in enumerate(arg_nodes):
                if is_contextual(arg):
                    deferred.append(i)
                elif is_path(arg):
                    loc = yield from self.eval_loc(arg, env, tmp)
                    locs[i] = loc
                    values[i] = loc.get()
                elif parallel and _spawnable(arg):
                    heavy.append(i)
                else:
                    values[i] = yield from self.eval(arg, env, tmp)
            if len(heavy) > 1:
                yield from self._parallel_values(arg_nodes, heavy, values, env, tmp)
            elif heavy:
                values[heavy[0]] = yield from self.eval(arg_nodes[heavy[0]], env, tmp)
            descs = [None if i in deferred else self.desc_of(values[i]) for i in range(count)]
            if node.ann.get("aggregate") and not isinstance(ctx, TypeDescriptor):
                static = node.ann.get("ctx")
                if isinstance(static, TypeDescriptor) and concrete(static):
                    ctx = static
            op, inst = self._resolve_op(node, name, qual, count, descs, env, ctx)
            extra = self._implicit(op, descs)
            if deferred:
                type_env = TypeEnv(self.program, inst, extra)
                for i in deferred:
                    ptype = op.params[i].type
                    pdesc = None
                    if ptype is not None and ptype.kind != "type-formal":
                        try:
                            pdesc = self.program.resolve_type(ptype, type_env)
                        except TypeResolutionError:
                            pdesc = None
                    values[i] = yield from self.eval(arg_nodes[i], env, tmp, pdesc)
            checks = node.ann.get("disjoint_checks")
            if checks:
                yield from self._check_disjoint(node, checks, env, tmp)
            result, _ = yield from self._invoke_any(op, inst, locs, values, node, env, region, extra)
            return op, result
        finally:
            self.store.region_exit(tmp)

    def _ordered_args(self, node: Node) -> List[Node]:
        args = node.children[1:]
        if not any(a.kind == "named-arg" for a in args):
            return list(args)
        cands = node.ann.get("candidates") or []
        if not cands:
            return [a.children[0] if a.kind == "named-arg" else a for a in args]
        names = [p.name for p in cands[0].params]
        ordered: List[Any] = [None] * len(args)
        position = 0
        for a in args:
            if a.kind == "named-arg" and a.text in names:
                ordered[names.index(a.text)] = a.children[0]
            else:
                while ordered[position] is not None:
                    position += 1
                ordered[position] = a.children[0] if a.kind == "named-arg" else a
        return ordered

    def _implicit(self, op: OperationSig, descs: List[Any]) -> Optional[Dict[str, Any]]:
        """Bindings of implicit generic parameters (`V: Vec_Type is Vector<...>`)"""
        extra = None
        for i, p in enumerate(op.params):
            if p.type is not None and p.type.kind == "type-formal" and i < len(descs) and descs[i] is not None:
                if extra is None:
                    extra = {}
                extra[p.type.text] = descs[i]
        return extra

    def _resolve_op(self, node: Node, name: str, qual: Optional[str], arity: int, descs: List[Any], env: Env, ctx
                    ) -> Tuple[OperationSig, Any]:
        frame = env.frame
        key = (node.uid, name, tuple(id(d) for d in descs), id(ctx), id(frame.desc), id(frame.extra))
        found = self._dispatch_cache.get(key)
        if found is not None:
            return found
        cands: List[Tuple[OperationSig, Any]] = []
        seen = set()

        def add(ops, inst):
            for op in ops:
                if op.arity == arity and op.uid not in seen:
                    seen.add(op.uid)
                    cands.append((op, inst))

        program = self.program
        if qual is not None:
            owner_name = qual.split("::")[-1]
            if isinstance(ctx, TypeDescriptor) and ctx.name == owner_name:
                owner = ctx
            else:
                owner = program.lookup_type_name(owner_name, frame.type_env, node.span)
            if isinstance(owner, TypeDescriptor):
                add(owner.ops_for(name, arity), owner)
        else:
            add(program.funcs_named(name), None)
            for desc in descs:
                if isinstance(desc, TypeDescriptor):
                    add(desc.ops_for(name, arity), desc)
            if isinstance(ctx, TypeDescriptor):
                add(ctx.ops_for(name, arity), ctx)
            desc = frame.desc
            while desc is not None:
                add(desc.ops_for(name, arity), desc)
                desc = desc.enclosing
            if frame.extra:
                for bound in frame.extra.values():
                    if isinstance(bound, TypeDescriptor):
                        add(bound.ops_for(name, arity), bound)
            if not cands:
                for sig in program.modules.values():
                    if sig.builtin and sig.ops_named(name):
                        if sig.name == "Countable_Range":
                            inst = self._scalar_desc("Countable_Range")
                        elif any(f.default is None for f in sig.formals):
                            continue
                        else:
                            inst = program.instantiate(sig, [])
                        add(sig.ops_named(name), inst)
        for cand in cands:
            if self._fits(cand[0], cand[1], descs):
                self._dispatch_cache[key] = cand
                return cand
        shown = ", ".join(d.display() if isinstance(d, TypeDescriptor) else "?" for d in descs)
        raise RuntimeFault("UNRESOLVED_CALL", f"no operation {name}({shown})", node.span)

    def _fits(self, op: OperationSig, inst, descs: List[Any]) -> bool:
        env = TypeEnv(self.program, inst if isinstance(inst, TypeDescriptor) else None)
        for p, d in zip(op.params, descs):
            if d is None or p.type is None or p.type.kind == "type-formal":
                continue
            try:
                ptype = self.program.resolve_type(p.type, env)
            except TypeResolutionError:
                continue
            if not self._type_fits(ptype, d):
                return False
        return True

    @staticmethod
    def _type_fits(ptype, desc: TypeDescriptor) -> bool:
        if ptype is desc or not isinstance(ptype, TypeDescriptor):
            return True
        module = ptype.module
        if module is desc.module or module.is_abstract:
            return True
        if module.module_class is None and not module.builtin:
            return True
        kinds = (ptype.kind, desc.kind)
        if kinds[0] in ("int", "univ_int") and kinds[1] in ("int", "univ_int"):
            return True
        if kinds[0] in ("enum", "ordering", "bool") and kinds[1] in ("enum", "ordering", "bool"):
            return kinds[0] == "enum" or kinds[0] == kinds[1]
        return False

    def _invoke_any(self, op: OperationSig, inst, locs: List[Any], values: List[Any], node: Node, env: Env, region,
                    extra):
        impl = op.implementation
        if impl.builtin_fn is not None:
            args = []
            for i, p in enumerate(impl.params):
                if p.is_var or p.is_ref:
                    args.append(locs[i] if locs[i] is not None else Cell(values[i], region))
                else:
                    args.append(values[i])
            call = BuiltinCall(self, self.store, inst, region, node.span)
            return impl.builtin_fn(call, args), True
        result = yield from self.invoke(op, inst, locs, values, node, env, region, extra)
        return result, False

    def invoke(self, op: OperationSig, inst, locs: List[Any], values: List[Any], node: Node, env: Env, region,
               extra=None):
        """
        Run a user operation body

        Value results are owned by region; ref results are locations.
        Locked and queued operations run their body under the object's lock.
        """
        impl = op.implementation
        decl = impl.body_decl
        if decl is None:
            raise RuntimeFault("UNRESOLVED_CALL", f"{op.name} has no body", node.span)
        depth = env.frame.depth + 1
        if depth > self.settings.max_call_depth:
            raise RuntimeFault("CALL_DEPTH", f"call depth exceeded {self.settings.max_call_depth} in {op.name}",
                               node.span)
        frame = Frame(self.program, impl, inst, extra, depth, region)
        check_pre = node.ann.get("check_pre", True)
        if impl.result is not None and impl.result.type is not None:
            try:
                frame.result_desc = self._resolve(impl.result.type, frame)
            except TypeResolutionError:
                frame.result_desc = None
        local = self.store.region_enter(region)
        try:
            scope = Scope({}, None, local)
            self._bind_params(impl, decl, scope, locs, values, local)
            result_cell = None
            rnode = decl.get("result")
            if rnode is not None and rnode.text:
                result_cell = Cell(None, region, True, frame.result_desc, rnode.text)
                scope.names[rnode.text] = result_cell
            body_env = Env(frame, scope, env.ctx, {})
            sync = impl.sync_param
            if sync is None:
                return (yield from self._run_body(impl, decl, body_env, result_cell, node.span, check_pre))
            obj = values[sync]
            if obj is None:
                raise RuntimeFault("NULL_DEREF", f"{op.name} called on a null concurrent object", node.span)
            mode = impl.params[sync].sync_mode
            if mode != "queued":
                return obj.call_locked(op.name, mode, lambda: self._run_locked(
                    self._run_body(impl, decl, body_env, result_cell, node.span, check_pre)))
            dequeue = impl.dequeue or decl.get("dequeue")
            if dequeue is None:
                raise InternalFault(f"queued operation {op.name} has no dequeue condition", node.span)
            cond, until = dequeue.get("cond"), dequeue.text == "until"

            def condition() -> bool:
                value = self._run_locked(self.eval(cond, body_env, local))
                return bool(value) if until else not value

            def body():
                return self._run_locked(
                    self._run_body(impl, decl, body_env, result_cell, node.span, check_pre))

            if self._locked():
                return obj.call_queued_sync(op.name, condition, body)
            return (yield Park(lambda item: obj.call_queued(op.name, condition, body, item)))
        finally:
            self.store.region_exit(local)

    def _bind_params(self, op: OperationSig, decl: Node, scope: Scope, locs: List[Any], values: List[Any], local):
        decl_params = decl.get("params") or []
        for i, p in enumerate(op.params):
            if p.sync_mode is not None:
                loc = ConstLoc(values[i])
            elif p.is_var or p.is_ref:
                loc = locs[i] if locs[i] is not None else Cell(values[i], local, True)
            else:
                loc = ConstLoc(values[i])
            scope.names[p.name] = loc
            if i < len(decl_params) and decl_params[i].text != p.name:
                scope.names[decl_params[i].text] = loc

    def _run_body(self, op: OperationSig, decl: Node, env: Env, result_cell: Optional[Cell], span,
                  check_pre: bool = True):
        pre = decl.get("pre") or op.pre
        if pre is not None and check_pre:
            ok = yield from self.eval(pre, env, env.scope.region)
            if not ok:
                raise RuntimeFault("PRECONDITION", f"{{{pretty_print(pre)}}} failed on call of {op.name}", span)
        result = yield from self._body_result(op, decl, env, result_cell, span)
        post = decl.get("post") or op.post
        if post is not None and not (op.result is not None and op.result.ref):
            rnode = decl.get("result")
            if rnode is not None and rnode.text:
                env.scope.names[rnode.text] = ConstLoc(result)
            ok = yield from self.eval(post, env, env.scope.region)
            if not ok:
                raise RuntimeFault("POSTCONDITION", f"{{{pretty_print(post)}}} failed on return from {op.name}",
                                   span)
        return result

    def _body_result(self, op: OperationSig, decl: Node, env: Env, result_cell: Optional[Cell], span):
        frame = env.frame
        ref = op.result is not None and op.result.ref
        expr_body = decl.get("expr_body")
        if expr_body is not None:
            if ref:
                return (yield from self.eval_loc(expr_body, env, frame.result_region))
            value = yield from self.eval(expr_body, env, frame.result_region, frame.result_desc)
            self._range_check(frame.result_desc, value, span)
            return self._own(value, expr_body, frame.result_region)
        try:
            yield from self.exec(decl.get("body"), env)
        except ReturnSignal as r:
            if r.loc is not None:
                return r.loc
            if r.bare and result_cell is not None:
                value, result_cell.value = result_cell.value, None
                return value
            return r.value
        if result_cell is not None:
            value, result_cell.value = result_cell.value, None
            return value
        if op.result is not None and (ref or not op.result.optional):
            raise RuntimeFault("NO_RESULT", f"{op.name} ended without returning a result", span)
        return None

    def _check_disjoint(self, node: Node, checks, env: Env, region):
        """Run-time handoff check: argument paths that may overlap must not"""
        for a, b in checks:
            try:
                first = yield from self._step_bounds(a, env, region)
                second = yield from self._step_bounds(b, env, region)
            except InternalFault:
                continue
            if first is None or second is None:
                continue
            if first[0] == "comp" or second[0] == "comp":
                if first == second:
                    raise RuntimeFault("DISJOINT_FAIL", f"component {first[1]} handed off twice", node.span)
                continue
            (lo1, hi1), (lo2, hi2) = first, second
            if lo1 <= hi1 and lo2 <= hi2 and lo1 <= hi2 and lo2 <= hi1:
                raise RuntimeFault("DISJOINT_FAIL", f"{lo1} .. {hi1} overlaps {lo2} .. {hi2}", node.span)

    def _step_bounds(self, step, env: Env, region):
        kind, detail = step
        if kind == "const":
            return detail, detail
        if kind == "comp":
            return "comp", detail
        value = yield from self.eval(detail, env, region)
        if kind == "index" and type(value) is int:
            return value, value
        if kind == "slice" and type(value) is RangeValue:
            return value.lo, value.hi
        return None

    # Statements

    def exec(self, node: Node, env: Env):
        """Execute one statement"""
        kind = node.kind
        try:
            if kind == "block":
                yield from self._exec_block(node, env)
            elif kind == "decl":
                yield from self._exec_decl(node, env)
            elif kind == "assign":
                yield from self._exec_assign(node, env)
            elif kind == "call":
                tmp = self.store.region_enter(env.scope.region)
                try:
                    yield from self._call(node, env, tmp, None)
                finally:
                    self.store.region_exit(tmp)
            elif kind == "if":
                yield from self._exec_if(node, env)
            elif kind == "return":
                yield from self._exec_return(node, env)
            elif kind == "exit-loop":
                raise ExitSignal(node.ann.get("target"))
            elif kind == "continue-loop-with":
                yield from self._exec_continue(node, env)
            elif kind == "ref-decl":
                loc = yield from self.eval_loc(node.get("path"), env, env.scope.region)
                env.scope.names[node.text] = loc
            elif kind == "move" or kind == "swap":
                tmp = self.store.region_enter(env.scope.region)
                try:
                    dest = yield from self.eval_loc(node.children[0], env, tmp)
                    src = yield from self.eval_loc(node.children[1], env, tmp)
                finally:
                    self.store.region_exit(tmp)
                if kind == "move":
                    self.store.move_into(dest, src)
                else:
                    self.store.swap(dest, src)
            elif kind == "loop-until":
                yield from self._exec_while(node, env)
            elif kind == "for-in-range":
                yield from self._exec_for_range(node, env)
            elif kind == "for-then-while":
                if node.ann.get("bag"):
                    yield from self._exec_bag_loop(node, env)
                else:
                    yield from self._exec_sequential_loop(node, env)
            elif kind == "then-group":
                for section in node.children:
                    if section.kind == "block":
                        for stmt in section.children:
                            yield from self.exec(stmt, env)
                    else:
                        yield from self.exec(section, env)
            elif kind == "parallel-group":
                yield from self._exec_parallel(node, env)
            else:
                raise InternalFault(f"cannot execute {kind}", node.span)
        except RuntimeFault as e:
            if e.span is None:
                e.span = node.span
            raise

    def _exec_block(self, node: Node, env: Env):
        region = self.store.region_enter(env.scope.region)
        inner = env.nested(region)
        try:
            for stmt in node.children:
                yield from self.exec(stmt, inner)
        finally:
            self.store.region_exit(region)

    def _exec_decl(self, node: Node, env: Env):
        scope = env.scope
        tnode = node.get("type")
        desc = self._resolve(tnode, env.frame) if tnode is not None else None
        region = scope.region
        anchor = node.get("anchor")
        if anchor is not None:
            anchor_loc = yield from self.eval_loc(anchor, env, region)
            anchor_value = anchor_loc.get()
            if anchor_value is not None and getattr(anchor_value, "region", None) is not None:
                region = anchor_value.region
            elif anchor_loc.region is not None:
                region = anchor_loc.region
        optional = tnode is None or bool(tnode.get("optional"))
        cell = Cell(None, region, optional, desc, node.text)
        if region is not scope.region:
            self.store.declare_for(cell, scope.region)
        init = node.get("init")
        if init is not None:
            if node.get("move"):
                src = yield from self.eval_loc(init, env, region)
                self.store.move_into(cell, src)
            else:
                value = yield from self.eval(init, env, region, desc)
                if node.ann.get("range_check", True):
                    self._range_check(desc, value, node.span)
                self.store.assign_copy(cell, value, fresh=_is_fresh(init))
        if desc is None:
            cell.desc = self.desc_of(cell.value)
        scope.names[node.text] = cell

    def _exec_assign(self, node: Node, env: Env):
        op = node.get("op")
        target, expr = node.children
        tmp = self.store.region_enter(env.scope.region)
        try:
            dest = yield from self.eval_loc(target, env, tmp)
            if op == ":=":
                region = dest.region if dest.region is not None else tmp
                value = yield from self.eval(expr, env, region, dest.desc)
                if node.ann.get("range_check", True):
                    self._range_check(dest.desc, value, node.span)
                self.store.assign_copy(dest, value, fresh=_is_fresh(expr) and region is dest.region)
                return
            current = dest.get()
            desc = self.desc_of(current, dest.desc) if current is not None else dest.desc
            user_op = None
            if isinstance(desc, TypeDescriptor) and (not desc.module.builtin or desc.kind == "array"):
                user_op = self._compound_op(node, op, desc, env)
            if user_op is not None:
                called, inst = user_op
                rtype = called.params[1].type
                rdesc = None
                if rtype is not None and rtype.kind != "type-formal":
                    try:
                        rdesc = self.program.resolve_type(rtype, TypeEnv(self.program, inst))
                    except TypeResolutionError:
                        rdesc = None
                rhs_loc = None
                if is_path(expr):
                    rhs_loc = yield from self.eval_loc(expr, env, tmp)
                    rhs = rhs_loc.get()
                else:
                    rhs = yield from self.eval(expr, env, tmp, rdesc)
                yield from self._invoke_any(called, inst, [dest, rhs_loc], [current, rhs], node, env, tmp, None)
                return
            rhs = yield from self.eval(expr, env, tmp, desc)
            base_op = op[:-1]
            try:
                value = scalar_binary(base_op, current, rhs, node.span)
            except _Slow:
                value = yield from self._apply_op(node, base_op, [current, rhs], env, tmp, desc)
            if node.ann.get("range_check", True):
                self._range_check(dest.desc, value, node.span)
            self.store.assign_copy(dest, value, fresh=True)
        finally:
            self.store.region_exit(tmp)

    def _compound_op(self, node: Node, op: str, desc: TypeDescriptor, env: Env):
        found = [c for c in desc.ops_for(op, 2) if c.params and c.params[0].is_var]
        if found:
            return found[0], desc
        funcs = [c for c in self.program.funcs_named(op) if c.arity == 2 and c.params[0].is_var]
        if funcs:
            return funcs[0], None
        return None

    def _exec_if(self, node: Node, env: Env):
        for arm in node.children:
            tmp = self.store.region_enter(env.scope.region)
            try:
                cond = yield from self.eval(arm.children[0], env, tmp)
            finally:
                self.store.region_exit(tmp)
            if cond:
                yield from self.exec(arm.children[1], env)
                return
        otherwise = node.get("else")
        if otherwise is not None:
            yield from self.exec(otherwise, env)

    def _exec_return(self, node: Node, env: Env):
        frame = env.frame
        if not node.children:
            raise ReturnSignal(bare=True)
        expr = node.children[0]
        op = frame.op
        if op is not None and op.result is not None and op.result.ref:
            loc = yield from self.eval_loc(expr, env, frame.result_region)
            raise ReturnSignal(loc=loc)
        value = yield from self.eval(expr, env, frame.result_region, frame.result_desc)
        self._range_check(frame.result_desc, value, node.span)
        raise ReturnSignal(self._own(value, expr, frame.result_region))

    def _exec_continue(self, node: Node, env: Env):
        target = node.ann.get("target")
        state = env.loops.get(target.uid) if target is not None else None
        expr = node.children[0] if node.children else None
        if state is None:
            loc = None
            if expr is not None:
                region = env.scope.region
                loc = yield from self._loop_binding(target, expr, env, region)
            raise ContinueWith(target, loc)
        if expr is None:
            raise ContinueDone()
        binding = yield from self._loop_binding(target, expr, env, state.region)
        if self._locked():
            state.pending.append(binding)
        else:
            self._spawn(env, state.master, self._iteration(state, binding), "iteration")
        raise ContinueDone()

    def _loop_binding(self, loop: Node, expr: Node, env: Env, region):
        if loop.get("bind") == "=>":
            return (yield from self.eval_loc(expr, env, region))
        value = yield from self.eval(expr, env, region)
        return Cell(self._own(value, expr, region), region, True, None, loop.text)

    def _exec_while(self, node: Node, env: Env):
        until = node.get("loop_kind") == "until"
        cond = node.get("cond")
        body = node.get("body")
        loops = dict(env.loops)
        loops[node.uid] = None
        inner = Env(env.frame, env.scope, env.ctx, loops)
        while True:
            self._poll(env)
            tmp = self.store.region_enter(env.scope.region)
            try:
                value = yield from self.eval(cond, env, tmp)
            finally:
                self.store.region_exit(tmp)
            if bool(value) == until:
                return
            try:
                yield from self.exec(body, inner)
            except ExitSignal as e:
                if e.loop is not node:
                    raise
                return
            except ContinueWith as c:
                if c.loop is not node:
                    raise

    def _exec_for_range(self, node: Node, env: Env):
        tmp = self.store.region_enter(env.scope.region)
        try:
            bounds = yield from self.eval(node.get("range"), env, tmp)
        finally:
            self.store.region_exit(tmp)
        if type(bounds) is not RangeValue:
            raise InternalFault(f"for-in loop over {type(bounds).__name__}", node.span)
        if node.get("direction") == "reverse":
            indexes = range(bounds.hi, bounds.lo - 1, -1)
        else:
            indexes = range(bounds.lo, bounds.hi + 1)
        loops = dict(env.loops)
        loops[node.uid] = None
        body = node.get("body")
        for i in indexes:
            self._poll(env)
            region = self.store.region_enter(env.scope.region)
            inner = Env(env.frame, Scope({node.text: ConstLoc(i)}, env.scope, region), env.ctx, loops)
            try:
                yield from self.exec(body, inner)
            except ExitSignal as e:
                if e.loop is not node:
                    raise
                return
            except ContinueWith as c:
                if c.loop is not node:
                    raise
            finally:
                self.store.region_exit(region)

    def _exec_sequential_loop(self, node: Node, env: Env):
        loop_region = self.store.region_enter(env.scope.region)
        loops = dict(env.loops)
        loops[node.uid] = None
        cond, nxt, body = node.get("cond"), node.get("next"), node.get("body")
        try:
            binding = yield from self._loop_binding(node, node.get("init"), env, loop_region)
            while True:
                self._poll(env)
                region = self.store.region_enter(loop_region)
                inner = Env(env.frame, Scope({node.text: binding}, env.scope, region), env.ctx, loops)
                try:
                    if cond is not None:
                        ok = yield from self.eval(cond, inner, region)
                        if not ok:
                            return
                    following = None
                    try:
                        yield from self.exec(body, inner)
                    except ExitSignal as e:
                        if e.loop is not node:
                            raise
                        return
                    except ContinueWith as c:
                        if c.loop is not node:
                            raise
                        following = c.loc
                    if following is None:
                        if nxt is None:
                            return
                        following = yield from self._loop_binding(node, nxt, inner, loop_region)
                finally:
                    self.store.region_exit(region)
                if isinstance(binding, Cell) and binding.value is not None and binding is not following:
                    old = binding.value
                    if not (isinstance(following, Cell) and following.value is old):
                        self.store.release(old)
                binding = following
        finally:
            self.store.region_exit(loop_region)

    def _exec_bag_loop(self, node: Node, env: Env):
        """A loop whose iterations form a bag; `continue loop` adds to it"""
        loop_region = self.store.region_enter(env.scope.region)
        master = Master(parent=env.ctx, kind="loop")
        state = LoopState(node, master, loop_region, env)
        try:
            first = yield from self._loop_binding(node, node.get("init"), env, loop_region)
            yield from self._iteration(state, first)
            if self._locked():
                while state.pending:
                    yield from self._iteration(state, state.pending.pop(0))
            else:
                yield Await(master)
        except Exception:
            # iterations already spawned still use the loop region
            master.cancel()
            if master.outstanding:
                yield Await(master)
            self.store.region_exit(loop_region)
            raise
        self.store.region_exit(loop_region)
        if master.fault is not None:
            raise master.fault
        outcome = master.outcome
        if outcome is not None and not (isinstance(outcome, ExitSignal) and outcome.loop is node):
            raise outcome
        self._poll(env)

    def _iteration(self, state: LoopState, binding):
        master = state.master
        node = state.node
        outer = state.env
        try:
            if master.is_cancelled and not self._locked():
                return TERMINATED
            region = self.store.region_enter(state.region)
            loops = dict(outer.loops)
            loops[node.uid] = state
            env = Env(outer.frame, Scope({node.text: binding}, outer.scope, region), master, loops)
            try:
                cond = node.get("cond")
                if cond is not None:
                    ok = yield from self.eval(cond, env, region)
                    if not ok:
                        return None
                yield from self.exec(node.get("body"), env)
            finally:
                self.store.region_exit(region)
        except ContinueDone:
            return None
        except (ReturnSignal, ExitSignal, ContinueWith) as signal:
            self._claim(master, signal)
        except Terminated:
            return TERMINATED
        except Exception as e:
            master.record_fault(e)
        return None

    def _exec_parallel(self, node: Node, env: Env):
        """`||` group: every branch a picothread under one master, the first run inline"""
        checks = node.ann.get("disjoint_checks")
        if checks:
            tmp = self.store.region_enter(env.scope.region)
            try:
                yield from self._check_disjoint(node, checks, env, tmp)
            finally:
                self.store.region_exit(tmp)
        branches = node.children
        master = Master(parent=env.ctx, kind="group")
        if self._locked() or len(branches) == 1:
            for branch in branches:
                yield from self._branch(branch, env, master)
        else:
            for branch in reversed(branches[1:]):
                self._spawn(env, master, self._branch(branch, env, master), "branch")
            yield from self._branch(branches[0], env, master)
            yield Await(master)
        if master.fault is not None:
            raise master.fault
        if master.outcome is not None:
            raise master.outcome
        if master.continued:
            raise ContinueDone()
        self._poll(env)

    def _branch(self, body: Node, env: Env, master: Master):
        try:
            if master.is_cancelled and not self._locked():
                return TERMINATED
            yield from self.exec(body, env.with_ctx(master))
        except ContinueDone:
            master.continued = True
        except (ReturnSignal, ExitSignal, ContinueWith) as signal:
            self._claim(master, signal)
        except Terminated:
            return TERMINATED
        except Exception as e:
            master.record_fault(e)
        return None

    # Accounting

    def stats(self) -> Dict[str, Any]:
        sched = self.scheduler.stats()
        store = self.store.stats()
        return {
            "picothreads_spawned": sched.picothreads_spawned,
            "picothreads_executed": sched.picothreads_executed,
            "picothreads_terminated": sched.picothreads_terminated,
            "steals": sched.steals,
            "max_active": sched.max_active,
            "servers": sched.servers,
            "claims": sched.claims,
            "live_objects_at_exit": store.live_objects,
            "regions_created": store.regions_created,
            "allocated": store.allocated,
            "released": store.released,
        }
