"""
Module signatures, generic instantiation and interface conformance
"""
import itertools
import logging
import threading
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from ast_nodes import Node
from errors import RuntimeFault
from store import DEFAULT_INT_RANGE, RangeValue

logger = logging.getLogger(__name__)

_module_ids = itertools.count(1)


class ParamSig(BaseModel):
    """One formal parameter of an operation"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    mode: str = "read-only"
    type: Optional[Node] = None
    anonymous: bool = False

    @property
    def optional(self) -> bool:
        return bool(self.type is not None and self.type.get("optional"))

    @property
    def is_var(self) -> bool:
        return self.mode in ("var", "ref-var", "locked-var", "queued-var")

    @property
    def is_ref(self) -> bool:
        return self.mode.startswith("ref")

    @property
    def sync_mode(self) -> Optional[str]:
        if self.mode.startswith("locked"):
            return "exclusive" if self.mode == "locked-var" else "shared"
        if self.mode.startswith("queued"):
            return "queued"
        return None


class ResultSig(BaseModel):
    """Result profile of an operation"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: Optional[str] = None
    type: Optional[Node] = None
    ref: bool = False

    @property
    def optional(self) -> bool:
        return bool(self.type is not None and self.type.get("optional"))


class OperationSig(BaseModel):
    """An operation of a module, a stand-alone function, or a builtin"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    params: List[ParamSig] = []
    result: Optional[ResultSig] = None
    pre: Optional[Node] = None
    post: Optional[Node] = None
    dequeue: Optional[Node] = None
    decl: Optional[Node] = None
    body_decl: Optional[Node] = None
    rename_of: Optional[str] = None
    target: Optional["OperationSig"] = None
    module: Optional[Any] = None
    internal: bool = False
    builtin_fn: Optional[Callable] = None
    uid: int = 0

    def model_post_init(self, __context):
        self.uid = next(_module_ids)

    @property
    def arity(self) -> int:
        return len(self.params)

    @property
    def has_body(self) -> bool:
        decl = self.body_decl
        return self.builtin_fn is not None or (decl is not None and (
            decl.get("body") is not None or decl.get("expr_body") is not None))

    @property
    def implementation(self) -> "OperationSig":
        seen = 0
        op = self
        while op.target is not None and seen < 16:
            op = op.target
            seen += 1
        return op

    @property
    def sync_param(self) -> Optional[int]:
        for i, p in enumerate(self.params):
            if p.sync_mode is not None:
                return i
        return None

    def __hash__(self) -> int:
        return self.uid

    def __eq__(self, other) -> bool:
        return self is other


class ComponentSig(BaseModel):
    """A data component of a module"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    type: Optional[Node] = None
    var: bool = True
    init: Optional[Node] = None
    span: Optional[Any] = None

    @property
    def optional(self) -> bool:
        return bool(self.type is not None and self.type.get("optional"))


class FormalSig(BaseModel):
    """A module formal parameter (type or value)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    kind: str = "type"
    constraint: Optional[Node] = None
    default: Optional[Node] = None


class ModuleSig(BaseModel):
    """Interface plus optional class of one module"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    path: str = ""
    formals: List[FormalSig] = []
    is_abstract: bool = False
    is_concurrent: bool = False
    implements: List[Node] = []
    interface: Optional[Node] = None
    module_class: Optional[Node] = None
    parent: Optional["ModuleSig"] = None
    local_modules: Dict[str, "ModuleSig"] = {}
    components: List[ComponentSig] = []
    type_decls: Dict[str, Node] = {}
    operations: Dict[str, List[OperationSig]] = {}
    builtin: Optional[str] = None
    uid: int = 0

    def model_post_init(self, __context):
        self.uid = next(_module_ids)

    def __hash__(self) -> int:
        return self.uid

    def __eq__(self, other) -> bool:
        return self is other

    @property
    def parameterless(self) -> bool:
        return not self.formals

    def ops_named(self, name: str) -> List[OperationSig]:
        return self.operations.get(name, [])

    def all_ops(self) -> List[OperationSig]:
        return [op for ops in self.operations.values() for op in ops]


OperationSig.model_rebuild()
ModuleSig.model_rebuild()


class FormalType:
    """Placeholder for a formal type while checking a generic body"""

    __slots__ = ("name", "constraint", "owner")

    def __init__(self, name: str, constraint: Optional[Node], owner: Optional[ModuleSig]):
        self.name = name
        self.constraint = constraint
        self.owner = owner

    kind = "formal"
    is_concurrent = False

    def __repr__(self) -> str:
        return f"<formal {self.name}>"


class TypeDescriptor:
    """
    A monomorphized instantiation of a module

    Identical instantiations are interned, so descriptors compare by identity.
    """

    __slots__ = ("module", "bindings", "name", "kind", "enclosing", "key", "component_index",
                 "_component_types", "range", "_op_cache")

    def __init__(self, module: ModuleSig, bindings: Dict[str, Any], enclosing: Optional["TypeDescriptor"],
                 key: Tuple):
        self.module = module
        self.bindings = bindings
        self.enclosing = enclosing
        self.key = key
        self.name = module.name
        self.kind = module.builtin or "module"
        self.component_index = {c.name: i for i, c in enumerate(module.components)}
        self._component_types: Optional[List[Any]] = None
        self.range = bindings.get("Range") if module.builtin == "int" else None
        self._op_cache: Dict[Tuple[str, int], List[OperationSig]] = {}

    @property
    def is_concurrent(self) -> bool:
        return self.module.is_concurrent

    @property
    def components(self) -> List[ComponentSig]:
        return self.module.components

    @property
    def ops(self) -> Dict[str, List[OperationSig]]:
        return self.module.operations

    def ops_for(self, name: str, arity: int) -> List[OperationSig]:
        key = (name, arity)
        found = self._op_cache.get(key)
        if found is None:
            found = [op for op in self.module.ops_named(name) if op.arity == arity]
            self._op_cache[key] = found
        return found

    def binding(self, name: str):
        desc = self
        while desc is not None:
            if name in desc.bindings:
                return desc.bindings[name]
            desc = desc.enclosing
        return None

    def display(self) -> str:
        if not self.bindings:
            return self.name
        parts = []
        for formal in self.module.formals:
            value = self.bindings.get(formal.name)
            parts.append(value.display() if isinstance(value, TypeDescriptor) else repr(value))
        return f"{self.name}<{', '.join(parts)}>"

    def __repr__(self) -> str:
        return f"TypeDescriptor({self.display()})"


class TypeEnv:
    """Name scope for type expressions: extra bindings, then the current instance, then globals"""

    __slots__ = ("program", "desc", "extra")

    def __init__(self, program: "Program", desc: Optional[TypeDescriptor] = None,
                 extra: Optional[Dict[str, Any]] = None):
        self.program = program
        self.desc = desc
        self.extra = extra

    def with_extra(self, extra: Dict[str, Any]) -> "TypeEnv":
        merged = dict(self.extra or {})
        merged.update(extra)
        return TypeEnv(self.program, self.desc, merged)


class TypeResolutionError(RuntimeFault):
    """Raised when a type expression cannot be resolved at run time"""

    def __init__(self, message: str, span=None, code: str = "UNDECLARED"):
        super().__init__(code, message, span)


def eval_static(expr: Node, consts: Optional[Dict[str, Any]] = None):
    """
    Evaluate a constant expression with unbounded integer precision

    Supports literals, unary and binary arithmetic, ranges and references to
    known constants; anything else yields None.
    """
    kind = expr.kind
    if kind == "literal":
        return expr.get("value")
    if kind == "name" and consts is not None and expr.text in consts:
        return consts[expr.text]
    if kind == "unary-op":
        inner = eval_static(expr.children[0], consts)
        if inner is None:
            return None
        if expr.text == "-" and isinstance(inner, int):
            return -inner
        if expr.text == "+":
            return inner
        if expr.text == "not" and isinstance(inner, bool):
            return not inner
        return None
    if kind == "binary-op":
        left = eval_static(expr.children[0], consts)
        right = eval_static(expr.children[1], consts)
        if not isinstance(left, int) or not isinstance(right, int):
            return None
        op = expr.text
        try:
            if op == "+":
                return left + right
            if op == "-":
                return left - right
            if op == "*":
                return left * right
            if op == "/":
                return _trunc_div(left, right)
            if op == "mod":
                return left % right
            if op == "rem":
                return left - right * _trunc_div(left, right)
            if op == "**":
                return left ** right if 0 <= right < 4096 else None
            if op == "..":
                return RangeValue(left, right)
        except ZeroDivisionError:
            return None
    return None


def _trunc_div(left: int, right: int) -> int:
    quotient = abs(left) // abs(right)
    return quotient if (left >= 0) == (right >= 0) else -quotient


class Program:
    """
    All modules and stand-alone operations of a loaded program

    Owns the instantiation interner; lookups are safe from any thread once
    loading finished.
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.modules: Dict[str, ModuleSig] = {}
        self.funcs: Dict[str, List[OperationSig]] = {}
        self.consts: Dict[str, Node] = {}
        self.globals: Dict[str, Node] = {}
        self.type_decls: Dict[str, Node] = {}
        self._interned: Dict[Tuple, TypeDescriptor] = {}
        self._intern_lock = threading.RLock()
        self._type_cache: Dict[Tuple, Any] = {}
        self.instantiations = 0

    # Lookup

    def module(self, name: str) -> Optional[ModuleSig]:
        return self.modules.get(name)

    def funcs_named(self, name: str) -> List[OperationSig]:
        return self.funcs.get(name, [])

    def all_op_names(self) -> set:
        names = set(self.funcs)
        for sig in self.modules.values():
            names.update(sig.operations)
            for local in sig.local_modules.values():
                names.update(local.operations)
        return names

    def ops_named(self, name: str) -> List[OperationSig]:
        """Every operation with that name in any module or stand-alone"""
        found = list(self.funcs.get(name, []))
        for sig in self.modules.values():
            found.extend(sig.ops_named(name))
            for local in sig.local_modules.values():
                found.extend(local.ops_named(name))
        return found

    # Instantiation

    def instantiate(self, sig: ModuleSig, actuals: Optional[List[Any]] = None,
                    named: Optional[Dict[str, Any]] = None,
                    enclosing: Optional[TypeDescriptor] = None, span=None) -> TypeDescriptor:
        """
        Intern the instantiation of a module with the given actuals

        Args:
            sig: Module to instantiate
            actuals: Positional actuals (descriptors or constant values)
            named: Actuals given by formal name
            enclosing: Instance whose bindings a local module inherits

        Returns:
            The unique descriptor for (module, actuals, enclosing)
        """
        actuals = list(actuals or [])
        named = dict(named or {})
        if len(actuals) > len(sig.formals):
            raise TypeResolutionError(f"too many actuals for {sig.name}", span, code="CONFORMANCE")
        bindings: Dict[str, Any] = {}
        for i, formal in enumerate(sig.formals):
            if i < len(actuals):
                bindings[formal.name] = actuals[i]
            elif formal.name in named:
                bindings[formal.name] = named[formal.name]
            elif formal.default is not None:
                bindings[formal.name] = self.default_actual(sig, formal)
            else:
                bindings[formal.name] = FormalType(formal.name, formal.constraint, sig)
        key = (sig.uid, id(enclosing) if enclosing is not None else 0,
               tuple(_actual_key(bindings[f.name]) for f in sig.formals))
        found = self._interned.get(key)
        if found is not None:
            return found
        with self._intern_lock:
            found = self._interned.get(key)
            if found is None:
                found = TypeDescriptor(sig, bindings, enclosing, key)
                self._interned[key] = found
                self.instantiations += 1
                self.logger.debug(f"Instantiated {found.display()}")
        return found

    def default_actual(self, sig: ModuleSig, formal: FormalSig):
        if formal.kind == "value":
            value = eval_static(formal.default)
            if value is None:
                raise TypeResolutionError(f"default for {sig.name}.{formal.name} is not static", formal.default.span)
            return value
        return self.resolve_type(formal.default, TypeEnv(self))

    def instantiation_count(self) -> int:
        return len(self._interned)

    # Type expressions

    def resolve_type(self, node: Node, env: TypeEnv):
        """
        Resolve a type expression to a descriptor

        Args:
            node: A `type` or `type-formal` node
            env: Scope supplying formal bindings and the current instance

        Returns:
            A TypeDescriptor, or a FormalType placeholder inside generic bodies

        Raises:
            TypeResolutionError: On unknown names or non-static value actuals
        """
        if node is None:
            return None
        if node.kind == "type-formal":
            return self.resolve_type(node.get("constraint"), env)
        cache_key = (node.uid, id(env.desc), id(env.extra) if env.extra else 0)
        if not env.extra:
            cached = self._type_cache.get(cache_key)
            if cached is not None:
                return cached
        resolved = self._resolve_type(node, env)
        if not env.extra and not isinstance(resolved, FormalType):
            self._type_cache[cache_key] = resolved
        return resolved

    def _resolve_type(self, node: Node, env: TypeEnv):
        name = node.text
        qual = node.get("qual")
        if qual:
            owner = self.lookup_type_name(qual.split("::")[-1], env, node.span)
            if isinstance(owner, TypeDescriptor):
                member = owner.binding(name)
                if member is not None:
                    return member
                if name in owner.module.type_decls:
                    return self.resolve_type(owner.module.type_decls[name], TypeEnv(self, owner))
            if isinstance(owner, FormalType):
                return FormalType(f"{qual}::{name}", None, owner.owner)
            if self.module(name) is None:
                raise TypeResolutionError(f"unknown type {qual}::{name}", node.span)
        if not node.get("generic") and not node.get("actuals"):
            return self.lookup_type_name(name, env, node.span)
        sig, enclosing = self.lookup_module(name, env, node.span)
        positional, named = [], {}
        for actual in node.get("actuals", []):
            if actual.kind == "named-actual":
                named[actual.text] = self.resolve_actual(sig, actual.text, actual.get("value"), env)
            else:
                formal_name = sig.formals[len(positional)].name if len(positional) < len(sig.formals) else None
                positional.append(self.resolve_actual(sig, formal_name, actual, env))
        if not positional and not named and sig.formals and all(f.default is None for f in sig.formals):
            return FormalType(sig.name, node, sig)
        return self.instantiate(sig, positional, named, enclosing, node.span)

    def resolve_actual(self, sig: ModuleSig, formal_name: Optional[str], actual: Node, env: TypeEnv):
        formal = next((f for f in sig.formals if f.name == formal_name), None)
        if actual.kind == "type" and (formal is None or formal.kind == "type"):
            return self.resolve_type(actual, env)
        consts = {}
        if env.desc is not None:
            for f in env.desc.module.formals:
                value = env.desc.binding(f.name)
                if not isinstance(value, (TypeDescriptor, FormalType)):
                    consts[f.name] = value
        value = eval_static(actual, consts)
        if value is None:
            if actual.kind == "name" or actual.kind == "type":
                return FormalType(actual.text, None, sig)
            raise TypeResolutionError(f"actual for {sig.name} is not a static value", actual.span)
        return value

    def lookup_module(self, name: str, env: TypeEnv, span=None) -> Tuple[ModuleSig, Optional[TypeDescriptor]]:
        desc = env.desc
        while desc is not None:
            local = desc.module.local_modules.get(name)
            if local is not None:
                return local, desc
            desc = desc.enclosing
        sig = self.modules.get(name)
        if sig is None:
            raise TypeResolutionError(f"unknown module {name}", span)
        return sig, None

    def lookup_type_name(self, name: str, env: TypeEnv, span=None):
        if env.extra and name in env.extra:
            return env.extra[name]
        desc = env.desc
        while desc is not None:
            if name in desc.bindings:
                return desc.bindings[name]
            if name == desc.name:
                return desc
            if name in desc.module.type_decls:
                return self.resolve_type(desc.module.type_decls[name], TypeEnv(self, desc, env.extra))
            local = desc.module.local_modules.get(name)
            if local is not None:
                return self.instantiate(local, [], None, desc, span)
            desc = desc.enclosing
        if name in self.type_decls:
            return self.resolve_type(self.type_decls[name], TypeEnv(self))
        sig = self.modules.get(name)
        if sig is None:
            raise TypeResolutionError(f"unknown type {name}", span)
        if sig.formals and any(f.default is None for f in sig.formals):
            return FormalType(name, None, sig)
        return self.instantiate(sig, [], None, None, span)

    def component_types(self, desc: TypeDescriptor) -> List[Any]:
        types = desc._component_types
        if types is None:
            env = TypeEnv(self, desc)
            types = [self.resolve_type(c.type, env) if c.type is not None else None for c in desc.components]
            desc._component_types = types
        return types

    # Conformance

    def conforms(self, actual, constraint: Optional[Node], env: TypeEnv) -> bool:
        """
        Whether an actual type satisfies a formal's constraint

        Parameterless constraints match structurally on operation names and
        arities; parameterized ones need an explicit `implements` entry or an
        instantiation of the constraint module itself.
        """
        if constraint is None or isinstance(actual, FormalType) or actual is None:
            return True
        if not isinstance(actual, TypeDescriptor):
            return True
        csig = self.modules.get(constraint.text)
        if csig is None:
            return True
        if csig.parameterless:
            for op in csig.all_ops():
                if not actual.ops_for(op.name, op.arity):
                    return False
            return True
        if actual.module is csig:
            for i, sub in enumerate(constraint.get("actuals", [])):
                if sub.kind == "type" and i < len(csig.formals):
                    if not self.conforms(actual.bindings.get(csig.formals[i].name), sub, env):
                        return False
            return True
        for impl in actual.module.implements:
            if impl.text == csig.name:
                return True
        return False

    def check_actuals(self, desc: TypeDescriptor, env: TypeEnv) -> List[str]:
        """Names of formals whose bound actual fails its constraint"""
        failed = []
        for formal in desc.module.formals:
            if formal.kind != "type":
                continue
            actual = desc.bindings.get(formal.name)
            if not self.conforms(actual, formal.constraint, env):
                failed.append(formal.name)
        return failed


def _actual_key(value):
    if isinstance(value, (TypeDescriptor, FormalType)):
        return ("t", id(value))
    if isinstance(value, RangeValue):
        return ("r", value.lo, value.hi)
    return ("v", type(value).__name__, value if isinstance(value, (int, str, bool, float)) else id(value))


def default_int_range() -> RangeValue:
    return DEFAULT_INT_RANGE
