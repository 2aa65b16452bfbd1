"""
Name resolution, module assembly and static typing

The resolver turns desugared units into ModuleSig / OperationSig tables inside
a Program, then walks every body binding names and annotating expressions with
their static types. safety_checks reads those annotations.
"""
import logging
from typing import Any, Dict, Iterable, List, Optional, Tuple

from ast_nodes import Node, callee_name
from builtin_catalog import BOOLEAN_LITERALS, BUILTIN_KINDS, ORDERINGS
from desugar import comprehension_container, desugar_literal, desugar_op_rename
from models import Diagnostic, Span
from type_system import (ComponentSig, FormalSig, FormalType, ModuleSig, OperationSig, ParamSig, Program,
                         ResultSig, TypeDescriptor, TypeEnv, TypeResolutionError)

logger = logging.getLogger(__name__)

ORDERING_SYMBOLS = frozenset(o.sym for o in ORDERINGS)


def diagnostic(code: str, message: str, span: Optional[Span], severity: str = "error") -> Diagnostic:
    return Diagnostic(severity=severity, code=code, message=message, span=span or Span())


class Binding:
    """What a name in a body refers to, as seen by the checker"""

    __slots__ = ("name", "kind", "stype", "optional", "writable", "decl", "loops", "groups", "ref_root",
                 "declared_type", "mode")

    def __init__(self, name: str, kind: str, stype=None, optional: bool = True, writable: bool = False,
                 decl: Optional[Node] = None, loops: Tuple = (), groups: Tuple = (),
                 ref_root: Optional["Binding"] = None, declared_type: bool = False, mode: str = ""):
        self.name = name
        self.kind = kind  # param | local | const | ref | loop | result | formal | global | global-const
        self.stype = stype
        self.optional = optional
        self.writable = writable
        self.decl = decl
        self.loops = loops
        self.groups = groups
        self.ref_root = ref_root
        self.declared_type = declared_type
        self.mode = mode

    def root(self) -> "Binding":
        binding = self
        while binding.ref_root is not None and binding.ref_root is not binding:
            binding = binding.ref_root
        return binding

    @property
    def concurrent(self) -> bool:
        return bool(getattr(self.stype, "is_concurrent", False))

    def __repr__(self) -> str:
        return f"Binding({self.kind} {self.name})"


class AnalyzedBody:
    """One checked body with the bindings of its parameters and named result"""

    __slots__ = ("op", "module", "decl", "roots", "params", "result", "self_desc")

    def __init__(self, op: Optional[OperationSig], module: Optional[ModuleSig], decl: Optional[Node]):
        self.op = op
        self.module = module
        self.decl = decl
        self.roots: List[Tuple[str, Node]] = []
        self.params: List[Binding] = []
        self.result: Optional[Binding] = None
        self.self_desc: Optional[TypeDescriptor] = None


def is_contextual(node: Node) -> bool:
    """Expressions whose type comes from where they are used"""
    if node.kind == "record" and node.get("qual") is None:
        return True
    if node.kind == "seq-expr" and node.ann.get("aggregate"):
        return True
    if node.kind == "call" and node.ann.get("aggregate"):
        return True
    return node.kind == "literal" and node.get("lit") == "null"


def path_root_binding(node: Node) -> Optional[Binding]:
    """Binding at the root of a path expression (through selections, indexing and slicing)"""
    while True:
        kind = node.kind
        if kind in ("selected", "attribute"):
            node = node.children[0]
        elif kind == "call" and len(node.children) > 1 and (
                node.ann.get("path_call") or callee_name(node) in ("indexing", "slicing")
                or node.ann.get("ref_result")):
            node = node.children[1]
        elif kind == "name":
            return node.ann.get("binding")
        else:
            return None


def concrete(value) -> bool:
    """Whether a descriptor has no unbound formals anywhere in it"""
    if isinstance(value, FormalType):
        return False
    if not isinstance(value, TypeDescriptor):
        return True
    seen = set()
    stack = [value]
    while stack:
        desc = stack.pop()
        if id(desc) in seen:
            continue
        seen.add(id(desc))
        for bound in desc.bindings.values():
            if isinstance(bound, FormalType):
                return False
            if isinstance(bound, TypeDescriptor):
                stack.append(bound)
        if desc.enclosing is not None:
            stack.append(desc.enclosing)
    return True


class Resolver:
    """
    Assembles modules from units and checks names and types

    Units can be added incrementally (library, program files, REPL input);
    finish() checks everything added since the previous call.
    """

    def __init__(self, program: Optional[Program] = None):
        self.logger = logging.getLogger(__name__)
        self.program = program or Program()
        self.diagnostics: List[Diagnostic] = []
        self.bodies: List[AnalyzedBody] = []
        self._new_modules: List[ModuleSig] = []
        self._new_funcs: List[OperationSig] = []
        self._new_consts: List[Tuple[str, Node]] = []
        self._builtin_unit = False
        self._checked_descs = set()
        self._op_names = None

    # Assembly

    def add_unit(self, unit: Node, builtin: bool = False):
        """Register every declaration of a desugared unit"""
        self._builtin_unit = builtin
        for decl in unit.children:
            self._add_top(decl)
        self._builtin_unit = False
        self._op_names = None

    def _error(self, code: str, message: str, span, severity: str = "error"):
        self.diagnostics.append(diagnostic(code, message, span, severity))

    def _add_top(self, decl: Node):
        kind = decl.kind
        program = self.program
        if kind == "module-interface":
            self._add_interface(decl, None)
        elif kind == "module-class":
            self._add_class(decl, None)
        elif kind in ("op-decl", "func-decl"):
            op = self._operation(decl, None)
            for other in program.funcs.get(op.name, []):
                if other.arity == op.arity and [p.mode for p in other.params] == [p.mode for p in op.params]:
                    self._error("DUP_DECL", f"{op.name} already declared", decl.span)
                    return
            program.funcs.setdefault(op.name, []).append(op)
            self._new_funcs.append(op)
        elif kind == "type-decl":
            if decl.text in program.type_decls or decl.text in program.modules:
                self._error("DUP_DECL", f"type {decl.text} already declared", decl.span)
                return
            program.type_decls[decl.text] = decl.get("type")
        elif kind == "component-decl":
            if decl.text in program.consts or decl.text in program.globals:
                self._error("DUP_DECL", f"{decl.text} already declared", decl.span)
                return
            if decl.get("var"):
                program.globals[decl.text] = decl
            else:
                program.consts[decl.text] = decl
                self._new_consts.append((decl.text, decl))

    def _module_table(self, parent: Optional[ModuleSig]) -> Dict[str, ModuleSig]:
        return parent.local_modules if parent is not None else self.program.modules

    def _add_interface(self, decl: Node, parent: Optional[ModuleSig]):
        table = self._module_table(parent)
        name = decl.text
        existing = table.get(name)
        if existing is not None and existing.interface is not None:
            self._error("DUP_DECL", f"module {name} already declared", decl.span)
            return
        sig = existing or ModuleSig(name=name)
        sig.path = decl.get("path") or name
        sig.interface = decl
        sig.parent = parent
        sig.is_abstract = bool(decl.get("abstract"))
        sig.is_concurrent = bool(decl.get("concurrent"))
        sig.implements = list(decl.get("implements") or [])
        sig.formals = [FormalSig(name=f.text, kind=f.get("formal_kind"), constraint=f.get("type"),
                                 default=f.get("default"))
                       for f in decl.get("formals") or []]
        if self._builtin_unit:
            sig.builtin = BUILTIN_KINDS.get(name)
        table[name] = sig
        self._new_modules.append(sig)
        for item in decl.children:
            self._add_module_item(sig, item, exported=True, from_class=False)

    def _add_class(self, decl: Node, parent: Optional[ModuleSig]):
        table = self._module_table(parent)
        name = decl.text
        sig = table.get(name)
        if sig is None:
            self._error("UNDECLARED", f"class {name} has no interface", decl.span)
            sig = ModuleSig(name=name, path=decl.get("path") or name, parent=parent)
            table[name] = sig
            self._new_modules.append(sig)
        if sig.module_class is not None:
            self._error("DUP_DECL", f"class {name} already declared", decl.span)
            return
        if bool(decl.get("concurrent")) != sig.is_concurrent:
            self._error("CONCURRENT_MISMATCH", f"interface and class of {name} disagree on concurrent", decl.span)
        sig.module_class = decl
        exports_at = decl.get("exports_at", len(decl.children))
        for i, item in enumerate(decl.children):
            self._add_module_item(sig, item, exported=i >= exports_at, from_class=True)

    def _add_module_item(self, sig: ModuleSig, item: Node, exported: bool, from_class: bool):
        kind = item.kind
        if kind == "component-decl":
            if any(c.name == item.text for c in sig.components):
                self._error("DUP_DECL", f"component {item.text} already declared in {sig.name}", item.span)
                return
            sig.components.append(ComponentSig(name=item.text, type=item.get("type"), var=bool(item.get("var")),
                                               init=item.get("init"), span=item.span))
        elif kind == "type-decl":
            if item.text in sig.type_decls:
                self._error("DUP_DECL", f"type {item.text} already declared in {sig.name}", item.span)
                return
            sig.type_decls[item.text] = item.get("type")
        elif kind == "module-interface":
            self._add_interface(item, sig)
        elif kind == "module-class":
            self._add_class(item, sig)
        elif kind in ("op-decl", "func-decl"):
            if from_class and exported:
                match = self._interface_op_for(sig, item)
                if match is not None:
                    if match.body_decl is not None:
                        self._error("DUP_DECL", f"{item.text} already has a body in {sig.name}", item.span)
                        return
                    match.body_decl = item
                    return
            op = self._operation(item, sig)
            op.internal = from_class and not exported
            sig.operations.setdefault(op.name, []).append(op)

    def _interface_op_for(self, sig: ModuleSig, decl: Node) -> Optional[OperationSig]:
        params = decl.get("params") or []
        for op in sig.ops_named(decl.text):
            if op.internal or op.decl is None or op.decl.get("rename") is not None:
                continue
            if op.arity != len(params):
                continue
            if all(p.mode == q.get("mode") for p, q in zip(op.params, params)):
                return op
        return None

    def _operation(self, decl: Node, module: Optional[ModuleSig]) -> OperationSig:
        params = [ParamSig(name=p.text, mode=p.get("mode"), type=p.get("type"), anonymous=bool(p.get("anonymous")))
                  for p in decl.get("params") or []]
        result = None
        rnode = decl.get("result")
        if rnode is not None:
            result = ResultSig(name=rnode.text, type=rnode.get("type"), ref=bool(rnode.get("ref")))
        has_body = decl.get("body") is not None or decl.get("expr_body") is not None
        return OperationSig(name=decl.text, params=params, result=result, pre=decl.get("pre"), post=decl.get("post"),
                            dequeue=decl.get("dequeue"), decl=decl, body_decl=decl if has_body else None,
                            rename_of=decl.get("rename"), module=module)

    # Whole-program checks

    def finish(self) -> List[Diagnostic]:
        """Check everything registered since the last call; returns the new diagnostics"""
        start = len(self.diagnostics)
        modules = self._all_new_modules()
        for sig in modules:
            self._bind_renames(list(sig.all_ops()), sig)
            self._check_exports(sig)
            self._check_sync_modes(sig)
        self._bind_renames(self._new_funcs, None)
        self._check_cycles(modules)
        for sig in modules:
            self._check_signature_types(sig)
        for sig in modules:
            if sig.builtin:
                continue
            for op in sig.all_ops():
                if op.body_decl is not None and op.rename_of is None:
                    self._analyze_op(op, sig)
            if sig.components:
                self._analyze_component_inits(sig)
        for op in self._new_funcs:
            if op.body_decl is not None and op.rename_of is None:
                self._analyze_op(op, None)
            else:
                self._check_standalone_types(op)
        for name, decl in self._new_consts:
            self._analyze_const(decl)
        self._new_modules, self._new_funcs, self._new_consts = [], [], []
        found = self.diagnostics[start:]
        self.logger.info(f"Resolved {len(modules)} modules, {len(found)} diagnostics")
        return found

    def _all_new_modules(self) -> List[ModuleSig]:
        result, seen = [], set()
        for sig in self._new_modules:
            if sig.uid not in seen:
                seen.add(sig.uid)
                result.append(sig)
        return result

    def _bind_renames(self, ops: List[OperationSig], module: Optional[ModuleSig]):
        for op in ops:
            if op.rename_of is None:
                continue
            pool = module.all_ops() if module is not None else [o for os in self.program.funcs.values() for o in os]
            decls = {id(o.decl): o for o in pool if o.decl is not None}
            target = desugar_op_rename(op.decl, [o.decl for o in pool if o.decl is not None])
            if target is None:
                if not any(o.name == op.rename_of for o in pool):
                    self._error("UNDECLARED", f"{op.name} renames unknown operation \"{op.rename_of}\"", op.decl.span)
                else:
                    self._error("RENAME_SIG", f"{op.name} does not match the signature of \"{op.rename_of}\"",
                                op.decl.span)
                continue
            op.target = decls[id(target)]

    def _check_exports(self, sig: ModuleSig):
        if sig.builtin or sig.is_abstract:
            return
        for op in sig.all_ops():
            if op.internal or op.rename_of is not None or op.body_decl is not None:
                continue
            self._error("MISSING_EXPORT", f"{sig.name}.{op.name} has no body", op.decl.span if op.decl else None)

    def _check_sync_modes(self, sig: ModuleSig):
        for op in sig.all_ops():
            queued = any(p.sync_mode == "queued" for p in op.params)
            synced = any(p.sync_mode is not None for p in op.params)
            if synced and not sig.is_concurrent:
                self._error("SYNC_UNSUPPORTED", f"{op.name}: locked and queued parameters need a concurrent module",
                            op.decl.span)
            body = op.body_decl
            if body is not None and body.get("dequeue") is not None and not queued:
                self._error("SYNC_UNSUPPORTED", f"{op.name}: dequeue condition without a queued parameter",
                            body.span)
            if queued and body is not None and body.get("dequeue") is None and not sig.builtin:
                self._error("SYNC_UNSUPPORTED", f"{op.name}: queued parameter without a dequeue condition",
                            body.span)

    def _component_target(self, sig: ModuleSig, tnode: Node) -> Optional[ModuleSig]:
        name = tnode.text
        seen = 0
        while seen < 8:
            seen += 1
            owner = sig
            found = None
            while owner is not None:
                if name in owner.local_modules:
                    found = owner.local_modules[name]
                    break
                if name in owner.type_decls:
                    nxt = owner.type_decls[name]
                    if nxt.get("optional"):
                        return None
                    name = nxt.text
                    found = False
                    break
                owner = owner.parent
            if found:
                return found
            if found is False:
                continue
            if name in self.program.type_decls:
                nxt = self.program.type_decls[name]
                if nxt.get("optional"):
                    return None
                name = nxt.text
                continue
            return self.program.modules.get(name)
        return None

    def _check_cycles(self, modules: List[ModuleSig]):
        edges: Dict[int, List[Tuple[ModuleSig, ComponentSig]]] = {}
        nodes: Dict[int, ModuleSig] = {}

        def collect(sig: ModuleSig):
            nodes[sig.uid] = sig
            out = edges.setdefault(sig.uid, [])
            for comp in sig.components:
                if comp.type is None or comp.optional:
                    continue
                target = self._component_target(sig, comp.type)
                if target is not None and not target.builtin:
                    out.append((target, comp))
            for local in sig.local_modules.values():
                collect(local)

        for sig in self.program.modules.values():
            collect(sig)
        reported = set()
        new_ids = {m.uid for m in modules}
        for start in modules:
            if start.uid in reported:
                continue
            stack = [(start, iter(edges.get(start.uid, [])))]
            on_path = {start.uid}
            while stack:
                current, it = stack[-1]
                step = next(it, None)
                if step is None:
                    on_path.discard(current.uid)
                    stack.pop()
                    continue
                target, comp = step
                if target.uid == start.uid:
                    if start.uid in new_ids and start.uid not in reported:
                        reported.add(start.uid)
                        self._error("CYCLE", f"{start.name} contains itself through non-optional component "
                                             f"{comp.name}", comp.span)
                    continue
                if target.uid in on_path or target.uid not in edges:
                    continue
                on_path.add(target.uid)
                stack.append((target, iter(edges.get(target.uid, []))))

    def generic_instance(self, sig: ModuleSig) -> TypeDescriptor:
        """The instance used while checking a module's own bodies (formals left unbound)"""
        enclosing = self.generic_instance(sig.parent) if sig.parent is not None else None
        return self.program.instantiate(sig, [], None, enclosing)

    def resolve_type_node(self, node: Optional[Node], env: TypeEnv):
        """Resolve a type node, diagnosing unknown names and failed constraints"""
        if node is None:
            return None
        try:
            resolved = self.program.resolve_type(node, env)
        except TypeResolutionError as e:
            self._error(e.code, e.message, node.span)
            return None
        if isinstance(resolved, TypeDescriptor) and concrete(resolved):
            self.check_conformance(resolved, node.span)
        return resolved

    def check_conformance(self, desc: TypeDescriptor, span):
        """Constraint check of a concrete instantiation, recursively through its component types"""
        stack = [desc]
        while stack:
            current = stack.pop()
            if id(current) in self._checked_descs:
                continue
            self._checked_descs.add(id(current))
            env = TypeEnv(self.program)
            for formal in self.program.check_actuals(current, env):
                actual = current.bindings.get(formal)
                shown = actual.display() if isinstance(actual, TypeDescriptor) else repr(actual)
                self._error("CONFORMANCE", f"{shown} does not satisfy the constraint on {formal} of {current.name}",
                            span)
            for bound in current.bindings.values():
                if isinstance(bound, TypeDescriptor):
                    stack.append(bound)
            try:
                for ctype in self.program.component_types(current):
                    if isinstance(ctype, TypeDescriptor):
                        stack.append(ctype)
            except TypeResolutionError as e:
                self._error(e.code, e.message, span)

    def _check_signature_types(self, sig: ModuleSig):
        if sig.builtin:
            return
        env = TypeEnv(self.program, self.generic_instance(sig))
        for comp in sig.components:
            self.resolve_type_node(comp.type, env)
        for tnode in sig.type_decls.values():
            self.resolve_type_node(tnode, env)
        for impl in sig.implements:
            if impl.text not in self.program.modules:
                self._error("UNDECLARED", f"unknown interface {impl.text}", impl.span)
        for formal in sig.formals:
            if formal.kind == "type" and formal.constraint is not None:
                if self.program.modules.get(formal.constraint.text) is None:
                    self._error("UNDECLARED", f"unknown interface {formal.constraint.text}", formal.constraint.span)

    def _check_standalone_types(self, op: OperationSig):
        env = TypeEnv(self.program)
        for p in op.params:
            if p.type is not None and p.type.kind == "type":
                self.resolve_type_node(p.type, env)

    # Bodies

    def op_names(self) -> set:
        if self._op_names is None:
            self._op_names = self.program.all_op_names()
        return self._op_names

    def _analyze_op(self, op: OperationSig, module: Optional[ModuleSig]):
        body = AnalyzedBody(op, module, op.body_decl)
        analyzer = BodyAnalyzer(self, body)
        try:
            analyzer.run()
        except TypeResolutionError as e:
            self._error(e.code, e.message, e.span)
        self.bodies.append(body)

    def _analyze_component_inits(self, sig: ModuleSig):
        body = AnalyzedBody(None, sig, None)
        analyzer = BodyAnalyzer(self, body)
        for comp in sig.components:
            if comp.init is not None:
                ctype = analyzer.type_of(comp.type)
                analyzer.expr(comp.init, ctype)
                analyzer.check_literal(comp.init, ctype)
                body.roots.append(("init", comp.init))
        if body.roots:
            self.bodies.append(body)

    def _analyze_const(self, decl: Node):
        body = AnalyzedBody(None, None, decl)
        analyzer = BodyAnalyzer(self, body)
        ctype = analyzer.type_of(decl.get("type"))
        init = decl.get("init")
        if init is not None:
            analyzer.expr(init, ctype)
            analyzer.check_literal(init, ctype)
            body.roots.append(("init", init))
        self.bodies.append(body)


class BodyAnalyzer:
    """Binds names and computes static types over one body"""

    def __init__(self, resolver: Resolver, body: AnalyzedBody):
        self.resolver = resolver
        self.program = resolver.program
        self.body = body
        self.module = body.module
        self.self_desc = resolver.generic_instance(body.module) if body.module is not None else None
        body.self_desc = self.self_desc
        self.extra: Dict[str, Any] = {}
        self.scopes: List[Dict[str, Binding]] = [{}]
        self.loops: List[Node] = []
        self.groups: List[Tuple[Node, int]] = []
        self.seen = set()

    # Helpers

    def error(self, code: str, message: str, span, severity: str = "error"):
        self.resolver._error(code, message, span, severity)

    def env(self) -> TypeEnv:
        return TypeEnv(self.program, self.self_desc, self.extra or None)

    def type_of(self, tnode: Optional[Node]):
        return self.resolver.resolve_type_node(tnode, self.env())

    def builtin_desc(self, name: str, actuals: Optional[List[Any]] = None):
        sig = self.program.modules.get(name)
        if sig is None:
            return None
        try:
            return self.program.instantiate(sig, actuals or [])
        except TypeResolutionError:
            return None

    def declare(self, binding: Binding, span):
        scope = self.scopes[-1]
        if binding.name in scope:
            self.error("DUP_DECL", f"{binding.name} already declared in this scope", span)
        scope[binding.name] = binding

    def lookup(self, name: str) -> Optional[Binding]:
        for scope in reversed(self.scopes):
            found = scope.get(name)
            if found is not None:
                return found
        desc = self.self_desc
        while desc is not None:
            for formal in desc.module.formals:
                if formal.name == name and formal.kind == "value":
                    return Binding(name, "formal", stype=self.type_of(formal.constraint), optional=False)
            desc = desc.enclosing
        if name in self.program.consts:
            return Binding(name, "global-const", optional=False, decl=self.program.consts[name])
        if name in self.program.globals:
            return Binding(name, "global", optional=True, writable=True, decl=self.program.globals[name])
        return None

    def push(self):
        self.scopes.append({})

    def pop(self):
        self.scopes.pop()

    # Entry

    def run(self):
        op = self.body.op
        decl = self.body.decl
        for pnode in decl.get("params") or []:
            ptype = pnode.get("type")
            if ptype is not None and ptype.kind == "type-formal":
                stype = self.type_of(ptype.get("constraint"))
                self.extra[ptype.text] = stype
            else:
                stype = self.type_of(ptype)
            mode = pnode.get("mode") or "read-only"
            writable = mode in ("var", "ref-var", "locked-var", "queued-var")
            binding = Binding(pnode.text, "param", stype=stype, optional=bool(ptype is not None and ptype.get("optional")),
                              writable=writable, decl=pnode, declared_type=True, mode=mode)
            self.declare(binding, pnode.span)
            self.body.params.append(binding)
        rnode = decl.get("result")
        result_type = None
        if rnode is not None:
            result_type = self.type_of(rnode.get("type"))
            if rnode.text:
                self.body.result = Binding(rnode.text, "result", stype=result_type,
                                           optional=bool(rnode.get("type").get("optional")), writable=True,
                                           decl=rnode, declared_type=True)
        self.result_type = result_type
        for role in ("pre", "dequeue"):
            node = decl.get(role)
            if node is None:
                continue
            cond = node.get("cond") if role == "dequeue" else node
            self.expr(cond)
            self.body.roots.append((role, cond))
        if self.body.result is not None:
            self.declare(self.body.result, rnode.span)
        if decl.get("post") is not None:
            self.expr(decl.get("post"))
            self.body.roots.append(("post", decl.get("post")))
        if decl.get("expr_body") is not None:
            expr_body = decl.get("expr_body")
            self.expr(expr_body, result_type)
            self.check_literal(expr_body, result_type)
            self.body.roots.append(("expr_body", expr_body))
        if decl.get("body") is not None:
            self.block(decl.get("body"), new_scope=False)
            self.body.roots.append(("body", decl.get("body")))

    # Statements

    def block(self, node: Node, new_scope: bool = True):
        if new_scope:
            self.push()
        try:
            for stmt in node.children:
                self.stmt(stmt)
        finally:
            if new_scope:
                self.pop()

    def stmt(self, node: Node):
        kind = node.kind
        node.ann["loops"] = tuple(self.loops)
        node.ann["groups"] = tuple(self.groups)
        if kind == "block":
            self.block(node)
        elif kind == "then-group":
            for section in node.children:
                self.block(section, new_scope=False)
        elif kind == "parallel-group":
            for i, branch in enumerate(node.children):
                self.groups.append((node, i))
                self.block(branch, new_scope=False)
                self.groups.pop()
        elif kind == "decl":
            self.decl(node)
        elif kind == "ref-decl":
            path = node.get("path")
            stype = self.expr(path)
            root = path_root_binding(path)
            binding = Binding(node.text, "ref", stype=stype, optional=True,
                              writable=bool(root.writable) if root else False, decl=node,
                              loops=tuple(self.loops), groups=tuple(self.groups), ref_root=root)
            node.ann["binding"] = binding
            self.declare(binding, node.span)
        elif kind == "assign":
            self.assign(node)
        elif kind in ("move", "swap"):
            lhs, rhs = node.children
            target = self.expr(lhs)
            self.expr(rhs, target)
        elif kind == "call":
            self.expr(node)
        elif kind == "return":
            node.ann["op"] = self.body.op
            if node.children:
                value = node.children[0]
                self.expr(value, self.result_type)
                self.check_literal(value, self.result_type)
            elif self.body.decl.get("result") is not None and self.body.result is None:
                self.error("NO_RESULT", "bare return in an operation without a named result", node.span)
        elif kind == "exit-loop":
            if not self.loops:
                self.error("SYNTAX", "exit loop outside of a loop", node.span)
            else:
                node.ann["target"] = self.loops[-1]
        elif kind == "continue-loop-with":
            self.continue_loop(node)
        elif kind == "if":
            for arm in node.children:
                cond, body = arm.children
                self.expr(cond)
                self.block(body)
            if node.get("else") is not None:
                self.block(node.get("else"))
        elif kind == "loop-until":
            self.loops.append(node)
            self.expr(node.get("cond"))
            self.block(node.get("body"))
            self.loops.pop()
        elif kind == "for-in-range":
            bounds = self.expr(node.get("range"))
            self.push()
            bound_type = bounds.binding("Bound_Type") if isinstance(bounds, TypeDescriptor) else None
            binding = Binding(node.text, "loop", stype=bound_type or self.builtin_desc("Univ_Integer"),
                              optional=False, writable=False, decl=node, loops=tuple(self.loops),
                              groups=tuple(self.groups))
            node.ann["binding"] = binding
            self.declare(binding, node.span)
            self.loops.append(node)
            self.block(node.get("body"))
            self.loops.pop()
            self.pop()
        elif kind == "for-then-while":
            self.for_then_while(node)
        else:
            self.error("SYNTAX", f"unexpected {kind} statement", node.span)

    def decl(self, node: Node):
        dtype = node.get("type")
        stype = self.type_of(dtype) if dtype is not None else None
        if node.get("anchor") is not None:
            self.expr(node.get("anchor"))
        init = node.get("init")
        if init is not None:
            init_type = self.expr(init, stype)
            if dtype is None:
                stype = init_type
            elif not node.get("move"):
                self.check_literal(init, stype)
        elif dtype is None:
            self.error("SYNTAX", f"{node.text} needs a type or an initial value", node.span)
        binding = Binding(node.text, "local" if node.get("var") else "const", stype=stype,
                          optional=bool(dtype.get("optional")) if dtype is not None else True,
                          writable=bool(node.get("var")), decl=node, loops=tuple(self.loops),
                          groups=tuple(self.groups), declared_type=dtype is not None)
        node.ann["binding"] = binding
        self.declare(binding, node.span)

    def assign(self, node: Node):
        lhs, rhs = node.children
        target = self.expr(lhs)
        op = node.get("op")
        if op == ":=":
            self.expr(rhs, target)
            self.check_literal(rhs, target)
            return
        compound = op[:-1]
        ctx = None
        cands = self.candidates(op, None, 2, [target, None], None)
        if cands:
            ctx = self.param_type(cands[0], 1, [target, None])
            node.ann["candidates"] = [c for c, _ in cands]
        elif compound and isinstance(target, TypeDescriptor) and target.module.builtin is None:
            self.error("UNRESOLVED_CALL", f"no operation \"{op}\" for {target.display()}", node.span)
        self.expr(rhs, ctx if ctx is not None else target)

    def continue_loop(self, node: Node):
        if not self.loops:
            self.error("SYNTAX", "continue loop outside of a loop", node.span)
            return
        loop = self.loops[-1]
        node.ann["target"] = loop
        if not node.children:
            return
        if loop.kind != "for-then-while":
            self.error("SYNTAX", "continue loop with a value needs a for loop with a loop variable", node.span)
            return
        if node.text is not None and node.text != loop.text:
            self.error("UNDECLARED", f"{node.text} is not the loop variable {loop.text}", node.span)
        binding = loop.ann.get("binding")
        self.expr(node.children[0], binding.stype if binding else None)

    def for_then_while(self, node: Node):
        self.push()
        init = node.get("init")
        stype = self.expr(init)
        if node.get("bind") == "=>":
            root = path_root_binding(init)
            writable = bool(root.writable) if root else False
        else:
            root, writable = None, True
        binding = Binding(node.text, "loop", stype=stype, optional=True, writable=writable, decl=node,
                          loops=tuple(self.loops), groups=tuple(self.groups), ref_root=root)
        node.ann["binding"] = binding
        node.ann["bag"] = node.get("next") is None
        self.declare(binding, node.span)
        self.loops.append(node)
        if node.get("next") is not None:
            self.expr(node.get("next"), stype)
        if node.get("cond") is not None:
            self.expr(node.get("cond"))
        self.block(node.get("body"))
        self.loops.pop()
        self.pop()

    # Expressions

    def expr(self, node: Node, ctx=None):
        if id(node) in self.seen:
            return node.ann.get("stype")
        self.seen.add(id(node))
        stype = self._expr(node, ctx)
        if stype is not None:
            node.ann["stype"] = stype
        return stype

    def _expr(self, node: Node, ctx):
        kind = node.kind
        if kind == "literal":
            return self.literal_type(node)
        if kind == "name":
            return self.name_expr(node)
        if kind == "selected":
            return self.selected(node)
        if kind == "attribute":
            base = self.expr(node.children[0])
            if isinstance(base, TypeDescriptor) and base.kind == "range":
                return base.binding("Bound_Type")
            return self.builtin_desc("Univ_Integer")
        if kind in ("is-null", "not-null"):
            self.expr(node.children[0])
            return self.builtin_desc("Boolean")
        if kind == "unary-op":
            inner = self.expr(node.children[0])
            return self.builtin_desc("Boolean") if node.text == "not" else inner
        if kind == "binary-op":
            return self.binary(node, ctx)
        if kind == "in-set":
            return self.in_set(node)
        if kind == "call":
            return self.call(node, ctx)
        if kind == "record":
            return self.record(node, ctx)
        if kind == "seq-expr":
            return self.seq_expr(node, ctx)
        if kind == "named-arg":
            return self.expr(node.children[0], ctx)
        self.error("SYNTAX", f"unexpected {kind} expression", node.span)
        return None

    def literal_type(self, node: Node):
        lit = node.get("lit")
        if lit == "int":
            return self.builtin_desc("Univ_Integer")
        if lit == "real":
            return self.builtin_desc("Univ_Real")
        if lit == "char":
            return self.builtin_desc("Univ_Character")
        if lit == "string":
            return self.builtin_desc("Univ_String")
        if lit == "enum":
            return self.builtin_desc("Boolean" if node.get("value") in BOOLEAN_LITERALS else "Univ_Enumeration")
        return None

    def name_expr(self, node: Node):
        if node.get("quoted"):
            if node.text not in self.resolver.op_names():
                self.error("UNDECLARED", f"unknown operation \"{node.text}\"", node.span)
            return None
        binding = self.lookup(node.text)
        if binding is None:
            self.error("UNDECLARED", f"{node.text} is not declared", node.span)
            return None
        node.ann["binding"] = binding
        if binding.kind == "global-const" and binding.stype is None:
            decl = binding.decl
            if decl.get("type") is not None:
                binding.stype = self.type_of(decl.get("type"))
        return binding.stype

    def selected(self, node: Node):
        base = self.expr(node.children[0])
        if not isinstance(base, TypeDescriptor):
            return None
        idx = base.component_index.get(node.text)
        if idx is None:
            if base.module.builtin is None:
                self.error("UNDECLARED", f"{base.display()} has no component {node.text}", node.span)
            return None
        node.ann["component_optional"] = base.components[idx].optional
        try:
            return self.program.component_types(base)[idx]
        except TypeResolutionError as e:
            self.error(e.code, e.message, node.span)
            return None

    def binary(self, node: Node, ctx):
        op = node.text
        left, right = node.children
        boolean = self.builtin_desc("Boolean")
        if op in ("and", "or", "xor"):
            self.expr(left)
            self.expr(right)
            return boolean
        if op in ("in", "not in"):
            ltype = self.expr(left) if not is_contextual(left) else None
            rtype = self.expr(right, ltype)
            if ltype is None:
                self.expr(left, rtype.binding("Bound_Type") if isinstance(rtype, TypeDescriptor) else None)
            cands = self.candidates("in", None, 2, [ltype, rtype], None)
            node.ann["candidates"] = [c for c, _ in cands]
            return boolean
        if is_contextual(left) and not is_contextual(right):
            rtype = self.expr(right)
            ltype = self.expr(left, rtype if rtype is not None else ctx)
        else:
            ltype = self.expr(left, ctx if is_contextual(left) else None)
            rtype = self.expr(right, ltype)
        if op == "=?":
            return self.builtin_desc("Ordering")
        if op == "..":
            bound = ltype if isinstance(ltype, (TypeDescriptor, FormalType)) else self.builtin_desc("Univ_Integer")
            return self.builtin_desc("Countable_Range", [bound])
        if op == "|" and (self._is_string(ltype) or self._is_string(rtype)):
            return self.builtin_desc("Univ_String")
        cands = self.candidates(op, None, 2, [ltype, rtype], ctx)
        node.ann["candidates"] = [c for c, _ in cands]
        if isinstance(ltype, TypeDescriptor) and ltype.module.builtin in ("univ_int", "int", "real"):
            return ltype
        if cands:
            return self.result_type_of(cands[0], [ltype, rtype]) or ltype
        return ltype

    def _is_string(self, stype) -> bool:
        return isinstance(stype, TypeDescriptor) and stype.kind == "string"

    def in_set(self, node: Node):
        subject = self.expr(node.children[0])
        for member in node.children[1:]:
            self.expr(member)
        if isinstance(subject, TypeDescriptor) and subject.kind == "ordering":
            for member in node.children[1:]:
                if member.kind == "literal" and member.get("lit") == "enum" and \
                        member.get("value") not in ORDERING_SYMBOLS:
                    self.error("LIT_PRECOND_FAIL", f"{member.get('value')} is not an Ordering literal", member.span)
        return self.builtin_desc("Boolean")

    def record(self, node: Node, ctx):
        qual = node.get("qual")
        desc = self.type_of(qual) if qual is not None else ctx
        for pair in node.children:
            ctype, known = None, True
            if isinstance(desc, TypeDescriptor):
                idx = desc.component_index.get(pair.text)
                if idx is None:
                    known = False
                    self.error("UNDECLARED", f"{desc.display()} has no component {pair.text}", pair.span)
                else:
                    pair.ann["component_optional"] = desc.components[idx].optional
                    try:
                        ctype = self.program.component_types(desc)[idx]
                    except TypeResolutionError:
                        ctype = None
            value = pair.children[0]
            self.expr(value, ctype)
            if known and not pair.get("move"):
                self.check_literal(value, ctype)
        if desc is None:
            node.ann["needs_context"] = True
        return desc

    def seq_expr(self, node: Node, ctx):
        container = comprehension_container(node)
        agg_ctx = ctx
        if container is not None:
            self.push()
            ctype = self.expr(container)
            self.pop()
            if isinstance(ctype, (TypeDescriptor, FormalType)):
                agg_ctx = ctype
        first = node.children[0]
        if first.kind == "decl" and first.get("init") is not None:
            first.get("init").ann["ctx"] = agg_ctx
        self.push()
        for stmt in node.children[:-1]:
            self.stmt(stmt)
        result = self.expr(node.children[-1])
        self.pop()
        node.ann["ctx"] = agg_ctx
        return agg_ctx if agg_ctx is not None else result

    # Calls

    def call(self, node: Node, ctx):
        callee = node.children[0]
        args = node.children[1:]
        if callee.kind != "name":
            self.error("SYNTAX", "only named operations can be called", node.span)
            return None
        name = callee.text
        if node.ann.get("aggregate"):
            ctx = node.ann.get("ctx", ctx)
            node.ann["ctx"] = ctx
        qual = callee.get("qual")
        if name not in self.resolver.op_names() and qual is None:
            self.error("UNDECLARED", f"unknown operation {name}", callee.span)
        arg_types: List[Any] = []
        deferred = []
        for i, arg in enumerate(args):
            value = arg.children[0] if arg.kind == "named-arg" else arg
            if is_contextual(value):
                arg_types.append(None)
                deferred.append((i, value))
            else:
                arg_types.append(self.expr(value))
        cands = self.candidates(name, qual, len(args), arg_types, ctx)
        node.ann["candidates"] = [c for c, _ in cands]
        if cands and all(c.result is not None and c.result.ref for c, _ in cands):
            node.ann["ref_result"] = True
        for i, value in deferred:
            ptype = self.param_type(cands[0], i, arg_types) if cands else None
            arg_types[i] = self.expr(value, ptype)
        if len(cands) == 1 or (cands and self._unanimous(cands)):
            for i, arg in enumerate(args):
                value = arg.children[0] if arg.kind == "named-arg" else arg
                ptype = self.param_type(cands[0], i, arg_types)
                self.check_literal(value, ptype)
        if node.ann.get("aggregate"):
            return ctx
        if cands:
            return self.result_type_of(cands[0], arg_types)
        return None

    def _unanimous(self, cands) -> bool:
        first = cands[0][0]
        return all(c.arity == first.arity and [p.type.text if p.type is not None else None for p in c.params] ==
                   [p.type.text if p.type is not None else None for p in first.params] for c, _ in cands)

    def candidates(self, name: str, qual: Optional[str], arity: int, arg_types: List[Any], ctx
                   ) -> List[Tuple[OperationSig, Any]]:
        """Statically plausible targets, in run-time dispatch order"""
        found: List[Tuple[OperationSig, Any]] = []
        seen = set()

        def add(ops: Iterable[OperationSig], inst):
            for op in ops:
                if op.arity == arity and op.uid not in seen:
                    seen.add(op.uid)
                    found.append((op, inst))

        if qual is not None:
            try:
                owner = self.program.lookup_type_name(qual.split("::")[-1], self.env())
            except TypeResolutionError as e:
                self.error(e.code, e.message, None)
                return found
            if isinstance(owner, TypeDescriptor):
                add(owner.ops_for(name, arity), owner)
            return found
        add(self.program.funcs_named(name), None)
        for stype in arg_types:
            if isinstance(stype, TypeDescriptor):
                add(stype.ops_for(name, arity), stype)
        if isinstance(ctx, TypeDescriptor):
            add(ctx.ops_for(name, arity), ctx)
        desc = self.self_desc
        while desc is not None:
            add(desc.ops_for(name, arity), desc)
            desc = desc.enclosing
        if not found:
            add(self.program.ops_named(name), None)
        return found

    def _op_env(self, cand: Tuple[OperationSig, Any], arg_types: List[Any]) -> TypeEnv:
        op, inst = cand
        extra = {}
        for i, p in enumerate(op.params):
            if p.type is not None and p.type.kind == "type-formal":
                extra[p.type.text] = arg_types[i] if i < len(arg_types) and arg_types[i] is not None else \
                    FormalType(p.type.text, p.type.get("constraint"), None)
        return TypeEnv(self.program, inst if isinstance(inst, TypeDescriptor) else None, extra or None)

    def param_type(self, cand: Tuple[OperationSig, Any], index: int, arg_types: List[Any]):
        op = cand[0]
        if index >= op.arity:
            return None
        ptype = op.params[index].type
        if ptype is None:
            return None
        if ptype.kind == "type-formal":
            return None
        try:
            return self.program.resolve_type(ptype, self._op_env(cand, arg_types))
        except TypeResolutionError:
            return None

    def result_type_of(self, cand: Tuple[OperationSig, Any], arg_types: List[Any]):
        op = cand[0]
        if op.result is None or op.result.type is None:
            return None
        try:
            return self.program.resolve_type(op.result.type, self._op_env(cand, arg_types))
        except TypeResolutionError:
            return None

    # Literals

    def check_literal(self, node: Node, target):
        """Static from_univ precondition check of a literal flowing into a typed target"""
        if not isinstance(target, TypeDescriptor):
            return
        value, lit = _literal_value(node)
        if lit is None:
            return
        kind = target.module.builtin
        if kind == "ordering" and lit == "enum" and value not in ORDERING_SYMBOLS:
            self.error("LIT_PRECOND_FAIL", f"{value} is not an Ordering literal", node.span)
        elif kind == "bool" and lit == "enum" and value not in BOOLEAN_LITERALS:
            self.error("LIT_PRECOND_FAIL", f"{value} is not a Boolean literal", node.span)
        elif kind == "int" and lit == "int" and target.range is not None and value not in target.range:
            self.error("LIT_PRECOND_FAIL", f"{value} is outside {target.range.lo} .. {target.range.hi}", node.span)
        elif kind is None and lit != "null" and target.ops_for("from_univ", 1):
            node.ann["from_univ"] = desugar_literal(node.copy(), target.name)
            node.ann["from_univ_type"] = target


def _literal_value(node: Node):
    if node.kind == "literal":
        return node.get("value"), node.get("lit")
    if node.kind == "unary-op" and node.text == "-" and node.children[0].kind == "literal" and \
            node.children[0].get("lit") == "int":
        return -node.children[0].get("value"), "int"
    return None, None


def resolve(units: List[Node], program: Optional[Program] = None, builtin: bool = False
            ) -> Tuple[Program, List[Diagnostic]]:
    """
    Resolve desugared units into a program

    Args:
        units: Desugared compilation units
        program: Existing program to extend (a new one when omitted)
        builtin: The units declare primitive modules

    Returns:
        The program and the diagnostics found
    """
    resolver = Resolver(program)
    for unit in units:
        resolver.add_unit(unit, builtin=builtin)
    return resolver.program, resolver.finish()
