"""
Compile-time safety rules over resolved bodies

Every rule works from the annotations left by sema: bindings on names,
candidate operations on calls and enclosing loops / parallel branches on
statements. Where a hazard can only be decided at run time the checker marks
the node instead (disjointness checks, sequential operand evaluation) and
records a RuntimeCheck.
"""
import logging
from typing import List, Optional, Tuple

from ast_nodes import Node, callee_name, is_path
from models import Diagnostic, RuntimeCheck
from pretty_printer import pretty_print
from sema import AnalyzedBody, Binding, diagnostic, path_root_binding
from type_system import TypeDescriptor

logger = logging.getLogger(__name__)

DISJOINT = "disjoint"
OVERLAP = "overlap"
POSSIBLE = "possible"

LOCAL_KINDS = frozenset({"param", "local", "const", "ref", "loop", "result"})
SIMPLE_KINDS = frozenset({"name", "literal", "attribute", "selected", "binary-op", "unary-op"})


class Path:
    """An object designator: a root binding plus component, index and slice steps"""

    __slots__ = ("root", "steps", "node")

    def __init__(self, root: Binding, steps: Tuple, node: Node):
        self.root = root
        self.steps = steps
        self.node = node

    def __repr__(self) -> str:
        return f"Path({self.root.name}, {len(self.steps)} steps)"


def path_of(node: Node) -> Optional[Path]:
    """Path designated by an expression, with refs and `=>` loop variables expanded to their roots"""
    steps: List[Tuple] = []
    current = node
    while True:
        kind = current.kind
        if kind == "selected":
            steps.append(("comp", current.text))
            current = current.children[0]
        elif kind == "attribute":
            current = current.children[0]
        elif kind == "call" and len(current.children) > 1 and current.ann.get("path_call"):
            target = current.children[2] if len(current.children) > 2 else None
            if callee_name(current) == "slicing":
                steps.append(("slice", target))
            elif target is not None and target.kind == "literal" and target.get("lit") == "int":
                steps.append(("const", target.get("value")))
            else:
                steps.append(("index", target))
            current = current.children[1]
        elif kind == "name" and not current.get("quoted"):
            binding = current.ann.get("binding")
            if binding is None:
                return None
            steps.reverse()
            prefix = _binding_prefix(binding)
            if prefix is not None:
                return Path(prefix.root, prefix.steps + tuple(steps), node)
            return Path(binding, tuple(steps), node)
        else:
            return None


def _binding_prefix(binding: Binding) -> Optional[Path]:
    decl = binding.decl
    if decl is None:
        return None
    if binding.kind == "ref" and decl.kind == "ref-decl":
        return path_of(decl.get("path"))
    if binding.kind == "loop" and decl.kind == "for-then-while" and decl.get("bind") == "=>":
        return path_of(decl.get("init"))
    return None


def _static_range(bounds: Optional[Node]) -> Optional[Tuple[int, int]]:
    if bounds is None or bounds.kind != "binary-op" or bounds.text != "..":
        return None
    lo, hi = bounds.children
    if lo.kind == "literal" and hi.kind == "literal" and lo.get("lit") == "int" and hi.get("lit") == "int":
        return lo.get("value"), hi.get("value")
    return None


def _step_relation(a: Tuple, b: Tuple) -> str:
    if a[0] == "comp" or b[0] == "comp":
        if a[0] == b[0]:
            return OVERLAP if a[1] == b[1] else DISJOINT
        return POSSIBLE
    if a[0] == "const" and b[0] == "const":
        return OVERLAP if a[1] == b[1] else DISJOINT
    if a[0] == b[0] and a[1] is not None and a[1] == b[1]:
        return OVERLAP
    ra = (a[1], a[1]) if a[0] == "const" else _static_range(a[1]) if a[0] == "slice" else None
    rb = (b[1], b[1]) if b[0] == "const" else _static_range(b[1]) if b[0] == "slice" else None
    if ra is not None and rb is not None:
        if ra[0] > ra[1] or rb[0] > rb[1]:
            return DISJOINT
        return OVERLAP if ra[0] <= rb[1] and rb[0] <= ra[1] else DISJOINT
    return POSSIBLE


def path_relation(p: Path, q: Path) -> Tuple[str, int]:
    """Relation of two paths and the index of the first step that did not match"""
    if p.root is not q.root:
        return DISJOINT, 0
    for i, (a, b) in enumerate(zip(p.steps, q.steps)):
        relation = _step_relation(a, b)
        if relation != OVERLAP:
            return relation, i
    return OVERLAP, min(len(p.steps), len(q.steps))


def _simple(node: Optional[Node]) -> bool:
    if node is None:
        return False
    return all(sub.kind in SIMPLE_KINDS or sub.kind == "type" for sub in node.walk())


class Access:
    __slots__ = ("path", "write")

    def __init__(self, path: Path, write: bool):
        self.path = path
        self.write = write


def call_param_modes(node: Node) -> Optional[List[object]]:
    """Parameter signatures of a call when all candidates agree on modes"""
    cands = node.ann.get("candidates") or []
    if not cands:
        return None
    first = cands[0]
    for other in cands[1:]:
        if [p.mode for p in other.params] != [p.mode for p in first.params]:
            return None
    return first.params


def exempt(path: Path, param=None) -> bool:
    """Concurrent objects may be shared freely"""
    if param is not None and param.sync_mode is not None:
        return True
    if path.root.concurrent:
        return True
    stype = path.node.ann.get("stype")
    return bool(getattr(stype, "is_concurrent", False))


def accesses(node: Node) -> List[Access]:
    """Objects read and updated by evaluating an expression or statement"""
    found: List[Access] = []
    _collect(node, found, write=False)
    return found


def _collect(node: Node, found: List[Access], write: bool):
    kind = node.kind
    if kind == "attribute":
        # bounds of an array never change, only the index expressions inside count
        base = path_of(node.children[0]) if is_path(node.children[0]) else None
        if base is None:
            _collect(node.children[0], found, False)
            return
        for step in base.steps:
            if step[0] in ("index", "slice") and step[1] is not None:
                _collect(step[1], found, False)
        return
    if kind in ("selected", "name") or (kind == "call" and node.ann.get("path_call")):
        path = path_of(node) if is_path(node) else None
        if path is not None:
            if path.root.kind in LOCAL_KINDS and not exempt(path):
                found.append(Access(path, write))
            for step in path.steps:
                if step[0] in ("index", "slice") and step[1] is not None:
                    _collect(step[1], found, False)
            return
    if kind == "call":
        params = call_param_modes(node)
        for i, arg in enumerate(node.children[1:]):
            value = arg.children[0] if arg.kind == "named-arg" else arg
            param = params[i] if params is not None and i < len(params) else None
            _collect(value, found, bool(param is not None and param.is_var and param.sync_mode is None))
        return
    if kind in ("assign", "move", "swap"):
        _collect(node.children[0], found, True)
        _collect(node.children[1], found, kind != "assign")
        return
    if kind == "decl" and node.get("init") is not None:
        _collect(node.get("init"), found, bool(node.get("move")))
        return
    if kind == "continue-loop-with":
        for child in node.children:
            _collect(child, found, True)
        return
    for child in node.child_nodes():
        if child.kind in ("type", "type-formal"):
            continue
        _collect(child, found, False)


class SafetyChecker:
    """
    Applies the static safety rules to analyzed bodies

    Attributes:
        diagnostics: Errors and warnings found
        runtime_checks: Marks for checks deferred to run time
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.diagnostics: List[Diagnostic] = []
        self.runtime_checks: List[RuntimeCheck] = []

    def error(self, code: str, message: str, span, severity: str = "error"):
        self.diagnostics.append(diagnostic(code, message, span, severity))

    def mark(self, kind: str, node: Node, detail: str = ""):
        self.runtime_checks.append(RuntimeCheck(kind=kind, span=node.span, detail=detail))

    def check(self, bodies: List[AnalyzedBody]) -> Tuple[List[Diagnostic], List[RuntimeCheck]]:
        for body in bodies:
            try:
                self.check_body(body)
            except Exception as e:
                self.logger.error(f"Safety check failed on {body.op.name if body.op else 'initializer'}: {e}")
                raise
        unique, seen = [], set()
        for d in self.diagnostics:
            key = (d.code, d.span.file, d.span.line, d.span.col)
            if key not in seen:
                seen.add(key)
                unique.append(d)
        self.diagnostics = unique
        self.logger.info(f"Safety checks: {len(self.diagnostics)} diagnostics, "
                         f"{len(self.runtime_checks)} run-time checks")
        return self.diagnostics, self.runtime_checks

    def check_body(self, body: AnalyzedBody):
        for role, root in body.roots:
            self.check_globals(root)
            self.check_writes(root)
            self.check_optional(root, body)
            for node in root.walk():
                if node.kind in ("call", "binary-op"):
                    self.check_handoff(node)
                elif node.kind == "parallel-group":
                    self.check_parallel_group(node)
                elif node.kind in ("for-then-while", "loop-until", "for-in-range"):
                    self.check_loop_exit_update(node)
            self.check_containers(root)
            self.insert_runtime_checks(root)
            if role == "dequeue":
                self.check_dequeue_condition(root)
        if body.op is not None and body.op.result is not None and body.op.result.ref:
            self.check_ref_escape(body)

    # Globals and writability

    def check_globals(self, root: Node):
        for node in root.walk():
            if node.kind == "name":
                binding = node.ann.get("binding")
                if binding is not None and binding.kind == "global":
                    self.error("GLOBAL_VAR", f"{node.text} is a module-level variable", node.span)

    def _require_writable(self, target: Node, what: str):
        binding = path_root_binding(target)
        if binding is None or binding.kind == "global":
            return
        if not binding.writable:
            self.error("CONST_ASSIGN", f"{what} {binding.name}, which is not a variable", target.span)

    def check_writes(self, root: Node):
        for node in root.walk():
            kind = node.kind
            if kind == "assign":
                self._require_writable(node.children[0], "assignment to")
            elif kind == "move":
                self._require_writable(node.children[0], "move into")
                self._require_writable(node.children[1], "move out of")
            elif kind == "swap":
                self._require_writable(node.children[0], "swap of")
                self._require_writable(node.children[1], "swap of")
            elif kind == "decl" and node.get("move") and node.get("init") is not None:
                self._require_writable(node.get("init"), "move out of")
            elif kind == "call":
                params = call_param_modes(node)
                if params is None:
                    continue
                for param, arg in zip(params, node.children[1:]):
                    if param.is_var and is_path(arg):
                        self._require_writable(arg, f"{param.mode} argument")

    # Handoff

    def check_handoff(self, node: Node):
        """Aliasing among the operands of one call or binary operation"""
        if node.kind == "call":
            operands = [a.children[0] if a.kind == "named-arg" else a for a in node.children[1:]]
            self._check_call_aliasing(node, operands)
        else:
            if node.text in ("and", "or"):
                return
            operands = list(node.children)
        if len(operands) < 2:
            return
        per_operand = [accesses(op) for op in operands]
        possible = False
        for i in range(len(operands)):
            for j in range(i + 1, len(operands)):
                relation = self._conflict(per_operand[i], per_operand[j])
                if relation == OVERLAP:
                    self.error("HANDOFF_ALIAS", "operands evaluated in parallel update overlapping objects",
                               operands[j].span)
                    return
                possible = possible or relation == POSSIBLE
        heavy = sum(1 for op in operands if _heavy(op))
        if possible:
            node.ann["sequential_operands"] = True
        elif heavy >= 2:
            node.ann["par_ok"] = True

    def _check_call_aliasing(self, node: Node, operands: List[Node]):
        params = call_param_modes(node)
        if params is None:
            return
        paths = [path_of(op) if is_path(op) else None for op in operands]
        for i, p in enumerate(paths):
            if p is None or i >= len(params):
                continue
            for j in range(i + 1, min(len(paths), len(params))):
                q = paths[j]
                if q is None or not (params[i].is_var or params[j].is_var):
                    continue
                if exempt(p, params[i]) or exempt(q, params[j]):
                    continue
                relation, at = path_relation(p, q)
                if relation == OVERLAP:
                    self.error("HANDOFF_ALIAS", f"{pretty_print(operands[i])} and {pretty_print(operands[j])} "
                                                f"overlap and one is passed as {params[i].mode if params[i].is_var else params[j].mode}",
                               operands[j].span)
                elif relation == POSSIBLE:
                    self._runtime_disjoint(node, p, q, at)

    def _conflict(self, left: List[Access], right: List[Access]) -> str:
        worst = DISJOINT
        for a in left:
            for b in right:
                if not (a.write or b.write):
                    continue
                relation, _ = path_relation(a.path, b.path)
                if relation == OVERLAP:
                    return OVERLAP
                if relation == POSSIBLE:
                    worst = POSSIBLE
        return worst

    def _runtime_disjoint(self, node: Node, p: Path, q: Path, at: int) -> bool:
        """Attach a run-time disjointness check on the first differing index or slice step"""
        if at >= len(p.steps) or at >= len(q.steps):
            return False
        a, b = p.steps[at], q.steps[at]
        if a[0] == "comp" or b[0] == "comp":
            return False
        if a[0] != "const" and not _simple(a[1]):
            return False
        if b[0] != "const" and not _simple(b[1]):
            return False
        node.ann.setdefault("disjoint_checks", []).append((a, b))
        self.mark("disjoint", node, f"{pretty_print(p.node)} / {pretty_print(q.node)}")
        return True

    def check_parallel_group(self, group: Node):
        """Branches joined by || may not update what another branch touches"""
        per_branch = [accesses(branch) for branch in group.children]
        for i in range(len(per_branch)):
            for j in range(i + 1, len(per_branch)):
                for a in per_branch[i]:
                    for b in per_branch[j]:
                        if not (a.write or b.write):
                            continue
                        relation, at = path_relation(a.path, b.path)
                        if relation == DISJOINT:
                            continue
                        if relation == POSSIBLE and self._runtime_disjoint(group, a.path, b.path, at):
                            continue
                        self.error("HANDOFF_ALIAS", f"parallel branches both use {a.path.root.name} and one "
                                                    f"updates it", b.path.node.span)
                        return

    # Ref results

    def check_ref_escape(self, body: AnalyzedBody):
        decl = body.decl
        results = []
        if decl.get("expr_body") is not None:
            results.append(decl.get("expr_body"))
        if decl.get("body") is not None:
            for node in decl.get("body").walk():
                if node.kind == "return" and node.children:
                    results.append(node.children[0])
        for value in results:
            binding = path_root_binding(value)
            root = binding.root() if binding is not None else None
            if root is None or root.kind != "param" or root.mode not in ("ref", "ref-var"):
                what = root.name if root is not None else pretty_print(value)
                self.error("REF_ESCAPE", f"{body.op.name} returns a reference to {what}, which is not part of "
                                         f"a ref parameter", value.span)

    # Optional values

    def _target_optional(self, target: Node) -> Optional[bool]:
        if target.kind == "name":
            binding = target.ann.get("binding")
            if binding is None or not binding.declared_type:
                return None
            return binding.optional
        if target.kind == "selected":
            return target.ann.get("component_optional")
        return None

    def _null_source(self, value: Node) -> Optional[str]:
        if value.kind == "literal" and value.get("lit") == "null":
            return "null"
        if value.kind == "call" and not value.ann.get("path_call"):
            cands = value.ann.get("candidates") or []
            if len(cands) == 1 and cands[0].result is not None and cands[0].result.optional \
                    and not cands[0].result.ref:
                return f"optional result of {cands[0].name}"
        return None

    def _check_flow(self, value: Node, optional: Optional[bool], where: str):
        if optional is not False:
            return
        source = self._null_source(value)
        if source is not None:
            self.error("OPT_NULL", f"{source} flows into non-optional {where}", value.span)

    def check_optional(self, root: Node, body: AnalyzedBody):
        for node in root.walk():
            kind = node.kind
            if kind == "decl" and node.get("init") is not None and node.get("type") is not None:
                self._check_flow(node.get("init"), bool(node.get("type").get("optional")), node.text)
            elif kind == "assign" and node.get("op") == ":=":
                self._check_flow(node.children[1], self._target_optional(node.children[0]),
                                 pretty_print(node.children[0]))
            elif kind == "pair" and node.ann.get("component_optional") is False:
                self._check_flow(node.children[0], False, f"component {node.text}")
            elif kind == "return" and node.children and body.op is not None and body.op.result is not None:
                self._check_flow(node.children[0], body.op.result.optional, f"result of {body.op.name}")
            elif kind == "call":
                cands = node.ann.get("candidates") or []
                if len(cands) != 1:
                    continue
                for param, arg in zip(cands[0].params, node.children[1:]):
                    value = arg.children[0] if arg.kind == "named-arg" else arg
                    if param.type is not None and param.type.kind == "type":
                        self._check_flow(value, param.optional, f"parameter {param.name}")
            elif kind in ("is-null", "not-null"):
                operand = node.children[0]
                if self._target_optional(operand) is False:
                    constant = "false" if kind == "is-null" else "true"
                    node.ann["constant"] = kind == "not-null"
                    self.error("OPT_TEST_CONST", f"{pretty_print(operand)} is never null; test is always "
                                                 f"{constant}", node.span, severity="warning")

    # Early exit from concurrent loops

    def check_loop_exit_update(self, loop: Node):
        body = loop.get("body")
        groups = [g for g in body.walk() if g.kind == "parallel-group"]
        bag = bool(loop.ann.get("bag"))
        if not bag and not groups:
            return
        if not any(self._escapes(e, loop, bag) for e in body.walk() if e.kind in ("return", "exit-loop")):
            return
        for node in body.walk():
            for target in self._updated(node):
                binding = path_root_binding(target)
                if binding is None or binding.concurrent or binding.kind == "global":
                    continue
                if binding.decl is loop or loop in binding.loops:
                    continue
                stype = target.ann.get("stype")
                if getattr(stype, "is_concurrent", False):
                    continue
                self.error("LOOP_EXIT_UPDATE", f"{binding.name} is declared outside a concurrent loop that may "
                                               f"exit early, and is updated inside it", target.span)

    def _escapes(self, exit_node: Node, loop: Node, bag: bool) -> bool:
        target = exit_node.ann.get("target")
        if exit_node.kind == "exit-loop" and target is None:
            return False
        enclosing_loops = loop.ann.get("loops", ())
        if exit_node.kind == "exit-loop" and target is not loop and target not in enclosing_loops:
            inner_target = target
        else:
            inner_target = None
        if bag and inner_target is None:
            return True
        for group, index in exit_node.ann.get("groups", ()):
            if loop not in group.ann.get("loops", ()):
                continue
            if exit_node.kind == "return" or (group, index) not in target.ann.get("groups", ()):
                return True
        return False

    def _updated(self, node: Node) -> List[Node]:
        kind = node.kind
        if kind in ("assign", "move"):
            return [node.children[0]] + ([node.children[1]] if kind == "move" else [])
        if kind == "swap":
            return list(node.children)
        if kind == "call":
            params = call_param_modes(node)
            if params is None:
                return []
            return [arg for param, arg in zip(params, node.children[1:])
                    if param.is_var and param.sync_mode is None and is_path(arg)]
        return []

    # Queued operations

    def check_dequeue_condition(self, cond: Node):
        for node in cond.walk():
            if node.kind != "call":
                continue
            callee = node.children[0]
            if not callee.get("quoted") and not node.ann.get("literal_conversion"):
                self.error("SYNC_COND_EFFECT", f"dequeue condition calls {callee.text}", node.span)
                continue
            params = call_param_modes(node) or []
            if any(p.is_var for p in params):
                self.error("SYNC_COND_EFFECT", "dequeue condition passes a var argument", node.span)

    # Aggregates and iterators

    def check_containers(self, root: Node):
        for node in root.walk():
            if node.kind == "call" and node.ann.get("aggregate"):
                ctx = node.ann.get("ctx")
                if ctx is None:
                    self.error("AGG_NO_OPS", "aggregate has no container type from its context", node.span)
                elif hasattr(ctx, "ops_for") and not ctx.ops_for("[]", 0):
                    self.error("AGG_NO_OPS", f"{ctx.display()} has no \"[]\" operation", node.span)
            elif node.kind == "seq-expr" and node.ann.get("aggregate"):
                ctx = node.ann.get("ctx")
                if hasattr(ctx, "ops_for") and not ctx.ops_for("|=", 2):
                    self.error("AGG_NO_OPS", f"{ctx.display()} has no \"|=\" operation", node.span)
            elif node.kind == "decl" and node.ann.get("element_iterator"):
                init = node.get("init")
                container = init.children[1].ann.get("stype")
                if hasattr(container, "ops_for") and not init.ann.get("candidates"):
                    self.error("ITER_NO_OPS", f"{container.display()} has no \"index_set\" operation", node.span)

    # Run-time check marks

    def insert_runtime_checks(self, root: Node):
        guarded: set = set()
        self._mark(root, guarded)

    def _mark(self, node: Node, guarded: set):
        kind = node.kind
        if kind == "call":
            cands = node.ann.get("candidates") or []
            if cands:
                # unresolved calls keep their checks
                node.ann["check_pre"] = False
            for op in cands:
                if op.pre is not None:
                    node.ann["check_pre"] = True
                    self.mark("precondition", node, f"{op.name}: {pretty_print(op.pre)}")
                    break
        elif kind == "selected":
            base = node.children[0]
            binding = base.ann.get("binding") if base.kind == "name" else None
            if binding is not None and binding.optional and binding.name not in guarded:
                self.mark("null-deref", node, pretty_print(base))
        elif kind == "literal" and node.ann.get("from_univ") is not None:
            self.mark("literal", node, pretty_print(node))
        elif kind in ("assign", "decl"):
            stype = (node.children[0].ann.get("stype") if kind == "assign"
                     else node.ann.get("binding").stype if node.ann.get("binding") else None)
            if isinstance(stype, TypeDescriptor):
                node.ann["range_check"] = stype.kind == "int"
            if node.ann.get("range_check"):
                self.mark("range", node, stype.display())
        if kind == "for-then-while" and _guards(node.get("cond")):
            inner = guarded | {node.text}
            for child in node.child_nodes():
                self._mark(child, inner if child is node.get("body") else guarded)
            return
        if kind == "loop-until" and node.get("loop_kind") == "while" and _guards(node.get("cond")):
            inner = guarded | {_guards(node.get("cond"))}
            self._mark(node.get("cond"), guarded)
            self._mark(node.get("body"), inner)
            return
        if kind == "if":
            for arm in node.children:
                cond, body = arm.children
                self._mark(cond, guarded)
                name = _guards(cond)
                self._mark(body, guarded | {name} if name else guarded)
            if node.get("else") is not None:
                self._mark(node.get("else"), guarded)
            return
        for child in node.child_nodes():
            self._mark(child, guarded)


def _guards(cond: Optional[Node]) -> Optional[str]:
    """Name proven non-null by a condition of the form `X not null`"""
    if cond is not None and cond.kind == "not-null" and cond.children[0].kind == "name":
        return cond.children[0].text
    return None


def _heavy(node: Node) -> bool:
    for sub in node.walk():
        if sub.kind == "call" and not sub.ann.get("path_call") and not sub.ann.get("literal_conversion"):
            cands = sub.ann.get("candidates") or []
            if any(c.module is None or c.module.builtin is None for c in cands):
                return True
        if sub.kind == "seq-expr":
            return True
    return False


def check_safety(bodies: List[AnalyzedBody]) -> Tuple[List[Diagnostic], List[RuntimeCheck]]:
    """
    Run every safety rule over resolved bodies

    Returns:
        Diagnostics (errors and warnings) and the run-time checks inserted
    """
    return SafetyChecker().check(bodies)
