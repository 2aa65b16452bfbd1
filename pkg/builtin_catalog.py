"""
Primitive modules: interface text plus their Python implementations

The interface text goes through the ordinary lexer, parser and resolver;
bind_builtins then attaches an implementation to every declared operation.
"""
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Tuple

from errors import InternalFault, RuntimeFault
from store import (EQUAL, GREATER, LESS, UNORDERED, ArrayValue, Char, ConstLoc, EnumLit, RangeValue, SliceView,
                   SlotLoc, check_int, is_allocated)

logger = logging.getLogger(__name__)

BUILTIN_FILE = "<builtin>"

BUILTIN_SOURCE = """
abstract interface Assignable<> is
end interface Assignable

interface Univ_Integer<> is
   op "+"(Left, Right: Univ_Integer) -> Univ_Integer
   op "-"(Left, Right: Univ_Integer) -> Univ_Integer
   op "*"(Left, Right: Univ_Integer) -> Univ_Integer
   op "/"(Left, Right: Univ_Integer) -> Univ_Integer
   op "mod"(Left, Right: Univ_Integer) -> Univ_Integer
   op "rem"(Left, Right: Univ_Integer) -> Univ_Integer
   op "**"(Left, Right: Univ_Integer) -> Univ_Integer
   op "-"(Right: Univ_Integer) -> Univ_Integer
   op "+"(Right: Univ_Integer) -> Univ_Integer
   op "=?"(Left, Right: Univ_Integer) -> Ordering
   op ".."(Left, Right: Univ_Integer) -> Countable_Range<Univ_Integer>
   func Hash(Val: Univ_Integer) -> Univ_Integer
   func Min(Left, Right: Univ_Integer) -> Univ_Integer
   func Max(Left, Right: Univ_Integer) -> Univ_Integer
end interface Univ_Integer

interface Integer<Range: Countable_Range<Univ_Integer> := -2**63+1 .. +2**63-1> is
   op "from_univ"(Univ: Univ_Integer) {Univ in Range} -> Integer
   op "to_univ"(Val: Integer) -> Univ_Integer
   op "+"(Left, Right: Integer) -> Integer
   op "-"(Left, Right: Integer) -> Integer
   op "*"(Left, Right: Integer) -> Integer
   op "/"(Left, Right: Integer) -> Integer
   op "mod"(Left, Right: Integer) -> Integer
   op "rem"(Left, Right: Integer) -> Integer
   op "**"(Left, Right: Integer) -> Integer
   op "-"(Right: Integer) -> Integer
   op "=?"(Left, Right: Integer) -> Ordering
   func Hash(Val: Integer) -> Univ_Integer
end interface Integer

interface Univ_Real<> is
   op "+"(Left, Right: Univ_Real) -> Univ_Real
   op "-"(Left, Right: Univ_Real) -> Univ_Real
   op "*"(Left, Right: Univ_Real) -> Univ_Real
   op "/"(Left, Right: Univ_Real) -> Univ_Real
   op "-"(Right: Univ_Real) -> Univ_Real
   op "=?"(Left, Right: Univ_Real) -> Ordering
   func Hash(Val: Univ_Real) -> Univ_Integer
end interface Univ_Real

interface Univ_Character<> is
   op "=?"(Left, Right: Univ_Character) -> Ordering
   func Hash(Val: Univ_Character) -> Univ_Integer
end interface Univ_Character

interface Univ_String<> is
   op "|"(Left, Right: Univ_String) -> Univ_String
   op "=?"(Left, Right: Univ_String) -> Ordering
   op "magnitude"(S: Univ_String) -> Univ_Integer
   func Hash(Val: Univ_String) -> Univ_Integer
   func Length(S: Univ_String) -> Univ_Integer
end interface Univ_String

interface Univ_Enumeration<> is
   op "=?"(Left, Right: Univ_Enumeration) -> Ordering
   func Hash(Val: Univ_Enumeration) -> Univ_Integer
end interface Univ_Enumeration

interface Boolean<> is
   op "=?"(Left, Right: Boolean) -> Ordering
   func Hash(Val: Boolean) -> Univ_Integer
end interface Boolean

interface Ordering<> is
   op "from_univ"(Univ: Univ_Enumeration) {Univ in [#less, #equal, #greater, #unordered]} -> Ordering
   op "=?"(Left, Right: Ordering) -> Ordering
   func Hash(Val: Ordering) -> Univ_Integer
end interface Ordering

interface Basic_Array<Component_Type is Assignable<>> is
   func Create(Length: Univ_Integer; Value: optional Component_Type) -> Basic_Array
   op "[]"() -> Basic_Array
   op "|="(var Left: Basic_Array; Right: optional Component_Type)
   op "indexing"(ref A: Basic_Array; Index: Univ_Integer) -> ref optional Component_Type
   op "slicing"(ref A: Basic_Array; Bounds: Countable_Range<Univ_Integer>) -> ref Basic_Array
   op "magnitude"(A: Basic_Array) -> Univ_Integer
   op "index_set"(A: Basic_Array) -> Countable_Range<Univ_Integer>
end interface Basic_Array

interface Countable_Range<Bound_Type is Assignable<>> is
   op "in"(Value: Bound_Type; R: Countable_Range) -> Boolean
   op "magnitude"(R: Countable_Range) -> Univ_Integer
   op "index_set"(R: Countable_Range) -> Countable_Range
   op "indexing"(ref R: Countable_Range; Index: Bound_Type) -> ref Bound_Type
   func Remove_First(var R: Countable_Range) -> optional Bound_Type
   func Remove_Last(var R: Countable_Range) -> optional Bound_Type
   func Remove_Any(var R: Countable_Range) -> optional Bound_Type
end interface Countable_Range

type String is Univ_String

func Println(S: Univ_String)
"""

# Module name -> runtime kind carried by TypeDescriptor.kind
BUILTIN_KINDS = {
    "Assignable": "abstract",
    "Univ_Integer": "univ_int",
    "Integer": "int",
    "Univ_Real": "real",
    "Univ_Character": "char",
    "Univ_String": "string",
    "Univ_Enumeration": "enum",
    "Boolean": "bool",
    "Ordering": "ordering",
    "Basic_Array": "array",
    "Countable_Range": "range",
}

ORDERINGS = frozenset({LESS, EQUAL, GREATER, UNORDERED})
BOOLEAN_LITERALS = frozenset({"#true", "#false"})

MASK64 = (1 << 64) - 1


class BuiltinCall:
    """What a builtin implementation may touch: the store, its instance and the result region"""

    __slots__ = ("interp", "store", "desc", "region", "span")

    def __init__(self, interp, store, desc, region, span):
        self.interp = interp
        self.store = store
        self.desc = desc
        self.region = region
        self.span = span


BuiltinFn = Callable[[BuiltinCall, List[Any]], Any]

_IMPLEMENTATIONS: Dict[Tuple[str, str, int], BuiltinFn] = {}


def builtin(modules, op: str, arity: int):
    """Register an implementation for (module, op, arity); '' is the stand-alone namespace"""
    if isinstance(modules, str):
        modules = (modules,)

    def register(fn: BuiltinFn) -> BuiltinFn:
        for module in modules:
            _IMPLEMENTATIONS[(module, op, arity)] = fn
        return fn
    return register


def implementation_for(module: str, op: str, arity: int) -> Optional[BuiltinFn]:
    return _IMPLEMENTATIONS.get((module, op, arity))


def bind_builtins(program) -> int:
    """
    Attach Python implementations to every operation of the builtin modules

    Returns:
        Number of operations bound

    Raises:
        InternalFault: A declared builtin operation has no implementation
    """
    bound = 0
    for sig in program.modules.values():
        if not sig.builtin:
            continue
        for op in sig.all_ops():
            fn = implementation_for(sig.name, op.name, op.arity)
            if fn is None:
                raise InternalFault(f"no implementation for builtin {sig.name}.{op.name}/{op.arity}")
            op.builtin_fn = fn
            bound += 1
    for ops in program.funcs.values():
        for op in ops:
            if op.decl is not None and op.decl.span is not None and op.decl.span.file == BUILTIN_FILE:
                fn = implementation_for("", op.name, op.arity)
                if fn is None:
                    raise InternalFault(f"no implementation for builtin {op.name}/{op.arity}")
                op.builtin_fn = fn
                bound += 1
    logger.debug(f"Bound {bound} builtin operations")
    return bound


def scalar_module_name(value) -> Optional[str]:
    """Builtin module describing a non-allocated runtime value"""
    if isinstance(value, bool):
        return "Boolean"
    if isinstance(value, int):
        return "Univ_Integer"
    if isinstance(value, float):
        return "Univ_Real"
    if isinstance(value, str):
        return "Univ_String"
    if isinstance(value, Char):
        return "Univ_Character"
    if isinstance(value, EnumLit):
        return "Ordering" if value in ORDERINGS else "Univ_Enumeration"
    if isinstance(value, RangeValue):
        return "Countable_Range"
    return None


# Hashing


def mix64(value: int) -> int:
    """splitmix64 finalizer, shifted to a non-negative Univ_Integer"""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z ^= z >> 31
    return z >> 1


def fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def hash_value(value) -> int:
    if isinstance(value, bool):
        return mix64(int(value))
    if isinstance(value, int):
        return mix64(value & MASK64)
    if isinstance(value, str):
        return mix64(fnv1a(value))
    if isinstance(value, Char):
        return mix64(value.code)
    if isinstance(value, EnumLit):
        return mix64(fnv1a(value.sym))
    if isinstance(value, float):
        return mix64(fnv1a(repr(value)))
    raise RuntimeFault("UNRESOLVED_CALL", f"no Hash for {type(value).__name__}")


# Formatting and comparison


def format_value(value) -> str:
    """Text of a value as Println and string concatenation show it"""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "#true" if value else "#false"
    if isinstance(value, str):
        return value
    if isinstance(value, Char):
        return chr(value.code)
    if isinstance(value, EnumLit):
        return value.sym
    if isinstance(value, RangeValue):
        return f"{value.lo} .. {value.hi}"
    if isinstance(value, (ArrayValue, SliceView)):
        return "[" + ", ".join(format_value(s) for s in value.slots) + "]"
    if getattr(value, "is_concurrent", False):
        return f"{value.desc.display()}#{value.obj_id}"
    if hasattr(value, "desc") and hasattr(value, "slots"):
        fields = ", ".join(f"{c.name} => {format_value(s)}" for c, s in zip(value.desc.components, value.slots))
        return f"{value.desc.name}::({fields})"
    return str(value)


def compare_scalars(left, right) -> EnumLit:
    """Three-way comparison of two builtin values"""
    if isinstance(left, Char) and isinstance(right, Char):
        left, right = left.code, right.code
    elif isinstance(left, EnumLit) or isinstance(right, EnumLit):
        return EQUAL if left is right else UNORDERED
    if isinstance(left, float) or isinstance(right, float):
        if (isinstance(left, float) and math.isnan(left)) or (isinstance(right, float) and math.isnan(right)):
            return UNORDERED
    try:
        if left == right:
            return EQUAL
        return LESS if left < right else GREATER
    except TypeError:
        return UNORDERED


def trunc_div(left: int, right: int, span=None) -> int:
    if right == 0:
        raise RuntimeFault("DIV_ZERO", "division by zero", span)
    quotient = abs(left) // abs(right)
    return check_int(quotient if (left >= 0) == (right >= 0) else -quotient, span)


def int_power(left: int, right: int, span=None) -> int:
    if right < 0:
        raise RuntimeFault("NEG_EXPONENT", f"negative exponent {right}", span)
    if right > 64 and left not in (-1, 0, 1):
        raise RuntimeFault("OVERFLOW", f"{left} ** {right} outside 64-bit range", span)
    return check_int(left ** right, span)


def int_binary(op: str, left: int, right: int, span=None) -> int:
    """Univ_Integer arithmetic with overflow and division checks"""
    if op == "+":
        return check_int(left + right, span)
    if op == "-":
        return check_int(left - right, span)
    if op == "*":
        return check_int(left * right, span)
    if op == "/":
        return trunc_div(left, right, span)
    if op == "mod":
        if right == 0:
            raise RuntimeFault("DIV_ZERO", "mod by zero", span)
        return left % right
    if op == "rem":
        if right == 0:
            raise RuntimeFault("DIV_ZERO", "rem by zero", span)
        return left - right * trunc_div(left, right, span)
    if op == "**":
        return int_power(left, right, span)
    raise InternalFault(f"unknown integer operator {op}", span)


def real_binary(op: str, left: float, right: float, span=None) -> float:
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if right == 0:
            raise RuntimeFault("DIV_ZERO", "division by zero", span)
        return left / right
    raise RuntimeFault("UNRESOLVED_CALL", f"no operator {op} for Univ_Real", span)


# Univ_Integer and Integer

_INTEGERS = ("Univ_Integer", "Integer")


def _int_op(op: str):
    def run(call: BuiltinCall, args):
        return int_binary(op, args[0], args[1], call.span)
    return run


for _op in ("+", "-", "*", "/", "mod", "rem", "**"):
    builtin(_INTEGERS, _op, 2)(_int_op(_op))


@builtin(_INTEGERS, "-", 1)
def _int_negate(call: BuiltinCall, args):
    return check_int(-args[0], call.span)


@builtin("Univ_Integer", "+", 1)
def _int_identity(call: BuiltinCall, args):
    return args[0]


@builtin(("Univ_Integer", "Integer", "Univ_Real", "Univ_Character", "Univ_String", "Univ_Enumeration",
          "Boolean", "Ordering"), "=?", 2)
def _compare(call: BuiltinCall, args):
    return compare_scalars(args[0], args[1])


@builtin(("Univ_Integer", "Integer", "Univ_Real", "Univ_Character", "Univ_String", "Univ_Enumeration",
          "Boolean", "Ordering"), "Hash", 1)
def _hash(call: BuiltinCall, args):
    return hash_value(args[0])


@builtin("Univ_Integer", "..", 2)
def _int_range(call: BuiltinCall, args):
    return RangeValue(args[0], args[1])


@builtin("Univ_Integer", "Min", 2)
def _int_min(call: BuiltinCall, args):
    return min(args[0], args[1])


@builtin("Univ_Integer", "Max", 2)
def _int_max(call: BuiltinCall, args):
    return max(args[0], args[1])


@builtin("Integer", "from_univ", 1)
def _integer_from_univ(call: BuiltinCall, args):
    bounds = call.desc.range if call.desc is not None else None
    if bounds is not None and args[0] not in bounds:
        raise RuntimeFault("LIT_PRECOND_FAIL", f"{args[0]} not in {bounds.lo} .. {bounds.hi}", call.span)
    return args[0]


@builtin("Integer", "to_univ", 1)
def _integer_to_univ(call: BuiltinCall, args):
    return args[0]


# Univ_Real


def _real_op(op: str):
    def run(call: BuiltinCall, args):
        return real_binary(op, float(args[0]), float(args[1]), call.span)
    return run


for _op in ("+", "-", "*", "/"):
    builtin("Univ_Real", _op, 2)(_real_op(_op))


@builtin("Univ_Real", "-", 1)
def _real_negate(call: BuiltinCall, args):
    return -args[0]


# Univ_String


@builtin("Univ_String", "|", 2)
def _concat(call: BuiltinCall, args):
    return format_value(args[0]) + format_value(args[1])


@builtin("Univ_String", "magnitude", 1)
@builtin("Univ_String", "Length", 1)
def _string_length(call: BuiltinCall, args):
    return len(args[0])


# Ordering


@builtin("Ordering", "from_univ", 1)
def _ordering_from_univ(call: BuiltinCall, args):
    if args[0] not in ORDERINGS:
        raise RuntimeFault("LIT_PRECOND_FAIL", f"{format_value(args[0])} is not an Ordering literal", call.span)
    return args[0]


# Basic_Array


def _array_of(value, span):
    if value is None:
        raise RuntimeFault("NULL_DEREF", "indexing a null array", span)
    if not isinstance(value, (ArrayValue, SliceView)):
        raise InternalFault(f"expected an array, got {type(value).__name__}", span)
    return value


@builtin("Basic_Array", "Create", 2)
def _array_create(call: BuiltinCall, args):
    length, init = args
    if call.desc is None:
        raise RuntimeFault("UNRESOLVED_CALL", "cannot determine the array type for Create", call.span)
    if length < 0:
        raise RuntimeFault("PRECONDITION", f"negative array length {length}", call.span)
    if is_allocated(init) or isinstance(init, SliceView):
        slots = [call.store.copy(init, call.region) for _ in range(length)]
    else:
        slots = [init] * length
    return call.store.new_array(call.desc, slots, 1, call.region)


@builtin("Basic_Array", "[]", 0)
def _array_empty(call: BuiltinCall, args):
    if call.desc is None:
        raise RuntimeFault("UNRESOLVED_CALL", "cannot determine the array type for []", call.span)
    return call.store.new_array(call.desc, [], 1, call.region)


@builtin("Basic_Array", "|=", 2)
def _array_append(call: BuiltinCall, args):
    target, value = args
    array = _array_of(target.get(), call.span)
    if isinstance(array, SliceView):
        raise RuntimeFault("PRECONDITION", "cannot append to a slice", call.span)
    array.slots.append(call.store.copy(value, array.region))


@builtin("Basic_Array", "indexing", 2)
def _array_index(call: BuiltinCall, args):
    array = _array_of(args[0].get(), call.span)
    index = args[1]
    if not isinstance(index, int) or index < array.first or index > array.last:
        raise RuntimeFault("INDEX_RANGE", f"index {index} outside {array.first} .. {array.last}", call.span)
    if isinstance(array, SliceView):
        base = array.base
        return SlotLoc(base, index - base.first, True, _component_desc(base))
    return SlotLoc(array, index - array.first, True, _component_desc(array))


def _component_desc(array):
    desc = array.desc
    return desc.bindings.get("Component_Type") if desc is not None else None


@builtin("Basic_Array", "slicing", 2)
def _array_slice(call: BuiltinCall, args):
    array = _array_of(args[0].get(), call.span)
    bounds = args[1]
    lo, hi = bounds.lo, bounds.hi
    if lo <= hi and (lo < array.first or hi > array.last):
        raise RuntimeFault("INDEX_RANGE", f"slice {lo} .. {hi} outside {array.first} .. {array.last}", call.span)
    base = array.base if isinstance(array, SliceView) else array
    return ConstLoc(SliceView(base, lo, hi), base.region, base.desc)


@builtin("Basic_Array", "magnitude", 1)
def _array_length(call: BuiltinCall, args):
    return _array_of(args[0], call.span).length


@builtin("Basic_Array", "index_set", 1)
def _array_index_set(call: BuiltinCall, args):
    array = _array_of(args[0], call.span)
    return RangeValue(array.first, array.last)


# Countable_Range


@builtin("Countable_Range", "in", 2)
def _range_contains(call: BuiltinCall, args):
    return args[0] in args[1]


@builtin("Countable_Range", "magnitude", 1)
def _range_length(call: BuiltinCall, args):
    return args[0].length


@builtin("Countable_Range", "index_set", 1)
def _range_index_set(call: BuiltinCall, args):
    return args[0]


@builtin("Countable_Range", "indexing", 2)
def _range_index(call: BuiltinCall, args):
    bounds = args[0].get()
    if args[1] not in bounds:
        raise RuntimeFault("INDEX_RANGE", f"{args[1]} outside {bounds.lo} .. {bounds.hi}", call.span)
    return ConstLoc(args[1])


@builtin("Countable_Range", "Remove_First", 1)
@builtin("Countable_Range", "Remove_Any", 1)
def _range_remove_first(call: BuiltinCall, args):
    bounds = args[0].get()
    if bounds is None or bounds.length == 0:
        return None
    args[0].set(RangeValue(bounds.lo + 1, bounds.hi))
    return bounds.lo


@builtin("Countable_Range", "Remove_Last", 1)
def _range_remove_last(call: BuiltinCall, args):
    bounds = args[0].get()
    if bounds is None or bounds.length == 0:
        return None
    args[0].set(RangeValue(bounds.lo, bounds.hi - 1))
    return bounds.hi


# Stand-alone


@builtin("", "Println", 1)
def _println(call: BuiltinCall, args):
    call.interp.emit(format_value(args[0]))
