"""
Tokenizer for .psl sources
"""
import logging
from typing import List, Optional, Tuple

from errors import DiagnosticError
from models import Diagnostic, Span, Token

logger = logging.getLogger(__name__)

KEYWORDS = frozenset({
    "abstract", "and", "begin", "block", "class", "concurrent", "const", "continue",
    "each", "else", "elsif", "end", "exit", "exports", "extends", "for", "forward",
    "func", "if", "implements", "in", "interface", "is", "locked", "loop", "mod",
    "not", "null", "of", "op", "optional", "or", "queued", "ref", "rem", "return",
    "reverse", "then", "type", "until", "var", "while", "with", "xor",
})

# Longest first within each leading character
OPERATORS = sorted([
    "<==", "<=>", "=?", "==", "!=", "<=", ">=", "=>", "..", "||", "::", "->", ":=",
    "|=", "+=", "-=", "*=", "/=", "**",
    "+", "-", "*", "/", "<", ">", "=", "|", ":", ".",
], key=len, reverse=True)

PUNCTUATION = frozenset("()[]{},;")


class Lexer:
    """Converts source text into a token list with spans"""

    def __init__(self, source: str, file: Optional[str] = None, allow_generated: bool = False):
        self.source = source
        self.file = file
        self.allow_generated = allow_generated
        self.pos = 0
        self.line = 1
        self.col = 1
        self.tokens: List[Token] = []
        self.diagnostics: List[Diagnostic] = []
        self._newline_pending = True

    def tokenize(self) -> Tuple[List[Token], List[Diagnostic]]:
        """
        Tokenize the whole source

        Returns:
            Tuple of (tokens ending with an eof token, diagnostics)
        """
        src = self.source
        while self.pos < len(src):
            ch = src[self.pos]
            self._tok_line, self._tok_col = self.line, self.col
            if ch == "\n":
                self._advance(1)
                self._newline_pending = True
            elif ch in " \t\r\f":
                self._advance(1)
            elif src.startswith("//", self.pos):
                while self.pos < len(src) and src[self.pos] != "\n":
                    self._advance(1)
            elif ch.isalpha() or (ch == "@" and self.allow_generated):
                self._identifier()
            elif ch.isdigit():
                self._number()
            elif ch == "'":
                self._char()
            elif ch == '"':
                self._string()
            elif ch == "#" and self.pos + 1 < len(src) and src[self.pos + 1].isalpha():
                start = self.pos
                self._advance(1)
                while self.pos < len(src) and (src[self.pos].isalnum() or src[self.pos] == "_"):
                    self._advance(1)
                text = src[start:self.pos]
                self._emit("enum-lit", text, start, value=text)
            elif ch in PUNCTUATION:
                self._emit_here("punctuation", ch)
            else:
                for op in OPERATORS:
                    if src.startswith(op, self.pos):
                        self._emit_here("operator", op)
                        break
                else:
                    self._error("LEX_ILLEGAL_CHAR", f"illegal character {ch!r}", self.pos, 1)
                    self._advance(1)
        self.tokens.append(Token(kind="eof", text="", span=self._span(self.line, self.col, 0),
                                 newline_before=True))
        return self.tokens, self.diagnostics

    def _span(self, line: int, col: int, length: int) -> Span:
        return Span(line=line, col=col, length=length, file=self.file)

    def _advance(self, n: int):
        for _ in range(n):
            if self.pos >= len(self.source):
                return
            if self.source[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _emit_here(self, kind: str, text: str):
        line, col = self.line, self.col
        self._advance(len(text))
        self._push(kind, text, line, col, None)

    def _emit(self, kind: str, text: str, start: int, value=None):
        self._push(kind, text, self._tok_line, self._tok_col, value)

    def _push(self, kind: str, text: str, line: int, col: int, value):
        self.tokens.append(Token(kind=kind, text=text, span=self._span(line, col, len(text)),
                                 value=value, newline_before=self._newline_pending))
        self._newline_pending = False

    def _error(self, code: str, message: str, start: int, length: int):
        self.diagnostics.append(Diagnostic(code=code, message=message,
                                           span=self._span(self._tok_line, self._tok_col, max(length, 1))))

    def _identifier(self):
        src = self.source
        start = self.pos
        self._advance(1)
        while self.pos < len(src) and (src[self.pos].isalnum() or src[self.pos] == "_"):
            self._advance(1)
        text = src[start:self.pos]
        self._emit("keyword" if text in KEYWORDS else "identifier", text, start)

    def _digits(self, allowed: str) -> str:
        src = self.source
        out = []
        while self.pos < len(src) and (src[self.pos].lower() in allowed or src[self.pos] == "_"):
            if src[self.pos] != "_":
                out.append(src[self.pos])
            self._advance(1)
        return "".join(out)

    def _number(self):
        src = self.source
        start = self.pos
        if src.startswith(("0x", "0X"), self.pos):
            self._advance(2)
            digits = self._digits("0123456789abcdef")
            self._emit("integer-lit", src[start:self.pos], start, value=int(digits or "0", 16))
            return
        digits = self._digits("0123456789")
        if self.pos < len(src) and src[self.pos] == "#":
            base = int(digits)
            self._advance(1)
            body = self._digits("0123456789abcdef")
            if self.pos < len(src) and src[self.pos] == "#" and 2 <= base <= 16:
                self._advance(1)
                try:
                    value = int(body, base)
                except ValueError:
                    self._error("LEX_ILLEGAL_CHAR", f"digit out of range for base {base}", start, self.pos - start)
                    value = 0
                self._emit("integer-lit", src[start:self.pos], start, value=value)
            else:
                self._error("LEX_UNTERMINATED", "unterminated based literal", start, self.pos - start)
            return
        if (self.pos + 1 < len(src) and src[self.pos] == "." and src[self.pos + 1].isdigit()):
            self._advance(1)
            frac = self._digits("0123456789")
            text = f"{digits}.{frac}"
            if self.pos < len(src) and src[self.pos] in "eE":
                save = (self.pos, self.line, self.col)
                self._advance(1)
                sign = ""
                if self.pos < len(src) and src[self.pos] in "+-":
                    sign = src[self.pos]
                    self._advance(1)
                exp = self._digits("0123456789")
                if exp:
                    text += f"e{sign}{exp}"
                else:
                    self.pos, self.line, self.col = save
            self._emit("real-lit", src[start:self.pos], start, value=float(text))
            return
        self._emit("integer-lit", src[start:self.pos], start, value=int(digits))

    def _escape(self, quote: str) -> Optional[int]:
        """Decode one (possibly escaped) character; None on malformed input"""
        src = self.source
        ch = src[self.pos]
        if ch != "\\":
            self._advance(1)
            return ord(ch)
        if self.pos + 1 >= len(src):
            return None
        nxt = src[self.pos + 1]
        simple = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, "'": 39, '"': 34}
        if nxt in simple:
            self._advance(2)
            return simple[nxt]
        if nxt == "#":
            self._advance(2)
            hexdigits = self._digits("0123456789abcdef")
            if self.pos < len(src) and src[self.pos] == "#" and hexdigits:
                self._advance(1)
                return int(hexdigits, 16)
            return None
        self._advance(2)
        return ord(nxt)

    def _char(self):
        src = self.source
        start = self.pos
        self._advance(1)
        if self.pos >= len(src) or src[self.pos] == "\n":
            self._error("LEX_UNTERMINATED", "unterminated character literal", start, 1)
            return
        code = self._escape("'")
        if code is None or self.pos >= len(src) or src[self.pos] != "'":
            self._error("LEX_UNTERMINATED", "unterminated character literal", start, self.pos - start)
            while self.pos < len(src) and src[self.pos] not in "'\n":
                self._advance(1)
            if self.pos < len(src) and src[self.pos] == "'":
                self._advance(1)
            return
        self._advance(1)
        self._emit("char-lit", src[start:self.pos], start, value=code)

    def _string(self):
        src = self.source
        start = self.pos
        self._advance(1)
        chars = []
        while True:
            if self.pos >= len(src) or src[self.pos] == "\n":
                self._error("LEX_UNTERMINATED", "unterminated string literal", start, self.pos - start)
                return
            if src[self.pos] == '"':
                self._advance(1)
                break
            code = self._escape('"')
            if code is None:
                self._error("LEX_UNTERMINATED", "malformed escape in string literal", start, self.pos - start)
                return
            chars.append(chr(code))
        self._emit("string-lit", src[start:self.pos], start, value="".join(chars))


def tokenize(source: str, file: Optional[str] = None, allow_generated: bool = False) -> List[Token]:
    """
    Tokenize source text

    Args:
        source: UTF-8 text
        file: File name used in spans
        allow_generated: Accept `@`-prefixed generated names (dump re-reading only)

    Returns:
        Token list ending with an eof token

    Raises:
        DiagnosticError: On unterminated literals or illegal characters
    """
    tokens, diagnostics = Lexer(source, file, allow_generated).tokenize()
    if diagnostics:
        raise DiagnosticError(diagnostics)
    logger.debug(f"Tokenized {file or '<input>'}: {len(tokens) - 1} tokens")
    return tokens
