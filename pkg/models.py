from typing import List, Optional, Dict, Any
from pydantic import BaseModel


class Span(BaseModel):
    """Source location of a token or node"""
    line: int = 1
    col: int = 1
    length: int = 0
    file: Optional[str] = None

    def render(self) -> str:
        """Render as file:line:col"""
        return f"{self.file or '<input>'}:{self.line}:{self.col}"


class Token(BaseModel):
    """Model for a lexical token"""
    kind: str  # identifier | integer-lit | real-lit | char-lit | string-lit | enum-lit | operator | keyword | punctuation | eof
    text: str
    span: Span
    value: Any = None
    newline_before: bool = False

    @property
    def is_eof(self) -> bool:
        """Check if this is the end-of-input marker"""
        return self.kind == "eof"


class Diagnostic(BaseModel):
    """Model for a check-time diagnostic"""
    severity: str = "error"  # error | warning
    code: str
    message: str
    span: Span

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def render(self) -> str:
        """Render in the file:line:col: error[CODE]: message format"""
        return f"{self.span.render()}: {self.severity}[{self.code}]: {self.message}"


class RuntimeCheck(BaseModel):
    """Model for a run-time check mark inserted by sema"""
    kind: str  # precondition | null-deref | disjoint | literal | range
    span: Span
    detail: str = ""


class SchedulerStats(BaseModel):
    """Model for work-stealing statistics"""
    picothreads_spawned: int = 0
    picothreads_executed: int = 0
    picothreads_terminated: int = 0
    steals: int = 0
    max_active: int = 0
    servers: int = 1
    claims: int = 0

    def lines(self) -> List[str]:
        return [
            f"picothreads_spawned={self.picothreads_spawned}",
            f"steals={self.steals}",
            f"max_active={self.max_active}",
            f"servers={self.servers}",
            f"picothreads_executed={self.picothreads_executed}",
            f"picothreads_terminated={self.picothreads_terminated}",
        ]


class StoreStats(BaseModel):
    """Model for region accounting snapshot"""
    allocated: int = 0
    released: int = 0
    live_objects: int = 0
    peak_live_objects: int = 0
    regions_created: int = 0
    live_regions: int = 0

    def lines(self) -> List[str]:
        return [
            f"live_objects_at_exit={self.live_objects}",
            f"peak_live_objects={self.peak_live_objects}",
            f"regions_created={self.regions_created}",
        ]


class Invocation(BaseModel):
    """Model for a parsed command line"""
    subcommand: str
    files: List[str] = []
    sequential: bool = False
    servers: Optional[int] = None
    seed: Optional[int] = None
    stats: bool = False
    dump: Optional[str] = None
    debug_sync: bool = False
    lock_timeout_ms: Optional[int] = None
    runs: int = 3


class BenchResult(BaseModel):
    """Model for bench subcommand output"""
    program: str
    runs: List[float]
    servers: int
    sequential: bool

    @property
    def mean_seconds(self) -> float:
        return sum(self.runs) / len(self.runs) if self.runs else 0.0


class SyncEvent(BaseModel):
    """Model for one entry of the --debug-sync event log"""
    obj_id: int
    op: str
    phase: str  # begin | end
    mode: str  # shared | exclusive | queued

    def render(self) -> str:
        return f"{self.obj_id} {self.op} {self.phase} {self.mode}"

    @classmethod
    def parse(cls, line: str) -> "SyncEvent":
        obj_id, op, phase, mode = line.split()
        return cls(obj_id=int(obj_id), op=op, phase=phase, mode=mode)


class PipelineResult(BaseModel):
    """Model for the outcome of a check or run"""
    diagnostics: List[Diagnostic] = []
    exit_code: int = 0
    output: str = ""
    stats: Dict[str, Any] = {}

    @property
    def errors(self) -> List[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]
