"""Buggy-vs-normal differential analysis.

Loops whose iteration counts inflate in the buggy run and variables whose
sampled value distributions drift are scored and combined into a ranked
root-cause report for the located bottleneck.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .facts import ProgramFacts
from .locator import BottleneckReport, locate
from .trace import TraceProfile, profile_directory
from .util import canonical_json_bytes, load_canonical_json
from .validator import ValidatedResource

log = logging.getLogger(__name__)

# "Significantly increased" is not a number anywhere; these floors separate
# all builtin fixtures cleanly and are configurable.
RATIO_FLOOR = 3.0
ABS_FLOOR = 100
TV_FLOOR = 0.3
CALLER_DEPTH = 2


@dataclass
class DiffFinding:
    kind: str  # "LoopInflation" | "VariableDrift"
    function: Optional[str] = None
    loop_id: Optional[str] = None
    variable: Optional[str] = None
    buggy_stat: dict = field(default_factory=dict)
    normal_stat: dict = field(default_factory=dict)
    score: float = 0.0
    ratio: Optional[float] = None  # iteration ratio, Laplace-smoothed
    tv_distance: Optional[float] = None
    mean_shift: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "function": self.function,
            "loop_id": self.loop_id,
            "variable": self.variable,
            "buggy_stat": self.buggy_stat,
            "normal_stat": self.normal_stat,
            "score": self.score,
            "ratio": self.ratio,
            "tv_distance": self.tv_distance,
            "mean_shift": self.mean_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffFinding":
        return cls(**{k: d.get(k) for k in (
            "kind", "function", "loop_id", "variable", "buggy_stat",
            "normal_stat", "score", "ratio", "tv_distance", "mean_shift",
        )})


def iteration_ratio(buggy_iters: int, normal_iters: int) -> Fraction:
    """Laplace-smoothed iteration ratio; 1000 vs 10 gives exactly 1001/11."""
    return Fraction(buggy_iters + 1, normal_iters + 1)


def diff_loops(
    buggy: TraceProfile,
    normal: TraceProfile,
    ratio_floor: float = RATIO_FLOOR,
    abs_floor: int = ABS_FLOOR,
) -> list[DiffFinding]:
    keys = sorted(set(buggy.loops) | set(normal.loops))
    total_buggy_time = sum(buggy.loops[k].total_time for k in buggy.loops)
    findings: list[DiffFinding] = []
    for fn, lid in keys:
        b = buggy.loops.get((fn, lid))
        n = normal.loops.get((fn, lid))
        b_iters = b.iterations if b else 0
        n_iters = n.iterations if n else 0
        ratio = iteration_ratio(b_iters, n_iters)
        if b_iters < abs_floor or float(ratio) < ratio_floor:
            continue
        share = (
            (b.total_time / total_buggy_time) if (b and total_buggy_time) else 1.0
        )
        findings.append(
            DiffFinding(
                kind="LoopInflation",
                function=fn,
                loop_id=lid,
                buggy_stat={"iterations": b_iters, "total_time": b.total_time if b else 0},
                normal_stat={"iterations": n_iters, "total_time": n.total_time if n else 0},
                score=float(ratio) * share,
                ratio=float(ratio),
            )
        )
    findings.sort(key=lambda f: (-f.score, f.function or "", f.loop_id or ""))
    return findings


def tv_distance(a: Counter, b: Counter) -> float:
    """Total-variation distance between normalized value histograms."""
    ta, tb = sum(a.values()), sum(b.values())
    if ta == 0 and tb == 0:
        return 0.0
    if ta == 0 or tb == 0:
        return 1.0
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a[k] / ta - b[k] / tb) for k in keys)


def _numeric_mean(hist: Counter) -> Optional[float]:
    total = 0.0
    count = 0
    for val, n in hist.items():
        try:
            total += float(val) * n
            count += n
        except (TypeError, ValueError):
            return None
    return total / count if count else None


def diff_variables(
    buggy: TraceProfile,
    normal: TraceProfile,
    tv_floor: float = TV_FLOOR,
) -> list[DiffFinding]:
    names = sorted(set(buggy.var_samples) | set(normal.var_samples))
    findings: list[DiffFinding] = []
    for var in names:
        b = buggy.var_samples.get(var, Counter())
        n = normal.var_samples.get(var, Counter())
        tv = tv_distance(b, n)
        if tv < tv_floor:
            continue
        b_count = sum(b.values())
        mean_shift = None
        mb, mn = _numeric_mean(b), _numeric_mean(n)
        if mb is None or mn is None:
            if b or n:
                log.warning("variable %s has non-numeric samples; histogram-only scoring", var)
        else:
            mean_shift = mb - mn
        findings.append(
            DiffFinding(
                kind="VariableDrift",
                variable=var,
                buggy_stat={"histogram": dict(sorted(b.items())), "count": b_count},
                normal_stat={"histogram": dict(sorted(n.items())), "count": sum(n.values())},
                score=tv * b_count,
                tv_distance=tv,
                mean_shift=mean_shift,
            )
        )
    findings.sort(key=lambda f: (-f.score, f.variable or ""))
    return findings


# ---------------------------------------------------------------------------
# End-to-end diagnosis


_ORDINALS = ["1st", "2nd", "3rd"] + [f"{i}th" for i in range(4, 21)]


@dataclass
class DiagnosisReport:
    bottleneck: BottleneckReport
    findings: list[DiffFinding] = field(default_factory=list)
    top_functions: list[tuple[str, str]] = field(default_factory=list)  # (func, ordinal)
    top_variable: Optional[str] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def no_bottleneck(self) -> bool:
        return self.bottleneck.no_bottleneck

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "bottleneck": self.bottleneck.to_dict(),
            "findings": [f.to_dict() for f in self.findings],
            "top_functions": [[f, o] for f, o in self.top_functions],
            "top_variable": self.top_variable,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosisReport":
        return cls(
            bottleneck=BottleneckReport.from_dict(d["bottleneck"]),
            findings=[DiffFinding.from_dict(f) for f in d.get("findings", [])],
            top_functions=[(f, o) for f, o in d.get("top_functions", [])],
            top_variable=d.get("top_variable"),
            warnings=list(d.get("warnings", [])),
        )


def _allowed_functions(
    report: BottleneckReport,
    resources: list[ValidatedResource],
    facts: Optional[ProgramFacts],
) -> Optional[set[str]]:
    if report.bottleneck is None or facts is None:
        return None
    operator_fns = {
        op.function
        for res in resources
        if res.name == report.bottleneck
        for op in res.operators
    }
    if not operator_fns:
        return None
    return facts.callers_within(operator_fns, CALLER_DEPTH)


def _exit_var_drift(
    fn: str, loop_id: str, facts: Optional[ProgramFacts], var_findings: list[DiffFinding]
) -> float:
    if facts is None:
        return 0.0
    fact = facts.functions.get(fn) or facts.functions.get(fn.split("::")[-1])
    if fact is None:
        return 0.0
    exit_vars: set[str] = set()
    for lp in fact.loops:
        if lp.loop_id == loop_id:
            exit_vars |= set(lp.exit_cond_vars)
    drifts = [
        f.tv_distance or 0.0 for f in var_findings if f.variable in exit_vars
    ]
    return max(drifts, default=0.0)


def diagnose_profiles(
    buggy: TraceProfile,
    normal: TraceProfile,
    resources: list[ValidatedResource],
    facts: Optional[ProgramFacts] = None,
    ratio_floor: float = RATIO_FLOOR,
    abs_floor: int = ABS_FLOOR,
    tv_floor: float = TV_FLOOR,
) -> DiagnosisReport:
    warnings: list[str] = []
    report = locate(buggy, resources)

    loop_findings = diff_loops(buggy, normal, ratio_floor, abs_floor)
    var_findings = diff_variables(buggy, normal, tv_floor)

    allowed = _allowed_functions(report, resources, facts)
    if allowed is None:
        if not report.no_bottleneck:
            warnings.append(
                "no facts supplied: findings are unrestricted by the call graph"
            )
    else:
        # Restriction to the bottleneck's operators and their callers.
        loop_findings = [
            f for f in loop_findings
            if f.function in allowed or (f.function or "").split("::")[-1] in allowed
        ]
        allowed_vars: set[str] = set()
        for fn in allowed:
            fact = facts.functions.get(fn)
            if fact:
                allowed_vars |= fact.touched_vars()
        var_findings = [f for f in var_findings if f.variable in allowed_vars]

    # Combined score: loop inflation amplified by drift of its exit variables.
    for f in loop_findings:
        drift = _exit_var_drift(f.function or "", f.loop_id or "", facts, var_findings)
        f.score = f.score * (1.0 + drift)

    findings = sorted(
        loop_findings + var_findings,
        key=lambda f: (-f.score, f.kind, f.function or "", f.variable or ""),
    )

    ranked_fns: list[str] = []
    for f in findings:
        if f.kind == "LoopInflation" and f.function and f.function not in ranked_fns:
            ranked_fns.append(f.function)
    top_functions = [
        (fn, _ORDINALS[i] if i < len(_ORDINALS) else f"{i + 1}th")
        for i, fn in enumerate(ranked_fns)
    ]
    top_variable = next(
        (f.variable for f in findings if f.kind == "VariableDrift"), None
    )
    return DiagnosisReport(
        bottleneck=report,
        findings=findings,
        top_functions=top_functions,
        top_variable=top_variable,
        warnings=warnings,
    )


def diagnose(
    buggy_dir: str,
    normal_dir: str,
    resources: list[ValidatedResource],
    facts: Optional[ProgramFacts] = None,
    **thresholds,
) -> DiagnosisReport:
    buggy = profile_directory(buggy_dir)
    normal = profile_directory(normal_dir)
    return diagnose_profiles(buggy, normal, resources, facts, **thresholds)


def serialize_diagnosis(report: DiagnosisReport) -> bytes:
    return canonical_json_bytes(report.to_dict())


def parse_diagnosis(data: bytes | str) -> DiagnosisReport:
    return DiagnosisReport.from_dict(load_canonical_json(data))
