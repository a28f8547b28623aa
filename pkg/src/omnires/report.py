"""Human-readable (markdown) and machine-readable (canonical JSON) rendering
of diagnosis reports."""

from __future__ import annotations

from .diff import DiagnosisReport, serialize_diagnosis

NS_PER_MS = 1_000_000


def render_report(report: DiagnosisReport, fmt: str = "md") -> str:
    if fmt == "json":
        return serialize_diagnosis(report).decode("utf-8")
    if fmt != "md":
        raise ValueError(f"unknown report format: {fmt}")
    return _render_markdown(report)


def _ms(ns: int) -> str:
    return f"{ns / NS_PER_MS:.2f} ms"


def _render_markdown(report: DiagnosisReport) -> str:
    lines: list[str] = ["# Resource bottleneck diagnosis", ""]
    bn = report.bottleneck
    if bn.no_bottleneck:
        lines += ["No bottleneck detected.", ""]
        if report.findings:
            lines += ["## Global findings", ""]
            lines += _findings_section(report)
        return "\n".join(lines) + "\n"

    lines += [
        f"Bottleneck resource: **{bn.bottleneck}** "
        f"(blocking {_ms(bn.max_blocking_time)}, longest holder: thread {bn.longest_holder})",
        "",
        "## Ranked resources",
        "",
        "| Rank | Resource | Blocking |",
        "|------|----------|----------|",
    ]
    for i, (res, t) in enumerate(bn.ranked, start=1):
        lines.append(f"| {i} | {res} | {_ms(t)} |")
    lines += ["", "## Root causes", ""]
    func_cell = ", ".join(f"{fn} ({o})" for fn, o in report.top_functions) or "-"
    var_cell = report.top_variable or "-"
    lines += [
        "| Resource Type | Root Cause Function | Root Cause Variable |",
        "|---------------|---------------------|---------------------|",
        f"| {bn.bottleneck} | {func_cell} | {var_cell} |",
        "",
    ]
    lines += ["## Findings", ""]
    lines += _findings_section(report)
    if report.warnings:
        lines += ["## Warnings", ""]
        lines += [f"- {w}" for w in report.warnings] + [""]
    return "\n".join(lines) + "\n"


def _findings_section(report: DiagnosisReport) -> list[str]:
    lines = []
    if not report.findings:
        lines.append("No differential findings.")
        lines.append("")
        return lines
    for f in report.findings:
        if f.kind == "LoopInflation":
            lines.append(
                f"- LoopInflation: loop `{f.loop_id}` in `{f.function}` — "
                f"{f.normal_stat.get('iterations', 0)} → {f.buggy_stat.get('iterations', 0)} "
                f"iterations (ratio {f.ratio:.1f}, score {f.score:.1f})"
            )
        else:
            extra = f", mean shift {f.mean_shift:+.2f}" if f.mean_shift is not None else ""
            lines.append(
                f"- VariableDrift: `{f.variable}` — TV distance {f.tv_distance:.2f}{extra} "
                f"(score {f.score:.1f})"
            )
    lines.append("")
    return lines
