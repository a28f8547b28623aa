"""`omnires` command-line entry point.

Subcommands mirror the pipeline stages; `run` chains them end to end. All
artifacts are canonical JSON, so identical inputs always produce byte-
identical outputs. Exit codes: 0 success, 1 error, 2 diagnosis completed
with findings (useful for CI gating).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import diff as diff_mod
from . import locator as locator_mod
from .config import Config, ConfigError, load_config
from .facts import load_facts
from .metadata import extract_metadata, parse_corpus, serialize_corpus
from .oracle import (
    HttpOracle,
    ScriptedOracle,
    identify_operators,
    identify_resources,
    parse_candidates,
    serialize_candidates,
)
from .report import render_report
from .scenarios import BUILTIN_NAMES, builtin_pair, declared_resources
from .sim import parse_scenario, run_scenario
from .trace import profile_directory, serialize_profile
from .validator import dispatch_validate, parse_resources, serialize_resources

log = logging.getLogger("omnires")

SOURCE_SUFFIXES = (".h", ".hpp", ".c", ".cc", ".cpp", ".java", ".cs")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2


def _write(path: str, data: bytes) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
    log.info("wrote %s", path)


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _collect_sources(src_dir: str) -> list[tuple[str, str]]:
    root = Path(src_dir)
    out = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix in SOURCE_SUFFIXES:
            out.append((str(path.relative_to(root)), path.read_text("utf-8")))
    return out


def _make_oracle(cfg: Config):
    if cfg.oracle == "http":
        return HttpOracle(endpoint=cfg.endpoint, model=cfg.model)
    if not cfg.transcript:
        raise ConfigError("scripted oracle requires a transcript path")
    return ScriptedOracle.from_file(cfg.transcript)


# ---------------------------------------------------------------------------
# Stage implementations (shared by subcommands and `run`)


def stage_extract(cfg: Config, out_path: str) -> None:
    sources = _collect_sources(cfg.src)
    corpus = extract_metadata(sources)
    for w in corpus.warnings:
        log.warning("%s", w)
    _write(out_path, serialize_corpus(corpus))


def stage_identify(cfg: Config, out_path: str) -> None:
    corpus = parse_corpus(_read(cfg.corpus))
    facts = load_facts(_read(cfg.facts))
    oracle = _make_oracle(cfg)
    candidates = identify_resources(corpus, oracle, overrides_dir=cfg.prompt_dir)
    operators = identify_operators(
        corpus, facts, candidates, oracle, overrides_dir=cfg.prompt_dir
    )
    _write(out_path, serialize_candidates(candidates, operators))


def stage_validate(cfg: Config, out_path: str) -> None:
    candidates, operators = parse_candidates(_read(cfg.candidates))
    facts = load_facts(_read(cfg.facts))
    validated = dispatch_validate(candidates, operators, facts)
    _write(out_path, serialize_resources(validated))


def stage_simulate(cfg: Config, out_dir: str, variant: str) -> None:
    if cfg.scenario in BUILTIN_NAMES:
        buggy, normal = builtin_pair(cfg.scenario, cfg.seed)
        scenario = buggy if variant == "buggy" else normal
    else:
        scenario = parse_scenario(_read(cfg.scenario))
    run_scenario(scenario, out_dir=out_dir)
    log.info("wrote traces to %s", out_dir)


def stage_profile(trace_dir: str, out_path: str) -> None:
    prof = profile_directory(trace_dir)
    for w in prof.warnings:
        log.warning("%s", w)
    _write(out_path, serialize_profile(prof))


def _load_resources_for(cfg: Config, default_scenario=None):
    if cfg.resources and os.path.exists(cfg.resources):
        return parse_resources(_read(cfg.resources))
    if default_scenario is not None:
        return declared_resources(default_scenario)
    raise ConfigError("no resources file available")


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_extract(args) -> int:
    cfg = _config(args, src=args.src)
    stage_extract(cfg, args.out)
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _config(args, corpus=args.corpus, facts=args.facts)
    if args.oracle.startswith("scripted:"):
        cfg.oracle = "scripted"
        cfg.transcript = args.oracle.split(":", 1)[1]
    else:
        cfg.oracle = args.oracle
    stage_identify(cfg, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args, candidates=args.candidates, facts=args.facts)
    stage_validate(cfg, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, scenario=args.scenario, seed=args.seed)
    stage_simulate(cfg, args.out_dir, args.variant)
    return EXIT_OK


def cmd_profile(args) -> int:
    stage_profile(args.trace_dir, args.out)
    return EXIT_OK


def cmd_locate(args) -> int:
    from .trace import TraceProfile
    from .util import load_canonical_json

    prof = TraceProfile.from_dict(load_canonical_json(_read(args.profile)))
    resources = parse_resources(_read(args.resources))
    report = locator_mod.locate(prof, resources)
    _write(args.out, locator_mod.serialize_report(report))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    resources = parse_resources(_read(args.resources))
    facts = load_facts(_read(args.facts)) if args.facts else None
    report = diff_mod.diagnose(args.buggy, args.normal, resources, facts)
    text = render_report(report, args.format)
    if args.out:
        _write(args.out, text.encode("utf-8"))
    else:
        print(text)
    return EXIT_FINDINGS if report.findings else EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def fresh(path: Path) -> bool:
        return not (cfg.resume and path.exists())

    corpus_path = Path(cfg.corpus) if cfg.corpus else out / "corpus.json"
    candidates_path = Path(cfg.candidates) if cfg.candidates else out / "candidates.json"
    resources_path = Path(cfg.resources) if cfg.resources else out / "resources.json"
    buggy_dir = Path(cfg.buggy_dir) if cfg.buggy_dir else out / "traces" / "buggy"
    normal_dir = Path(cfg.normal_dir) if cfg.normal_dir else out / "traces" / "normal"

    # Discovery stages run only when their inputs are configured.
    if cfg.src and fresh(corpus_path):
        cfg.corpus = str(corpus_path)
        stage_extract(cfg, str(corpus_path))
        cfg.corpus = str(corpus_path)
    if cfg.facts and corpus_path.exists():
        cfg.corpus = str(corpus_path)
        if fresh(candidates_path):
            stage_identify(cfg, str(candidates_path))
        cfg.candidates = str(candidates_path)
        if fresh(resources_path):
            stage_validate(cfg, str(resources_path))
        cfg.resources = str(resources_path)

    # Trace production: builtin simulator pair unless trace dirs were given.
    scenario_pair = None
    if cfg.scenario in BUILTIN_NAMES:
        scenario_pair = builtin_pair(cfg.scenario, cfg.seed)
    if not (cfg.buggy_dir and os.path.isdir(cfg.buggy_dir)):
        if fresh(buggy_dir / "ground_truth.json") and scenario_pair:
            run_scenario(scenario_pair[0], out_dir=str(buggy_dir))
    if not (cfg.normal_dir and os.path.isdir(cfg.normal_dir)):
        if fresh(normal_dir / "trace.1.jsonl") and scenario_pair:
            run_scenario(scenario_pair[1], out_dir=str(normal_dir))

    for trace_dir, label in ((buggy_dir, "buggy"), (normal_dir, "normal")):
        prof_path = out / f"profile.{label}.json"
        if fresh(prof_path):
            stage_profile(str(trace_dir), str(prof_path))

    resources = _load_resources_for(
        cfg, scenario_pair[0] if scenario_pair else None
    )
    facts = load_facts(_read(cfg.facts)) if cfg.facts and os.path.exists(cfg.facts) else None
    report = diff_mod.diagnose(
        str(buggy_dir), str(normal_dir), resources, facts,
        ratio_floor=cfg.ratio_floor, abs_floor=cfg.abs_floor, tv_floor=cfg.tv_floor,
    )
    _write(str(out / "bottleneck.json"), locator_mod.serialize_report(report.bottleneck))
    _write(str(out / "report.json"), render_report(report, "json").encode("utf-8"))
    _write(str(out / "report.md"), render_report(report, "md").encode("utf-8"))
    return EXIT_FINDINGS if report.findings else EXIT_OK


def _config(args, **stage_paths) -> Config:
    cfg_path = getattr(args, "config", None) or os.environ.get("OMNIRES_CONFIG")
    cfg = load_config(cfg_path, getattr(args, "set", None))
    for key, value in stage_paths.items():
        if value is not None:
            setattr(cfg, key, value)
    for key in ("scenario", "seed", "out_dir", "resources", "facts", "buggy_dir", "normal_dir"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "resume", False):
        cfg.resume = True
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnires", description=__doc__)
    p.add_argument("--config", help="TOML config file (or $OMNIRES_CONFIG)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("extract", help="extract metadata from a source tree")
    sp.add_argument("--src", required=True)
    sp.add_argument("--out", default="corpus.json")
    sp.set_defaults(handler=cmd_extract)

    sp = sub.add_parser("identify", help="semantic resource + operator identification")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--facts", required=True)
    sp.add_argument("--oracle", default="scripted:transcript.json",
                    help="scripted:<file> or http")
    sp.add_argument("--out", default="candidates.json")
    sp.set_defaults(handler=cmd_identify)

    sp = sub.add_parser("validate", help="static validation of candidates")
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--facts", required=True)
    sp.add_argument("--out", default="resources.json")
    sp.set_defaults(handler=cmd_validate)

    sp = sub.add_parser("simulate", help="run a contention scenario")
    sp.add_argument("--scenario", default="undo_purge",
                    help=f"builtin ({', '.join(BUILTIN_NAMES)}) or a scenario JSON file")
    sp.add_argument("--variant", choices=("buggy", "normal"), default="buggy")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out-dir", default="traces")
    sp.set_defaults(handler=cmd_simulate)

    sp = sub.add_parser("profile", help="build a profile from a trace directory")
    sp.add_argument("--trace-dir", required=True)
    sp.add_argument("--out", default="profile.json")
    sp.set_defaults(handler=cmd_profile)

    sp = sub.add_parser("locate", help="locate the bottleneck resource")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--resources", required=True)
    sp.add_argument("--out", default="bottleneck.json")
    sp.set_defaults(handler=cmd_locate)

    sp = sub.add_parser("diagnose", help="buggy-vs-normal differential diagnosis")
    sp.add_argument("--buggy", required=True)
    sp.add_argument("--normal", required=True)
    sp.add_argument("--resources", required=True)
    sp.add_argument("--facts")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("json", "md"), default="md")
    sp.set_defaults(handler=cmd_diagnose)

    sp = sub.add_parser("run", help="full pipeline")
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", dest="out_dir", default=None)
    sp.add_argument("--resources", default=None)
    sp.add_argument("--facts", default=None)
    sp.add_argument("--buggy-dir", dest="buggy_dir", default=None)
    sp.add_argument("--normal-dir", dest="normal_dir", default=None)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(handler=cmd_run)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        code = args.handler(args)
    except FileNotFoundError as exc:
        log.error("missing input file: %s", exc.filename or exc)
        return EXIT_ERROR
    except (ConfigError, ValueError, KeyError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())
