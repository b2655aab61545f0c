"""Headless script runner: drives one session from a plain-text action list.

The script format is one action per line; blank lines and `#` comments are
skipped. Node references are script-local aliases; `root` is predefined and
an expansion named `g` exposes its children as `g.1`, `g.2`, ... in added
order. Aliases must be defined before use.

    expand <node> labels=<i,j,...> [count=<n>] as <name>
    refine <node> prompt=<text> as <name>
    toggle <node> strategy=<id> on|off as <name>
    merge <a> <b> as <name>
    confirm <node>
    apply <node>
    muse

A run writes tree.json, scores.csv, muse.json, and canvas.png into the
output directory, alongside the session event log. Exit code is 0 on
success, 2 when any expansion reported per-label failures, and 1 on any
fatal error (bad file, parse error, engine error).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path

from . import plotting
from .errors import DomainError
from .pipeline import PipelineConfig
from .session import Engine, Session


class ScriptError(ValueError):
    """Action script is malformed or references an undefined alias."""


@dataclass(frozen=True)
class Action:
    line_no: int
    verb: str
    source: str = ""
    target: str = ""
    name: str = ""
    label_ids: tuple[int, ...] = ()
    count: int | None = None
    prompt: str = ""
    strategy_id: int = 0
    enabled: bool = False


def _split_alias(tokens: list[str], verb: str, line_no: int) -> tuple[list[str], str]:
    if len(tokens) >= 3 and tokens[-2] == "as":
        return tokens[:-2], tokens[-1]
    raise ScriptError(f"line {line_no}: {verb} needs a trailing 'as <name>'")


def _keyed(tokens: list[str], allowed: set[str], line_no: int) -> dict[str, str]:
    values: dict[str, str] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or key not in allowed:
            raise ScriptError(f"line {line_no}: unexpected token {token!r}")
        if key in values:
            raise ScriptError(f"line {line_no}: duplicate {key}=")
        values[key] = value
    return values


def _parse_line(tokens: list[str], line_no: int) -> Action:
    verb = tokens[0]
    if verb == "expand":
        body, name = _split_alias(tokens, verb, line_no)
        if len(body) < 3:
            raise ScriptError(f"line {line_no}: expand needs a node and labels=")
        keyed = _keyed(body[2:], {"labels", "count"}, line_no)
        if "labels" not in keyed:
            raise ScriptError(f"line {line_no}: expand needs labels=")
        try:
            label_ids = tuple(int(part) for part in keyed["labels"].split(","))
            count = int(keyed["count"]) if "count" in keyed else None
        except ValueError as exc:
            raise ScriptError(f"line {line_no}: {exc}") from exc
        return Action(line_no, verb, source=body[1], name=name,
                      label_ids=label_ids, count=count)
    if verb == "refine":
        body, name = _split_alias(tokens, verb, line_no)
        if len(body) < 3:
            raise ScriptError(f"line {line_no}: refine needs a node and prompt=")
        keyed = _keyed(body[2:], {"prompt"}, line_no)
        if not keyed.get("prompt"):
            raise ScriptError(f"line {line_no}: refine needs a non-empty prompt=")
        return Action(line_no, verb, source=body[1], name=name,
                      prompt=keyed["prompt"])
    if verb == "toggle":
        body, name = _split_alias(tokens, verb, line_no)
        if len(body) != 4:
            raise ScriptError(
                f"line {line_no}: toggle needs a node, strategy=, and on|off")
        switch = body[3]
        if switch not in ("on", "off"):
            raise ScriptError(f"line {line_no}: toggle ends with on|off, got {switch!r}")
        keyed = _keyed([body[2]], {"strategy"}, line_no)
        if "strategy" not in keyed:
            raise ScriptError(f"line {line_no}: toggle needs strategy=")
        try:
            strategy_id = int(keyed["strategy"])
        except ValueError as exc:
            raise ScriptError(f"line {line_no}: {exc}") from exc
        return Action(line_no, verb, source=body[1], name=name,
                      strategy_id=strategy_id, enabled=switch == "on")
    if verb == "merge":
        body, name = _split_alias(tokens, verb, line_no)
        if len(body) != 3:
            raise ScriptError(f"line {line_no}: merge needs exactly two nodes")
        return Action(line_no, verb, source=body[1], target=body[2], name=name)
    if verb in ("confirm", "apply"):
        if len(tokens) != 2:
            raise ScriptError(f"line {line_no}: {verb} needs exactly one node")
        return Action(line_no, verb, source=tokens[1])
    if verb == "muse":
        if len(tokens) != 1:
            raise ScriptError(f"line {line_no}: muse takes no arguments")
        return Action(line_no, verb)
    raise ScriptError(f"line {line_no}: unknown action {verb!r}")


def parse_script(text: str) -> list[Action]:
    actions = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = shlex.split(raw, comments=True)
        if tokens:
            actions.append(_parse_line(tokens, line_no))
    return actions


class _Aliases:
    """Script-local name table; both lookups and definitions are checked."""

    def __init__(self, root_node_id: str):
        self._names = {"root": root_node_id}

    def resolve(self, name: str, line_no: int) -> str:
        if name not in self._names:
            raise ScriptError(f"line {line_no}: undefined alias {name!r}")
        return self._names[name]

    def define(self, name: str, node_id: str, line_no: int) -> None:
        if name in self._names:
            raise ScriptError(f"line {line_no}: alias {name!r} already defined")
        self._names[name] = node_id


def _execute(session: Session, canvas_id: str, actions: list[Action]):
    aliases = _Aliases(f"{canvas_id}:n1")
    failures = []
    reports = []
    for action in actions:
        if action.verb == "expand":
            result = session.expand_node(
                aliases.resolve(action.source, action.line_no),
                list(action.label_ids), action.count)
            for index, node_id in enumerate(result.added, start=1):
                aliases.define(f"{action.name}.{index}", node_id, action.line_no)
            failures.extend(result.failures)
        elif action.verb == "refine":
            node_id = session.refine(
                aliases.resolve(action.source, action.line_no), action.prompt)
            aliases.define(action.name, node_id, action.line_no)
        elif action.verb == "toggle":
            node_id = session.toggle(
                aliases.resolve(action.source, action.line_no),
                action.strategy_id, action.enabled)
            aliases.define(action.name, node_id, action.line_no)
        elif action.verb == "merge":
            node_id = session.merge(
                aliases.resolve(action.source, action.line_no),
                aliases.resolve(action.target, action.line_no))
            aliases.define(action.name, node_id, action.line_no)
        elif action.verb == "confirm":
            session.confirm_node(aliases.resolve(action.source, action.line_no))
        elif action.verb == "apply":
            session.apply_node(aliases.resolve(action.source, action.line_no))
        else:
            report_id, report = session.muse_report()
            reports.append({"report_id": report_id, **report.to_dict()})
    return failures, reports


def _dump_json(payload: dict, path: Path) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")


def _write_outputs(session: Session, canvas_id: str, reports: list[dict],
                   out_dir: Path) -> None:
    export = session.export(canvas_id)
    _dump_json(export, out_dir / "tree.json")
    _dump_json({"schema_version": 1, "reports": reports}, out_dir / "muse.json")
    with open(out_dir / "scores.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["node_id", "engagement", "exposition", "state"])
        for node in export["nodes"]:
            writer.writerow([node["id"], node["score"]["engagement"],
                             node["score"]["exposition"], node["state"]])
    plotting.render_canvas(export, out_dir / "canvas.png")


def run(input_path: str, script_path: str, out_dir: str, *, mock: bool,
        seed: int | None, top_k: int | None, per_label: int | None) -> int:
    try:
        text = Path(input_path).read_text(encoding="utf-8")
        actions = parse_script(Path(script_path).read_text(encoding="utf-8"))

        config = PipelineConfig()
        if top_k is not None:
            config = dataclasses.replace(config, top_k=top_k)
        if per_label is not None:
            config = dataclasses.replace(config, combos_per_label=per_label)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        engine = Engine(out, mock=mock, seed=seed, config=config)
        session = engine.create_session()
        document_id = session.create_document(text)
        canvas_id = session.create_canvas(document_id, (0, len(text)))

        failures, reports = _execute(session, canvas_id, actions)
        _write_outputs(session, canvas_id, reports, out)
    except (ScriptError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if failures:
        for failure in failures:
            print(f"expansion failure: label={failure.label_id} "
                  f"stage={failure.stage} detail={failure.detail}",
                  file=sys.stderr)
        return 2
    return 0


class _ArgumentParser(argparse.ArgumentParser):
    # Usage errors share exit code 1 with other fatal errors; 2 is reserved
    # for runs that completed with expansion failures.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="scribespace",
        description="Run a scripted co-writing session over a text file.")
    parser.add_argument("--input", required=True, help="path to the source text")
    parser.add_argument("--script", required=True, help="path to the action script")
    parser.add_argument("--out-dir", default="out",
                        help="directory for tree.json, scores.csv, muse.json, canvas.png")
    parser.add_argument("--mock", action="store_true",
                        help="use the offline provider (requires --seed)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for deterministic mock runs")
    parser.add_argument("--k", type=int, default=None,
                        help="candidates kept per label after filtering")
    parser.add_argument("--per-label", type=int, default=None,
                        help="strategy combinations requested per label")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.mock and args.seed is None:
        parser.error("--mock requires --seed")
    return run(args.input, args.script, args.out_dir, mock=args.mock,
               seed=args.seed, top_k=args.k, per_label=args.per_label)


if __name__ == "__main__":
    sys.exit(main())
