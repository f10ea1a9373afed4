"""Command-line entry point: ``randgrad run|list|validate``.

Config files are TOML::

    scenario = "deloc"
    seed = 0
    threads = 1
    output_dir = "out/deloc"

    [deloc]
    N3 = [4, 6, 8]

Only the section named by ``scenario`` is allowed.  Its keys are the keyword arguments of
the scenario runner; anything else is rejected.  ``RANDGRAD_THREADS`` and
``RANDGRAD_OUTPUT_DIR`` override the corresponding top-level keys.
"""

from __future__ import annotations

import argparse
import hashlib
import inspect
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__
from ._accel import backend
from .experiments import CSV_VERSION, EXACT_SCENARIOS, SCENARIOS

log = logging.getLogger("randgrad")

TOP_LEVEL = {"scenario": str, "seed": int, "threads": int, "output_dir": str}
ENV_THREADS = "RANDGRAD_THREADS"
ENV_OUTPUT = "RANDGRAD_OUTPUT_DIR"

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


class ParseError(ValueError):
    """The file is not valid TOML."""


class ValidationError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ------------------------------------------------------------------ schema
def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def scenario_schema(name: str) -> dict:
    """{parameter: default} for a scenario, taken from the runner signature."""
    fn = getattr(SCENARIOS[name], "__wrapped__", SCENARIOS[name])
    return {p.name: _plain(p.default) for p in inspect.signature(fn).parameters.values()}


def _type_name(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, str):
        return "str"
    if isinstance(v, list):
        return "array"
    return type(v).__name__


def _coerce(key: str, value, default, errors: list[str]):
    """Match ``value`` to the type of ``default``; ints are accepted for floats."""
    if default is None:
        return value
    want = _type_name(default)
    got = _type_name(value)
    if want == got:
        if want == "array" and default and value:
            proto = default[0]
            return [_coerce(f"{key}[{i}]", x, proto, errors) for i, x in enumerate(value)]
        return value
    if want == "float" and got == "int":
        return float(value)
    errors.append(f"{key}: expected {want}, got {got} ({value!r})")
    return value


# ------------------------------------------------------------------ config
@dataclass
class RunConfig:
    scenario: str
    seed: int = 0
    threads: int = 1
    output_dir: str = "randgrad-out"
    params: dict = field(default_factory=dict)

    def runner_kwargs(self) -> dict:
        kw = dict(self.params)
        schema = scenario_schema(self.scenario)
        if "seed" in schema:
            kw["seed"] = self.seed
        if "threads" in schema:
            kw["threads"] = self.threads
        return kw

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            self.scenario: dict(self.params),
        }

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def from_dict(raw: dict, *, apply_env: bool = True) -> RunConfig:
    """Validate a raw mapping; collects every problem before raising."""
    errors: list[str] = []
    scenario = raw.get("scenario")
    if scenario is None:
        errors.append("scenario: missing")
    elif scenario not in SCENARIOS:
        errors.append(f"scenario: unknown scenario {scenario!r} (known: {', '.join(SCENARIOS)})")
        scenario = None

    top = {}
    for key, value in raw.items():
        if key in TOP_LEVEL:
            if key == "scenario":
                continue
            want = TOP_LEVEL[key]
            if not isinstance(value, want) or isinstance(value, bool):
                errors.append(f"{key}: expected {want.__name__}, got {_type_name(value)} ({value!r})")
            else:
                top[key] = value
        elif isinstance(value, dict) and key in SCENARIOS:
            if scenario is not None and key != scenario:
                errors.append(f"[{key}]: section does not match scenario {scenario!r}")
        else:
            errors.append(f"{key}: unknown key")
    if top.get("threads", 1) < 1:
        errors.append("threads: must be >= 1")

    params = {}
    if scenario is not None:
        schema = scenario_schema(scenario)
        section = raw.get(scenario, {})
        for key, value in section.items():
            if key not in schema:
                errors.append(f"[{scenario}].{key}: unknown key")
            elif key in ("seed", "threads"):
                errors.append(f"[{scenario}].{key}: set this at top level")
            else:
                params[key] = _coerce(f"[{scenario}].{key}", value, schema[key], errors)
        for key, default in schema.items():
            if key not in params and key not in ("seed", "threads"):
                params[key] = default
    if errors:
        raise ValidationError(errors)

    cfg = RunConfig(scenario, params=params, **top)
    if apply_env:
        if os.environ.get(ENV_THREADS):
            try:
                cfg.threads = max(1, int(os.environ[ENV_THREADS]))
            except ValueError as exc:
                raise ValidationError([f"{ENV_THREADS}: not an integer"]) from exc
        if os.environ.get(ENV_OUTPUT):
            cfg.output_dir = os.environ[ENV_OUTPUT]
    return cfg


def parse_text(text: str, *, apply_env: bool = True) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from exc
    return from_dict(raw, apply_env=apply_env)


def parse_config(path, *, apply_env: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    try:
        return parse_text(text, apply_env=apply_env)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def serialize(cfg: RunConfig) -> str:
    return cfg.to_toml()


# ---------------------------------------------------------------- manifest
@dataclass
class RunManifest:
    config: dict
    version: str
    backend: str
    csv_version: int
    started: str
    finished: str
    wall_clock: float
    outputs: dict
    passed: bool
    failed_checks: list

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(cfg: RunConfig) -> str:
    """Hash of everything that can change the numbers; output_dir and threads cannot."""
    d = cfg.to_dict()
    d.pop("output_dir")
    d.pop("threads")
    blob = json.dumps({"config": d, "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def dispatch(cfg: RunConfig) -> int:
    """Run, write outputs and manifest, and map the verdict to an exit code."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    report = SCENARIOS[cfg.scenario](**cfg.runner_kwargs())
    report.manifest_hash = config_hash(cfg)
    csv_path = out / f"{cfg.scenario}.csv"
    jsonl_path = out / f"{cfg.scenario}.jsonl"
    csv_path.write_text(report.csv_text())
    jsonl_path.write_text(report.to_json(include_timing=False) + "\n")
    manifest = RunManifest(
        config=cfg.to_dict(),
        version=__version__,
        backend=backend(),
        csv_version=CSV_VERSION,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        wall_clock=round(time.perf_counter() - t0, 3),
        outputs={p.name: _sha256(p) for p in (csv_path, jsonl_path)},
        passed=report.passed,
        failed_checks=report.failed(),
    )
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# --------------------------------------------------------------------- main
def _cmd_list(_args) -> int:
    for name in SCENARIOS:
        kind = "exact" if name in EXACT_SCENARIOS else "mcmc"
        doc = (inspect.getdoc(SCENARIOS[name]) or "").splitlines()[0]
        print(f"{name} [{kind}]  {doc}")
        for key, default in scenario_schema(name).items():
            print(f"    {key} = {json.dumps(default)}")
    return EXIT_OK


def _load(path) -> RunConfig | None:
    try:
        return parse_config(path)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"invalid: {e}", file=sys.stderr)
    return None


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_ERROR
    sys.stdout.write(serialize(cfg))
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_ERROR
    try:
        return dispatch(cfg)
    except Exception as exc:  # any execution failure maps to exit 1
        log.exception("scenario %s failed", cfg.scenario)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randgrad", description="Random-field gradient interface experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the scenario described by a config file")
    r.add_argument("config")
    r.set_defaults(fn=_cmd_run)
    v = sub.add_parser("validate", help="check a config file and print it with defaults filled in")
    v.add_argument("config")
    v.set_defaults(fn=_cmd_validate)
    ls = sub.add_parser("list", help="list scenarios and their parameters")
    ls.set_defaults(fn=_cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
