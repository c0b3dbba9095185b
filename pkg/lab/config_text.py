import re
from typing import Any, Optional

from pydantic import BaseModel, ValidationError

from lab.errors import ConfigError, InvalidInputError
from schemas.experiment import ExperimentConfig, ExperimentKind

KEY_PATTERN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*")
# A '#' preceded by whitespace starts a trailing comment
TRAILING_COMMENT = re.compile(r"\s#")


def _parse_value(raw: str, line: int) -> str | list[str]:
    if not raw.startswith("["):
        if "[" in raw or "]" in raw:
            raise ConfigError(f"Unbalanced brackets in value {raw!r}", (line,))
        return raw
    if not raw.endswith("]"):
        raise ConfigError(f"List value {raw!r} is missing its closing bracket", (line,))
    inner = raw[1:-1].strip()
    if "[" in inner or "]" in inner:
        raise ConfigError("Nested lists are not supported", (line,))
    if not inner:
        return []
    items = [item.strip() for item in inner.split(",")]
    if any(not item for item in items):
        raise ConfigError(f"Empty list element in {raw!r}", (line,))
    return items


def _insert(tree: dict, key: str, value: Any, line: int, lines: dict[str, int]):
    """
    Place a dotted key into the nested dict, refusing keys that collide with a value or a section
    """
    if key in lines:
        raise ConfigError(f"Duplicate key {key}", (lines[key], line))
    parts = key.split(".")
    node = tree
    for depth, part in enumerate(parts[:-1]):
        prefix = ".".join(parts[:depth + 1])
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{key} is nested under the value {prefix}", (lines[prefix], line))
        node = child
    if isinstance(node.get(parts[-1]), dict):
        nested = min(n for k, n in lines.items() if k.startswith(key + "."))
        raise ConfigError(f"{key} is both a value and a section", (nested, line))
    node[parts[-1]] = value
    lines[key] = line


def _error_lines(loc: tuple, lines: dict[str, int], last_line: int) -> tuple[int, ...]:
    """
    Lines responsible for a validation error at ``loc``: the key with the longest matching prefix, else every key
    of the section the error belongs to, else the end of the input
    """
    parts = [str(p) for p in loc]
    for end in range(len(parts), 0, -1):
        key = ".".join(parts[:end])
        if key in lines:
            return (lines[key],)
    for end in range(len(parts), 0, -1):
        prefix = ".".join(parts[:end]) + "."
        section = sorted(n for k, n in lines.items() if k.startswith(prefix))
        if section:
            return tuple(section[:2])
    return (last_line,)


def parse_config(text: str, kind: Optional[ExperimentKind] = None) -> ExperimentConfig:
    """
    Parse a line-oriented experiment configuration. Each line is ``section.key = value``; lists are written
    ``[a, b, c]`` and ``#`` starts a comment. Every error raises ``ConfigError`` with the offending line numbers

    :param text: Configuration text
    :param kind: Experiment kind implied by the caller; a ``kind`` line must agree with it
    :return: Fully defaulted configuration
    """
    tree: dict = {}
    lines: dict[str, int] = {}
    raw_lines = text.splitlines()
    for number, raw in enumerate(raw_lines, start=1):
        content = raw.strip()
        if content.startswith("#"):
            continue
        comment = TRAILING_COMMENT.search(content)
        if comment:
            content = content[:comment.start()].rstrip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"Expected 'key = value', got {content!r}", (number,))
        if not KEY_PATTERN.fullmatch(key):
            raise ConfigError(f"Invalid key {key!r}", (number,))
        _insert(tree, key, _parse_value(value.strip(), number), number, lines)

    if kind is not None:
        declared = tree.setdefault("kind", kind.value)
        if isinstance(declared, str) and declared != kind.value:
            raise ConfigError(f"Configuration is for {declared}, not {kind.value}", (lines["kind"],))

    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        last_line = max(1, len(raw_lines))
        located = sorted(((_error_lines(err["loc"], lines, last_line), err) for err in e.errors()),
                         key=lambda pair: pair[0])
        where, first = located[0]
        field = ".".join(str(p) for p in first["loc"]) or "config"
        more = f" (and {len(located) - 1} more)" if len(located) > 1 else ""
        raise ConfigError(f"{field}: {first['msg']}{more}", where) from None


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_format_value(item) for item in value) + "]"
    return str(value)


def _flatten(data: dict, prefix: str, out: dict[str, str]):
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            _flatten(value, dotted + ".", out)
        elif value is not None:
            out[dotted] = _format_value(value)


def flatten_config(cfg: BaseModel) -> dict[str, str]:
    """
    Dotted key to formatted value, sorted by key; unset optional fields are left out
    """
    out: dict[str, str] = {}
    _flatten(cfg.model_dump(mode="json"), "", out)
    return dict(sorted(out.items()))


def serialize_config(cfg: ExperimentConfig) -> str:
    """
    Write a configuration in the format ``parse_config`` reads. Floats use their shortest round-trip form, so the
    output parses back to an equal configuration
    """
    return "".join(f"{key} = {value}\n" for key, value in flatten_config(cfg).items())


def override_config(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """
    Replace dotted keys of a parsed configuration, as command-line flags do, and validate the result again

    :param cfg: Parsed configuration
    :param overrides: Dotted key to new value; None values are skipped
    :return: Updated configuration
    """
    data = cfg.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        *sections, leaf = key.split(".")
        node = data
        for section in sections:
            node = node[section]
        node[leaf] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise InvalidInputError(f"{'.'.join(str(p) for p in first['loc'])}: {first['msg']}") from None
