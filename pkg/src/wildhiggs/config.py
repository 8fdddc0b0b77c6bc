"""Flat ``key = value`` run configuration.

Values are JSON scalars or lists; complex numbers are written as [re, im]
pairs under keys listed in COMPLEX_KEYS.  Floats use repr, so a config
round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

COMPLEX_KEYS = {"u", "gamma", "omega", "u_start", "u_stop", "probe_u0"}
COMPLEX_LIST_KEYS = {"us", "gammas"}


class ConfigError(ValueError):
    pass


def parse_complex(text: str | complex | float) -> complex:
    """Accept Python or mathematical notation: '1', '2+i', '0.5-1.5j', '-i'."""
    if isinstance(text, (int, float, complex)):
        return complex(text)
    s = str(text).strip().replace(" ", "").replace("I", "j").replace("i", "j")
    try:
        return complex(s)
    except ValueError as exc:
        raise ConfigError(f"cannot parse complex number {text!r}") from exc


def _encode(key: str, value):
    if key in COMPLEX_KEYS and value is not None:
        c = complex(value)
        return [c.real, c.imag]
    if key in COMPLEX_LIST_KEYS and value is not None:
        return [[complex(v).real, complex(v).imag] for v in value]
    return value


def _decode(key: str, value):
    if key in COMPLEX_KEYS and value is not None:
        return complex(*value)
    if key in COMPLEX_LIST_KEYS and value is not None:
        return [complex(*v) for v in value]
    return value


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)

    def dumps(self) -> str:
        lines = [f"command = {json.dumps(self.command)}"]
        for key in sorted(self.params):
            lines.append(f"{key} = {json.dumps(_encode(key, self.params[key]))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        command = None
        params = {}
        for num, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {num}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            try:
                decoded = json.loads(value.strip())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"line {num}: bad value {value.strip()!r}") from exc
            if key == "command":
                command = decoded
            else:
                params[key] = _decode(key, decoded)
        if command is None:
            raise ConfigError("config has no 'command' entry")
        return cls(command, params)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def as_json(self) -> dict:
        return {"command": self.command, **{k: _encode(k, v) for k, v in sorted(self.params.items())}}
