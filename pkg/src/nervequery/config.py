"""Plain-text ``key = value`` configuration files and the resolved run configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .engine import EngineConfig
from .relations import RelationParams


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, later keys override earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_kv(text, str(path))


# config key -> (target, field, converter)
_OVERRIDES = {
    "threshold": ("engine", "default_threshold", float),
    "min_points": ("engine", "min_points_per_stage", int),
    "orientation": ("engine", "orientation_mode", str),
    "crossing_tau": ("relations", "crossing_decay_tau", float),
    "kappa": ("relations", "directional_kappa", float),
    "between_limit": ("relations", "between_dilation_limit", float),
    "near_decay": ("relations", "near_decay", float),
    "directional_method": ("relations", "directional_method", str),
}
_PATH_KEYS = ("labelmap", "labels", "tractogram", "queries")


@dataclass(frozen=True)
class RunConfig:
    labelmap: Path | None = None
    labels: Path | None = None
    tractogram: Path | None = None
    queries: Path | None = None
    query: str | None = None
    relations: RelationParams = field(default_factory=RelationParams)
    engine: EngineConfig = field(default_factory=EngineConfig)

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: Path = Path(".")) -> "RunConfig":
        kw: dict = {}
        rel: dict = {}
        eng: dict = {}
        for key, value in values.items():
            if key in _PATH_KEYS:
                p = Path(value)
                kw[key] = p if p.is_absolute() else base / p
            elif key == "query":
                kw["query"] = value
            elif key in _OVERRIDES:
                target, name, conv = _OVERRIDES[key]
                try:
                    (rel if target == "relations" else eng)[name] = conv(value)
                except ValueError:
                    raise ConfigError(f"bad value for {key}: {value!r}") from None
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(relations=RelationParams(**rel), engine=EngineConfig(**eng), **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        path = Path(path)
        values = read_kv(path)
        values.update(overrides or {})
        return cls.from_mapping(values, path.parent)

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ConfigError("missing config key(s): " + ", ".join(missing))
        for k in keys:
            v = getattr(self, k)
            if isinstance(v, Path) and not v.is_file():
                raise ConfigError(f"{k}: file not found: {v}")

    def manifest(self) -> str:
        lines = ["# resolved run configuration"]
        for k in _PATH_KEYS + ("query",):
            v = getattr(self, k)
            if v is not None:
                lines.append(f"{k} = {v}")
        rel, eng = asdict(self.relations), asdict(self.engine)
        for key, (target, name, _) in _OVERRIDES.items():
            lines.append(f"{key} = {(rel if target == 'relations' else eng)[name]}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)
