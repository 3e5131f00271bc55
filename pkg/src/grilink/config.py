"""Pipeline configuration: one JSON file, paths relative to it."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .harvest import NSF_FUNDER_ID
from .ingest import AwardFormat
from .transport import DEFAULT_SERVICES, ServiceConfig

DEFAULT_PERIODS = ((2000, 2016), (2017, 2023))

_TOP_LEVEL = {
    "inputs", "header_aliases", "funder", "services", "probe", "output_dir", "checkpoint", "cache_dir",
    "periods", "observation_year", "last_year", "harvest_rows",
}


@dataclass
class ProbeSettings:
    thresholds: str = "paper"
    thresholds_file: Path | None = None
    concurrency: int = 4

    @property
    def mode(self) -> str:
        return "file" if self.thresholds_file is not None else self.thresholds


@dataclass
class PipelineConfig:
    awards: Path
    par: Path
    output_dir: Path
    checkpoint: Path
    awards_format: AwardFormat = AwardFormat.XML_YEARLY
    chorus: Path | None = None
    header_aliases: Path | None = None
    funder_identifier: str = NSF_FUNDER_ID
    funder_name: str = "National Science Foundation"
    services: dict[str, ServiceConfig] = field(default_factory=lambda: dict(DEFAULT_SERVICES))
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    cache_dir: Path | None = None
    periods: tuple[tuple[int, int], ...] = DEFAULT_PERIODS
    observation_year: int | None = None
    last_year: int | None = None
    harvest_rows: int = 100
    source: Path | None = None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data, base=path.parent, source=path)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, base: Path = Path("."), source: Path | None = None):
        unknown = set(data) - _TOP_LEVEL
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def resolve(value, what, *, must_exist=True):
            if value in (None, ""):
                return None
            p = Path(value)
            p = p if p.is_absolute() else base / p
            if must_exist and not p.exists():
                raise ConfigError(f"{what} not found: {p}")
            return p

        inputs = data.get("inputs") or {}
        for key in ("awards", "par"):
            if not inputs.get(key):
                raise ConfigError(f"inputs.{key} is required")
        awards = resolve(inputs["awards"], "awards input")
        fmt = inputs.get("awards_format")
        if fmt is None:
            fmt = AwardFormat.CSV_YEARLY if awards.suffix.lower() == ".csv" else AwardFormat.XML_YEARLY
        try:
            fmt = AwardFormat(fmt)
        except ValueError:
            raise ConfigError(f"inputs.awards_format must be one of {[f.value for f in AwardFormat]}") from None

        services = {name: ServiceConfig(**vars(cfg)) for name, cfg in DEFAULT_SERVICES.items()}
        for name, overrides in (data.get("services") or {}).items():
            if name not in services:
                raise ConfigError(f"unknown service {name!r}")
            merged = dict(vars(services[name]))
            templates = dict(merged["templates"])
            templates.update(overrides.get("templates", {}))
            merged.update(overrides)
            merged["templates"] = templates
            try:
                services[name] = ServiceConfig.from_dict(merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"services.{name}: {exc}") from exc

        probe_data = dict(data.get("probe") or {})
        mode = str(probe_data.pop("thresholds", "paper"))
        thresholds_file = None
        if mode not in ("paper", "calibrate"):
            thresholds_file = resolve(mode, "thresholds file")
            mode = "file"
        concurrency = int(probe_data.pop("concurrency", 4))
        if probe_data:
            raise ConfigError(f"unknown probe settings: {sorted(probe_data)}")
        if concurrency < 1:
            raise ConfigError("probe.concurrency must be at least 1")

        funder = data.get("funder") or {}
        output_dir = resolve(data.get("output_dir", "out"), "output_dir", must_exist=False)
        periods = tuple(tuple(int(y) for y in p) for p in data.get("periods", DEFAULT_PERIODS))
        if any(len(p) != 2 or p[0] > p[1] for p in periods):
            raise ConfigError("periods must be [start, end] pairs with start <= end")

        return cls(
            awards=awards,
            par=resolve(inputs["par"], "PAR export"),
            chorus=resolve(inputs.get("chorus"), "CHORUS report"),
            awards_format=fmt,
            header_aliases=resolve(data.get("header_aliases"), "header alias table"),
            output_dir=output_dir,
            checkpoint=resolve(data.get("checkpoint", "checkpoint/probes.jsonl"), "checkpoint", must_exist=False),
            funder_identifier=funder.get("identifier", NSF_FUNDER_ID),
            funder_name=funder.get("name", "National Science Foundation"),
            services=services,
            probe=ProbeSettings(mode if mode != "file" else "file", thresholds_file, concurrency),
            cache_dir=resolve(data.get("cache_dir"), "cache_dir", must_exist=False),
            periods=periods,
            observation_year=data.get("observation_year"),
            last_year=data.get("last_year"),
            harvest_rows=int(data.get("harvest_rows", 100)),
            source=source,
        )
