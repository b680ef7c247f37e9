"""Small helpers shared by the experiment scripts: dataclass config -> argparse flags."""

from __future__ import annotations

import argparse
import json
from dataclasses import asdict, fields
from pathlib import Path


def parse_into(cfg_cls, description: str):
    """Build a parser with one flag per dataclass field and return the filled config."""
    p = argparse.ArgumentParser(description=description)
    default = cfg_cls()
    for f in fields(cfg_cls):
        value = getattr(default, f.name)
        kind = type(value)
        if isinstance(value, tuple):
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=value,
                           type=lambda s, t=type(value[0]): tuple(t(x) for x in s.split(",")),
                           help=f"comma-separated (default: {','.join(map(str, value))})")
        elif isinstance(value, bool):
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=value,
                           type=lambda s: s.lower() in ("1", "true", "yes"), help=f"(default: {value})")
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=value, type=kind,
                           help=f"(default: {value})")
    return cfg_cls(**vars(p.parse_args()))


def save_json(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=float))


def config_dict(cfg) -> dict:
    return asdict(cfg)
