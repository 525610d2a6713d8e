"""Run manifest written beside every command output."""
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Union

from core.persistence import load_json, save_json

from .utils import hash_inputs

MANIFEST_VERSION = "1.0"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


@dataclass
class RunManifest:
    """What a command read, what it wrote and with which settings."""
    command: str
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: list[str] = field(default_factory=list)
    started: str = field(default_factory=_now)
    finished: str = ""

    def add_inputs(self, paths: Iterable[Union[str, Path]]) -> None:
        self.inputs.update(hash_inputs(p for p in paths if p is not None))

    def add_output(self, path: Union[str, Path]) -> None:
        if str(path) not in self.outputs:
            self.outputs.append(str(path))

    def to_dict(self) -> dict:
        return {
            'version': MANIFEST_VERSION,
            'command': self.command,
            'config': self.config,
            'seed': self.seed,
            'inputs': dict(sorted(self.inputs.items())),
            'outputs': list(self.outputs),
            'started': self.started,
            'finished': self.finished,
            'python': platform.python_version(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunManifest':
        return cls(
            command=data['command'],
            config=data.get('config', {}),
            seed=int(data.get('seed', 0)),
            inputs=dict(data.get('inputs', {})),
            outputs=list(data.get('outputs', [])),
            started=data.get('started', ''),
            finished=data.get('finished', ''),
        )

    def save(self, path: Union[str, Path]) -> Path:
        self.finished = _now()
        save_json(self.to_dict(), path)
        return Path(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunManifest':
        return cls.from_dict(load_json(path))


def manifest_path(output: Union[str, Path]) -> Path:
    """``<dir>/manifest.json`` for a directory output, ``<stem>.manifest.json`` beside a file."""
    output = Path(output)
    if output.is_dir() or not output.suffix:
        return output / "manifest.json"
    return output.with_name(f"{output.stem}.manifest.json")
