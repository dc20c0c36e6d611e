"""Result record of one e-invariance test and its JSON form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import format_subset


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    subset: tuple[int, ...]
    statistic: float
    dof: int
    p_value: float
    reject: bool
    alpha: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["subset"] = list(self.subset)
        out["subset_label"] = format_subset(self.subset)
        return out

    def to_json(self, path=None, **kwargs) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_jsonable, **kwargs)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "TestReport":
        data = {k: v for k, v in data.items() if k != "subset_label"}
        data["subset"] = tuple(data["subset"])
        return cls(**data)


def _jsonable(obj):
    # numpy scalars and arrays
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def decide(p_value: float, alpha: float) -> bool:
    """Reject iff ``p < alpha``; ``alpha=0`` never rejects."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return bool(p_value < alpha)
