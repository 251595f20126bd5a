"""Run configuration: ``key = value`` files merged under command-line flags."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ValidationError
from .metrics import DEFAULT_W_BRANCH

SLAB_THRESHOLD = 256


def parse_clip(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in str(text).split(":"))
    except ValueError:
        raise ValidationError(f"clip range must look like LO:HI, got {text!r}") from None
    return lo, hi


def parse_triple(text) -> tuple[int, int, int]:
    if isinstance(text, (tuple, list)):
        parts = list(text)
    else:
        parts = [p for p in str(text).split(",") if p.strip()]
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValidationError(f"expected integers like 128 or 128,128,96, got {text!r}") from None
    if len(values) == 1:
        values *= 3
    if len(values) != 3:
        raise ValidationError(f"expected 1 or 3 integers, got {text!r}")
    return tuple(values)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class PipelineConfig:
    clip: tuple = (-1000.0, 1000.0)
    patch: tuple = (128, 128, 128)
    stride: tuple | None = None
    scores: str | None = None
    w_branch: float = DEFAULT_W_BRANCH
    cca: bool = False
    connectivity: int = 26
    alpha: float = 0.5
    seed: int = 0
    out_dir: str = "."
    slab_threshold: int = SLAB_THRESHOLD

    def validate(self) -> "PipelineConfig":
        lo, hi = self.clip
        if not lo < hi:
            raise ValidationError(f"clip range {lo}:{hi} is empty")
        if any(p < 1 for p in self.patch):
            raise ValidationError(f"patch shape must be positive, got {self.patch}")
        if self.stride is not None and any(
            s < 1 or s > p for s, p in zip(self.stride, self.patch)
        ):
            raise ValidationError(f"stride {self.stride} must lie in [1, patch] per axis")
        if not 0.5 < self.w_branch < 1.0:
            raise ValidationError(f"w_branch must lie in (0.5, 1), got {self.w_branch}")
        if self.connectivity not in (6, 18, 26):
            raise ValidationError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.slab_threshold < 1:
            raise ValidationError("slab_threshold must be positive")
        return self

    def merged(self, **overrides) -> "PipelineConfig":
        """Copy with every non-None override applied."""
        given = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **given)


_PARSERS = {
    "clip": parse_clip,
    "patch": parse_triple,
    "stride": parse_triple,
    "scores": str,
    "w_branch": float,
    "cca": _bool,
    "connectivity": int,
    "alpha": float,
    "seed": int,
    "out_dir": str,
    "slab_threshold": int,
}


def load_config(path) -> PipelineConfig:
    """Read ``key = value`` lines; ``#`` starts a comment, dashes in keys are allowed."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return PipelineConfig(**values)
