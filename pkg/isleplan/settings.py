"""Run configuration with .env / ISLEPLAN_* environment defaults"""
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigError, InfeasibleRequest
from .layers import DEFAULT_LAYERS, CoherencyMode, CoherencyTransform, LayerKind
from .manifold import DEFAULT_ALPHA, EmbeddingSource
from .quality import DEFAULT_DELTA, ConductanceMode

load_dotenv()


def _env_float(name, default):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")


def _env_int(name, default):
    raw = os.getenv(name)
    if raw is None or raw == '':
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


@dataclass
class RunConfig:
    """Every option of a pipeline run; ``to_dict`` is the replayable form"""

    case_path: str = ''
    measurements_path: Optional[str] = None
    outages: Tuple[Tuple[str, str], ...] = ()
    layers: Tuple[str, ...] = tuple(k.value for k in DEFAULT_LAYERS)
    alpha: float = field(default_factory=lambda: _env_float('ISLEPLAN_ALPHA', DEFAULT_ALPHA))
    k_embed: Optional[int] = None
    islands: Optional[int] = None
    k_max: int = field(default_factory=lambda: _env_int('ISLEPLAN_K_MAX', 10))
    conductance_mode: str = ConductanceMode.PAPER_LITERAL.value
    coherency_mode: str = CoherencyMode.EDGE_RESTRICTED.value
    coherency_transform: str = CoherencyTransform.CLAMP.value
    event_time: float = 2.0
    idle_time: float = 0.5
    window_start: Optional[float] = None
    window_end: Optional[float] = None
    embedding_source: str = EmbeddingSource.EIGENVECTORS.value
    normalize_rows: bool = False
    delta: float = field(default_factory=lambda: _env_float('ISLEPLAN_DELTA', DEFAULT_DELTA))
    reference: Optional[Tuple[Tuple[str, ...], ...]] = None
    export_layers: bool = False
    deterministic: bool = True

    def __post_init__(self):
        self.outages = tuple(tuple(str(x) for x in pair) for pair in self.outages)
        self.layers = tuple(getattr(l, 'value', str(l)) for l in self.layers)
        if self.reference is not None:
            self.reference = tuple(tuple(str(b) for b in island) for island in self.reference)

    def layer_kinds(self):
        return tuple(LayerKind(name) for name in self.layers)

    @property
    def coherency_window(self):
        start = self.window_start if self.window_start is not None else self.event_time + self.idle_time
        return start, self.window_end

    @property
    def uses_coherency(self):
        return LayerKind.FREQUENCY_COHERENCY.value in self.layers

    def validate(self):
        valid = {k.value for k in LayerKind}
        unknown = [l for l in self.layers if l not in valid]
        if unknown:
            raise ConfigError(f"Unknown layer(s): {', '.join(unknown)} (choose from {', '.join(sorted(valid))})")
        if not self.layers:
            raise ConfigError("At least one layer must be enabled")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigError("Duplicate layer names")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.delta < 1.0 / 3.0:
            raise ConfigError(f"delta must lie in (0, 1/3), got {self.delta}")
        if self.k_embed is not None and self.k_embed < 1:
            raise ConfigError(f"Embedding dimension must be >= 1, got {self.k_embed}")
        if self.k_max < 2:
            raise ConfigError(f"k_max must be >= 2, got {self.k_max}")
        if self.islands is not None and self.islands < 1:
            raise InfeasibleRequest(f"Island count must be >= 1, got {self.islands}")
        for name, enum in (('conductance_mode', ConductanceMode), ('coherency_mode', CoherencyMode),
                           ('coherency_transform', CoherencyTransform), ('embedding_source', EmbeddingSource)):
            value = getattr(self, name)
            if value not in {e.value for e in enum}:
                raise ConfigError(f"Invalid {name}: {value!r}")
        if self.idle_time < 0:
            raise ConfigError(f"idle_time must be >= 0, got {self.idle_time}")
        start, end = self.coherency_window
        if end is not None and end <= start:
            raise ConfigError(f"Coherency window end {end} must be after its start {start}")
        return self

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['outages'] = [list(p) for p in self.outages]
        data['layers'] = list(self.layers)
        data['reference'] = [list(i) for i in self.reference] if self.reference is not None else None
        return dict(sorted(data.items()))

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def cli_colors():
    return (
        os.getenv('ISLEPLAN_CLI_PRIMARY_COLOR', 'cyan'),
        os.getenv('ISLEPLAN_CLI_ACCENT_COLOR', 'green'),
    )
