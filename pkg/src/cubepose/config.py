"""Experiment configuration and the detector head-shape calculator.

Config files are flat ``key = value`` text, one entry per line, with ``#``
starting a comment. Every key is optional; see ``DEFAULTS``.
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import BadValue, MissingFile
from .losses import LossWeights
from .metrics import ChamferDirection
from .optim import FitConfig


@dataclass(frozen=True)
class SubnetShape:
    n_iter: int
    d_iter: int
    d_rot: int


def subnet_shape(phi):
    """Depths of the rotation head for compound-scaling coefficient ``phi``.

    The scale head is an exact copy of the rotation head, so it has the same
    shape: ``n_iter`` refinement iterations, each a stack of ``d_iter`` 3x3
    convolutions, behind ``d_rot`` initial layers.
    """
    if int(phi) != phi or phi < 0:
        raise ValueError(f"phi must be a non-negative integer, got {phi!r}")
    phi = int(phi)
    return SubnetShape(1 + phi // 3, 2 + phi // 3, 2 + phi // 3)


@dataclass(frozen=True)
class ExperimentConfig:
    k: float = 0.1
    eval_direction: str = "gt_to_pred"
    loss_direction: str = "pred_to_gt"
    offset: float = 0.2
    w_cube: float = 1.0
    w_volume: float = 0.1
    w_riou: float = 0.0
    symmetric_classes: tuple = ("eggbox", "glue")
    seed: int = 0
    input_units: str = "mm"
    avg_diameter_mm: float = 0.0  # 0 means "derive from the prior cube"
    max_iters: int = 2000
    step_size: float = 1e-2
    converge_tol: float = 1e-6
    fit_scale: bool = True
    init_angle_deg: float = 20.0
    init_trans_frac: float = 0.3
    gradcheck_instances: int = 100
    gradcheck_h: float = 1e-5
    gradcheck_tol: float = 1e-5
    brute_force_max: int = 64
    min_area_px: float = 25.0

    @property
    def weights(self):
        return LossWeights(self.w_cube, self.w_volume, self.w_riou)

    @property
    def eval_dir(self):
        return ChamferDirection.parse(self.eval_direction)

    @property
    def loss_dir(self):
        return ChamferDirection.parse(self.loss_direction)

    @property
    def units_to_mm(self):
        return {"mm": 1.0, "cm": 10.0, "m": 1000.0}[self.input_units]

    def fit_config(self):
        return FitConfig(max_iters=self.max_iters, step_size=self.step_size,
                         converge_tol=self.converge_tol, fit_scale=self.fit_scale,
                         seed=self.seed)

    def is_symmetric(self, class_id):
        return class_id in self.symmetric_classes

    def echo(self):
        """Effective values as an ordered ``{key: text}`` mapping."""
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out[key] = str(value)
        return out

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.echo().items())


DEFAULTS = ExperimentConfig()

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key, kind, text):
    try:
        if kind is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind is tuple:
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return kind(text)
    except ValueError:
        raise BadValue(key, f"{key}: cannot parse {text!r}") from None


def _validate(cfg):
    positive = ("k", "step_size", "gradcheck_h", "gradcheck_tol")
    for key in positive:
        if not getattr(cfg, key) > 0:
            raise BadValue(key, f"{key} must be positive")
    for key in ("offset", "w_cube", "w_volume", "w_riou", "converge_tol", "min_area_px",
                "avg_diameter_mm", "init_angle_deg", "init_trans_frac"):
        if not getattr(cfg, key) >= 0:
            raise BadValue(key, f"{key} must be non-negative")
    if not (cfg.w_cube > 0 or cfg.w_volume > 0 or cfg.w_riou > 0):
        raise BadValue("w_cube", "at least one loss weight must be positive")
    for key in ("max_iters", "gradcheck_instances"):
        if getattr(cfg, key) < 1:
            raise BadValue(key, f"{key} must be >= 1")
    for key in ("eval_direction", "loss_direction"):
        try:
            ChamferDirection.parse(getattr(cfg, key))
        except ValueError:
            raise BadValue(key, f"{key} must be pred_to_gt or gt_to_pred") from None
    if cfg.input_units not in ("mm", "cm", "m"):
        raise BadValue("input_units", "input_units must be mm, cm or m")


def parse_config(text):
    kinds = {f.name: type(getattr(DEFAULTS, f.name)) for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(line, f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise BadValue(key, f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, kinds[key], value)
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


def load_config(path=None):
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return DEFAULTS
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    return parse_config(path.read_text())
