import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from config import config
from viscolab.exceptions import ConfigError, DomainError
from viscolab.services.constitutive import GAMMA_MODEL_THRESHOLD, R_EXISTENCE_THRESHOLD, ModelParams
from viscolab.services.dynamics import StepConfig
from viscolab.services.fields import Grid

FORMAT_VERSION = 1


class Scenario(str, enum.Enum):
    EQUILIBRIUM = "equilibrium"
    SHEAR_PERTURBATION = "shear-perturbation"
    RANDOM_SMOOTH = "random-smooth"
    TWIN_RUN = "twin-run"
    MANUFACTURED = "manufactured"


class ForcingKind(str, enum.Enum):
    SHEAR = "shear"
    COMPRESSIVE = "compressive"


@dataclass(frozen=True)
class GridSpec:
    dim: int = 2
    n: int = 32
    length: float = 2 * math.pi

    def to_grid(self) -> Grid:
        return Grid(dim=self.dim, n=self.n, length=self.length)


@dataclass(frozen=True)
class ForcingSpec:
    amplitude: float = 0.0
    kind: str = ForcingKind.SHEAR.value


@dataclass(frozen=True)
class InitialSpec:
    rho_bar: float = 1.0
    eta_bar: float = 1.0
    floor: float = 0.5
    amplitude: float = 0.1
    max_wavenumber: int = 4
    decay: float = 4.0


@dataclass(frozen=True)
class RunConfig:
    scenario: str = Scenario.EQUILIBRIUM.value
    seed: int = 0
    end_time: float = 0.1
    cadence: int = 10
    twin: bool = False
    output: str = config.paths.output_dir
    grid: GridSpec = field(default_factory=GridSpec)
    params: ModelParams = field(default_factory=ModelParams)
    step: StepConfig = field(default_factory=StepConfig)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)

    @property
    def is_twin(self) -> bool:
        return self.twin or self.scenario == Scenario.TWIN_RUN.value

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class SnapshotHeader:
    dim: int
    n: int
    length: float
    field_name: str
    component_count: int
    kind: str
    time: float
    byte_order: str = "little"
    format_version: int = FORMAT_VERSION

    @property
    def payload_bytes(self) -> int:
        return self.n ** self.dim * self.component_count * 8

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ==================== РАЗБОР КОНФИГУРАЦИИ ====================

# JSON-имя параметра -> имя поля ModelParams
PARAM_ALIASES = {"lambda": "lam"}
PARAM_NAMES = {v: k for k, v in PARAM_ALIASES.items()}

TOP_LEVEL_KEYS = {
    "scenario", "seed", "end_time", "cadence", "twin", "output",
    "grid", "params", "step", "forcing", "initial",
}


def _number(value: Any, path: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return float(value)


def _section(document: Dict[str, Any], name: str, allowed: Iterable[str]) -> Dict[str, Any]:
    value = document.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(name, f"expected an object, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return value


def _parse_grid(document: Dict[str, Any]) -> GridSpec:
    section = _section(document, "grid", {"dim", "n", "length"})
    defaults = GridSpec()
    spec = GridSpec(
        dim=_number(section.get("dim", defaults.dim), "grid.dim", integer=True),
        n=_number(section.get("n", defaults.n), "grid.n", integer=True),
        length=_number(section.get("length", defaults.length), "grid.length"),
    )
    try:
        spec.to_grid()
    except DomainError as e:
        raise ConfigError("grid", str(e)) from e
    return spec


def _parse_params(document: Dict[str, Any]) -> ModelParams:
    allowed = {PARAM_NAMES.get(name, name) for name in ModelParams.field_names()}
    section = _section(document, "params", allowed)
    values = {
        PARAM_ALIASES.get(key, key): _number(value, f"params.{key}")
        for key, value in section.items()
    }
    defaults = ModelParams()
    candidate = {name: values.get(name, getattr(defaults, name)) for name in ModelParams.field_names()}

    if candidate["r"] < R_EXISTENCE_THRESHOLD:
        raise ConfigError(
            "params.r",
            f"r = {candidate['r']} is below the existence threshold r >= {R_EXISTENCE_THRESHOLD}",
        )
    if candidate["gamma"] < GAMMA_MODEL_THRESHOLD:
        raise ConfigError(
            "params.gamma",
            f"gamma = {candidate['gamma']} is below the model threshold gamma >= {GAMMA_MODEL_THRESHOLD}",
        )
    try:
        return ModelParams(**candidate)
    except DomainError as e:
        # сообщение начинается с имени нарушенного поля
        name = str(e).split(":", 1)[0]
        raise ConfigError(f"params.{PARAM_NAMES.get(name, name)}", str(e)) from e


def _parse_step(document: Dict[str, Any]) -> StepConfig:
    section = _section(document, "step", {"dt", "picard_tol", "picard_max", "damping"})
    defaults = StepConfig()
    try:
        return StepConfig(
            dt=_number(section.get("dt", defaults.dt), "step.dt"),
            picard_tol=_number(section.get("picard_tol", defaults.picard_tol), "step.picard_tol"),
            picard_max=_number(section.get("picard_max", defaults.picard_max), "step.picard_max", integer=True),
            damping=_number(section.get("damping", defaults.damping), "step.damping"),
        )
    except DomainError as e:
        raise ConfigError("step", str(e)) from e


def _parse_forcing(document: Dict[str, Any]) -> ForcingSpec:
    section = _section(document, "forcing", {"amplitude", "kind"})
    kind = section.get("kind", ForcingKind.SHEAR.value)
    if kind not in {k.value for k in ForcingKind}:
        raise ConfigError("forcing.kind", f"unknown forcing kind {kind!r}")
    amplitude = _number(section.get("amplitude", 0.0), "forcing.amplitude")
    return ForcingSpec(amplitude=amplitude, kind=kind)


def _parse_initial(document: Dict[str, Any], grid: GridSpec) -> InitialSpec:
    allowed = [f.name for f in fields(InitialSpec)]
    section = _section(document, "initial", allowed)
    defaults = InitialSpec()
    spec = InitialSpec(
        rho_bar=_number(section.get("rho_bar", defaults.rho_bar), "initial.rho_bar"),
        eta_bar=_number(section.get("eta_bar", defaults.eta_bar), "initial.eta_bar"),
        floor=_number(section.get("floor", defaults.floor), "initial.floor"),
        amplitude=_number(section.get("amplitude", defaults.amplitude), "initial.amplitude"),
        max_wavenumber=_number(
            section.get("max_wavenumber", min(defaults.max_wavenumber, grid.n // 3)), "initial.max_wavenumber", integer=True
        ),
        decay=_number(section.get("decay", defaults.decay), "initial.decay"),
    )
    for name in ("rho_bar", "eta_bar", "floor"):
        if not getattr(spec, name) > 0:
            raise ConfigError(f"initial.{name}", "must be > 0")
    if spec.amplitude < 0:
        raise ConfigError("initial.amplitude", "must be >= 0")
    if not spec.decay > 1:
        raise ConfigError("initial.decay", "must be > 1")
    if not 1 <= spec.max_wavenumber <= grid.n // 3:
        raise ConfigError("initial.max_wavenumber", f"must lie in [1, {grid.n // 3}] for n = {grid.n}")
    return spec


def parse_document(document: Dict[str, Any]) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("$", "configuration must be a JSON object")
    for key in document:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(key, "unknown key")

    defaults = RunConfig()
    scenario = document.get("scenario", defaults.scenario)
    if scenario not in {s.value for s in Scenario}:
        raise ConfigError("scenario", f"unknown scenario {scenario!r}")
    end_time = _number(document.get("end_time", defaults.end_time), "end_time")
    if not end_time > 0:
        raise ConfigError("end_time", "must be > 0")
    cadence = _number(document.get("cadence", defaults.cadence), "cadence", integer=True)
    if cadence < 1:
        raise ConfigError("cadence", "must be >= 1")
    twin = document.get("twin", defaults.twin)
    if not isinstance(twin, bool):
        raise ConfigError("twin", f"expected true or false, got {twin!r}")
    output = document.get("output", defaults.output)
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a non-empty path")

    grid = _parse_grid(document)
    return RunConfig(
        scenario=scenario,
        seed=_number(document.get("seed", defaults.seed), "seed", integer=True),
        end_time=end_time,
        cadence=cadence,
        twin=twin,
        output=output,
        grid=grid,
        params=_parse_params(document),
        step=_parse_step(document),
        forcing=_parse_forcing(document),
        initial=_parse_initial(document, grid),
    )


def parse_config(text: str) -> RunConfig:
    """JSON-документ -> RunConfig со всеми значениями по умолчанию"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}") from e
    return parse_document(document)


def config_to_dict(run_config: RunConfig) -> Dict[str, Any]:
    """Нормализованный документ: все ключи, значения по умолчанию подставлены"""
    params = {PARAM_NAMES.get(name, name): getattr(run_config.params, name) for name in ModelParams.field_names()}
    step = asdict(run_config.step)
    step.pop("max_halvings", None)
    return {
        "scenario": run_config.scenario,
        "seed": run_config.seed,
        "end_time": run_config.end_time,
        "cadence": run_config.cadence,
        "twin": run_config.twin,
        "output": run_config.output,
        "grid": asdict(run_config.grid),
        "params": params,
        "step": step,
        "forcing": asdict(run_config.forcing),
        "initial": asdict(run_config.initial),
    }


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Применяет `--override a.b=value` к документу (значение — JSON или строка)"""
    result = json.loads(json.dumps(document))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError("--override", f"expected key=value, got {item!r}")
        parts = key.split(".")
        target = result
        for part in parts[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"{part} is not a section")
            target = node
        target[parts[-1]] = _parse_value(raw)
    return result


def load_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    output: Optional[str] = None,
) -> RunConfig:
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError("--config", f"cannot read {path}: {e}") from e
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("$", f"invalid JSON: {e}") from e
    document = apply_overrides(document, overrides)
    if seed is not None:
        document["seed"] = seed
    if output is not None:
        document["output"] = output
    return parse_document(document)
