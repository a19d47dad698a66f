import os
from dataclasses import dataclass, field
from dotenv import load_dotenv

load_dotenv()


@dataclass
class PathsConfig:
    output_dir: str = os.getenv("VISCOLAB_OUTPUT_DIR", "runs")


@dataclass
class LoggingConfig:
    level: str = os.getenv("VISCOLAB_LOG_LEVEL", "INFO")


@dataclass
class SolverConfig:
    cg_maxiter: int = int(os.getenv("VISCOLAB_CG_MAXITER", "500"))
    cg_rtol: float = float(os.getenv("VISCOLAB_CG_RTOL", "1e-13"))
    max_halvings: int = int(os.getenv("VISCOLAB_MAX_HALVINGS", "10"))
    # доля шага от ограничений CFL и барьера
    cfl_safety: float = 0.5
    barrier_safety: float = 0.5


@dataclass
class TwinRunConfig:
    fine_factor: int = int(os.getenv("VISCOLAB_FINE_FACTOR", "2"))
    dt_divisor: int = int(os.getenv("VISCOLAB_TWIN_DT_DIVISOR", "4"))


@dataclass
class ChartConfig:
    dpi: int = int(os.getenv("VISCOLAB_CHART_DPI", "150"))


@dataclass
class Config:
    paths: PathsConfig = field(default_factory=PathsConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    twin: TwinRunConfig = field(default_factory=TwinRunConfig)
    chart: ChartConfig = field(default_factory=ChartConfig)


config = Config()
