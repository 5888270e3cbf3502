"""
应用配置模块
运行时设置（日志、性能阈值等），通过环境变量 RTSBS_* 或 .env 文件覆盖。
流水线参数（阈值、ViBe 参数、调度）见 app.models.schemas.PipelineConfig。
"""
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

BASE_DIR = Path(__file__).resolve().parent.parent
ENV_FILE_PATHS = (
    str(BASE_DIR / ".env"),         # backend/.env
    str(BASE_DIR.parent / ".env"),  # project-root/.env
)
VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class Settings(BaseSettings):
    """应用配置类"""

    model_config = SettingsConfigDict(
        env_prefix="RTSBS_",
        env_file=ENV_FILE_PATHS,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    app_name: str = "rtsbs"
    app_version: str = "1.0.0"

    # 日志配置
    log_dir: str = str(BASE_DIR / "logs")
    log_level: str = "INFO"
    log_to_file: bool = False

    # 实时性回归阈值（帧/秒），单线程 320x240、X=5
    fps_threshold: float = Field(default=25.0, gt=0)

    # 默认流水线配置文件（key=value 文本），CLI --config 优先
    default_config_file: Optional[str] = None

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, value):
        """Normalize log level names and reject unknown ones."""
        if value is None:
            return "INFO"
        level = str(value).strip().upper()
        if not level:
            return "INFO"
        if level not in VALID_LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL 仅支持 {sorted(VALID_LOG_LEVELS)}")
        return level


settings = Settings()
