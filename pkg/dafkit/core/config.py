"""
应用配置模块

使用 pydantic-settings 管理环境变量和进程级配置；
实验超参数见 dafkit.models.config.ConfigDoc
"""
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# 项目根目录
BASE_DIR = Path(__file__).resolve().parent.parent.parent


class Settings(BaseSettings):
    """进程级配置类（环境变量前缀 DAFKIT_）"""

    model_config = SettingsConfigDict(
        env_prefix="DAFKIT_",
        env_file=BASE_DIR / ".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # 应用基础配置
    app_name: str = "dafkit"
    app_env: str = "development"
    debug: bool = False
    log_level: str = "INFO"

    # 并行度：--workers 未给出时的回退值
    workers: int = 1
    # torch 线程数，None 表示保持默认
    torch_threads: Optional[int] = None

    # 默认数据/输出目录
    data_dir: Path = BASE_DIR / "data"

    @field_validator("workers")
    @classmethod
    def check_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workers 必须 >= 1")
        return v

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        if isinstance(v, str):
            return v.strip().upper()
        return v

    @property
    def is_development(self) -> bool:
        """是否为开发环境"""
        return self.app_env == "development"


@lru_cache
def get_settings() -> Settings:
    """获取配置单例"""
    return Settings()


# 全局配置实例
settings = get_settings()
