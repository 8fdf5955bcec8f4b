from pathlib import Path
from typing import List, Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = "qfridge"
    app_env: str = "dev"
    app_origins: List[str] = ["http://localhost:3000"]

    # 默认输出目录（环境变量 QFRIDGE_OUT_DIR）
    out_dir: Path = Path("./out")
    log_level: str = "INFO"
    # 批量预设与见证通道族的并发线程数
    max_workers: int = 4

    # 初态可达的耦合矩阵元个数不超过该值时，混合动力学在该不变块上走刘维尔算符谱分解
    spectral_max_entries: int = 4096
    # 本征向量矩阵条件数超过该值视为刘维尔算符数值亏损，改用 ODE 路径
    defect_condition_limit: float = 1e12
    # ω′=0 时的衰减率：ohmic_limit 取 α·τ，zero 取 0，forbid 直接报错
    zero_frequency_policy: Literal["ohmic_limit", "zero", "forbid"] = "ohmic_limit"

    model_config = SettingsConfigDict(env_prefix="QFRIDGE_", env_file=".env", extra="ignore")


settings = Settings()
