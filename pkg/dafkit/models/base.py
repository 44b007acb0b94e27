"""
Pydantic 模型基类模块

定义通用配置
"""
from pydantic import BaseModel, ConfigDict


class DafkitModel(BaseModel):
    """
    Schema 基类配置

    所有配置与报告 Schema 都应继承此类
    """
    model_config = ConfigDict(
        populate_by_name=True,
        str_strip_whitespace=True,
        validate_assignment=True,
    )


class StrictSection(DafkitModel):
    """配置文件分节基类：拒绝未知键"""
    model_config = ConfigDict(
        populate_by_name=True,
        str_strip_whitespace=True,
        extra="forbid",
    )
