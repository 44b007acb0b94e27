"""
异常处理模块

定义业务异常和命令行全局异常处理器。
异常的 code 即命令行退出码：0 成功，2 参数/输入错误，3 数值失败，4 部分完成。
"""
from typing import Any, Optional

from loguru import logger


class AppException(Exception):
    """应用基础异常"""

    def __init__(
        self,
        message: str = "内部错误",
        code: int = 1,
        data: Optional[dict] = None,
    ):
        self.message = message
        self.code = code
        self.data = data
        super().__init__(self.message)


class ParameterException(AppException, ValueError):
    """参数错误异常"""

    def __init__(self, message: str = "参数错误", data: Optional[dict] = None):
        super().__init__(message=message, code=2, data=data)


class ConceptNotFoundException(AppException, KeyError):
    """概念嵌入不存在"""

    def __init__(self, concept_id: str):
        super().__init__(message=f"概念不存在: {concept_id}", code=2, data={"concept_id": concept_id})
        self.concept_id = concept_id

    def __str__(self) -> str:
        return self.message


class ConfigException(AppException):
    """配置文件不可读或不合法"""

    def __init__(self, message: str = "配置错误", data: Optional[dict] = None):
        super().__init__(message=message, code=2, data=data)


class CheckpointException(AppException):
    """检查点文件损坏或不完整"""

    def __init__(self, message: str = "检查点损坏", data: Optional[dict] = None):
        super().__init__(message=message, code=2, data=data)


class TrainingDivergenceException(AppException):
    """训练发散（损失或参数出现 NaN/Inf）"""

    def __init__(self, step: int, message: Optional[str] = None):
        super().__init__(
            message=message or f"训练发散: step={step}",
            code=3,
            data={"step": step},
        )
        self.step = step


class SamplingDivergenceException(AppException):
    """采样过程中出现非有限值"""

    def __init__(self, timestep: int, message: Optional[str] = None):
        super().__init__(
            message=message or f"采样发散: timestep={timestep}",
            code=3,
            data={"timestep": timestep},
        )
        self.timestep = timestep


class PartialCompletionException(AppException):
    """部分单元失败"""

    def __init__(self, failed: int, total: int):
        super().__init__(
            message=f"{failed}/{total} 个单元失败",
            code=4,
            data={"failed": failed, "total": total},
        )
        self.failed = failed
        self.total = total


def app_exception_handler(command: str, exc: AppException) -> int:
    """应用异常处理器，返回退出码"""
    logger.warning("AppException: {} | Command: {}", exc.message, command)
    return exc.code


def general_exception_handler(command: str, exc: Exception) -> int:
    """通用异常处理器"""
    logger.exception("Unhandled Exception: {} | Command: {}", exc, command)
    return 1


def describe(exc: BaseException) -> dict[str, Any]:
    """异常的可序列化描述，用于记录失败的存储记录与实验单元"""
    if isinstance(exc, AppException):
        return {"type": type(exc).__name__, "message": exc.message, "code": exc.code, "data": exc.data}
    return {"type": type(exc).__name__, "message": str(exc), "code": 1, "data": None}
