"""
异常与退出码测试
"""
import pytest

from dafkit.core.exceptions import (
    AppException,
    CheckpointException,
    ConceptNotFoundException,
    ConfigException,
    ParameterException,
    PartialCompletionException,
    SamplingDivergenceException,
    TrainingDivergenceException,
    app_exception_handler,
    describe,
    general_exception_handler,
)


@pytest.mark.parametrize(
    "exc,code",
    [
        (ParameterException("x"), 2),
        (ConfigException(), 2),
        (CheckpointException(), 2),
        (ConceptNotFoundException("class/9"), 2),
        (TrainingDivergenceException(5), 3),
        (SamplingDivergenceException(10), 3),
        (PartialCompletionException(1, 4), 4),
        (AppException(), 1),
    ],
)
def test_exit_codes(exc, code):
    assert exc.code == code
    assert app_exception_handler("test", exc) == code


def test_builtin_compatibility():
    assert isinstance(ParameterException("x"), ValueError)
    assert isinstance(ConceptNotFoundException("c"), KeyError)
    assert str(ConceptNotFoundException("class/1")) == "概念不存在: class/1"


def test_general_handler():
    assert general_exception_handler("test", RuntimeError("boom")) == 1


def test_describe():
    assert describe(TrainingDivergenceException(7)) == {
        "type": "TrainingDivergenceException",
        "message": "训练发散: step=7",
        "code": 3,
        "data": {"step": 7},
    }
    assert describe(RuntimeError("boom"))["code"] == 1
