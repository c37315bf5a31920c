"""
Error types shared by every module.

Each error carries a short machine code and a human readable detail, the
same split the CLI prints as `{"error": code, "detail": detail}` on stderr.
"""


class ErdmdError(Exception):
    code = "erdmd_error"

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error": self.code, "detail": self.detail}


class DimensionError(ErdmdError, ValueError):
    code = "dimension"


class LagUnderflowError(ErdmdError, ValueError):
    code = "lag_underflow"


class UnderdeterminedError(ErdmdError):
    code = "underdetermined"


class DataError(ErdmdError, ValueError):
    code = "data"


class SizeGuardError(ErdmdError):
    code = "size_guard"


class DegeneratePencilError(ErdmdError):
    code = "degenerate_pencil"


class SampleError(ErdmdError, ValueError):
    code = "sample"


class ArgumentError(ErdmdError, ValueError):
    code = "argument"


class DivergenceError(ErdmdError):
    code = "divergence"

    def __init__(self, detail: str, step: int):
        super().__init__(detail)
        self.step = step

    def to_dict(self) -> dict:
        return {"error": self.code, "detail": self.detail, "step": self.step}


class RankError(ErdmdError):
    code = "rank"


class ConfigError(ErdmdError, ValueError):
    code = "config"


class ArtifactError(ErdmdError):
    code = "artifact"
