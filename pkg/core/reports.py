"""
pf-regen Run Reports
Versioned JSON document emitted by every CLI command and solver route
"""

import json
import math
from typing import Any, Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.errors import PFError

SCHEMA_VERSION = 1


def json_safe(value: Any) -> Any:
    """numpy values to builtins; non-finite floats to the strings "inf", "-inf" and "nan" """
    if isinstance(value, dict):
        return {str(key): json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        if math.isnan(value):
            return "nan"
        return "inf" if value > 0 else "-inf"
    return value


class ErrorInfo(BaseModel):
    kind: str
    message: str
    details: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("details", mode="before")
    @classmethod
    def _encode_details(cls, value):
        return json_safe(value or {})


class RunReport(BaseModel):
    """One run of one command: echoed config, numbers, diagnostics and an optional error"""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    result: Dict[str, Any] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[ErrorInfo] = None

    @field_validator("config", "result", "diagnostics", mode="before")
    @classmethod
    def _encode(cls, value):
        return json_safe(value or {})

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict[str, Any]:
        data = self.model_dump(mode="json")
        if data["error"] is None:
            del data["error"]
        return data

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)


def error_report(command: str, config: Dict[str, Any], exc: PFError) -> RunReport:
    return RunReport(command=command, config=config, error=ErrorInfo(**exc.to_dict()))


def report_schema() -> Dict[str, Any]:
    return RunReport.model_json_schema()
