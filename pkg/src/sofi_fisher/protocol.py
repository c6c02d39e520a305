"""
Call protocol between the CLI and an engine.

Parameters arrive as plain dicts (parsed flags merged over a config file),
are validated against a pydantic model derived from the endpoint
signature, and every outcome comes back as a response dict:

    {"ok": True, "result": ..., "done": True}
    {"ok": False, "error": {"type", "message", "traceback", "exit_code"}, "done": True}
"""
import inspect
import traceback
from typing import Any, Type, get_type_hints

from pydantic import BaseModel, ValidationError, create_model

from .errors import (
    CoverageError,
    DegenerateSummaryError,
    IllConditionedWeightsError,
    InvalidParameterError,
    QuadratureError,
    UnsupportedOrderError,
    UnsupportedSchemeError,
)
from .schema import service_to_schema
from .service import Service

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3

EXIT_CODES: dict[type, int] = {
    InvalidParameterError: EXIT_USAGE,
    UnsupportedSchemeError: EXIT_USAGE,
    AttributeError: EXIT_USAGE,
    CoverageError: EXIT_NUMERICAL,
    DegenerateSummaryError: EXIT_NUMERICAL,
    IllConditionedWeightsError: EXIT_NUMERICAL,
    QuadratureError: EXIT_NUMERICAL,
    UnsupportedOrderError: EXIT_NUMERICAL,
    ValueError: EXIT_USAGE,
}


def exit_code_for(exc: BaseException) -> int:
    """Exit status for an exception raised by an endpoint."""
    for exc_type, code in EXIT_CODES.items():
        if isinstance(exc, exc_type):
            return code
    return EXIT_NUMERICAL


def get_type_hints_safe(fn):
    """Get type hints, handling forward references gracefully."""
    try:
        return get_type_hints(fn)
    except Exception:
        return getattr(fn, "__annotations__", {})


def build_input_model(method_func) -> Type[BaseModel] | None:
    """
    Build a pydantic model for validating endpoint inputs.

    Returns None if the endpoint has no parameters (other than self).
    """
    fn = getattr(method_func, "_sofi_original", method_func)
    sig = inspect.signature(fn)
    hints = get_type_hints_safe(fn)

    fields = {}
    for param_name, param in sig.parameters.items():
        if param_name == "self":
            continue
        annotation = hints.get(param_name, Any)
        if param.default is inspect.Parameter.empty:
            fields[param_name] = (annotation, ...)
        else:
            fields[param_name] = (annotation, param.default)

    if not fields:
        return None
    return create_model(f"{fn.__name__}_Input", **fields)


def _describe(error: ValidationError) -> str:
    """First offending field and message of a validation error."""
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"] if part != "config") or "config"
    return f"{field}: {first['msg']}"


class Protocol:
    """
    Validates and dispatches calls to a service.
    """

    def __init__(self, service: Service):
        self.service = service
        self._input_models: dict[str, Type[BaseModel] | None] = {}

        # Pre-build input models for all methods
        for name, method in service._methods.items():
            self._input_models[name] = build_input_model(method)

    def _validate_params(self, method_name: str, params: dict) -> dict:
        """Validate and coerce input parameters; nested models stay models."""
        model = self._input_models.get(method_name)
        if model is None:
            return params
        try:
            return dict(model(**params))
        except ValidationError as e:
            raise InvalidParameterError(f"Invalid parameters: {_describe(e)}") from e

    def handle_call(self, method_name: str, params: dict) -> dict:
        """
        Handle a call synchronously.

        Returns a response dict with ok, result/error, and done fields.
        """
        try:
            method = self.service._get_method(method_name)
            fn = getattr(method, "_sofi_original", method)
            validated = self._validate_params(fn.__name__, params)
            result = method(**validated)
            return {"ok": True, "result": result, "done": True}

        except Exception as e:
            self.service.log.debug("call failed", {"method": method_name, "error": type(e).__name__})
            return {
                "ok": False,
                "error": {
                    "type": type(e).__name__,
                    "message": str(e),
                    "traceback": traceback.format_exc(),
                    "exit_code": exit_code_for(e),
                },
                "done": True,
            }

    def handle_schema(self) -> dict:
        """Return the service schema."""
        return service_to_schema(self.service.__class__)
