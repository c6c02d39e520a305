"""
@method decorator for marking engine endpoints.
"""
from functools import wraps
from typing import Any, Callable


def method(func: Callable = None, *, command: str | None = None) -> Callable:
    """
    Mark a method as an engine endpoint.

    Can be used with or without parentheses:
        @method
        def rgl(self, config): ...

        @method(command="tau-opt")
        def tau_opt(self, config): ...

    ``command`` is the CLI subcommand; it defaults to the function name
    with underscores replaced by hyphens.
    """
    def decorator(fn: Callable) -> Callable:
        @wraps(fn)
        def wrapper(*args, **kwargs):
            return fn(*args, **kwargs)

        wrapper._sofi_endpoint = True
        wrapper._sofi_command = command or fn.__name__.replace("_", "-")
        # Original function for signature and schema extraction
        wrapper._sofi_original = fn
        return wrapper

    if func is not None:
        return decorator(func)
    return decorator


def is_method(obj: Any) -> bool:
    """Check if an object is a @method decorated function."""
    return callable(obj) and getattr(obj, "_sofi_endpoint", False)


def command_name(obj: Any) -> str:
    """CLI subcommand of an endpoint."""
    return getattr(obj, "_sofi_command", getattr(obj, "__name__", ""))
