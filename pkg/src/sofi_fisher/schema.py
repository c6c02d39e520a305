"""
Schema generation from endpoint signatures and docstrings.
"""
import inspect
from typing import Any, Callable, get_type_hints

from pydantic import TypeAdapter
from pydantic.errors import PydanticSchemaGenerationError

from .method import command_name, is_method


def python_type_to_schema(py_type: Any) -> dict:
    """JSON schema of a type hint; pydantic models expand to their fields."""
    if py_type is None:
        return {"type": "null"}
    try:
        return TypeAdapter(py_type).json_schema()
    except (PydanticSchemaGenerationError, TypeError):
        return {"type": "object"}


def parse_docstring(docstring: str | None) -> dict:
    """
    Split a Google-style docstring into its description and argument texts.

    Returns:
        {"description": "...", "args": {"name": "text", ...}}
    """
    if not docstring:
        return {"description": "", "args": {}}

    description, args = [], {}
    current = None
    section = "description"
    for line in inspect.cleandoc(docstring).splitlines():
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered in ("args:", "arguments:", "parameters:"):
            section, current = "args", None
            continue
        if lowered in ("returns:", "return:", "raises:", "yields:", "examples:", "example:"):
            section, current = "other", None
            continue

        if section == "description":
            if stripped:
                description.append(stripped)
        elif section == "args":
            if ":" in stripped and not line.startswith(" " * 8):
                name, text = stripped.split(":", 1)
                current = name.split("(")[0].strip()
                args[current] = text.strip()
            elif current and stripped:
                args[current] += " " + stripped

    return {"description": " ".join(description), "args": args}


def method_to_schema(method: Callable) -> dict:
    """
    Schema of one endpoint.

    Returns:
        {"name", "command", "description", "input", "output"}
    """
    fn = getattr(method, "_sofi_original", method)
    try:
        hints = get_type_hints(fn)
    except Exception:
        hints = {}
    sig = inspect.signature(fn)
    doc = parse_docstring(fn.__doc__)

    properties, required = {}, []
    for param_name, param in sig.parameters.items():
        if param_name == "self":
            continue
        prop = python_type_to_schema(hints[param_name]) if param_name in hints else {"type": "object"}
        if param_name in doc["args"]:
            prop["description"] = doc["args"][param_name]
        if param.default is inspect.Parameter.empty:
            required.append(param_name)
        properties[param_name] = prop

    input_schema = {"type": "object", "properties": properties}
    if required:
        input_schema["required"] = required

    return {
        "name": fn.__name__,
        "command": command_name(method),
        "description": doc["description"],
        "input": input_schema,
        "output": python_type_to_schema(hints["return"]) if "return" in hints else {"type": "object"},
    }


def service_to_schema(service_class: type) -> dict:
    """
    Schema of every endpoint of a Service class.

    Returns:
        {"name", "version", "description", "methods": {name: schema}}
    """
    methods = {}
    for attr_name in dir(service_class):
        if attr_name.startswith("_"):
            continue
        attr = getattr(service_class, attr_name)
        if is_method(attr):
            methods[attr_name] = method_to_schema(attr)

    return {
        "name": getattr(service_class, "name", None) or service_class.__name__.lower(),
        "version": getattr(service_class, "version", "0.0.0"),
        "description": (service_class.__doc__ or "").strip(),
        "methods": methods,
    }
