"""
Service base class for engines driven by the CLI.
"""
from typing import Any

from .log import get_logger
from .method import command_name, is_method


class Service:
    """
    Base class for computation engines.

    Subclass this and decorate methods with @method to expose them as
    commands.

    Example:
        class Engine(Service):
            @method
            def zeta_max(self, config: SweepConfig) -> dict:
                ...
    """

    # Override in subclass for custom metadata
    name: str = None  # Defaults to class name lowercase
    version: str = "0.0.0"

    def __init__(self):
        if self.name is None:
            self.name = self.__class__.__name__.lower()

        self.log = get_logger(f"sofi_fisher.{self.name}")

        # Discover @method decorated methods
        self._methods: dict[str, Any] = {}
        for attr_name in dir(self):
            if attr_name.startswith("_"):
                continue
            attr = getattr(self, attr_name)
            if is_method(attr):
                self._methods[attr_name] = attr

    def setup(self):
        """
        Called once before the first call.

        Override to build caches or check the environment.
        """
        pass

    def teardown(self):
        """
        Called when the engine is done.

        Override to release resources.
        """
        pass

    def _get_method(self, name: str):
        """Get a method by attribute name or CLI command."""
        if name in self._methods:
            return self._methods[name]
        for method in self._methods.values():
            if command_name(method) == name:
                return method
        raise AttributeError(f"Unknown method: {name}")
