from typing import Any, Callable, Dict, Generic, List, TypeVar

F = TypeVar("F", bound=Callable[..., Any])


class MethodRegistry(Generic[F]):
    """
    Реестр методов обучения. Реализации регистрируются через декоратор
    @registry.register(name="...", description="...") и вызываются по имени.

    Example:
        @update_rules.register(DynMethod.SGD, description="plain SGD")
        def sgd_rule(state, x, y, z, config): ...
    """

    def __init__(self, kind: str):
        self.kind = kind
        self._methods: Dict[str, Dict[str, Any]] = {}

    def register(self, name: str, description: str = "") -> Callable[[F], F]:
        key = str(getattr(name, "value", name))

        def decorator(func: F) -> F:
            self._methods[key] = {
                "name": key,
                "description": description or (func.__doc__ or "").strip().split("\n")[0],
                "function": func,
            }
            return func

        return decorator

    def get(self, name: str) -> F:
        key = str(getattr(name, "value", name))
        if key not in self._methods:
            raise ValueError(
                f"{self.kind} '{key}' not found. Available: {list(self._methods.keys())}"
            )
        return self._methods[key]["function"]

    def __contains__(self, name: object) -> bool:
        return str(getattr(name, "value", name)) in self._methods

    def list_methods(self) -> List[Dict[str, str]]:
        return [
            {"name": m["name"], "description": m["description"]} for m in self._methods.values()
        ]
