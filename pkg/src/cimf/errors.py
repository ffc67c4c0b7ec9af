"""Exception hierarchy shared across the framework."""


class CimfError(Exception):
    """Base class for framework errors."""


class NotFound(CimfError):
    pass


class Duplicate(CimfError):
    pass


class IntegrityError(CimfError):
    """Recomputed content digest does not match the recorded one."""


class ValidationError(CimfError):
    """Invalid user input; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class TemplateError(CimfError):
    pass


class CycleError(TemplateError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class ModuleSpecError(CimfError):
    pass


class RasterError(CimfError):
    pass


class MisalignedError(RasterError):
    pass
