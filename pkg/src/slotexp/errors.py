"""Exception types shared across the package."""


class SlotexpError(Exception):
    """Base class for all errors raised by slotexp."""


class ConfigError(SlotexpError, ValueError):
    """Invalid configuration, plan, or module declaration."""


class ClockError(SlotexpError, ValueError):
    """Attempt to move virtual time backwards or build an invalid clock context."""


class RoutingError(SlotexpError, ValueError):
    """Malformed container or publish from an unknown source."""


class InvariantError(SlotexpError, RuntimeError):
    """A runtime safety invariant was breached (e.g. an experimental output reached delivery)."""
