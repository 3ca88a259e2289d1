import collections
import contextlib
import logging
import threading
import uuid
from typing import Any, List

from seqdistill import version
from seqdistill.exceptions import StageError

logger = logging.getLogger(__name__)

_tracker = threading.local()


Context = collections.namedtuple("Context", ["id", "metadata"])


class context(contextlib.ContextDecorator):
    """
    A context manager that groups the artifacts of one run under the same
    context and attaches metadata to them.

    Once any code has entered [seqdistill.runtime.context][], all subsequent
    entrances are grouped under the same context until the top-most parent
    exits. Calling [seqdistill.runtime.context][] as a function without entering
    it adds metadata to the active context, or is ignored when no context is active.

    Attributes:
        **metadata: Metadata stamped into every artifact written in the context.

    Example:
        Stamp the seed and configuration hash into every artifact:

            with seqdistill.context(seed=0, config_hash="3f2a..."):
                # Every artifact written here starts with the same header
                ...
    """

    def __init__(self, **metadata: Any):
        self.metadata = metadata
        self._owner = False

        if hasattr(_tracker, "value"):
            _tracker.value.metadata.update(**self.metadata)

    def __enter__(self):
        if not hasattr(_tracker, "value"):
            self._owner = True
            _tracker.value = Context(id=uuid.uuid4(), metadata=dict(self.metadata))

        return _tracker.value

    def __exit__(self, *exc):
        if self._owner:
            delattr(_tracker, "value")
            self._owner = False


def current():
    """The active [seqdistill.runtime.Context][], or `None` outside a context"""
    return getattr(_tracker, "value", None)


def stamp() -> List[str]:
    """Header lines for an artifact.

    Every line is `key=value`, starting with the package version, followed by
    the active context's metadata in sorted key order. The context id is not
    included so that reruns produce identical files.

    Returns:
        The header lines, without comment markers.
    """
    lines = [f"seqdistill={version.__version__}"]
    ctx = current()
    if ctx is not None:
        lines.extend(f"{key}={ctx.metadata[key]}" for key in sorted(ctx.metadata))

    return lines


class stage(contextlib.ContextDecorator):
    """Tag any exception escaping a pipeline stage with the stage name.

    The original exception is chained as the `__cause__` of the raised
    [seqdistill.exceptions.StageError][]. A `StageError` raised by a nested
    stage passes through untouched.
    """

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("Stage %s started", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            logger.info("Stage %s finished", self.name)
            return False

        if isinstance(exc, StageError) or not isinstance(exc, Exception):
            return False

        raise StageError(self.name, exc) from exc
