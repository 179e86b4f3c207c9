import logging
from functools import wraps
from typing import Callable, Any, Type, Tuple, Optional

from utils.errors import CheckpointError, RerunError

logger = logging.getLogger(__name__)


def rerun_on_failure(
    max_reruns: int = 1,
    rerun_exceptions: Tuple[Type[Exception], ...] = (CheckpointError,),
    on_rerun: Optional[Callable[..., None]] = None,
):
    """
    Decorator that re-runs a deterministic sub-run when it fails with a recoverable error.

    Sub-runs are pure functions of their payload, so there is no backoff: the cleanup hook
    removes whatever partial artifact caused the failure and the call is repeated.

    Args:
        max_reruns: Maximum number of re-runs after the first attempt
        rerun_exceptions: Exceptions that trigger a re-run
        on_rerun: Called with the same arguments as the wrapped function before a re-run
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            last_exception = None

            for attempt in range(max_reruns + 1):  # +1 for the initial attempt
                try:
                    result = func(*args, **kwargs)
                    if attempt > 0:
                        logger.info(f"{func.__name__} succeeded after {attempt + 1} attempts")
                    return result

                except rerun_exceptions as e:
                    last_exception = e

                    if attempt >= max_reruns:
                        logger.error(
                            f"Re-run budget exhausted for {func.__name__}. "
                            f"Last exception: {str(e)}"
                        )
                        break

                    logger.warning(
                        f"{type(e).__name__} in {func.__name__} "
                        f"(attempt {attempt + 1}/{max_reruns + 1}): {str(e)}. Re-running..."
                    )
                    if on_rerun is not None:
                        on_rerun(*args, **kwargs)

            raise RerunError(
                f"{func.__name__} failed after {max_reruns + 1} attempts. "
                f"Last exception: {str(last_exception)}"
            ) from last_exception

        return wrapper
    return decorator
