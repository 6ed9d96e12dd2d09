import os

ENV_THREADS = "TEMSIG_NUM_THREADS"


def default_workers() -> int:
    """Worker threads for parallel maps; ``TEMSIG_NUM_THREADS`` caps it (default 1)."""
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        return 1
