"""Small shared helpers."""

_blas_limiter = None


def limit_blas_threads(n=1):
    """Cap BLAS thread pools; the kernel matmuls are too small to shard.

    Keeps the limiter alive for the process lifetime.  No-op when
    threadpoolctl is unavailable.
    """
    global _blas_limiter
    try:
        import threadpoolctl
    except ImportError:
        return False
    _blas_limiter = threadpoolctl.threadpool_limits(limits=n, user_api="blas")
    return True
