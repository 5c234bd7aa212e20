import logging
import math
import multiprocessing

import requests

from .common import SnapshotError

logger = logging.getLogger(__name__)

HTTP_TIMEOUT = 10
HTTP_RETRIES = 2

def do_http(method, url, retries=HTTP_RETRIES, **kwargs):
    """Fetch a remote snapshot, retrying connection failures and 5xx answers.

    Whatever still fails surfaces as SnapshotError naming the url.
    """
    logger.debug("HTTP " + method + " " + url)
    try:
        r = requests.request(method, url, timeout=HTTP_TIMEOUT, **kwargs)
    except requests.RequestException as e:
        if retries > 0:
            return do_http(method, url, retries - 1, **kwargs)
        logger.error("Giving up on " + url + " due to no left retries.")
        raise SnapshotError("cannot fetch " + url + ": " + str(e))

    logger.debug("HTTP " + str(r.status_code) + " " + url + " " + (str(len(r.text)) + " bytes" if r.text else "-"))
    if r.status_code >= 500 and retries > 0:
        return do_http(method, url, retries - 1, **kwargs)
    if not 200 <= r.status_code < 300:
        raise SnapshotError("cannot fetch " + url + ": HTTP " + str(r.status_code))
    return r

def round_half_up(x):
    """Round a non-negative real amount to whole satoshi, halves going up."""
    return int(math.floor(x + 0.5))

def bisect(f, lo, hi, rtol=1e-9, atol=0.0, max_iter=200):
    """Find the boundary of a monotone predicate-like function.

    `f(lo)` and `f(hi)` must differ in sign (f(lo) >= 0 > f(hi) or the
    reverse). Returns the endpoint on the side of `lo` once the bracket is
    narrower than `atol + rtol*|hi|`.
    """
    flo = f(lo)
    fhi = f(hi)
    if flo == 0:
        return lo
    if (flo > 0) == (fhi > 0) and fhi != 0:
        raise ValueError("bisect: f does not change sign on [" + str(lo) + ", " + str(hi) + "]")

    for i in range(max_iter):
        if hi - lo <= atol + rtol * max(abs(hi), abs(lo)):
            break
        mid = lo + (hi - lo) / 2
        fmid = f(mid)
        if fmid == 0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    logger.debug("bisect stopped after " + str(i + 1) + " iterations at [" + repr(lo) + ", " + repr(hi) + "]")
    return lo

def parallel_map(func, items, jobs=1):
    """Map `func` over `items`, keeping input order.

    Uses a process pool when jobs > 1. `func` must be a module level
    function and items must pickle.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with multiprocessing.Pool(processes=min(jobs, len(items))) as pool:
        return pool.map(func, items)
