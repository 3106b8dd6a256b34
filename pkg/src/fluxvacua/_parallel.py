from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers=1):
    """Map ``fn`` over ``items`` and return results in input order."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
