"""Kernel backend selection.

The compiled extension is used when importable; set ``CHROMCC_PURE_PYTHON=1``
to force the NumPy fallback. ``CHROMCC_THREADS`` caps OpenMP workers.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("CHROMCC_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass


def num_threads() -> int:
    raw = os.environ.get("CHROMCC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def get_backend(name=None):
    """Return a kernel module by name ('cython' or 'python'); default is active."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def bin_pixels(rgb, valid, median):
    return _impl.bin_pixels(rgb, valid, median, num_threads())


def l1_norms(rgb):
    return _impl.l1_norms(rgb, num_threads())


def score_cells(cell_c, cell_y, counts, gmap_t, table):
    return _impl.score_cells(cell_c, cell_y, counts, gmap_t, table, num_threads())


def cell_scores(cell_c, cell_y, gmap_t, table):
    return _impl.cell_scores(cell_c, cell_y, gmap_t, table, num_threads())


def scatter_gradient(cell_c, cell_y, counts, gmap_t, coef, grad):
    _impl.scatter_gradient(cell_c, cell_y, counts, gmap_t, coef, grad)


def crc64(data) -> int:
    return int(_impl.crc64(data))
