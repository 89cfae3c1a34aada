"""Conv2d data-movement kernels: compiled Cython core with a pure-numpy
fallback, selected at import. `use_backend` forces one (tests/benchmarks)."""

from . import conv_numpy

try:
    from . import _convkern

    HAVE_COMPILED = True
except ImportError:
    _convkern = None
    HAVE_COMPILED = False

_active = _convkern if HAVE_COMPILED else conv_numpy


def use_backend(name):
    """Select 'cython' or 'numpy'. Returns the previously active name."""
    global _active
    prev = backend_name()
    if name == "cython":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels not built")
        _active = _convkern
    elif name == "numpy":
        _active = conv_numpy
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def backend_name():
    return "cython" if _active is _convkern and HAVE_COMPILED else "numpy"


def im2col(x, ksize, stride, pad):
    return _active.im2col(x, ksize, stride, pad)


def col2im(cols, x_shape, ksize, stride, pad):
    return _active.col2im(cols, x_shape, ksize, stride, pad)


def out_size(h, w, ksize, stride, pad):
    return conv_numpy.out_size(h, w, ksize, stride, pad)
