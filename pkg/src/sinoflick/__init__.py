"""Zero-shot low-dose CT denoising via conjugate-ray sinogram flicking.

Submodules are imported lazily so the CLI can configure thread pools
before any numerical library loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "core",
    "phantom",
    "projector",
    "noisesim",
    "flick",
    "smallnet",
    "pipeline",
    "metrics",
    "configschema",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
