"""contragp: contraction-based controller synthesis for discrete-time
nonlinear systems via derivative-data Gaussian processes and LMI families."""

__version__ = "0.1.0"

_SUBMODULES = (
    "artifacts", "cli", "config", "deriv_gp", "drift_gp", "errors",
    "kernels", "linalg", "lmi", "stochastic", "synthesis", "systems",
    "verify_sim", "viz",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    # lazy submodule loading keeps `import contragp` light so the CLI can
    # pin threading env vars before numpy comes in
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module 'contragp' has no attribute '{name}'")
