# wiplab package
__version__ = "0.3.0"

__all__ = [
    "maps",
    "observables",
    "transfer",
    "paths",
    "distances",
    "fastslow",
    "rates",
    "rng",
    "errors",
    "schemas",
    "config",
    "validation",
    "runner",
    "cli",
    "db",
    "models",
    "main",
]
