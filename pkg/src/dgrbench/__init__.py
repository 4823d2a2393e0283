__all__ = [
    "settings",
    "config",
    "errors",
    "dem",
    "surfgen",
    "sampler",
    "sample_loader",
    "blossom",
    "matcher",
    "tracer",
    "reweight",
    "nnrw",
    "harness",
]
