from .qnet import (CacheReuseError, ConfigError, GraphBatch, QNet, QNetConfig, init_params,
                   load_checkpoint, save_checkpoint, zero_params)

__all__ = ["CacheReuseError", "ConfigError", "GraphBatch", "QNet", "QNetConfig", "init_params",
           "load_checkpoint", "save_checkpoint", "zero_params"]
