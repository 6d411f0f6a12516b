try:
    # installed wheel layout: the extension lives inside the package
    from ._cil import (
        ConfigError,
        ExpandableBlock,
        ShapeError,
        StateError,
        avg_forgetting,
        avg_incremental_accuracy,
        cosine_scores,
        default_config,
        fuse_conv_bn,
        parse_cifar100,
        partition,
        run,
    )
except ImportError:
    # in-tree build: the extension sits on PYTHONPATH next to the build dir
    from _cil import (
        ConfigError,
        ExpandableBlock,
        ShapeError,
        StateError,
        avg_forgetting,
        avg_incremental_accuracy,
        cosine_scores,
        default_config,
        fuse_conv_bn,
        parse_cifar100,
        partition,
        run,
    )

__all__ = [
    "ConfigError",
    "ExpandableBlock",
    "ShapeError",
    "StateError",
    "avg_forgetting",
    "avg_incremental_accuracy",
    "cosine_scores",
    "default_config",
    "fuse_conv_bn",
    "parse_cifar100",
    "partition",
    "run",
]
