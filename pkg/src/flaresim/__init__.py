"""flaresim: analytical models and discrete-event simulation of flexible
in-network allreduce on a clustered programmable switch."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    AllreduceConfig,
    ElementType,
    ModelOutputs,
    ModelParams,
    ReductionPacket,
    ReductionTree,
    Strategy,
    SwitchConfig,
    build_reduction_tree,
    packetize_dense,
    staggered_order,
)
