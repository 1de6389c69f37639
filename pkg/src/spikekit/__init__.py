"""spikekit: a desk-scale inference kit for hybrid linear-attention models.

The package covers the full path from attention kernels to a runnable toy
model: softmax / sliding-window / gated-linear attention, hybrid block
layouts, a mixture-of-experts layer with upcycling, an integer spike codec
with an integrate-and-fire reference, symmetric INT8 weight quantization,
firing and energy analysis, checkpoint serialization, and a CLI that ties
them together.
"""

__version__ = "0.1.0"
