"""Mixed-resolution coding chain: toy codec, container, adapters, frame I/O."""
from .adapters import CodecError, ExternalAdapter, ToyAdapter, external_adapter_run, render_command
from .container import ContainerError, GopLayout, MixedStream
from .pipeline import bicubic_baseline, decode_mixed, encode_mixed, restore_stream, temporal_window
from .toycodec import toy_decode, toy_encode, toy_quantize

__all__ = [
    "CodecError", "ContainerError", "ExternalAdapter", "GopLayout", "MixedStream", "ToyAdapter",
    "bicubic_baseline", "decode_mixed", "encode_mixed", "external_adapter_run", "render_command",
    "restore_stream", "temporal_window", "toy_decode", "toy_encode", "toy_quantize",
]
