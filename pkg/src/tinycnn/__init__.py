"""Compile a small CNN into a fixed-point FPGA accelerator description."""

__version__ = "0.1.0"
