"""MD-RWKV-UNet segmentation toolkit."""
__version__ = "1.0.0"
