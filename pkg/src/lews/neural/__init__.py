from .model import (EncoderConfig, Embedding, LandslideNet, ModelParams, checkpoint_bytes, encode,
                    load_checkpoint, predict, save_checkpoint)
from .optim import AdamWState, adamw_step

__all__ = ["EncoderConfig", "Embedding", "LandslideNet", "ModelParams", "encode", "predict",
           "load_checkpoint", "save_checkpoint", "checkpoint_bytes", "AdamWState", "adamw_step"]
