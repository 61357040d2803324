"""Run configuration.

Configs are INI-style text (``key = value`` under ``[section]`` headers).  Top-level
model fields live under ``[model]``; every other section maps onto the nested
model of the same name.  Unknown keys are rejected so typos surface early.
"""

import configparser
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EncoderConfig(_Section):
    base_channels: int = Field(128, gt=0)
    num_residual_blocks: int = Field(8, ge=0)
    kernel_size: int = Field(3, gt=0)
    padding_mode: Literal["zeros", "circular"] = "zeros"

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v


class GaborParams(_Section):
    omega0: float = Field(10.0, gt=0, allow_inf_nan=False)
    upsilon0: float = Field(10.0, gt=0, allow_inf_nan=False)
    trainable: bool = False


class OptimizerConfig(_Section):
    name: Literal["AdamW"] = "AdamW"
    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-4, ge=0)


class SchedulerConfig(_Section):
    t_max: int = Field(80000, gt=0)
    eta_min: float = Field(0.0, ge=0)


class TrainConfig(_Section):
    steps: int = Field(80000, ge=0)
    batch_size: int = Field(4, gt=0)
    patch_hr: int = Field(64, gt=0)
    patches_per_epoch: int = Field(256, gt=0)
    eval_every: int = Field(1000, gt=0)
    checkpoint_every: int = Field(0, ge=0)
    query_chunk: int = Field(16384, gt=0)
    dtype: Literal["float32", "float64"] = "float32"


class DataConfig(_Section):
    layout: Literal["band_pngs", "multiband_tiff", "raw", "synthetic"] = "synthetic"
    split_spec: Optional[str] = None
    n_train: int = Field(20, ge=0)
    n_test: int = Field(11, ge=0)
    split_seed: int = 0
    blur_sigma: Optional[float] = Field(None, gt=0)
    srf_file: Optional[str] = None
    harvard_crop: bool = False
    synthetic_count: int = Field(8, gt=0)
    synthetic_size: int = Field(64, gt=0)


class FusionConfig(_Section):
    scale: float = Field(4, gt=0)
    bands: int = Field(31, gt=0)
    msi_bands: int = Field(3, gt=0)
    iff_hidden: int = Field(32, gt=0)
    decoder_channels: int = Field(31, gt=0)
    pe_levels: int = Field(10, gt=0)
    loss: Literal["L1", "L2"] = "L1"
    seed: int = 0
    domain: Literal["both", "spatial_only", "frequency_only"] = "both"
    activation: Literal["gabor", "relu", "gelu", "leaky_relu"] = "gabor"
    upsample: Literal["inr", "bilinear", "bicubic", "pixel_shuffle"] = "inr"
    encoder: EncoderConfig = EncoderConfig()
    gabor: GaborParams = GaborParams()
    optimizer: OptimizerConfig = OptimizerConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.data.blur_sigma is None:
            object.__setattr__(self, "data", self.data.model_copy(update={"blur_sigma": self.scale / 2}))
        if self.upsample == "pixel_shuffle" and float(self.scale) != int(self.scale):
            raise ValueError("pixel_shuffle upsampling needs an integer scale")
        return self

    @property
    def int_scale(self):
        if float(self.scale) != int(self.scale):
            raise ConfigError(f"scale {self.scale} is not an integer")
        return int(self.scale)

    def updated(self, **changes):
        """Copy with top-level or dotted (``section.key``) overrides, revalidated."""
        data = self.model_dump()
        if "scale" in changes and "data.blur_sigma" not in changes and self.data.blur_sigma == self.scale / 2:
            # the default blur follows the scale
            data["data"]["blur_sigma"] = None
        for key, value in changes.items():
            if "." in key:
                section, sub = key.split(".", 1)
                data[section][sub] = value
            else:
                data[key] = value
        return make_config(data)

    def to_json(self):
        return json.dumps(self.model_dump(), indent=2, sort_keys=True)


def make_config(values=None, /, **overrides):
    values = dict(values or {})
    values.update(overrides)
    try:
        return FusionConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


_NESTED = ("encoder", "gabor", "optimizer", "scheduler", "train", "data")


def _coerce(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    return text.strip()


def parse_config_text(text):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    data = {}
    for section in parser.sections():
        values = {k: _coerce(v) for k, v in parser.items(section)}
        if section == "model":
            data.update(values)
        elif section in _NESTED:
            data[section] = values
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return make_config(data)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text)


def dump_config_text(cfg: FusionConfig):
    data = cfg.model_dump()
    lines = ["[model]"]
    for k, v in data.items():
        if k not in _NESTED:
            lines.append(f"{k} = {v}")
    for section in _NESTED:
        lines.append("")
        lines.append(f"[{section}]")
        for k, v in data[section].items():
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
