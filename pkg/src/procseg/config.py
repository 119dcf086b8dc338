"""Run configuration. Defaults are the full-scale values; desk-scale runs
override L, D, H, the anchor set, the learning rate and the epoch count."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .anchors import ConfigurationError, build_anchor_lengths


@dataclass(frozen=True)
class RunConfig:
    L: int = 500
    D: int = 512
    H: int = 512
    anchor_min_len: int = 3
    anchor_interval: int = 8
    anchor_count: int = 16
    h: int = 8
    w: int = 4
    U: int = 100
    learning_rate: float = 4e-5
    beta1: float = 0.8
    beta2: float = 0.999
    epsilon: float = 1e-8
    alpha_r: float = 1.0
    alpha_s: float = 1.0
    S_max: int = 16
    beam_size: int = 1
    nms_iou: float = 0.5
    n_uniform: int = 7
    n_eval_proposals: int = 10
    tp_iou: float = 0.5
    pos_iou: float = 0.8
    neg_iou: float = 0.2
    epochs: int = 10
    seed: int = 0
    drop_proposal_vec: bool = False
    drop_location_emb: bool = False
    drop_segment_content: bool = False

    def __post_init__(self):
        if min(self.L, self.D, self.H, self.h, self.w, self.U, self.S_max, self.beam_size) < 1:
            raise ConfigurationError("sizes must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        self.anchor_lengths  # validates odd lengths

    @property
    def anchor_lengths(self):
        return build_anchor_lengths(self.anchor_min_len, self.anchor_interval, self.anchor_count)

    @property
    def ablate(self):
        flags = (("proposal_vec", self.drop_proposal_vec),
                 ("location_emb", self.drop_location_emb),
                 ("segment_content", self.drop_segment_content))
        return tuple(name for name, on in flags if on)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_dict(data.get("run", data))
