"""Schemas for synthetic news records and the dataset manifest."""
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.config_schemas import GenSpec


class NewsRecord(BaseModel):
    """One multimodal sample: token ids, a grayscale image grid and its labels."""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    id: str = Field(..., min_length=1, description="Unique record id, e.g. 'train-00042'")
    text: List[int] = Field(..., description="Token ids (pad id 0 is never stored)")
    image: np.ndarray = Field(..., description="Grid [H, W] of float32 values in [0, 1]")
    label: int = Field(..., ge=0, le=1, description="Veracity label y, 1 = fake")
    consistency: Optional[int] = Field(
        None, ge=0, le=1, description="Text-image consistency bit c, 1 = agree"
    )

    @field_validator("text")
    @classmethod
    def _non_negative_ids(cls, value: List[int]) -> List[int]:
        if any(token < 0 for token in value):
            raise ValueError("token ids must be non-negative")
        return value

    @field_validator("image", mode="before")
    @classmethod
    def _as_grid(cls, value) -> np.ndarray:
        grid = np.asarray(value, dtype=np.float32)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError(f"image must be a non-empty 2-D grid, got shape {grid.shape}")
        if not np.all(np.isfinite(grid)) or grid.min() < 0.0 or grid.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        return grid

    @property
    def consistency_target(self) -> int:
        """Consistency bit, or ``1 - label`` when the record carries none."""
        return self.consistency if self.consistency is not None else 1 - self.label

    def to_json_dict(self) -> Dict:
        height, width = self.image.shape
        row = {
            "id": self.id,
            "text": list(self.text),
            "image": {"height": height, "width": width, "values": self.image.reshape(-1).tolist()},
            "label": self.label,
        }
        if self.consistency is not None:
            row["consistency"] = self.consistency
        return row


class SplitInfo(BaseModel):
    file: str
    records: int
    fake: int
    inconsistent: int
    sha256: str = Field(..., description="Digest of the written file")


class DataManifest(BaseModel):
    """Written next to the splits by ``gen-data``."""

    spec: GenSpec
    seed: int
    splits: Dict[str, SplitInfo]
