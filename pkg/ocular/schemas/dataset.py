from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List
import enum


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str = Field(..., min_length=1, pattern=r"^\S+$")
    image_path: str
    annotation_path: str
    split: Split


class DatasetManifest(BaseModel):
    entries: List[ManifestEntry]
    seed: int = 0

    @model_validator(mode="after")
    def check_unique_ids(self):
        seen = set()
        for entry in self.entries:
            if entry.image_id in seen:
                raise ValueError(f"duplicate image_id {entry.image_id}")
            seen.add(entry.image_id)
        return self

    def split_entries(self, split: Split) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def image_ids(self, split: Split) -> List[str]:
        return [e.image_id for e in self.split_entries(split)]

    def counts(self) -> dict:
        return {s.value: len(self.split_entries(s)) for s in Split}
