from pydantic import BaseModel, ConfigDict, Field

from .network import Profile


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(200, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(5e-4, ge=0.0)
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5
    seed: int = Field(7, ge=0, lt=2**64)
    profile: Profile = Profile.FULL
