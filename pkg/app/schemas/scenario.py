from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings


class AttackKind(str, Enum):
    NONE = "none"
    UNOBSERVABLE_FULL = "unobservable-full"
    UNOBSERVABLE_PARTIAL = "unobservable-partial"
    FRAMING_FULL = "framing-full"
    FRAMING_PARTIAL = "framing-partial"
    UNOBSERVABLE_FULL_KNOWN = "unobservable-full-known"
    UNOBSERVABLE_PARTIAL_KNOWN = "unobservable-partial-known"
    FRAMING_FULL_KNOWN = "framing-full-known"
    FRAMING_PARTIAL_KNOWN = "framing-partial-known"

    @property
    def known(self) -> bool:
        """The adversary is handed the Jacobian instead of learning from data."""
        return self.value.endswith("-known")

    @property
    def base(self) -> str:
        return self.value[: -len("-known")] if self.known else self.value

    @property
    def framing(self) -> bool:
        return self.base.startswith("framing")

    @property
    def partial(self) -> bool:
        return self.base.endswith("partial")


class MeasurementModelKind(str, Enum):
    AC = "ac"
    DC = "dc"


class Scenario(BaseModel):
    """One Monte Carlo experiment: case, attack, sensor sets and protocol."""
    case: str
    attack: AttackKind = AttackKind.NONE
    adversary: List[str] = Field(default_factory=list)
    framed: List[str] = Field(default_factory=list)
    observed: List[str] = Field(default_factory=list)
    snr_db: float = settings.SNR_DB
    alpha: float = Field(settings.FALSE_ALARM, gt=0.0, lt=1.0)
    train_k: int = Field(settings.TRAIN_SAMPLES, ge=2)
    magnitudes: List[float] = Field(default_factory=lambda: [0.02, 0.04, 0.06, 0.08])
    runs: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)
    model: MeasurementModelKind = MeasurementModelKind.AC
    reference: Optional[int] = None
    train_once: bool = False
    eps1: Optional[float] = Field(None, gt=0.0)
    subspace_dim: Optional[int] = Field(None, ge=1)
    label: Optional[str] = None

    @field_validator("magnitudes")
    @classmethod
    def magnitudes_positive(cls, value: List[float]) -> List[float]:
        if any(m <= 0.0 for m in value):
            raise ValueError("attack magnitudes must be positive")
        if len(set(value)) != len(value):
            raise ValueError("attack magnitudes must be distinct")
        return value

    @model_validator(mode="after")
    def sets_match_attack(self) -> "Scenario":
        kind = self.attack
        if kind is AttackKind.NONE:
            return self
        if not self.adversary:
            raise ValueError(f"{kind.value} needs an adversary set")
        if not self.magnitudes:
            raise ValueError(f"{kind.value} needs at least one magnitude")
        if kind.framing:
            if not self.framed:
                raise ValueError(f"{kind.value} needs a framed set")
            if set(self.adversary) & set(self.framed):
                raise ValueError("adversary and framed sets must be disjoint")
        if kind.partial:
            if not self.observed:
                raise ValueError(f"{kind.value} needs an observed set")
            if not set(self.adversary) <= set(self.observed):
                raise ValueError("adversary set must lie inside the observed set")
        return self

    @property
    def name(self) -> str:
        return self.label or self.attack.value
