from __future__ import annotations

import json
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator


class _SpecBase(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MonicAdditiveSpec(_SpecBase):
    family: Literal["monic_additive"] = "monic_additive"
    d: int = Field(default=2, ge=2)


class PowerAdditiveSpec(_SpecBase):
    family: Literal["power_additive"] = "power_additive"
    ell_minus: float = Field(ge=1.0)
    ell_plus: float = Field(ge=1.0)


class FlatAdditiveSpec(_SpecBase):
    family: Literal["flat_additive"] = "flat_additive"
    ell: float = Field(default=1.0, ge=1.0)
    b: float = Field(gt=0.0)


class MultiplicativeSpec(_SpecBase):
    family: Literal["multiplicative"] = "multiplicative"
    base: Literal["sin", "quad4x1mx", "flat_unimodal"]
    # only used by flat_unimodal
    ell: Optional[float] = Field(default=None, ge=1.0)

    @model_validator(mode="after")
    def _ell_only_for_flat(self):
        if self.base == "flat_unimodal" and self.ell is None:
            raise ValueError("flat_unimodal requires ell")
        if self.base != "flat_unimodal" and self.ell is not None:
            raise ValueError(f"ell is not a parameter of base {self.base!r}")
        return self


class CubicSpec(_SpecBase):
    family: Literal["cubic"] = "cubic"


FamilySpec = Annotated[
    Union[MonicAdditiveSpec, PowerAdditiveSpec, FlatAdditiveSpec, MultiplicativeSpec, CubicSpec],
    Field(discriminator="family"),
]

_family_adapter: TypeAdapter = TypeAdapter(FamilySpec)


def parse_family(raw: str | dict) -> MonicAdditiveSpec | PowerAdditiveSpec | FlatAdditiveSpec | MultiplicativeSpec | CubicSpec:
    """Accepts the JSON text used on the command line or an already-decoded dict."""
    data = json.loads(raw) if isinstance(raw, str) else raw
    return _family_adapter.validate_python(data)


def dump_family(spec) -> dict:
    return spec.model_dump(exclude_none=True)
