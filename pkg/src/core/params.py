from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TvL1Params(BaseModel):
    """
    Parameters of the coarse-to-fine TV-L1 solver.

    Example:
    {
        "data_weight": 0.15,
        "tightness": 0.3,
        "time_step": 0.25,
        "pyramid_scale": 0.5,
        "pyramid_levels": 5,
        "warps_per_level": 5,
        "inner_iterations": 30,
        "median_filter": true
    }
    """
    model_config = ConfigDict(frozen=True)

    data_weight: float = Field(
        default=0.15,
        gt=0,
        description="λ, weight of the L1 data term (intensities in [0, 255])"
    )
    tightness: float = Field(
        default=0.3,
        gt=0,
        description="θ, coupling between the data and TV sub-problems"
    )
    time_step: float = Field(
        default=0.25,
        gt=0,
        le=0.25,
        description="τ, dual ascent step"
    )
    pyramid_scale: float = Field(
        default=0.5,
        gt=0,
        lt=1,
        description="Downsampling factor between pyramid levels"
    )
    pyramid_levels: int = Field(
        default=5,
        ge=1,
        description="Requested number of levels (truncated for small images)"
    )
    warps_per_level: int = Field(
        default=5,
        ge=1,
        description="Image warps per pyramid level"
    )
    inner_iterations: int = Field(
        default=30,
        ge=1,
        description="Primal-dual iterations per warp"
    )
    median_filter: bool = Field(
        default=True,
        description="5x5 median filtering of the flow after each warp"
    )


class SynthConfig(BaseModel):
    """Image size and motion ranges for the synthetic pair generator."""
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=128, ge=64)
    height: int = Field(default=128, ge=64)
    bump_count_min: int = Field(default=2, ge=0)
    bump_count_max: int = Field(default=6, ge=0)
    amplitude_min: float = Field(default=0.5, ge=0, description="px, before scale increment")
    amplitude_max: float = Field(default=4.0, ge=0, description="px, before scale increment")
    sigma_min: float = Field(default=4.0, gt=0, description="px")
    sigma_max: float = Field(default=10.0, gt=0, description="px")
    head_corner_max: float = Field(default=2.0, ge=0, le=128.0, description="px at image corners, before scale increment")
    max_displacement: float = Field(default=3.0, gt=0, le=128.0, description="px cap on ground-truth motion")
    inverse_iterations: int = Field(default=12, ge=1, description="fixed-point steps inverting the flow")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        if self.bump_count_min > self.bump_count_max:
            raise ValueError("bump_count_min must not exceed bump_count_max")
        if self.amplitude_min > self.amplitude_max:
            raise ValueError("amplitude_min must not exceed amplitude_max")
        if self.sigma_min > self.sigma_max:
            raise ValueError("sigma_min must not exceed sigma_max")
        return self


class EndpointConfig(BaseModel):
    """
    Chat-completion endpoint settings. The key itself never lives here,
    only the name of the environment variable holding it.
    """
    model_config = ConfigDict(frozen=True)

    base_url: str = Field(default="http://localhost:8000/v1")
    model_name: str = Field(default="mellm")
    api_key_env_var: str = Field(default="MELLM_API_KEY")
    keyless: bool = Field(default=False, description="Send no Authorization header")
    timeout: float = Field(default=60.0, gt=0, description="seconds")
    max_retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    temperature: float = Field(default=0.0, ge=0)
    max_tokens: Optional[int] = Field(default=None, ge=1)
    backoff_base_seconds: float = Field(default=1.0, ge=0)
