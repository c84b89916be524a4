"""
Parameter schemas for the SGBM + WLS pipeline.

Questo modulo definisce gli schemi validati (pydantic) dei nove parametri
ottimizzabili e il formato del file ParameterSet:
- MatchParams: alpha, beta, delta_lr, eta, gamma, speckle_window, speckle_range
  (+ num_disparities, fisso e non ottimizzato)
- WlsParams: lambda, sigma (+ max_iterations, tolerance del solver)
- ParameterSet: coppia (MatchParams, WlsParams), serializzata come JSON piatto

Range validi = quelli derivati dalla codifica a 28 geni (alpha e lambda fino
a 100000), non i massimi stampati nella tabella dei parametri.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

logger = logging.getLogger(__name__)

DEFAULT_NUM_DISPARITIES = 64

PARAMETER_FILE_KEYS = (
    "alpha", "beta", "delta_lr", "eta", "gamma",
    "speckle_window", "speckle_range", "lambda", "sigma", "num_disparities",
)


class ParameterError(ValueError):
    """Parameter values or parameter files that cannot be used."""


# ============================================================================
# SCHEMA DEFINITIONS
# ============================================================================

class MatchParams(BaseModel):
    """
    Parametri del semi-global matching.
    """
    model_config = ConfigDict(frozen=True)

    alpha: int = Field(10, ge=1, le=100000)           # penalità piccola (|Δd| = 1)
    beta: int = Field(120, ge=2, le=200000)           # penalità grande (|Δd| > 1)
    eta: int = Field(30, ge=1, le=100)                # peso gradiente vs intensità (%)
    gamma: int = Field(10, ge=1, le=100)              # uniqueness ratio (%)
    delta_lr: int = Field(1, ge=1, le=100)            # soglia left-right (pixel)
    speckle_window: int = Field(50, ge=1, le=1000)    # W: area minima di una regione
    speckle_range: int = Field(2, ge=1, le=1000)      # δ: salto massimo dentro una regione
    num_disparities: int = Field(DEFAULT_NUM_DISPARITIES, ge=2)

    @model_validator(mode="after")
    def _check_penalties(self) -> "MatchParams":
        if self.alpha >= self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be smaller than beta ({self.beta})")
        return self

    @property
    def d_max(self) -> int:
        return self.num_disparities - 1


class WlsParams(BaseModel):
    """
    Parametri del raffinamento WLS.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: int = Field(10, ge=1, le=100000, alias="lambda")
    sigma: float = Field(0.5, ge=0.0, le=0.99)
    max_iterations: int = Field(200, ge=1)
    tolerance: float = Field(1e-4, gt=0.0)


class ParameterSet(BaseModel):
    """
    I nove parametri ottimizzati dal GA, più le impostazioni fisse.
    """
    model_config = ConfigDict(frozen=True)

    match: MatchParams = Field(default_factory=MatchParams)
    wls: WlsParams = Field(default_factory=WlsParams)

    def to_flat_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.match.alpha,
            "beta": self.match.beta,
            "delta_lr": self.match.delta_lr,
            "eta": self.match.eta,
            "gamma": self.match.gamma,
            "speckle_window": self.match.speckle_window,
            "speckle_range": self.match.speckle_range,
            "lambda": self.wls.lambda_,
            "sigma": round(self.wls.sigma, 2),
            "num_disparities": self.match.num_disparities,
        }

    @classmethod
    def from_flat_dict(cls, values: Dict[str, Any], source: str = "<dict>") -> "ParameterSet":
        """
        Costruisce un ParameterSet da un documento piatto.

        alpha >= beta viene riparato (beta := alpha + 1) con un warning,
        mai rifiutato. Chiavi sconosciute o valori fuori range sollevano
        ParameterError.
        """
        unknown = sorted(set(values) - set(PARAMETER_FILE_KEYS))
        if unknown:
            raise ParameterError(f"{source}: unknown parameter keys {unknown}")

        values = dict(values)
        if "alpha" in values or "beta" in values:
            alpha = values.get("alpha", MatchParams.model_fields["alpha"].default)
            beta = values.get("beta", MatchParams.model_fields["beta"].default)
            try:
                repaired = repair_beta(alpha, beta)
            except (TypeError, ValueError) as e:
                raise ParameterError(f"{source}: alpha and beta must be integers ({e})") from e
            if repaired != beta:
                logger.warning(
                    f"⚠️  {source}: alpha ({alpha}) >= beta ({beta}), beta repaired to {repaired}"
                )
                values["beta"] = repaired

        match_keys = set(MatchParams.model_fields)
        try:
            match = MatchParams(**{k: v for k, v in values.items() if k in match_keys})
            wls = WlsParams(**{k: v for k, v in values.items() if k in ("lambda", "sigma")})
        except ValidationError as e:
            raise ParameterError(f"{source}: {e}") from e
        return cls(match=match, wls=wls)

    def with_num_disparities(self, num_disparities: int) -> "ParameterSet":
        return ParameterSet(
            match=self.match.model_copy(update={"num_disparities": num_disparities}),
            wls=self.wls,
        )


# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

def repair_beta(alpha: int, beta: int) -> int:
    """Ripara il vincolo alpha < beta: beta := max(beta, alpha + 1)."""
    return max(int(beta), int(alpha) + 1)


def save_parameter_set(params: ParameterSet, path: Union[str, Path]) -> None:
    """Salva il ParameterSet come JSON piatto (chiavi ordinate, output deterministico)."""
    text = json.dumps(params.to_flat_dict(), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def load_parameter_set(path: Union[str, Path]) -> ParameterSet:
    """Carica un ParameterSet da file JSON piatto."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParameterError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ParameterError(f"{path}: expected a JSON object")
    return ParameterSet.from_flat_dict(raw, source=str(path))
