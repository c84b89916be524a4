"""
Metriche di valutazione - MSE, PSNR, SSIM tra mappa stimata e ground truth.

Formule:
    MSE  = mean((D_gt - D_pred)²)
    PSNR = 10 * log10(d_max² / MSE)
    SSIM = media della SSIM locale (finestra gaussiana 11x11, σ = 1.5,
           C1 = (0.01 d_max)², C2 = (0.03 d_max)²)

I pixel invalidi valgono 0.0 in entrambe le mappe prima del calcolo: una
configurazione che invalida tutto viene penalizzata, non premiata.
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from app.img import DimensionError, DisparityMap, require_same_shape

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# PSNR come fitness: un match esatto resta finito nelle statistiche del GA
PSNR_CEILING_DB = 100.0


class FitnessMetric(str, Enum):
    """Metriche usabili come funzione di fitness"""
    MSE = "mse"
    PSNR = "psnr"
    SSIM = "ssim"


@dataclass
class MetricReport:
    """Le tre metriche per una coppia (ground truth, predizione)"""
    mse: float
    psnr: float
    ssim: float
    valid_pixel_count: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def csv_line(self) -> str:
        """Formato `mse,psnr,ssim` con 6 decimali; psnr "inf" se mse = 0."""
        psnr_text = "inf" if math.isinf(self.psnr) else f"{self.psnr:.6f}"
        return f"{self.mse:.6f},{psnr_text},{self.ssim:.6f}"


def mse(gt: DisparityMap, pred: DisparityMap) -> float:
    """Errore quadratico medio su tutti gli N pixel (invalidi -> 0.0)."""
    require_same_shape(gt, pred)
    return float(mean_squared_error(gt.filled(0.0), pred.filled(0.0)))


def psnr_from_mse(mse_value: float, d_max: float) -> float:
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    if mse_value == 0.0:
        return math.inf
    return 10.0 * math.log10(d_max * d_max / mse_value)


def psnr(gt: DisparityMap, pred: DisparityMap, d_max: float) -> float:
    """PSNR in dB rispetto alla disparità massima; +inf se le mappe coincidono."""
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    return psnr_from_mse(mse(gt, pred), d_max)


def ssim(gt: DisparityMap, pred: DisparityMap, d_max: float) -> float:
    """SSIM media con finestra gaussiana 11x11 (σ = 1.5)."""
    require_same_shape(gt, pred)
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    if gt.width < SSIM_WINDOW or gt.height < SSIM_WINDOW:
        raise DimensionError(
            f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {gt.width}x{gt.height}"
        )
    value = structural_similarity(
        gt.filled(0.0),
        pred.filled(0.0),
        data_range=float(d_max),
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    )
    return float(np.clip(value, -1.0, 1.0))


def evaluate(gt: DisparityMap, pred: DisparityMap, d_max: float) -> MetricReport:
    """Calcola tutte e tre le metriche in una volta."""
    mse_value = mse(gt, pred)
    return MetricReport(
        mse=mse_value,
        psnr=psnr_from_mse(mse_value, d_max),
        ssim=ssim(gt, pred, d_max),
        valid_pixel_count=int(pred.valid_mask.sum()),
    )


def fitness_of(report: MetricReport, metric: FitnessMetric) -> float:
    """
    Orienta la metrica come fitness "più alto è meglio".

    MSE viene negato, PSNR limitato a PSNR_CEILING_DB, SSIM invariato.
    """
    metric = FitnessMetric(metric)
    if metric == FitnessMetric.MSE:
        return -report.mse
    if metric == FitnessMetric.PSNR:
        return min(report.psnr, PSNR_CEILING_DB)
    return report.ssim


def percent_change(baseline: float, best: float, metric: FitnessMetric) -> float:
    """
    Variazione percentuale rispetto al baseline, positiva = miglioramento:
    (baseline - best) / baseline per MSE, (best - baseline) / baseline altrimenti.
    """
    metric = FitnessMetric(metric)
    if baseline == 0 or math.isinf(baseline) or math.isinf(best):
        return 0.0
    if metric == FitnessMetric.MSE:
        return (baseline - best) / baseline * 100.0
    return (best - baseline) / abs(baseline) * 100.0
