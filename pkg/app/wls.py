"""
Raffinamento WLS (Weighted Least Squares) della mappa di disparità.

Minimizza l'energia:
    E(D) = Σ_p (D(p) - D̃(p))² + λ Σ_(p,q) w_pq (D(p) - D(q))²
    w_pq = exp(-|I(p) - I(q)|² / (2σ²)),  I normalizzata in [0, 1]

sul grafo dei pixel validi (4-vicinato). Il sistema normale
(I + λ L_w) D = D̃ è simmetrico definito positivo e viene risolto con
gradiente coniugato precondizionato (Jacobi) partendo da D̃.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import cg

from app.img import DisparityMap, GrayImage, require_same_shape
from app.params import WlsParams

logger = logging.getLogger(__name__)

# σ = 0 renderebbe singolare la formula dei pesi
MIN_SIGMA = 0.01
ENERGY_SLACK = 1e-6


@dataclass(frozen=True)
class EdgeWeights:
    """Pesi w_pq sugli archi del 4-vicinato."""
    horizontal: np.ndarray  # (H, W-1): tra (y, x) e (y, x+1)
    vertical: np.ndarray    # (H-1, W): tra (y, x) e (y+1, x)


@dataclass
class WlsResult:
    """Risultato del solver, con flag di convergenza."""
    disparity: DisparityMap
    converged: bool
    iterations: int
    residual: float


def edge_weights(guide: GrayImage, sigma: float) -> EdgeWeights:
    """
    Calcola i pesi edge-aware dall'immagine guida.

    Returns:
        EdgeWeights con valori in (0, 1], simmetrici per costruzione
    """
    sigma = max(float(sigma), MIN_SIGMA)
    intensity = guide.data.astype(np.float64) / 255.0
    denom = 2.0 * sigma * sigma
    dx = np.diff(intensity, axis=1)
    dy = np.diff(intensity, axis=0)
    return EdgeWeights(
        horizontal=np.exp(-(dx * dx) / denom),
        vertical=np.exp(-(dy * dy) / denom),
    )


def _valid_edges(valid: np.ndarray, weights: EdgeWeights) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Archi (p, q, w_pq) con entrambi gli estremi validi, in indici compatti."""
    compact = np.full(valid.shape, -1, dtype=np.int64)
    compact[valid] = np.arange(int(valid.sum()))

    h_mask = valid[:, :-1] & valid[:, 1:]
    v_mask = valid[:-1, :] & valid[1:, :]
    p = np.concatenate([compact[:, :-1][h_mask], compact[:-1, :][v_mask]])
    q = np.concatenate([compact[:, 1:][h_mask], compact[1:, :][v_mask]])
    w = np.concatenate([weights.horizontal[h_mask], weights.vertical[v_mask]])
    return p, q, w


def build_system(initial: DisparityMap, guide: GrayImage, params: WlsParams) -> Tuple[csr_matrix, np.ndarray]:
    """
    Costruisce A = I + λ L_w e b = D̃ sui soli pixel validi.
    """
    valid = initial.valid_mask
    n = int(valid.sum())
    p, q, w = _valid_edges(valid, edge_weights(guide, params.sigma))
    lw = params.lambda_ * w

    off_diag = coo_matrix(
        (np.concatenate([-lw, -lw]), (np.concatenate([p, q]), np.concatenate([q, p]))),
        shape=(n, n),
    )
    degree = np.bincount(p, weights=lw, minlength=n) + np.bincount(q, weights=lw, minlength=n)
    system = (diags(1.0 + degree) + off_diag).tocsr()
    return system, initial.data[valid].copy()


def wls_energy(candidate: DisparityMap, initial: DisparityMap, guide: GrayImage, params: WlsParams) -> float:
    """E_WLS(candidate) rispetto a D̃ = initial, sul grafo dei pixel validi di initial."""
    valid = initial.valid_mask
    x = candidate.data[valid]
    x0 = initial.data[valid]
    p, q, w = _valid_edges(valid, edge_weights(guide, params.sigma))
    data_term = float(np.sum((x - x0) ** 2))
    smooth_term = float(np.sum(w * (x[p] - x[q]) ** 2))
    return data_term + params.lambda_ * smooth_term


def wls_refine(initial: DisparityMap, guide: GrayImage, params: WlsParams) -> WlsResult:
    """
    Raffina la mappa minimizzando E_WLS; i pixel invalidi restano invalidi.

    In caso di mancata convergenza entro max_iterations ritorna l'ultimo
    iterato (il CG precondizionato fa scendere l'energia monotonamente) con
    converged=False.
    """
    require_same_shape(initial, guide)
    valid = initial.valid_mask
    if not valid.any():
        return WlsResult(initial, converged=True, iterations=0, residual=0.0)

    system, rhs = build_system(initial, guide, params)
    preconditioner = diags(1.0 / system.diagonal())

    iterations = 0

    def count(_xk):
        nonlocal iterations
        iterations += 1

    solution, info = cg(
        system, rhs,
        x0=rhs.copy(),
        rtol=params.tolerance,
        atol=0.0,
        maxiter=params.max_iterations,
        M=preconditioner,
        callback=count,
    )
    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(rhs - system @ solution))
    relative = residual / rhs_norm if rhs_norm > 0 else residual

    out = initial.data.copy()
    out[valid] = solution
    refined = DisparityMap(out)

    before = wls_energy(initial, initial, guide, params)
    after = wls_energy(refined, initial, guide, params)
    if after > before + ENERGY_SLACK:
        logger.warning(f"⚠️  WLS energia aumentata ({before:.6f} -> {after:.6f}), mantengo la mappa iniziale")
        refined = initial

    converged = info == 0
    if not converged:
        logger.warning(
            f"⚠️  WLS non convergente dopo {iterations} iterazioni (residuo relativo {relative:.2e})"
        )
    else:
        logger.debug(f"✅ WLS convergente in {iterations} iterazioni (residuo relativo {relative:.2e})")

    return WlsResult(refined, converged=converged, iterations=iterations, residual=relative)
