"""Market builders and a frozen-draw training instance shared by the test modules."""
import numpy as np

from tvo import rng as rngmod
from tvo.market import market_from_dict
from tvo.nn import init
from tvo.pricing import TvoSpec
from tvo.rl import NeuralPolicy, direct_loss_and_grad
from tvo.simulator import _schedule


def pillars(x):
    """Scalar -> flat curve; list of (t, v) -> as given."""
    if np.isscalar(x):
        return [[0.0, float(x)]]
    return [[float(t), float(v)] for t, v in x]


def bs_market(mu, vols, corr=None, spot=None, rate=0.0, fee=0.0, spread=0.0):
    n = len(mu)
    corr = np.eye(n) if corr is None else np.asarray(corr, dtype=float)
    if corr.ndim == 0:
        corr = np.full((n, n), float(corr))
        np.fill_diagonal(corr, 1.0)
    spot = [1.0] * n if spot is None else spot
    return market_from_dict({
        "assets": [{"name": f"A{i}", "spot": spot[i], "carry_pillars": pillars(mu[i]),
                    "vol": {"type": "bs", "pillars": pillars(vols[i])}} for i in range(n)],
        "rate_pillars": pillars(rate),
        "fee_pillars": pillars(fee),
        "funding_spread_pillars": pillars(spread),
        "correlation": corr.tolist(),
    })


def flat_lv_market(mu, vols, corr=None, rate=0.0, fee=0.0):
    """Local-vol market whose surfaces are flat at the given vols."""
    n = len(mu)
    corr = np.eye(n) if corr is None else np.asarray(corr, dtype=float)
    return market_from_dict({
        "assets": [{"name": f"A{i}", "spot": 1.0, "carry_pillars": pillars(mu[i]),
                    "vol": {"type": "lv", "times": [0.0, 1.0], "log_moneyness": [-1.0, 1.0],
                            "values": [[vols[i]] * 2] * 2}} for i in range(n)],
        "rate_pillars": pillars(rate),
        "fee_pillars": pillars(fee),
        "correlation": corr.tolist(),
    })


def random_spd_corr(rng, n):
    a = rng.normal(size=(n, n))
    c = a @ a.T + n * 0.3 * np.eye(n)
    d = np.sqrt(np.diag(c))
    c = c / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return (c + c.T) / 2


def micro_setup(n, seed=0, sigma_bar=0.05):
    """Frozen-draw direct-policy instance: 2 fixings, 2 substeps each, 8 paths."""
    if n == 1:
        m = bs_market([0.02], [0.2], rate=0.01)
    else:
        m = bs_market([0.01, 0.03], [0.2, 0.3], corr=0.4, rate=0.01)
    tvo = TvoSpec(T=1.0, K=0.99, sigma_bar=sigma_bar)
    grid = (0.0, 0.5, 1.0)
    schedule = _schedule(m, grid, 2)
    normals = rngmod.generator(seed, "micro").standard_normal((8, len(schedule), n))
    net = init((n + 2, 4, n), seed=seed)
    return NeuralPolicy(net, m, tvo), grid, schedule, normals


def fd_direct_gradient(policy, grid, schedule, normals, h=1e-6):
    p = policy.net.params
    out = np.empty(p.size)
    for i in range(p.size):
        keep = p[i]
        p[i] = keep + h
        hi, _ = direct_loss_and_grad(policy, grid, schedule, normals)
        p[i] = keep - h
        lo, _ = direct_loss_and_grad(policy, grid, schedule, normals)
        p[i] = keep
        out[i] = (hi - lo) / (2 * h)
    return out
