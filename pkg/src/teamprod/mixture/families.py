"""
Output distributions for the discrete-type model.

Each family maps a parameter array of shape ``(..., 2)`` to log densities, performs
weighted maximum likelihood on one cell, and reports the implied mean of output.
"""
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import betaln, gammaln


class FamilyError(ValueError):
    pass


class LogNormal:
    '''
    ``ln y ~ Normal(mean, var)``; parameters are ``(mean, var)`` of log output.

    Arguments:
        var_floor (float): smallest variance an M-step may return
    '''
    name = 'lognormal'

    def __init__(self, var_floor=1e-8):
        self.var_floor = var_floor

    def prepare(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise FamilyError('log-normal outputs must be positive and finite')
        return y, 0

    def stats(self, y):
        ly = np.log(y)
        return {'y': y, 'ly': ly}

    def logpdf(self, theta, st):
        # theta (..., 2); st arrays of length J -> (J, ...)
        m, v = theta[..., 0], theta[..., 1]
        ly = st['ly'].reshape((-1,) + (1,) * m.ndim)
        return -ly - 0.5 * np.log(2 * np.pi * v) - (ly - m) ** 2 / (2 * v)

    def fit_cell(self, w, st, old):
        sw = w.sum()
        m = (w @ st['ly']) / sw
        v = (w @ (st['ly'] - m) ** 2) / sw
        return np.array([m, max(v, self.var_floor)])

    def mean(self, theta):
        return np.exp(theta[..., 0] + theta[..., 1] / 2)

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return np.exp(rng.normal(theta[..., 0], np.sqrt(theta[..., 1])))

    def check(self, theta):
        if np.any(theta[..., 1] <= 0):
            raise FamilyError('log-normal variances must be positive')


_R_STIRLING = 100.0


def _stirling_tail(x):
    # ln G(x) - [(x - 1/2) ln x - x + ln(2 pi) / 2], accurate to ~1e-17 for x >= 100
    x2 = x * x
    return (1.0 / 12 - (1.0 / 360 - 1.0 / (1260 * x2)) / x2) / x


class NegativeBinomial:
    '''
    Counts with mean ``m`` and dispersion ``r``: ``Var = m + m^2 / r``. Parameters are
    ``(m, r)``. Outputs are rounded to the nearest nonnegative integer on preparation.
    '''
    name = 'negbin'

    def __init__(self, r_bounds=(1e-4, 1e8), m_floor=1e-8):
        self.r_bounds = r_bounds
        self.m_floor = m_floor

    def prepare(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(~np.isfinite(y)) or np.any(y < 0):
            raise FamilyError('negative binomial outputs must be nonnegative and finite')
        r = np.floor(y + 0.5)
        return r, int(np.sum(r != y))

    def stats(self, y):
        return {'y': y, 'lgy1': gammaln(y + 1)}

    def logpdf(self, theta, st):
        m, r = theta[..., 0], theta[..., 1]
        y = st['y'].reshape((-1,) + (1,) * m.ndim)
        lgy1 = st['lgy1'].reshape(y.shape)
        # moderate r: ln G(y + r) - ln G(r) as ln G(y) - ln B(r, y)
        y1 = np.maximum(y, 1.0)
        rs = np.minimum(r, _R_STIRLING)
        lpoch = np.where(y > 0, gammaln(y1) - betaln(rs, y1), 0.0)
        small = lpoch - r * np.log1p(m / r) + y * (np.log(m) - np.log(r + m))
        # large r: Stirling differences, with the ln r terms cancelled by hand so every
        # remaining term is of order y (the Poisson limit stays accurate)
        rl = np.maximum(r, _R_STIRLING)
        ly, lm = np.log1p(y / rl), np.log1p(m / rl)
        large = ((rl - 0.5) * ly - y + y * (ly - lm) + y * np.log(m) - rl * lm
                 + _stirling_tail(rl + y) - _stirling_tail(rl))
        return np.where(r < _R_STIRLING, small, large) - lgy1

    def _cell_ll(self, w, st, m, r):
        return float(w @ self.logpdf(np.array([m, r]), st))

    def fit_cell(self, w, st, old):
        y = st['y']
        # the mean's score equation does not involve r
        m = max((w @ y) / w.sum(), self.m_floor)
        lo, hi = np.log(self.r_bounds[0]), np.log(self.r_bounds[1])
        res = minimize_scalar(lambda s: -self._cell_ll(w, st, m, np.exp(s)), bounds=(lo, hi),
                              method='bounded', options={'xatol': 1e-8})
        r_new = float(np.exp(res.x))
        r_old = float(np.clip(old[1], *self.r_bounds)) if old is not None else r_new
        # keep whichever dispersion is better so the M-step never lowers the objective
        if self._cell_ll(w, st, m, r_old) > self._cell_ll(w, st, m, r_new):
            r_new = r_old
        return np.array([m, r_new])

    def mean(self, theta):
        return np.asarray(theta[..., 0], dtype=float)

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        m, r = theta[..., 0], theta[..., 1]
        return rng.negative_binomial(r, r / (r + m)).astype(float)

    def check(self, theta):
        if np.any(theta[..., 0] <= 0) or np.any(theta[..., 1] <= 0):
            raise FamilyError('negative binomial means and dispersions must be positive')


FAMILIES = {'lognormal': LogNormal, 'log-normal': LogNormal, 'negbin': NegativeBinomial,
            'negative-binomial': NegativeBinomial, 'nb': NegativeBinomial}


def get_family(family):
    if not isinstance(family, str):
        return family
    try:
        return FAMILIES[family.lower()]()
    except KeyError:
        raise FamilyError(f'unknown family {family!r}') from None


def loglik_team(family, theta, types, y):
    '''
    Log density of one team's output.

    Arguments:
        family (str or family object)
        theta (tuple): ``(theta1, theta2)`` with shapes (K, 2) and (K, K, 2)
        types (sequence of int): one type (solo team) or two types (pair)
        y (float): output

    Returns:
        (float)
    '''
    fam = get_family(family)
    y = float(y)
    if isinstance(fam, LogNormal) and not y > 0:
        raise FamilyError(f'output {y} outside the log-normal support')
    if isinstance(fam, NegativeBinomial) and (y < 0 or y != np.floor(y)):
        raise FamilyError(f'output {y} outside the negative binomial support')
    theta1, theta2 = theta
    if len(types) == 1:
        par = np.asarray(theta1)[types[0]]
    elif len(types) == 2:
        par = np.asarray(theta2)[types[0], types[1]]
    else:
        raise FamilyError('only 1- and 2-worker teams are modelled')
    return float(fam.logpdf(par, fam.stats(np.array([y])))[0])
