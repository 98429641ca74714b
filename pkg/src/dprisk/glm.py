"""Logistic regression fitted by iteratively reweighted least squares.

Functional core (``predict``, ``log_likelihood``, ``fit_irls``, ``auc``,
``backward_eliminate``) plus ``LogisticIRLS``, a scikit-learn compatible
classifier over named design-matrix columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_matrix
from .exceptions import InputError, RankDeficientError, SchemaError

logger = logging.getLogger(__name__)

TABLE1_FILE = "table1_2016_2019.csv"
CHUNK_ROWS = 1 << 16
MAX_ITER = 50
LL_RTOL = 1e-10
SCORE_TOL = 1e-8
# |eta| beyond this puts p within 1e-13 of 0 or 1
SEPARATION_ETA = 30.0


@dataclass
class CoefficientSet:
    terms: tuple[str, ...]
    estimates: np.ndarray
    std_errors: np.ndarray | None = None

    def __post_init__(self):
        self.terms = tuple(self.terms)
        self.estimates = np.asarray(self.estimates, dtype=float)
        if len(set(self.terms)) != len(self.terms):
            raise InputError("duplicate term names in coefficient set")
        if self.estimates.shape != (len(self.terms),):
            raise InputError("one estimate per term required")
        if self.std_errors is not None:
            self.std_errors = np.asarray(self.std_errors, dtype=float)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(zip(self.terms, self.estimates))

    def as_series(self) -> pd.Series:
        return pd.Series(self.estimates, index=list(self.terms))

    def to_frame(self) -> pd.DataFrame:
        se = self.std_errors if self.std_errors is not None else np.full(len(self), np.nan)
        return pd.DataFrame({"term_name": self.terms, "estimate": self.estimates, "std_error": se})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.12g", lineterminator="\n")

    @classmethod
    def read_csv(cls, path) -> "CoefficientSet":
        df = pd.read_csv(path)
        missing = {"term_name", "estimate", "std_error"} - set(df.columns)
        if missing:
            raise SchemaError(f"{path}: missing columns {', '.join(sorted(missing))}")
        return cls(tuple(df["term_name"].astype(str)), df["estimate"].to_numpy(float),
                   df["std_error"].to_numpy(float))


def load_table1() -> CoefficientSet:
    """The published 30-term coefficient set shipped with the package."""
    with resources.as_file(resources.files("dprisk") / "data" / TABLE1_FILE) as p:
        return CoefficientSet.read_csv(Path(p))


@dataclass
class ModelMatrix:
    X: np.ndarray
    y: np.ndarray
    terms: tuple[str, ...]

    def __post_init__(self):
        self.X = check_matrix(self.X)
        self.y = check_binary_labels(self.y) if len(self.y) else np.zeros(0)
        self.terms = tuple(self.terms)
        if self.X.shape != (len(self.y), len(self.terms)):
            raise InputError(
                f"design matrix shape {self.X.shape} does not match {len(self.y)} labels x {len(self.terms)} terms"
            )

    @classmethod
    def from_frame(cls, features: pd.DataFrame, y) -> "ModelMatrix":
        return cls(features.to_numpy(float), np.asarray(y, dtype=float), tuple(features.columns))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def columns(self, terms) -> np.ndarray:
        idx = [self.terms.index(t) for t in terms]
        return self.X[:, idx]


@dataclass
class FitResult:
    coefficients: CoefficientSet
    log_likelihood: float
    aic: float
    mcfadden_r2: float
    iterations: int
    converged: bool
    null_log_likelihood: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    elimination_path: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.coefficients)

    def summary(self) -> pd.DataFrame:
        """Estimates with Wald z, two-sided p and significance stars (1/5/10 %)."""
        c = self.coefficients
        z = c.estimates / c.std_errors
        p = 2 * stats.norm.sf(np.abs(z))
        stars = np.select([p < 0.01, p < 0.05, p < 0.10], ["***", "**", "*"], "")
        return pd.DataFrame({"term_name": c.terms, "estimate": c.estimates, "std_error": c.std_errors,
                             "z_value": z, "p_value": p, "signif": stars})


def _align(coefficients: CoefficientSet, names) -> None:
    names = tuple(names)
    if names != coefficients.terms:
        extra = [n for n in names if n not in coefficients.terms]
        absent = [t for t in coefficients.terms if t not in names]
        detail = []
        if extra:
            detail.append("features without coefficients: " + ", ".join(extra))
        if absent:
            detail.append("coefficients without features: " + ", ".join(absent))
        if not detail:
            detail.append("same names in a different order")
        raise InputError("term mismatch; " + "; ".join(detail))


def linear_predictor(features, coefficients: CoefficientSet):
    """eta = X beta, with term names checked against the coefficient set."""
    if isinstance(features, pd.DataFrame):
        _align(coefficients, features.columns)
        return features.to_numpy(float) @ coefficients.estimates
    if isinstance(features, pd.Series):
        _align(coefficients, features.index)
        return float(features.to_numpy(float) @ coefficients.estimates)
    if isinstance(features, dict):
        _align(coefficients, features.keys())
        return float(np.dot([features[t] for t in coefficients.terms], coefficients.estimates))
    raise InputError("features must be a DataFrame, Series or dict keyed by term name")


def predict(features, coefficients: CoefficientSet):
    """Predicted probability 1 / (1 + exp(-eta))."""
    return expit(linear_predictor(features, coefficients))


def _loglik_eta(eta: np.ndarray, y: np.ndarray) -> float:
    # y*eta - log(1 + e^eta), never forming p explicitly
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def log_likelihood(matrix: ModelMatrix, coefficients: CoefficientSet) -> float:
    if matrix.n == 0:
        return 0.0
    eta = matrix.columns(coefficients.terms) @ coefficients.estimates
    return _loglik_eta(eta, matrix.y)


def null_log_likelihood(y) -> float:
    """Log-likelihood of the intercept-only MLE."""
    y = np.asarray(y, dtype=float)
    n1 = y.sum()
    n = y.size
    if n == 0:
        return 0.0
    p = n1 / n
    if p in (0.0, 1.0):
        return 0.0
    return float(n1 * np.log(p) + (n - n1) * np.log1p(-p))


def _score_and_information(X, y, beta):
    """Gradient and Fisher information summed over fixed-size row chunks."""
    k = X.shape[1]
    grad = np.zeros(k)
    info = np.zeros((k, k))
    for lo in range(0, X.shape[0], CHUNK_ROWS):
        Xc = X[lo:lo + CHUNK_ROWS]
        p = expit(Xc @ beta)
        grad += Xc.T @ (y[lo:lo + CHUNK_ROWS] - p)
        w = p * (1.0 - p)
        info += (Xc * w[:, None]).T @ Xc
    return grad, info


def _loglik_chunked(X, y, beta) -> float:
    total = 0.0
    for lo in range(0, X.shape[0], CHUNK_ROWS):
        total += _loglik_eta(X[lo:lo + CHUNK_ROWS] @ beta, y[lo:lo + CHUNK_ROWS])
    return total


def _separated(X, y, beta) -> bool:
    """Some rows fitted with probability numerically 0 or 1, all on the correct side.

    That only happens when coefficients run off to infinity along a separating
    direction; the score then vanishes without a finite maximum existing.
    """
    for lo in range(0, X.shape[0], CHUNK_ROWS):
        eta = X[lo:lo + CHUNK_ROWS] @ beta
        extreme = np.abs(eta) > SEPARATION_ETA
        if extreme.any():
            yc = y[lo:lo + CHUNK_ROWS][extreme]
            if np.all((eta[extreme] > 0) == (yc == 1)):
                return True
    return False


def check_rank(X: np.ndarray, terms) -> None:
    """Raise RankDeficientError naming the columns that add no rank."""
    if X.shape[1] == 0:
        return
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    scaled = X / np.where(zero, 1.0, norms)
    _, r, piv = scipy.linalg.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0) * 1e3
    rank = int((diag > tol).sum())
    bad = sorted(set(piv[rank:].tolist()) | set(np.flatnonzero(zero).tolist()))
    if bad:
        raise RankDeficientError([terms[i] for i in bad])


def fit_irls(
    matrix: ModelMatrix,
    terms=None,
    *,
    start=None,
    max_iter: int = MAX_ITER,
    ll_rtol: float = LL_RTOL,
    score_tol: float = SCORE_TOL,
    check_collinearity: bool = True,
) -> FitResult:
    """Maximum-likelihood logistic fit by Newton/IRLS with step halving.

    Stops when the relative log-likelihood change falls below ``ll_rtol`` or
    the largest score component below ``score_tol``. Non-convergence (for
    example under complete separation) is reported through ``converged`` and
    ``diagnostics`` rather than raised.
    """
    terms = tuple(matrix.terms if terms is None else terms)
    X = matrix.columns(terms)
    y = matrix.y
    n, k = X.shape
    if n <= k:
        raise InputError(f"need more rows than terms (n={n}, k={k})")
    if check_collinearity:
        check_rank(X, terms)

    beta = np.zeros(k) if start is None else np.asarray(start, dtype=float).copy()
    ll = _loglik_chunked(X, y, beta)
    converged = False
    halvings = 0
    it = 0
    reason = "max_iter"
    info = None
    for it in range(1, max_iter + 1):
        grad, info = _score_and_information(X, y, beta)
        if np.max(np.abs(grad)) < score_tol:
            converged, reason, it = True, "score", it - 1
            break
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            reason = "singular_information"
            break
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik_chunked(X, y, cand)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
            halvings += 1
        if ll_new < ll:
            reason = "no_ascent"
            break
        beta, ll_old, ll = cand, ll, ll_new
        if ll == 0.0:
            # every row fitted exactly: the data are separated
            reason = "separation"
            break
        if abs(ll - ll_old) <= ll_rtol * max(abs(ll), 1e-300):
            converged, reason = True, "loglik"
            # The log-likelihood is flat to second order near the optimum, so
            # its change can pass the tolerance while beta is still ~1e-8 off.
            # One more Newton step squares that error. The likelihood change is
            # now below rounding noise, so the score decides whether to keep it.
            grad, info = _score_and_information(X, y, beta)
            try:
                cand = beta + scipy.linalg.solve(info, grad, assume_a="pos")
                grad_new, _ = _score_and_information(X, y, cand)
                if np.max(np.abs(grad_new)) < np.max(np.abs(grad)):
                    beta, ll = cand, _loglik_chunked(X, y, cand)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                pass
            break

    grad, info = _score_and_information(X, y, beta)
    se = np.full(k, np.nan)
    try:
        cov = scipy.linalg.inv(info)
        d = np.diag(cov)
        if (d > 0).all():
            se = np.sqrt(d)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    if converged and not np.isfinite(se).all():
        converged, reason = False, "singular_information"
    if converged and _separated(X, y, beta):
        converged, reason = False, "separation"

    ll0 = null_log_likelihood(y)
    mcf = 1.0 - ll / ll0 if ll0 != 0 else float("nan")
    diagnostics = {"reason": reason, "step_halvings": halvings, "max_abs_score": float(np.max(np.abs(grad)))}
    if not converged:
        logger.warning("IRLS did not converge after %d iterations (%s)", it, reason)
    return FitResult(
        coefficients=CoefficientSet(terms, beta, se),
        log_likelihood=ll,
        aic=2 * k - 2 * ll,
        mcfadden_r2=mcf,
        iterations=it,
        converged=converged,
        null_log_likelihood=ll0,
        diagnostics=diagnostics,
    )


def model_metrics(fit: FitResult, matrix: ModelMatrix) -> tuple[float, float]:
    """(AIC, McFadden pseudo-R2) of ``fit`` evaluated on ``matrix``."""
    ll = log_likelihood(matrix, fit.coefficients)
    ll0 = null_log_likelihood(matrix.y)
    return 2 * fit.k - 2 * ll, (1.0 - ll / ll0 if ll0 != 0 else float("nan"))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count half)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be 1-d and the same length")
    pos = y == 1
    n1 = int(pos.sum())
    n0 = int((y == 0).sum())
    if n1 + n0 != y.size:
        raise InputError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise InputError("auc needs at least one positive and one negative label")
    ranks = stats.rankdata(s)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def backward_eliminate(
    matrix: ModelMatrix,
    candidate_terms=None,
    max_terms: int = 30,
    *,
    keep=("intercept",),
    test: ModelMatrix | None = None,
) -> FitResult:
    """Backward elimination on AIC under a cap on the number of terms.

    Each round refits the model without each removable term and drops the one
    with the lowest resulting AIC (ties: smallest |z| in the current fit).
    While above ``max_terms`` a term is dropped even if AIC worsens; at or
    below the cap the search stops once no removal lowers AIC. Terms in
    ``keep`` are never dropped. The path of dropped terms with AIC, McFadden
    R2 and (when ``test`` is given) test AUC is stored on the result.
    """
    terms = list(matrix.terms if candidate_terms is None else candidate_terms)
    keep = [t for t in keep if t in terms]
    if max_terms < len(keep):
        raise InputError(f"max_terms={max_terms} is below the {len(keep)} protected terms")
    current = fit_irls(matrix, terms)
    path = [_path_entry(None, current, test)]
    while len(terms) > len(keep):
        z = np.abs(current.coefficients.estimates / current.coefficients.std_errors)
        zmap = dict(zip(current.coefficients.terms, np.nan_to_num(z, nan=0.0)))
        best = None
        for t in terms:
            if t in keep:
                continue
            idx = terms.index(t)
            rest = terms[:idx] + terms[idx + 1:]
            start = np.delete(current.coefficients.estimates, idx)
            trial = fit_irls(matrix, rest, start=start, check_collinearity=False)
            key = (trial.aic, zmap[t])
            if best is None or key < best[0]:
                best = (key, t, trial, rest)
        (_, _), dropped, trial, rest = best
        if len(terms) <= max_terms and trial.aic >= current.aic:
            break
        terms, current = rest, trial
        path.append(_path_entry(dropped, current, test))
        logger.info("dropped %s -> %d terms, AIC %.3f", dropped, len(terms), current.aic)
    current.elimination_path = path
    return current


def _path_entry(dropped, fit: FitResult, test: ModelMatrix | None) -> dict:
    entry = {"dropped": dropped, "n_terms": fit.k, "aic": fit.aic, "mcfadden_r2": fit.mcfadden_r2}
    if test is not None:
        eta = test.columns(fit.coefficients.terms) @ fit.coefficients.estimates
        entry["test_auc"] = auc(eta, test.y)
    return entry


class LogisticIRLS(ClassifierMixin, BaseEstimator):
    """Logistic regression on named columns, fitted by IRLS.

    ``X`` carries its own intercept column when one is wanted, so the
    estimator adds none. Accepts DataFrames (column names become term names)
    or arrays (terms named x0, x1, ...).
    """

    def __init__(self, max_iter=MAX_ITER, tol=LL_RTOL, max_terms=None):
        self.max_iter = max_iter
        self.tol = tol
        self.max_terms = max_terms

    @staticmethod
    def _names(X):
        if isinstance(X, pd.DataFrame):
            return tuple(str(c) for c in X.columns)
        return tuple(f"x{i}" for i in range(np.asarray(X).shape[1]))

    def fit(self, X, y):
        names = self._names(X)
        matrix = ModelMatrix(check_matrix(X), check_binary_labels(y), names)
        if self.max_terms is not None:
            fit = backward_eliminate(matrix, max_terms=self.max_terms)
        else:
            fit = fit_irls(matrix, max_iter=self.max_iter, ll_rtol=self.tol)
        self._set_fit(fit, names)
        return self

    def _set_fit(self, fit: FitResult, names):
        self.fit_result_ = fit
        self.feature_names_in_ = np.asarray(names, dtype=object)
        self.n_features_in_ = len(names)
        self.classes_ = np.array([0, 1])
        full = dict(fit.coefficients)
        self.coef_ = np.array([full.get(n, 0.0) for n in names])
        se = dict(zip(fit.coefficients.terms, fit.coefficients.std_errors))
        self.std_errors_ = np.array([se.get(n, np.nan) for n in names])
        self.converged_ = fit.converged
        self.n_iter_ = fit.iterations
        self.log_likelihood_ = fit.log_likelihood
        self.aic_ = fit.aic
        self.mcfadden_r2_ = fit.mcfadden_r2

    @classmethod
    def from_coefficients(cls, coefficients: CoefficientSet) -> "LogisticIRLS":
        """A fitted estimator wrapping fixed coefficients (no training data)."""
        est = cls()
        est.fit_result_ = None
        est.feature_names_in_ = np.asarray(coefficients.terms, dtype=object)
        est.n_features_in_ = len(coefficients)
        est.classes_ = np.array([0, 1])
        est.coef_ = coefficients.estimates.copy()
        est.std_errors_ = (coefficients.std_errors.copy() if coefficients.std_errors is not None
                           else np.full(len(coefficients), np.nan))
        return est

    @property
    def coefficients_(self) -> CoefficientSet:
        check_is_fitted(self, "coef_")
        return CoefficientSet(tuple(self.feature_names_in_), self.coef_, self.std_errors_)

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        if isinstance(X, pd.DataFrame):
            _align(self.coefficients_, X.columns)
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)
