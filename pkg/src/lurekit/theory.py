"""Monte Carlo checks of the Gaussian-features error model.

The model: class-k features are d-dimensional standard Gaussians centred at
y * mu_k (y = +/-1 balanced), the classifier weight is the label-weighted
sample mean, and a fresh sample is classified by the sign of its inner product
with that weight. Closed-form misclassification rates follow from the normal
CDF; the experiments here measure the same rates by honest simulation (fresh
feature draws, actual inner products) and report agreement plus the direction
of the two sampling-scheme comparisons.

Two experiment harnesses:

* co-occurrence: two jointly observed classes, where only a fraction rho of
  the N training records actually carries the feature pair; the chained
  two-class score is thresholded at zero.
* uncertainty-guided sampling: K classes share a fixed budget of N training
  samples, either split equally or tilted toward classes whose estimated
  uncertainty score exceeds a threshold.

All randomness flows through per-trial generators keyed by (seed, experiment
tag, trial index), so results do not depend on scheduling order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import erfc, expit

from .errors import ConfigError

# above this, ||mu||^2 is no longer small relative to d and the closed forms
# carry unquantified error terms
REGIME_MU_OVER_D = 0.1


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class TheoryConfig:
    """Parameters for the error-model experiments.

    mu_norms_sq holds the squared mean-vector norms per class (K entries).
    rho0 is the naturally occurring jointly-positive fraction, rho the reduced
    fraction of the counterfactual sampling scheme. gamma_u thresholds the
    per-class uncertainty score -log(p_k) when tilting the sampling budget;
    classes at or above it receive uncertain_boost times the weight of the
    rest. sigmoid_sign picks the sign convention inside the p_k expectation:
    "standard" scores sigmoid(+margin), "as_proof" the mirrored variant.
    """

    d: int
    K: int
    N: int
    mu_norms_sq: tuple[float, ...]
    rho0: float = 0.8
    rho: float = 0.2
    gamma_u: float = 0.2
    trials: int = 200
    test_size: int = 10000
    seed: int = 0
    sigmoid_sign: Literal["as_proof", "standard"] = "as_proof"
    uncertain_boost: float = 3.0
    experiment: Literal["cooccurrence", "uncertainty", "both"] = "both"

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if len(self.mu_norms_sq) != self.K:
            raise ConfigError(
                f"mu_norms_sq has {len(self.mu_norms_sq)} entries for K={self.K}"
            )
        if any(m < 0 for m in self.mu_norms_sq):
            raise ConfigError("mu_norms_sq entries must be >= 0")
        if not (0.0 < self.rho <= self.rho0 < 1.0):
            raise ConfigError(
                f"need 0 < rho <= rho0 < 1, got rho={self.rho} rho0={self.rho0}"
            )
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.N < 2 or self.test_size < 2:
            raise ConfigError("N and test_size must be >= 2")
        if self.uncertain_boost < 1:
            raise ConfigError("uncertain_boost must be >= 1")
        if self.sigmoid_sign not in ("as_proof", "standard"):
            raise ConfigError(f"unknown sigmoid_sign {self.sigmoid_sign!r}")
        if self.experiment not in ("cooccurrence", "uncertainty", "both"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")

    @property
    def regime_ok(self) -> bool:
        return all(m / self.d <= REGIME_MU_OVER_D for m in self.mu_norms_sq)

    @property
    def kappa(self) -> float:
        """Dimension-to-sample ratio implied by (d, N); echoed in reports."""
        return self.d / self.N

    def regime_report(self) -> dict:
        return {
            "mu_sq_over_d": [m / self.d for m in self.mu_norms_sq],
            "kappa": self.kappa,
            "ok": self.regime_ok,
            "status": "ok" if self.regime_ok else "outside stated regime",
        }


@dataclass(frozen=True)
class EmpiricalError:
    """Monte Carlo error estimate: mean of per-trial error rates and the
    standard error of that mean."""

    mean: float
    se: float
    trials: int

    def __post_init__(self):
        if not (0.0 <= self.mean <= 1.0):
            raise ValueError(f"error rate {self.mean} outside [0, 1]")
        if self.se < 0:
            raise ValueError("standard error must be >= 0")

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "trials": self.trials}


@dataclass(frozen=True)
class TheoryResult:
    kind: str
    config: dict
    empirical: dict
    closed_form: dict
    inequality: dict
    regime: dict
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "empirical": self.empirical,
            "closed_form": self.closed_form,
            "inequality": self.inequality,
            "regime": self.regime,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def sample_class_data(
    config: TheoryConfig,
    class_k: int,
    label: int,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw `count` class-k feature rows from N(label * mu_k, I_d).

    The mean vector is canonically axis-aligned: only its norm enters any
    error formula, so the direction is free."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if label not in (1, -1):
        raise ValueError(f"label must be +1 or -1, got {label}")
    feats = rng.standard_normal((count, config.d))
    feats[:, 0] += label * math.sqrt(config.mu_norms_sq[class_k])
    return feats


def fit_mean_classifier(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Label-weighted sample mean: (1/n) sum_i y_i * phi_i. No iterations."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
        raise ValueError(
            f"shape mismatch: features {features.shape}, labels {labels.shape}"
        )
    if features.shape[0] == 0:
        raise ValueError("need at least one sample")
    return labels @ features / labels.shape[0]


def closed_form_error_single(mu_norm_sq: float, d: int, n: int) -> float:
    """Asymptotic misclassification rate of one mean classifier:
    Phi(-mu^2 / sqrt(mu^2 + d/n))."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if mu_norm_sq == 0:
        return 0.5
    return normal_cdf(-mu_norm_sq / math.sqrt(mu_norm_sq + d / n))


def closed_form_error_cooccur(
    rho: float, mu1_sq: float, mu2_sq: float, d: int, N: int
) -> float:
    """Asymptotic error of the chained two-class score when a fraction rho of
    the N training records carries the jointly observed feature pair:
    Phi(-(rho*mu1^2 + rho*mu2^2) /
        sqrt(rho^2*mu1^2 + rho^2*mu2^2 + rho*d/N + rho*d/N))."""
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    numerator = rho * mu1_sq + rho * mu2_sq
    denominator = math.sqrt(
        rho**2 * mu1_sq + rho**2 * mu2_sq + rho * d / N + rho * d / N
    )
    if denominator == 0.0:
        return 0.5
    return normal_cdf(-numerator / denominator)


def estimate_phat(
    mu_norm_sq: float,
    n: int,
    rng: np.random.Generator,
    sigmoid_sign: str = "as_proof",
) -> float:
    """Monte Carlo estimate of the positive-class sigmoid-score expectation.

    The margin of a positive-class sample against the (converged) mean
    classifier reduces to mu^2 + |mu| * Z with Z standard normal. "standard"
    averages sigmoid(margin); "as_proof" averages the mirrored
    1 / (1 + exp(margin)). The two conventions sum to one.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    margins = mu_norm_sq + math.sqrt(mu_norm_sq) * rng.standard_normal(n)
    if sigmoid_sign == "standard":
        return float(expit(margins).mean())
    if sigmoid_sign == "as_proof":
        return float(expit(-margins).mean())
    raise ValueError(f"unknown sigmoid_sign {sigmoid_sign!r}")


def _trial_rng(seed: int, tag: int, trial: int) -> np.random.Generator:
    # SFC64: fastest numpy bit generator; keyed streams keep trials independent
    # of scheduling order.
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence([seed, tag, trial])))


def _test_error(
    betas: Sequence[np.ndarray],
    mus: Sequence[float],
    test_size: int,
    rng: np.random.Generator,
) -> float:
    """Empirical error of the summed score over balanced fresh test draws.

    Test features are drawn in float32: the per-coordinate quantisation is
    ~1e-7 relative, far below the sampling noise of interest, and the draw is
    the runtime bottleneck."""
    m = test_size // 2
    d = betas[0].shape[0]
    betas32 = [b.astype(np.float32) for b in betas]
    wrong = 0
    for sign in (1.0, -1.0):
        scores = np.zeros(m, dtype=np.float32)
        for beta32, mu in zip(betas32, mus):
            feats = rng.standard_normal((m, d), dtype=np.float32)
            feats[:, 0] += np.float32(sign * mu)
            scores += feats @ beta32
        wrong += int(np.count_nonzero(scores <= 0) if sign > 0 else np.count_nonzero(scores > 0))
    return wrong / (2 * m)


def _aggregate(trial_errors: Sequence[float]) -> EmpiricalError:
    arr = np.asarray(trial_errors, dtype=np.float64)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return EmpiricalError(mean=float(arr.mean()), se=se, trials=int(arr.size))


def _run_trials(trial_fn, trials: int, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(trial_fn, range(trials)))
    return [trial_fn(t) for t in range(trials)]


def _verdict(diff: float, se_diff: float) -> str:
    if abs(diff) <= 3.0 * se_diff:
        return "indistinguishable"
    return "second_scheme_lower" if diff < 0 else "first_scheme_lower"


# ---------------------------------------------------------------------------
# Single-class agreement (building block and standalone check)
# ---------------------------------------------------------------------------

def single_class_error_mc(
    mu_norm_sq: float,
    d: int,
    n: int,
    trials: int,
    test_size: int,
    seed: int,
    workers: int = 1,
) -> EmpiricalError:
    """Monte Carlo misclassification rate of one mean classifier trained on n
    balanced samples, measured on fresh balanced test draws per trial."""
    mu = math.sqrt(mu_norm_sq)

    def one(trial: int) -> float:
        rng = _trial_rng(seed, 0, trial)
        labels = np.repeat([1.0, -1.0], (n + 1) // 2)[:n]
        feats = rng.standard_normal((n, d))
        feats[:, 0] += labels * mu
        beta = fit_mean_classifier(feats, labels)
        return _test_error([beta], [mu], test_size, rng)

    return _aggregate(_run_trials(one, trials, workers))


# ---------------------------------------------------------------------------
# Experiment 1: co-occurrence fraction
# ---------------------------------------------------------------------------

def run_theorem1_experiment(config: TheoryConfig, workers: int = 1) -> TheoryResult:
    """Compare the chained two-class predictor under the natural (rho0) and
    reduced (rho) jointly-positive sampling fractions.

    Per scheme and trial, round(rho * N) jointly positive feature pairs are
    drawn and averaged over the full budget N to form the two weight vectors;
    the summed score is then thresholded at zero on fresh balanced pairs. The
    empirical error of each scheme is reported against the printed closed
    form, together with the observed inequality direction (reported, not
    asserted: direct evaluation of the closed form is decreasing in rho, so
    the reduced-fraction scheme shows the larger error)."""
    if config.K < 2:
        raise ConfigError("co-occurrence experiment needs K >= 2 (uses classes 0 and 1)")
    mu1_sq, mu2_sq = config.mu_norms_sq[0], config.mu_norms_sq[1]
    mu1, mu2 = math.sqrt(mu1_sq), math.sqrt(mu2_sq)
    d, N, m = config.d, config.N, config.test_size

    def one(trial: int) -> tuple[float, float]:
        rng = _trial_rng(config.seed, 1, trial)
        out = []
        for rho_s in (config.rho0, config.rho):
            n_joint = int(round(rho_s * N))
            betas = []
            for mu in (mu1, mu2):
                feats = rng.standard_normal((n_joint, d))
                feats[:, 0] += mu
                betas.append(feats.sum(axis=0) / N)
            out.append(_test_error(betas, (mu1, mu2), m, rng))
        return out[0], out[1]

    results = _run_trials(one, config.trials, workers)
    emp1 = _aggregate([r[0] for r in results])
    emp2 = _aggregate([r[1] for r in results])
    cf1 = closed_form_error_cooccur(config.rho0, mu1_sq, mu2_sq, d, N)
    cf2 = closed_form_error_cooccur(config.rho, mu1_sq, mu2_sq, d, N)

    diff = emp2.mean - emp1.mean
    se_diff = math.hypot(emp1.se, emp2.se)
    grid = sorted({round(r, 10) for r in np.linspace(0.1, 0.9, 9)} | {config.rho, config.rho0})
    return TheoryResult(
        kind="cooccurrence",
        config=asdict(config),
        empirical={"scheme1_rho0": emp1.as_dict(), "scheme2_rho": emp2.as_dict()},
        closed_form={"scheme1_rho0": cf1, "scheme2_rho": cf2},
        inequality={
            "difference_scheme2_minus_scheme1": diff,
            "se_difference": se_diff,
            "verdict": _verdict(diff, se_diff),
            "closed_form_direction": (
                "equal" if cf1 == cf2 else
                "second_scheme_lower" if cf2 < cf1 else "first_scheme_lower"
            ),
        },
        regime=config.regime_report(),
        details={
            "rho_grid": [
                {"rho": r, "closed_form": closed_form_error_cooccur(r, mu1_sq, mu2_sq, d, N)}
                for r in grid
            ],
        },
    )


# ---------------------------------------------------------------------------
# Experiment 2: uncertainty-guided sample allocation
# ---------------------------------------------------------------------------

def _allocate(weights: Sequence[float], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` samples by weight."""
    weights = np.asarray(weights, dtype=np.float64)
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(int)
    remainder = total - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return [int(c) for c in counts]


def run_theorem2_experiment(config: TheoryConfig, workers: int = 1) -> TheoryResult:
    """Compare equal-split training against uncertainty-tilted allocation.

    Scheme 1 gives every class N/K samples. Scheme 2 estimates each class's
    uncertainty score -log(p_k) (p_k per config.sigmoid_sign), then gives
    classes at or above gamma_u a weight of uncertain_boost against 1 for the
    rest, apportioning the same total N. Average per-class error of the K sign
    classifiers is reported per scheme, with per-class closed forms and the
    estimated scores under both sign conventions."""
    if config.K < 2:
        raise ConfigError("uncertainty experiment needs K >= 2")
    d, N, K = config.d, config.N, config.K
    mus = [math.sqrt(m) for m in config.mu_norms_sq]

    phat_rng = _trial_rng(config.seed, 2, 0)
    phat_report = {
        sign: [
            estimate_phat(m, config.test_size, phat_rng, sign)
            for m in config.mu_norms_sq
        ]
        for sign in ("as_proof", "standard")
    }
    phat_cfg = phat_report[config.sigmoid_sign]
    unc_scores = [-math.log(p) if p > 0 else math.inf for p in phat_cfg]
    selected = [score >= config.gamma_u for score in unc_scores]
    if not any(selected):
        raise ConfigError(
            f"no class has uncertainty score >= gamma_u={config.gamma_u}; "
            "the tilted scheme would receive no classes"
        )

    alloc1 = _allocate([1.0] * K, N)
    alloc2 = _allocate(
        [config.uncertain_boost if sel else 1.0 for sel in selected], N
    )

    def scheme_errors(alloc: Sequence[int], rng: np.random.Generator) -> list[float]:
        errors = []
        for k, n_k in enumerate(alloc):
            if n_k == 0:
                errors.append(0.5)  # no data, sign of 0 score: chance level
                continue
            labels = np.repeat([1.0, -1.0], (n_k + 1) // 2)[:n_k]
            feats = rng.standard_normal((n_k, d))
            feats[:, 0] += labels * mus[k]
            beta = fit_mean_classifier(feats, labels)
            errors.append(_test_error([beta], [mus[k]], config.test_size, rng))
        return errors

    def one(trial: int) -> tuple[list[float], list[float]]:
        rng = _trial_rng(config.seed, 2, trial + 1)
        return scheme_errors(alloc1, rng), scheme_errors(alloc2, rng)

    results = _run_trials(one, config.trials, workers)
    per_class_1 = [_aggregate([r[0][k] for r in results]) for k in range(K)]
    per_class_2 = [_aggregate([r[1][k] for r in results]) for k in range(K)]
    avg1 = _aggregate([float(np.mean(r[0])) for r in results])
    avg2 = _aggregate([float(np.mean(r[1])) for r in results])

    def closed(alloc: Sequence[int]) -> list[float]:
        return [
            closed_form_error_single(config.mu_norms_sq[k], d, n_k) if n_k > 0 else 0.5
            for k, n_k in enumerate(alloc)
        ]

    cf1, cf2 = closed(alloc1), closed(alloc2)
    diff = avg2.mean - avg1.mean
    se_diff = math.hypot(avg1.se, avg2.se)
    cf_avg1, cf_avg2 = float(np.mean(cf1)), float(np.mean(cf2))
    return TheoryResult(
        kind="uncertainty",
        config=asdict(config),
        empirical={
            "scheme1_equal": avg1.as_dict(),
            "scheme2_uncertain": avg2.as_dict(),
            "per_class_scheme1": [e.as_dict() for e in per_class_1],
            "per_class_scheme2": [e.as_dict() for e in per_class_2],
        },
        closed_form={
            "scheme1_equal_avg": cf_avg1,
            "scheme2_uncertain_avg": cf_avg2,
            "per_class_scheme1": cf1,
            "per_class_scheme2": cf2,
        },
        inequality={
            "difference_scheme2_minus_scheme1": diff,
            "se_difference": se_diff,
            "verdict": _verdict(diff, se_diff),
            "closed_form_direction": (
                "equal" if cf_avg1 == cf_avg2 else
                "second_scheme_lower" if cf_avg2 < cf_avg1 else "first_scheme_lower"
            ),
        },
        regime=config.regime_report(),
        details={
            "phat": phat_report,
            "uncertainty_scores": unc_scores,
            "selected_classes": selected,
            "allocation_scheme1": alloc1,
            "allocation_scheme2": alloc2,
        },
    )


def run_experiments(config: TheoryConfig, workers: int = 1) -> list[TheoryResult]:
    """Run the experiment(s) named by config.experiment."""
    results = []
    if config.experiment in ("cooccurrence", "both"):
        results.append(run_theorem1_experiment(config, workers=workers))
    if config.experiment in ("uncertainty", "both"):
        results.append(run_theorem2_experiment(config, workers=workers))
    return results
