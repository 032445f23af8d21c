"""
Numerical checks of the optimal-discriminator generator loss and of the
refinement convergence.

Statements about sets of positive measure are checked on discrete
surrogates: atoms stand in for positive-measure sets, and a density floor
delta stands in for the smoothing any finite computation applies to a
divergent integral. Divergence is therefore verified as unbounded growth
in -log(delta), never as a literal infinity.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit, softmax

from src.config import JacobianMode, SmartConfig, TrainConfig
from src.data_models import LabeledBatch
from src.diffusion import ddim_sample, is_non_increasing, refine_step, refinement_sequence
from src.exceptions import InvalidDistributionError, LabError, VerificationError
from src.gan import (
    GanPair,
    build_gan_pair,
    score_regularity,
)
from src.logging_config import get_logger, log_operation
from src.nn import AdamOptimizer, log_sigmoid
from src.schedule import NoiseSchedule, build_schedule
from src.toy_data import GridMixture, OracleNoisePredictor, log_density_t, sample

LOG2 = math.log(2.0)
BOUND_TOLERANCE = 1e-9
WINDOW_CHECK_MAX_T = 80

logger = get_logger(__name__)


@dataclass
class DiscreteDist:
    """
    Probability masses on distinct atoms.

    Attributes:
        support: Atom identifiers (cell indices, tuples, strings)
        mass: Nonnegative masses summing to 1 within 1e-12
    """
    support: List[Hashable]
    mass: np.ndarray

    def __post_init__(self):
        self.support = list(self.support)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.shape != (len(self.support),):
            raise InvalidDistributionError(
                f"{len(self.support)} atoms but {self.mass.shape} masses")
        if len(set(self.support)) != len(self.support):
            raise InvalidDistributionError("support atoms must be distinct")
        if np.any(self.mass < 0) or not np.all(np.isfinite(self.mass)):
            raise InvalidDistributionError("masses must be finite and nonnegative")
        total = float(self.mass.sum())
        if abs(total - 1.0) > 1e-12:
            raise InvalidDistributionError(f"masses sum to {total!r}, not 1")

    @classmethod
    def uniform(cls, atoms: Sequence[Hashable]) -> 'DiscreteDist':
        atoms = list(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @classmethod
    def point(cls, atom: Hashable) -> 'DiscreteDist':
        return cls([atom], np.ones(1))

    @classmethod
    def from_mapping(cls, masses: Mapping[Hashable, float]) -> 'DiscreteDist':
        return cls(list(masses.keys()), np.array(list(masses.values()), dtype=np.float64))

    def mass_of(self, atom: Hashable) -> float:
        try:
            return float(self.mass[self.support.index(atom)])
        except ValueError:
            return 0.0

    @property
    def positive_support(self) -> set:
        return {atom for atom, m in zip(self.support, self.mass) if m > 0}


class SupportRelation(Enum):
    EQUAL = "equal"
    OVERLAPPING = "overlapping"
    A_MINUS_B_POSITIVE = "A-minus-B-positive"


@dataclass
class DivergenceReport:
    """
    Value of the generator loss under the optimal discriminator.

    Attributes:
        value: -sum qA log(qB~ / (qA + qB~)), +inf when divergent
        floor: Density floor delta applied to qB
        support_relation: How supp qA sits relative to supp qB
        escaped_mass: qA mass on atoms where qB has none
        divergent: True when floor = 0 and escaped_mass > 0
    """
    value: float
    floor: float
    support_relation: SupportRelation
    escaped_mass: float = 0.0
    divergent: bool = False


def _support_relation(qA: DiscreteDist, qB: DiscreteDist) -> SupportRelation:
    support_a, support_b = qA.positive_support, qB.positive_support
    if support_a == support_b:
        return SupportRelation.EQUAL
    if support_a - support_b:
        return SupportRelation.A_MINUS_B_POSITIVE
    return SupportRelation.OVERLAPPING


def _loss_terms(mass_a: np.ndarray, mass_b: np.ndarray) -> np.ndarray:
    """qA log(1 + qA / qB) per atom; atoms without qA mass contribute 0."""
    terms = np.zeros_like(mass_a)
    positive = mass_a > 0
    terms[positive] = mass_a[positive] * np.log1p(mass_a[positive] / mass_b[positive])
    return terms


def generator_loss_integral(qA: DiscreteDist, qB: DiscreteDist, floor: float = 0.0) -> DivergenceReport:
    """
    Sum the optimal-discriminator generator loss over the union support.

    With floor = 0 and qA mass outside supp qB the exact value is +inf; the
    report says so instead of evaluating.

    Raises:
        InvalidDistributionError: If floor is negative
    """
    if floor < 0 or not math.isfinite(floor):
        raise InvalidDistributionError(f"floor must be a finite value >= 0, got {floor}")
    atoms = list(dict.fromkeys(list(qA.support) + list(qB.support)))
    mass_a = np.array([qA.mass_of(atom) for atom in atoms])
    mass_b = np.array([qB.mass_of(atom) for atom in atoms])
    relation = _support_relation(qA, qB)
    escaped = float(mass_a[(mass_a > 0) & (mass_b == 0)].sum())

    if floor == 0.0 and escaped > 0:
        return DivergenceReport(value=math.inf, floor=floor, support_relation=relation,
                                escaped_mass=escaped, divergent=True)
    value = float(_loss_terms(mass_a, np.maximum(mass_b, floor)).sum())
    return DivergenceReport(value=value, floor=floor, support_relation=relation, escaped_mass=escaped)


@dataclass
class LowerBoundReport:
    trials: int
    support_size: int
    bound_violations: int
    equality_violations: int
    min_excess: float
    max_equality_error: float

    @property
    def passed(self) -> bool:
        return self.bound_violations == 0 and self.equality_violations == 0


def lower_bound_scan(trials: int, support_size: int, rng: np.random.Generator) -> LowerBoundReport:
    """
    Random Dirichlet pairs on a shared support against the log 2 bound.

    Each trial also evaluates the equality case qA = qA. A violation is a
    value below log 2 - 1e-9, or a value within 1e-9 of log 2 for a pair
    that is not equal.
    """
    if support_size < 1:
        raise LabError(f"support_size must be >= 1, got {support_size}")
    if trials < 1:
        raise LabError(f"trials must be >= 1, got {trials}")
    pairs = rng.dirichlet(np.ones(support_size), size=(trials, 2))
    mass_a, mass_b = pairs[:, 0, :], pairs[:, 1, :]

    values = np.sum(mass_a * np.log1p(mass_a / mass_b), axis=1)
    equal_values = np.sum(mass_a * np.log1p(mass_a / mass_a), axis=1)
    differs = np.max(np.abs(mass_a - mass_b), axis=1) > 1e-6

    bound_violations = int(np.sum(values < LOG2 - BOUND_TOLERANCE))
    equality_violations = int(np.sum(differs & (np.abs(values - LOG2) <= BOUND_TOLERANCE)))
    equality_violations += int(np.sum(np.abs(equal_values - LOG2) > BOUND_TOLERANCE))
    return LowerBoundReport(trials=trials, support_size=support_size,
                            bound_violations=bound_violations,
                            equality_violations=equality_violations,
                            min_excess=float(np.min(values - LOG2)),
                            max_equality_error=float(np.max(np.abs(equal_values - LOG2))))


@dataclass
class DivergenceRateReport:
    escaped_mass: float
    deltas: np.ndarray
    values: np.ndarray
    slope: float

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.escaped_mass) / self.escaped_mass


DEFAULT_DELTAS = 10.0 ** -np.arange(3, 13)


def divergence_rate_scan(escaped_mass: float, deltas: Sequence[float] = DEFAULT_DELTAS) -> DivergenceRateReport:
    """Fit the slope of the loss value against -log(delta) for a pair leaking ``escaped_mass``.

    qA puts 1 - p on atom 0 and p on atom 1; qB is a point mass on atom 0.
    """
    if not 0.0 < escaped_mass < 1.0:
        raise LabError(f"escaped mass must lie in (0, 1), got {escaped_mass}")
    qA = DiscreteDist([0, 1], np.array([1.0 - escaped_mass, escaped_mass]))
    qB = DiscreteDist.point(0)
    deltas = np.asarray(deltas, dtype=np.float64)
    values = np.array([generator_loss_integral(qA, qB, floor=d).value for d in deltas])
    slope = float(np.polyfit(-np.log(deltas), values, 1)[0])
    return DivergenceRateReport(escaped_mass=escaped_mass, deltas=deltas, values=values, slope=slope)


@dataclass
class PerturbationReport:
    value: float
    excess: float

    @property
    def passed(self) -> bool:
        return self.excess > 0


def perturbation_check(dist: DiscreteDist, mass: float, atom_index: int = 0) -> PerturbationReport:
    """Move ``mass`` onto one atom of qB = dist and compare the loss with log 2."""
    if not 0.0 < mass < 1.0:
        raise LabError(f"perturbation mass must lie in (0, 1), got {mass}")
    bumped = dist.mass.copy()
    bumped[atom_index] += mass
    perturbed = DiscreteDist(dist.support, bumped / bumped.sum())
    value = generator_loss_integral(dist, perturbed).value
    return PerturbationReport(value=value, excess=value - LOG2)


@dataclass
class RefinementRun:
    t: int
    terminal_distance: float
    window_means: np.ndarray
    windows_non_increasing: bool
    window_checked: bool = True
    label_match_fraction: float = float('nan')
    min_cross_label_distance: float = float('nan')


@dataclass
class RefinementSuiteReport:
    runs: List[RefinementRun] = field(default_factory=list)
    terminal_decreasing: bool = True
    conditional: bool = False

    @property
    def passed(self) -> bool:
        windows_ok = all(run.windows_non_increasing for run in self.runs if run.window_checked)
        ok = self.terminal_decreasing and windows_ok
        if self.conditional:
            ok = ok and all(run.label_match_fraction == 1.0 for run in self.runs)
        return ok


def refinement_convergence_suite(mix: GridMixture, t_list: Sequence[int], k: int, n: int,
                                 rng: np.random.Generator, conditional: bool = False,
                                 sched: Optional[NoiseSchedule] = None) -> RefinementSuiteReport:
    """
    Iterate the oracle refinement from uniform points on [-4, 4]^2 at each t.

    Terminal distances must fall strictly as t falls. For t <= 80, 10-step
    window means must not rise by more than three standard errors within a
    run; larger t settle too slowly for the window test and are recorded
    only. Conditional runs draw a label per point and refine with that
    component alone.
    """
    if not t_list:
        raise LabError("t_list must not be empty")
    sched = sched or build_schedule()
    oracle = OracleNoisePredictor(mix, sched)
    report = RefinementSuiteReport(conditional=conditional)

    for t in t_list:
        y0 = rng.uniform(-4.0, 4.0, size=(n, 2))
        labels = rng.integers(0, mix.num_components, size=n) if conditional else None
        trace = refinement_sequence(oracle, sched, y0, t, k, rng, mix, labels=labels, keep_batches=False)
        windows = trace.window_means(10)
        run = RefinementRun(t=t, terminal_distance=float(trace.mean_distance[-1]), window_means=windows,
                            windows_non_increasing=is_non_increasing(windows, trace.window_standard_errors(10)),
                            window_checked=t <= WINDOW_CHECK_MAX_T)
        if conditional:
            final = trace.final
            own = np.linalg.norm(final - mix.centers[labels], axis=1)
            others = np.linalg.norm(final[:, None, :] - mix.centers[None, :, :], axis=2)
            others[np.arange(n), labels] = np.inf
            run.label_match_fraction = float(np.mean(own < others.min(axis=1)))
            run.min_cross_label_distance = float(others.min()) if mix.num_components > 1 else float('inf')
        report.runs.append(run)
        logger.debug(f"refinement at t={t}: terminal distance {run.terminal_distance:.5f}")

    by_t = sorted(report.runs, key=lambda run: run.t, reverse=True)
    terminal = [run.terminal_distance for run in by_t]
    report.terminal_decreasing = all(b < a for a, b in zip(terminal, terminal[1:]))
    return report


def closed_form_logit(mix: GridMixture, offset: Sequence[float], x: np.ndarray) -> np.ndarray:
    """log q0 - log pg where pg is ``mix`` shifted by ``offset``."""
    if mix.sigma_data <= 0:
        raise LabError("the closed-form discriminator needs sigma_data > 0")
    sched = build_schedule(1)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    log_real = log_density_t(mix, x, 0, sched)
    log_fake = log_density_t(_displaced(mix, offset), x, 0, sched)
    return np.asarray(log_real) - np.asarray(log_fake)


def closed_form_discriminator(mix: GridMixture, offset: Sequence[float], x: np.ndarray) -> np.ndarray:
    """q0 / (q0 + pg) where pg is ``mix`` shifted by ``offset``."""
    return expit(closed_form_logit(mix, offset, x))


def _displaced(mix: GridMixture, offset: Sequence[float]) -> GridMixture:
    return GridMixture(mix.centers + np.asarray(offset, dtype=np.float64), mix.sigma_data, mix.spacing)


def _mixture_score(mix: GridMixture, x: np.ndarray) -> np.ndarray:
    """grad log q(x) of the undiffused mixture."""
    variance = mix.sigma_data ** 2
    log_terms = -np.sum((x[:, None, :] - mix.centers[None, :, :]) ** 2, axis=2) / (2.0 * variance)
    return -(x - softmax(log_terms, axis=1) @ mix.centers) / variance


def closed_form_logit_gradient(mix: GridMixture, offset: Sequence[float], x: np.ndarray) -> np.ndarray:
    """d/dx of ``closed_form_logit``, one row per point."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return _mixture_score(mix, x) - _mixture_score(_displaced(mix, offset), x)


@dataclass
class SharpeningStage:
    """
    Generator-side gradients on the fake batch for one sharpened discriminator.

    The discriminator logit is (1 - weight) * trained + weight * closed form.
    Norms are means over the batch of per-sample gradient norms.
    """
    weight: float
    d_fake_mean: float
    g_loss: float
    adversarial_norm: float
    saturating_norm: float
    combined_norm: float


@dataclass
class GradientVanishingReport:
    stages: List[SharpeningStage]
    regularity_norm: float
    optimal_d_fake_mean: float
    trained_d_fake_mean: float

    @property
    def saturating_monotone(self) -> bool:
        norms = [stage.saturating_norm for stage in self.stages]
        return all(b < a for a, b in zip(norms, norms[1:]))

    @property
    def g_loss_rising(self) -> bool:
        values = [stage.g_loss for stage in self.stages]
        return all(b > a for a, b in zip(values, values[1:]))

    @property
    def regularity_bounded(self) -> bool:
        return self.regularity_norm > 0.1

    @property
    def passed(self) -> bool:
        return self.saturating_monotone and self.g_loss_rising and self.regularity_bounded


def _mean_norm(vectors: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(vectors, axis=1)))


def gradient_vanishing_check(pair: GanPair, mix: GridMixture, offset: Sequence[float], pred,
                             sched: NoiseSchedule, smart: SmartConfig, rng: np.random.Generator,
                             n: int = 512, stages: int = 5, train_steps: int = 1000,
                             lr: float = 1e-3) -> GradientVanishingReport:
    """
    Sharpen a discriminator on real versus displaced points toward the optimum.

    A copy of the pair's discriminator is first trained for ``train_steps``
    Adam steps. Its logit is then blended with the closed-form optimal logit
    using weights 2^-(stages-1), ..., 1/2, 1, and at each weight the
    generator gradient on a fixed displaced batch is recorded for g_loss
    (-log D), for the minimax form log(1 - D) and for
    g_loss + lambda * regularity. The minimax gradient is D * grad logit and
    dies with D on the fakes; the g_loss gradient (1 - D) * grad logit tends
    to the closed-form logit gradient, which the displacement keeps large.

    Args:
        pair: Supplies the discriminator architecture and initial weights
        mix: Real data
        offset: Displacement of the fake batch
        pred: Frozen noise predictor or oracle for the regularity
        sched: Schedule of ``pred``
        smart: Regularity weight, interval and Jacobian mode
        rng: Random stream for batches and regularity draws
    """
    if stages < 1:
        raise LabError(f"stages must be >= 1, got {stages}")
    sharpened = pair.copy()
    if sharpened.conditional:
        raise LabError("the gradient-vanishing check takes an unconditional pair")
    offset = np.asarray(offset, dtype=np.float64)
    optimizer = AdamOptimizer(sharpened.discriminator, lr=lr, beta1=0.5, beta2=0.999)
    disc = sharpened.discriminator

    for _ in range(train_steps):
        real = sample(mix, n, rng, with_labels=False)
        moving = sample(mix, n, rng, with_labels=False).points + offset
        _discriminator_loss_on_points(sharpened, real, moving)
        optimizer.step()

    fakes = sample(mix, n, rng, with_labels=False).points + offset
    regularity = score_regularity(pred, sched, fakes, smart, rng)
    regularity_grad = regularity.grad * n

    trained_logit = disc.forward(fakes)[:, 0]
    trained_grad = disc.backward(np.ones((n, 1)), accumulate_params=False)
    optimal_logit = closed_form_logit(mix, offset, fakes)
    optimal_grad = closed_form_logit_gradient(mix, offset, fakes)

    records: List[SharpeningStage] = []
    for stage in range(stages):
        weight = 2.0 ** (stage - stages + 1)
        logit = (1.0 - weight) * trained_logit + weight * optimal_logit
        grad_logit = (1.0 - weight) * trained_grad + weight * optimal_grad
        d_fake = expit(logit)
        adversarial = -(1.0 - d_fake)[:, None] * grad_logit
        records.append(SharpeningStage(weight=weight, d_fake_mean=float(np.mean(d_fake)),
                                       g_loss=-float(np.mean(log_sigmoid(logit))),
                                       adversarial_norm=_mean_norm(adversarial),
                                       saturating_norm=_mean_norm(d_fake[:, None] * grad_logit),
                                       combined_norm=_mean_norm(adversarial
                                                                + smart.lambda_score * regularity_grad)))
        logger.debug(f"sharpening weight {weight:g}: saturating norm {records[-1].saturating_norm:.3e}, "
                     f"g_loss norm {records[-1].adversarial_norm:.3e}")

    return GradientVanishingReport(stages=records, regularity_norm=_mean_norm(regularity_grad),
                                   optimal_d_fake_mean=float(np.mean(expit(optimal_logit))),
                                   trained_d_fake_mean=float(np.mean(expit(trained_logit))))


def _discriminator_loss_on_points(pair: GanPair, real: LabeledBatch, fakes: np.ndarray) -> float:
    """d_loss with the fake half given as points rather than latents."""
    disc = pair.discriminator
    real_logits = disc.forward(real.points)
    disc.backward((expit(real_logits) - 1.0) / real_logits.shape[0])
    fake_logits = disc.forward(fakes)
    disc.backward(expit(fake_logits) / fake_logits.shape[0])
    return -float(np.mean(log_sigmoid(real_logits)) + np.mean(log_sigmoid(-fake_logits)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class VerificationSummary:
    checks: List[CheckResult] = field(default_factory=list)

    def add(self, name: str, passed: bool, value: float, detail: str = "") -> None:
        self.checks.append(CheckResult(name, bool(passed), float(value), detail.replace(',', ';')))
        logger.info(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

    @property
    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]

    @property
    def passed(self) -> bool:
        return not self.failed

    def rows(self):
        return [(check.name, int(check.passed), check.value, check.detail) for check in self.checks]

    def raise_for_failures(self) -> None:
        if self.failed:
            raise VerificationError(f"{len(self.failed)} of {len(self.checks)} checks failed: "
                                    f"{', '.join(self.failed)}", failed_checks=self.failed)


SUMMARY_HEADER = ('check', 'passed', 'value', 'detail')


def run_verification_suite(cfg: TrainConfig, seed: Optional[int] = None) -> VerificationSummary:
    """Run every numerical check with the analytic oracle; never raises on a failed check."""
    seed = cfg.seed if seed is None else seed
    lower_seq, refine_seq, cond_seq, exact_seq, identity_seq, vanishing_seq = \
        np.random.SeedSequence([seed, 3]).spawn(6)
    summary = VerificationSummary()
    sched = build_schedule(cfg.dpm.T, cfg.dpm.beta_start, cfg.dpm.beta_end)
    mix = GridMixture.grid(sigma_data=cfg.data.sigma)

    with log_operation(logger, "verification suite", phase='verify'):
        pair_uniform = DiscreteDist.uniform(['a', 'b'])
        report = generator_loss_integral(pair_uniform, pair_uniform)
        summary.add('equal_distributions_log2', abs(report.value - LOG2) <= BOUND_TOLERANCE, report.value,
                    f"value {report.value:.12f} vs log 2")

        report = generator_loss_integral(DiscreteDist.point('a'), DiscreteDist.point('b'), floor=1e-9)
        expected = -math.log(1e-9 / (1.0 + 1e-9))
        summary.add('disjoint_point_masses', abs(report.value - expected) <= 1e-9 * expected, report.value,
                    f"value {report.value:.6f} vs {expected:.6f}")

        qA = DiscreteDist.from_mapping({'a': 0.5, 'b': 0.5, 'c': 0.0})
        qB = DiscreteDist.from_mapping({'a': 0.25, 'b': 0.75})
        padded = generator_loss_integral(qA, DiscreteDist.from_mapping({'a': 0.25, 'b': 0.75, 'd': 0.0}))
        plain = generator_loss_integral(DiscreteDist.from_mapping({'a': 0.5, 'b': 0.5}), qB)
        summary.add('zero_mass_atoms_ignored', padded.value == plain.value, padded.value,
                    f"padded {padded.value:.12f} vs plain {plain.value:.12f}")

        escaped = generator_loss_integral(DiscreteDist.uniform(['a', 'b']), DiscreteDist.point('a'))
        summary.add('zero_floor_divergent', escaped.divergent and math.isinf(escaped.value), escaped.escaped_mass,
                    f"escaped mass {escaped.escaped_mass} with support relation {escaped.support_relation.value}")

        bound = lower_bound_scan(10_000, 8, np.random.default_rng(lower_seq))
        summary.add('lower_bound_scan', bound.passed, bound.min_excess,
                    f"{bound.trials} pairs: {bound.bound_violations} bound and "
                    f"{bound.equality_violations} equality violations")

        perturbed = perturbation_check(DiscreteDist.uniform(range(8)), 1e-3, atom_index=3)
        summary.add('perturbation_above_log2', perturbed.passed, perturbed.excess,
                    f"excess over log 2 {perturbed.excess:.3e}")

        for p in (0.1, 0.3, 0.7):
            rate = divergence_rate_scan(p)
            summary.add(f'divergence_rate_p{p}', rate.relative_error <= 0.01, rate.slope,
                        f"slope {rate.slope:.6f} vs {p}")

        t = cfg.refine.t
        suite = refinement_convergence_suite(mix, [4 * t, 2 * t, t], cfg.refine.steps, cfg.refine.samples,
                                             np.random.default_rng(refine_seq), sched=sched)
        terminal = suite.runs[-1].terminal_distance
        summary.add('refinement_convergence', suite.passed and terminal <= 0.05, terminal,
                    "terminal distances " + ' > '.join(f"{run.terminal_distance:.4f}" for run in suite.runs))

        cond = refinement_convergence_suite(mix, [t], cfg.refine.steps, 1024,
                                            np.random.default_rng(cond_seq), conditional=True, sched=sched)
        run = cond.runs[0]
        summary.add('conditional_refinement', run.label_match_fraction == 1.0
                    and run.min_cross_label_distance >= mix.spacing / 2, run.label_match_fraction,
                    f"label match {run.label_match_fraction:.4f}; "
                    f"closest foreign center {run.min_cross_label_distance:.3f}")

        exact_rng = np.random.default_rng(exact_seq)
        x0 = np.array([[0.7, -1.3]])
        point_oracle = OracleNoisePredictor(GridMixture(x0, sigma_data=0.0), sched)
        starts = exact_rng.uniform(-4.0, 4.0, size=(100, 2))
        refined = refine_step(point_oracle, sched, starts, t, exact_rng.standard_normal((100, 2)))
        sampled = ddim_sample(point_oracle, sched, 100, cfg.eval.ddim_steps, exact_rng)
        error = max(np.abs(refined - x0).max(), np.abs(sampled - x0).max())
        summary.add('point_mass_exactness', error <= 1e-6, error, f"max deviation {error:.3e}")

        identity_rng = np.random.default_rng(identity_seq)
        points = identity_rng.uniform(-4.0, 4.0, size=(1000, 2))
        oracle = OracleNoisePredictor(mix, sched)
        wide = SmartConfig(t_lo=1, t_hi=sched.T, jacobian=JacobianMode.OMIT)
        reg = score_regularity(oracle, sched, points, wide, identity_rng)
        refined = refine_step(oracle, sched, points, reg.t, reg.eps)
        ratio = (sched.alpha[reg.t] / sched.sigma[reg.t]) ** 2
        gap = np.abs(np.sum((refined - points) ** 2, axis=1) * ratio - reg.per_sample)
        relative = float(np.max(gap / np.maximum(reg.per_sample, 1.0)))
        summary.add('refinement_residual_identity', relative <= 1e-10, relative,
                    f"max relative gap {relative:.3e}")

        vanishing_rng = np.random.default_rng(vanishing_seq)
        pair = build_gan_pair(cfg.gan.latent_dim, vanishing_rng)
        vanishing = gradient_vanishing_check(pair, mix, (0.5, 0.5), oracle, sched,
                                             SmartConfig(lambda_score=cfg.smart.lambda_score), vanishing_rng)
        summary.add('gradient_vanishing', vanishing.passed, vanishing.stages[-1].saturating_norm,
                    "saturating norms " + ' > '.join(f"{s.saturating_norm:.3e}" for s in vanishing.stages)
                    + "; g_loss " + ' < '.join(f"{s.g_loss:.2f}" for s in vanishing.stages)
                    + f"; g_loss norm {vanishing.stages[-1].adversarial_norm:.1f}"
                    + f"; regularity norm {vanishing.regularity_norm:.3f}")

    logger.info(f"verification: {len(summary.checks) - len(summary.failed)}/{len(summary.checks)} checks passed")
    return summary
