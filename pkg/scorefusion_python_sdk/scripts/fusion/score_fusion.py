import itertools
import logging

from dataclasses import dataclass, field, replace

import numpy as np

from numerize import numerize
from scipy.special import softmax

from ..core import OuSchedule, SampleSet, SimplexWeights
from ..diffusion.ou_process import _decay_and_var, conditional_score, forward_sample
from ..diffusion.sampler import fused_score
from ..errors import RejectedInputError, TrainingDivergedError
from ..fusion_utils import as_stream, make_dataframe, save_json_file_to_datastore

GAMMA_WEIGHTINGS = ("uniform", "sigma_squared")

# Largest k solved by face enumeration, beyond it projected gradient is used
MAX_ENUMERATED_K = 6
FACE_REGULARIZATION = 1e-10
FEASIBILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FusionTrainConfig:
    """
    Settings of the score-matching fusion fit. T_tilde and t_min are absolute
    times; left as None they resolve to 0.05 T and 1e-3 T in for_schedule.
    """
    T_tilde: float = None
    t_min: float = None
    gamma_weighting: str = "uniform"
    n_mc: int = 100_000
    batch_size: int = 4096
    learning_rate: float = 0.1
    max_epochs: int = 200
    tol: float = 1e-6
    seed: int = 0

    @classmethod
    def for_schedule(cls, s: OuSchedule, **overrides):
        cfg = cls(**overrides)
        return cfg.resolved(s)

    def resolved(self, s: OuSchedule):
        cfg = replace(
            self,
            T_tilde=0.05 * s.horizon_T if self.T_tilde is None else float(self.T_tilde),
            t_min=1e-3 * s.horizon_T if self.t_min is None else float(self.t_min),
        )
        cfg.validate(s)
        return cfg

    def validate(self, s: OuSchedule):
        if self.T_tilde is None or self.t_min is None:
            raise RejectedInputError("Resolve T_tilde and t_min against a schedule first!")
        if not 0 < self.t_min < self.T_tilde <= s.horizon_T:
            raise RejectedInputError(
                "Need 0 < t_min < T_tilde <= T, got t_min={} T_tilde={} T={}".format(
                    self.t_min, self.T_tilde, s.horizon_T
                )
            )
        if self.gamma_weighting not in GAMMA_WEIGHTINGS:
            raise RejectedInputError(
                "gamma_weighting must be one of {}, got {}".format(GAMMA_WEIGHTINGS, self.gamma_weighting)
            )
        if int(self.n_mc) != self.n_mc or self.n_mc < 1:
            raise RejectedInputError("n_mc must be a positive integer, got {}".format(self.n_mc))
        if self.batch_size < 1 or self.max_epochs < 1 or not self.learning_rate > 0:
            raise RejectedInputError("SGD needs positive batch_size, max_epochs and learning_rate!")

    def to_dict(self) -> dict:
        return {
            "T_tilde": self.T_tilde, "t_min": self.t_min,
            "gamma_weighting": self.gamma_weighting, "n_mc": int(self.n_mc),
            "batch_size": int(self.batch_size), "learning_rate": self.learning_rate,
            "max_epochs": int(self.max_epochs), "tol": self.tol, "seed": int(self.seed),
        }


@dataclass(frozen=True, eq=False)
class ScoreMatchingBatch:
    """
    Replayable Monte-Carlo draws of the fusion loss: starting points, times,
    diffused points, regression targets and per-draw weights gamma(t)
    """
    x0: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    target: np.ndarray
    gamma: np.ndarray

    @property
    def n(self) -> int:
        return int(len(self.t))

    def subset(self, idx):
        return ScoreMatchingBatch(
            self.x0[idx], self.t[idx], self.x_t[idx], self.target[idx], self.gamma[idx]
        )


@dataclass(frozen=True, eq=False)
class FusionQuadratic:
    """
    The fusion loss written as L(lambda) = lambda^T A lambda - 2 b^T lambda + c
    """
    A: np.ndarray
    b: np.ndarray
    c: float
    n_mc: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape != (len(b), len(b)):
            raise RejectedInputError("A must be {0}x{0} to match b, got {1}".format(len(b), A.shape))
        scale = max(1.0, float(np.max(np.abs(A))))
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise RejectedInputError("A must be symmetric!")
        if np.min(np.linalg.eigvalsh(A)) < -1e-10 * np.linalg.norm(A):
            raise RejectedInputError("A must be positive semidefinite!")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def k(self) -> int:
        return int(len(self.b))

    def loss(self, w) -> float:
        lam = w.lam if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
        return float(lam @ self.A @ lam - 2.0 * self.b @ lam + self.c)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(), "b": self.b.tolist(), "c": self.c,
            "n_mc": int(self.n_mc), "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: dict):
        return cls(data["A"], data["b"], data["c"], data["n_mc"], data.get("metadata", {}))

    def save(self, filename: str, out_dir: str = None):
        return save_json_file_to_datastore(filename, self.to_dict(), out_dir)


@dataclass(frozen=True)
class SimplexSolution:
    weights: SimplexWeights
    loss: float
    metadata: dict = field(default_factory=dict)


@dataclass
class SgdResult:
    weights: SimplexWeights
    curve: list


def draw_score_matching_batch(
    data: SampleSet, s: OuSchedule, cfg: FusionTrainConfig, rng, n: int = None,
    target_field=None
) -> ScoreMatchingBatch:
    """
    Draw (x0, t, x_t) triples: x0 resampled with replacement from data,
    t ~ U[t_min, T_tilde] and x_t from the forward kernel. The regression
    target is the conditional score, or target_field's exact score if given.

    Parameters
    ----------
    data : SampleSet
        target training samples.
    s : OuSchedule
        forward process.
    cfg : FusionTrainConfig
        resolved config.
    rng : np.random.Generator or int
        random stream.
    n : int, optional
        number of draws, cfg.n_mc by default.
    target_field : ScoreField, optional
        exact target score to regress on instead of the denoising target.

    Returns
    -------
    ScoreMatchingBatch

    """
    cfg = cfg.resolved(s)
    if data.n == 0:
        raise RejectedInputError("Fusion needs target samples!")
    n = cfg.n_mc if n is None else n
    if int(n) != n or n < 1:
        raise RejectedInputError("Monte-Carlo count must be a positive integer, got {}".format(n))
    stream, _ = as_stream(rng)

    x0 = data.rows[stream.integers(0, data.n, size=int(n))]
    t = stream.uniform(cfg.t_min, cfg.T_tilde, size=int(n))
    x_t = forward_sample(x0, s, t, stream)
    if target_field is None:
        target = conditional_score(x_t, x0, s, t)
    else:
        target = target_field.evaluate(t, x_t)

    if cfg.gamma_weighting == "uniform":
        gamma = np.ones(int(n))
    else:
        gamma = _decay_and_var(s, t)[1]
    return ScoreMatchingBatch(x0, t, x_t, np.asarray(target, dtype=float).reshape(x_t.shape), gamma)


def _aux_scores(aux, batch: ScoreMatchingBatch):
    aux = list(aux)
    if len(aux) == 0:
        raise RejectedInputError("Fusion needs at least one auxiliary score!")
    dims = {f.dim for f in aux}
    if len(dims) != 1 or dims.pop() != batch.x_t.shape[1]:
        raise RejectedInputError("Auxiliary scores must share the data dimension!")
    return np.stack([f.evaluate(batch.t, batch.x_t) for f in aux], axis=1)


def _moments(scores, target, gamma):
    n = len(gamma)
    A = np.einsum("n,nid,njd->ij", gamma, scores, scores) / n
    b = np.einsum("n,nid,nd->i", gamma, scores, target) / n
    return 0.5 * (A + A.T), b


def quadratic_from_batch(aux, batch: ScoreMatchingBatch, metadata: dict = None) -> FusionQuadratic:
    """
    Moments A_ij = mean gamma <s_i, s_j>, b_i = mean gamma <s_i, target> and
    c = mean gamma |target|^2 over the draws of a batch
    """
    scores = _aux_scores(aux, batch)
    A, b = _moments(scores, batch.target, batch.gamma)
    c = float(np.mean(batch.gamma * np.sum(batch.target ** 2, axis=1)))
    return FusionQuadratic(A, b, c, batch.n, metadata or {})


def batch_loss(aux, batch: ScoreMatchingBatch, w: SimplexWeights) -> float:
    """
    Direct evaluation of mean gamma |sum_i lambda_i s_i(t, x_t) - target|^2
    """
    residual = fused_score(aux, w).evaluate(batch.t, batch.x_t) - batch.target
    return float(np.mean(batch.gamma * np.sum(residual ** 2, axis=1)))


def assemble_quadratic(
    aux, data: SampleSet, s: OuSchedule, cfg: FusionTrainConfig, rng, target_field=None
) -> FusionQuadratic:
    """
    Monte-Carlo quadratic of the fusion score-matching loss on [t_min, T_tilde]

    Parameters
    ----------
    aux : sequence of ScoreField
        frozen auxiliary scores.
    data : SampleSet
        target training samples.
    s : OuSchedule
        forward process.
    cfg : FusionTrainConfig
        fit settings.
    rng : np.random.Generator or int
        random stream.
    target_field : ScoreField, optional
        exact target score, the denoising target is used when omitted.

    Returns
    -------
    FusionQuadratic

    """
    cfg = cfg.resolved(s)
    batch = draw_score_matching_batch(data, s, cfg, rng, target_field=target_field)
    logging.getLogger(__name__).info(
        "Assembled fusion quadratic from {} pairs on t in [{:.3g}, {:.3g}]".format(
            numerize.numerize(batch.n), cfg.t_min, cfg.T_tilde
        )
    )
    return quadratic_from_batch(aux, batch, metadata={
        "T_tilde": cfg.T_tilde,
        "t_min": cfg.t_min,
        "gamma_weighting": cfg.gamma_weighting,
        "target": "dsm" if target_field is None else "exact",
    })


def _solve_face(A, b, face):
    """
    Stationary point of the loss on the affine hull of a face, from the
    system [[A_SS, 1], [1^T, 0]] [lambda_S; nu] = [b_S; 1]
    """
    A_ss = A[np.ix_(face, face)]
    ones = np.ones((len(face), 1))
    rhs = np.concatenate([b[list(face)], [1.0]])

    def kkt(block):
        return np.block([[block, ones], [ones.T, np.zeros((1, 1))]])

    regularized = False
    try:
        system = kkt(A_ss)
        if np.linalg.cond(system) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned face")
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        regularized = True
        sol = np.linalg.solve(kkt(A_ss + FACE_REGULARIZATION * np.eye(len(face))), rhs)

    lam = np.zeros(len(b))
    lam[list(face)] = sol[:-1]
    return lam, regularized


def project_to_simplex(v):
    """
    Euclidean projection onto the probability simplex by sorting
    """
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _projected_gradient(q: FusionQuadratic, max_iter: int = 100_000, tol: float = 1e-14):
    lipschitz = 2.0 * max(float(np.max(np.linalg.eigvalsh(q.A))), 1e-12)
    x = np.full(q.k, 1.0 / q.k)
    for _ in range(max_iter):
        x_new = project_to_simplex(x - (2.0 * (q.A @ x) - 2.0 * q.b) / lipschitz)
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        x = x_new
    return x


def solve_simplex_quadratic(q: FusionQuadratic) -> SimplexSolution:
    """
    Minimize lambda^T A lambda - 2 b^T lambda over the simplex.

    Up to MAX_ENUMERATED_K weights every face is solved exactly and the
    feasible candidate with the lowest loss wins (ties go to the
    lexicographically smallest weights). Larger problems use projected
    gradient descent.

    Parameters
    ----------
    q : FusionQuadratic
        the quadratic.

    Returns
    -------
    SimplexSolution
        weights, loss and metadata {method, regularized}.

    """
    log = logging.getLogger(__name__)

    if q.k > MAX_ENUMERATED_K:
        lam = _projected_gradient(q)
        weights = SimplexWeights.from_clipped(lam)
        return SimplexSolution(weights, q.loss(weights), {"method": "projected_gradient", "regularized": False})

    best = None
    any_regularized = False
    for size in range(1, q.k + 1):
        for face in itertools.combinations(range(q.k), size):
            lam, regularized = _solve_face(q.A, q.b, face)
            any_regularized |= regularized
            if np.any(lam < -FEASIBILITY_TOLERANCE):
                continue
            lam = np.clip(lam, 0.0, None)
            lam /= lam.sum()
            candidate = (q.loss(lam), tuple(lam))
            if best is None:
                best = candidate
                continue
            tie = abs(candidate[0] - best[0]) <= 1e-12 * max(1.0, abs(best[0]))
            if (tie and candidate[1] < best[1]) or (not tie and candidate[0] < best[0]):
                best = candidate

    if any_regularized:
        log.warning("Singular face systems were regularized with {:g} I".format(FACE_REGULARIZATION))

    weights = SimplexWeights.from_clipped(np.array(best[1]))
    return SimplexSolution(weights, q.loss(weights), {"method": "active_set", "regularized": any_regularized})


def sgd_train(
    aux, data: SampleSet, s: OuSchedule, cfg: FusionTrainConfig, rng,
    batch: ScoreMatchingBatch = None
) -> SgdResult:
    """
    Fit lambda = softmax(theta) by minibatch gradient descent on the
    score-matching loss, theta initialized N(0, 0.01)

    The loss is quadratic in lambda, so the minibatch gradient is
    2 (A_B lambda - b_B) pulled back through the softmax Jacobian
    diag(lambda) - lambda lambda^T.

    Parameters
    ----------
    aux : sequence of ScoreField
        frozen auxiliary scores.
    data : SampleSet
        target training samples.
    s : OuSchedule
        forward process.
    cfg : FusionTrainConfig
        fit settings.
    rng : np.random.Generator or int
        random stream for the draws, the initialization and the shuffles.
    batch : ScoreMatchingBatch, optional
        replay these draws instead of drawing cfg.n_mc new ones.

    Returns
    -------
    SgdResult
        weights and the full-pool loss after every epoch.

    """
    log = logging.getLogger(__name__)
    cfg = cfg.resolved(s)
    stream, _ = as_stream(rng)
    if batch is None:
        batch = draw_score_matching_batch(data, s, cfg, stream)

    scores = _aux_scores(aux, batch)
    pool = quadratic_from_batch(aux, batch)
    theta = stream.normal(0.0, 0.1, size=scores.shape[1])

    curve = [pool.loss(softmax(theta))]
    for epoch in range(int(cfg.max_epochs)):
        order = stream.permutation(batch.n)
        for start in range(0, batch.n, int(cfg.batch_size)):
            idx = order[start:start + int(cfg.batch_size)]
            A_b, b_b = _moments(scores[idx], batch.target[idx], batch.gamma[idx])
            lam = softmax(theta)
            grad_lam = 2.0 * (A_b @ lam - b_b)
            theta = theta - cfg.learning_rate * (lam * grad_lam - lam * (lam @ grad_lam))

        loss = pool.loss(softmax(theta))
        if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
            raise TrainingDivergedError("Fusion SGD diverged at epoch {}".format(epoch), curve)
        previous = curve[-1]
        curve.append(loss)
        log.debug("Fusion SGD epoch {} loss {:.8g}".format(epoch, loss))
        if abs(previous - loss) <= cfg.tol * max(abs(previous), 1e-300):
            break

    weights = SimplexWeights.from_softmax(theta)
    log.info("Fusion SGD weights {} after {} epochs".format(np.round(weights.lam, 4).tolist(), len(curve) - 1))
    return SgdResult(weights, curve)


@dataclass
class ScoreFusionResult:
    weights: SimplexWeights
    fused_field: object
    quadratic: FusionQuadratic = None
    curve: list = None


def fit_score_fusion(
    aux, data: SampleSet, s: OuSchedule, cfg: FusionTrainConfig, rng, solver: str = "closed_form"
) -> ScoreFusionResult:
    """
    Learn fusion weights by score matching and return the fused field ready
    for reverse sampling. solver is "closed_form" or "sgd".
    """
    aux = list(aux)
    if solver == "closed_form":
        q = assemble_quadratic(aux, data, s, cfg, rng)
        solution = solve_simplex_quadratic(q)
        return ScoreFusionResult(solution.weights, fused_score(aux, solution.weights), quadratic=q)
    if solver == "sgd":
        result = sgd_train(aux, data, s, cfg, rng)
        return ScoreFusionResult(result.weights, fused_score(aux, result.weights), curve=result.curve)
    raise RejectedInputError("solver must be closed_form or sgd, got {}".format(solver))


@dataclass
class OracleCheck:
    lambda_dsm: SimplexWeights
    lambda_exact: SimplexWeights
    gap: float


def oracle_vs_dsm_check(aux, target, s: OuSchedule, cfg: FusionTrainConfig, rng) -> OracleCheck:
    """
    Fit the weights twice on the same draws, once against denoising targets
    and once against the target's exact score, and report the l-inf gap

    Parameters
    ----------
    aux : sequence of ScoreField
        frozen auxiliary scores.
    target : GaussianMixture or GridDensity
        target with sample() and score_field().
    s : OuSchedule
        forward process.
    cfg : FusionTrainConfig
        fit settings, n_mc draws of the target are used as data.
    rng : np.random.Generator or int
        random stream.

    Returns
    -------
    OracleCheck

    """
    cfg = cfg.resolved(s)
    stream, _ = as_stream(rng)
    data = target.sample(cfg.n_mc, stream, provenance="oracle_check_target")
    batch = draw_score_matching_batch(data, s, cfg, stream)
    exact = replace_target(batch, target.score_field(s).evaluate(batch.t, batch.x_t))

    lambda_dsm = solve_simplex_quadratic(quadratic_from_batch(aux, batch)).weights
    lambda_exact = solve_simplex_quadratic(quadratic_from_batch(aux, exact)).weights
    gap = float(np.max(np.abs(lambda_dsm.lam - lambda_exact.lam)))

    logging.getLogger(__name__).info(
        "Denoising vs exact fusion weights: {} vs {} (gap {:.3g})".format(
            np.round(lambda_dsm.lam, 4).tolist(), np.round(lambda_exact.lam, 4).tolist(), gap
        )
    )
    return OracleCheck(lambda_dsm, lambda_exact, gap)


def replace_target(batch: ScoreMatchingBatch, target) -> ScoreMatchingBatch:
    return replace(batch, target=np.asarray(target, dtype=float).reshape(batch.x_t.shape))


def sweep_t_tilde(aux, target, s: OuSchedule, cfg: FusionTrainConfig, t_tildes, seeds, lam_true):
    """
    l-inf error of the exact-score fusion weights against planted weights for
    each truncation horizon T_tilde and seed

    Parameters
    ----------
    aux : sequence of ScoreField
        frozen auxiliary scores.
    target : GaussianMixture or GridDensity
        planted target with sample() and score_field().
    s : OuSchedule
        forward process.
    cfg : FusionTrainConfig
        base settings, T_tilde is overridden per row.
    t_tildes : sequence of float
        absolute truncation horizons.
    seeds : sequence of int
        one fit per seed.
    lam_true : SimplexWeights
        planted weights.

    Returns
    -------
    pd.DataFrame
        columns t_tilde, seed, error and the fitted weights.

    """
    aux = list(aux)
    target_field = target.score_field(s)
    rows = {"t_tilde": [], "seed": [], "error": []}
    weights = []
    for t_tilde in t_tildes:
        sweep_cfg = replace(cfg, T_tilde=float(t_tilde)).resolved(s)
        for seed in seeds:
            stream = as_stream(int(seed))[0]
            data = target.sample(sweep_cfg.n_mc, stream, provenance="t_tilde_sweep_target")
            q = assemble_quadratic(aux, data, s, sweep_cfg, stream, target_field=target_field)
            lam = solve_simplex_quadratic(q).weights.lam
            rows["t_tilde"].append(float(t_tilde))
            rows["seed"].append(int(seed))
            rows["error"].append(float(np.max(np.abs(lam - lam_true.lam))))
            weights.append(lam)

    for i in range(len(aux)):
        rows["lambda_{}".format(i)] = [w[i] for w in weights]
    return make_dataframe(rows)
