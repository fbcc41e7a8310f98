"""Independent oracles and the property-check suites built on them.

Every numerically nontrivial operation has a second, structurally
different route to the same answer: the simplex projection is re-derived
by exhaustive KKT support enumeration, the hull projection by a
long-horizon projected gradient run over the vertex simplex, and every
analytic gradient by central finite differences.  The suites here are
shared by the command line ``check`` subcommand and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from . import estimators as est
from . import model as mdl
from .kernels import pgd_simplex_lsq
from .polytope import (
    StructureFamily,
    gibbs_marginals,
    map_decode,
    project_polytope,
    project_simplex,
    softmax,
    sparsemap,
)
from .rng import make_rng, normals, randint


@dataclass
class SuiteResult:
    name: str
    n_pass: int = 0
    n_fail: int = 0
    failures: List[str] = field(default_factory=list)

    def record(self, ok: bool, describe: Callable[[], str]) -> None:
        if ok:
            self.n_pass += 1
        else:
            self.n_fail += 1
            if len(self.failures) < 5:
                self.failures.append(describe())

    @property
    def ok(self) -> bool:
        return self.n_fail == 0


def kkt_simplex_project(v: np.ndarray) -> np.ndarray:
    """Simplex projection by trying every support set and checking KKT.

    For each nonempty support S the equality-constrained minimizer is
    p_i = v_i - tau with tau = (sum_S v - 1) / |S|; it is the global
    optimum iff p is nonnegative on S and v_j - tau <= 0 off S.
    """
    v = np.asarray(v, dtype=np.float64)
    k = v.size
    for mask in range(1, 2**k):
        idx = [i for i in range(k) if (mask >> i) & 1]
        tau = (v[idx].sum() - 1.0) / len(idx)
        p = np.zeros(k)
        p[idx] = v[idx] - tau
        if p[idx].min() < -1e-12:
            continue
        off = [i for i in range(k) if not ((mask >> i) & 1)]
        if off and (v[off] - tau).max() > 1e-12:
            continue
        return np.maximum(p, 0.0)
    raise AssertionError("no KKT-consistent support found")


def pgd_polytope_oracle(
    family: StructureFamily, v: np.ndarray, max_iter: int = 100_000
) -> tuple[np.ndarray, float]:
    """Hull projection via projected gradient over the vertex simplex.

    Minimizes the squared distance of a convex combination of vertices to
    ``v`` with a conservative 1/L step, running up to ``max_iter``
    iterations (early exit once the duality gap is negligible).  Returns
    the mean point and the squared-distance objective.
    """
    M = family.vertices
    n = M.shape[0]
    G = M @ M.T
    c = M @ np.asarray(v, dtype=np.float64)
    lam = float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / (2.0 * lam)
    q0 = np.full(n, 1.0 / n)
    q = pgd_simplex_lsq(G, c, q0, step, max_iter, tol=1e-13)
    mu = q @ M
    diff = mu - v
    return mu, float(diff @ diff)


def check_simplex(
    n_vectors: int = 1000,
    seed: int = 2024,
    projector: Callable[[np.ndarray], np.ndarray] = project_simplex,
    tol: float = 1e-10,
) -> SuiteResult:
    """Sort-and-threshold projection against the exhaustive KKT oracle."""
    result = SuiteResult("simplex")
    rng = make_rng(seed)
    for i in range(n_vectors):
        k = 2 + i % 7
        scale = 10.0 ** (randint(rng, 3) - 1)
        v = scale * normals(rng, k)
        got = projector(v)
        want = kkt_simplex_project(v)
        err = np.abs(got - want).max()
        result.record(
            err <= tol,
            lambda v=v, err=err: f"input {np.array2string(v, precision=17)} max error {err:.3e}",
        )
    return result


def check_polytope(
    n_inputs: int = 100,
    seed: int = 77,
    projector=project_polytope,
    tol: float = 1e-6,
) -> SuiteResult:
    """Active-set hull projection against the long-horizon gradient oracle."""
    result = SuiteResult("polytope")
    rng = make_rng(seed)
    families = [StructureFamily.arborescence(3), StructureFamily.k_subset(6, 3)]
    per_family = n_inputs // len(families)
    for family in families:
        for _ in range(per_family):
            v = 1.5 * normals(rng, family.K)
            point = projector(family, v)
            diff = point.mu - v
            obj = float(diff @ diff)
            _, obj_oracle = pgd_polytope_oracle(family, v)
            gapv = abs(obj - obj_oracle)
            result.record(
                gapv <= tol,
                lambda family=family, v=v, gapv=gapv: (
                    f"{family.kind.value}{family.params} input "
                    f"{np.array2string(v, precision=17)} objective gap {gapv:.3e}"
                ),
            )
    return result


def _random_model(rng, family, d_x=5, d_y=3, hidden=8, loss=mdl.LossKind.SQUARED_ERROR):
    seed = randint(rng, 10**6)
    return mdl.init_model(family, d_x, d_y, hidden, loss, seed)


def check_gradients(n_instances: int = 25, seed: int = 31) -> SuiteResult:
    """Analytic gradients against central finite differences."""
    result = SuiteResult("gradients")
    rng = make_rng(seed)
    families = [
        StructureFamily.categorical(4),
        StructureFamily.k_subset(5, 2),
        StructureFamily.arborescence(3),
    ]
    for loss_kind in (mdl.LossKind.SQUARED_ERROR, mdl.LossKind.SOFTMAX_CROSS_ENTROPY):
        for family in families:
            for _ in range(n_instances):
                model = _random_model(rng, family, loss=loss_kind)
                x = normals(rng, model.d_x)
                y = randint(rng, model.d_y) if loss_kind is mdl.LossKind.SOFTMAX_CROSS_ENTROPY else normals(rng, model.d_y)
                mu = gibbs_marginals(family, normals(rng, family.K))[1].mu
                trace = mdl.forward(model, x, mu, y)
                _, gamma = mdl.decoder_backward(model, trace)
                err = mdl.finite_diff_check(
                    lambda m: mdl.forward(model, x, m, y).loss, mu, gamma
                )
                result.record(err <= 1e-6, lambda err=err: f"gamma fd error {err:.3e}")
                s = normals(rng, family.K)
                relaxed_point = gibbs_marginals(family, s)[1].mu
                gamma_rel = mdl.gamma_at(model, x, y, relaxed_point)
                analytic = est.relaxed_grad(s, gamma_rel, 1.0, family=family)
                err = mdl.finite_diff_check(
                    lambda sv: mdl.forward(
                        model, x, gibbs_marginals(family, sv)[1].mu, y
                    ).loss,
                    s,
                    analytic,
                )
                result.record(err <= 1e-6, lambda err=err: f"relaxed fd error {err:.3e}")
                losses, _ = mdl.vertex_losses(model, x, y)
                analytic = est.minrisk_grad(family, s, losses)
                def risk(sv, family=family, losses=losses):
                    t = family.vertices @ sv
                    w = np.exp(t - t.max())
                    return float((w / w.sum()) @ losses)
                err = mdl.finite_diff_check(risk, s, analytic)
                result.record(err <= 1e-6, lambda err=err: f"minrisk fd error {err:.3e}")
    return result


def check_identities(n_instances: int = 60, seed: int = 5150) -> SuiteResult:
    """Algebraic identities among the estimator rules."""
    result = SuiteResult("identities")
    rng = make_rng(seed)
    families = [
        StructureFamily.categorical(5),
        StructureFamily.k_subset(5, 2),
        StructureFamily.arborescence(3),
    ]
    for i in range(n_instances):
        family = families[i % len(families)]
        s = 2.0 * normals(rng, family.K)
        gamma = normals(rng, family.K)
        eta = 10.0 ** (randint(rng, 3) - 1)
        z_hat = map_decode(family, s)
        spigot = est.spigot_grad(family, z_hat, gamma, eta)
        start = est.make_init_point(family, s, est.InitPoint.MAP_VERTEX)
        target = est.pullback_descend(family, start, lambda mu: gamma, [eta])
        composed = est.perceptron_grad(family, s, target)
        err = np.abs(spigot - composed).max()
        result.record(err <= 1e-12, lambda err=err: f"spigot composition error {err:.3e}")
        ste = est.ste_grad(gamma, eta)
        err = np.abs(ste - (z_hat - (z_hat - eta * gamma))).max()
        result.record(err <= 1e-12, lambda err=err: f"ste identity error {err:.3e}")
        ce = est.ce_grad_unstructured(s, gamma, eta)
        want = softmax(s) - kkt_simplex_project(softmax(s) - eta * gamma)
        err = np.abs(ce - want).max()
        result.record(err <= 1e-10, lambda err=err: f"ce identity error {err:.3e}")
        eg = est.eg_grad_unstructured(s, gamma, eta)
        shifted = s - eta * gamma
        w = np.exp(shifted - shifted.max())
        err = np.abs(eg - (softmax(s) - w / w.sum())).max()
        result.record(err <= 1e-12, lambda err=err: f"eg identity error {err:.3e}")
        result.record(
            abs(eg.sum()) <= 1e-12, lambda eg=eg: f"eg output sums to {eg.sum():.3e}"
        )
        if family.kind.value == "categorical":
            err = np.abs(sparsemap(family, s).mu - project_simplex(s)).max()
            result.record(err <= 1e-10, lambda err=err: f"categorical collapse error {err:.3e}")
            err = np.abs(gibbs_marginals(family, s)[1].mu - softmax(s)).max()
            result.record(err <= 1e-10, lambda err=err: f"gibbs collapse error {err:.3e}")
    return result


SUITES = {
    "simplex": check_simplex,
    "polytope": check_polytope,
    "gradients": check_gradients,
    "identities": check_identities,
}


def run_suites(names=None) -> List[SuiteResult]:
    chosen = list(SUITES) if names is None else list(names)
    results = []
    for name in chosen:
        results.append(SUITES[name]())
    return results
