"""End-to-end acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, listed in the terminal summary.
"""

import time

import numpy as np

from groupoidlin.averaging import ClosedFormMap, Perturbation, defect, sample_composable_pairs
from groupoidlin.cli import haar_report
from groupoidlin.groupoid import Cocycle, PolynomialField, action_groupoid, adjoint_action, ball_sample, twisted_groupoid
from groupoidlin.liegroup import LieGroup
from groupoidlin.scenarios import bundled
from groupoidlin.testkit import bch_stability, gkr_case, random_triples, verify_cocycle_identity

OUTPUTS = ("report.json", "trace.csv", "defect.dat", "order_fit.dat")


def test_01_abelian_single_step(cli, acceptance):
    run = cli("run", "bundled:u1-onestep")
    rep = run.json("report.json")
    ok = run.code == 0 and rep["iterations"] == 1 and rep["final_defect"] <= 1e-10 and run.seconds < 10
    acceptance.check(
        1, "U(1) converges in one step", ok,
        f"steps {rep['iterations']}, defect {rep['final_defect']:.2e}, {run.seconds:.1f} s",
    )


def test_02_quadratic_convergence(cli, acceptance):
    t0 = time.perf_counter()
    study = cli("convergence-study", "bundled:su2-study")
    run = cli("run", "bundled:su2-quadratic", "--workers", "1")
    seconds = time.perf_counter() - t0
    spread = study.json("study.json")["constant_spread"]
    fit = run.json("report.json")["order_fit"]
    order = fit.get("order")
    usable = len(fit.get("used", []))
    ok = study.code == 0 and spread is not None and spread <= 3 and order is not None and order >= 1.8
    ok = ok and usable >= 3 and seconds <= 300
    acceptance.check(
        2, "quadratic convergence on SU(2)", ok,
        f"constant spread x{spread:.3f}, order {order:.3f} from {usable} iterates, {seconds:.0f} s",
    )


def test_03_reaches_noise_floor(cli, acceptance):
    rep = cli("run", "bundled:su2-quadratic", "--workers", "1").json("report.json")
    target = max(1e-8, 3 * rep["noise_floor"])
    ok = rep["final_defect"] <= target and rep["iterations"] <= 12 and rep["pinned_residual"] == 0
    acceptance.check(
        3, "final defect at the noise floor", ok,
        f"defect {rep['final_defect']:.2e} <= {target:.1e} in {rep['iterations']} steps, pin {rep['pinned_residual']}",
    )


def test_04_lemma_haar_system(acceptance):
    t0 = time.perf_counter()
    rep = haar_report(bundled("su2-quadratic"))
    seconds = time.perf_counter() - t0
    lemma = next(r for r in rep["systems"] if r["system"] == "lemma")
    ok = lemma["mass_deviation"] <= 1e-9 and lemma["invariance_residual"] <= 1e-6
    ok = ok and rep["total_variation"] <= 1e-5 and seconds < 60
    acceptance.check(
        4, "lemma Haar system matches the direct one", ok,
        f"mass {lemma['mass_deviation']:.1e}, invariance {lemma['invariance_residual']:.1e}, "
        f"TV {rep['total_variation']:.1e}, {seconds:.1f} s",
    )


def test_05_cocycle_identity(acceptance):
    G = LieGroup("su2")
    base = action_groupoid(adjoint_action(G), 0.2)
    twist = PolynomialField(np.array([[1, 0, 0], [0, 1, 1]]), np.array([[0.3, 0.0, 0.1], [0.0, -0.2, 0.2]]))
    chart = twisted_groupoid(base, Cocycle(G, twist))
    eta = Perturbation(chart, seed=0)
    # a perturbation of the chart's known homomorphism, so the defect is set by eps
    phi = ClosedFormMap(chart, lambda p: chart.reference_correction(p) + 1e-2 * eta(p))
    pairs = sample_composable_pairs(chart, ball_sample(3, 0.2, 3), 7, seed=0)
    size = 10_000
    delta = defect(phi, pairs).sup
    residual = verify_cocycle_identity(phi, chart, random_triples(chart, size, seed=0))
    ok = 5e-3 <= delta <= 2e-2 and residual <= 1e-11
    acceptance.check(5, "cocycle identity", ok, f"{size} triples, defect {delta:.1e}, residual {residual:.1e}")


def test_06_group_case(acceptance):
    res = gkr_case("su2", 0.05)
    ok = res.result.status == "converged" and res.homomorphism_residual <= 1e-9 and res.identity_distance <= 0.1
    acceptance.check(
        6, "near-identity self-map of SU(2)", ok,
        f"residual {res.homomorphism_residual:.1e}, distance to identity {res.identity_distance:.1e}",
    )


def test_07_linearization(cli, acceptance):
    run = cli("linearize", "bundled:u1-onestep")
    lin = run.json("report.json")["linearization"]
    axioms = max(lin["action_axioms"].values())
    ratio = lin["halving"]["ratio"]
    ok = run.code == 0 and axioms <= 1e-6 and lin["representation_residual"] <= 1e-6 and 3.2 <= ratio <= 4.8
    acceptance.check(
        7, "linearisation of the induced action", ok,
        f"axioms {axioms:.1e}, representation {lin['representation_residual']:.1e}, halving ratio {ratio:.3f}",
    )


def test_08_bch_constant(acceptance):
    cals, ratio = bch_stability("su2", 10_000)
    ok = all(c.sample_size >= 10_000 for c in cals) and 1 / 1.5 <= ratio <= 1.5
    acceptance.check(
        8, "BCH constant stable under halving the cap", ok,
        f"C = {cals[0].constant:.3f} / {cals[-1].constant:.3f}, ratio {ratio:.3f}",
    )


def test_09_mutated_associativity(cli, acceptance):
    run = cli("check-axioms", "bundled:mutated-product")
    assoc = run.json("axioms.json")["residuals"]["associativity"]
    ok = assoc > 1e-3 and run.code != 0
    acceptance.check(9, "mutated product rejected", ok, f"associativity {assoc:.2e}, exit {run.code}")


def test_10_worker_determinism(cli, acceptance):
    one = cli("run", "bundled:su2-quadratic", "--workers", "1")
    eight = cli("run", "bundled:su2-quadratic", "--workers", "8")
    same = [name for name in OUTPUTS if one.bytes(name) == eight.bytes(name)]
    ok = len(same) == len(OUTPUTS)
    acceptance.check(10, "outputs independent of worker count", ok, f"{len(same)}/{len(OUTPUTS)} files identical")
