//! Acceptance suite: one pass/fail line per criterion, non-zero exit if
//! any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tancert::bestapprox::{
    check_certificate_perturbation, check_certificate_stationarity, check_strong_chip, equivalence_audit,
    find_certificate, project_feasible, verify_projection,
};
use tancert::cli::run_with;
use tancert::cones::{audit_polar_identity, check_nrcq, Attribution, LocalData, NearConvexVerdict, Settings};
use tancert::fixtures::{builtin, BUILTIN};
use tancert::geometry::{cones_equal, normal_cone, polar_fg, polar_h, project_polyhedron, Cone, ConeFg, ConeH, Halfspace, Polyhedron};
use tancert::instance::{Instance, SetKind};
use tancert::oracles::{grid_project, random_instance, GridSpec};
use tancert::tanconvex::PolytopeV;
use tancert::Provenance;

type Outcome = Result<String, String>;

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn load(id: &str) -> Instance {
    builtin(id).expect("built-in fixture").expect("fixture loads")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn subdiff_of(local: &LocalData, j: usize) -> Result<&PolytopeV, String> {
    local.subdiffs[j].as_ref().map(|(p, _)| p).ok_or_else(|| format!("no subdifferential for constraint {j}"))
}

fn poly(vs: &[&[f64]]) -> PolytopeV {
    PolytopeV::new(vs.iter().map(|v| v.to_vec()).collect()).unwrap()
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("tancert").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

fn linearized_and_tangent_in_the_plane() -> Outcome {
    let inst = load("ex21");
    let s = Settings::default();
    let local = LocalData::new(&inst, &[0.0, 0.0], &s).map_err(e)?;
    let want = [poly(&[&[-1.0, -1.0], &[-1.0, 1.0]]), poly(&[&[0.0, 2.0]]), poly(&[&[0.0, -2.0]])];
    let mut worst = 0.0f64;
    for (j, w) in want.iter().enumerate() {
        let (got, prov) = local.subdiffs[j].as_ref().ok_or("missing subdifferential")?;
        ensure(*prov == Provenance::Sampled, "subdifferentials should be reconstructed")?;
        worst = worst.max(got.hausdorff(w));
    }
    ensure(worst <= 1e-4, format!("Hausdorff error {worst:e}"))?;
    let nrcq = check_nrcq(2, &local.active_polytopes()).map_err(e)?;
    ensure(!nrcq.holds, "NRCQ should fail")?;
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    ensure(audit.nacq.holds, "NACQ should hold")?;
    let eq = cones_equal(&Cone::H(local.d()), &Cone::Fg(audit.contingent.hull.clone()), 1e-3).map_err(e)?;
    ensure(eq, format!("D != sampled T hull {:?}", audit.contingent.hull.rays()))?;
    Ok(format!("max Hausdorff {worst:.1e}; NRCQ fails, NACQ holds, D = T"))
}

fn chip_without_abadie() -> Outcome {
    let inst = load("ex31");
    let s = Settings::default();
    let local = LocalData::new(&inst, &[0.0], &s).map_err(e)?;
    let h = subdiff_of(&local, 0)?.hausdorff(&poly(&[&[-2.0], &[0.0]]));
    ensure(h <= 1e-6, format!("subdifferential error {h:e}"))?;
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    let chip = check_strong_chip(&inst, &local, &audit).map_err(e)?;
    ensure(chip.holds == Some(true), "strong CHIP should hold")?;
    let full = Cone::Fg(ConeFg::full(1));
    let left = Cone::Fg(chip.left.clone().ok_or("no left side")?);
    let right = Cone::Fg(chip.right.clone().ok_or("no right side")?);
    ensure(cones_equal(&left, &full, 0.0).map_err(e)?, "left side is not R")?;
    ensure(cones_equal(&right, &full, 0.0).map_err(e)?, "right side is not R")?;
    let nonneg = Cone::Fg(ConeFg::new(1, vec![vec![1.0]]));
    ensure(cones_equal(&Cone::Fg(chip.normal_c.clone()), &nonneg, 0.0).map_err(e)?, "(C - x̄)° != [0, ∞)")?;
    let nonpos = Cone::Fg(ConeFg::new(1, vec![vec![-1.0]]));
    ensure(cones_equal(&Cone::Fg(audit.m.clone()), &nonpos, 0.0).map_err(e)?, "M != (-∞, 0]")?;
    ensure(chip.right_uses_m, "M should stand in for (K - x̄)°")?;
    ensure(!audit.nacq.holds, "NACQ should fail")?;
    Ok(format!("subdifferential error {h:.1e}; R = (-∞,0] + [0,∞); NACQ fails"))
}

fn near_convexity_failure() -> Outcome {
    let inst = load("ex3x");
    let s = Settings::default();
    let local = LocalData::new(&inst, &[2.0], &s).map_err(e)?;
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    match &audit.near_convex {
        NearConvexVerdict::Fail { witness, .. } => ensure(witness == &vec![4.0], format!("witness {witness:?}"))?,
        v => return Err(format!("near convexity should fail, got {v:?}")),
    }
    ensure(audit.nacq.holds, "NACQ should hold")?;
    ensure(cones_equal(&Cone::Fg(audit.m.clone()), &Cone::Fg(ConeFg::full(1)), 0.0).map_err(e)?, "M != R")?;
    let pk = audit.polar_k.as_ref().map_err(e)?;
    let nonpos = Cone::Fg(ConeFg::new(1, vec![vec![-1.0]]));
    ensure(cones_equal(&Cone::Fg(pk.cone.clone()), &nonpos, 1e-3).map_err(e)?, "(K - x̄)° != (-∞, 0]")?;
    ensure(audit.identity_holds() == Some(false), "the identity should fail")?;
    ensure(
        audit.attribution() == Attribution::HypothesisFailure(vec!["near convexity"]),
        format!("attribution {:?}", audit.attribution()),
    )?;
    let (code, _) = cli(&["audit", "--instance", "ex3x"]);
    ensure(code == 1, format!("audit exit code {code}"))?;
    Ok("witness y = 4; M = R vs (K - x̄)° = (-∞,0] attributed to near convexity; exit 1".into())
}

fn identity_without_abadie() -> Outcome {
    let inst = load("ex34");
    let s = Settings::default();
    let local = LocalData::new(&inst, &[0.0], &s).map_err(e)?;
    for j in 0..2 {
        let h = subdiff_of(&local, j)?.hausdorff(&PolytopeV::singleton(vec![0.0]));
        ensure(h <= 1e-6, format!("subdifferential {j} error {h:e}"))?;
    }
    ensure(cones_equal(&Cone::H(local.d()), &Cone::H(ConeH::full(1)), 0.0).map_err(e)?, "D != R")?;
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    ensure(audit.contingent.hull.is_zero(), "sampled T should be {0}")?;
    ensure(!audit.nacq.holds, "NACQ should fail")?;
    ensure(audit.m.is_zero(), "M should be {0}")?;
    let pkt = audit.polar_kt.as_ref().map_err(e)?;
    ensure(cones_equal(&Cone::Fg(pkt.cone.clone()), &Cone::Fg(ConeFg::full(1)), 0.0).map_err(e)?, "(K̃ - x̄)° != R")?;
    ensure(audit.m_in_polar_kt == Some(true) && audit.polar_kt_in_m == Some(false), "M = {0} vs R not detected")?;
    ensure(audit.identity_holds() == Some(false), "the identity should fail")?;
    Ok("D = R, T = {0}, NACQ fails; M = {0} vs (K̃ - x̄)° = R".into())
}

fn wedge_certificates() -> Outcome {
    let inst = load("ex41");
    let s = Settings::default();
    let xbar = vec![0.0, 0.0];
    let local = LocalData::new(&inst, &xbar, &s).map_err(e)?;
    for x2 in [-1.0, -2.0] {
        let x = vec![0.0, x2];
        let p = project_feasible(&inst, &x).map_err(e)?;
        ensure(p.provenance == Provenance::Exact && dist(&p.point, &xbar) <= 1e-8, format!("P({x:?}) = {:?}", p.point))?;
        let c = find_certificate(&inst, &local, &x).map_err(e)?.ok_or("no certificate")?;
        ensure(c.lambda[0] == 0.0 && (c.lambda[1] + x2).abs() <= 1e-8, format!("lambda {:?}", c.lambda))?;
        ensure(dist(&c.eta[1], &[0.0, -1.0]) <= 1e-8, format!("eta_2 {:?}", c.eta[1]))?;
        ensure(check_certificate_perturbation(&inst, &c, &x, &xbar).map_err(e)?.holds, "perturbation check")?;
        ensure(check_certificate_stationarity(&inst, &c, &x, &xbar).map_err(e)?.holds, "stationarity check")?;
    }
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    ensure(check_strong_chip(&inst, &local, &audit).map_err(e)?.holds == Some(true), "strong CHIP should hold")?;
    Ok("P = (0,0) exactly; lambda = (0, -x2), eta_2 = (0,-1); both checks pass; strong CHIP holds".into())
}

fn interval_equivalence() -> Outcome {
    let inst = load("ex42");
    let s = Settings::default();
    let local = LocalData::new(&inst, &[1.0], &s).map_err(e)?;
    let xs: Vec<Vec<f64>> = [0.0, 0.5, -3.0].iter().map(|v| vec![*v]).collect();
    for x in &xs {
        let p = project_feasible(&inst, x).map_err(e)?;
        ensure((p.point[0] - 1.0).abs() <= 1e-8, format!("P({x:?}) = {:?}", p.point))?;
        let c = find_certificate(&inst, &local, x).map_err(e)?.ok_or("no certificate")?;
        let want = (1.0 - x[0]) / 3.0;
        ensure((c.lambda[0] - want).abs() <= 1e-8 && c.lambda[1] == 0.0, format!("lambda {:?}", c.lambda))?;
    }
    let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
    let rep = equivalence_audit(&inst, &local, &audit, &xs, &s).map_err(e)?;
    ensure(rep.all_agree() && rep.rows.iter().all(|r| r.is_projection), "projection, perturbation and stationarity should agree")?;
    Ok("P = 1; lambda_1 = (1 - x)/3; all three characterizations agree at x = 0, 0.5, -3".into())
}

#[derive(Default)]
struct Counts {
    instances: usize,
    anchors: usize,
    nrcq_without_nacq: usize,
    /// Violations where a generator of D leaves the tangent cone of C.
    nrcq_without_nacq_c_cuts: usize,
    nrcq_holds: usize,
    tangent_outside_d: usize,
    near_convex_passes: usize,
    certificates: usize,
    unsound: usize,
    completeness_cases: usize,
    incomplete: usize,
    involution_failures: usize,
    oracle_disagreements: usize,
    grid_queries: usize,
}

fn random_properties() -> Outcome {
    let s = Settings::default();
    let mut c = Counts::default();
    let mut failures: Vec<String> = Vec::new();
    for seed in 0..100u64 {
        let n = 1 + (seed % 3) as usize;
        let m = 1 + ((seed / 3) % 4) as usize;
        let inst = random_instance(seed, n, m).map_err(e)?;
        c.instances += 1;
        let bbox = inst.bbox.clone().ok_or("random instance without box")?;
        let spec = GridSpec::new(bbox.clone());
        let oracle = inst.oracle(SetKind::KTilde);
        if !inst.hrep_check.as_ref().is_some_and(|h| h.agrees()) {
            c.oracle_disagreements += 1;
            failures.push(format!("seed {seed}: feasible_hrep disagrees with the constraints"));
        }
        // The grid only sees the box, so queries are kept when their exact
        // projection lies inside it.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queries = 0;
        for _ in 0..1000 {
            if queries == 10 {
                break;
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = project_feasible(&inst, &x).map_err(e)?.point;
            if exact.iter().zip(&bbox).any(|(v, (lo, hi))| v < lo || v > hi) {
                continue;
            }
            queries += 1;
            let grid = grid_project(&oracle, &x, &spec, &[]).map_err(e)?;
            c.grid_queries += 1;
            if (dist(&x, &exact) - dist(&x, &grid)).abs() > 1e-3 {
                c.oracle_disagreements += 1;
                failures.push(format!("seed {seed}: grid and exact projections of {x:?} differ"));
            }
        }
        for anchor in &inst.anchors {
            c.anchors += 1;
            let xbar = &anchor.xbar;
            let local = LocalData::new(&inst, xbar, &s).map_err(e)?;
            let m_cone = local.m();
            if !cones_equal(&Cone::Fg(polar_h(&polar_fg(&m_cone))), &Cone::Fg(m_cone.clone()), 1e-8).map_err(e)? {
                c.involution_failures += 1;
                failures.push(format!("seed {seed}: M°° != M"));
            }
            if !cones_equal(&Cone::H(polar_fg(&m_cone)), &Cone::H(local.d()), 1e-8).map_err(e)? {
                c.involution_failures += 1;
                failures.push(format!("seed {seed}: M° != D"));
            }
            let nrcq = check_nrcq(n, &local.active_polytopes()).map_err(e)?;
            let audit = audit_polar_identity(&inst, &local, &s).map_err(e)?;
            if nrcq.holds {
                c.nrcq_holds += 1;
                if !audit.nacq.holds {
                    c.nrcq_without_nacq += 1;
                    let nc = normal_cone(&inst.c, xbar, 1e-9).map_err(e)?;
                    let leaves_c = audit.nacq.missing.iter().any(|g| {
                        nc.rays().iter().any(|r| r.iter().zip(g).map(|(p, q)| p * q).sum::<f64>() > 1e-9)
                    });
                    c.nrcq_without_nacq_c_cuts += usize::from(leaves_c);
                    failures.push(format!("seed {seed}: NRCQ holds but NACQ fails (D leaves T_C: {leaves_c})"));
                }
            }
            if audit.near_convex.passed() {
                c.near_convex_passes += 1;
                if !audit.t_in_d {
                    c.tangent_outside_d += 1;
                    failures.push(format!("seed {seed}: sampled T not inside D"));
                }
            }
            for x in &anchor.xs {
                let cert = find_certificate(&inst, &local, x).map_err(e)?;
                let accepted = match &cert {
                    Some(ct) => {
                        check_certificate_perturbation(&inst, ct, x, xbar).map_err(e)?.holds
                            && check_certificate_stationarity(&inst, ct, x, xbar).map_err(e)?.holds
                    }
                    None => false,
                };
                if accepted {
                    c.certificates += 1;
                    let g = grid_project(&oracle, x, &spec, &[]).map_err(e)?;
                    if (dist(x, xbar) - dist(x, &g)).abs() > 1e-3 {
                        c.unsound += 1;
                        failures.push(format!("seed {seed}: certificate at {x:?} but x̄ is not the grid projection"));
                    }
                }
                let is_proj = dist(&project_feasible(&inst, x).map_err(e)?.point, xbar) <= 1e-8;
                if audit.nacq.holds && audit.near_convex.passed() && is_proj {
                    c.completeness_cases += 1;
                    if !accepted {
                        c.incomplete += 1;
                        failures.push(format!("seed {seed}: x̄ = P(x) for {x:?} but no certificate"));
                    }
                }
            }
        }
    }
    let summary = format!(
        "{} instances, {} anchors: (a) {}/{} NRCQ anchors without NACQ ({} with D leaving T_C); (b) {}/{} near-convex anchors with T ⊄ D; \
         (c) {}/{} unsound certificates; (d) {}/{} incomplete; (e) {} involution, {} oracle failures over {} grid queries",
        c.instances,
        c.anchors,
        c.nrcq_without_nacq,
        c.nrcq_holds,
        c.nrcq_without_nacq_c_cuts,
        c.tangent_outside_d,
        c.near_convex_passes,
        c.unsound,
        c.certificates,
        c.incomplete,
        c.completeness_cases,
        c.involution_failures,
        c.oracle_disagreements,
        c.grid_queries,
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; first: {}", failures[0]))
    }
}

fn random_polyhedron(rng: &mut ChaCha8Rng, n: usize) -> Polyhedron {
    let mut hs = Vec::new();
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        hs.push(Halfspace::new(a.clone(), 1.0));
        a[i] = -1.0;
        hs.push(Halfspace::new(a, 1.0));
    }
    let centre: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    for _ in 0..rng.gen_range(1..=4) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.iter().zip(&centre).map(|(p, q)| p * q).sum::<f64>() + rng.gen_range(0.05..0.5);
        hs.push(Halfspace::new(a, b));
    }
    Polyhedron::new(n, hs).unwrap()
}

fn projection_characterization_against_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut disagreements = 0;
    let mut positives = 0;
    for trial in 0..200 {
        let n = 2 + trial % 2;
        let p = random_polyhedron(&mut rng, n);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let proj = project_polyhedron(&p, &x).map_err(e)?;
        // Half the candidates are the projection; the rest are feasible
        // points at least 0.3 away from it.
        let x0 = if trial % 2 == 0 {
            proj.clone()
        } else {
            let mut found = None;
            for _ in 0..10_000 {
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if p.contains(&y, 0.0) && dist(&y, &proj) >= 0.3 {
                    found = Some(y);
                    break;
                }
            }
            match found {
                Some(y) => y,
                None => proj.clone(),
            }
        };
        let verdict = verify_projection(&p, &x, &x0, 1e-8).map_err(e)?;
        let bbox = vec![(-1.0, 1.0); n];
        let g = grid_project(&p, &x, &GridSpec::new(bbox), &[]).map_err(e)?;
        let truth = (dist(&x, &x0) - dist(&x, &g)).abs() <= 1e-3;
        positives += usize::from(truth);
        if verdict != truth {
            disagreements += 1;
        }
    }
    ensure(disagreements == 0, format!("{disagreements} disagreements"))?;
    Ok(format!("200 pairs, {positives} projections, 0 disagreements"))
}

fn replay_examples() -> Outcome {
    let (code, out) = cli(&["paper-examples"]);
    ensure(code == 0, format!("paper-examples exit {code}: {out}"))?;
    // Each fixture gets one perturbed expectation; the replay must fail and
    // name it.
    let perturb = |id: &str, text: &str| -> String {
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        let exp = v["expected"].as_object_mut().unwrap();
        match id {
            "ex21" | "ex3x" => exp.insert("nacq".into(), false.into()),
            "ex31" | "ex34" => exp.insert("nacq".into(), true.into()),
            "ex41" => exp.insert("strong_chip".into(), false.into()),
            _ => exp.insert("certificates".into(), serde_json::json!([{"x": [0], "lambda": [0.3, 0]}])),
        };
        serde_json::to_string(&v).unwrap()
    };
    for (victim, _) in BUILTIN {
        let dir = tempfile::tempdir().map_err(e)?;
        for (id, text) in BUILTIN {
            let body = if id == victim { perturb(id, text) } else { text.to_string() };
            std::fs::write(dir.path().join(format!("{id}.json")), body).map_err(e)?;
        }
        let (code, out) = cli(&["paper-examples", "--fixtures", &dir.path().to_string_lossy()]);
        ensure(code == 1, format!("perturbed {victim}: exit {code}"))?;
        let named = out.lines().filter(|l| l.starts_with("FAIL")).all(|l| l.starts_with(&format!("FAIL {victim} ")));
        ensure(named && out.contains(&format!("FAIL {victim} ")), format!("perturbed {victim}: {out}"))?;
    }
    Ok("all six fixtures green; each perturbation exits 1 naming its fixture".into())
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("1 linearized = tangent cone without NRCQ", Duration::from_secs(5), linearized_and_tangent_in_the_plane),
        ("2 strong CHIP without Abadie", Duration::from_secs(2), chip_without_abadie),
        ("3 near-convexity failure", Duration::from_secs(2), near_convexity_failure),
        ("4 polar identity without Abadie", Duration::from_secs(2), identity_without_abadie),
        ("5 wedge certificates", Duration::from_secs(5), wedge_certificates),
        ("6 interval equivalence", Duration::from_secs(2), interval_equivalence),
        ("7 random-instance properties", Duration::from_secs(120), random_properties),
        ("8 projection characterization vs grid", Duration::from_secs(30), projection_characterization_against_grid),
        ("9 worked-example replay", Duration::from_secs(60), replay_examples),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {budget:?}")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!("criterion {name}: {} ({:.2}s) {detail}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
