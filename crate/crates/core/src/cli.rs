//! Command-line front end.
//!
//! Exit codes: 0 success or positive verdict, 1 negative verdict, 2 bad
//! input, 3 numerical failure or inconclusive sampling.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::bestapprox::{
    check_certificate_perturbation, check_certificate_stationarity, check_strong_chip, equivalence_audit,
    find_certificate, project_feasible, ChipVerdict, EquivalenceReport,
};
use crate::cones::{
    audit_polar_identity, check_nrcq, Attribution, LocalData, NearConvexVerdict, PolarAudit, PolarEstimate, PolarMethod,
    Settings,
};
use crate::fixtures::{builtin, builtins, check_fixture, FixtureOutcome};
use crate::instance::Instance;
use crate::oracles::OracleError;
use crate::report::{canonical, cone_fg, cone_h, point, render_text, tagged, untagged_number};
use crate::{Error, Provenance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tancert", version, about = "Constraint qualifications, multiplier cones and best-approximation certificates for tangentially convex constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Constraint values, active set and subdifferentials.
    Inspect(Common),
    /// D, M, the sampled contingent cone and the polar cones.
    Cones(Common),
    /// NRCQ, NACQ and near convexity; exit 1 when NACQ fails.
    Cq(Common),
    /// Projection onto C ∩ K.
    Project(Common),
    /// Multiplier certificates; exit 1 when one is missing or fails a check.
    Certify(Common),
    /// Strong CHIP; exit 1 when it fails.
    Chip(Common),
    /// Polar-cone identity and the equivalence of the three best-approximation characterizations.
    Audit(Common),
    /// Replay the built-in worked examples against their expected values.
    PaperExamples(ExamplesArgs),
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Sampled directions (default 360 in the plane, 500 in space).
    #[arg(long)]
    pub dirs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Canonical JSON on standard output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Instance file, or the id of a built-in example.
    #[arg(long)]
    pub instance: String,
    /// Anchor index; all anchors when omitted.
    #[arg(long)]
    pub anchor: Option<usize>,
    /// Test point "v1,v2,..." replacing the anchor's own points.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// Certificate tolerance, overriding the provenance-based default.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub shared: Shared,
}

#[derive(Debug, Args)]
pub struct ExamplesArgs {
    /// Directory of instance files to replay instead of the built-ins.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[command(flatten)]
    pub shared: Shared,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn settings(shared: &Shared, tol: Option<f64>) -> Result<Settings, Error> {
    if let Some(t) = tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Input(format!("--tol must be positive, got {t}")));
        }
    }
    if shared.dirs == Some(0) {
        return Err(Error::Input("--dirs must be positive".into()));
    }
    Ok(Settings { seed: shared.seed, dirs: shared.dirs, tol_cert: tol, ..Settings::default() })
}

pub fn load_instance(spec: &str) -> Result<Instance, Error> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(inst) = builtin(spec) {
            return Ok(inst?);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{spec}: {e}")))?;
    Instance::from_json(&text).map_err(|e| Error::Input(format!("{spec}: {e}")))
}

pub fn parse_point(text: &str, n: usize) -> Result<Vec<f64>, Error> {
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Input(format!("--x: cannot parse {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Input(format!("--x needs {n} finite comma-separated values, got {text:?}")));
    }
    Ok(v)
}

fn emit(report: &Value, json: bool, out: &mut dyn Write) -> Result<(), Error> {
    if let Some(path) = untagged_number(report) {
        return Err(Error::Input(format!("internal: report number at {path} has no provenance")));
    }
    let text = if json { canonical(report) } else { render_text(report) };
    out.write_all(text.as_bytes()).map_err(|e| Error::Input(format!("writing report: {e}")))
}

fn header(command: &str, inst: &Instance, s: &Settings) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("instance".into(), tagged(Provenance::Input, json!({ "id": inst.id, "n": inst.n })));
    m.insert(
        "settings".into(),
        tagged(
            Provenance::Input,
            json!({
                "seed": s.seed,
                "dirs": s.dirs_for(inst.n),
                "tol_active": s.tol_active,
                "polar_samples": s.polar_samples,
                "tol_cert": s.tol_cert,
            }),
        ),
    );
    if let Some(check) = &inst.hrep_check {
        m.insert(
            "feasible_hrep_check".into(),
            tagged(
                Provenance::Sampled,
                json!({
                    "checked": check.checked,
                    "disagreements": check.disagreements,
                    "first_disagreement": check.first_disagreement,
                }),
            ),
        );
    }
    m
}

fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let c = match &cli.command {
        Command::PaperExamples(a) => return paper_examples(a, out, err),
        Command::Inspect(c)
        | Command::Cones(c)
        | Command::Cq(c)
        | Command::Project(c)
        | Command::Certify(c)
        | Command::Chip(c)
        | Command::Audit(c) => c,
    };
    let inst = load_instance(&c.instance)?;
    let s = settings(&c.shared, c.tol)?;
    if let Some(check) = inst.hrep_check.as_ref().filter(|h| !h.agrees()) {
        let _ = writeln!(
            err,
            "warning: feasible_hrep disagrees with the constraints at {} of {} sampled points (first {:?})",
            check.disagreements, check.checked, check.first_disagreement
        );
    }
    let indices: Vec<usize> = match c.anchor {
        Some(i) if i < inst.anchors.len() => vec![i],
        Some(i) => return Err(Error::Input(format!("anchor {i} out of range ({} anchors)", inst.anchors.len()))),
        None => (0..inst.anchors.len()).collect(),
    };
    let explicit_x = c.x.as_deref().map(|t| parse_point(t, inst.n)).transpose()?;
    let name = match &cli.command {
        Command::Inspect(_) => "inspect",
        Command::Cones(_) => "cones",
        Command::Cq(_) => "cq",
        Command::Project(_) => "project",
        Command::Certify(_) => "certify",
        Command::Chip(_) => "chip",
        Command::Audit(_) => "audit",
        Command::PaperExamples(_) => unreachable!(),
    };
    let mut code = EXIT_OK;
    let mut anchors = Vec::new();
    for i in indices {
        let anchor = &inst.anchors[i];
        let xs = explicit_x.clone().map_or_else(|| anchor.xs.clone(), |x| vec![x]);
        let mut entry = serde_json::Map::new();
        entry.insert("anchor".into(), tagged(Provenance::Input, json!({ "index": i, "xbar": anchor.xbar })));
        // Projection needs no local data, and the anchor may be irrelevant to it.
        if name == "project" {
            let rows = xs
                .iter()
                .map(|x| {
                    let p = project_feasible(&inst, x)?;
                    Ok(json!({ "x": point(Provenance::Input, x), "projection": point(p.provenance, &p.point) }))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            entry.insert("projections".into(), Value::Array(rows));
            anchors.push(Value::Object(entry));
            continue;
        }
        let local = LocalData::new(&inst, &anchor.xbar, &s)?;
        let anchor_code = match name {
            "inspect" => {
                inspect(&inst, &local, &mut entry);
                EXIT_OK
            }
            "cones" => {
                let audit = audit_polar_identity(&inst, &local, &s)?;
                cones(&local, &audit, &mut entry);
                EXIT_OK
            }
            "cq" => cq(&inst, &local, &s, &mut entry)?,
            "certify" => certify(&inst, &local, &xs, &mut entry)?,
            "chip" => {
                let audit = audit_polar_identity(&inst, &local, &s)?;
                let chip = check_strong_chip(&inst, &local, &audit)?;
                entry.insert("strong_chip".into(), chip_json(&chip));
                match chip.holds {
                    Some(true) => EXIT_OK,
                    Some(false) => EXIT_NEGATIVE,
                    None => EXIT_NUMERICAL,
                }
            }
            "audit" => audit_cmd(&inst, &local, &s, &xs, &mut entry)?,
            _ => unreachable!(),
        };
        code = code.max(anchor_code);
        anchors.push(Value::Object(entry));
    }
    let mut report = header(name, &inst, &s);
    report.insert("anchors".into(), Value::Array(anchors));
    emit(&Value::Object(report), c.shared.json, out)?;
    Ok(code)
}

fn inspect(inst: &Instance, local: &LocalData, entry: &mut serde_json::Map<String, Value>) {
    let rows: Vec<Value> = inst
        .constraints
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let active = local.active.contains(&j);
            match &local.subdiffs[j] {
                Some((p, prov)) => tagged(
                    *prov,
                    json!({
                        "name": g.name(),
                        "expr": g.text(),
                        "value": local.values[j],
                        "active": active,
                        "subdiff": p.vertices(),
                    }),
                ),
                None => tagged(
                    Provenance::Exact,
                    json!({ "name": g.name(), "expr": g.text(), "value": local.values[j], "active": active, "subdiff": null }),
                ),
            }
        })
        .collect();
    let names: Vec<&str> = local.active.iter().map(|&j| inst.constraints[j].name()).collect();
    entry.insert("active".into(), json!(names));
    entry.insert("constraints".into(), Value::Array(rows));
}

fn polar_json(p: &Result<PolarEstimate, OracleError>) -> Value {
    match p {
        Ok(e) => {
            let method = match e.method {
                PolarMethod::Hrep => "normal cone of feasible_hrep",
                PolarMethod::Sampled => "sampled",
            };
            tagged(
                e.provenance(),
                json!({ "rays": e.cone.rays(), "is_zero": e.cone.is_zero(), "method": method, "feasible_samples": e.feasible_samples }),
            )
        }
        Err(e) => json!({ "inconclusive": e.to_string() }),
    }
}

fn cones(local: &LocalData, audit: &PolarAudit, entry: &mut serde_json::Map<String, Value>) {
    let p = local.provenance();
    let accepted = audit.contingent.accepted().count();
    entry.insert("D".into(), cone_h(p, &audit.d));
    entry.insert("M".into(), cone_fg(p, &audit.m));
    entry.insert(
        "T".into(),
        tagged(
            Provenance::Sampled,
            json!({
                "rays": audit.contingent.hull.rays(),
                "is_zero": audit.contingent.hull.is_zero(),
                "accepted": accepted,
                "tested": audit.contingent.directions.len(),
            }),
        ),
    );
    entry.insert("polar_K".into(), polar_json(&audit.polar_k));
    entry.insert("polar_Ktilde".into(), polar_json(&audit.polar_kt));
}

fn near_convex_json(v: &NearConvexVerdict) -> Value {
    match v {
        NearConvexVerdict::Pass { tested } => tagged(
            Provenance::Sampled,
            json!({ "passed": true, "tested": tested, "note": "no violation found for t = 2^-10 .. 2^-20" }),
        ),
        NearConvexVerdict::Fail { witness, t } => {
            tagged(Provenance::Sampled, json!({ "passed": false, "witness": witness, "t": t }))
        }
    }
}

fn cq(inst: &Instance, local: &LocalData, s: &Settings, entry: &mut serde_json::Map<String, Value>) -> Result<i32, Error> {
    let nrcq = check_nrcq(inst.n, &local.active_polytopes())?;
    let audit = audit_polar_identity(inst, local, s)?;
    entry.insert(
        "nrcq".into(),
        tagged(local.provenance(), json!({ "holds": nrcq.holds, "delta": nrcq.delta, "witness": nrcq.witness })),
    );
    entry.insert(
        "nacq".into(),
        tagged(
            Provenance::Sampled,
            json!({ "holds": audit.nacq.holds, "generators": audit.nacq.generators, "missing": audit.nacq.missing }),
        ),
    );
    entry.insert("near_convex".into(), near_convex_json(&audit.near_convex));
    Ok(if audit.nacq.holds { EXIT_OK } else { EXIT_NEGATIVE })
}

fn certify(inst: &Instance, local: &LocalData, xs: &[Vec<f64>], entry: &mut serde_json::Map<String, Value>) -> Result<i32, Error> {
    let mut code = EXIT_OK;
    let mut rows = Vec::new();
    for x in xs {
        let mut row = serde_json::Map::new();
        row.insert("x".into(), point(Provenance::Input, x));
        match find_certificate(inst, local, x)? {
            None => {
                code = EXIT_NEGATIVE;
                row.insert("certificate".into(), json!("none"));
            }
            Some(c) => {
                let pert = check_certificate_perturbation(inst, &c, x, &local.xbar)?;
                let stat = check_certificate_stationarity(inst, &c, x, &local.xbar)?;
                if !(pert.holds && stat.holds) {
                    code = EXIT_NEGATIVE;
                }
                row.insert(
                    "certificate".into(),
                    tagged(
                        c.provenance,
                        json!({
                            "lambda": c.lambda,
                            "eta": c.eta,
                            "inert": c.inert,
                            "residual_cs": c.residual_cs,
                            "residual_membership": c.residual_membership,
                            "tol": c.tol,
                        }),
                    ),
                );
                row.insert(
                    "perturbation".into(),
                    tagged(c.provenance, json!({ "holds": pert.holds, "shifted": pert.shifted, "projected": pert.projected })),
                );
                row.insert(
                    "stationarity".into(),
                    tagged(c.provenance, json!({ "holds": stat.holds, "residual": stat.residual })),
                );
            }
        }
        rows.push(Value::Object(row));
    }
    entry.insert("certificates".into(), Value::Array(rows));
    Ok(code)
}

fn chip_json(chip: &ChipVerdict) -> Value {
    let prov = chip.left_provenance.join(chip.right_provenance);
    tagged(
        prov,
        json!({
            "holds": chip.holds,
            "left": chip.left.as_ref().map(|c| c.rays().to_vec()),
            "left_provenance": chip.left_provenance,
            "right": chip.right.as_ref().map(|c| c.rays().to_vec()),
            "right_provenance": chip.right_provenance,
            "normal_cone_C": chip.normal_c.rays(),
            "right_uses_M": chip.right_uses_m,
            "tol": chip.tol,
            "note": chip.note,
        }),
    )
}

pub fn attribution_text(a: &Attribution) -> String {
    match a {
        Attribution::Consistent => "consistent".into(),
        Attribution::HypothesisFailure(h) => format!("hypothesis failure: {}", h.join(", ")),
        Attribution::Defect => "defect: hypotheses passed but the identity failed".into(),
        Attribution::Inconclusive => "inconclusive".into(),
    }
}

fn equivalence_json(eq: &EquivalenceReport) -> Value {
    let rows: Vec<Value> = eq
        .rows
        .iter()
        .map(|r| {
            let prov = r.projection.provenance.join(r.certificate.as_ref().map_or(Provenance::Exact, |c| c.provenance));
            tagged(
                prov,
                json!({
                    "x": r.x,
                    "projection": r.projection.point,
                    "i_projection": r.is_projection,
                    "ii_perturbation": r.perturbation_holds,
                    "iii_stationarity": r.stationarity_holds,
                    "lambda": r.certificate.as_ref().map(|c| c.lambda.clone()),
                    "agree": r.agree(),
                }),
            )
        })
        .collect();
    let convexity = match &eq.ktilde_convexity.counterexample {
        None => json!({ "falsified": false, "pairs": eq.ktilde_convexity.pairs, "note": "convexity not falsified" }),
        Some((y, z)) => json!({ "falsified": true, "pairs": eq.ktilde_convexity.pairs, "pair": [y, z] }),
    };
    json!({
        "rows": rows,
        "all_agree": eq.all_agree(),
        "hypotheses": {
            "near_convex": eq.near_convex,
            "nacq": eq.nacq,
            "ktilde_convexity": tagged(Provenance::Sampled, convexity),
        },
        "strong_chip": chip_json(&eq.chip),
        "chip_consistent": eq.chip_consistent(),
        "defect": eq.defect(),
        "note": "verdicts cover the listed points only",
    })
}

fn audit_cmd(
    inst: &Instance,
    local: &LocalData,
    s: &Settings,
    xs: &[Vec<f64>],
    entry: &mut serde_json::Map<String, Value>,
) -> Result<i32, Error> {
    let audit = audit_polar_identity(inst, local, s)?;
    entry.insert("near_convex".into(), near_convex_json(&audit.near_convex));
    entry.insert(
        "tangent_in_linearized".into(),
        tagged(Provenance::Sampled, json!({ "holds": audit.t_in_d, "outside": audit.t_outside_d })),
    );
    entry.insert(
        "nacq".into(),
        tagged(Provenance::Sampled, json!({ "holds": audit.nacq.holds, "missing": audit.nacq.missing })),
    );
    let identity = audit.identity_holds();
    entry.insert(
        "polar_identity".into(),
        tagged(
            Provenance::Sampled,
            json!({
                "M": audit.m.rays(),
                "polar_K": polar_json(&audit.polar_k),
                "polar_Ktilde": polar_json(&audit.polar_kt),
                "M_in_polar_K": audit.m_in_polar_k,
                "polar_K_in_M": audit.polar_k_in_m,
                "M_in_polar_Ktilde": audit.m_in_polar_kt,
                "polar_Ktilde_in_M": audit.polar_kt_in_m,
                "holds": identity,
                "attribution": attribution_text(&audit.attribution()),
            }),
        ),
    );
    let eq = equivalence_audit(inst, local, &audit, xs, s)?;
    entry.insert("equivalence".into(), equivalence_json(&eq));
    let negative = identity == Some(false) || !eq.all_agree() || !eq.chip_consistent();
    Ok(if negative {
        EXIT_NEGATIVE
    } else if identity.is_none() {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    })
}

fn load_fixture_dir(dir: &Path) -> Result<Vec<Instance>, Error> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("{}: no .json fixtures", dir.display())));
    }
    paths.iter().map(|p| load_instance(&p.to_string_lossy())).collect()
}

fn paper_examples(a: &ExamplesArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let s = settings(&a.shared, None)?;
    let fixtures = match &a.fixtures {
        Some(dir) => load_fixture_dir(dir)?,
        None => builtins()?,
    };
    let mut outcomes: Vec<FixtureOutcome> = Vec::new();
    for inst in &fixtures {
        match check_fixture(inst, &s) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let _ = writeln!(err, "error: fixture {}: {e}", inst.id);
                return Err(e);
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if a.shared.json {
        let rows: Vec<Value> = outcomes
            .iter()
            .map(|o| {
                tagged(
                    Provenance::Exact,
                    json!({ "id": o.id, "source": o.source, "passed": o.passed(), "checks": o.checks, "mismatches": o.mismatches }),
                )
            })
            .collect();
        let report = json!({
            "command": "paper-examples",
            "settings": tagged(Provenance::Input, json!({ "seed": s.seed, "dirs": s.dirs })),
            "fixtures": rows,
            "failed": tagged(Provenance::Exact, json!({ "count": failed })),
        });
        emit(&report, true, out)?;
    } else {
        let mut text = String::new();
        for o in &outcomes {
            if o.passed() {
                text.push_str(&format!("PASS {} ({}): {} checks\n", o.id, o.source, o.checks));
            } else {
                for m in &o.mismatches {
                    text.push_str(&format!("FAIL {} ({}): {m}\n", o.id, o.source));
                }
            }
        }
        text.push_str(&format!("{} of {} fixtures passed\n", outcomes.len() - failed, outcomes.len()));
        out.write_all(text.as_bytes()).map_err(|e| Error::Input(format!("writing report: {e}")))?;
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NEGATIVE })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("tancert").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn parse_points() {
        assert_eq!(parse_point("0, -1.5", 2).unwrap(), vec![0.0, -1.5]);
        assert!(parse_point("1", 2).is_err());
        assert!(parse_point("a", 1).is_err());
    }

    #[test]
    fn certify_builtin_ex42() {
        let (code, out, _) = run(&["certify", "--instance", "ex42", "--anchor", "0", "--x", "0", "--json"]);
        assert_eq!(code, 0, "{out}");
        let v: Value = serde_json::from_str(&out).unwrap();
        let lambda = &v["anchors"][0]["certificates"][0]["certificate"]["lambda"];
        assert!((lambda[0].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-8);
        assert_eq!(lambda[1].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&["frobnicate"]).0, 2);
        assert_eq!(run(&["cq"]).0, 2);
        assert_eq!(run(&["cq", "--instance", "/nonexistent/file.json"]).0, 2);
        assert_eq!(run(&["project", "--instance", "ex42", "--x", "1,2"]).0, 2);
        assert_eq!(run(&["cq", "--instance", "ex42", "--anchor", "3"]).0, 2);
        assert_eq!(run(&["--help"]).0, 0);
    }
}
