use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use polydich::admissibility::{green_solve, invertibility_report, ReportOptions, TruncatedSolver};
use polydich::dichotomy::{default_window, fit_growth_bound, lyapunov_report, CertifyError, GrowthReport};
use polydich::io::{self, format_float, num, to_canonical_string, SequenceFile};
use polydich::robustness::{robustness_experiment, PerturbationMode, RobustnessOptions};
use polydich::{
    BoundedSequence, Cocycle, DichotomyCertificate, DichotomyOptions, Error, Matrix, NormKind, NormSequence,
    NormSpec, OperatorSequence, PerturbationSpec, Regime, SpaceTag, Splitting, TZOperator,
};
use serde_json::{json, Value};

use crate::{CertifyArgs, LyapunovArgs, ModeArg, PerturbArgs, RegimeArg, SolveArgs, Tolerances, ZChoice};

pub enum Outcome {
    Success,
    /// The analysis ran and came back negative (exit code 2).
    Negative,
}

fn load_system(path: &Path) -> Result<OperatorSequence> {
    io::read_system(path).with_context(|| format!("reading system {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<()> {
    emit(out, &to_canonical_string(v))
}

fn options(tol: &Tolerances) -> Result<DichotomyOptions> {
    ensure!(tol.margin > 0.0, "--margin must be positive");
    ensure!(tol.epsilon_tol >= 0.0, "--epsilon-tol must be non-negative");
    ensure!(tol.slope_points >= 4, "--slope-points must be at least 4");
    Ok(DichotomyOptions {
        margin: tol.margin,
        epsilon_tol: tol.epsilon_tol,
        slope_points: tol.slope_points,
        admissibility: !tol.no_admissibility,
        ..DichotomyOptions::default()
    })
}

fn norm_spec(arg: &str, base: polydich::BaseNorm) -> Result<NormSpec> {
    if arg == "base" {
        return Ok(NormSpec::base(base));
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading norm spec {arg}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing norm spec {arg}"))
}

fn refusal_diagnostic(growth: Option<&GrowthReport>) {
    if let Some(g) = growth {
        if !g.bounded {
            eprintln!(
                "refused: bounded=false (step norms grow like n^{:.3}, witness m = {})",
                g.step_growth, g.witness
            );
        }
    }
}

pub fn certify(args: &CertifyArgs) -> Result<Outcome> {
    let seq = Arc::new(load_system(&args.system)?);
    let opts = options(&args.tol)?;
    let spec = norm_spec(&args.norms, args.base_norm.into())?;
    let c = Arc::new(Cocycle::new(seq));
    let result = certify_with(&c, &spec, &opts)?;
    match result {
        Ok(cert) => {
            let mut j = cert.to_json();
            j["certified"] = json!(cert.flags.dichotomy);
            emit_json(args.out.as_deref(), &j)?;
            if cert.flags.dichotomy {
                Ok(Outcome::Success)
            } else {
                refusal_diagnostic(Some(&cert.growth));
                for d in &cert.diagnostics {
                    eprintln!("refused: {d}");
                }
                Ok(Outcome::Negative)
            }
        }
        Err(e) => {
            let mut j = e.to_json();
            let growth = match &e.partial.growth {
                Some(g) => Some(*g),
                None => fit_growth_bound(&c, &NormSequence::base(spec.base), &opts).ok(),
            };
            if let Some(g) = &growth {
                j["bounded"] = json!(g.bounded);
                j["witness"] = json!(g.witness);
            }
            emit_json(args.out.as_deref(), &j)?;
            refusal_diagnostic(growth.as_ref());
            eprintln!("refused: {e}");
            Ok(Outcome::Negative)
        }
    }
}

/// Certifies in the requested norms; adapted families are first built from
/// a base-norm certificate, whose rates fill in a missing `lambda` or `b`.
fn certify_with(
    c: &Arc<Cocycle>,
    spec: &NormSpec,
    opts: &DichotomyOptions,
) -> Result<std::result::Result<DichotomyCertificate, CertifyError>> {
    match spec.kind {
        NormKind::Base | NormKind::ExplicitWeights => {
            let norms = spec.build(None)?;
            Ok(polydich::certify(Arc::clone(c), &norms, opts))
        }
        NormKind::AdaptedNonuniform | NormKind::AdaptedStrong => {
            let base = match polydich::certify(Arc::clone(c), &NormSequence::base(spec.base), opts) {
                Ok(cert) => cert,
                Err(e) => return Ok(Err(e)),
            };
            let filled = NormSpec {
                lambda: spec.lambda.or(Some(base.nonuniform.lambda)),
                b: spec.b.or(Some(base.growth_base.b)),
                ..spec.clone()
            };
            let norms = filled.build(Some((Arc::clone(c), Arc::clone(base.splitting()))))?;
            Ok(polydich::certify(Arc::clone(c), &norms, opts))
        }
    }
}

fn f64_array(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| anyhow!("{what} is not an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| anyhow!("{what} has a non-numeric entry")))
        .collect()
}

struct CertData {
    splitting: Splitting,
    z: Matrix,
}

fn load_cert(path: &Path, d: usize, horizon: usize) -> Result<CertData> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading certificate {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing certificate {}", path.display()))?;
    let projections = v
        .get("projections")
        .and_then(Value::as_array)
        .ok_or_else(|| anyhow!("certificate has no `projections`; was it refused?"))?;
    ensure!(
        v.get("dimension").and_then(Value::as_u64) == Some(d as u64),
        "certificate dimension does not match the system"
    );
    ensure!(
        projections.len() >= horizon,
        "certificate covers {} indices, the system has horizon {horizon}",
        projections.len()
    );
    let projections = projections
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let e = f64_array(p, &format!("projections[{i}]"))?;
            ensure!(e.len() == d * d, "projections[{i}] has {} entries", e.len());
            Ok(Matrix::from_row_slice(d, d, &e))
        })
        .collect::<Result<Vec<_>>>()?;
    let zb = v.get("z_basis").ok_or_else(|| anyhow!("certificate has no `z_basis`"))?;
    let cols = zb.get("cols").and_then(Value::as_u64).ok_or_else(|| anyhow!("z_basis.cols missing"))? as usize;
    let entries = f64_array(zb.get("entries").unwrap_or(&Value::Null), "z_basis.entries")?;
    ensure!(entries.len() == d * cols, "z_basis has {} entries, expected {}", entries.len(), d * cols);
    Ok(CertData {
        splitting: Splitting::from_projections(projections)?,
        z: Matrix::from_row_slice(d, cols, &entries),
    })
}

fn load_rhs(path: &Path) -> Result<BoundedSequence> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading rhs {}", path.display()))?;
    let file: SequenceFile = serde_json::from_str(&text).with_context(|| format!("parsing rhs {}", path.display()))?;
    ensure!(file.tag == SpaceTag::Y0, "rhs must be tagged Y0, found {}", file.tag.as_str());
    file.build().map_err(|e| match e {
        Error::NotInSpace { residual, .. } => anyhow!("rhs is not in Y_0: |y_1| = {residual:.3e}"),
        e => anyhow::Error::new(e).context("rhs"),
    })
}

pub fn solve(args: &SolveArgs) -> Result<Outcome> {
    let seq = Arc::new(load_system(&args.system)?);
    let (d, horizon) = (seq.dimension(), seq.horizon());
    let cert = args.cert.as_deref().map(|p| load_cert(p, d, horizon)).transpose()?;
    let choice = args.z.unwrap_or(if cert.is_some() { ZChoice::Cert } else { ZChoice::Full });
    let (z, split) = match choice {
        ZChoice::Full => (Matrix::identity(d, d), Splitting::expansion(d, horizon)?),
        ZChoice::Zero => (Matrix::zeros(d, 0), Splitting::contraction(d, horizon)?),
        ZChoice::Cert => {
            let c = cert.ok_or_else(|| anyhow!("--Z cert needs --cert"))?;
            (c.z, c.splitting)
        }
    };
    let c = Arc::new(Cocycle::new(seq));
    let t = TZOperator::new(c, &z, NormSequence::base(args.base_norm.into()))?;

    if args.report {
        let opts = ReportOptions {
            seed: args.seed,
            ..ReportOptions::default()
        };
        let r = invertibility_report(&t, Some(&split), &opts)?;
        let mut j = r.to_json();
        j["z_dim"] = json!(z.ncols());
        j["block_bound"] = r.block_bound.map_or(Value::Null, num);
        j["probe_estimate"] = num(r.probe_estimate);
        emit_json(args.out.as_deref(), &j)?;
        if !r.invertible {
            eprintln!("T_Z is not invertible on this horizon");
            return Ok(Outcome::Negative);
        }
        return Ok(Outcome::Success);
    }

    let rhs = args.rhs.as_deref().ok_or_else(|| anyhow!("--green and --truncated need --rhs"))?;
    let y = load_rhs(rhs)?;
    ensure!(
        y.len() == horizon && y.dimension() == d,
        "rhs has {} entries of length {}, the system needs {horizon} of length {d}",
        y.len(),
        y.dimension()
    );
    let (x, defect, truncated, method) = if args.green {
        if args.cert.is_none() {
            bail!("--green needs --cert for the projections");
        }
        let s = green_solve(&t, &split, &y)?;
        (s.x, s.defect, s.truncated, "green")
    } else {
        let solver = TruncatedSolver::new(&t, Some(&split))?;
        let x = solver.solve(&y)?;
        let defect = t.defect(&x, &y);
        (x, defect, true, "truncated")
    };
    let ns = t.norms();
    let j = json!({
        "method": method,
        "x": serde_json::to_value(SequenceFile::from_sequence(&x))?,
        "residual": {
            "defect": num(defect),
            "truncated": truncated,
            "x_sup": num(x.sup_norm(ns)?),
            "y_sup": num(y.sup_norm(ns)?),
        },
    });
    emit_json(args.out.as_deref(), &j)?;
    Ok(Outcome::Success)
}

pub fn perturb(args: &PerturbArgs) -> Result<Outcome> {
    ensure!(args.c.is_finite() && args.c >= 0.0, "--c must be a non-negative number");
    ensure!(args.seeds > 0, "--seeds must be positive");
    let seq = Arc::new(load_system(&args.system)?);
    let regime = match args.regime {
        RegimeArg::Strong => Regime::Strong,
        RegimeArg::Weak => Regime::Weak,
    };
    let spec = PerturbationSpec {
        mode: match args.mode {
            ModeArg::Random => PerturbationMode::RandomDirection,
            ModeArg::Adversarial => PerturbationMode::AdversarialAligned,
        },
        ..PerturbationSpec::new(args.c, 0.0, regime, args.seed)
    };
    let opts = RobustnessOptions {
        seeds: (args.seed..args.seed + args.seeds).collect(),
        base: args.base_norm.into(),
        ..RobustnessOptions::default()
    };
    let report = match robustness_experiment(seq, &spec, &opts) {
        Ok(r) => r,
        Err(Error::Certificate(msg)) => {
            eprintln!("refused: {msg}");
            return Ok(Outcome::Negative);
        }
        Err(e) => return Err(e.into()),
    };
    emit_json(args.out.as_deref(), &report.to_json())?;
    if !report.smallness.ok {
        eprintln!(
            "smallness condition fails: c C ||T_Z^-1|| = {:.4} >= 1",
            report.smallness.product
        );
        return Ok(Outcome::Negative);
    }
    Ok(Outcome::Success)
}

pub fn lyapunov(args: &LyapunovArgs) -> Result<Outcome> {
    let seq = Arc::new(load_system(&args.system)?);
    let (d, horizon) = (seq.dimension(), seq.horizon());
    let c = Cocycle::new(seq);
    let window = args.window.unwrap_or_else(|| default_window(horizon));
    let basis = Matrix::identity(d, d);
    let report = lyapunov_report(&c, &basis, window, args.margin)?;
    let mut csv = String::from("vector_index,slope,r_squared,window_lo,window_hi\n");
    for (i, e) in report.estimates.iter().enumerate() {
        let slope = if e.vanished { "-inf".to_string() } else { format_float(e.slope) };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            slope,
            format_float(e.r_squared),
            e.window.0,
            e.window.1
        ));
    }
    emit(args.out.as_deref(), &csv)?;
    if let Some(path) = &args.series {
        let mut out = String::from("vector_index,n,log_n,log_norm\n");
        for i in 0..d {
            let orbit = c.orbit_of(1, &basis.column(i).into_owned())?;
            for (k, x) in orbit.iter().enumerate() {
                let n = k + 1;
                let w = x.norm();
                let log_norm = if w > 0.0 { format_float(w.ln()) } else { "-inf".to_string() };
                out.push_str(&format!("{},{n},{},{log_norm}\n", i + 1, format_float((n as f64).ln())));
            }
        }
        emit(Some(path), &out)?;
    }
    Ok(Outcome::Success)
}
