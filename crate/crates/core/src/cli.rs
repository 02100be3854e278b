//! Command-line front end: flat JSON run configuration, subcommand dispatch and
//! report serialization.
//!
//! Reports are JSON objects with `"schema": 1`. Every numeric constant carries a
//! provenance tag; settings taken from the library defaults are tagged
//! `analytic`, values supplied by flag or config file `user`. Failures print a
//! JSON diagnostic on stderr and exit with [`Error::exit_code`].

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::constructions::{
    build_ku_affine, build_ku_escape, build_mayer, escape_cover_sum, ku_geometry, pstar_poles, select_r3, transition_scan,
    ConstantLedger, KuAffineConfig, KuAffineSystem, KuEscapeConfig, KuEscapeSystem, MayerConfig, MayerSystem, Provenance,
    DEFAULT_POLE_BUDGET,
};
use crate::error::{Error, Result};
use crate::families::{
    enumerate_poles, enumerate_poles_count, mayer_dimension, theoretical_dimension, FamilyDescriptor, PerturbationSequence,
    PerturbationStep,
};
use crate::ncifs::{bowen_dimension, NcifsSystem, PressureEstimate, PressureMethod, DEFAULT_BISECTION_TOL, DEFAULT_WORD_CAP};
use crate::poles::{borel_partial_sum, estimate_order};
use crate::verify::{escape_audit, moran_oracle, sample_addresses};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "BOWENLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bowenlab", version, about = "Dimension estimates for Julia sets of perturbed meromorphic maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bowen dimension bracket of a constructed system.
    Dim(Invocation),
    /// Lower-pressure curve over a t grid.
    Pressure(Invocation),
    /// Pole catalogue, fitted order and Borel partial sums.
    Poles(Invocation),
    /// Tail radius R3 and cover sums for the escaping set.
    EscapeBound(Invocation),
    /// Escape audit of sampled limit points of the escaping construction.
    EscapeCheck(Invocation),
    /// Resolved constants and schedule of a construction, without a dimension run.
    Schedule(Invocation),
    /// Engine against the Moran equation on similarity systems.
    Selftest(Invocation),
    /// Closed-form dimension `rho M/(beta + M + 1)`, or `rho/(alpha + 1 + 1/q)` with `--kind mayer`.
    Formula(Invocation),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dim(_) => "dim",
            Command::Pressure(_) => "pressure",
            Command::Poles(_) => "poles",
            Command::EscapeBound(_) => "escape-bound",
            Command::EscapeCheck(_) => "escape-check",
            Command::Schedule(_) => "schedule",
            Command::Selftest(_) => "selftest",
            Command::Formula(_) => "formula",
        }
    }

    fn invocation(&self) -> &Invocation {
        match self {
            Command::Dim(i)
            | Command::Pressure(i)
            | Command::Poles(i)
            | Command::EscapeBound(i)
            | Command::EscapeCheck(i)
            | Command::Schedule(i)
            | Command::Selftest(i)
            | Command::Formula(i) => i,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Invocation {
    /// JSON file with run settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads, 0 for automatic; falls back to BOWENLAB_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub run: RunConfig,
}

/// Flat run settings shared by the config file and the flags. Unknown keys in
/// the file are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand name; must match the invoked one when present in a file.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,

    /// tan | zsinz | zcossqrtz | rational-exp | formula-only
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub mu_re: Option<f64>,
    #[arg(long)]
    pub mu_im: Option<f64>,
    /// Power of tan, or of the rational exponential denominator.
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub p_re: Option<f64>,
    #[arg(long)]
    pub p_im: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Multiplicity bound (`q` for the Mayer formula).
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub mult: Option<u32>,
    /// escape | mayer, for `formula`.
    #[arg(long)]
    pub kind: Option<String>,

    /// mayer | ku-affine | ku-escape | similarity
    #[arg(long)]
    pub construction: Option<String>,
    /// Branch count parameter: `N_t` for mayer and ku-affine, alphabet size for escape-bound.
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub t_target: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub s_star: Option<f64>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub s1: Option<f64>,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub koebe_k: Option<f64>,
    #[arg(long)]
    pub pole_budget: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub xi: Option<Vec<usize>>,
    /// Similarity ratios for the `similarity` construction.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,

    /// zero | constant-shift | random-in-ball | user-list
    #[arg(long)]
    pub perturbation: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shift_re: Option<f64>,
    #[arg(long)]
    pub shift_im: Option<f64>,
    /// Explicit steps `[c_re, c_im, lambda_re, lambda_im]`, config file only.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<[f64; 4]>>,

    #[arg(long)]
    pub t: Option<f64>,
    /// `lo:hi:step`
    #[arg(long)]
    pub t_grid: Option<String>,
    /// `lo:hi`
    #[arg(long)]
    pub t_bracket: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub word_cap: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Sample count (addresses, random systems).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_modulus: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,

    #[arg(long)]
    pub out: Option<PathBuf>,
    /// json | csv
    #[arg(long)]
    pub format: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    /// Fields set here win over `base`.
    pub fn overlay(&self, base: &RunConfig) -> RunConfig {
        let (Value::Object(top), Value::Object(mut merged)) = (json!(self), json!(base)) else {
            unreachable!("structs serialize to objects")
        };
        for (k, v) in top {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged)).expect("round trip of a valid config")
    }
}

/// Numeric settings resolved against defaults, each with its provenance.
#[derive(Debug, Default)]
struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    fn num<T: Copy + Serialize>(&mut self, key: &str, given: Option<T>, default: T) -> T {
        let (v, p) = match given {
            Some(v) => (v, Provenance::User),
            None => (default, Provenance::Analytic),
        };
        self.values.insert(key.into(), json!({ "value": v, "provenance": p }));
        v
    }

    fn opt<T: Copy + Serialize>(&mut self, key: &str, given: Option<T>) -> Option<T> {
        if let Some(v) = given {
            self.values.insert(key.into(), json!({ "value": v, "provenance": Provenance::User }));
        }
        given
    }

    fn text(&mut self, key: &str, given: &Option<String>, default: &str) -> String {
        let v = given.clone().unwrap_or_else(|| default.to_string());
        self.values.insert(key.into(), json!(v));
        v
    }
}

/// Output of one run: the JSON report and, when requested, a CSV rendering.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Value,
    pub csv: Option<String>,
    /// Exit status for a completed run whose audit did not pass.
    pub failed_audit: bool,
}

fn parse_family(cfg: &RunConfig, st: &mut Settings) -> Result<FamilyDescriptor> {
    let name = cfg.family.as_deref().ok_or_else(|| Error::Config("family is required".into()))?;
    st.values.insert("family".into(), json!(name));
    let mu = Complex64::new(st.num("mu_re", cfg.mu_re, 1.0), st.num("mu_im", cfg.mu_im, 0.0));
    match name {
        "tan" | "tan-power" => FamilyDescriptor::tan_power(mu, st.num("m", cfg.m, 1)),
        "zsinz" | "z-sin-z" => Ok(FamilyDescriptor::z_sin_z()),
        "zcossqrtz" | "z-cos-sqrt-z" => Ok(FamilyDescriptor::z_cos_sqrt_z()),
        "rational-exp" => {
            let p = Complex64::new(st.num("p_re", cfg.p_re, 1.0), st.num("p_im", cfg.p_im, 0.0));
            FamilyDescriptor::rational_exp(mu, p, st.num("m", cfg.m, 1))
        }
        "formula-only" => FamilyDescriptor::formula_only(
            st.num("rho", cfg.rho, 1.0),
            st.num("beta", cfg.beta, 0.0),
            st.num("M", cfg.mult, 1),
        ),
        other => Err(Error::Config(format!("unknown family '{other}'"))),
    }
}

fn parse_perturbation(cfg: &RunConfig, st: &mut Settings) -> Result<PerturbationSequence> {
    let mode = st.text("perturbation", &cfg.perturbation, "zero");
    Ok(match mode.as_str() {
        "zero" => PerturbationSequence::zero(),
        "constant-shift" => {
            let c = Complex64::new(st.num("shift_re", cfg.shift_re, 0.0), st.num("shift_im", cfg.shift_im, 0.0));
            let eps = st.num("epsilon", cfg.epsilon, c.norm() * 2.0);
            PerturbationSequence::constant_shift(c, eps)
        }
        "random-in-ball" => PerturbationSequence::random_in_ball(
            st.num("epsilon", cfg.epsilon, 0.01),
            st.num("delta", cfg.delta, 0.0),
            st.num("seed", cfg.seed, 42),
        ),
        "user-list" => {
            let steps = cfg.steps.as_ref().ok_or_else(|| Error::Config("user-list perturbation needs 'steps'".into()))?;
            let steps = steps
                .iter()
                .map(|s| PerturbationStep { c: Complex64::new(s[0], s[1]), lambda: Complex64::new(s[2], s[3]) })
                .collect();
            PerturbationSequence::user_list(steps, st.num("epsilon", cfg.epsilon, f64::MAX), st.num("delta", cfg.delta, f64::MAX))
        }
        other => return Err(Error::Config(format!("unknown perturbation mode '{other}'"))),
    })
}

/// `lo:hi:step` inclusive of both ends.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let v = parse_floats(s, 3)?;
    let (lo, hi, step) = (v[0], v[1], v[2]);
    if !(step > 0.0 && hi >= lo) {
        return Err(Error::Config(format!("invalid grid '{s}'")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>> {
    let v: std::result::Result<Vec<f64>, _> = s.split(':').map(str::parse::<f64>).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(Error::Config(format!("expected {n} ':'-separated numbers, got '{s}'"))),
    }
}

enum Built {
    Mayer(Box<MayerSystem>),
    Affine(Box<KuAffineSystem>),
    Escape(Box<KuEscapeSystem>),
    Similarity { system: NcifsSystem, ratios: Vec<f64> },
}

impl Built {
    fn system(&self) -> &NcifsSystem {
        match self {
            Built::Mayer(s) => &s.system,
            Built::Affine(s) => &s.system,
            Built::Escape(s) => &s.system,
            Built::Similarity { system, .. } => system,
        }
    }

    fn ledger(&self) -> ConstantLedger {
        match self {
            Built::Mayer(s) => s.ledger.clone(),
            Built::Affine(s) => s.ledger.clone(),
            Built::Escape(s) => s.ledger.clone(),
            Built::Similarity { ratios, .. } => {
                let mut l = ConstantLedger::default();
                for (i, r) in ratios.iter().enumerate() {
                    l.set(&format!("ratio_{i}"), *r, Provenance::User);
                }
                l
            }
        }
    }

    fn target(&self) -> Result<f64> {
        Ok(match self {
            Built::Mayer(s) => s.theoretical_target,
            Built::Affine(s) => s.theoretical_target,
            Built::Escape(s) => s.theoretical_target,
            Built::Similarity { ratios, .. } => moran_oracle(ratios)?,
        })
    }

    fn structure(&self) -> Value {
        match self {
            Built::Mayer(s) => json!({
                "b": s.b.location, "s0": s.s0, "s1": s.s1, "M1": s.m1, "N_t": s.n_t,
                "b_points": s.b_points, "probes": s.probes,
            }),
            Built::Affine(s) => json!({
                "a0": s.a0.location, "N_t": s.n_t, "epsilon_t": s.epsilon_t, "delta_t": s.delta_t,
                "alphabet": s.alphabet.iter().map(|a| a.location).collect::<Vec<_>>(), "geometry": s.geometry,
            }),
            Built::Escape(s) => json!({ "schedule": s.schedule, "geometry": s.geometry }),
            Built::Similarity { ratios, .. } => json!({ "ratios": ratios }),
        }
    }
}

fn build(cfg: &RunConfig, st: &mut Settings, depth: usize) -> Result<(Built, Option<FamilyDescriptor>)> {
    let construction = st.text("construction", &cfg.construction, if cfg.ratios.is_some() { "similarity" } else { "mayer" });
    if construction == "similarity" {
        let ratios = cfg.ratios.clone().ok_or_else(|| Error::Config("similarity construction needs 'ratios'".into()))?;
        st.values.insert("ratios".into(), json!(ratios));
        if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::DomainError(format!("ratio {r} outside (0, 1)")));
        }
        return Ok((Built::Similarity { system: NcifsSystem::similarity(&ratios)?, ratios }, None));
    }
    let fam = parse_family(cfg, st)?;
    let perturb = parse_perturbation(cfg, st)?;
    let budget = st.num("pole_budget", cfg.pole_budget, DEFAULT_POLE_BUDGET);
    let built = match construction.as_str() {
        "mayer" => {
            let mut c = MayerConfig::new(fam, st.num("branches", cfg.branches, 8));
            c.s0 = st.opt("s0", cfg.s0);
            c.s1 = st.opt("s1", cfg.s1);
            c.m1 = st.opt("m1", cfg.m1);
            c.koebe_k = st.opt("koebe_k", cfg.koebe_k);
            c.t_target = st.num("t_target", cfg.t_target, 0.0);
            c.perturb = perturb;
            c.levels = depth;
            Built::Mayer(Box::new(build_mayer(&c)?))
        }
        "ku-affine" => {
            let mut c = KuAffineConfig::new(fam, st.num("t_target", cfg.t_target, 0.3));
            c.s = st.opt("s", cfg.s);
            c.s_star = st.opt("s_star", cfg.s_star);
            c.r2 = st.opt("r2", cfg.r2);
            c.n_t = st.opt("branches", cfg.branches);
            c.perturb = perturb;
            c.pole_budget = budget;
            c.levels = depth;
            Built::Affine(Box::new(build_ku_affine(&c)?))
        }
        "ku-escape" => {
            let mut c = KuEscapeConfig::new(fam, st.num("t_target", cfg.t_target, 0.1), depth);
            c.s = st.opt("s", cfg.s);
            c.s_star = st.opt("s_star", cfg.s_star);
            c.r2 = st.opt("r2", cfg.r2);
            c.epsilon = st.opt("epsilon", cfg.epsilon);
            if let Some(xi) = &cfg.xi {
                st.values.insert("xi".into(), json!({ "value": xi, "provenance": Provenance::User }));
            }
            c.xi = cfg.xi.clone();
            c.perturb = perturb;
            c.pole_budget = budget;
            Built::Escape(Box::new(build_ku_escape(&c)?))
        }
        other => return Err(Error::Config(format!("unknown construction '{other}'"))),
    };
    Ok((built, Some(fam)))
}

fn method_name(m: PressureMethod) -> &'static str {
    match m {
        PressureMethod::ExactEnumeration => "exact",
        PressureMethod::ProductLowerBound => "product",
    }
}

/// `t,depth,log_Zn_over_n,method`, one row per `(t, depth)`.
pub fn pressure_csv(curves: &[PressureEstimate]) -> String {
    let mut s = String::from("t,depth,log_Zn_over_n,method\n");
    for p in curves {
        for (i, d) in p.depths.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", p.t, d, p.log_zn_over_n[i], method_name(p.depth_methods[i])));
        }
    }
    s
}

fn report(command: &str, st: Settings, fam: Option<&FamilyDescriptor>, body: Value) -> Value {
    let mut r = json!({
        "schema": SCHEMA_VERSION,
        "command": command,
        "settings": st.values,
    });
    if let Some(f) = fam {
        r["family_descriptor"] = json!(f);
    }
    if let (Value::Object(r), Value::Object(b)) = (&mut r, body) {
        r.extend(b);
    }
    r
}

fn constants_block(ledger: &ConstantLedger, target: f64) -> Value {
    json!({
        "constants": ledger.constants,
        "audits": ledger.audits,
        "theoretical_target": { "value": target, "provenance": Provenance::Analytic },
    })
}

fn wants_csv(cfg: &RunConfig, st: &mut Settings, command: &str, supported: bool) -> Result<bool> {
    let f = st.text("format", &cfg.format, "json");
    match f.as_str() {
        "json" => Ok(false),
        "csv" if supported => Ok(true),
        "csv" => Err(Error::Config(format!("csv output is not available for {command}"))),
        other => Err(Error::Config(format!("unknown format '{other}'"))),
    }
}

/// Executes one subcommand against a fully merged configuration.
pub fn run(command: &str, cfg: &RunConfig) -> Result<RunOutput> {
    if let Some(c) = &cfg.command {
        if c != command {
            return Err(Error::Config(format!("config is for '{c}', invoked '{command}'")));
        }
    }
    let mut st = Settings::default();
    match command {
        "formula" => run_formula(cfg, st),
        "selftest" => run_selftest(cfg, st),
        "poles" => run_poles(cfg, st),
        "escape-bound" => run_escape_bound(cfg, st),
        "escape-check" => run_escape_check(cfg, st),
        "dim" | "pressure" | "schedule" => {
            let csv = wants_csv(cfg, &mut st, command, command != "schedule")?;
            let depth = st.num("depth", cfg.depth, 6);
            let word_cap = st.num("word_cap", cfg.word_cap, DEFAULT_WORD_CAP);
            let (built, fam) = build(cfg, &mut st, depth)?;
            let target = built.target()?;
            let ledger = built.ledger();
            let mut body = constants_block(&ledger, target);
            body["structure"] = built.structure();
            let mut curves = None;
            match command {
                "dim" => {
                    let br = st.text("t_bracket", &cfg.t_bracket, "0:1");
                    let b = parse_floats(&br, 2)?;
                    let tol = st.num("tol", cfg.tol, DEFAULT_BISECTION_TOL);
                    let mut d = bowen_dimension(built.system(), b[0], b[1], tol, depth, word_cap)?;
                    d.system_provenance = ledger.to_json();
                    d.theoretical_target = Some(target);
                    curves = Some(d.pressures.clone());
                    body["dimension"] = json!(d);
                }
                "pressure" => {
                    let grid = match (&cfg.t, &cfg.t_grid) {
                        (Some(t), None) => vec![st.num("t", Some(*t), 0.0)],
                        (None, g) => parse_grid(&st.text("t_grid", g, "0:1:0.1"))?,
                        (Some(_), Some(_)) => return Err(Error::Config("give either t or t_grid".into())),
                    };
                    let spec = built.system().spectrum(depth.max(1), word_cap)?;
                    let c: Vec<PressureEstimate> = grid.iter().map(|t| spec.pressure(*t)).collect();
                    body["pressures"] = json!(c);
                    curves = Some(c);
                }
                _ => {}
            }
            let report = report(command, st, fam.as_ref(), body);
            Ok(RunOutput {
                report,
                csv: if csv {
                    let mut c = curves.unwrap_or_default();
                    c.sort_by(|a, b| a.t.total_cmp(&b.t));
                    Some(pressure_csv(&c))
                } else {
                    None
                },
                failed_audit: false,
            })
        }
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

fn run_formula(cfg: &RunConfig, mut st: Settings) -> Result<RunOutput> {
    wants_csv(cfg, &mut st, "formula", false)?;
    let kind = st.text("kind", &cfg.kind, "escape");
    let rho = st.num("rho", cfg.rho, 1.0);
    let m = st.num("M", cfg.mult, 1);
    let value = match kind.as_str() {
        "escape" => theoretical_dimension(rho, st.num("beta", cfg.beta, 0.0), m)?,
        "mayer" => mayer_dimension(rho, st.num("alpha", cfg.alpha, 0.0), m)?,
        other => return Err(Error::Config(format!("unknown formula kind '{other}'"))),
    };
    let body = json!({ "value": { "value": value, "provenance": Provenance::Analytic } });
    Ok(RunOutput { report: report("formula", st, None, body), csv: None, failed_audit: false })
}

fn run_selftest(cfg: &RunConfig, mut st: Settings) -> Result<RunOutput> {
    wants_csv(cfg, &mut st, "selftest", false)?;
    let n = st.num("samples", cfg.samples, 50);
    let seed = st.num("seed", cfg.seed, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<Vec<f64>> = vec![vec![0.25; 3], vec![0.5, 0.25]];
    for _ in 0..n {
        let k = rng.gen_range(2..=6);
        cases.push((0..k).map(|_| rng.gen_range(0.1..=0.45)).collect());
    }
    let mut rows = Vec::with_capacity(cases.len());
    let mut worst: f64 = 0.0;
    for r in &cases {
        let exact = moran_oracle(r)?;
        // six ratios of 0.45 put the root near 2.24
        let d = bowen_dimension(&NcifsSystem::similarity(r)?, 0.0, 3.0, 1e-9, 4, DEFAULT_WORD_CAP)?;
        let mid = 0.5 * (d.bowen_bracket.0 + d.bowen_bracket.1);
        worst = worst.max((mid - exact).abs());
        rows.push(json!({ "ratios": r, "moran": exact, "engine": mid }));
    }
    let passed = worst <= 1e-6;
    let body = json!({ "passed": passed, "max_abs_error": worst, "cases": rows });
    Ok(RunOutput { report: report("selftest", st, None, body), csv: None, failed_audit: !passed })
}

fn run_poles(cfg: &RunConfig, mut st: Settings) -> Result<RunOutput> {
    let csv = wants_csv(cfg, &mut st, "poles", true)?;
    let fam = parse_family(cfg, &mut st)?;
    let poles = match st.opt("max_modulus", cfg.max_modulus) {
        Some(r) => enumerate_poles(&fam, r)?,
        None => enumerate_poles_count(&fam, st.num("count", cfg.count, 1000))?,
    };
    let est = estimate_order(&poles)?;
    let t = st.num("t", cfg.t, fam.order_rho);
    let borel = borel_partial_sum(&poles, t, None);
    let body = json!({
        "pole_count": poles.len(),
        "order_estimate": est,
        "borel_sum": borel,
        "poles": poles,
    });
    let csv = csv.then(|| {
        let mut s = String::from("re,im,modulus,multiplicity\n");
        for p in &poles {
            s.push_str(&format!("{},{},{},{}\n", p.location.re, p.location.im, p.location.norm(), p.multiplicity));
        }
        s
    });
    Ok(RunOutput { report: report("poles", st, Some(&fam), body), csv, failed_audit: false })
}

fn run_escape_bound(cfg: &RunConfig, mut st: Settings) -> Result<RunOutput> {
    wants_csv(cfg, &mut st, "escape-bound", false)?;
    let fam = parse_family(cfg, &mut st)?;
    let perturb = parse_perturbation(cfg, &mut st)?;
    let budget = st.num("pole_budget", cfg.pole_budget, DEFAULT_POLE_BUDGET);
    let mut ledger = ConstantLedger::default();
    let g = ku_geometry(&fam, st.opt("s", cfg.s), st.opt("s_star", cfg.s_star), st.opt("r2", cfg.r2), &mut ledger)?;
    let target = theoretical_dimension(fam.order_rho, fam.beta, g.m_bound)?;
    let mut body = constants_block(&ledger, target);
    if let Some(grid) = &cfg.t_grid {
        let v = parse_floats(&st.text("t_grid", &Some(grid.clone()), ""), 3)?;
        body["transition"] = json!(transition_scan(&fam, v[0], v[1], v[2], budget, &g)?);
    } else {
        let t = st.num("t", cfg.t, 0.5);
        let sel = select_r3(&fam, t, budget, &g)?;
        let alphabet = pstar_poles(&fam, sel.r3, None, st.num("branches", cfg.branches, 8))?;
        let levels = st.num("depth", cfg.depth, 3);
        body["r3"] = json!(sel);
        body["cover_sum"] = json!(escape_cover_sum(&fam, t, g.s, &alphabet, levels, &perturb, &g));
    }
    body["geometry"] = json!(g);
    Ok(RunOutput { report: report("escape-bound", st, Some(&fam), body), csv: None, failed_audit: false })
}

fn run_escape_check(cfg: &RunConfig, mut st: Settings) -> Result<RunOutput> {
    wants_csv(cfg, &mut st, "escape-check", false)?;
    if cfg.construction.as_deref().is_some_and(|c| c != "ku-escape") {
        return Err(Error::Config("escape-check runs on the ku-escape construction".into()));
    }
    let depth = st.num("depth", cfg.depth, 6);
    let cfg2 = RunConfig { construction: Some("ku-escape".into()), ..cfg.clone() };
    let (built, fam) = build(&cfg2, &mut st, depth)?;
    let Built::Escape(sys) = &built else { unreachable!("construction forced above") };
    let n = st.num("samples", cfg.samples, 32);
    let seed = st.num("seed", cfg.seed, 42);
    let audits = sample_addresses(&sys.system, depth, n, seed)?
        .iter()
        .map(|a| escape_audit(sys, a))
        .collect::<Result<Vec<_>>>()?;
    let passed = audits.iter().all(|a| a.passed);
    let mut body = constants_block(&sys.ledger, sys.theoretical_target);
    body["passed"] = json!(passed);
    body["min_modulus"] = json!(audits.iter().map(|a| a.min_modulus).fold(f64::INFINITY, f64::min));
    body["max_pole_distance"] = json!(audits.iter().map(|a| a.max_pole_distance).fold(0.0, f64::max));
    body["escape_audits"] = json!(audits);
    body["structure"] = built.structure();
    Ok(RunOutput { report: report("escape-check", st, fam.as_ref(), body), csv: None, failed_audit: !passed })
}

fn diagnostic(e: &Error) -> Value {
    let mut d = json!({
        "schema": SCHEMA_VERSION,
        "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() },
    });
    if let Error::ScheduleInfeasible { achieved, needed, .. } = e {
        d["error"]["achieved"] = json!(achieved);
        d["error"]["needed"] = json!(needed);
    }
    d
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Error::Config(format!("{THREADS_ENV}='{v}' is not a count")))?),
            Err(_) => None,
        },
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn execute(cli: &Cli) -> Result<RunOutput> {
    let inv = cli.command.invocation();
    configure_threads(inv.threads)?;
    let cfg = match &inv.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            inv.run.overlay(&RunConfig::from_json(&text)?)
        }
        None => inv.run.clone(),
    };
    let out = run(cli.command.name(), &cfg)?;
    let text = match &out.csv {
        Some(c) => c.clone(),
        None => serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n",
    };
    match &cfg.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None if cli.command.name() == "formula" => {
            println!("{}", out.report["value"]["value"]);
        }
        None => {
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Config(format!("stdout: {e}")))?;
        }
    }
    Ok(out)
}

/// Process entry point; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) if out.failed_audit => {
            eprintln!("{}", json!({ "schema": SCHEMA_VERSION, "error": { "kind": "AuditFailed", "message": format!("{} audit did not pass", cli.command.name()), "exit_code": 3 } }));
            3
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_config_rejects_unknown_keys() {
        assert!(matches!(RunConfig::from_json(r#"{"family": "tan", "bogus": 1}"#), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"family": "tan", "M": 3, "depth": 5}"#).unwrap();
        assert_eq!((c.mult, c.depth), (Some(3), Some(5)));
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig::from_json(r#"{"family": "tan", "depth": 5, "tol": 0.01}"#).unwrap();
        let flags = RunConfig { depth: Some(7), ..Default::default() };
        let m = flags.overlay(&file);
        assert_eq!((m.family.as_deref(), m.depth, m.tol), (Some("tan"), Some(7), Some(0.01)));
    }

    #[test]
    fn grid_is_inclusive() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_floats("0.2", 2).is_err());
    }

    #[test]
    fn formula_reports_provenance() {
        let cfg = RunConfig { rho: Some(2.0), beta: Some(0.0), mult: Some(3), ..Default::default() };
        let out = run("formula", &cfg).unwrap();
        assert_eq!(out.report["value"]["value"], json!(1.5));
        assert_eq!(out.report["settings"]["rho"]["provenance"], json!("user"));
        assert_eq!(out.report["schema"], json!(1));
    }

    #[test]
    fn command_mismatch_is_config_error() {
        let cfg = RunConfig { command: Some("dim".into()), ..Default::default() };
        assert!(matches!(run("formula", &cfg), Err(Error::Config(_))));
    }
}
