//! Configuration ingestion, experiment orchestration, and report persistence.
//!
//! One JSON document configures a run; identical configuration and seed
//! produce byte-identical reports. Reports embed the configuration hash and
//! the library version, outputs are written atomically (temp file then
//! rename), and CSV tables use dot decimals, comma separators, and LF line
//! endings regardless of locale.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use fcc_core::analysis::{
    certify_fcc, domination_audit, limit_set_probe, profile_csv, refute_fcc, residual_table_csv,
    steer, AnalysisConfig, AnalysisError, ProfileRow, ResidualRow, SteerStrategy, Verdict,
};
use fcc_core::dyadic::{expect, DyadicMeasure, DyadicRV};
use fcc_core::generators::{materialize, SequenceKind, SequenceSpec};
use fcc_core::hulls::SimplexPoint;
use fcc_core::num::{format_ratio, parse_ratio, pow2, ratio, to_f64, Ratio};
use fcc_core::rng::SplitMix64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Resource guards for one experiment.
pub const MAX_HORIZON: usize = 1 << 16;
pub const MAX_CONFIG_LEVEL: u32 = 15;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Precondition(_) => EXIT_PRECONDITION,
            CliError::Io(_) => EXIT_CONFIG,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// --- configuration schema ---------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
pub struct SequenceConfig {
    pub kind: String,
    pub horizon: usize,
    #[serde(default)]
    pub base: Option<DyadicRV>,
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MeasureConfig {
    Named(String),
    Inline(DyadicMeasure),
}

#[derive(Clone, Debug, Deserialize)]
pub struct ThresholdConfig {
    #[serde(default)]
    pub tau: Option<String>,
    #[serde(default)]
    pub fw_tol: Option<f64>,
    #[serde(default)]
    pub probe_threshold: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ProbeConfig {
    #[serde(default = "default_probe_points")]
    pub points: usize,
    #[serde(default = "default_probe_support")]
    pub support: usize,
}

fn default_probe_points() -> usize {
    12
}

fn default_probe_support() -> usize {
    16
}

#[derive(Clone, Debug, Deserialize)]
pub struct ExperimentConfig {
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub limit: Option<DyadicRV>,
    #[serde(default)]
    pub targets: Vec<DyadicRV>,
    #[serde(default)]
    pub thresholds: Option<ThresholdConfig>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// A fully validated experiment, ready to run.
pub struct Experiment {
    pub seq: Vec<DyadicRV>,
    pub measure: DyadicMeasure,
    pub limit: DyadicRV,
    pub targets: Vec<DyadicRV>,
    pub analysis: AnalysisConfig,
    pub probe_threshold: Ratio,
    pub probe_points: usize,
    pub probe_support: usize,
    pub strategy: Option<SteerStrategy>,
    pub seed: u64,
    pub config_sha256: String,
}

fn parse_kind(cfg: &SequenceConfig) -> Result<SequenceKind, CliError> {
    match cfg.kind.as_str() {
        "sliding_hump" => Ok(SequenceKind::SlidingHump),
        "spike" => Ok(SequenceKind::Spike),
        "rademacher_shift" => Ok(SequenceKind::RademacherShift),
        "shifted_hump" => {
            let base = cfg
                .base
                .clone()
                .ok_or_else(|| config_err("shifted_hump needs a `base` random variable"))?;
            Ok(SequenceKind::ShiftedHump(base))
        }
        "custom" => {
            let path = cfg
                .path
                .clone()
                .ok_or_else(|| config_err("custom sequences need a `path`"))?;
            Ok(SequenceKind::Custom(PathBuf::from(path)))
        }
        other => Err(config_err(format!("unknown sequence kind `{other}`"))),
    }
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let bytes =
        fs::read(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let parsed: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| config_err(format!("cannot parse {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((parsed, hex))
}

pub fn validate(
    config: &ExperimentConfig,
    config_sha256: String,
    seed_override: Option<u64>,
) -> Result<Experiment, CliError> {
    if config.sequence.horizon == 0 || config.sequence.horizon > MAX_HORIZON {
        return Err(config_err(format!("horizon must lie in 1..={MAX_HORIZON}")));
    }
    let kind = parse_kind(&config.sequence)?;
    let spec = SequenceSpec::new(kind, config.sequence.horizon);
    let seq = materialize(&spec).map_err(|e| config_err(format!("sequence: {e}")))?;
    let mut level = 0u32;
    for (i, f) in seq.iter().enumerate() {
        if f.level() > MAX_CONFIG_LEVEL {
            return Err(config_err(format!(
                "sequence element {} sits at level {}, beyond the guard {MAX_CONFIG_LEVEL}",
                i + 1,
                f.level()
            )));
        }
        level = level.max(f.level());
    }

    let limit = config.limit.clone().unwrap_or_else(|| DyadicRV::zero(0));
    if limit.level() > MAX_CONFIG_LEVEL {
        return Err(config_err("limit level beyond the guard"));
    }
    level = level.max(limit.level());
    for t in &config.targets {
        if t.level() > MAX_CONFIG_LEVEL {
            return Err(config_err("target level beyond the guard"));
        }
        level = level.max(t.level());
    }

    let measure = match &config.measure {
        None | Some(MeasureConfig::Named(_)) => {
            if let Some(MeasureConfig::Named(name)) = &config.measure {
                if name != "lebesgue" {
                    return Err(config_err(format!("unknown measure `{name}`")));
                }
            }
            DyadicMeasure::lebesgue(level).map_err(|e| config_err(e.to_string()))?
        }
        Some(MeasureConfig::Inline(m)) => {
            if m.level() > MAX_CONFIG_LEVEL {
                return Err(config_err("measure level beyond the guard"));
            }
            m.clone()
        }
    };

    let mut analysis = AnalysisConfig::for_horizon(seq.len());
    let mut probe_threshold = ratio(1, 10_000);
    if let Some(thresholds) = &config.thresholds {
        if let Some(tau) = &thresholds.tau {
            let tau = parse_ratio(tau).map_err(|e| config_err(format!("tau: {e}")))?;
            if !num_positive(&tau) {
                return Err(config_err("tau must be positive"));
            }
            analysis.tau = tau;
        }
        if let Some(fw_tol) = thresholds.fw_tol {
            if fw_tol <= 0.0 || fw_tol.is_nan() {
                return Err(config_err("fw_tol must be positive"));
            }
            analysis.fw_tol = fw_tol;
        }
        if let Some(raw) = &thresholds.probe_threshold {
            let t = parse_ratio(raw).map_err(|e| config_err(format!("probe_threshold: {e}")))?;
            if !num_positive(&t) {
                return Err(config_err("probe_threshold must be positive"));
            }
            probe_threshold = t;
        }
    }

    let strategy = match config.strategy.as_deref() {
        None | Some("auto") => None,
        Some("lp") => Some(SteerStrategy::Lp),
        Some("paper_fast_path") => Some(SteerStrategy::PaperFastPath),
        Some(other) => return Err(config_err(format!("unknown strategy `{other}`"))),
    };

    let (probe_points, probe_support) = match &config.probe {
        Some(p) => {
            if p.points < 2 || p.support == 0 || p.support > seq.len() {
                return Err(config_err(
                    "probe needs points >= 2 and 1 <= support <= horizon",
                ));
            }
            (p.points, p.support)
        }
        None => (
            default_probe_points(),
            default_probe_support().min(seq.len()),
        ),
    };

    Ok(Experiment {
        seq,
        measure,
        limit,
        targets: config.targets.clone(),
        analysis,
        probe_threshold,
        probe_points,
        probe_support,
        strategy,
        seed: seed_override.or(config.seed).unwrap_or(0),
        config_sha256,
    })
}

fn num_positive(q: &Ratio) -> bool {
    fcc_core::num::is_positive(q)
}

// --- report envelope and outputs ------------------------------------------------------

#[derive(Serialize)]
struct Envelope<R: Serialize> {
    version: String,
    command: String,
    config_sha256: String,
    seed: u64,
    report: R,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_report<R: Serialize>(
    out_dir: &Path,
    command: &str,
    experiment: &Experiment,
    report: R,
) -> Result<(), CliError> {
    let envelope = Envelope {
        version: fcc_core::VERSION.to_string(),
        command: command.to_string(),
        config_sha256: experiment.config_sha256.clone(),
        seed: experiment.seed,
        report,
    };
    let json = serde_json::to_string_pretty(&envelope)
        .map_err(|e| config_err(format!("serialize report: {e}")))?;
    write_atomic(&out_dir.join("report.json"), json.as_bytes())
}

// --- per-command reports ----------------------------------------------------------------

#[derive(Serialize)]
struct GenerateReport {
    horizon: usize,
    max_level: u32,
    means: Vec<ResidualRow>,
}

#[derive(Serialize)]
struct SteerReport {
    strategy: String,
    outputs: usize,
    metric_curve: Vec<ProfileRow>,
    l1_curve: Vec<ResidualRow>,
}

#[derive(Serialize)]
struct AuditReport {
    steer_strategy: String,
    audit: fcc_core::analysis::DominationReport,
}

#[derive(Serialize)]
struct ProbeRunReport {
    points: usize,
    support: usize,
    truncation: usize,
    probe: fcc_core::analysis::ProbeReport,
}

pub fn run_command(
    command: &str,
    config_path: &Path,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
    threads: usize,
    verbose: bool,
) -> Result<i32, CliError> {
    if threads == 0 {
        return Err(config_err("threads must be at least 1"));
    }
    if command == "report" {
        return rerender_report(config_path, out_override, verbose);
    }

    let (config, sha) = load_config(config_path)?;
    let experiment = validate(&config, sha, seed_override)?;
    let out_dir = resolve_out_dir(&config, out_override);
    fs::create_dir_all(&out_dir)?;

    match command {
        "generate" => generate(&experiment, &out_dir, verbose),
        "steer" => steer_cmd(&experiment, &out_dir, verbose),
        "certify" => certify_cmd(&experiment, &out_dir, verbose),
        "refute" => refute_cmd(&experiment, &out_dir, verbose),
        "audit" => audit_cmd(&experiment, &out_dir, verbose),
        "probe" => probe_cmd(&experiment, &out_dir, verbose),
        other => {
            eprintln!("unknown command `{other}`");
            Ok(EXIT_USAGE)
        }
    }
}

fn resolve_out_dir(config: &ExperimentConfig, out_override: Option<&Path>) -> PathBuf {
    if let Some(path) = out_override {
        return path.to_path_buf();
    }
    if let Ok(env_dir) = std::env::var("OUTPUT_DIR") {
        if !env_dir.is_empty() {
            return PathBuf::from(env_dir);
        }
    }
    PathBuf::from(
        config
            .output_dir
            .clone()
            .unwrap_or_else(|| "fcc-out".to_string()),
    )
}

fn generate(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let json = serde_json::to_string_pretty(&experiment.seq)
        .map_err(|e| config_err(format!("serialize sequence: {e}")))?;
    write_atomic(&out_dir.join("sequence.json"), json.as_bytes())?;

    let means = experiment
        .seq
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let value = match expect(f, &experiment.measure) {
                fcc_core::ExtRational::Finite(v) => v,
                fcc_core::ExtRational::Infinite => Ratio::from_integer((-1).into()),
            };
            ResidualRow { n: i + 1, value }
        })
        .collect::<Vec<_>>();
    let report = GenerateReport {
        horizon: experiment.seq.len(),
        max_level: experiment.seq.iter().map(|f| f.level()).max().unwrap_or(0),
        means,
    };
    write_report(out_dir, "generate", experiment, report)?;
    if verbose {
        eprintln!("wrote {} elements", experiment.seq.len());
    }
    Ok(EXIT_OK)
}

fn pick_strategy(experiment: &Experiment) -> SteerStrategy {
    match experiment.strategy {
        Some(s) => s,
        None => {
            if fcc_core::analysis::detect_shifted_hump(&experiment.seq).is_some() {
                SteerStrategy::PaperFastPath
            } else {
                SteerStrategy::Lp
            }
        }
    }
}

fn first_target(experiment: &Experiment) -> Result<&DyadicRV, CliError> {
    experiment
        .targets
        .first()
        .ok_or_else(|| config_err("this command needs at least one entry in `targets`"))
}

fn map_analysis_err(e: AnalysisError) -> CliError {
    match &e {
        AnalysisError::ConvergencePrecondition { .. }
        | AnalysisError::MissingCertificate
        | AnalysisError::FastPathUnavailable(_) => CliError::Precondition(e.to_string()),
        _ => config_err(e.to_string()),
    }
}

fn steer_cmd(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let target = first_target(experiment)?;
    let strategy = pick_strategy(experiment);
    let outcome = steer(
        &experiment.seq,
        target,
        &experiment.measure,
        experiment.seq.len(),
        strategy,
    )
    .map_err(map_analysis_err)?;

    let schedule_json = serde_json::to_string_pretty(&outcome.schedule)
        .map_err(|e| config_err(format!("serialize schedule: {e}")))?;
    write_atomic(&out_dir.join("schedule.json"), schedule_json.as_bytes())?;

    let mut curves = String::from("n,metric,l1_decimal,l1_rational\n");
    for (i, (m, l1)) in outcome
        .metric_curve
        .iter()
        .zip(outcome.l1_curve.iter())
        .enumerate()
    {
        curves.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            m,
            to_f64(l1),
            format_ratio(l1)
        ));
    }
    write_atomic(&out_dir.join("curves.csv"), curves.as_bytes())?;

    let report = SteerReport {
        strategy: outcome.strategy.name().to_string(),
        outputs: outcome.outputs.len(),
        metric_curve: outcome
            .metric_curve
            .iter()
            .enumerate()
            .map(|(i, v)| ProfileRow {
                n: i + 1,
                value: *v,
            })
            .collect(),
        l1_curve: outcome
            .l1_curve
            .iter()
            .enumerate()
            .map(|(i, v)| ResidualRow {
                n: i + 1,
                value: v.clone(),
            })
            .collect(),
    };
    write_report(out_dir, "steer", experiment, report)?;
    if verbose {
        eprintln!("steered {} outputs", outcome.outputs.len());
    }
    Ok(EXIT_OK)
}

fn conv_profile_csv(report: &fcc_core::analysis::FccReport) -> String {
    let rows: Vec<ProfileRow> = report
        .diagnostics
        .conv_profile
        .iter()
        .enumerate()
        .map(|(i, v)| ProfileRow { n: i + 1, value: *v })
        .collect();
    profile_csv(&rows)
}

fn certify_cmd(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let report = certify_fcc(
        &experiment.seq,
        &experiment.limit,
        &experiment.measure,
        &experiment.analysis,
    )
    .map_err(map_analysis_err)?;
    write_atomic(
        &out_dir.join("conv_profile.csv"),
        conv_profile_csv(&report).as_bytes(),
    )?;
    if let Some(cert) = &report.certificate {
        write_atomic(
            &out_dir.join("residuals.csv"),
            residual_table_csv(&cert.residual_table).as_bytes(),
        )?;
    }
    let verdict = report.verdict;
    write_report(out_dir, "certify", experiment, report)?;
    if verbose {
        eprintln!("certify verdict: {verdict:?}");
    }
    Ok(EXIT_OK)
}

fn refute_cmd(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let report = refute_fcc(
        &experiment.seq,
        &experiment.limit,
        &experiment.measure,
        &experiment.targets,
        &experiment.analysis,
    )
    .map_err(map_analysis_err)?;
    write_atomic(
        &out_dir.join("conv_profile.csv"),
        conv_profile_csv(&report).as_bytes(),
    )?;
    if let Some(witness) = &report.witness {
        let schedule_json = serde_json::to_string_pretty(&witness.schedule)
            .map_err(|e| config_err(format!("serialize schedule: {e}")))?;
        write_atomic(
            &out_dir.join("witness_schedule.json"),
            schedule_json.as_bytes(),
        )?;
        write_atomic(
            &out_dir.join("metric_profile.csv"),
            profile_csv(&witness.metric_profile).as_bytes(),
        )?;
    }
    let verdict = report.verdict;
    write_report(out_dir, "refute", experiment, report)?;
    if verbose {
        eprintln!("refute verdict: {verdict:?}");
    }
    Ok(EXIT_OK)
}

fn audit_cmd(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let target = first_target(experiment)?;
    let strategy = pick_strategy(experiment);
    let outcome = steer(
        &experiment.seq,
        target,
        &experiment.measure,
        experiment.seq.len(),
        strategy,
    )
    .map_err(map_analysis_err)?;
    let audit = domination_audit(
        &experiment.seq,
        &experiment.limit,
        target,
        &outcome.outputs,
        &experiment.measure,
    );

    let mut utility = String::from("n,schedule_utility,tail_infimum,ok\n");
    for row in &audit.utility_rows {
        utility.push_str(&format!(
            "{},{},{},{}\n",
            row.n, row.schedule_utility, row.tail_infimum, row.ok
        ));
    }
    write_atomic(&out_dir.join("utility.csv"), utility.as_bytes())?;

    let report = AuditReport {
        steer_strategy: outcome.strategy.name().to_string(),
        audit,
    };
    write_report(out_dir, "audit", experiment, report)?;
    if verbose {
        eprintln!("audit written");
    }
    Ok(EXIT_OK)
}

/// Seeded simplex points converging coordinatewise: a fixed base pattern
/// plus a dyadically shrinking perturbation on one late coordinate.
pub fn sample_alphas(
    seed: u64,
    points: usize,
    support: usize,
    horizon: usize,
) -> Vec<SimplexPoint> {
    let mut rng = SplitMix64::new(seed);
    let anchors = 2 + (rng.below(3) as usize);
    let mut base: Vec<(usize, Ratio)> = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for _ in 0..anchors {
        let idx = 1 + rng.below(support as u64) as usize;
        if used.insert(idx) {
            base.push((idx, ratio(1, (anchors as i64 + 1) * 4)));
        }
    }
    base.sort_by_key(|(i, _)| *i);
    let pert = (support + 1 + rng.below(4) as usize).min(horizon);
    (1..=points)
        .map(|k| {
            let mut weights = base.clone();
            if pert > weights.last().map(|(i, _)| *i).unwrap_or(0) {
                weights.push((pert, pow2(-(k as i64 + 2))));
            }
            SimplexPoint::new(weights).expect("sampled weights stay in the simplex")
        })
        .collect()
}

fn probe_cmd(experiment: &Experiment, out_dir: &Path, verbose: bool) -> Result<i32, CliError> {
    let certify = certify_fcc(
        &experiment.seq,
        &experiment.limit,
        &experiment.measure,
        &experiment.analysis,
    )
    .map_err(map_analysis_err)?;
    if certify.verdict != Verdict::Certified {
        return Err(CliError::Precondition(
            "the limit-set probe needs a certified fixture; certification was inconclusive".into(),
        ));
    }
    let cert = certify
        .certificate
        .expect("certified reports carry a certificate");

    let truncation = (experiment.probe_support + 12).min(experiment.seq.len());
    let alphas = sample_alphas(
        experiment.seed,
        experiment.probe_points,
        experiment.probe_support,
        experiment.seq.len(),
    );
    let probe = limit_set_probe(
        &experiment.seq,
        &experiment.limit,
        &cert,
        &alphas,
        truncation,
        &experiment.probe_threshold,
    )
    .map_err(map_analysis_err)?;

    write_atomic(
        &out_dir.join("l1_profile.csv"),
        residual_table_csv(&probe.l1_profile).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("metric_profile.csv"),
        profile_csv(&probe.metric_profile).as_bytes(),
    )?;
    let report = ProbeRunReport {
        points: experiment.probe_points,
        support: experiment.probe_support,
        truncation,
        probe,
    };
    write_report(out_dir, "probe", experiment, report)?;
    if verbose {
        eprintln!("probe written");
    }
    Ok(EXIT_OK)
}

/// Re-render an existing report: print the headline and regenerate CSV
/// tables found inside. Deterministic and read-only with respect to the
/// report itself.
fn rerender_report(
    report_path: &Path,
    out_override: Option<&Path>,
    verbose: bool,
) -> Result<i32, CliError> {
    let bytes = fs::read(report_path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", report_path.display())))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| config_err(format!("cannot parse {}: {e}", report_path.display())))?;
    let command = value
        .get("command")
        .and_then(|v| v.as_str())
        .ok_or_else(|| config_err("not a report file: missing `command`"))?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("?");
    let sha = value
        .get("config_sha256")
        .and_then(|v| v.as_str())
        .unwrap_or("?");
    println!("command: {command}");
    println!("version: {version}");
    println!("config_sha256: {sha}");
    if let Some(verdict) = value.pointer("/report/verdict").and_then(|v| v.as_str()) {
        println!("verdict: {verdict}");
    }

    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| report_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out_dir)?;

    let extract = |pointer: &str, name: &str| -> Result<(), CliError> {
        if let Some(rows) = value.pointer(pointer).and_then(|v| v.as_array()) {
            let mut csv = String::from("n,value_decimal,value_rational\n");
            for row in rows {
                let n = row.get("n").and_then(|v| v.as_u64()).unwrap_or(0);
                match row.get("value") {
                    Some(serde_json::Value::String(raw)) => {
                        let decimal = parse_ratio(raw).map(|q| to_f64(&q)).unwrap_or(f64::NAN);
                        csv.push_str(&format!("{n},{decimal},{raw}\n"));
                    }
                    Some(serde_json::Value::Number(num)) => {
                        csv.push_str(&format!("{n},{num},\n"));
                    }
                    _ => {}
                }
            }
            write_atomic(&out_dir.join(name), csv.as_bytes())?;
            if verbose {
                eprintln!("re-rendered {name}");
            }
        }
        Ok(())
    };
    extract("/report/certificate/residual_table", "report_residuals.csv")?;
    extract(
        "/report/witness/metric_profile",
        "report_metric_profile.csv",
    )?;
    Ok(EXIT_OK)
}
