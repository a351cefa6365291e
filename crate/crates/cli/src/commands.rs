use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cpdfs_core::fock::{oracle_visibilities, SourceModel};
use cpdfs_core::model::{self, estimate_errors, estimate_params, NoiseModelParams};
use cpdfs_core::polarization::{Pol, StateVector};
use cpdfs_core::protocol::{
    log_log_slope, run_protocol, sample_channel_pair, scaling_experiment, Ancilla, ScalingOptions,
};
use cpdfs_core::rng::substream2;
use cpdfs_core::timetag::io::{self, TagFileHeader};
use cpdfs_core::timetag::{
    calibrate_offsets, expected_accidentals, extract_threefold, simulate_setting_runs, Channel,
    OutcomeTable, TagStreams,
};
use cpdfs_core::tomography::{
    bootstrap_errors, fidelity_to_phi_plus, max_phase_fidelity, reconstruct_mle, MeasurementSetting,
    TomographyData,
};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{OutcomeSource, RunConfig};
use crate::report::{num, sci, Format, Report, Table};
use crate::CliError;

pub const TAGS_DIR: &str = "tags";
pub const COUNTS_FILE: &str = "counts.csv";
pub const RHO_FILE: &str = "rho.csv";
pub const CONFIG_ECHO: &str = "config.toml";

const ORACLE_STREAM: u64 = 0x0AC1E;

/// Everything a subcommand needs besides its own inputs.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn new(mut cfg: RunConfig, seed: Option<u64>, format: Format, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Self { cfg, format, out }
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    /// `# cpdfs <version> config_hash=<hash> seed=<seed>`
    pub fn header(&self) -> String {
        format!(
            "# cpdfs {} config_hash={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.cfg.hash(),
            self.seed()
        )
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn write(&self, path: &Path, body: &str) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io)?;
        }
        fs::write(path, format!("{}\n{body}", self.header())).map_err(CliError::io)
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn echo_config(&self, dir: &Path) -> Result<(), CliError> {
        self.write(&dir.join(CONFIG_ECHO), &self.cfg.canonical())
    }
}

fn undefined_or(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "undefined".into())
}

pub fn predict(ctx: &Context) -> Result<Report, CliError> {
    let m = &ctx.cfg.model;
    let mut r = Report::new("predict");
    let params = match &m.counts {
        Some(counts) => {
            let est = estimate_params(counts, m.g2_s)?;
            let (ds, dn) = estimate_errors(counts, &est);
            r.scalar("s1_prime", sci(est.s1_prime))
                .scalar("n1_prime", sci(est.n1_prime))
                .scalar("s2_prime", sci(est.s2_prime))
                .scalar("chi_s_err", num(ds))
                .scalar("chi_n_err", num(dn));
            est.params
        }
        None => m.params()?,
    };
    let pred = model::predict(&params)?;
    r.scalar("chi_s", num(params.chi_s))
        .scalar("chi_n", num(params.chi_n))
        .scalar("g2_s", num(params.g2_s))
        .scalar("vz", num(pred.vz))
        .scalar("vx", num(pred.vx))
        .scalar("vy", num(pred.vy))
        .scalar("fidelity", num(pred.fidelity));
    if m.overlap_penalty > 0.0 {
        r.scalar("overlap_penalty", num(m.overlap_penalty))
            .scalar("fidelity_with_penalty", num(pred.fidelity - m.overlap_penalty));
    }
    Ok(r)
}

fn source_for(p: &NoiseModelParams, ctx: &Context) -> SourceModel {
    let o = &ctx.cfg.oracle;
    SourceModel {
        signal_mean: o.s1,
        signal_g2: p.g2_s,
        noise_mean: p.chi_n * o.s1,
        coherent_mean: p.chi_s * o.s1,
        herald: Pol::H,
        support: o.support,
    }
}

struct OracleRow {
    params: NoiseModelParams,
    closed: [Option<f64>; 2],
    oracle: [Option<f64>; 3],
}

fn oracle_row(ctx: &Context, p: NoiseModelParams) -> Result<OracleRow, CliError> {
    let o = &ctx.cfg.oracle;
    let v = oracle_visibilities(&source_for(&p, ctx), o.eta1, o.eta2, &o.truncation())?;
    Ok(OracleRow {
        params: p,
        closed: [model::visibility_z(&p).ok(), model::visibility_x(&p).ok()],
        oracle: [v.vz, v.vx, v.vy],
    })
}

fn gap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

pub fn oracle(ctx: &Context) -> Result<Report, CliError> {
    let o = &ctx.cfg.oracle;
    let seed = ctx.seed();
    let rows: Vec<OracleRow> = (0..o.triples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream2(seed, ORACLE_STREAM, i);
            let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let p = NoiseModelParams::new(draw(o.chi_s_range), draw(o.chi_n_range), draw(o.g2_range))?;
            oracle_row(ctx, p)
        })
        .collect::<Result<_, _>>()?;
    let reference = oracle_row(ctx, ctx.cfg.model.params()?)?;

    let mut table = Table::new(["chi_s", "chi_n", "g2_s", "vz_closed", "vz_oracle", "vx_closed", "vx_oracle", "vy_oracle"]);
    let (mut dz, mut dx, mut dxy, mut undefined) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for row in &rows {
        let p = row.params;
        match (gap(row.closed[0], row.oracle[0]), gap(row.closed[1], row.oracle[1]), gap(row.oracle[1], row.oracle[2])) {
            (Some(a), Some(b), Some(c)) => {
                dz = dz.max(a);
                dx = dx.max(b);
                dxy = dxy.max(c);
            }
            _ => undefined += 1,
        }
        table.push(vec![
            num(p.chi_s),
            num(p.chi_n),
            num(p.g2_s),
            undefined_or(row.closed[0]),
            undefined_or(row.oracle[0]),
            undefined_or(row.closed[1]),
            undefined_or(row.oracle[1]),
            undefined_or(row.oracle[2]),
        ]);
    }
    let mut r = Report::new("oracle");
    r.scalar("triples", rows.len())
        .scalar("undefined_points", undefined)
        .scalar("max_dev_vz", sci(dz))
        .scalar("max_dev_vx", sci(dx))
        .scalar("max_gap_vx_vy", sci(dxy))
        .scalar("reference_vz_closed", undefined_or(reference.closed[0]))
        .scalar("reference_vz_oracle", undefined_or(reference.oracle[0]))
        .scalar("reference_vx_closed", undefined_or(reference.closed[1]))
        .scalar("reference_vx_oracle", undefined_or(reference.oracle[1]))
        .scalar("reference_vy_oracle", undefined_or(reference.oracle[2]));
    r.table = Some(table);
    Ok(r)
}

fn outcome_table(cfg: &RunConfig) -> Result<OutcomeTable, CliError> {
    Ok(match cfg.model.outcomes {
        OutcomeSource::Model => OutcomeTable::from_model(&cfg.model.params()?, cfg.model.overlap_penalty)?,
        OutcomeSource::Ideal => OutcomeTable::ideal(),
    })
}

/// Fidelity the simulated state is built to have.
pub fn target_fidelity(cfg: &RunConfig) -> Result<f64, CliError> {
    let t = outcome_table(cfg)?;
    Ok(cpdfs_core::polarization::fidelity(t.state(), &StateVector::phi_plus())?)
}

/// Writes one tag file per analyzer setting under `<dir>/tags`.
pub fn simulate(ctx: &Context, dir: &Path) -> Result<Report, CliError> {
    let cfg = &ctx.cfg;
    let table = outcome_table(cfg)?;
    let settings = cfg.tomography.settings.settings();
    let runs = simulate_setting_runs(&cfg.experiment, &table, &settings, ctx.seed())?;
    let tags_dir = dir.join(TAGS_DIR);
    if tags_dir.exists() {
        // stale runs from a different config would be picked up by coincide
        for entry in fs::read_dir(&tags_dir).map_err(CliError::io)? {
            let path = entry.map_err(CliError::io)?.path();
            let ours = matches!(path.extension().and_then(|e| e.to_str()), Some("ttag" | "csv" | "toml"));
            if path.is_file() && ours {
                fs::remove_file(&path).map_err(CliError::io)?;
            }
        }
    }
    fs::create_dir_all(&tags_dir).map_err(CliError::io)?;
    ctx.echo_config(dir)?;

    let mut t = Table::new(["file", "setting", "clock", "a_prime", "r_double", "b_prime"]);
    let mut total = 0usize;
    for (i, run) in runs.iter().enumerate() {
        let label = run.setting.label();
        let header = TagFileHeader {
            setting: Some(label.clone()),
            config: Some(cfg.experiment.clone()),
            ..TagFileHeader::new(cfg.experiment.duration_ps, ctx.seed())
        };
        let stem = format!("{i:02}_{label}");
        let path = io::save(&tags_dir, &stem, &run.streams, &header, cfg.simulate.tag_format, &ctx.header())?;
        let s = &run.streams;
        total += s.len();
        t.push(vec![
            path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            label,
            s.get(Channel::Clock).len().to_string(),
            s.get(Channel::APrime).len().to_string(),
            s.get(Channel::RDouble).len().to_string(),
            s.get(Channel::BPrime).len().to_string(),
        ]);
    }
    let mut r = Report::new("simulate");
    r.scalar("settings", runs.len())
        .scalar("duration_ps", cfg.experiment.duration_ps)
        .scalar("total_tags", total)
        .scalar("target_fidelity", num(target_fidelity(cfg)?));
    r.table = Some(t);
    Ok(r)
}

fn parse_setting(label: &str) -> Result<MeasurementSetting, CliError> {
    let mut chars = label.chars();
    match (chars.next(), chars.next(), chars.next()) {
        (Some(m), Some(n), None) => Ok(MeasurementSetting::new(
            m.to_string().parse()?,
            n.to_string().parse()?,
        )),
        _ => Err(CliError::data(format!("bad setting label `{label}`"))),
    }
}

/// Tag files in `dir`, ordered by name.
fn tag_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ttag" | "csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no tag files in {}", dir.display())));
    }
    Ok(files)
}

/// Calibrates offsets, counts three-folds per setting and writes
/// `<out>/counts.csv`.
pub fn coincide(ctx: &Context, tags_dir: &Path, out: &Path) -> Result<Report, CliError> {
    let section = &ctx.cfg.coincidence;
    let mut runs: Vec<(MeasurementSetting, TagStreams)> = Vec::new();
    let mut grid: Option<(u64, u64)> = None;
    for path in tag_files(tags_dir)? {
        let (header, streams) = io::load(&path)?;
        let label = header
            .setting
            .as_deref()
            .ok_or_else(|| CliError::data(format!("{} has no setting", path.display())))?;
        let exp = header.config.as_ref().unwrap_or(&ctx.cfg.experiment);
        let g = (exp.rep_period_ps, exp.clock_divider);
        if grid.is_some_and(|prev| prev != g) {
            return Err(CliError::data("tag files disagree on the pulse grid".into()));
        }
        grid = Some(g);
        runs.push((parse_setting(label)?, streams));
    }
    let (rep, divider) = grid.expect("at least one tag file");

    let windows = if section.calibrate {
        let refs: Vec<&TagStreams> = runs.iter().map(|r| &r.1).collect();
        section.windows.with_offsets(calibrate_offsets(&refs, rep, divider, &section.calibration)?)
    } else {
        section.windows
    };

    let counted: Vec<(u64, f64)> = runs
        .par_iter()
        .map(|(_, s)| -> Result<(u64, f64), CliError> {
            let n = extract_threefold(s, &windows, rep, divider)?.count;
            let secs = s.duration_ps as f64 * 1e-12;
            let rate = |ch| if secs > 0.0 { s.get(ch).len() as f64 / secs } else { 0.0 };
            let acc = expected_accidentals(
                [rate(Channel::APrime), rate(Channel::RDouble), rate(Channel::BPrime)],
                [windows.w_a, windows.w_r, windows.w_b],
                (s.get(Channel::Clock).len() as u64 * divider) as f64,
            );
            Ok((n, acc))
        })
        .collect::<Result<_, _>>()?;

    let mut per_setting: BTreeMap<MeasurementSetting, u64> = BTreeMap::new();
    let mut order = Vec::new();
    for ((setting, _), (n, _)) in runs.iter().zip(&counted) {
        if !per_setting.contains_key(setting) {
            order.push(*setting);
        }
        *per_setting.entry(*setting).or_default() += n;
    }
    let data = TomographyData {
        entries: order.iter().map(|s| (*s, per_setting[s] as f64)).collect(),
    };
    ctx.write(&out.join(COUNTS_FILE), &data.to_csv())?;

    let mut t = Table::new(["setting", "threefolds"]);
    for s in &order {
        t.push(vec![s.label(), per_setting[s].to_string()]);
    }
    let mut r = Report::new("coincide");
    r.scalar("dt1_ps", windows.dt1)
        .scalar("dt2_ps", windows.dt2)
        .scalar("dt3_ps", windows.dt3)
        .scalar("w_a_ps", windows.w_a)
        .scalar("w_r_ps", windows.w_r)
        .scalar("w_b_ps", windows.w_b)
        .scalar("calibrated", section.calibrate)
        .scalar("files", runs.len())
        .scalar("threefolds", counted.iter().map(|c| c.0).sum::<u64>())
        .scalar("expected_accidentals", num(counted.iter().map(|c| c.1).sum::<f64>()));
    r.table = Some(t);
    Ok(r)
}

/// Reconstructs ρ from a counts file and writes `<out>/rho.csv`.
pub fn tomography(ctx: &Context, counts: &Path, out: &Path) -> Result<Report, CliError> {
    let text = fs::read_to_string(counts)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", counts.display())))?;
    let data = TomographyData::from_csv(&text)?;
    let tomo = &ctx.cfg.tomography;
    let opts = tomo.mle();
    let mle = reconstruct_mle(&data, &opts)?;
    let rho = &mle.rho;
    let f = fidelity_to_phi_plus(rho)?;
    let pf = max_phase_fidelity(rho)?;

    let mut body = String::from("row,col,re,im\n");
    for i in 0..4 {
        for j in 0..4 {
            let z = rho.get(i, j);
            body.push_str(&format!("{i},{j},{:.12e},{:.12e}\n", z.re, z.im));
        }
    }
    ctx.write(&out.join(RHO_FILE), &body)?;

    let min_eig = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    let mut r = Report::new("tomography");
    r.scalar("total_counts", data.total())
        .scalar("settings", data.entries.len())
        .scalar("iterations", mle.iterations)
        .scalar("converged", mle.converged)
        .scalar("log_likelihood", num(*mle.log_likelihood.last().expect("history is never empty")))
        .scalar("min_eigenvalue", sci(min_eig))
        .scalar("fidelity", num(f))
        .scalar("f_theta", num(pf.f_theta))
        .scalar("theta_star", num(pf.theta_star));
    if tomo.bootstrap >= 2 {
        let b = bootstrap_errors(&data, tomo.bootstrap, ctx.seed(), &opts)?;
        r.scalar("fidelity_sd", num(b.sd_fidelity))
            .scalar("f_theta_sd", num(b.sd_f_theta))
            .scalar("bootstrap", tomo.bootstrap);
    }
    Ok(r)
}

pub fn protocol(ctx: &Context) -> Result<Report, CliError> {
    let seed = ctx.seed();
    let runs: Vec<_> = (0..ctx.cfg.protocol.trials)
        .into_par_iter()
        .map(|i| {
            let (up, down) = sample_channel_pair(seed, i);
            run_protocol(&up, &down)
        })
        .collect::<Result<_, _>>()?;
    let mut t = Table::new(["trial", "success", "expected", "fidelity_d", "fidelity_a"]);
    let (mut max_f, mut max_p, mut mean) = (0.0f64, 0.0f64, 0.0);
    for (i, run) in runs.iter().enumerate() {
        for f in run.fidelities.iter().flatten() {
            max_f = max_f.max((f - 1.0).abs());
        }
        max_p = max_p.max((run.success_probability - run.expected_success).abs());
        mean += run.success_probability / runs.len() as f64;
        t.push(vec![
            i.to_string(),
            sci(run.success_probability),
            sci(run.expected_success),
            undefined_or(run.fidelities[0]),
            undefined_or(run.fidelities[1]),
        ]);
    }
    let mut r = Report::new("protocol");
    r.scalar("trials", runs.len())
        .scalar("max_fidelity_error", sci(max_f))
        .scalar("max_success_error", sci(max_p))
        .scalar("mean_success", num(mean));
    r.table = Some(t);
    r.table_in_text = false;
    Ok(r)
}

pub fn scaling(ctx: &Context) -> Result<Report, CliError> {
    let s = &ctx.cfg.scaling;
    let opts = ScalingOptions {
        trials: s.trials,
        max_launch_mean: s.max_launch_mean,
        detector_efficiency: s.detector_efficiency,
        seed: ctx.seed(),
    };
    let mut r = Report::new("scaling");
    let mut t = Table::new(["ancilla", "transmittance", "success_rate"]);
    for ancilla in [Ancilla::SinglePhoton, Ancilla::CoherentCompensated { mu: s.mu }] {
        let rows = scaling_experiment(&s.t_grid, ancilla, &opts)?;
        r.scalar(&format!("slope_{}", ancilla.name()), num(log_log_slope(&rows)?));
        for row in rows {
            t.push(vec![ancilla.name().into(), num(row.transmittance), sci(row.success_rate)]);
        }
    }
    r.table = Some(t);
    Ok(r)
}

/// simulate → coincide → tomography through files in `dir`.
pub fn pipeline(ctx: &Context, dir: &Path) -> Result<Report, CliError> {
    let stage = |r: Report| r.emit(ctx.format, &ctx.header(), Some(dir));
    stage(simulate(ctx, dir)?)?;
    stage(coincide(ctx, &dir.join(TAGS_DIR), dir)?)?;
    let tomo = tomography(ctx, &dir.join(COUNTS_FILE), dir)?;
    stage(tomo.clone())?;

    let read = |k: &str| -> Option<f64> { tomo.get(k)?.parse().ok() };
    let f = read("fidelity").expect("tomography reports fidelity");
    let target = target_fidelity(&ctx.cfg)?;
    let mut r = Report::new("pipeline");
    r.scalar("fidelity", num(f));
    if let Some(sd) = read("fidelity_sd") {
        r.scalar("fidelity_sd", num(sd));
    }
    r.scalar("f_theta", num(read("f_theta").expect("tomography reports F_theta")));
    if let Some(sd) = read("f_theta_sd") {
        r.scalar("f_theta_sd", num(sd));
    }
    r.scalar("target_fidelity", num(target));
    if let Some(sd) = read("fidelity_sd").filter(|sd| *sd > 0.0) {
        let z = (f - target) / sd;
        r.scalar("z_score", num(z)).scalar("within_3_sigma", z.abs() <= 3.0);
    }
    Ok(r)
}
