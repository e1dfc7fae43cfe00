//! The `halfv` command line.
//!
//! Exit codes: 0 success, 2 validation or configuration error, 3 I/O error,
//! 64 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use halfv_core::anchorcover::{plan_prune, RelevanceContext};
use halfv_core::decoder::{build_decoder, synthesize_embeddings, ForwardOptions, VanillaPlanner};
use halfv_core::entropy::probe_trace;
use halfv_core::flops::{ivr_budget, speedup, total_flops, vanilla_flops, FlopsBudget};
use halfv_core::lifecycle::{detect_stages, kl_divergence, layer_kl_probe, marginal_utility, LifecycleReport};
use halfv_core::rng::SplitMix64;
use halfv_core::ssr::HalfVPlanner;
use halfv_core::{ArchProfile, Retention, SsrMode, TokenGroup};

use crate::config::{self, DetectConfig, FlopsConfig, Loaded, SimulateConfig, SweepGrid};
use crate::error::{Error, Result};
use crate::report::{format_real_short, render_with_header, sha256_hex, Cell, RunManifest, Table};
use crate::trace_io::{read_trace, write_trace};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "halfv", version, about = "Redundancy-lifecycle probes, visual token pruning and staged FLOPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed recorded in the report header; drives all randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Truncated matrix entropy of every trace layer per token group.
    Probe {
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated groups out of visual, text, all.
        #[arg(long, value_delimiter = ',', default_value = "visual,text,all", value_parser = parse_group)]
        groups: Vec<TokenGroup>,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Stage II/III onsets from the visual entropy curve of a trace.
    DetectStages {
        #[arg(long)]
        trace: PathBuf,
        /// JSON with optional `stages` thresholds and `l_ivr`/`l_ssr` overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// AnchorCover pruning plan for one trace layer.
    Prune {
        #[arg(long)]
        trace: PathBuf,
        /// JSON profile; `r_ivr` sets the budget, `r_anchor` the anchor share.
        #[arg(long)]
        config: PathBuf,
        /// Trace layer to prune (defaults to the profile's `l_ivr`).
        #[arg(long)]
        layer: Option<usize>,
        /// Number of tokens to keep, overriding `r_ivr`.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Vanilla vs. accelerated forward of a seeded toy decoder.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form staged FLOPs.
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Evaluate the config's `sweep` grid.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Marginal utility (−ΔM)/(ΔC+ε).
    Mu {
        /// Performance change; negative is a drop.
        #[arg(long, allow_negative_numbers = true)]
        dm: f64,
        /// Cost reduction.
        #[arg(long, allow_negative_numbers = true)]
        dc: f64,
        #[arg(long, default_value_t = 1e-8, allow_negative_numbers = true)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_group(s: &str) -> std::result::Result<TokenGroup, String> {
    TokenGroup::from_name(s).ok_or_else(|| format!("unknown token group '{s}' (expected visual, text or all)"))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code. Reports go to files or `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "halfv: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Probe { trace, groups, out, common } => {
            cmd_probe(&trace, &groups, out.as_deref(), common.seed, stdout)
        }
        Command::DetectStages { trace, config, out, common } => {
            cmd_detect_stages(&trace, config.as_deref(), out.as_deref(), common.seed, stdout)
        }
        Command::Prune { trace, config, layer, budget, out, common } => {
            cmd_prune(&trace, &config, layer, budget, out.as_deref(), common.seed, stdout)
        }
        Command::Simulate { config, out, common } => cmd_simulate(&config, &out, common.seed),
        Command::Flops { config, sweep, out, common } => cmd_flops(&config, sweep, out.as_deref(), common.seed, stdout),
        Command::Mu { dm, dc, eps, out, common } => cmd_mu(dm, dc, eps, out.as_deref(), common.seed, stdout),
    }
}

fn manifest<T>(subcommand: &str, seed: u64, config: Option<(&Path, &Loaded<T>)>) -> RunManifest {
    let mut m = RunManifest::new(subcommand, seed);
    if let Some((path, loaded)) = config {
        m.config = Some(path.to_path_buf());
        m.config_hash = Some(sha256_hex(&loaded.bytes));
    }
    m
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_probe(trace: &Path, groups: &[TokenGroup], out: Option<&Path>, seed: u64, stdout: &mut dyn Write) -> Result<()> {
    let t = read_trace(trace)?;
    let traj = probe_trace(&t, groups)?;
    let mut table = Table::new(&["layer", "group", "elbow_k", "entropy"]);
    for r in &traj.records {
        table.push(vec![
            r.layer.into(),
            r.group.name().into(),
            r.summary.elbow_k.into(),
            r.summary.truncated_entropy.into(),
        ])?;
    }
    let mut m = manifest::<()>("probe", seed, None);
    m.inputs.push(trace.to_path_buf());
    emit(&render_with_header(&m, &[], &table), out, stdout)
}

fn lifecycle_table(report: &LifecycleReport) -> Result<Table> {
    let mut table = Table::new(&["layer", "entropy", "kl", "stage"]);
    for (l, &e) in report.entropy_curve.iter().enumerate() {
        let stage = if l >= report.stage3_onset {
            3usize
        } else if l >= report.stage2_onset {
            2
        } else {
            1
        };
        table.push(vec![l.into(), e.into(), report.kl_curve.get(l).copied().into(), stage.into()])?;
    }
    Ok(table)
}

fn cmd_detect_stages(
    trace: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
    stdout: &mut dyn Write,
) -> Result<()> {
    let loaded = config.map(config::load::<DetectConfig>).transpose()?;
    let cfg = loaded.as_ref().map(|l| l.value.clone()).unwrap_or_default();
    let t = read_trace(trace)?;
    let traj = probe_trace(&t, &[TokenGroup::Visual])?;
    let mut report = match (cfg.l_ivr, cfg.l_ssr) {
        (Some(s2), Some(s3)) => {
            let curve = traj.curve(TokenGroup::Visual).unwrap_or_default();
            if !(0 < s2 && s2 < s3 && s3 < curve.len()) {
                return Err(Error::Config(format!("overrides need 0 < l_ivr < l_ssr < {}", curve.len())));
            }
            LifecycleReport {
                stage2_onset: s2,
                stage3_onset: s3,
                entropy_curve: curve,
                kl_curve: Vec::new(),
                method_notes: "explicit l_ivr/l_ssr".into(),
            }
        }
        (s2, s3) => {
            let mut r = detect_stages(&traj, &cfg.stages)?;
            r.stage2_onset = s2.unwrap_or(r.stage2_onset);
            r.stage3_onset = s3.unwrap_or(r.stage3_onset);
            if r.stage2_onset >= r.stage3_onset {
                return Err(Error::Config("overridden onsets are out of order".into()));
            }
            r
        }
    };
    report.kl_curve.clear();
    let mut m = manifest("detect-stages", seed, config.zip(loaded.as_ref()));
    m.inputs.push(trace.to_path_buf());
    let extra = [
        format!("stage2_onset: {}", report.stage2_onset),
        format!("stage3_onset: {}", report.stage3_onset),
        format!("method: {}", report.method_notes),
    ];
    emit(&render_with_header(&m, &extra, &lifecycle_table(&report)?), out, stdout)
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune(
    trace: &Path,
    config: &Path,
    layer: Option<usize>,
    budget: Option<usize>,
    out: Option<&Path>,
    seed: u64,
    stdout: &mut dyn Write,
) -> Result<()> {
    let loaded = config::load::<ArchProfile>(config)?;
    let profile = &loaded.value;
    let t = read_trace(trace)?;
    let layer = layer.unwrap_or(profile.l_ivr);
    if layer >= t.num_layers() {
        return Err(Error::Config(format!("layer {layer} outside a {}-layer trace", t.num_layers())));
    }
    let v = t.num_visual();
    if v == 0 {
        return Err(Error::Config("trace has no visual tokens to prune".into()));
    }
    let states = t.layer(layer);
    let visual = states.row_range(0, v);
    let query = states.row(t.num_tokens() - 1).to_vec();
    let ctx = RelevanceContext::new(query, visual.clone(), t.dim());
    let k = budget.unwrap_or_else(|| ivr_budget(profile.r_ivr.ivr(), v));
    let plan = plan_prune(&visual, &ctx, k, profile.r_anchor)?;
    let mut table = Table::new(&["token_index", "role", "score"]);
    for (i, role, score) in plan.roles() {
        table.push(vec![i.into(), role.name().into(), score.into()])?;
    }
    let mut m = manifest("prune", seed, Some((config, &loaded)));
    m.inputs.push(trace.to_path_buf());
    let extra = [format!("layer: {layer}"), format!("budget: {k} of {v}")];
    emit(&render_with_header(&m, &extra, &table), out, stdout)
}

/// Seeds for the decoder weights and the input embeddings.
pub fn simulate_seeds(seed: u64) -> (u64, u64) {
    let mut root = SplitMix64::new(seed);
    (root.next_u64(), root.next_u64())
}

fn cmd_simulate(config: &Path, out: &Path, seed: u64) -> Result<()> {
    let loaded = config::load::<SimulateConfig>(config)?;
    let cfg: &SimulateConfig = &loaded.value;
    cfg.validate()?;
    let (weight_seed, input_seed) = simulate_seeds(seed);
    let dcfg = cfg.decoder.with_seed(weight_seed);
    let decoder = build_decoder(&dcfg)?;
    let (v, t) = (cfg.num_visual, cfg.num_text);
    let (emb, modality) = synthesize_embeddings(input_seed, v, t, dcfg.hidden_dim);

    let capture = || ForwardOptions { capture: cfg.dump_traces, ..Default::default() };
    let vanilla = decoder.forward(&emb, &modality, &mut VanillaPlanner, capture())?;
    let mut planner = HalfVPlanner::new(cfg.profile.clone(), v);
    let halfv = decoder.forward(&emb, &modality, &mut planner, capture())?;

    let (h, m_dim, layers) = (dcfg.hidden_dim, dcfg.ffn_dim, dcfg.num_layers);
    let analytic_vanilla = vanilla_flops(t, v, h, m_dim, layers);
    let analytic_halfv = total_flops(&cfg.profile, t, v, h, m_dim, layers)?;
    let mut table = Table::new(&[
        "schedule",
        "visual_tokens_final",
        "counted_flops",
        "analytic_flops",
        "frozen_kv_flops",
        "kl_vs_vanilla",
        "speedup",
    ]);
    for (name, r, analytic) in [("vanilla", &vanilla, &analytic_vanilla), ("halfv", &halfv, &analytic_halfv)] {
        table.push(vec![
            name.into(),
            (r.final_hidden.rows() - t).into(),
            r.flops_counted.into(),
            (analytic.total as u128).into(),
            r.frozen_kv_flops.into(),
            kl_divergence(&vanilla.next_token_distribution, &r.next_token_distribution)?.into(),
            (vanilla.flops_counted as f64 / r.flops_counted as f64).into(),
        ])?;
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let m = manifest("simulate", seed, Some((config, &loaded)));
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    let extra = [format!("weight_seed: {weight_seed}"), format!("input_seed: {input_seed}")];
    write("simulate.csv", render_with_header(&m, &extra, &table))?;
    if cfg.kl_probe {
        let mut kl = Table::new(&["layer", "kl"]);
        for (l, x) in layer_kl_probe(&decoder, &emb, &modality)?.into_iter().enumerate() {
            kl.push(vec![l.into(), x.into()])?;
        }
        write("kl_probe.csv", render_with_header(&m, &[], &kl))?;
    }
    if cfg.dump_traces {
        for (name, r) in [("vanilla.hvtd", &vanilla), ("halfv.hvtd", &halfv)] {
            if let Some(trace) = &r.trace {
                write_trace(trace, out.join(name))?;
            }
        }
    }
    Ok(())
}

const FLOPS_COLUMNS: [&str; 20] = [
    "schedule", "l_ivr", "r_ivr", "l_ssr", "r_ssr", "mode", "t", "v", "v_prime", "v_ssr", "h", "m", "l1", "l2", "l3",
    "f1", "f2", "f3", "total", "speedup",
];

fn mode_name(mode: Option<SsrMode>) -> &'static str {
    match mode {
        None => "none",
        Some(SsrMode::LayerInactivity) => "layer_inactivity",
        Some(SsrMode::TokenSparsity) => "token_sparsity",
    }
}

fn flops_row(name: &str, profile: Option<&ArchProfile>, b: &FlopsBudget, vanilla: &FlopsBudget) -> Result<Vec<Cell>> {
    let (l_ivr, r_ivr, l_ssr, r_ssr) = match profile {
        Some(p) => (
            Some(p.l_ivr),
            Some(p.r_ivr.ivr()),
            p.l_ssr,
            (p.ssr_mode == SsrMode::TokenSparsity).then(|| p.sparse_retention()).flatten(),
        ),
        None => (None, None, None, None),
    };
    Ok(vec![
        name.into(),
        l_ivr.into(),
        r_ivr.into(),
        l_ssr.into(),
        r_ssr.into(),
        mode_name(b.mode).into(),
        b.t.into(),
        b.v.into(),
        b.v_prime.into(),
        b.v_ssr.into(),
        b.h.into(),
        b.m.into(),
        b.l1.into(),
        b.l2.into(),
        b.l3.into(),
        b.f1.into(),
        b.f2.into(),
        b.f3.into(),
        b.total.into(),
        speedup(vanilla, b)?.into(),
    ])
}

/// Profiles spanned by `grid` around `base`, in row-major grid order.
pub fn sweep_profiles(base: &ArchProfile, grid: &SweepGrid) -> Vec<ArchProfile> {
    fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
        if values.is_empty() {
            vec![base]
        } else {
            values.to_vec()
        }
    }
    let l_ivrs = or_base(&grid.l_ivr, base.l_ivr);
    let r_ivrs = or_base(&grid.r_ivr, base.r_ivr.ivr());
    let l_ssrs: Vec<Option<usize>> =
        if grid.l_ssr.is_empty() { vec![base.l_ssr] } else { grid.l_ssr.iter().map(|&l| Some(l)).collect() };
    let r_ssrs: Vec<Option<f64>> = if base.ssr_mode == SsrMode::LayerInactivity || grid.r_ssr.is_empty() {
        vec![base.r_ssr]
    } else {
        grid.r_ssr.iter().map(|&r| Some(r)).collect()
    };
    let mut out = Vec::new();
    for &l_ivr in &l_ivrs {
        for &r in &r_ivrs {
            for &l_ssr in &l_ssrs {
                for &r_ssr in &r_ssrs {
                    let mut p = base.clone();
                    p.l_ivr = l_ivr;
                    p.r_ivr = match base.r_ivr.ssr() {
                        Some(second) => Retention::Schedule(vec![r, second]),
                        None => Retention::Single(r),
                    };
                    p.l_ssr = l_ssr;
                    p.r_ssr = r_ssr;
                    out.push(p);
                }
            }
        }
    }
    out
}

fn cmd_flops(config: &Path, sweep: bool, out: Option<&Path>, seed: u64, stdout: &mut dyn Write) -> Result<()> {
    let loaded = config::load::<FlopsConfig>(config)?;
    let c = &loaded.value;
    let vanilla = vanilla_flops(c.t, c.v, c.h, c.m, c.num_layers);
    let mut table = Table::new(&FLOPS_COLUMNS);
    table.push(flops_row("vanilla", None, &vanilla, &vanilla)?)?;
    let mut extra = Vec::new();
    if let Some(p) = &c.profile {
        let b = total_flops(p, c.t, c.v, c.h, c.m, c.num_layers)?;
        table.push(flops_row("halfv", Some(p), &b, &vanilla)?)?;
    }
    if sweep {
        let (Some(base), Some(grid)) = (&c.profile, &c.sweep) else {
            return Err(Error::Config("--sweep needs both `profile` and `sweep` in the config".into()));
        };
        let mut skipped = 0usize;
        for p in sweep_profiles(base, grid) {
            match total_flops(&p, c.t, c.v, c.h, c.m, c.num_layers) {
                Ok(b) => table.push(flops_row("sweep", Some(&p), &b, &vanilla)?)?,
                Err(halfv_core::Error::Config(_)) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
        extra.push(format!("sweep_skipped_invalid: {skipped}"));
    }
    let m = manifest("flops", seed, Some((config, &loaded)));
    emit(&render_with_header(&m, &extra, &table), out, stdout)
}

fn cmd_mu(dm: f64, dc: f64, eps: f64, out: Option<&Path>, seed: u64, stdout: &mut dyn Write) -> Result<()> {
    let mu = marginal_utility(dm, dc, eps)?;
    match out {
        None => writeln!(stdout, "{}", format_real_short(mu.value)).map_err(|e| Error::io("<stdout>", e)),
        Some(path) => {
            let mut table = Table::new(&["delta_perf", "delta_cost", "epsilon", "value"]);
            table.push(vec![mu.delta_perf.into(), mu.delta_cost.into(), mu.epsilon.into(), mu.value.into()])?;
            emit(&render_with_header(&manifest::<()>("mu", seed, None), &[], &table), Some(path), stdout)
        }
    }
}
