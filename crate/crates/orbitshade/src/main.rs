//! Command-line front end wiring the toolkit into reproducible
//! experiments: singularity reports, homoclinic-loop detection, pseudo-orbit
//! construction, shadowing searches, sweeps and chain-recurrence maps.
//!
//! Negative scientific outcomes (no loop, no shadow) are successful runs
//! (exit 0); usage/config errors exit 2; numerical failures exit 3. Output
//! files embed the tool version, the seed and a hash of the effective
//! configuration, and reruns are bit-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use orbitshade::chainrec::{chain_recurrence_classes, ChainRecParams, EdgeRule};
use orbitshade::field::{VectorFieldDef, CATALOG};
use orbitshade::flow::DEFAULT_TOL;
use orbitshade::homoclinic::{detect_homoclinic_loops, hl_bound_report};
use orbitshade::localmodel::{crossing_count, exit_time_forward, make_box, BoxNeighborhood};
use orbitshade::pseudo::{
    build_loop_multiplication_chain, build_rescaled_chain, random_chain, slice_orbit, validate,
    GaugeFunction, JumpRule, PseudoOrbit,
};
use orbitshade::shadow::{
    shadow_search, shadowing_distance_estimate, SearchParams, ShadowRule, ShadowStatus,
};
use orbitshade::singularity::{
    classify_singularity, find_singularities, index_category, Classification,
};
use orbitshade::Error as LibError;

#[derive(Parser)]
#[command(name = "orbitshade", version, about = "pseudo-orbit and shadowing experiments")]
struct Cli {
    /// Builtin field id or path to a field definition file.
    #[arg(long, global = true)]
    field: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of every deterministic sequence used by the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Search/evaluation budget.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Integrator tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Key = value config file with [section] per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Locate singularities and certify hyperbolicity.
    Singularities {
        /// Search region "lo:hi,lo:hi,..." (one range per coordinate).
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Detect homoclinic loops attached to a saddle.
    Loops {
        /// Box chart radius.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        detect_tol: Option<f64>,
    },
    /// Build or validate pseudo-orbit chains (JSON-lines output).
    Pseudo {
        /// Chain kind: loop-mult | rescaled | slice.
        #[arg(long)]
        kind: Option<String>,
        /// Loop repetitions N for loop-mult (N = 0 is the loop-seed chain).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tail: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        /// Box radius for loop detection / rescaled chains.
        #[arg(long)]
        r: Option<f64>,
        /// Comma-separated start point for slice chains.
        #[arg(long)]
        start: Option<String>,
        /// Comma-separated segment durations for slice chains.
        #[arg(long)]
        durations: Option<String>,
    },
    /// Search for a shadowing orbit of a chain.
    Shadow {
        /// Chain file produced by the pseudo subcommand.
        #[arg(long)]
        po: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// plain | strong:<slope> | rescaled
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        seed_radius: Option<f64>,
        #[arg(long)]
        seed_count: Option<usize>,
        #[arg(long)]
        refine_iters: Option<usize>,
        #[arg(long)]
        tail_horizon: Option<f64>,
        /// Box radius: when set, crossing counts of refined candidates are
        /// reported.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Sweep loop multiplicity N (or jump size delta) against the
    /// shadowing-distance estimate.
    Sweep {
        /// n | delta
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated values (integers for n, floats for delta).
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        tail: Option<usize>,
    },
    /// Chain-recurrence classes over a grid.
    Chainrec {
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        box_size: Option<f64>,
        #[arg(long)]
        t_min: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        /// uniform | gauge
        #[arg(long)]
        rule: Option<String>,
    },
}

enum CliError {
    Usage(String),
    Numerical(String),
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        match &e {
            LibError::Parse(_) | LibError::Precondition(_) | LibError::Dimension { .. }
            | LibError::Empty(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

// -------------------------------------------------------------------------
// config file

type Config = BTreeMap<String, BTreeMap<String, String>>;

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    let mut cfg = Config::new();
    let Some(path) = path else { return Ok(cfg) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            ));
        };
        cfg.entry(section.clone())
            .or_default()
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(cfg)
}

fn cfg_get<'a>(cfg: &'a Config, section: &str, key: &str) -> Option<&'a str> {
    cfg.get(section).and_then(|s| s.get(key)).map(|s| s.as_str())
}

fn eff<T: std::str::FromStr>(
    flag: Option<T>,
    cfg: Option<&str>,
    default: T,
    what: &str,
) -> CliResult<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match cfg {
        Some(s) => s
            .parse()
            .map_err(|_| CliError::Usage(format!("config value `{}` invalid for {}", s, what))),
        None => Ok(default),
    }
}

fn parse_region(s: &str, dim: usize) -> CliResult<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let Some((lo, hi)) = part.split_once(':') else {
            return usage(format!("region part `{}` is not lo:hi", part));
        };
        let lo: f64 = lo.trim().parse().map_err(|_| CliError::Usage(format!("bad number in region: {}", lo)))?;
        let hi: f64 = hi.trim().parse().map_err(|_| CliError::Usage(format!("bad number in region: {}", hi)))?;
        out.push((lo, hi));
    }
    if out.len() != dim {
        return usage(format!("region has {} ranges, field has dimension {}", out.len(), dim));
    }
    Ok(out)
}

fn parse_vec(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad number `{}`", p)))
        })
        .collect()
}

// -------------------------------------------------------------------------
// shared context

struct Ctx {
    field: VectorFieldDef,
    field_name: String,
    out: PathBuf,
    seed: u64,
    budget: usize,
    tol: f64,
    config_hash: String,
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    field: &'a str,
    seed: u64,
    config_hash: &'a str,
}

impl Ctx {
    fn meta(&self) -> Meta<'_> {
        Meta {
            tool: "orbitshade",
            version: env!("CARGO_PKG_VERSION"),
            field: &self.field_name,
            seed: self.seed,
            config_hash: &self.config_hash,
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Numerical(format!("serialization: {}", e)))?;
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
        Ok(path)
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
        Ok(path)
    }
}

fn resolve_field(spec: &str) -> CliResult<(VectorFieldDef, String)> {
    if CATALOG.contains(&spec) {
        return Ok((VectorFieldDef::builtin(spec, &[])?, spec.to_string()));
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::Usage(format!("field `{}` is neither a builtin id nor a readable file", spec)))?;
    Ok((VectorFieldDef::parse(&text)?, spec.to_string()))
}

/// The saddle box chart at the origin-adjacent saddle of the field.
fn origin_saddle_box(ctx: &Ctx, r: f64) -> CliResult<BoxNeighborhood> {
    let region: Vec<(f64, f64)> =
        (0..ctx.field.dimension()).map(|_| (-2.0, 2.0)).collect();
    let sings = find_singularities(&ctx.field, &region, 6)?;
    for s in &sings {
        if let Classification::Hyperbolic(cert) = classify_singularity(&ctx.field, s)? {
            if cert.stable_index > 0 && cert.unstable_index > 0 {
                return Ok(make_box(&ctx.field, s, &cert, r)?);
            }
        }
    }
    usage("no hyperbolic saddle found in [-2, 2]^n")
}

// -------------------------------------------------------------------------
// serialization shims

#[derive(Serialize)]
struct CertJson {
    eigenvalues: Vec<(f64, f64)>,
    stable_index: usize,
    unstable_index: usize,
    lambda: f64,
    growth_c: f64,
    stable_frame: Vec<Vec<f64>>,
    unstable_frame: Vec<Vec<f64>>,
    dim: usize,
    category: String,
    index_one: bool,
}

fn frame_columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|c| m.column(c).iter().cloned().collect()).collect()
}

// -------------------------------------------------------------------------
// pseudo-orbit file format (JSON lines; header record then entries)

#[derive(Serialize, serde::Deserialize)]
struct ChainHeader {
    rule: String,
    delta: Option<f64>,
    gauge_slope: Option<f64>,
    gauge_cap: Option<f64>,
    gauge_singularities: Option<Vec<Vec<f64>>>,
    t_min: f64,
    finite: bool,
}

#[derive(Serialize, serde::Deserialize)]
struct ChainEntry {
    index: usize,
    point: Vec<f64>,
    duration: f64,
    jump: Option<f64>,
}

fn write_chain(ctx: &Ctx, name: &str, po: &PseudoOrbit) -> CliResult<PathBuf> {
    let rep = validate(&ctx.field, po)?;
    let header = match &po.jump_rule {
        JumpRule::Uniform(d) => ChainHeader {
            rule: "uniform".into(),
            delta: Some(*d),
            gauge_slope: None,
            gauge_cap: None,
            gauge_singularities: None,
            t_min: po.t_min,
            finite: po.finite,
        },
        JumpRule::Gauge(g) => ChainHeader {
            rule: "gauge".into(),
            delta: None,
            gauge_slope: Some(g.slope),
            gauge_cap: Some(g.cap),
            gauge_singularities: Some(g.singularities.clone()),
            t_min: po.t_min,
            finite: po.finite,
        },
    };
    let mut text = serde_json::to_string(&header).unwrap() + "\n";
    for (i, (point, duration)) in po.entries.iter().enumerate() {
        let line = ChainEntry {
            index: i,
            point: point.clone(),
            duration: *duration,
            jump: rep.jumps.get(i).cloned(),
        };
        text += &(serde_json::to_string(&line).unwrap() + "\n");
    }
    ctx.write_text(name, &text)
}

fn read_chain(_ctx: &Ctx, path: &Path) -> CliResult<PseudoOrbit> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read chain {}: {}", path.display(), e)))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: ChainHeader = serde_json::from_str(
        lines.next().ok_or_else(|| CliError::Usage("empty chain file".into()))?,
    )
    .map_err(|e| CliError::Usage(format!("bad chain header: {}", e)))?;
    let rule = match header.rule.as_str() {
        "uniform" => JumpRule::Uniform(
            header.delta.ok_or_else(|| CliError::Usage("uniform rule needs delta".into()))?,
        ),
        "gauge" => JumpRule::Gauge(GaugeFunction::new(
            header.gauge_singularities.unwrap_or_default(),
            header.gauge_slope.unwrap_or(0.5),
            header.gauge_cap.unwrap_or(f64::INFINITY),
        )),
        other => return usage(format!("unknown jump rule `{}`", other)),
    };
    let mut entries = Vec::new();
    for line in lines {
        let e: ChainEntry = serde_json::from_str(line)
            .map_err(|e| CliError::Usage(format!("bad chain entry: {}", e)))?;
        entries.push((e.point, e.duration));
    }
    Ok(PseudoOrbit::new(entries, header.t_min, rule, header.finite)?)
}

// -------------------------------------------------------------------------
// subcommands

fn cmd_singularities(ctx: &Ctx, region: Option<String>, grid: Option<usize>, cfg: &Config) -> CliResult<()> {
    let dim = ctx.field.dimension();
    let region_str = match region.or_else(|| cfg_get(cfg, "singularities", "region").map(String::from)) {
        Some(s) => s,
        None => vec!["-20:20"; dim].join(","),
    };
    let region = parse_region(&region_str, dim)?;
    let grid = eff(grid, cfg_get(cfg, "singularities", "grid"), 6, "grid")?;
    let sings = find_singularities(&ctx.field, &region, grid)?;
    #[derive(Serialize)]
    struct Item {
        location: Vec<f64>,
        residual: f64,
        classification: Option<CertJson>,
        non_hyperbolic: Option<Vec<(f64, f64)>>,
    }
    let mut items = Vec::new();
    for s in &sings {
        match classify_singularity(&ctx.field, s)? {
            Classification::Hyperbolic(cert) => {
                let (cat, one) = index_category(&cert);
                items.push(Item {
                    location: s.location.clone(),
                    residual: s.residual,
                    classification: Some(CertJson {
                        eigenvalues: cert.eigenvalues.iter().map(|v| (v.re, v.im)).collect(),
                        stable_index: cert.stable_index,
                        unstable_index: cert.unstable_index,
                        lambda: cert.lambda,
                        growth_c: cert.growth_c,
                        stable_frame: frame_columns(&cert.stable_frame),
                        unstable_frame: frame_columns(&cert.unstable_frame),
                        dim: cert.dim,
                        category: format!("{:?}", cat).to_lowercase(),
                        index_one: one,
                    }),
                    non_hyperbolic: None,
                });
            }
            Classification::NonHyperbolic(r) => items.push(Item {
                location: s.location.clone(),
                residual: s.residual,
                classification: None,
                non_hyperbolic: Some(r.eigenvalues.iter().map(|v| (v.re, v.im)).collect()),
            }),
        }
    }
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        count: usize,
        singularities: Vec<Item>,
    }
    let path = ctx.write_json(
        "singularities.json",
        &Report { meta: ctx.meta(), count: items.len(), singularities: items },
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_loops(
    ctx: &Ctx,
    r: Option<f64>,
    horizon: Option<f64>,
    detect_tol: Option<f64>,
    cfg: &Config,
) -> CliResult<()> {
    let r = eff(r, cfg_get(cfg, "loops", "r"), 0.1, "r")?;
    let horizon = eff(horizon, cfg_get(cfg, "loops", "horizon"), 100.0, "horizon")?;
    let tol = eff(detect_tol, cfg_get(cfg, "loops", "detect_tol"), 2e-5, "detect_tol")?;
    let bx = origin_saddle_box(ctx, r)?;
    let witnesses = detect_homoclinic_loops(&ctx.field, &bx, horizon, tol)?;
    let report = hl_bound_report(&ctx.field, &bx, horizon, tol)?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        branch_count: usize,
        loops_found: usize,
        max_crossings: usize,
        witnesses: &'a [orbitshade::homoclinic::HomoclinicWitness],
    }
    let path = ctx.write_json(
        "loops.json",
        &Report {
            meta: ctx.meta(),
            branch_count: report.branch_count,
            loops_found: report.loops_found,
            max_crossings: report.max_crossings,
            witnesses: &witnesses,
        },
    )?;
    // crossing records as CSV: time, side, chart coordinates
    let mut csv = String::from("witness,time,side,chart_vs,chart_vu\n");
    for (wi, w) in witnesses.iter().enumerate() {
        let rep = crossing_count(&ctx.field, &bx, &w.p, 5.0 / bx.cert.lambda, w.transit_time + 5.0 / bx.cert.lambda, 16)?;
        for ev in rep.events {
            let _ = writeln!(
                csv,
                "{},{:.9},{},{:?},{:?}",
                wi,
                ev.t,
                if ev.entering { "enter" } else { "exit" },
                ev.chart_vs,
                ev.chart_vu
            );
        }
    }
    let csv_path = ctx.write_text("loop_crossings.csv", &csv)?;
    println!("wrote {} and {}", path.display(), csv_path.display());
    println!("loops found: {} (max crossings {})", report.loops_found, report.max_crossings);
    Ok(())
}

/// Loop seed for chain construction: the eigenvector seed of the detected
/// loop and the time it takes to return to the diamond section.
fn loop_chain_seed(ctx: &Ctx, bx: &BoxNeighborhood) -> CliResult<(Vec<f64>, f64)> {
    let witnesses = detect_homoclinic_loops(&ctx.field, bx, 200.0, 2e-5)?;
    let Some(w) = witnesses.first() else {
        return usage("no homoclinic loop detected; cannot build loop chains");
    };
    let eta = bx.r / 100.0;
    let e_u = bx.unstable_frame().column(0);
    let seed: Vec<f64> = bx
        .sigma
        .location
        .iter()
        .zip(e_u.iter())
        .map(|(c, v)| c + w.branch as f64 * eta * v)
        .collect();
    let exit = exit_time_forward(&ctx.field, bx, &seed, 100.0)?
        .time()
        .ok_or_else(|| CliError::Numerical("loop seed never exits the box".into()))?;
    Ok((seed, exit + w.section_time))
}

fn cmd_pseudo(
    ctx: &Ctx,
    kind: Option<String>,
    n: Option<usize>,
    tail: Option<usize>,
    delta: Option<f64>,
    r: Option<f64>,
    start: Option<String>,
    durations: Option<String>,
    cfg: &Config,
) -> CliResult<()> {
    let kind = kind
        .or_else(|| cfg_get(cfg, "pseudo", "kind").map(String::from))
        .unwrap_or_else(|| "loop-mult".into());
    let tail = eff(tail, cfg_get(cfg, "pseudo", "tail"), 3, "tail")?;
    let delta = eff(delta, cfg_get(cfg, "pseudo", "delta"), 3e-3, "delta")?;
    let r = eff(r, cfg_get(cfg, "pseudo", "r"), 0.1, "r")?;
    let po = match kind.as_str() {
        "loop-mult" => {
            let n = eff(n, cfg_get(cfg, "pseudo", "n"), 0, "n")?;
            let bx = origin_saddle_box(ctx, r)?;
            let (x0, t0) = loop_chain_seed(ctx, &bx)?;
            build_loop_multiplication_chain(
                &ctx.field,
                &bx.sigma.location,
                &x0,
                t0,
                n,
                tail,
                delta,
            )?
        }
        "rescaled" => {
            let bx = origin_saddle_box(ctx, r)?;
            let region: Vec<(f64, f64)> =
                (0..ctx.field.dimension()).map(|_| (-3.0, 3.0)).collect();
            let sings = find_singularities(&ctx.field, &region, 6)?;
            let gauge =
                GaugeFunction::half_distance(sings.iter().map(|s| s.location.clone()).collect());
            build_rescaled_chain(&ctx.field, &bx, &gauge, ctx.budget, tail)?
        }
        "slice" => {
            let start = start
                .or_else(|| cfg_get(cfg, "pseudo", "start").map(String::from))
                .ok_or_else(|| CliError::Usage("slice chains need --start".into()))?;
            let durations = durations
                .or_else(|| cfg_get(cfg, "pseudo", "durations").map(String::from))
                .unwrap_or_else(|| "1,1,1".into());
            slice_orbit(
                &ctx.field,
                &parse_vec(&start)?,
                &parse_vec(&durations)?,
                JumpRule::Uniform(delta),
            )?
        }
        other => return usage(format!("unknown chain kind `{}`", other)),
    };
    let rep = validate(&ctx.field, &po)?;
    let path = write_chain(ctx, "chain.jsonl", &po)?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        kind: String,
        entries: usize,
        total_time: f64,
        valid: bool,
        max_jump: f64,
    }
    let vpath = ctx.write_json(
        "chain_validation.json",
        &Report {
            meta: ctx.meta(),
            kind,
            entries: po.len(),
            total_time: po.total_time(),
            valid: rep.valid,
            max_jump: rep.max_jump,
        },
    )?;
    println!("wrote {} and {}", path.display(), vpath.display());
    Ok(())
}

fn parse_rule(s: &str, field: &VectorFieldDef) -> CliResult<ShadowRule> {
    if s == "plain" {
        return Ok(ShadowRule::Plain);
    }
    if let Some(rest) = s.strip_prefix("strong:") {
        let slope: f64 = rest
            .parse()
            .map_err(|_| CliError::Usage(format!("bad slope `{}` in rule", rest)))?;
        return Ok(ShadowRule::Strong { slope });
    }
    if s == "rescaled" {
        let dim = field.dimension();
        let region: Vec<(f64, f64)> = (0..dim).map(|_| (-20.0, 20.0)).collect();
        let sings = find_singularities(field, &region, 5).unwrap_or_default();
        return Ok(ShadowRule::Rescaled {
            gauge: GaugeFunction::half_distance(
                sings.iter().map(|s| s.location.clone()).collect(),
            ),
        });
    }
    usage(format!("unknown rule `{}` (plain | strong:<slope> | rescaled)", s))
}

#[allow(clippy::too_many_arguments)]
fn cmd_shadow(
    ctx: &Ctx,
    po_path: Option<PathBuf>,
    epsilon: Option<f64>,
    rule: Option<String>,
    seed_radius: Option<f64>,
    seed_count: Option<usize>,
    refine_iters: Option<usize>,
    tail_horizon: Option<f64>,
    r: Option<f64>,
    cfg: &Config,
) -> CliResult<()> {
    let po_path = po_path
        .or_else(|| cfg_get(cfg, "shadow", "po").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("shadow needs --po <chain.jsonl>".into()))?;
    let po = read_chain(ctx, &po_path)?;
    let rep = validate(&ctx.field, &po)?;
    if !rep.valid {
        return usage(format!(
            "chain fails validation at jump {} ({:.3e} > {:.3e})",
            rep.first_violation.unwrap(),
            rep.jumps[rep.first_violation.unwrap()],
            rep.bounds[rep.first_violation.unwrap()]
        ));
    }
    let epsilon = eff(epsilon, cfg_get(cfg, "shadow", "epsilon"), 0.1, "epsilon")?;
    let rule_str = rule
        .or_else(|| cfg_get(cfg, "shadow", "rule").map(String::from))
        .unwrap_or_else(|| "plain".into());
    let rule = parse_rule(&rule_str, &ctx.field)?;
    let params = SearchParams {
        seed_radius: eff(seed_radius, cfg_get(cfg, "shadow", "seed_radius"), 0.05, "seed_radius")?,
        seed_count: eff(seed_count, cfg_get(cfg, "shadow", "seed_count"), 16, "seed_count")?,
        refine_iters: eff(refine_iters, cfg_get(cfg, "shadow", "refine_iters"), 60, "refine_iters")?,
        budget: ctx.budget,
        seed: ctx.seed,
        tail_horizon: match tail_horizon {
            Some(h) => Some(h),
            None => cfg_get(cfg, "shadow", "tail_horizon")
                .map(|s| s.parse().map_err(|_| CliError::Usage("bad tail_horizon".into())))
                .transpose()?,
        },
        int_tol: ctx.tol,
        ..Default::default()
    };
    let bx = match r {
        Some(r) => Some(origin_saddle_box(ctx, r)?),
        None => None,
    };
    let result = shadow_search(&ctx.field, &po, epsilon, &rule, &params, bx.as_ref())?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        rule: String,
        result: &'a orbitshade::shadow::ShadowingResult,
    }
    let path = ctx.write_json(
        "shadow.json",
        &Report { meta: ctx.meta(), rule: rule_str, result: &result },
    )?;
    println!("wrote {}", path.display());
    println!(
        "status: {:?}, achieved {:.6e} vs epsilon {:.6e}",
        result.status, result.achieved, result.epsilon
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    ctx: &Ctx,
    kind: Option<String>,
    values: Option<String>,
    r: Option<f64>,
    epsilon: Option<f64>,
    segments: Option<usize>,
    tail: Option<usize>,
    cfg: &Config,
) -> CliResult<()> {
    let kind = kind
        .or_else(|| cfg_get(cfg, "sweep", "kind").map(String::from))
        .unwrap_or_else(|| "n".into());
    let values = values
        .or_else(|| cfg_get(cfg, "sweep", "values").map(String::from))
        .ok_or_else(|| CliError::Usage("sweep needs --values".into()))?;
    if values.trim().is_empty() {
        return usage("sweep value list is empty");
    }
    let r = eff(r, cfg_get(cfg, "sweep", "r"), 0.1, "r")?;
    let epsilon = eff(epsilon, cfg_get(cfg, "sweep", "epsilon"), 0.25 * r, "epsilon")?;
    let tail = eff(tail, cfg_get(cfg, "sweep", "tail"), 3, "tail")?;
    let mut csv = String::from(
        "value,estimate,status,witness_crossings,good_candidates,min_good_crossings\n",
    );
    match kind.as_str() {
        "n" => {
            let bx = origin_saddle_box(ctx, r)?;
            let (x0, t0) = loop_chain_seed(ctx, &bx)?;
            let lambda = bx.cert.lambda;
            let mut ns: Vec<usize> = Vec::new();
            for part in values.split(',') {
                ns.push(part.trim().parse().map_err(|_| {
                    CliError::Usage(format!("bad integer `{}` in values", part))
                })?);
            }
            for &n in &ns {
                let po = build_loop_multiplication_chain(
                    &ctx.field,
                    &bx.sigma.location,
                    &x0,
                    t0,
                    n,
                    tail,
                    3e-3,
                )?;
                let params = SearchParams {
                    seed_radius: 0.05,
                    seed_count: 16,
                    refine_iters: 80,
                    refine_top: 2,
                    budget: ctx.budget,
                    seed: ctx.seed,
                    // coarser sampling keeps the banded matching tractable
                    // on the long repeated chains
                    dt: Some(0.025),
                    tail_horizon: Some(20.0 / lambda),
                    int_tol: ctx.tol,
                    ..Default::default()
                };
                let (estimate, res) = shadowing_distance_estimate(
                    &ctx.field,
                    &po,
                    &ShadowRule::Plain,
                    &params,
                    Some(&bx),
                )?;
                let good: Vec<_> = res
                    .refined
                    .iter()
                    .filter(|c| c.achieved < 0.5 * r)
                    .collect();
                let min_good = good
                    .iter()
                    .filter_map(|c| c.crossing_count)
                    .min()
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{:.9e},{},{},{},{}",
                    n,
                    estimate,
                    if estimate <= epsilon { "found" } else { "not-found" },
                    res.crossing_count_of_witness.map(|v| v.to_string()).unwrap_or_default(),
                    good.len(),
                    min_good
                );
            }
        }
        "delta" => {
            let segs = eff(segments, cfg_get(cfg, "sweep", "segments"), 30, "segments")?;
            for part in values.split(',') {
                let delta: f64 = part.trim().parse().map_err(|_| {
                    CliError::Usage(format!("bad float `{}` in values", part))
                })?;
                let start = ctx.field.project_point(&vec![0.4; ctx.field.dimension()]);
                let po = random_chain(&ctx.field, &start, segs, delta, (1.0, 2.0), ctx.seed)?;
                let params = SearchParams {
                    seed_radius: 0.1,
                    seed_count: 16,
                    refine_iters: 60,
                    budget: ctx.budget,
                    seed: ctx.seed,
                    int_tol: ctx.tol,
                    ..Default::default()
                };
                let (estimate, res) =
                    shadowing_distance_estimate(&ctx.field, &po, &ShadowRule::Plain, &params, None)?;
                let _ = writeln!(
                    csv,
                    "{},{:.9e},{},{},{},{}",
                    delta,
                    estimate,
                    if res.status == ShadowStatus::Found { "found" } else { "not-found" },
                    "",
                    "",
                    ""
                );
            }
        }
        other => return usage(format!("unknown sweep kind `{}` (n | delta)", other)),
    }
    let path = ctx.write_text("sweep.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_chainrec(
    ctx: &Ctx,
    region: Option<String>,
    box_size: Option<f64>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    rule: Option<String>,
    cfg: &Config,
) -> CliResult<()> {
    let dim = ctx.field.dimension();
    let region_str = match region.or_else(|| cfg_get(cfg, "chainrec", "region").map(String::from)) {
        Some(s) => s,
        None => vec!["-1.2:1.2"; dim].join(","),
    };
    let region = parse_region(&region_str, dim)?;
    let box_size = eff(box_size, cfg_get(cfg, "chainrec", "box_size"), 0.05, "box_size")?;
    let t_min = eff(t_min, cfg_get(cfg, "chainrec", "t_min"), 1.0, "t_min")?;
    let t_max = eff(t_max, cfg_get(cfg, "chainrec", "t_max"), 8.0, "t_max")?;
    let rule_str = rule
        .or_else(|| cfg_get(cfg, "chainrec", "rule").map(String::from))
        .unwrap_or_else(|| "uniform".into());
    let sings = find_singularities(&ctx.field, &region, 6)?;
    let rule = match rule_str.as_str() {
        "uniform" => EdgeRule::Uniform,
        "gauge" => EdgeRule::Gauge(GaugeFunction::half_distance(
            sings.iter().map(|s| s.location.clone()).collect(),
        )),
        other => return usage(format!("unknown edge rule `{}`", other)),
    };
    let params = ChainRecParams { box_size, t_min, t_max, rule };
    let res = chain_recurrence_classes(
        &ctx.field,
        &region,
        &params,
        &sings.iter().map(|s| s.location.clone()).collect::<Vec<_>>(),
    )?;
    let mut csv = String::from("box_id,class_id,status\n");
    for (ci, class) in res.classes.iter().enumerate() {
        for id in class {
            let _ = writeln!(csv, "{},{},recurrent", id, ci);
        }
    }
    for id in &res.transient {
        let _ = writeln!(csv, "{},,transient", id);
    }
    for id in &res.failed {
        let _ = writeln!(csv, "{},,failed", id);
    }
    let path = ctx.write_text("chainrec.csv", &csv)?;
    #[derive(Serialize)]
    struct Report<'a> {
        meta: Meta<'a>,
        classes: usize,
        class_sizes: Vec<usize>,
        transient: usize,
        failed: usize,
        singular_boxes: Vec<usize>,
    }
    let jpath = ctx.write_json(
        "chainrec.json",
        &Report {
            meta: ctx.meta(),
            classes: res.classes.len(),
            class_sizes: res.classes.iter().map(|c| c.len()).collect(),
            transient: res.transient.len(),
            failed: res.failed.len(),
            singular_boxes: res.singular_boxes.clone(),
        },
    )?;
    println!("wrote {} and {}", path.display(), jpath.display());
    println!("classes: {}", res.classes.len());
    Ok(())
}

// -------------------------------------------------------------------------

fn real_main() -> CliResult<()> {
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    let field_spec = cli
        .field
        .clone()
        .or_else(|| cfg_get(&cfg, "", "field").map(String::from))
        .ok_or_else(|| CliError::Usage("--field is required (builtin id or file path)".into()))?;
    let (field, field_name) = resolve_field(&field_spec)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {}", out.display(), e)))?;
    let seed = cli.seed.unwrap_or(42);
    let budget = cli.budget.unwrap_or(4000);
    if budget == 0 {
        return usage("--budget must be positive");
    }
    let tol = cli.tol.unwrap_or(DEFAULT_TOL);
    if tol <= 0.0 {
        return usage("--tol must be positive");
    }

    // canonical effective-config string for the reproducibility hash
    let mut canon = format!("field={}\nseed={}\nbudget={}\ntol={:e}\n", field_name, seed, budget, tol);
    for (section, kv) in &cfg {
        for (k, v) in kv {
            let _ = writeln!(canon, "{}.{}={}", section, k, v);
        }
    }
    let config_hash = format!("{:x}", Sha256::digest(canon.as_bytes()));

    let ctx = Ctx { field, field_name, out, seed, budget, tol, config_hash };

    match cli.cmd {
        Cmd::Singularities { region, grid } => cmd_singularities(&ctx, region, grid, &cfg),
        Cmd::Loops { r, horizon, detect_tol } => cmd_loops(&ctx, r, horizon, detect_tol, &cfg),
        Cmd::Pseudo { kind, n, tail, delta, r, start, durations } => {
            cmd_pseudo(&ctx, kind, n, tail, delta, r, start, durations, &cfg)
        }
        Cmd::Shadow {
            po,
            epsilon,
            rule,
            seed_radius,
            seed_count,
            refine_iters,
            tail_horizon,
            r,
        } => cmd_shadow(
            &ctx,
            po,
            epsilon,
            rule,
            seed_radius,
            seed_count,
            refine_iters,
            tail_horizon,
            r,
            &cfg,
        ),
        Cmd::Sweep { kind, values, r, epsilon, segments, tail } => {
            cmd_sweep(&ctx, kind, values, r, epsilon, segments, tail, &cfg)
        }
        Cmd::Chainrec { region, box_size, t_min, t_max, rule } => {
            cmd_chainrec(&ctx, region, box_size, t_min, t_max, rule, &cfg)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {}", msg);
            ExitCode::from(3)
        }
    }
}
