//! `screening` — solve, verify and sample robust multi-item screening
//! problems from the command line.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 verification failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use screening_core::adversary;
use screening_core::bundles;
use screening_core::model::{CollectionSpec, Instance, PartitionSpec, PriceLaw};
use screening_core::semi_separable::{self, GammaSolution};
use screening_core::separable;
use screening_core::sweep::{sweep_bound, SweepRow, SweptBound};
use screening_core::verify;

#[derive(Parser)]
#[command(
    name = "screening",
    version,
    about = "Robust multi-item screening: optimal semi-separable mechanisms, \
             worst-case distributions, saddle-point certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Input file: instance JSON (partition/collection JSON for bundle-solve)
    #[arg(long)]
    input: PathBuf,
    /// Root-finding tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// RNG seed for sampling commands
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid points per dimension (also the sweep point count)
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Sample count for sampling commands
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundArg {
    Lower,
    Upper,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal mechanism parameter, active set, worst case and the
    /// separable baseline
    Solve(Common),
    /// Per-item randomized posted-price law at the optimal parameter
    PriceLaw(Common),
    /// Separable vs semi-separable ratios, plus the zero-lower-bound gap
    /// when it applies
    Compare(Common),
    /// Worst-case distribution: summary as JSON, samples as CSV
    Adversary {
        #[command(flatten)]
        common: Common,
        /// Direction parameter; defaults to the solved optimum
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Saddle-point certificate (exit code 2 when it fails)
    Verify {
        #[command(flatten)]
        common: Common,
        /// Scaling-factor grid for the best-response oracle
        #[arg(long, default_value_t = 10_000)]
        xi_grid: usize,
        /// Certificate tolerance
        #[arg(long, default_value_t = 1e-6)]
        cert_tol: f64,
    },
    /// Solve a bundle partition, or search a collection for its best
    /// partition
    BundleSolve(Common),
    /// Sweep one item's bound geometrically and tabulate both ratios
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Item index (0-based)
        #[arg(long, default_value_t = 0)]
        item: usize,
        #[arg(long, value_enum, default_value_t = BoundArg::Lower)]
        bound: BoundArg,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(common) => {
            let instance = load_instance(&common)?;
            let out = solve_output(&instance, common.tol);
            emit(&common, &render(&common, &out, solve_csv)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PriceLaw(common) => {
            let instance = load_instance(&common)?;
            let solution = semi_separable::solve_gamma_star(&instance, common.tol);
            if solution.degenerate {
                bail!("instance has all-zero lower bounds: no price law exists");
            }
            let law = semi_separable::price_law(solution.gamma_star, &instance)
                .context("price law")?;
            let out = PriceLawOutput::new(solution.gamma_star, &law);
            emit(&common, &render(&common, &out, price_law_csv)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(common) => {
            let instance = load_instance(&common)?;
            let out = compare_output(&instance, common.tol);
            emit(&common, &render(&common, &out, compare_csv)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Adversary { common, eta } => {
            let instance = load_instance(&common)?;
            let eta = match eta {
                Some(e) => e,
                None => {
                    let solution = semi_separable::solve_gamma_star(&instance, common.tol);
                    if solution.degenerate {
                        bail!("instance has all-zero lower bounds: pass --eta explicitly");
                    }
                    solution.gamma_star
                }
            };
            let dist = adversary::build(eta, &instance).context("adversary build")?;
            let text = match common.format {
                Format::Json => to_json(&dist.summary())?,
                Format::Csv => {
                    let mut lines = Vec::with_capacity(common.samples + 1);
                    let header: Vec<String> = std::iter::once("xi".to_string())
                        .chain((1..=instance.len()).map(|j| format!("v_{j}")))
                        .collect();
                    lines.push(header.join(","));
                    for xi in dist.sample_xi(common.samples, common.seed) {
                        let v = dist.valuation_at(xi).expect("sampled xi >= 1");
                        let mut row = vec![fmt12(xi)];
                        row.extend(v.iter().map(|&x| fmt12(x)));
                        lines.push(row.join(","));
                    }
                    lines.join("\n") + "\n"
                }
            };
            emit(&common, &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, xi_grid, cert_tol } => {
            let instance = load_instance(&common)?;
            let report = verify::saddle_certificate(&instance, cert_tol, common.grid, xi_grid)
                .context("saddle certificate")?;
            emit(&common, &render(&common, &report, verify_csv)?)?;
            Ok(if report.verdict == verify::Verdict::Pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::BundleSolve(common) => {
            let out = bundle_solve(&common)?;
            emit(&common, &render(&common, &out, bundle_csv)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, item, bound, from, to } => {
            let instance = load_instance(&common)?;
            let swept = match bound {
                BoundArg::Lower => SweptBound::Lower,
                BoundArg::Upper => SweptBound::Upper,
            };
            let rows = sweep_bound(&instance, item, swept, from, to, common.grid)
                .context("sweep")?;
            let out = SweepOutput { item, bound: swept, rows };
            let text = match common.format {
                Format::Json => to_json(&out)?,
                Format::Csv => {
                    let mut lines = vec!["parameter,separable_ratio,semi_separable_ratio".to_string()];
                    for r in &out.rows {
                        lines.push(format!(
                            "{},{},{}",
                            fmt12(r.parameter),
                            fmt12(r.separable_ratio),
                            fmt12(r.semi_separable_ratio)
                        ));
                    }
                    lines.join("\n") + "\n"
                }
            };
            emit(&common, &text)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_instance(common: &Common) -> Result<Instance> {
    let text = fs::read_to_string(&common.input)
        .with_context(|| format!("reading {}", common.input.display()))?;
    Instance::from_json(&text).context("parsing instance JSON")
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.output {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn render<T: Serialize>(
    common: &Common,
    value: &T,
    csv: impl Fn(&T) -> String,
) -> Result<String> {
    Ok(match common.format {
        Format::Json => to_json(value)?,
        Format::Csv => csv(value),
    })
}

/// 12 significant digits, `.` decimal separator, no thousands separators.
fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        trimmed.to_string()
    } else {
        format!("{x:.11e}")
    }
}

#[derive(Serialize)]
struct WorstCaseOutput {
    ratio: f64,
    argmin: Vec<f64>,
}

#[derive(Serialize)]
struct SeparableOutput {
    ratio: f64,
    split: usize,
    order: Vec<usize>,
}

#[derive(Serialize)]
struct SolveOutput {
    gamma_star: f64,
    active_set: Vec<usize>,
    phi_residual: f64,
    iterations: u32,
    degenerate: bool,
    worst_case: Option<WorstCaseOutput>,
    separable: SeparableOutput,
}

fn solve_output(instance: &Instance, tol: f64) -> SolveOutput {
    let solution: GammaSolution = semi_separable::solve_gamma_star(instance, tol);
    let worst_case = if solution.degenerate {
        None
    } else {
        semi_separable::worst_case_ratio(solution.gamma_star, instance)
            .ok()
            .map(|wc| WorstCaseOutput { ratio: wc.ratio, argmin: wc.argmin.0 })
    };
    let baseline = separable::joint_ratio(instance);
    SolveOutput {
        gamma_star: solution.gamma_star,
        active_set: solution.active_set,
        phi_residual: solution.phi_residual,
        iterations: solution.iterations,
        degenerate: solution.degenerate,
        worst_case,
        separable: SeparableOutput {
            ratio: baseline.ratio,
            split: baseline.split,
            order: baseline.order,
        },
    }
}

fn solve_csv(out: &SolveOutput) -> String {
    let mut lines = vec![
        format!("gamma_star,{}", fmt12(out.gamma_star)),
        format!("phi_residual,{}", fmt12(out.phi_residual)),
        format!("iterations,{}", out.iterations),
        format!("degenerate,{}", out.degenerate),
        format!("separable_ratio,{}", fmt12(out.separable.ratio)),
    ];
    if let Some(wc) = &out.worst_case {
        lines.push(format!("worst_case_ratio,{}", fmt12(wc.ratio)));
    }
    lines.join("\n") + "\n"
}

#[derive(Serialize)]
struct PriceAtomOutput {
    location: f64,
    mass: f64,
}

#[derive(Serialize)]
struct PriceLawItemOutput {
    name: String,
    support: (f64, f64),
    continuous_mass: f64,
    atom: Option<PriceAtomOutput>,
}

#[derive(Serialize)]
struct PriceLawOutput {
    gamma: f64,
    items: Vec<PriceLawItemOutput>,
}

impl PriceLawOutput {
    fn new(gamma: f64, law: &PriceLaw) -> Self {
        PriceLawOutput {
            gamma,
            items: law
                .items
                .iter()
                .map(|item| PriceLawItemOutput {
                    name: item.name.clone(),
                    support: item.support,
                    continuous_mass: item.continuous_mass(),
                    atom: item
                        .atom
                        .as_ref()
                        .map(|a| PriceAtomOutput { location: a.location, mass: a.mass }),
                })
                .collect(),
        }
    }
}

fn price_law_csv(out: &PriceLawOutput) -> String {
    let mut lines = vec!["item,name,support_lo,support_hi,continuous_mass,atom_location,atom_mass"
        .to_string()];
    for (i, item) in out.items.iter().enumerate() {
        let (al, am) = item
            .atom
            .as_ref()
            .map_or((String::new(), String::new()), |a| (fmt12(a.location), fmt12(a.mass)));
        lines.push(format!(
            "{i},{},{},{},{},{al},{am}",
            item.name,
            fmt12(item.support.0),
            fmt12(item.support.1),
            fmt12(item.continuous_mass)
        ));
    }
    lines.join("\n") + "\n"
}

#[derive(Serialize)]
struct ZeroLowerGapOutput {
    separable_zero_lower: f64,
    gap: f64,
}

#[derive(Serialize)]
struct CompareOutput {
    separable_ratio: f64,
    separable_split: usize,
    semi_separable_ratio: f64,
    advantage: f64,
    zero_lower_gap: Option<ZeroLowerGapOutput>,
}

fn compare_output(instance: &Instance, tol: f64) -> CompareOutput {
    let baseline = separable::joint_ratio(instance);
    let solution = semi_separable::solve_gamma_star(instance, tol);
    let zero_lower_gap = match (
        separable::separable_ratio_zero_lower(instance),
        semi_separable::gap_vs_separable(instance),
    ) {
        (Ok(s), Ok(g)) => Some(ZeroLowerGapOutput { separable_zero_lower: s, gap: g }),
        _ => None,
    };
    CompareOutput {
        separable_ratio: baseline.ratio,
        separable_split: baseline.split,
        semi_separable_ratio: solution.gamma_star,
        advantage: solution.gamma_star - baseline.ratio,
        zero_lower_gap,
    }
}

fn compare_csv(out: &CompareOutput) -> String {
    let mut lines = vec![
        format!("separable_ratio,{}", fmt12(out.separable_ratio)),
        format!("semi_separable_ratio,{}", fmt12(out.semi_separable_ratio)),
        format!("advantage,{}", fmt12(out.advantage)),
    ];
    if let Some(gap) = &out.zero_lower_gap {
        lines.push(format!("separable_zero_lower,{}", fmt12(gap.separable_zero_lower)));
        lines.push(format!("gap,{}", fmt12(gap.gap)));
    }
    lines.join("\n") + "\n"
}

fn verify_csv(report: &verify::SaddleReport) -> String {
    [
        format!("gamma_star,{}", fmt12(report.gamma_star)),
        format!("grid_min_ratio,{}", fmt12(report.grid_min_ratio)),
        format!("best_response_value,{}", fmt12(report.best_response_value)),
        format!("max_ic_violation,{}", fmt12(report.max_ic_violation)),
        format!("max_ir_violation,{}", fmt12(report.max_ir_violation)),
        format!("grid_resolution,{}", report.grid_resolution),
        format!(
            "verdict,{}",
            if report.verdict == verify::Verdict::Pass { "pass" } else { "fail" }
        ),
    ]
    .join("\n")
        + "\n"
}

#[derive(Serialize)]
struct BundleBestOutput {
    partition: Vec<Vec<usize>>,
    gamma: f64,
    gamma_semantics: &'static str,
    active_bundles: Vec<usize>,
}

#[derive(Serialize)]
struct BundleCandidateOutput {
    partition: Vec<Vec<usize>>,
    gamma: f64,
}

#[derive(Serialize)]
struct BundleSolveOutput {
    best: BundleBestOutput,
    candidates: Vec<BundleCandidateOutput>,
}

fn partition_members(p: &PartitionSpec) -> Vec<Vec<usize>> {
    p.bundles.iter().map(|b| b.members.clone()).collect()
}

fn bundle_solve(common: &Common) -> Result<BundleSolveOutput> {
    let text = fs::read_to_string(&common.input)
        .with_context(|| format!("reading {}", common.input.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("parsing JSON")?;
    if value.get("bundles").is_some() {
        let partition: PartitionSpec =
            serde_json::from_value(value).context("parsing partition JSON")?;
        let solution = bundles::solve_partition(&partition).context("solving partition")?;
        Ok(BundleSolveOutput {
            best: BundleBestOutput {
                partition: partition_members(&solution.partition),
                gamma: solution.gamma.gamma_star,
                gamma_semantics: "optimal",
                active_bundles: solution.active_bundles.clone(),
            },
            candidates: vec![BundleCandidateOutput {
                partition: partition_members(&solution.partition),
                gamma: solution.gamma.gamma_star,
            }],
        })
    } else if value.get("subsets").is_some() {
        let collection: CollectionSpec =
            serde_json::from_value(value).context("parsing collection JSON")?;
        let result = bundles::best_partition(&collection).context("best partition")?;
        Ok(BundleSolveOutput {
            best: BundleBestOutput {
                partition: partition_members(&result.best.partition),
                gamma: result.best.gamma.gamma_star,
                gamma_semantics: "guarantee",
                active_bundles: result.best.active_bundles.clone(),
            },
            candidates: result
                .candidates
                .iter()
                .map(|(p, g)| BundleCandidateOutput { partition: partition_members(p), gamma: *g })
                .collect(),
        })
    } else {
        bail!("input must contain either \"bundles\" (partition) or \"subsets\" (collection)")
    }
}

fn bundle_csv(out: &BundleSolveOutput) -> String {
    let mut lines = vec!["candidate,partition,gamma".to_string()];
    for (i, c) in out.candidates.iter().enumerate() {
        let members: Vec<String> = c
            .partition
            .iter()
            .map(|b| b.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+"))
            .collect();
        lines.push(format!("{i},{},{}", members.join("|"), fmt12(c.gamma)));
    }
    lines.join("\n") + "\n"
}

#[derive(Serialize)]
struct SweepOutput {
    item: usize,
    bound: SweptBound,
    rows: Vec<SweepRow>,
}
