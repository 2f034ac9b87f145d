//! `tunegen`: derive, compile, inspect, tune and sample discrete generators.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tunegen::derive::{derive_generator, DeriveConfig};
use tunegen::inference::{
    compile_feature, compile_main, exact_distribution, Distribution, DEFAULT_VALUE_BUDGET,
};
use tunegen::sampler::{empirical_report, sample};
use tunegen::surface::{parse_program, Program};
use tunegen::trainer::{trace_csv, train, weights_from_json, weights_to_json, ConfigFile};
use tunegen::weights::{WeightAssignment, WeightTable};
use tunegen::workloads::{workload, WORKLOAD_NAMES};

#[derive(Parser)]
#[command(
    name = "tunegen",
    version,
    about = "Tune the weights of discrete random generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a tunable generator from type declarations.
    Derive(DeriveArgs),
    /// Compile a generator and print diagram statistics.
    Compile(CompileArgs),
    /// Print the exact output distribution, or that of a feature.
    Infer(InferArgs),
    /// Tune weights as described by a config file.
    Train(TrainArgs),
    /// Draw values, one per line.
    Sample(SampleArgs),
    /// Cumulative unique and valid counts over a sample run, as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct Source {
    /// Generator file.
    #[arg(long, conflicts_with = "workload")]
    program: Option<PathBuf>,
    /// Built-in workload instead of a file.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(WORKLOAD_NAMES))]
    workload: Option<String>,
}

#[derive(Args)]
struct DeriveArgs {
    /// File with the type declarations.
    #[arg(long)]
    program: PathBuf,
    /// TOML file with `root`, `initial_size`, `lookback` and optional
    /// `[size_caps]`. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    root: Option<String>,
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    lookback: Option<u32>,
    /// Size ceiling for a type, as `Type=N`. Repeatable.
    #[arg(long = "cap", value_parser = parse_cap)]
    caps: Vec<(String, u32)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    source: Source,
    /// Compile a unary function of the output instead of the output itself.
    #[arg(long)]
    feature: Option<String>,
    /// Write the diagram in DOT format.
    #[arg(long)]
    dump_bdd: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    source: Source,
    /// Weights JSON file, or `uniform` for the untuned weights.
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's program.
    #[command(flatten)]
    source: Source,
    /// Starting weights; defaults to the config's or the untuned ones.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Where to write the tuned weights.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validity predicate; defaults to the workload's.
    #[arg(long)]
    validity: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_cap(s: &str) -> Result<(String, u32), String> {
    let (ty, n) = s.split_once('=').ok_or("expected Type=N")?;
    Ok((ty.to_string(), n.parse().map_err(|e| format!("{e}"))?))
}

/// A loaded generator and the names its workload gives to predicates.
struct Loaded {
    program: Program,
    validity: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Loaded> {
        match (&self.program, &self.workload) {
            (Some(path), _) => load_file(path),
            (None, Some(name)) => load_workload(name),
            (None, None) => bail!("give either --program or --workload"),
        }
    }
}

fn load_file(path: &Path) -> Result<Loaded> {
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let program = parse_program(&src).with_context(|| format!("in {}", path.display()))?;
    Ok(Loaded {
        program,
        validity: None,
    })
}

fn load_workload(name: &str) -> Result<Loaded> {
    let w = workload(name)?;
    Ok(Loaded {
        program: w.program,
        validity: w.validity.map(str::to_string),
    })
}

/// Registers the program's weights in `table` and resolves `spec`.
fn load_weights(
    program: &Program,
    table: &mut WeightTable,
    spec: &str,
) -> Result<WeightAssignment> {
    compile_main(program, table)?;
    if spec == "uniform" {
        return Ok(table.initial());
    }
    let src = fs::read_to_string(spec).with_context(|| format!("reading weights {spec}"))?;
    weights_from_json(table, &src).with_context(|| format!("in {spec}"))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_distribution(d: &Distribution) -> String {
    d.iter().map(|(v, p)| format!("{v}\t{p}\n")).collect()
}

fn run_derive(a: &DeriveArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let src = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<DeriveConfig>(&src).with_context(|| format!("in {}", p.display()))?
        }
        None => {
            let root = a.root.clone().context("give --root or --config")?;
            DeriveConfig::new(&root, a.size.unwrap_or(4), a.lookback.unwrap_or(2))
        }
    };
    if let Some(r) = &a.root {
        cfg.root = r.clone();
    }
    if let Some(s) = a.size {
        cfg.initial_size = s;
    }
    if let Some(l) = a.lookback {
        cfg.lookback = l;
    }
    cfg.size_caps.extend(a.caps.iter().cloned());
    let types = load_file(&a.program)?.program;
    let derived = derive_generator(&types, &cfg)?;
    emit(&a.out, &derived.source)
}

fn run_compile(a: &CompileArgs) -> Result<()> {
    let loaded = a.source.load()?;
    let mut table = WeightTable::new();
    let t0 = Instant::now();
    match &a.feature {
        None => {
            let c = compile_main(&loaded.program, &mut table)?;
            println!("flips\t{}", c.flip_count());
            println!("nodes\t{}", c.node_count());
            println!("output_bits\t{}", c.roots.len());
            println!("parameters\t{}", table.len());
            if let Some(p) = &a.dump_bdd {
                fs::write(p, c.to_dot(Some(&table))?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Some(f) => {
            let c = compile_feature(&loaded.program, f, &mut table)?;
            println!("values\t{}", c.values.len());
            println!("nodes\t{}", c.node_count());
            println!("parameters\t{}", table.len());
            if let Some(p) = &a.dump_bdd {
                let roots: Vec<_> = c.values.iter().map(|(_, b)| *b).collect();
                fs::write(p, c.manager.to_dot(&roots, Some(&table))?)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    println!("seconds\t{:.3}", t0.elapsed().as_secs_f64());
    Ok(())
}

fn run_infer(a: &InferArgs) -> Result<()> {
    let loaded = a.source.load()?;
    let mut table = WeightTable::new();
    let w = load_weights(&loaded.program, &mut table, &a.weights)?;
    let d = match &a.feature {
        None => exact_distribution(
            &mut compile_main(&loaded.program, &mut table)?,
            &w,
            DEFAULT_VALUE_BUDGET,
        )?,
        Some(f) => tunegen::inference::push_forward(&loaded.program, f, &mut table, &w)?,
    };
    emit(&a.out, &print_distribution(&d))
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let src =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg =
        ConfigFile::from_toml(&src).with_context(|| format!("in {}", a.config.display()))?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let loaded = if a.source.program.is_some() || a.source.workload.is_some() {
        a.source.load()?
    } else if let Some(p) = &cfg.io.program {
        load_file(Path::new(p))?
    } else if let Some(w) = &cfg.io.workload {
        load_workload(w)?
    } else {
        bail!("no program: give --program, --workload or [io] program");
    };
    let mut table = WeightTable::new();
    let init_spec = a
        .weights
        .clone()
        .or(cfg.io.weights.clone())
        .unwrap_or_else(|| "uniform".into());
    let init = load_weights(&loaded.program, &mut table, &init_spec)?;
    let mut objective = cfg.objective.build(&loaded.program, &mut table)?;
    let result = train(&mut objective, &mut table, &init, &cfg.train)?;
    let out = a.out.clone().or(cfg.io.out.as_ref().map(PathBuf::from));
    emit(&out, &(weights_to_json(&table, &result.weights) + "\n"))?;
    if let Some(t) = a.trace.clone().or(cfg.io.trace.as_ref().map(PathBuf::from)) {
        fs::write(&t, trace_csv(&result.trace))
            .with_context(|| format!("writing {}", t.display()))?;
    }
    if let Some(last) = result.trace.last() {
        eprintln!(
            "epochs {} objective {} stopped_early {}",
            result.trace.len(),
            last.objective,
            result.stopped_early
        );
    }
    Ok(())
}

fn run_sample(a: &SampleArgs) -> Result<()> {
    let loaded = a.source.load()?;
    let mut table = WeightTable::new();
    let w = load_weights(&loaded.program, &mut table, &a.weights)?;
    let values = sample(&loaded.program, &mut table, &w, a.n, a.seed)?;
    emit(
        &a.out,
        &values.iter().map(|v| format!("{v}\n")).collect::<String>(),
    )
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let loaded = a.source.load()?;
    let validity = a.validity.clone().or(loaded.validity.clone());
    if let Some(v) = &validity {
        if loaded.program.function(v).is_none() {
            bail!("unknown validity predicate `{v}`");
        }
    }
    let mut table = WeightTable::new();
    let w = load_weights(&loaded.program, &mut table, &a.weights)?;
    let rows = empirical_report(
        &loaded.program,
        &mut table,
        &w,
        validity.as_deref(),
        a.n,
        a.seed,
    )?;
    let mut csv = String::from("samples,unique,unique_valid,validity_rate\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.samples, r.unique, r.unique_valid, r.validity_rate
        ));
    }
    emit(&a.out, &csv)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Derive(a) => run_derive(a),
        Command::Compile(a) => run_compile(a),
        Command::Infer(a) => run_infer(a),
        Command::Train(a) => run_train(a),
        Command::Sample(a) => run_sample(a),
        Command::Report(a) => run_report(a),
    }
}

/// 2 for numeric failures during inference or training, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| matches!(c.downcast_ref(), Some(tunegen::Error::Numeric(_))));
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_failures_exit_with_two() {
        let e = anyhow::Error::new(tunegen::Error::Numeric("objective is not finite".into()))
            .context("training");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(
            exit_code(&anyhow::Error::new(tunegen::Error::Config("bad".into()))),
            1
        );
    }
}
