//! Command-line front end: simulation, inference, topology counting,
//! likelihood validation and posterior summaries.

mod plot;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use tajima_het::counting::{estimate_count, max_events_before, placement_times, Resolution};
use tajima_het::demographic::Trajectory;
use tajima_het::diagnostics::{accuracy_metrics, ess, metric_grid};
use tajima_het::ism_data::{
    build_perfect_phylogeny, ingest_alignment, parse_fasta, parse_metadata, AncestralState, FrequencyMatrix, IncidenceMatrix,
    PerfectPhylogeny,
};
use tajima_het::mcmc::{run_chain, summarize_posterior, McmcConfig, McmcError, PosteriorSummary, Sample};
use tajima_het::simulator::{oracle_preset, simulate_dataset, validate_schedule};
use tajima_het::{RankedGenealogy, SamplingSchedule};

#[derive(Parser)]
#[command(name = "tajima-het", version, about = "Effective population size from heterochronous infinite-sites data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a genealogy and infinite-sites data under a named trajectory.
    Simulate(SimulateArgs),
    /// Run the sampler on one or more loci.
    Infer(InferArgs),
    /// Estimate the number of topologies compatible with a dataset.
    Count(CountArgs),
    /// Compare likelihoods with simulated dataset frequencies.
    ValidateLikelihood(ValidateArgs),
    /// Accuracy metrics of a posterior summary against a known trajectory.
    Summarize(SummarizeArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// bottleneck, drop or exp.
    #[arg(long)]
    scenario: String,
    /// Comma-separated sampling times, starting at 0.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    times: Vec<f64>,
    /// Comma-separated sample counts per sampling time.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<usize>,
    #[arg(long)]
    mu: f64,
    /// Independent loci sharing the trajectory.
    #[arg(long, default_value_t = 1)]
    loci: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    fasta: Option<PathBuf>,
    /// CSV with columns sequence_id,date.
    #[arg(long)]
    #[serde(skip)]
    meta: Option<PathBuf>,
    /// FASTA holding the ancestral sequence; majority rule when absent.
    #[arg(long)]
    #[serde(skip)]
    ancestral: Option<PathBuf>,
    /// Time units per calendar year for dated sequences.
    #[arg(long, default_value_t = 1.0)]
    units_per_year: f64,
    /// Incidence matrix, once per locus.
    #[arg(long)]
    #[serde(skip)]
    y1: Vec<PathBuf>,
    /// Frequency matrix, once per locus, in the order of `--y1`.
    #[arg(long)]
    #[serde(skip)]
    y2: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CountArgs {
    #[arg(long)]
    #[serde(skip)]
    y1: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    y2: PathBuf,
    #[arg(long, default_value = "tajima")]
    resolution: Resolution,
    #[arg(long = "N", default_value_t = 5000)]
    draws: usize,
    /// Events allowed before each sampling time; the data maximum when absent.
    #[arg(long, value_delimiter = ',')]
    events_before: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    /// supp-a, supp-b or supp-c.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    /// Datasets seen fewer times are left out of the average.
    #[arg(long, default_value_t = 10)]
    floor: usize,
    /// Genealogies per mutation count.
    #[arg(long, default_value_t = 4)]
    replicates: usize,
    /// tajima, kingman or both.
    #[arg(long, default_value = "both")]
    resolution: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    #[arg(long)]
    #[serde(skip)]
    summary: PathBuf,
    /// Scenario holding the true trajectory.
    #[arg(long)]
    scenario: String,
    /// Height of the true genealogy; read from `--genealogy` when absent.
    #[arg(long)]
    tmrca: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    genealogy: Option<PathBuf>,
    /// Samples NDJSON; adds mean ESS of the field when given.
    #[arg(long)]
    #[serde(skip)]
    samples: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

/// Failure with its exit status: 1 usage, 2 data, 3 numeric.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn numeric(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
    fn numeric(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Infer(a) => infer(a),
        Command::Count(a) => count(a),
        Command::ValidateLikelihood(a) => validate(a),
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Provenance attached to every output file.
#[derive(Clone, Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
}

impl Provenance {
    fn new<C: Serialize>(config: &C, seed: u64) -> Self {
        let text = serde_json::to_string(config).expect("serializable config");
        let digest = Sha256::digest(text.as_bytes());
        Provenance {
            tool: "tajima-het",
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
        }
    }

    fn comment(&self, prefix: &str) -> String {
        format!("{prefix} {} {} config_sha256={} seed={}", self.tool, self.version, self.config_sha256, self.seed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot create {}", path.display())).data()
}

/// CSV file whose first line is a `#` provenance comment.
fn write_csv_with<F>(path: &Path, prov: &Provenance, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
{
    let mut buf = Vec::new();
    body(&mut buf).data()?;
    let mut w = create(path)?;
    writeln!(w, "{}", prov.comment("#")).data()?;
    w.write_all(&buf).data()?;
    w.flush().data()
}

fn write_json(path: Option<&Path>, prov: &Provenance, value: serde_json::Value) -> Result<(), Failure> {
    let mut doc = json!({ "metadata": prov });
    if let (Some(d), serde_json::Value::Object(v)) = (doc.as_object_mut(), value) {
        d.extend(v);
    }
    let text = serde_json::to_string_pretty(&doc).expect("json");
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").data()?;
            w.flush().data()
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_locus(y1: &Path, y2: &Path) -> Result<PerfectPhylogeny, Failure> {
    let m1 = IncidenceMatrix::read_csv(File::open(y1).with_context(|| format!("cannot open {}", y1.display())).data()?)
        .with_context(|| format!("reading {}", y1.display()))
        .data()?;
    let (m2, times) = FrequencyMatrix::read_csv(File::open(y2).with_context(|| format!("cannot open {}", y2.display())).data()?)
        .with_context(|| format!("reading {}", y2.display()))
        .data()?;
    let schedule = m2.schedule(times).data()?;
    build_perfect_phylogeny(&m1, &m2, &schedule).data()
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let traj = Trajectory::scenario(&a.scenario).usage()?;
    if a.loci == 0 || !(a.mu >= 0.0) {
        return Err(anyhow!("need at least one locus and a nonnegative rate")).usage();
    }
    let schedule = SamplingSchedule::new(a.times.clone(), a.counts.clone()).usage()?;
    fs::create_dir_all(&a.out).data()?;
    let prov = Provenance::new(&a, a.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut loci = Vec::new();
    for l in 0..a.loci {
        let d = simulate_dataset(&schedule, &traj, a.mu, &mut rng);
        let suffix = if a.loci == 1 { String::new() } else { format!("_{}", l + 1) };
        write_csv_with(&a.out.join(format!("y1{suffix}.csv")), &prov, |b| Ok(d.y1.write_csv(b)?))?;
        let ids = d.y1.haplotype_ids().to_vec();
        write_csv_with(&a.out.join(format!("y2{suffix}.csv")), &prov, |b| Ok(d.y2.write_csv(b, schedule.times(), &ids)?))?;
        write_json(
            Some(&a.out.join(format!("genealogy{suffix}.json"))),
            &prov,
            json!({ "genealogy": d.genealogy, "tmrca": d.genealogy.height(), "mutations": d.mutations }),
        )?;
        loci.push(json!({ "mutations": d.mutations, "haplotypes": d.y1.k(), "tmrca": d.genealogy.height() }));
    }
    write_csv_with(&a.out.join("truth.csv"), &prov, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["time", "ne"])?;
        let top = loci.iter().map(|l| l["tmrca"].as_f64().unwrap_or(0.0)).fold(0.0, f64::max);
        for i in 0..=200 {
            let t = top * i as f64 / 200.0;
            w.write_record([format!("{t:e}"), format!("{:e}", traj.evaluate(t)?)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_json(Some(&a.out.join("simulation.json")), &prov, json!({ "loci": loci }))
}

fn load_config(a: &InferArgs) -> Result<McmcConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).usage()?;
            serde_json::from_str::<McmcConfig>(&text).with_context(|| format!("invalid config {}", p.display())).usage()?
        }
        None => McmcConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
        cfg.burnin = cfg.burnin.min(n / 5);
    }
    cfg.validate().usage()?;
    Ok(cfg)
}

fn load_loci(a: &InferArgs) -> Result<Vec<PerfectPhylogeny>, Failure> {
    match (&a.fasta, a.y1.is_empty()) {
        (Some(fasta), true) => {
            let meta = a.meta.as_ref().ok_or_else(|| anyhow!("--fasta needs --meta")).usage()?;
            let seqs =
                parse_fasta(&fs::read_to_string(fasta).with_context(|| format!("cannot read {}", fasta.display())).data()?).data()?;
            let dates = parse_metadata(File::open(meta).with_context(|| format!("cannot open {}", meta.display())).data()?).data()?;
            let anc = match &a.ancestral {
                Some(p) => {
                    let r = parse_fasta(&fs::read_to_string(p).data()?).data()?;
                    let (_, s) = r.into_iter().next().ok_or_else(|| anyhow!("empty ancestral FASTA")).data()?;
                    AncestralState::Reference(s)
                }
                None => AncestralState::Majority,
            };
            let ing = ingest_alignment(&seqs, &anc, &dates, a.units_per_year).data()?;
            for w in &ing.warnings {
                eprintln!("warning: {w}");
            }
            Ok(vec![build_perfect_phylogeny(&ing.y1, &ing.y2, &ing.schedule).data()?])
        }
        (None, false) => {
            if a.y1.len() != a.y2.len() {
                return Err(anyhow!("--y1 and --y2 must be given the same number of times")).usage();
            }
            a.y1.iter().zip(&a.y2).map(|(p1, p2)| read_locus(p1, p2)).collect()
        }
        _ => Err(anyhow!("give either --fasta/--meta or --y1/--y2")).usage(),
    }
}

fn classify_mcmc(e: McmcError) -> Failure {
    match e {
        McmcError::Config(_) => Failure { code: 1, error: e.into() },
        McmcError::Gradient(_) => Failure { code: 3, error: e.into() },
        _ => Failure { code: 2, error: e.into() },
    }
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    if a.chains == 0 {
        return Err(anyhow!("--chains must be positive")).usage();
    }
    let cfg = load_config(&a)?;
    let loci = load_loci(&a)?;
    fs::create_dir_all(&a.out).data()?;
    let configs: Vec<McmcConfig> = (0..a.chains as u64).map(|i| McmcConfig { seed: cfg.seed.wrapping_add(i), ..cfg.clone() }).collect();
    let runs: Vec<_> = configs.par_iter().map(|c| run_chain(&loci, c)).collect();
    for (i, (run, c)) in runs.into_iter().zip(&configs).enumerate() {
        let out = run.map_err(classify_mcmc)?;
        let suffix = if a.chains == 1 { String::new() } else { format!("_chain{}", i + 1) };
        let prov = Provenance::new(c, c.seed);
        if out.samples.is_empty() {
            return Err(anyhow!("no samples retained; check burnin and thin")).usage();
        }
        if out.samples.iter().any(|s| !s.log_posterior.is_finite()) {
            return Err(anyhow!("non-finite log posterior")).numeric();
        }
        let mut w = create(&a.out.join(format!("samples{suffix}.ndjson")))?;
        writeln!(w, "{}", json!({ "metadata": prov, "config": c, "grid": out.grid.boundaries() })).data()?;
        for s in &out.samples {
            writeln!(w, "{}", serde_json::to_string(s).expect("json")).data()?;
        }
        w.flush().data()?;
        let thetas: Vec<Vec<f64>> = out.samples.iter().map(|s| s.theta.clone()).collect();
        let summary = summarize_posterior(&thetas, &out.grid);
        write_csv_with(&a.out.join(format!("summary{suffix}.csv")), &prov, |b| Ok(summary.write_csv(b)?))?;
        let mut svg = create(&a.out.join(format!("trajectory{suffix}.svg")))?;
        svg.write_all(plot::trajectory_svg(&summary, &prov.comment("")).as_bytes()).data()?;
        svg.flush().data()?;
        let field_ess = mean_field_ess(&out.samples);
        if out.grid_warning() {
            eprintln!("warning: {:.1}% of some tree length lies beyond the grid horizon", 100.0 * out.beyond_grid);
        }
        write_json(
            Some(&a.out.join(format!("run{suffix}.json"))),
            &prov,
            json!({
                "acceptance": out.acceptance,
                "samples": out.samples.len(),
                "mean_ess_log_ne": field_ess,
                "beyond_grid": out.beyond_grid,
                "grid_warning": out.grid_warning(),
            }),
        )?;
    }
    Ok(())
}

fn mean_field_ess(samples: &[Sample]) -> Option<f64> {
    let cells = samples.first()?.theta.len();
    let mut total = 0.0;
    for b in 0..cells {
        let x: Vec<f64> = samples.iter().map(|s| s.theta[b]).collect();
        total += ess(&x).ok()?.value;
    }
    Some(total / cells as f64)
}

fn count(a: CountArgs) -> Result<(), Failure> {
    if a.draws == 0 {
        return Err(anyhow!("--N must be positive")).usage();
    }
    let t = read_locus(&a.y1, &a.y2)?;
    let schedule = t.schedule().clone();
    let add = a.events_before.clone().unwrap_or_else(|| max_events_before(&t));
    if add.len() != schedule.m() {
        return Err(anyhow!("--events-before needs one value per sampling time")).usage();
    }
    let times = placement_times(&add, &schedule, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let est = estimate_count(&t, &schedule, &times, a.resolution, a.draws, &mut rng);
    if !est.estimate.is_finite() {
        return Err(anyhow!("non-finite estimate")).numeric();
    }
    let prov = Provenance::new(&a, a.seed);
    write_json(a.out.as_deref(), &prov, json!({ "events_before": add, "estimate": est }))
}

fn validate(a: ValidateArgs) -> Result<(), Failure> {
    let schedule = oracle_preset(&a.preset).ok_or_else(|| anyhow!("unknown preset '{}'", a.preset)).usage()?;
    let resolutions = match a.resolution.as_str() {
        "both" => vec![Resolution::Tajima, Resolution::Kingman],
        r => vec![r.parse::<Resolution>().map_err(|e| anyhow!(e)).usage()?],
    };
    if a.draws == 0 || a.replicates == 0 {
        return Err(anyhow!("draws and replicates must be positive")).usage();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = serde_json::Map::new();
    for res in resolutions {
        let runs = validate_schedule(&schedule, a.replicates, a.draws, a.floor, res, &mut rng);
        let mean = runs.iter().map(|r| r.mean_ratio).sum::<f64>() / runs.len() as f64;
        let var = runs.iter().map(|r| r.var_ratio).sum::<f64>() / runs.len() as f64;
        if !mean.is_finite() {
            return Err(anyhow!("non-finite likelihood ratio")).numeric();
        }
        let key = serde_json::to_value(res).expect("json").as_str().unwrap_or("resolution").to_string();
        out.insert(key, json!({ "mean_ratio": mean, "mean_variance": var, "runs": runs }));
    }
    let prov = Provenance::new(&a, a.seed);
    write_json(a.out.as_deref(), &prov, serde_json::Value::Object(out))
}

fn summarize(a: SummarizeArgs) -> Result<(), Failure> {
    let traj = Trajectory::scenario(&a.scenario).usage()?;
    let summary =
        PosteriorSummary::read_csv(File::open(&a.summary).with_context(|| format!("cannot open {}", a.summary.display())).data()?)
            .data()?;
    let tmrca = match (a.tmrca, &a.genealogy) {
        (Some(t), _) => t,
        (None, Some(p)) => {
            let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).data()?).data()?;
            let g: RankedGenealogy = serde_json::from_value(doc["genealogy"].clone()).data()?;
            g.height()
        }
        (None, None) => return Err(anyhow!("give --tmrca or --genealogy")).usage(),
    };
    let grid = metric_grid(tmrca, a.points);
    let bands: Vec<_> = grid.iter().map(|&t| summary.band_at(t)).collect();
    let truth = grid.iter().map(|&t| traj.evaluate(t)).collect::<Result<Vec<_>, _>>().data()?;
    let metrics = accuracy_metrics(&bands, &truth).data()?;
    let field_ess = match &a.samples {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).data()?;
            let samples = text
                .lines()
                .skip(1)
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<Sample>)
                .collect::<Result<Vec<_>, _>>()
                .data()?;
            mean_field_ess(&samples)
        }
        None => None,
    };
    let prov = Provenance::new(&a, 0);
    write_json(a.out.as_deref(), &prov, json!({ "tmrca": tmrca, "metrics": metrics, "mean_ess_log_ne": field_ess }))
}
