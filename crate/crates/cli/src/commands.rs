//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use coalition_core::mi_matrix::format_sig9;
use coalition_core::{
    estimate_mi_matrix, fiedler_partition, recursive_decompose, track_partitions, CoalitionTree,
    DecompositionConfig, ExperimentReport, HiddenStateDataset, MiEstimationConfig, MiMatrix, PartitionTimeline,
    SeedRecord, SpectralResult,
};
use coalition_sim::{
    run_hierarchical, run_negative_control_with, run_seeds, run_swap, HierarchyConfig, MeasurementConfig,
    NegativeControlConfig, WindowSpec,
};

use crate::cli::{Experiment, Format, MiArgs, SimulateArgs};
use crate::hsd::{read_hsd, write_hsd, HsdFile};
use crate::pgm::heatmap_bytes;
use crate::{CliError, Result};

/// Pixels per entry for heatmaps written by `simulate`.
const ARTIFACT_CELL: usize = 16;
/// Episodes per row of the coordination-curve CSV.
const CURVE_BLOCK: usize = 100;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

/// Writes to `out`, or to stdout when no path is given.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(io_err(&p))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

pub fn read_mi_csv(path: &Path) -> Result<MiMatrix> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(MiMatrix::read_csv(f)?)
}

fn mi_config(args: &MiArgs) -> MiEstimationConfig {
    MiEstimationConfig { n_bins: args.bins, strategy: args.strategy, n_pairs: args.pairs, rng_seed: args.seed }
}

fn ids_of(m: &MiMatrix, nodes: &[usize]) -> Vec<String> {
    nodes.iter().map(|&i| m.ids()[i].clone()).collect()
}

fn spectral_object(s: &SpectralResult) -> Map<String, Value> {
    let mut obj: Map<String, Value> = s.to_flat_record("").into_iter().collect();
    obj.insert("partition".into(), json!(s.partition.canonical().to_string()));
    obj
}

/// JSON view of a Fiedler analysis with the partition in canonical
/// orientation (the side holding agent 0 first).
pub fn spectral_json(m: &MiMatrix, s: &SpectralResult) -> Value {
    let p = s.partition.canonical();
    let mut obj = spectral_object(s);
    obj.insert("agent_ids".into(), json!(m.ids()));
    obj.insert("a".into(), json!(p.a));
    obj.insert("b".into(), json!(p.b));
    obj.insert("a_ids".into(), json!(ids_of(m, &p.a)));
    obj.insert("b_ids".into(), json!(ids_of(m, &p.b)));
    obj.insert("eigenvalues".into(), json!(s.eigenvalues));
    Value::Object(obj)
}

pub fn tree_json(m: &MiMatrix, t: &CoalitionTree) -> Value {
    let mut obj = Map::new();
    obj.insert("nodes".into(), json!(t.nodes));
    obj.insert("ids".into(), json!(ids_of(m, &t.nodes)));
    obj.insert("stop_reason".into(), json!(t.stop_reason.as_str()));
    if let Some(s) = &t.spectral {
        obj.insert("spectral".into(), Value::Object(spectral_object(s)));
    }
    if let Some(children) = &t.split {
        obj.insert("children".into(), json!([tree_json(m, &children.0), tree_json(m, &children.1)]));
    }
    Value::Object(obj)
}

pub fn timeline_json(t: &PartitionTimeline, window_size: Option<usize>) -> Value {
    let entries: Vec<Value> = t
        .entries
        .iter()
        .map(|e| {
            let mut obj = spectral_object(&e.spectral);
            obj.remove("fiedler");
            obj.insert("window".into(), json!(e.window));
            if let Some(w) = window_size {
                obj.insert("first_sample".into(), json!(e.window * w));
            }
            Value::Object(obj)
        })
        .collect();
    json!({ "windows": entries.len(), "change_points": t.change_points, "entries": entries })
}

pub fn estimate_mi(input: &Path, args: &MiArgs, out: Option<&Path>) -> Result<()> {
    let file = read_hsd(input)?;
    let m = estimate_mi_matrix(&file.dataset, &mi_config(args))?;
    emit(out, m.to_csv_string().as_bytes())
}

pub fn partition(input: &Path, out: Option<&Path>) -> Result<()> {
    let m = read_mi_csv(input)?;
    let s = fiedler_partition(&m)?;
    emit(out, pretty(&spectral_json(&m, &s)).as_bytes())
}

pub fn hierarchy(input: &Path, tau: f64, min_size: usize, format: Format, out: Option<&Path>) -> Result<()> {
    let m = read_mi_csv(input)?;
    let cfg = DecompositionConfig { tau, m_min: min_size, ..DecompositionConfig::default() };
    let tree = recursive_decompose(&m, &cfg, None)?;
    let text = match format {
        Format::Text => tree.render_text(Some(m.ids())),
        Format::Json => pretty(&tree_json(&m, &tree)),
    };
    emit(out, text.as_bytes())
}

fn split_windows(ds: &HiddenStateDataset, size: usize) -> Result<Vec<HiddenStateDataset>> {
    if size < 2 {
        return Err(CliError::Usage("--window must be at least 2".into()));
    }
    let n = ds.n_samples() / size;
    (0..n)
        .map(|w| Ok(ds.select_samples(&(w * size..(w + 1) * size).collect::<Vec<_>>())?))
        .collect()
}

pub fn track(inputs: &[impl AsRef<Path>], window: Option<usize>, args: &MiArgs, out: Option<&Path>) -> Result<()> {
    let mut windows = Vec::new();
    for p in inputs {
        let ds = read_hsd(p.as_ref())?.dataset;
        match window {
            Some(size) => windows.extend(split_windows(&ds, size)?),
            None => windows.push(ds),
        }
    }
    if windows.is_empty() {
        return Err(CliError::Data("inputs contain no complete window".into()));
    }
    let cfg = mi_config(args);
    let matrices = windows.iter().map(|w| estimate_mi_matrix(w, &cfg)).collect::<coalition_core::Result<Vec<_>>>()?;
    let timeline = track_partitions(&matrices)?;
    emit(out, pretty(&timeline_json(&timeline, window)).as_bytes())
}

fn measurement(args: &SimulateArgs, mut m: MeasurementConfig) -> MeasurementConfig {
    m.bins = args.bins.unwrap_or(m.bins);
    m.strategy = args.strategy.unwrap_or(m.strategy);
    m.n_pairs = args.pairs.unwrap_or(m.n_pairs);
    m
}

pub fn hierarchy_config(args: &SimulateArgs) -> Result<HierarchyConfig> {
    let mut cfg = match args.experiment {
        Experiment::Swap => HierarchyConfig::swap_default(),
        _ => HierarchyConfig::default(),
    };
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(at) = args.swap_at {
        match cfg.swap.as_mut() {
            Some(s) => s.episode = at,
            None => return Err(CliError::Usage("--swap-at only applies to the swap experiment".into())),
        }
    }
    cfg.measurement = measurement(args, cfg.measurement);
    cfg.decomposition.tau = args.tau.unwrap_or(cfg.decomposition.tau);
    cfg.decomposition.m_min = args.min_size.unwrap_or(cfg.decomposition.m_min);
    cfg.validate()?;
    Ok(cfg)
}

fn seed_dir(root: &Path, seed: u64) -> Result<std::path::PathBuf> {
    let dir = root.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_mi(dir: &Path, stem: &str, m: &MiMatrix) -> Result<()> {
    write_file(dir, &format!("{stem}.csv"), m.to_csv_string().as_bytes())?;
    write_file(dir, &format!("{stem}.pgm"), &heatmap_bytes(m, ARTIFACT_CELL))
}

fn matrix_csv(ids: &[String], a: &ndarray::Array2<f64>) -> String {
    let mut out = ids.join(",");
    out.push('\n');
    for row in a.rows() {
        out.push_str(&row.iter().map(|&v| format_sig9(v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Runs one seed, writing its artifacts when `dir` is given; returns the
/// seed record and the config echo.
fn simulate_seed(args: &SimulateArgs, seed: u64, dir: Option<&Path>) -> Result<(SeedRecord, Value)> {
    match args.experiment {
        Experiment::Hierarchical => {
            if args.window.is_some() {
                return Err(CliError::Usage("--window only applies to the swap experiment".into()));
            }
            let cfg = hierarchy_config(args)?;
            let run = run_hierarchical(seed, &cfg)?;
            if let Some(root) = dir {
                let d = seed_dir(root, seed)?;
                let hsd = HsdFile::new(run.hidden.clone(), format!("hierarchical seed={seed} episodes={}", cfg.episodes));
                write_hsd(&hsd, d.join("hidden.hsd"))?;
                write_mi(&d, "mi", &run.mi)?;
                write_file(&d, "tree.txt", run.tree.render_text(None).as_bytes())?;
                write_file(&d, "tree.json", pretty(&tree_json(&run.mi, &run.tree)).as_bytes())?;
                write_file(&d, "curves.csv", run.curves.to_csv(CURVE_BLOCK).as_bytes())?;
            }
            Ok((run.record, serde_json::to_value(&cfg).expect("config serializes")))
        }
        Experiment::Swap => {
            let cfg = hierarchy_config(args)?;
            let window = WindowSpec { size: args.window.unwrap_or(WindowSpec::default().size) };
            let run = run_swap(seed, &cfg, window)?;
            if let Some(root) = dir {
                let d = seed_dir(root, seed)?;
                write_mi(&d, "final_mi", &run.final_mi)?;
                write_file(&d, "tree.txt", run.final_tree.render_text(None).as_bytes())?;
                write_file(&d, "curves.csv", run.curves.to_csv(CURVE_BLOCK).as_bytes())?;
                write_file(&d, "mi_curves.csv", run.mi_curves_csv().as_bytes())?;
                write_file(&d, "timeline.json", pretty(&timeline_json(&run.timeline, Some(window.size))).as_bytes())?;
            }
            Ok((run.record, json!({ "hierarchy": cfg, "window": window })))
        }
        Experiment::NegativeControl => {
            if args.episodes.is_some() || args.swap_at.is_some() || args.window.is_some() {
                return Err(CliError::Usage(
                    "--episodes, --swap-at and --window do not apply to the negative control".into(),
                ));
            }
            let mut cfg = NegativeControlConfig::default();
            cfg.measurement = measurement(args, cfg.measurement);
            let run = run_negative_control_with(seed, &cfg)?;
            if let Some(root) = dir {
                let d = seed_dir(root, seed)?;
                write_mi(&d, "mi_independent", &run.mi_independent)?;
                write_mi(&d, "mi_shared", &run.mi_shared)?;
                write_file(&d, "agreement.csv", matrix_csv(run.mi_independent.ids(), &run.agreement).as_bytes())?;
            }
            Ok((run.record, serde_json::to_value(cfg).expect("config serializes")))
        }
    }
}

fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Hierarchical => "hierarchical",
        Experiment::Swap => "swap",
        Experiment::NegativeControl => "negative-control",
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let seeds = args.seed_list();
    let dir = args.out.as_deref();
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let results = run_seeds(&seeds, |seed| Ok(simulate_seed(args, seed, dir)))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(seeds.len());
    let mut config = Value::Null;
    for (record, cfg) in results {
        records.push(record);
        config = cfg;
    }
    let report = ExperimentReport::new(experiment_name(args.experiment), records, config)?;
    match dir {
        Some(d) => {
            write_file(d, "report.json", report.to_json().as_bytes())?;
            emit(None, report.summary().as_bytes())
        }
        None => emit(None, format!("{}\n", report.to_json()).as_bytes()),
    }
}

/// Reads a per-seed table: a header row of condition names, optionally led by
/// a `seed` column, then one row of values per seed. Returns the condition
/// names in column order along with the records.
pub fn read_seed_table(path: &Path) -> Result<(Vec<String>, Vec<SeedRecord>)> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(f);
    let table_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let headers: Vec<String> = reader.headers().map_err(table_err)?.iter().map(str::to_owned).collect();
    let has_seed = headers.first().is_some_and(|h| h == "seed");
    let names = &headers[usize::from(has_seed)..];
    if names.is_empty() {
        return Err(CliError::Data(format!("{}: no value columns", path.display())));
    }
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(table_err)?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| CliError::Data(format!("{}: row {} is short", path.display(), row + 1)))
        };
        let seed = if has_seed {
            field(0)?
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad seed {:?}", path.display(), field(0).unwrap_or(""))))?
        } else {
            row as u64
        };
        let mut r = SeedRecord::new(seed);
        for (k, name) in names.iter().enumerate() {
            let text = field(k + usize::from(has_seed))?;
            let v: f64 = text
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("{}: bad value {text:?} in column {name}", path.display())))?;
            r.metric(name, v);
        }
        records.push(r);
    }
    Ok((names.to_vec(), records))
}

pub fn stats_report(path: &Path) -> Result<ExperimentReport> {
    let (names, records) = read_seed_table(path)?;
    let source = path.file_name().map(|s| s.to_string_lossy().into_owned());
    let mut report = ExperimentReport::new("stats", records, json!({ "source": source }))?;
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            report.compare(&names[i], &names[j])?;
        }
    }
    Ok(report)
}

pub fn stats(path: &Path, format: Format, out: Option<&Path>) -> Result<()> {
    let report = stats_report(path)?;
    let text = match format {
        Format::Text => report.summary(),
        Format::Json => format!("{}\n", report.to_json()),
    };
    emit(out, text.as_bytes())
}

/// Largest allowed gap between stored aggregates and their recomputation.
pub const RECOMPUTE_TOLERANCE: f64 = 1e-9;

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let report = ExperimentReport::from_json(&text)?;
    let err = report.recompute_error()?;
    if !(err <= RECOMPUTE_TOLERANCE) {
        return Err(CliError::Data(format!(
            "{}: aggregates differ from the per-seed records by {err:e}",
            path.display()
        )));
    }
    Ok(report)
}

pub fn report(inputs: &[impl AsRef<Path>], format: Format, out: Option<&Path>) -> Result<()> {
    let reports = inputs.iter().map(|p| load_report(p.as_ref())).collect::<Result<Vec<_>>>()?;
    let first = &reports[0];
    if let Some(other) = reports.iter().find(|r| r.experiment != first.experiment) {
        return Err(CliError::Data(format!(
            "cannot merge experiments {:?} and {:?}",
            first.experiment, other.experiment
        )));
    }
    let merged = if reports.len() == 1 {
        first.clone()
    } else {
        let records = reports.iter().flat_map(|r| r.records.clone()).collect();
        let mut m = ExperimentReport::new(&first.experiment, records, first.config.clone())?;
        for c in &first.comparisons {
            m.compare(&c.x, &c.y)?;
        }
        m
    };
    if let Some(p) = out {
        fs::write(p, merged.to_json()).map_err(io_err(p))?;
    }
    let text = match format {
        Format::Text => merged.summary(),
        Format::Json => format!("{}\n", merged.to_json()),
    };
    emit(None, text.as_bytes())
}

pub fn render(input: &Path, cell: usize, out: Option<&Path>) -> Result<()> {
    if cell == 0 {
        return Err(CliError::Usage("--cell must be at least 1".into()));
    }
    let m = read_mi_csv(input)?;
    emit(out, &heatmap_bytes(&m, cell))
}
