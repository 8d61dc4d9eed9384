use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hsc::pipeline::{build, run_oracle, Artifact};
use hsc::runtime::runner::{value_from_json, value_to_json};
use hsc::runtime::{RunOptions, Runner};

#[derive(Parser)]
#[command(name = "hsc", about = "Compile and run scheduled Juno programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a source file under a schedule.
    Build {
        source: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        /// Extra dump of the final program: ir, dot, exec, or c.
        #[arg(long)]
        emit: Option<String>,
        /// Snapshot IR and dot after a schedule line, a pass name, or `all`.
        #[arg(long)]
        dump_after: Option<String>,
        #[arg(long)]
        report_spills: bool,
        #[arg(short = 'o', default_value = "hsc-out")]
        out: PathBuf,
    },
    /// Run a built artifact.
    Run {
        artifact: PathBuf,
        /// Dynamic constant, `name=value`.
        #[arg(long = "dc")]
        dcs: Vec<String>,
        /// Input tensor file, one per parameter in order.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Use the value-semantics interpreter instead of the executor.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        race_check: bool,
        #[arg(long)]
        entry: Option<String>,
        #[arg(short = 'o', default_value = "hsc-out")]
        out: PathBuf,
    },
}

enum Fail {
    Missing(String),
    Other(String),
}

fn read(p: &Path) -> Result<String, Fail> {
    fs::read_to_string(p).map_err(|e| Fail::Missing(format!("{}: {e}", p.display())))
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned())
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), Fail> {
    fs::create_dir_all(dir).map_err(|e| Fail::Other(format!("{}: {e}", dir.display())))?;
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Fail::Other(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn do_build(
    source: &Path,
    schedule: &Path,
    emit: Option<&str>,
    dump_after: Option<&str>,
    report_spills: bool,
    out: &Path,
) -> Result<(), Fail> {
    let src = read(source)?;
    let sch = read(schedule)?;
    let b = build(&source.display().to_string(), &src, &schedule.display().to_string(), &sch, dump_after)
        .map_err(|e| Fail::Other(e.to_string()))?;
    let name = stem(source);
    let artifact = serde_json::to_string(&b.artifact()).map_err(|e| Fail::Other(e.to_string()))?;
    let mut files = vec![(format!("{name}.hsx"), artifact), (format!("{name}.plan"), b.plan_text.clone())];
    for s in &b.snapshots {
        files.push((format!("{}.ir", s.stem()), s.ir.clone()));
        files.push((format!("{}.dot", s.stem()), s.dot.clone()));
    }
    if let Some(fmt) = emit {
        files.push((format!("{name}.{fmt}"), b.emit(fmt).map_err(|e| Fail::Other(e.to_string()))?));
    }
    write_all(out, &files)?;
    for l in &b.log.lines {
        eprintln!("{l}");
    }
    if report_spills {
        print!("{}", b.spill_report());
    }
    println!("wrote {}", out.join(format!("{name}.hsx")).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn do_run(
    artifact: &Path,
    dcs: &[String],
    inputs: &[PathBuf],
    workers: Option<usize>,
    oracle: bool,
    race_check: bool,
    entry: Option<&str>,
    out: &Path,
) -> Result<(), Fail> {
    let text = read(artifact)?;
    let art: Artifact = serde_json::from_str(&text).map_err(|e| Fail::Other(format!("{}: {e}", artifact.display())))?;
    let fi = match entry {
        Some(n) => art.exe.find(n),
        None => art.exe.entry(),
    }
    .ok_or_else(|| Fail::Other("no such entry function".into()))?;
    let ef = &art.exe.functions[fi];
    let mut given = std::collections::BTreeMap::new();
    for d in dcs {
        let (k, v) = d.split_once('=').ok_or_else(|| Fail::Other(format!("bad --dc `{d}`, expected name=value")))?;
        let v: u64 = v.parse().map_err(|_| Fail::Other(format!("bad --dc value `{v}`")))?;
        given.insert(k.to_string(), v);
    }
    let dc_vals = ef
        .dc_params
        .iter()
        .map(|n| given.get(n).copied().ok_or_else(|| Fail::Other(format!("missing --dc {n}=..."))))
        .collect::<Result<Vec<u64>, Fail>>()?;
    let mut args = vec![];
    for p in inputs {
        let j: serde_json::Value =
            serde_json::from_str(&read(p)?).map_err(|e| Fail::Other(format!("{}: {e}", p.display())))?;
        args.push(value_from_json(&j).map_err(|e| Fail::Other(format!("{}: {e}", p.display())))?);
    }
    let name = ef.name.clone();
    let (value, trailer) = if oracle {
        let v = run_oracle(&art.module, Some(&name), &dc_vals, &args).map_err(|e| Fail::Other(e.to_string()))?;
        (v, "metrics: oracle".to_string())
    } else {
        let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let mut r = Runner::new(art.exe, RunOptions { workers, race_check }).map_err(Fail::Other)?;
        let (v, m) = r.run(Some(&name), &dc_vals, &args).map_err(Fail::Other)?;
        (v, m.trailer())
    };
    let j = value_to_json(&value).map_err(Fail::Other)?;
    let file = format!("{name}.out.json");
    write_all(out, &[(file.clone(), j.to_string())])?;
    println!("wrote {}", out.join(file).display());
    println!("{trailer}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Build { source, schedule, emit, dump_after, report_spills, out } => {
            do_build(source, schedule, emit.as_deref(), dump_after.as_deref(), *report_spills, out)
        }
        Cmd::Run { artifact, dcs, inputs, workers, oracle, race_check, entry, out } => {
            do_run(artifact, dcs, inputs, *workers, *oracle, *race_check, entry.as_deref(), out)
        }
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Missing(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
