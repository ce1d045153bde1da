use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vibshape::data::Dataset;
use vibshape::dynamics::SystemParams;
use vibshape::ekf::{run_ekf_mpi, EkfState};
use vibshape::error::{Error, Result};
use vibshape::metrics::{render_table, MetricReport};
use vibshape::pipeline::{
    aggregate, evaluate_sequence_on_plant, generate_vfb, params_table, run_repeated, shaper_table, ErsResult,
    PipelineConfig, AGGREGATE_HEADER,
};
use vibshape::resnet::train_resnn_oec;
use vibshape::shaper::{design_zvd, ImpulseSequence};

#[derive(Parser)]
#[command(name = "vibshape", version, about = "ZVD input shaping with EKF identification and learned compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vibration dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Print the ZVD shaper for a frequency and damping ratio.
    #[command(allow_negative_numbers = true)]
    Design {
        #[arg(long)]
        omega_hz: f64,
        #[arg(long)]
        zeta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a shaped and an unshaped step on a plant and write both traces.
    #[command(allow_negative_numbers = true)]
    Simulate {
        /// Shaper design frequency, Hz.
        #[arg(long)]
        omega_hz: f64,
        #[arg(long)]
        zeta: f64,
        /// Plant frequency, Hz; defaults to the design frequency.
        #[arg(long)]
        plant_omega_hz: Option<f64>,
        #[arg(long)]
        plant_zeta: Option<f64>,
        #[arg(long = "move", default_value_t = 100.0)]
        move_mm: f64,
        /// Simulated time after the last impulse, in damped periods of the plant.
        #[arg(long, default_value_t = 5.0)]
        periods: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Identify (omega_n, zeta) with the EKF over a whole dataset.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the compensation network around identified parameters.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// `params.csv` written by `identify`; the EKF row is used.
        #[arg(long)]
        params: PathBuf,
    },
    /// Full pipeline with baseline comparison.
    Run {
        #[command(flatten)]
        common: Common,
        /// Dataset to use; a synthetic one is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Metrics over a predictions CSV with a `theta_mm` column and `*_mm` prediction columns.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen { common } => gen(&common),
        Command::Design { omega_hz, zeta, out } => design(omega_hz, zeta, out.as_deref()),
        Command::Simulate { omega_hz, zeta, plant_omega_hz, plant_zeta, move_mm, periods, out } => {
            let design = SystemParams::from_hz(omega_hz, zeta)?;
            let plant = SystemParams::from_hz(plant_omega_hz.unwrap_or(omega_hz), plant_zeta.unwrap_or(zeta))?;
            simulate_cmd(&design, &plant, move_mm, periods, &out)
        }
        Command::Identify { common, data } => identify(&common, &data),
        Command::Train { common, data, params } => train(&common, &data, &params),
        Command::Run { common, data, repeats } => run(&common, data.as_deref(), repeats),
        Command::Eval { data, out } => eval(&data, out.as_deref()),
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn gen(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let data = generate_vfb(&cfg, cfg.seed)?;
    let dir = out_dir(&common.out)?;
    data.save(&dir.join("dataset.csv"))?;
    println!("wrote {} samples to {}", data.len(), dir.join("dataset.csv").display());
    Ok(())
}

fn design(omega_hz: f64, zeta: f64, out: Option<&Path>) -> Result<()> {
    let p = SystemParams::from_hz(omega_hz, zeta)?;
    let zvd = design_zvd(&p);
    println!("{:>4}  {:>12}  {:>12}", "i", "A", "t [s]");
    for (i, imp) in zvd.impulses().iter().enumerate() {
        println!("{:>4}  {:>12.8}  {:>12.8}", i + 1, imp.amplitude, imp.time);
    }
    if let Some(dir) = out {
        write(out_dir(dir)?, "shaper.csv", &zvd.to_csv())?;
    }
    Ok(())
}

fn simulate_cmd(design: &SystemParams, plant: &SystemParams, move_mm: f64, periods: f64, out: &Path) -> Result<()> {
    let zvd = design_zvd(design);
    let dt = design.default_dt().min(plant.default_dt());
    let horizon = zvd.last_time() + periods.max(0.0) * plant.damped_period();
    let shaped = evaluate_sequence_on_plant(&zvd, plant, move_mm, dt, horizon)?;
    let unshaped = evaluate_sequence_on_plant(&ImpulseSequence::identity(), plant, move_mm, dt, horizon)?;
    let dir = out_dir(out)?;
    shaped.trace.save(&dir.join("trace_shaped.csv"))?;
    unshaped.trace.save(&dir.join("trace_unshaped.csv"))?;
    println!("{:<10}  {:>12}  {:>14}", "command", "MTS [mm]", "residual [mm]");
    println!("{:<10}  {:>12.6}  {:>14.6e}", "shaped", shaped.mts, shaped.residual_peak);
    println!("{:<10}  {:>12.6}  {:>14.6e}", "unshaped", unshaped.mts, unshaped.residual_peak);
    Ok(())
}

fn identify(common: &Common, data: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let data = Dataset::load(data)?;
    let kappa = cfg.kappa_for(&data.samples()[0]);
    let state = EkfState::new(cfg.nominal, cfg.p0)?;
    let est = run_ekf_mpi(&state, data.samples(), &cfg.noise, kappa).map_err(|e| e.in_stage("ekf"))?;
    let rows = [("nominal", cfg.nominal), ("EKF", est.estimate)];
    let dir = out_dir(&common.out)?;
    write(dir, "params.csv", &params_table(&rows))?;
    write(dir, "shaper.csv", &shaper_table(&rows))?;
    print!("{}", params_text(&rows));
    Ok(())
}

fn read_ekf_params(path: &Path) -> Result<SystemParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 3 && cols[0] == "EKF" {
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string()));
            return SystemParams::from_hz(num(cols[1])?, num(cols[2])?).map_err(|e| parse_err(i + 1, e.to_string()));
        }
    }
    Err(parse_err(1, "no `EKF` row".into()))
}

fn train(common: &Common, data: &Path, params: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let data = Dataset::load(data)?;
    let t_ekf = read_ekf_params(params)?;
    let kappa = cfg.kappa_for(&data.samples()[0]);
    let mut tcfg = cfg.train.clone();
    tcfg.seed = tcfg.seed.wrapping_add(cfg.seed);
    let outcome = train_resnn_oec(data.samples(), &t_ekf, kappa, &tcfg).map_err(|e| e.in_stage("resnn"))?;
    let dir = out_dir(&common.out)?;
    outcome.net.save(&dir.join("model.txt"))?;
    write(dir, "train_log.csv", &outcome.log_csv())?;
    let rows = [("EKF", t_ekf), ("ERS", outcome.corrected)];
    write(dir, "params.csv", &params_table(&rows))?;
    print!("{}", params_text(&rows));
    println!("rounds: {} ({})", outcome.rounds, if outcome.converged { "converged" } else { "round cap" });
    Ok(())
}

fn params_text(rows: &[(&str, SystemParams)]) -> String {
    let mut out = format!("{:<8}  {:>12}  {:>10}\n", "model", "omega [Hz]", "zeta");
    for (name, p) in rows {
        let _ = writeln!(out, "{:<8}  {:>12.6}  {:>10.6}", name, p.omega_hz(), p.zeta());
    }
    out
}

fn predictions_csv(r: &ErsResult) -> String {
    let mut out = String::from("id,omega_hz,zeta,theta_mm,ers_mm,ekf_mm,zvd_mm\n");
    for (idx, p) in r.test_idx.iter().zip(&r.predictions) {
        let s = p.sample;
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            idx + 1,
            s.omega_hz,
            s.zeta,
            s.theta_mm,
            p.ers,
            p.ekf,
            p.zvd
        );
    }
    out
}

fn metrics_csv(reports: &[(String, MetricReport)]) -> String {
    let mut out = format!("{}\n", MetricReport::CSV_HEADER);
    for (name, r) in reports {
        out.push_str(&r.csv_row(name));
        out.push('\n');
    }
    out
}

fn run(common: &Common, data: Option<&Path>, repeats: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let data = data.map(Dataset::load).transpose()?;
    let runs = run_repeated(&cfg, data.as_ref(), repeats)?;
    let dir = out_dir(&common.out)?;
    let (first_data, first) = &runs[0];

    if data.is_none() {
        first_data.save(&dir.join("dataset.csv"))?;
    }
    let rows = [("nominal", cfg.nominal), ("EKF", first.t_ekf), ("ERS", first.t_r)];
    write(dir, "params.csv", &params_table(&rows))?;
    write(dir, "shaper.csv", &shaper_table(&rows))?;
    write(dir, "metrics.csv", &metrics_csv(&first.reports))?;
    write(dir, "predictions.csv", &predictions_csv(first))?;
    write(dir, "train_log.csv", &first.training.log_csv())?;
    first.training.net.save(&dir.join("model.txt"))?;
    if data.is_none() {
        // Plot-ready traces of each design on the synthetic plant.
        let g = &cfg.gen;
        let plant = SystemParams::new(g.truth.omega_n() + g.obs_bias[0], g.truth.zeta() + g.obs_bias[1])?;
        let dt = plant.default_dt();
        for (name, p) in rows {
            let zvd = design_zvd(&p);
            let horizon = zvd.last_time() + 5.0 * plant.damped_period();
            let ev = evaluate_sequence_on_plant(&zvd, &plant, g.move_mm, dt, horizon)?;
            ev.trace.save(&dir.join(format!("trace_{}.csv", name.to_lowercase())))?;
        }
    }

    print!("{}", params_text(&rows));
    println!();
    let table: Vec<(&str, MetricReport)> = first.reports.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    print!("{}", render_table(&table));
    println!(
        "\ntime: ekf {:.4} s, resnn {:.4} s, total {:.4} s; resnn rounds {}",
        first.timing.ekf_s, first.timing.resnn_s, first.timing.total_s, first.training.rounds
    );
    if repeats > 1 {
        let results: Vec<ErsResult> = runs.into_iter().map(|(_, r)| r).collect();
        let agg = aggregate(&results);
        let mut csv = format!("{AGGREGATE_HEADER}\n");
        println!("\n{repeats} runs, mean +- std:");
        println!("{:<8}  {:>20}  {:>20}  {:>20}", "model", "MAX", "RMSE", "MEAN");
        for row in &agg {
            csv.push_str(&row.csv_row());
            csv.push('\n');
            println!(
                "{:<8}  {:>9.4} +- {:<7.4}  {:>9.4} +- {:<7.4}  {:>9.4} +- {:<7.4}",
                row.model, row.mean[0], row.std[0], row.mean[1], row.std[1], row.mean[2], row.std[2]
            );
        }
        write(dir, "aggregate.csv", &csv)?;
    }
    Ok(())
}

fn eval(path: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?.split(',').collect();
    let measured_col =
        header.iter().position(|h| *h == "theta_mm").ok_or_else(|| parse_err(1, "no `theta_mm` column".into()))?;
    let model_cols: Vec<usize> =
        (0..header.len()).filter(|&c| c != measured_col && header[c].ends_with("_mm")).collect();
    if model_cols.is_empty() {
        return Err(parse_err(1, "no prediction columns (`*_mm`)".into()));
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(parse_err(i + 2, format!("expected {} columns", header.len())));
        }
        for &c in model_cols.iter().chain([&measured_col]) {
            let v: f64 = cells[c].trim().parse().map_err(|e| parse_err(i + 2, format!("`{}`: {e}", cells[c])))?;
            columns[c].push(v);
        }
    }
    let reports: Vec<(String, MetricReport)> = model_cols
        .iter()
        .map(|&c| {
            let name = header[c].trim_end_matches("_mm").to_uppercase();
            Ok((name, MetricReport::from_samples(&columns[measured_col], &columns[c])?))
        })
        .collect::<Result<_>>()?;
    let table: Vec<(&str, MetricReport)> = reports.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    print!("{}", render_table(&table));
    if let Some(dir) = out {
        write(out_dir(dir)?, "metrics.csv", &metrics_csv(&reports))?;
    }
    Ok(())
}
