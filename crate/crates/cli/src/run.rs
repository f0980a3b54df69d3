//! Scenario orchestration. Every computation finishes before the first
//! artifact is written, and artifacts land under temporary names that are
//! renamed once all of them are complete.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qtransport::bath::KernelKind;
use qtransport::dyson::{dress_all, Dressed, DysonContext};
use qtransport::evolution::{evolve, generator_kernels, CouplingOperators, EvolutionMode, GeneratorKernels, StateTrajectory};
use qtransport::timegrid::TimeGrid;
use qtransport::transport::{exact_currents, landauer_steady, wc_currents, CurrentSeries};
use qtransport::verify::{self, VerifyReport};
use serde::Serialize;
use serde_json::json;

use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyCase {
    SingleLevel,
    FiniteBath,
    Conjugation,
    Landauer,
}

impl std::str::FromStr for VerifyCase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single-level" => Ok(VerifyCase::SingleLevel),
            "finite-bath" => Ok(VerifyCase::FiniteBath),
            "conjugation" => Ok(VerifyCase::Conjugation),
            "landauer" => Ok(VerifyCase::Landauer),
            other => Err(format!("unknown case {other:?}; expected single-level, finite-bath, conjugation or landauer")),
        }
    }
}

/// Files staged for the export step.
struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new(dir: &Path) -> Artifacts {
        Artifacts { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn commit(self) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut staged = Vec::new();
        for (name, bytes) in &self.files {
            let tmp = self.dir.join(format!(".{name}.partial"));
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            w.write_all(bytes)?;
            w.flush()?;
            staged.push((tmp, self.dir.join(name)));
        }
        let mut out = Vec::new();
        for (tmp, dst) in staged {
            fs::rename(&tmp, &dst)?;
            out.push(dst);
        }
        Ok(out)
    }
}

fn csv_bytes(series: &CurrentSeries) -> Vec<u8> {
    let mut buf = Vec::new();
    series.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn gnuplot_script(csv: &str, series: &CurrentSeries) -> Vec<u8> {
    let header = series.header();
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset ylabel 'heat current'\nset grid\n");
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("I_Q_"))
        .map(|(k, _)| k + 1)
        .collect();
    let plots: Vec<String> = cols
        .iter()
        .enumerate()
        .map(|(k, c)| if k == 0 { format!("'{csv}' using 1:{c} with lines") } else { format!("'' using 1:{c} with lines") })
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s.into_bytes()
}

fn state_csv(states: &[qtransport::linalg::CMat], grid: &TimeGrid) -> Vec<u8> {
    let d = states.first().map_or(0, |s| s.nrows());
    let mut s = String::from("t");
    for r in 0..d {
        for c in 0..d {
            s.push_str(&format!(",re_{r}_{c},im_{r}_{c}"));
        }
    }
    s.push('\n');
    for (rho, t) in states.iter().zip(grid.nodes()) {
        s.push_str(&format!("{t:.16e}"));
        for z in rho.iter() {
            s.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
        }
        s.push('\n');
    }
    s.into_bytes()
}

fn kernel_dumps(cfg: &RunConfig, dressed: &Dressed, art: &mut Artifacts) -> std::io::Result<()> {
    let mut push = |name: String, pair: &qtransport::dyson::KernelPair| -> std::io::Result<()> {
        let mut buf = Vec::new();
        pair.greater.write_binary(&mut buf, &format!("{name}_greater"))?;
        pair.anti.write_binary(&mut buf, &format!("{name}_anti"))?;
        art.add(&format!("kernel_{name}.bin"), buf);
        Ok(())
    };
    push("green".into(), &dressed.green)?;
    for (a, r) in cfg.reservoirs.iter().enumerate() {
        for kind in KernelKind::ALL {
            if let Some(k) = dressed.kernel(a, kind) {
                push(format!("{}_{}", kind.label(), r.name), k)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub max_trace_error: f64,
    pub wall_time_s: f64,
}

/// Dress, evolve, assemble currents and export.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let rho0 = cfg.initial_state(&model)?;
    let ctx = DysonContext::new(&model, &cfg.reservoirs, &grid)?;
    let tilt = vec![0.0; cfg.reservoirs.len()];
    let ops = CouplingOperators::new(&model, &grid);
    let exact = cfg.evolution.mode == EvolutionMode::Exact;
    log::info!("stage 1: dressing on {} nodes", grid.len());
    let dressed = if exact || cfg.outputs.dump_kernels { Some(dress_all(&ctx, &tilt, &cfg.solver, true)?) } else { None };

    let run_wc = || -> Result<(StateTrajectory, CurrentSeries), CliError> {
        let (k, _) = generator_kernels(&ctx, &tilt, EvolutionMode::WeakCoupling, &cfg.solver)?;
        let traj = evolve(&ops, &k, &grid, &rho0, &tilt)?;
        let cur = wc_currents(&ctx, &traj, &ops)?;
        Ok((traj, cur))
    };
    log::info!("stage 2: evolution and currents");
    let (traj, currents, reference) = match (&dressed, exact) {
        (Some(d), true) => {
            let k = GeneratorKernels::untilted(&d.green, model.zeta());
            let traj = evolve(&ops, &k, &grid, &rho0, &tilt)?;
            let cur = exact_currents(&ctx, d, &traj, &ops)?;
            let reference = if cfg.outputs.weak_coupling_reference { Some(run_wc()?.1) } else { None };
            (traj, cur, reference)
        }
        _ => {
            let (traj, cur) = run_wc()?;
            (traj, cur, None)
        }
    };

    log::info!("stage 3: export to {}", out.display());
    let mut art = Artifacts::new(out);
    art.add("currents.csv", csv_bytes(&currents));
    art.add("currents.gp", gnuplot_script("currents.csv", &currents));
    if let Some(r) = &reference {
        art.add("currents_wc.csv", csv_bytes(r));
    }
    if cfg.outputs.dump_state {
        art.add("state.csv", state_csv(&traj.schrodinger(&model, &grid), &grid));
    }
    if cfg.outputs.dump_kernels {
        kernel_dumps(cfg, dressed.as_ref().expect("dressed when dumping"), &mut art)?;
    }
    let solves: Vec<_> = dressed
        .iter()
        .flat_map(|d| d.reports.iter())
        .map(|r| json!({"stage": r.stage, "iterations": r.iterations, "residual": r.residual}))
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let meta = json!({
        "config_hash": cfg.hash(),
        "scenario": "simulate",
        "mode": cfg.evolution.mode,
        "grid": {"t_max": grid.t_max(), "n": grid.n(), "stretch": grid.stretch()},
        "solves": solves,
        "max_trace_error": traj.max_trace_error(),
        "max_hermiticity_defect": traj.max_hermiticity_defect(),
        "wall_time_s": wall,
        "version": env!("CARGO_PKG_VERSION"),
    });
    art.add("metadata.json", serde_json::to_vec_pretty(&meta).expect("metadata serializes"));
    let outputs = art.commit()?;
    Ok(RunSummary { outputs, max_trace_error: traj.max_trace_error(), wall_time_s: wall })
}

/// Steady-state Landauer current into every reservoir.
pub fn landauer(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    let mut rows = Vec::new();
    for (a, r) in cfg.reservoirs.iter().enumerate() {
        let spec = cfg.landauer_spec(a, None)?;
        let current = landauer_steady(&spec)?;
        rows.push(json!({"reservoir": r.name, "gamma": spec.gamma, "population": spec.population, "heat_current": current}));
    }
    Ok(json!({"omega0": cfg.system.energies[0], "currents": rows}))
}

pub fn verify(cfg: &RunConfig, case: VerifyCase) -> Result<VerifyReport, CliError> {
    let sc = cfg.scenario_inputs()?;
    let report = match case {
        VerifyCase::SingleLevel => verify::single_level(&sc)?,
        VerifyCase::FiniteBath => verify::finite_bath(&sc)?,
        VerifyCase::Conjugation => verify::conjugation(&sc)?,
        VerifyCase::Landauer => {
            let population = cfg.landauer.as_ref().and_then(|b| b.population.clone());
            verify::landauer(&sc, population)?
        }
    };
    Ok(report)
}

/// Dressed Green function and kernels as binary tables.
pub fn kernels(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let ctx = DysonContext::new(&model, &cfg.reservoirs, &grid)?;
    let dressed = dress_all(&ctx, &vec![0.0; cfg.reservoirs.len()], &cfg.solver, true)?;
    let mut art = Artifacts::new(dir);
    kernel_dumps(cfg, &dressed, &mut art)?;
    let reports: Vec<_> = dressed.reports.iter().map(|r| json!({"stage": r.stage, "iterations": r.iterations, "residual": r.residual})).collect();
    art.add("kernels.json", serde_json::to_vec_pretty(&json!({"config_hash": cfg.hash(), "nodes": grid.nodes(), "solves": reports})).expect("serializes"));
    Ok(art.commit()?)
}
