//! Benchmark CLI for the mixed Kirchhoff-Love shell solver.

use clap::{Parser, Subcommand};
use klshell::assembly::{assemble_m_mixed, assemble_mn_mixed, Formulation};
use klshell::bench::{
    benchmark_case, case_name, convergence_sweep, execute_case, layout_for, parse_case,
    parse_formulation, write_report_json, SweepConfig,
};
use klshell::error::{KlError, Result};
use klshell::geometry::MultiPatchSurface;
use klshell::linsolve::solve_saddle;
use klshell::postprocess::{write_probe_csv, SolutionFields};
use klshell::splines::{NurbsPatch, PatchJson};

#[derive(Parser)]
#[command(
    name = "klshell",
    about = "Isogeometric Kirchhoff-Love shell benchmarks with H1 mixed formulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single benchmark case.
    Run {
        /// scordelis-lo | hemisphere | pinched-cylinder | strip
        #[arg(long)]
        case: String,
        /// m (M-mixed) or mn (M-N-mixed)
        #[arg(long, default_value = "m")]
        formulation: String,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Control points per edge (ignored by the strip).
        #[arg(long, default_value_t = 13)]
        cps: usize,
        /// Slenderness R/t for the strip case.
        #[arg(long)]
        slenderness: Option<f64>,
        /// Patch count: 1 or 4 where the case supports both.
        #[arg(long, default_value_t = 0)]
        patches: usize,
        /// Write the run report as JSON.
        #[arg(long)]
        out: Option<String>,
        /// Write the solved fields as legacy ASCII VTK.
        #[arg(long)]
        vtk: Option<String>,
        /// Dump the assembled system in Matrix Market format.
        #[arg(long)]
        dump_system: Option<String>,
        /// Replace the preset geometry by patches from a JSON file.
        #[arg(long)]
        geometry_json: Option<String>,
        /// VTK sampling resolution per patch direction.
        #[arg(long, default_value_t = 17)]
        vtk_resolution: usize,
    },
    /// Run a convergence sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: String,
    },
    /// Write a benchmark geometry as patch JSON.
    ExportGeometry {
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 0)]
        patches: usize,
        #[arg(long)]
        out: String,
    },
}

fn default_patches(case: klshell::geometry::BenchCase) -> usize {
    match case {
        klshell::geometry::BenchCase::ScordelisLo | klshell::geometry::BenchCase::CylinderStrip => 1,
        _ => 4,
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            case,
            formulation,
            degree,
            cps,
            slenderness,
            patches,
            out,
            vtk,
            dump_system,
            geometry_json,
            vtk_resolution,
        } => {
            let case = parse_case(&case)?;
            let formulation = parse_formulation(&formulation)?;
            let patches = if patches == 0 {
                default_patches(case)
            } else {
                patches
            };
            let layout = layout_for(case, patches)?;
            let bench = benchmark_case(case, layout, slenderness)?;

            let mut run = if let Some(path) = &geometry_json {
                let custom = load_geometry(path)?;
                let mut problem =
                    klshell::bench::build_problem(&bench, formulation, degree, cps)?;
                if custom.patches.len() != problem.surface.patches.len() {
                    return Err(KlError::InvalidArgument(format!(
                        "custom geometry has {} patches, preset needs {}",
                        custom.patches.len(),
                        problem.surface.patches.len()
                    )));
                }
                problem.surface = custom;
                let (dofs, mult) = problem.discretize()?;
                let sys = match formulation {
                    Formulation::MMixed => assemble_m_mixed(&problem, &dofs, &mult)?,
                    Formulation::MNMixed => assemble_mn_mixed(&problem, &dofs, &mult)?,
                };
                if let Some(p) = &dump_system {
                    sys.write_matrix_market(p)?;
                }
                let sol = solve_saddle(&sys)?;
                let fields = SolutionFields::new(&problem, &dofs, &sol);
                let u = fields.displacement_at(bench.probe.patch, bench.probe.xi)?;
                let probe = u.dot(&bench.probe.direction);
                println!(
                    "case {} (custom geometry): probe = {probe:.6e}, residual = {:.3e}",
                    case_name(case),
                    sol.residual
                );
                if let Some(p) = &vtk {
                    fields.export_vtk(p, vtk_resolution)?;
                }
                return Ok(());
            } else {
                execute_case(&bench, formulation, degree, cps, dump_system.as_deref())?
            };

            let report = run.report.clone();
            println!(
                "case {} [{}] p={} cps={}{}: probe = {:.6}, reference = {:.6}, rel.err = {:.3}%, \
                 dofs = {}, residual = {:.2e}, {:.2}s",
                report.case,
                report.formulation,
                report.degree,
                report.cps,
                report
                    .slenderness
                    .map_or(String::new(), |s| format!(" R/t={s}")),
                report.probe,
                report.reference,
                100.0 * report.rel_error,
                report.dofs_total,
                report.residual,
                report.wall_seconds,
            );
            if let Some(path) = &out {
                write_report_json(path, std::slice::from_ref(&report))?;
            }
            if let Some(path) = &vtk {
                let fields =
                    SolutionFields::new(&run.problem, &run.dofs, &run.sol);
                fields.export_vtk(path, vtk_resolution)?;
            }
            run.report = report;
            Ok(())
        }
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| KlError::io(&config, e))?;
            let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| KlError::Parse {
                path: config.clone(),
                detail: e.to_string(),
            })?;
            let reports = convergence_sweep(&cfg)?;
            for r in &reports {
                println!(
                    "{} [{}] p={} cps={}{}: probe = {:.6e} (rel.err {:.3}%)",
                    r.case,
                    r.formulation,
                    r.degree,
                    r.cps,
                    r.slenderness.map_or(String::new(), |s| format!(" R/t={s}")),
                    r.probe,
                    100.0 * r.rel_error
                );
            }
            if let Some(path) = &cfg.out_csv {
                let rows: Vec<_> = reports.iter().map(|r| r.probe_row()).collect();
                write_probe_csv(path, &rows)?;
            }
            if let Some(path) = &cfg.out_json {
                write_report_json(path, &reports)?;
            }
            Ok(())
        }
        Command::ExportGeometry { case, patches, out } => {
            let case = parse_case(&case)?;
            let patches = if patches == 0 {
                default_patches(case)
            } else {
                patches
            };
            let layout = layout_for(case, patches)?;
            let surface = klshell::geometry::benchmark_geometry(case, layout)?;
            let json = serde_json::to_string_pretty(&surface.to_json()).map_err(|e| {
                KlError::Parse {
                    path: out.clone(),
                    detail: e.to_string(),
                }
            })?;
            std::fs::write(&out, json).map_err(|e| KlError::io(&out, e))?;
            println!("wrote {} patches to {out}", surface.patches.len());
            Ok(())
        }
    }
}

fn load_geometry(path: &str) -> Result<MultiPatchSurface> {
    let text = std::fs::read_to_string(path).map_err(|e| KlError::io(path, e))?;
    let raw: Vec<PatchJson> = serde_json::from_str(&text).map_err(|e| KlError::Parse {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let patches: Vec<NurbsPatch> = raw
        .into_iter()
        .map(NurbsPatch::try_from)
        .collect::<Result<_>>()?;
    detect_interfaces(patches)
}

/// Recover the interface list of a custom multipatch by matching coincident
/// edge control polygons.
fn detect_interfaces(patches: Vec<NurbsPatch>) -> Result<MultiPatchSurface> {
    use klshell::geometry::{InterfaceGlue, PatchEdge, ALL_EDGES};
    let edge_poly = |p: &NurbsPatch, e: PatchEdge| -> Vec<nalgebra::Vector3<f64>> {
        let (nu, nv) = (p.space.dim_u(), p.space.dim_v());
        let idx: Vec<usize> = match e {
            PatchEdge::West => (0..nv).map(|j| j * nu).collect(),
            PatchEdge::East => (0..nv).map(|j| j * nu + nu - 1).collect(),
            PatchEdge::South => (0..nu).collect(),
            PatchEdge::North => (0..nu).map(|i| (nv - 1) * nu + i).collect(),
        };
        idx.iter().map(|&i| p.control_points[i]).collect()
    };
    let scale = patches
        .iter()
        .flat_map(|p| p.control_points.iter())
        .map(|c| c.norm())
        .fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut interfaces = Vec::new();
    for a in 0..patches.len() {
        for b in a + 1..patches.len() {
            for ea in ALL_EDGES {
                for eb in ALL_EDGES {
                    let pa = edge_poly(&patches[a], ea);
                    let pb = edge_poly(&patches[b], eb);
                    if pa.len() != pb.len() {
                        continue;
                    }
                    let same = pa.iter().zip(&pb).all(|(x, y)| (x - y).norm() < tol);
                    let rev = pa
                        .iter()
                        .zip(pb.iter().rev())
                        .all(|(x, y)| (x - y).norm() < tol);
                    if same || rev {
                        interfaces.push(InterfaceGlue {
                            patch_a: a,
                            edge_a: ea,
                            patch_b: b,
                            edge_b: eb,
                            reversed: !same && rev,
                        });
                    }
                }
            }
        }
    }
    MultiPatchSurface::new(patches, interfaces)
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
