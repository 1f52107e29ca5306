use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ivim::manager::Manager;
use ivim::scenario::run_scenario;
use ivim_core::model::{
    parse_constraints, parse_instance_model, serialize_instance_model, ConstraintSet,
};
use ivim_core::plangen::render_plan;
use ivim_core::solver::{
    apply_assignment, build_problem, diagnose_unsat, diagnose_unsat_model, export_smtlib, solve,
    SolveStatus, SolverError,
};
use ivim_core::verifier::verify;

/// Operator CLI for the in-vehicle integration manager.
#[derive(Parser)]
#[command(name = "ivim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Endpoint {
    Configure,
    Optimize,
}

#[derive(Subcommand)]
enum Command {
    /// Start the integration manager API on a topology.
    Serve {
        /// Topology instance-model document.
        #[arg(long)]
        topology: PathBuf,
        /// Listen address.
        #[arg(long, env = "IVIM_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        /// Expose the failure-injection admin endpoint.
        #[arg(long)]
        sim_admin: bool,
    },
    /// POST an instance model to a running integration manager.
    Send {
        #[arg(long)]
        server: String,
        #[arg(long, value_enum)]
        endpoint: Endpoint,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Verify and solve a model locally, printing the completed model.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Write the assignment problem as an SMT-LIB script.
        #[arg(long)]
        emit_smt: Option<PathBuf>,
    },
    /// Run a scripted scenario file and print the final snapshot.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

/// Exit 0 on success, 1 on rejected/unsat outcomes, 2 on usage/IO errors.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Serve {
            topology,
            listen,
            sim_admin,
        } => cmd_serve(&topology, &listen, sim_admin),
        Command::Send {
            server,
            endpoint,
            model,
            constraints,
            dry_run,
        } => cmd_send(&server, endpoint, &model, constraints.as_deref(), dry_run),
        Command::Solve {
            model,
            constraints,
            emit_smt,
        } => cmd_solve(&model, constraints.as_deref(), emit_smt.as_deref()),
        Command::Simulate { scenario } => cmd_simulate(&scenario),
    }
}

fn load_constraint_set(path: Option<&std::path::Path>) -> Result<ConstraintSet> {
    let base = ConstraintSet::standard();
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overlay = parse_constraints(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    base.with_overlay(overlay).map_err(|e| anyhow!("{e}"))
}

fn cmd_serve(topology: &std::path::Path, listen: &str, sim_admin: bool) -> Result<ExitCode> {
    let text = fs::read_to_string(topology)
        .with_context(|| format!("reading {}", topology.display()))?;
    let model = parse_instance_model(&text).map_err(|e| anyhow!("{}: {e}", topology.display()))?;
    let manager = Arc::new(Mutex::new(Manager::new(&model)));
    let router = ivim::api::router(manager, sim_admin);

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        eprintln!("ivim: listening on {listen}");
        axum::serve(listener, router).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_send(
    server: &str,
    endpoint: Endpoint,
    model: &std::path::Path,
    constraints: Option<&std::path::Path>,
    dry_run: bool,
) -> Result<ExitCode> {
    let model_doc: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?,
    )
    .with_context(|| format!("parsing {}", model.display()))?;
    let constraints_doc: Option<serde_json::Value> = constraints
        .map(|p| -> Result<serde_json::Value> {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()?;

    let path = match endpoint {
        Endpoint::Configure => "configure",
        Endpoint::Optimize => "optimize",
    };
    let url = format!("{}/api/v1/{path}", server.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": model_doc,
        "constraints": constraints_doc,
        "dry_run": dry_run,
    });
    let response = reqwest::blocking::Client::new()
        .post(&url)
        .json(&body)
        .send()
        .with_context(|| format!("POST {url}"))?;
    let status = response.status();
    let text = response.text()?;
    println!("{text}");
    match status.as_u16() {
        200 => Ok(ExitCode::SUCCESS),
        409 | 422 => {
            eprintln!("request rejected ({status})");
            Ok(ExitCode::from(1))
        }
        other => {
            eprintln!("request failed ({other})");
            Ok(ExitCode::from(2))
        }
    }
}

fn cmd_solve(
    model_path: &std::path::Path,
    constraints: Option<&std::path::Path>,
    emit_smt: Option<&std::path::Path>,
) -> Result<ExitCode> {
    let text = fs::read_to_string(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let model = match parse_instance_model(&text) {
        Ok(model) => model,
        Err(e) => {
            eprintln!("invalid model: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let constraints = load_constraint_set(constraints)?;

    let report = verify(&model, &constraints);
    if !report.clean() {
        eprintln!("model violates constraints:");
        for v in &report.violations {
            eprintln!("  [{}] {}", v.constraint_id, v.message);
        }
        return Ok(ExitCode::from(1));
    }

    let problem = match build_problem(&model, &constraints) {
        Ok(problem) => problem,
        Err(SolverError::EmptyDomain { .. } | SolverError::PinnedOutsideDomain { .. }) => {
            eprintln!("unsatisfiable: a slot has no candidate vm");
            let diagnosis = diagnose_unsat_model(&model, &constraints);
            for (kind, feasible) in &diagnosis.relaxation_hints {
                eprintln!("  relax {kind}: {}", if *feasible { "feasible" } else { "still unsat" });
            }
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(anyhow!("{e}")),
    };

    if let Some(path) = emit_smt {
        fs::write(path, export_smtlib(&problem))
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote SMT-LIB script to {}", path.display());
    }

    let result = solve(&problem).map_err(|e| anyhow!("{e}"))?;
    if result.status == SolveStatus::Unsat {
        eprintln!("unsatisfiable");
        let diagnosis = diagnose_unsat(&problem);
        for (kind, feasible) in &diagnosis.relaxation_hints {
            eprintln!("  relax {kind}: {}", if *feasible { "feasible" } else { "still unsat" });
        }
        return Ok(ExitCode::from(1));
    }

    let completed = apply_assignment(&problem, &result, &model);
    print!("{}", serialize_instance_model(&completed));
    eprintln!(
        "objective {} permille, {} nodes in {} ms",
        result.objective_value.unwrap_or(0),
        result.stats.nodes_explored,
        result.stats.duration_ms
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(scenario: &std::path::Path) -> Result<ExitCode> {
    let outcome = run_scenario(scenario)?;
    for step in &outcome.steps {
        let summary = step
            .plan
            .as_ref()
            .map(|p| {
                let mut parts: Vec<String> = p
                    .summary()
                    .into_iter()
                    .map(|(k, v)| format!("{v} {k}"))
                    .collect();
                if parts.is_empty() {
                    parts.push("no changes".to_string());
                }
                parts.join(", ")
            })
            .unwrap_or_default();
        eprintln!("step: {} -> {} {}", step.label, step.status, summary);
        if let Some(plan) = &step.plan {
            for line in render_plan(plan).lines() {
                eprintln!("    {line}");
            }
        }
    }
    print!("{}", outcome.manager.snapshot());
    if outcome.all_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
